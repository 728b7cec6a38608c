//! Semi-dual quantities for the quadratic cost `c(x, y) = ½‖x − y‖²`.
//!
//! With `c_j(x) = ½‖x − y_j‖²`, the hard transform is `min_j (c_j(x) − g_j)`
//! and the soft transform is `−ε ln Σ_j w_j exp((g_j − c_j(x)) / ε)`. Every
//! exponential is evaluated after subtracting the largest exponent, so the
//! regularization can be driven down to `1e-12` without overflow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, SourceDistribution};
use crate::rng::RngStream;

/// Number of source points evaluated per deterministic reduction chunk.
pub const REDUCTION_CHUNK: usize = 4096;

/// Dual values `g_j` at the target atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential(Vec<f64>);

impl Potential {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("potential entries must be finite".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `g + c·1`.
    pub fn shifted(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v + c).collect())
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub(crate) fn check_len(&self, nu: &DiscreteMeasure) -> Result<()> {
        if self.len() != nu.len() {
            return Err(Error::LengthMismatch {
                expected: nu.len(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Potential {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// One draw of `∇_g h_ε(x, g) = χ^ε(x, g) − w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub values: Vec<f64>,
    /// Regularization the gradient was evaluated at; `0` for the hard subgradient.
    pub eps_used: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveEpsilon(eps))
    }
}

fn check_point(x: &[f64], nu: &DiscreteMeasure) -> Result<()> {
    if x.len() != nu.dim() {
        return Err(Error::LengthMismatch {
            expected: nu.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Index of the smallest `c_j − g_j` (first index on ties) and its value.
#[inline]
pub(crate) fn argmin_reduced(costs: &[f64], g: &[f64]) -> (f64, usize) {
    let mut best = costs[0] - g[0];
    let mut idx = 0;
    for (j, (c, gj)) in costs.iter().zip(g).enumerate().skip(1) {
        let v = c - gj;
        if v < best {
            best = v;
            idx = j;
        }
    }
    (best, idx)
}

/// Stabilized soft-min: returns `−ε ln Σ w_j exp((g_j − c_j)/ε)` and leaves
/// the unnormalized weights `w_j exp(((g_j − c_j) − max)/ε)` in `costs` with
/// their sum.
#[inline]
pub(crate) fn soft_in_place(costs: &mut [f64], g: &[f64], w: &[f64], eps: f64) -> (f64, f64) {
    let mut top = f64::NEG_INFINITY;
    for (c, gj) in costs.iter_mut().zip(g) {
        *c = gj - *c;
        if *c > top {
            top = *c;
        }
    }
    let inv = 1.0 / eps;
    let mut total = 0.0;
    for (c, wj) in costs.iter_mut().zip(w) {
        let e = wj * ((*c - top) * inv).exp();
        *c = e;
        total += e;
    }
    (-(top + eps * total.ln()), total)
}

/// Hard `c`-transform `min_j (½‖x − y_j‖² − g_j)` with its (first) argmin.
pub fn ctransform_hard(g: &Potential, x: &[f64], nu: &DiscreteMeasure) -> Result<(f64, usize)> {
    g.check_len(nu)?;
    check_point(x, nu)?;
    let mut costs = vec![0.0; nu.len()];
    nu.half_sq_dists(x, &mut costs);
    Ok(argmin_reduced(&costs, g.values()))
}

/// Soft `(c, ε)`-transform.
pub fn ctransform_soft(g: &Potential, x: &[f64], nu: &DiscreteMeasure, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    g.check_len(nu)?;
    check_point(x, nu)?;
    let mut costs = vec![0.0; nu.len()];
    nu.half_sq_dists(x, &mut costs);
    Ok(soft_in_place(&mut costs, g.values(), nu.weights(), eps).0)
}

/// `χ^ε(x, g)`: the Gibbs weights of the atoms, a point of the simplex.
pub fn softmax_weights(
    g: &Potential,
    x: &[f64],
    nu: &DiscreteMeasure,
    eps: f64,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    g.check_len(nu)?;
    check_point(x, nu)?;
    let mut chi = vec![0.0; nu.len()];
    nu.half_sq_dists(x, &mut chi);
    let (_, total) = soft_in_place(&mut chi, g.values(), nu.weights(), eps);
    chi.iter_mut().for_each(|c| *c /= total);
    Ok(chi)
}

/// Unbiased single-sample gradient `χ^ε(x, g) − w`.
pub fn stochastic_gradient(
    g: &Potential,
    x: &[f64],
    nu: &DiscreteMeasure,
    eps: f64,
) -> Result<GradientSample> {
    let mut values = softmax_weights(g, x, nu, eps)?;
    for (v, w) in values.iter_mut().zip(nu.weights()) {
        *v -= w;
    }
    Ok(GradientSample {
        values,
        eps_used: eps,
    })
}

/// Subgradient of the unregularized `h_0`: `one_hot(argmin) − w`.
pub fn hard_subgradient(g: &Potential, x: &[f64], nu: &DiscreteMeasure) -> Result<GradientSample> {
    let (_, j) = ctransform_hard(g, x, nu)?;
    let mut values: Vec<f64> = nu.weights().iter().map(|w| -w).collect();
    values[j] += 1.0;
    Ok(GradientSample {
        values,
        eps_used: 0.0,
    })
}

/// Reusable buffers for repeated gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    scratch: Vec<f64>,
    acc: Vec<f64>,
}

impl GradientWorkspace {
    pub fn new(m: usize) -> Self {
        Self {
            scratch: vec![0.0; m],
            acc: vec![0.0; m],
        }
    }

    /// Mean gradient over the row-major batch `xs`; `eps = 0` selects the hard
    /// subgradient. The result is left in the returned slice.
    pub(crate) fn batch_gradient(
        &mut self,
        g: &[f64],
        xs: &[f64],
        nu: &DiscreteMeasure,
        eps: f64,
    ) -> &[f64] {
        let d = nu.dim();
        let n = xs.len() / d;
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for x in xs.chunks_exact(d) {
            nu.half_sq_dists(x, &mut self.scratch);
            if eps > 0.0 {
                let (_, total) = soft_in_place(&mut self.scratch, g, nu.weights(), eps);
                let inv = 1.0 / total;
                for (a, c) in self.acc.iter_mut().zip(&self.scratch) {
                    *a += c * inv;
                }
            } else {
                let (_, j) = argmin_reduced(&self.scratch, g);
                self.acc[j] += 1.0;
            }
        }
        let inv_n = 1.0 / n as f64;
        for (a, w) in self.acc.iter_mut().zip(nu.weights()) {
            *a = *a * inv_n - w;
        }
        &self.acc
    }
}

/// Mini-batch gradient `(1/n) Σ_i ∇_g h_ε(x_i, g)` over row-major `xs`.
pub fn minibatch_gradient(
    g: &Potential,
    xs: &[f64],
    nu: &DiscreteMeasure,
    eps: f64,
) -> Result<GradientSample> {
    check_eps(eps)?;
    g.check_len(nu)?;
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !xs.len().is_multiple_of(nu.dim()) {
        return Err(Error::LengthMismatch {
            expected: nu.dim() * (xs.len() / nu.dim() + 1),
            got: xs.len(),
        });
    }
    let mut ws = GradientWorkspace::new(nu.len());
    let values = ws.batch_gradient(g.values(), xs, nu, eps).to_vec();
    Ok(GradientSample {
        values,
        eps_used: eps,
    })
}

/// Per-point transform values `g^{c,ε}(x_i)`, `eps = 0` meaning the hard transform.
fn transform_values(g: &[f64], xs: &[f64], nu: &DiscreteMeasure, eps: f64) -> Vec<f64> {
    let d = nu.dim();
    xs.par_chunks(d * 256)
        .flat_map_iter(|block| {
            let mut costs = vec![0.0; nu.len()];
            block
                .chunks_exact(d)
                .map(|x| {
                    nu.half_sq_dists(x, &mut costs);
                    if eps > 0.0 {
                        soft_in_place(&mut costs, g, nu.weights(), eps).0
                    } else {
                        argmin_reduced(&costs, g).0
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Monte-Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Sum and sum of squares in fixed chunks, so results do not depend on the
/// thread count.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct ChunkedMoments {
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl ChunkedMoments {
    pub(crate) fn push_chunk(&mut self, vals: &[f64]) {
        let (s, s2) = vals.iter().fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v));
        self.sum += s;
        self.sum_sq += s2;
        self.n += vals.len();
    }

    pub(crate) fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub(crate) fn std_err(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

fn linear_term(g: &[f64], nu: &DiscreteMeasure) -> f64 {
    g.iter().zip(nu.weights()).map(|(a, b)| a * b).sum()
}

/// Sample-average semi-dual `−(1/n) Σ_i g^{c,ε}(x_i) − Σ_j g_j w_j` on fixed points.
pub fn sample_objective(g: &Potential, xs: &[f64], nu: &DiscreteMeasure, eps: f64) -> Result<McEstimate> {
    g.check_len(nu)?;
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    if xs.is_empty() || !xs.len().is_multiple_of(nu.dim()) {
        return Err(Error::EmptyBatch);
    }
    let mut moments = ChunkedMoments::default();
    for chunk in xs.chunks(REDUCTION_CHUNK * nu.dim()) {
        let vals = transform_values(g.values(), chunk, nu, eps);
        moments.push_chunk(&vals);
    }
    Ok(McEstimate {
        value: -moments.mean() - linear_term(g.values(), nu),
        std_err: moments.std_err(),
        n: moments.n,
    })
}

/// Monte-Carlo semi-dual `H_ε(g)` with its standard error, drawing `n` points
/// from `rng`. `eps = 0` gives the unregularized `H_0`.
pub fn mc_objective_estimate(
    g: &Potential,
    src: &SourceDistribution,
    nu: &DiscreteMeasure,
    eps: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    g.check_len(nu)?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    let d = nu.dim();
    let mut buf = vec![0.0; REDUCTION_CHUNK * d];
    let mut moments = ChunkedMoments::default();
    let mut left = n;
    while left > 0 {
        let k = left.min(REDUCTION_CHUNK);
        let xs = &mut buf[..k * d];
        src.fill_batch(rng, xs);
        moments.push_chunk(&transform_values(g.values(), xs, nu, eps));
        left -= k;
    }
    Ok(McEstimate {
        value: -moments.mean() - linear_term(g.values(), nu),
        std_err: moments.std_err(),
        n,
    })
}

/// Monte-Carlo semi-dual `H_ε(g)`.
pub fn mc_objective(
    g: &Potential,
    src: &SourceDistribution,
    nu: &DiscreteMeasure,
    eps: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    mc_objective_estimate(g, src, nu, eps, n, rng).map(|e| e.value)
}
