//! Laguerre-cell geometry: assignment, the induced transport map, cell masses
//! and Monge–Kantorovich quantile labels.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::measures::{DiscreteMeasure, SourceDistribution};
use crate::rng::RngStream;
use crate::semidual::{argmin_reduced, Potential};

/// Relative gap under which the two best candidates count as a tie.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellAssignment {
    /// 0-based atom index (smallest index on ties).
    pub index: usize,
    /// The two best candidates are within `BOUNDARY_TOL` of each other.
    pub on_boundary_hint: bool,
}

/// Cell `L_j(g)` containing `x`.
pub fn assign_cell(g: &Potential, x: &[f64], nu: &DiscreteMeasure) -> Result<CellAssignment> {
    g.check_len(nu)?;
    if x.len() != nu.dim() {
        return Err(Error::LengthMismatch {
            expected: nu.dim(),
            got: x.len(),
        });
    }
    let mut costs = vec![0.0; nu.len()];
    nu.half_sq_dists(x, &mut costs);
    let gv = g.values();
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut index = 0;
    for (j, (c, gj)) in costs.iter().zip(gv).enumerate() {
        let v = c - gj;
        if v < best {
            second = best;
            best = v;
            index = j;
        } else if v < second {
            second = v;
        }
    }
    let on_boundary_hint = second - best < BOUNDARY_TOL * (1.0 + best.abs());
    Ok(CellAssignment {
        index,
        on_boundary_hint,
    })
}

/// `T(g)(x) = x − ∇g^c(x)`, i.e. the atom of the cell containing `x`.
pub fn map_apply<'a>(g: &Potential, x: &[f64], nu: &'a DiscreteMeasure) -> Result<&'a [f64]> {
    let cell = assign_cell(g, x, nu)?;
    Ok(nu.atom(cell.index))
}

/// Batch cell lookup for a fixed potential.
///
/// In one dimension the cells are intervals ordered along the line, so the
/// lower envelope of `x ↦ ½y_j² − g_j − y_j x` is built once and queried by
/// bisection; the envelope neighbours are re-checked with the exact cost so
/// the answer agrees with the exhaustive argmin. Higher dimensions scan all
/// atoms.
#[derive(Debug, Clone)]
pub struct CellLocator<'a> {
    nu: &'a DiscreteMeasure,
    g: Vec<f64>,
    envelope: Option<Envelope>,
}

#[derive(Debug, Clone)]
struct Envelope {
    /// Atom indices on the envelope, left to right.
    atoms: Vec<usize>,
    /// `breaks[i]` separates `atoms[i]` and `atoms[i + 1]`.
    breaks: Vec<f64>,
}

impl<'a> CellLocator<'a> {
    pub fn new(g: &Potential, nu: &'a DiscreteMeasure) -> Result<Self> {
        g.check_len(nu)?;
        let envelope = (nu.dim() == 1).then(|| Envelope::build(nu.points(), g.values()));
        Ok(Self {
            nu,
            g: g.values().to_vec(),
            envelope,
        })
    }

    #[inline]
    fn reduced(&self, x: f64, j: usize) -> f64 {
        let d = x - self.nu.points()[j];
        0.5 * d * d - self.g[j]
    }

    /// `(g^c(x), argmin)`, matching [`crate::semidual::ctransform_hard`].
    pub fn locate_with_value(&self, x: &[f64], scratch: &mut [f64]) -> (f64, usize) {
        match &self.envelope {
            Some(env) => {
                let x0 = x[0];
                let pos = env.breaks.partition_point(|b| *b < x0);
                let lo = pos.saturating_sub(1);
                let hi = (pos + 1).min(env.atoms.len() - 1);
                let mut best = (f64::INFINITY, usize::MAX);
                for &j in &env.atoms[lo..=hi] {
                    let v = self.reduced(x0, j);
                    if v < best.0 || (v == best.0 && j < best.1) {
                        best = (v, j);
                    }
                }
                best
            }
            None => {
                self.nu.half_sq_dists(x, scratch);
                argmin_reduced(scratch, &self.g)
            }
        }
    }

    pub fn locate(&self, x: &[f64], scratch: &mut [f64]) -> usize {
        self.locate_with_value(x, scratch).1
    }

    /// Cell indices of every row of `xs`.
    pub fn locate_all(&self, xs: &[f64]) -> Vec<usize> {
        let d = self.nu.dim();
        xs.par_chunks(d * 1024)
            .flat_map_iter(|block| {
                let mut scratch = vec![0.0; self.nu.len()];
                block
                    .chunks_exact(d)
                    .map(|x| self.locate(x, &mut scratch))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// `(g^c(x_i), argmin_i)` for every row of `xs`.
    pub fn transform_all(&self, xs: &[f64]) -> Vec<(f64, usize)> {
        let d = self.nu.dim();
        xs.par_chunks(d * 1024)
            .flat_map_iter(|block| {
                let mut scratch = vec![0.0; self.nu.len()];
                block
                    .chunks_exact(d)
                    .map(|x| self.locate_with_value(x, &mut scratch))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

impl Envelope {
    fn build(ys: &[f64], g: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.sort_by(|&i, &k| ys[i].total_cmp(&ys[k]));
        let intercept = |j: usize| 0.5 * ys[j] * ys[j] - g[j];
        // lines c_j − y_j x with decreasing slope; i is below k left of the crossing
        let cross = |i: usize, k: usize| (intercept(k) - intercept(i)) / (ys[k] - ys[i]);
        let mut atoms: Vec<usize> = Vec::with_capacity(ys.len());
        for &j in &order {
            while atoms.len() >= 2 {
                let p = atoms[atoms.len() - 2];
                let q = atoms[atoms.len() - 1];
                if cross(p, j) <= cross(p, q) {
                    atoms.pop();
                } else {
                    break;
                }
            }
            atoms.push(j);
        }
        let breaks = atoms.windows(2).map(|w| cross(w[0], w[1])).collect();
        Self { atoms, breaks }
    }
}

/// Integer cell counts over `n` fresh samples.
pub fn cell_counts(
    g: &Potential,
    src: &SourceDistribution,
    nu: &DiscreteMeasure,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if src.dim() != nu.dim() {
        return Err(Error::LengthMismatch {
            expected: nu.dim(),
            got: src.dim(),
        });
    }
    let locator = CellLocator::new(g, nu)?;
    let d = nu.dim();
    let chunk = 1 << 16;
    let mut buf = vec![0.0; chunk * d];
    let mut counts = vec![0u64; nu.len()];
    let mut left = n;
    while left > 0 {
        let k = left.min(chunk);
        let xs = &mut buf[..k * d];
        src.fill_batch(rng, xs);
        for j in locator.locate_all(xs) {
            counts[j] += 1;
        }
        left -= k;
    }
    Ok(counts)
}

/// Monte-Carlo estimate of `μ(L_j(g))`.
pub fn cell_masses(
    g: &Potential,
    src: &SourceDistribution,
    nu: &DiscreteMeasure,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let counts = cell_counts(g, src, nu, n, rng)?;
    Ok(counts.iter().map(|c| *c as f64 / n as f64).collect())
}

/// Quantile band and mapped atom of one point of the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantileLabel {
    /// `ceil(bands·‖x‖)` clamped to `1..=bands`.
    pub band: usize,
    pub atom: usize,
}

/// Labels each row of `xs` with its radial band and assigned atom.
pub fn mk_quantile_labels(
    g: &Potential,
    xs: &[f64],
    nu: &DiscreteMeasure,
    bands: usize,
) -> Result<Vec<QuantileLabel>> {
    if bands == 0 {
        return Err(domain("bands must be >= 1"));
    }
    let d = nu.dim();
    if !xs.len().is_multiple_of(d) {
        return Err(Error::LengthMismatch {
            expected: d * (xs.len() / d),
            got: xs.len(),
        });
    }
    let locator = CellLocator::new(g, nu)?;
    let mut scratch = vec![0.0; nu.len()];
    xs.chunks_exact(d)
        .enumerate()
        .map(|(i, x)| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 1.0 {
                return Err(domain(format!("point {i} lies outside the unit ball (norm {r})")));
            }
            let band = ((bands as f64 * r).ceil() as usize).clamp(1, bands);
            Ok(QuantileLabel {
                band,
                atom: locator.locate(x, &mut scratch),
            })
        })
        .collect()
}

/// Writes the point cloud `x1..xd,band,atom,t1..td`.
pub fn write_map_export<W: Write>(
    out: W,
    xs: &[f64],
    labels: &[QuantileLabel],
    nu: &DiscreteMeasure,
) -> Result<()> {
    let d = nu.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("band".into());
    header.push("atom".into());
    header.extend((1..=d).map(|i| format!("t{i}")));
    w.write_record(&header)?;
    for (x, lab) in xs.chunks_exact(d).zip(labels) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(lab.band.to_string());
        row.push(lab.atom.to_string());
        row.extend(nu.atom(lab.atom).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
