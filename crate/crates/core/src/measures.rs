//! Target and source measures.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::RngStream;

/// Tolerance on the weight total accepted before renormalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Finite target measure: atoms `y_j` (row-major `M x d`) with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from row-major atoms and weights.
    ///
    /// Weights are renormalized when their sum is within `WEIGHT_SUM_TOL` of 1
    /// and rejected otherwise.
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("dimension must be >= 1"));
        }
        let m = weights.len();
        if m == 0 {
            return Err(domain("measure needs at least one atom"));
        }
        if points.len() != m * dim {
            return Err(Error::LengthMismatch {
                expected: m * dim,
                got: points.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(domain("atoms must be finite"));
        }
        if let Some((j, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(domain(format!("weight {j} must be positive, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(domain(format!("weights sum to {total}, expected 1")));
        }
        let weights: Vec<f64> = if (total - 1.0).abs() > 1e-14 {
            weights.into_iter().map(|w| w / total).collect()
        } else {
            weights
        };

        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(m);
        for j in 0..m {
            // `+ 0.0` folds -0.0 onto 0.0
            let key: Vec<u64> = points[j * dim..(j + 1) * dim]
                .iter()
                .map(|v| (v + 0.0).to_bits())
                .collect();
            if let Some(i) = seen.insert(key, j) {
                return Err(Error::DuplicateAtoms(i, j));
            }
        }
        Ok(Self {
            points,
            dim,
            weights,
        })
    }

    /// Uniformly weighted measure on the given atoms.
    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        let m = if dim == 0 { 0 } else { points.len() / dim };
        let w = vec![1.0 / m.max(1) as f64; m];
        Self::new(points, dim, w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Writes `½‖x − y_j‖²` for all `j` into `out`.
    pub fn half_sq_dists(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.len());
        if self.dim == 1 {
            let x0 = x[0];
            for (o, y) in out.iter_mut().zip(&self.points) {
                let diff = x0 - y;
                *o = 0.5 * diff * diff;
            }
            return;
        }
        for (o, y) in out.iter_mut().zip(self.points.chunks_exact(self.dim)) {
            let mut s = 0.0;
            for (a, b) in x.iter().zip(y) {
                let diff = a - b;
                s += diff * diff;
            }
            *o = 0.5 * s;
        }
    }

    /// `r_j = R·‖y_1 − y_j‖`.
    pub fn pairwise_radii(&self, radius: f64) -> Result<Vec<f64>> {
        pairwise_radii(&self.points, self.dim, radius)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        Self::read_csv(&mut rdr)
    }

    pub fn read_csv<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "w" {
            return Err(domain("measure csv header must be `w,x1,...,xd`"));
        }
        for (i, h) in headers.iter().enumerate().skip(1) {
            if h != format!("x{i}") {
                return Err(domain(format!("unexpected column `{h}`, expected `x{i}`")));
            }
        }
        let dim = headers.len() - 1;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = rec.iter().map(|s| s.trim().parse::<f64>());
            let parse_err = |col: usize| domain(format!("row {}: column {col} is not a number", row + 2));
            weights.push(vals.next().unwrap().map_err(|_| parse_err(1))?);
            for (c, v) in vals.enumerate() {
                points.push(v.map_err(|_| parse_err(c + 2))?);
            }
        }
        Self::new(points, dim, weights)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for j in 0..self.len() {
            let mut row = vec![self.weights[j].to_string()];
            row.extend(self.atom(j).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `r_j = R·‖y_1 − y_j‖` for row-major atoms; fails if any atom repeats `y_1`.
pub fn pairwise_radii(points: &[f64], dim: usize, radius: f64) -> Result<Vec<f64>> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(domain("points must form a non-empty M x d array"));
    }
    let anchor = &points[..dim];
    let mut out = Vec::with_capacity(points.len() / dim);
    for (j, y) in points.chunks_exact(dim).enumerate() {
        let dist = anchor
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if j > 0 && dist == 0.0 {
            return Err(Error::DuplicateAtoms(0, j));
        }
        out.push(radius * dist);
    }
    Ok(out)
}

/// Shape of a source distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    UniformBall { center: Vec<f64>, radius: f64 },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// `U([delta, delta + length])` on the real line.
    ShiftedUniformInterval { delta: f64, length: f64 },
}

/// Sampleable source measure with the support metadata used for step-size
/// and projection defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDistribution {
    kind: SourceKind,
    radius_bound: f64,
    diameter: f64,
}

/// Multiple of the largest standard deviation used as the effective radius of
/// a Gaussian source.
pub const GAUSSIAN_EFFECTIVE_SIGMAS: f64 = 4.0;

impl SourceDistribution {
    pub fn new(kind: SourceKind) -> Result<Self> {
        let (radius_bound, diameter) = match &kind {
            SourceKind::UniformBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(domain("box bounds must be non-empty and of equal length"));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
                    return Err(domain("box needs finite lo < hi in every dimension"));
                }
                let r = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let diam = lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt();
                (r, diam)
            }
            SourceKind::UniformBall { center, radius } => {
                if center.is_empty() || !(radius.is_finite() && *radius > 0.0) {
                    return Err(domain("ball needs a non-empty center and radius > 0"));
                }
                (norm(center) + radius, 2.0 * radius)
            }
            SourceKind::Gaussian { mean, std } => {
                if mean.is_empty() || mean.len() != std.len() {
                    return Err(domain("gaussian mean and std must be non-empty and of equal length"));
                }
                if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(domain("gaussian std must be positive"));
                }
                let smax = std.iter().cloned().fold(0.0, f64::max);
                let eff = GAUSSIAN_EFFECTIVE_SIGMAS * smax;
                (norm(mean) + eff, 2.0 * eff)
            }
            SourceKind::ShiftedUniformInterval { delta, length } => {
                if !(delta.is_finite() && length.is_finite() && *length > 0.0) {
                    return Err(domain("interval needs finite delta and length > 0"));
                }
                (delta.abs().max((delta + length).abs()), *length)
            }
        };
        if !(radius_bound > 0.0) {
            return Err(domain("support radius bound must be > 0"));
        }
        Ok(Self {
            kind,
            radius_bound,
            diameter,
        })
    }

    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::new(SourceKind::UniformBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        })
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    /// `R` with `Supp(μ) ⊆ B(0, R)` (effective for unbounded kinds).
    pub fn radius_bound(&self) -> f64 {
        self.radius_bound
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self.kind, SourceKind::Gaussian { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SourceKind::UniformBox { lo, .. } => lo.len(),
            SourceKind::UniformBall { center, .. } => center.len(),
            SourceKind::Gaussian { mean, .. } => mean.len(),
            SourceKind::ShiftedUniformInterval { .. } => 1,
        }
    }

    /// Support predicate; always true for unbounded kinds.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            SourceKind::UniformBox { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
            }
            SourceKind::UniformBall { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 <= radius * radius
            }
            SourceKind::Gaussian { .. } => true,
            SourceKind::ShiftedUniformInterval { delta, length } => {
                *delta <= x[0] && x[0] <= delta + length
            }
        }
    }

    /// Draws one point into `out` (length `dim`).
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        match &self.kind {
            SourceKind::UniformBox { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = l + (h - l) * rng.uniform();
                }
            }
            SourceKind::UniformBall { center, radius } => {
                let d = center.len();
                loop {
                    let mut s = 0.0;
                    for o in out.iter_mut() {
                        *o = rng.normal();
                        s += *o * *o;
                    }
                    if s > 0.0 {
                        let r = radius * rng.uniform().powf(1.0 / d as f64) / s.sqrt();
                        for (o, c) in out.iter_mut().zip(center) {
                            *o = c + *o * r;
                        }
                        break;
                    }
                }
            }
            SourceKind::Gaussian { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    *o = m + s * rng.normal();
                }
            }
            SourceKind::ShiftedUniformInterval { delta, length } => {
                out[0] = delta + length * rng.uniform();
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.sample_into(rng, &mut x);
        x
    }

    /// `n` draws, row-major `n x d`; identical to `n` calls of [`Self::sample`].
    pub fn sample_batch(&self, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        self.fill_batch(rng, &mut out);
        Ok(out)
    }

    /// Fills a row-major buffer whose length is a multiple of `dim`.
    pub fn fill_batch(&self, rng: &mut RngStream, out: &mut [f64]) {
        for row in out.chunks_exact_mut(self.dim()) {
            self.sample_into(rng, row);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
