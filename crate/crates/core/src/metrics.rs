//! Error functionals against a ground-truth instance and log-log rate fits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ground_truth::GroundTruthInstance;
use crate::rng::RngStream;
use crate::semidual::{softmax_weights, ChunkedMoments, Potential, REDUCTION_CHUNK};
use crate::transport_map::CellLocator;

/// Default `p` of the map error.
pub const DEFAULT_MAP_P: f64 = 2.0;
/// Default trailing fraction of records used by [`fit_rate`].
pub const DEFAULT_FIT_WINDOW: f64 = 0.5;
const MIN_FIT_POINTS: usize = 5;

pub const EVAL_CSV_HEADER: &str = "t,eps,gamma,pot_err_sq,cost_gap,map_err,wall_ms";

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub t: usize,
    pub eps: f64,
    pub gamma: f64,
    pub pot_err_sq: f64,
    pub cost_gap: f64,
    pub map_err: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordField {
    PotErrSq,
    CostGap,
    MapErr,
    Eps,
    Gamma,
}

impl RecordField {
    pub fn get(&self, r: &EvalRecord) -> f64 {
        match self {
            RecordField::PotErrSq => r.pot_err_sq,
            RecordField::CostGap => r.cost_gap,
            RecordField::MapErr => r.map_err,
            RecordField::Eps => r.eps,
            RecordField::Gamma => r.gamma,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "pot_err_sq" => RecordField::PotErrSq,
            "cost_gap" => RecordField::CostGap,
            "map_err" => RecordField::MapErr,
            "eps" => RecordField::Eps,
            "gamma" => RecordField::Gamma,
            other => return Err(domain(format!("unknown record field `{other}`"))),
        })
    }
}

pub fn write_records<W: Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(EVAL_CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != EVAL_CSV_HEADER {
        return Err(domain(format!(
            "unexpected header `{}`, expected `{EVAL_CSV_HEADER}`",
            header.join(",")
        )));
    }
    let recs = rdr.deserialize().collect::<std::result::Result<Vec<EvalRecord>, _>>()?;
    Ok(recs)
}

fn centered_diff(g: &[f64], h: &[f64]) -> Vec<f64> {
    let m = g.len() as f64;
    let mg = g.iter().sum::<f64>() / m;
    let mh = h.iter().sum::<f64>() / m;
    g.iter().zip(h).map(|(a, b)| (a - mg) - (b - mh)).collect()
}

/// `‖(g − ḡ1) − (g* − ḡ*1)‖²`: squared distance on the complement of constants.
pub fn potential_error_sq(g: &Potential, g_star: &Potential) -> Result<f64> {
    if g.len() != g_star.len() {
        return Err(Error::LengthMismatch {
            expected: g_star.len(),
            got: g.len(),
        });
    }
    Ok(centered_diff(g.values(), g_star.values()).iter().map(|v| v * v).sum())
}

/// Cost gap on common random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostGap {
    /// `|Ĥ₀(g*) − Ĥ₀(g)|`.
    pub abs: f64,
    /// `Ĥ₀(g) − Ĥ₀(g*)`, nonnegative up to Monte-Carlo noise.
    pub signed: f64,
    pub std_err: f64,
}

/// Fixed Monte-Carlo sample pool for repeated cost and map evaluation.
///
/// The pool is drawn once, together with `g*^c` and the optimal cell of each
/// point, so every evaluation of a run shares the same random numbers.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    gt: &'a GroundTruthInstance,
    xs: Vec<f64>,
    n_cost: usize,
    n_map: usize,
    p: f64,
    star_transform: Vec<f64>,
    star_cells: Vec<usize>,
    star_linear: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        gt: &'a GroundTruthInstance,
        n_cost: usize,
        n_map: usize,
        p: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(domain(format!("map error exponent must be >= 1, got {p}")));
        }
        let n = n_cost.max(n_map);
        let xs = if n > 0 {
            gt.src.sample_batch(n, rng)?
        } else {
            Vec::new()
        };
        let loc = CellLocator::new(&gt.g_star, &gt.nu)?;
        let star_transform = loc
            .transform_all(&xs[..n_cost * gt.nu.dim()])
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        let star_cells = gt.true_cells(&xs[..n_map * gt.nu.dim()]);
        let star_linear = dot(gt.g_star.values(), gt.nu.weights());
        Ok(Self {
            gt,
            xs,
            n_cost,
            n_map,
            p,
            star_transform,
            star_cells,
            star_linear,
        })
    }

    pub fn cost_gap(&self, g: &Potential) -> Result<CostGap> {
        if self.n_cost == 0 {
            return Err(Error::EmptyBatch);
        }
        g.check_len(&self.gt.nu)?;
        let loc = CellLocator::new(g, &self.gt.nu)?;
        let d = self.gt.nu.dim();
        let mut moments = ChunkedMoments::default();
        let linear = dot(g.values(), self.gt.nu.weights()) - self.star_linear;
        let pool = &self.xs[..self.n_cost * d];
        for (xs, star) in pool
            .chunks(REDUCTION_CHUNK * d)
            .zip(self.star_transform.chunks(REDUCTION_CHUNK))
        {
            let diffs: Vec<f64> = loc
                .transform_all(xs)
                .into_iter()
                .zip(star)
                .map(|((v, _), s)| s - v)
                .collect();
            moments.push_chunk(&diffs);
        }
        let signed = moments.mean() - linear;
        Ok(CostGap {
            abs: signed.abs(),
            signed,
            std_err: moments.std_err(),
        })
    }

    pub fn map_error(&self, g: &Potential) -> Result<f64> {
        if self.n_map == 0 {
            return Err(Error::EmptyBatch);
        }
        g.check_len(&self.gt.nu)?;
        let loc = CellLocator::new(g, &self.gt.nu)?;
        let d = self.gt.nu.dim();
        let cells = loc.locate_all(&self.xs[..self.n_map * d]);
        let mut total = 0.0;
        for chunk in cells
            .chunks(REDUCTION_CHUNK)
            .zip(self.star_cells.chunks(REDUCTION_CHUNK))
            .map(|(got, want)| {
                got.iter()
                    .zip(want)
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| atom_dist_pow(self.gt, *a, *b, self.p))
                    .sum::<f64>()
            })
        {
            total += chunk;
        }
        Ok(total / self.n_map as f64)
    }

    /// Potential error, cost gap and map error for one potential.
    pub fn evaluate(&self, g: &Potential) -> Result<(f64, f64, f64)> {
        let pot = potential_error_sq(g, &self.gt.g_star)?;
        let cost = if self.n_cost > 0 { self.cost_gap(g)?.abs } else { f64::NAN };
        let map = if self.n_map > 0 { self.map_error(g)? } else { f64::NAN };
        Ok((pot, cost, map))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn atom_dist_pow(gt: &GroundTruthInstance, i: usize, j: usize, p: f64) -> f64 {
    let d2: f64 = gt
        .nu
        .atom(i)
        .iter()
        .zip(gt.nu.atom(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if p == 2.0 {
        d2
    } else {
        d2.sqrt().powf(p)
    }
}

/// `|Ĥ₀(g*) − Ĥ₀(g)|` with both estimates on the same `n` draws.
pub fn cost_gap(g: &Potential, gt: &GroundTruthInstance, n: usize, rng: &mut RngStream) -> Result<CostGap> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Evaluator::new(gt, n, 0, DEFAULT_MAP_P, rng)?.cost_gap(g)
}

/// `(1/n) Σ_i ‖T*(x_i) − T(g)(x_i)‖^p` over `n` fresh draws.
pub fn map_error(g: &Potential, gt: &GroundTruthInstance, p: f64, n: usize, rng: &mut RngStream) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Evaluator::new(gt, 0, n, p, rng)?.map_error(g)
}

/// Empirical restricted-strong-convexity ratio
/// `⟨∇H_ε(g), g − g*⟩ / ‖g − g*‖²` on the complement of constants.
pub fn rsc_ratio(g: &Potential, gt: &GroundTruthInstance, eps: f64, n: usize, rng: &mut RngStream) -> Result<f64> {
    let denom = potential_error_sq(g, &gt.g_star)?;
    if denom == 0.0 {
        return Err(Error::Degenerate("g equals g* modulo constants".into()));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let m = gt.nu.len();
    let mut grad = vec![0.0; m];
    let mut x = vec![0.0; gt.nu.dim()];
    for _ in 0..n {
        gt.src.sample_into(rng, &mut x);
        for (a, c) in grad.iter_mut().zip(softmax_weights(g, &x, &gt.nu, eps)?) {
            *a += c;
        }
    }
    for (a, w) in grad.iter_mut().zip(gt.nu.weights()) {
        *a = *a / n as f64 - w;
    }
    let diff = centered_diff(g.values(), gt.g_star.values());
    Ok(dot(&grad, &diff) / denom)
}

/// Least-squares slope of `ln(value)` against `ln(t)` over the trailing
/// `window` fraction of points; non-positive or non-finite values are dropped.
pub fn fit_loglog_slope(points: &[(f64, f64)], window: f64) -> Result<f64> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(domain(format!("window must be in (0, 1], got {window}")));
    }
    let take = ((points.len() as f64) * window).ceil() as usize;
    let tail = &points[points.len() - take.min(points.len())..];
    let usable: Vec<(f64, f64)> = tail
        .iter()
        .filter(|(t, v)| *t > 0.0 && *v > 0.0 && v.is_finite())
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if usable.len() < MIN_FIT_POINTS {
        return Err(domain(format!(
            "need at least {MIN_FIT_POINTS} positive points in the fit window, got {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(domain("fit window has a single distinct t"));
    }
    Ok(sxy / sxx)
}

pub fn fit_rate(records: &[EvalRecord], field: RecordField, window: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.t as f64, field.get(r))).collect();
    fit_loglog_slope(&pts, window)
}

/// Pointwise mean of several runs sharing the same `t` grid.
pub fn mean_records(runs: &[Vec<EvalRecord>]) -> Result<Vec<EvalRecord>> {
    let first = runs.first().ok_or_else(|| domain("no runs to average"))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(domain("runs have different evaluation grids"));
    }
    let k = runs.len() as f64;
    (0..first.len())
        .map(|i| {
            let t = first[i].t;
            if runs.iter().any(|r| r[i].t != t) {
                return Err(domain("runs have different evaluation grids"));
            }
            let avg = |f: fn(&EvalRecord) -> f64| runs.iter().map(|r| f(&r[i])).sum::<f64>() / k;
            Ok(EvalRecord {
                t,
                eps: avg(|r| r.eps),
                gamma: avg(|r| r.gamma),
                pot_err_sq: avg(|r| r.pot_err_sq),
                cost_gap: avg(|r| r.cost_gap),
                map_err: avg(|r| r.map_err),
                wall_ms: avg(|r| r.wall_ms),
            })
        })
        .collect()
}
