//! Projected averaged SGD on the semi-dual with a decaying regularization
//! schedule, plus the fixed-ε, unregularized and Adam baselines.
//!
//! Step `k ≥ 1` uses `γ_k = γ₁ k^{-b}` and evaluates the gradient at the
//! previous regularization level `ε_{k-1} = eps_scale·(k-1)^{-a}` (with
//! `ε_0 = eps_scale`), then projects and folds `g_k` into the running average.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, SourceDistribution};
use crate::projection::ProjectionSet;
use crate::rng::{streams, RngStream};
use crate::semidual::{GradientWorkspace, Potential};

pub const DEFAULT_A: f64 = 0.33;
pub const DEFAULT_B: f64 = 2.0 / 3.0;
pub const DEFAULT_EPS_SCALE: f64 = 0.1;
pub const DEFAULT_OMEGA: f64 = 2.0;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_LR: f64 = 1e-3;
const ADAM_EPS: f64 = 1e-8;

/// Update rule and regularization path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Decreasing regularization `ε_k = eps_scale·k^{-a}`.
    Drag,
    /// Constant regularization.
    FixedEps { eps: f64 },
    /// Unregularized subgradient (`ε = 0`).
    NoReg,
    /// Adam moments with bias correction on the decreasing-ε gradient.
    Adam { beta1: f64, beta2: f64, lr: f64 },
}

impl Method {
    pub fn adam_default() -> Self {
        Method::Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            lr: ADAM_LR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Averaging {
    /// Arithmetic mean of `g_0..g_t`.
    Plain,
    /// Weights `ln(k+1)^ω` on `g_k`.
    Weighted { omega: f64 },
    /// Return the last iterate.
    None,
}

/// Iterations at which evaluation hooks fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvalSchedule {
    /// `points` geometrically spaced iterations from `start` to `t_max`.
    Geometric { points: usize, start: usize },
    Explicit(Vec<usize>),
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule::Geometric {
            points: 40,
            start: 10,
        }
    }
}

impl EvalSchedule {
    /// Sorted, deduplicated iterations in `1..=t_max`.
    pub fn iterations(&self, t_max: usize) -> Vec<usize> {
        let mut out: Vec<usize> = match self {
            EvalSchedule::Geometric { points, start } => {
                if t_max == 0 || *points == 0 {
                    return Vec::new();
                }
                let lo = (*start).clamp(1, t_max) as f64;
                let hi = t_max as f64;
                if *points == 1 {
                    vec![t_max]
                } else {
                    (0..*points)
                        .map(|i| {
                            let f = i as f64 / (*points - 1) as f64;
                            (lo * (hi / lo).powf(f)).round() as usize
                        })
                        .collect()
                }
            }
            EvalSchedule::Explicit(v) => v.clone(),
        };
        out.retain(|t| (1..=t_max).contains(t));
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma1: f64,
    pub a: f64,
    pub b: f64,
    pub eps_scale: f64,
    pub projection: ProjectionSet,
    pub batch_size: usize,
    /// Multiply `γ₁` by `√batch_size`.
    pub scale_gamma_with_batch: bool,
    pub averaging: Averaging,
    pub t_max: usize,
    pub eval_every: EvalSchedule,
    pub seed: u64,
    pub method: Method,
}

impl SolverConfig {
    /// Defaults for a given source/target pair: `γ₁ = Diam(Supp μ)`, `C_u`
    /// projection built from the support radius, plain averaging.
    pub fn defaults_for(src: &SourceDistribution, nu: &DiscreteMeasure) -> Result<Self> {
        Ok(Self {
            gamma1: src.diameter(),
            a: DEFAULT_A,
            b: DEFAULT_B,
            eps_scale: DEFAULT_EPS_SCALE,
            projection: ProjectionSet::lipschitz_for(nu, src.radius_bound())?,
            batch_size: 1,
            scale_gamma_with_batch: true,
            averaging: Averaging::Plain,
            t_max: 10_000,
            eval_every: EvalSchedule::default(),
            seed: 0,
            method: Method::Drag,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::Config { field, reason });
        if !(self.gamma1.is_finite() && self.gamma1 > 0.0) {
            return bad("gamma1", format!("must be > 0, got {}", self.gamma1));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.b > 0.5 && self.b < 1.0) {
            return bad("b", format!("must satisfy ½ < b < 1, got {}", self.b));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return bad("a", format!("must be >= 0, got {}", self.a));
        }
        if !(self.eps_scale.is_finite() && self.eps_scale > 0.0) {
            return bad("eps_scale", format!("must be > 0, got {}", self.eps_scale));
        }
        if let Averaging::Weighted { omega } = self.averaging {
            if !(omega.is_finite() && omega >= 0.0) {
                return bad("omega", format!("must be >= 0, got {omega}"));
            }
        }
        match self.method {
            Method::FixedEps { eps } if !(eps.is_finite() && eps > 0.0) => {
                bad("fixed_eps", format!("must be > 0, got {eps}"))
            }
            Method::Adam { beta1, beta2, lr } => {
                if !(0.0..1.0).contains(&beta1) {
                    return bad("adam_beta1", format!("must be in [0, 1), got {beta1}"));
                }
                if !(0.0..1.0).contains(&beta2) {
                    return bad("adam_beta2", format!("must be in [0, 1), got {beta2}"));
                }
                if !(lr.is_finite() && lr > 0.0) {
                    return bad("adam_lr", format!("must be > 0, got {lr}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether `(a, b)` satisfy the rate conditions `2a < b` and `a + b < 1`.
    pub fn rate_conditions_hold(&self) -> bool {
        2.0 * self.a < self.b && self.a + self.b < 1.0
    }

    /// `γ₁` after the optional mini-batch scaling.
    pub fn effective_gamma1(&self) -> f64 {
        if self.scale_gamma_with_batch && self.batch_size > 1 {
            self.gamma1 * (self.batch_size as f64).sqrt()
        } else {
            self.gamma1
        }
    }

    /// `γ_k` for step `k ≥ 1`.
    pub fn step_size(&self, k: usize) -> f64 {
        self.effective_gamma1() * (k as f64).powf(-self.b)
    }

    /// `ε_t = eps_scale·t^{-a}` for `t ≥ 1`, `eps_scale` for `t = 0`.
    pub fn schedule_eps(&self, t: usize) -> f64 {
        if t == 0 {
            self.eps_scale
        } else {
            self.eps_scale * (t as f64).powf(-self.a)
        }
    }

    /// Regularization used by the gradient at step `k ≥ 1`; `0` for `NoReg`.
    pub fn gradient_eps(&self, k: usize) -> f64 {
        match self.method {
            Method::Drag | Method::Adam { .. } => self.schedule_eps(k - 1),
            Method::FixedEps { eps } => eps,
            Method::NoReg => 0.0,
        }
    }

    /// Regularization to report at iteration `t`.
    pub fn reported_eps(&self, t: usize) -> f64 {
        match self.method {
            Method::Drag | Method::Adam { .. } => self.schedule_eps(t),
            Method::FixedEps { eps } => eps,
            Method::NoReg => 0.0,
        }
    }
}

/// One online step of the `ln(k+1)^ω`-weighted average.
///
/// `g_new` is iterate `t`; `weight_accum` holds `Σ_{k<t} ln(k+1)^ω` and the
/// returned accumulator includes `ln(t+1)^ω`.
pub fn weighted_average_update(
    g_avg: &mut [f64],
    g_new: &[f64],
    t: usize,
    omega: f64,
    weight_accum: f64,
) -> f64 {
    let wt = ((t + 1) as f64).ln().powf(omega);
    let accum = weight_accum + wt;
    if accum > 0.0 {
        let r = wt / accum;
        for (a, g) in g_avg.iter_mut().zip(g_new) {
            *a = (1.0 - r) * *a + r * g;
        }
    }
    accum
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: usize,
    pub g: Potential,
    pub g_avg: Potential,
    pub weight_accum: f64,
    pub rng: RngStream,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    /// The supplied `g0` was outside the projection set and got projected.
    pub projected_on_entry: bool,
    workspace: GradientWorkspace,
    batch: Vec<f64>,
}

impl SolverState {
    /// Starts at `g0` (projected if needed) or at the projection of zero.
    pub fn init(config: &SolverConfig, nu: &DiscreteMeasure, g0: Option<Potential>) -> Result<Self> {
        config.validate()?;
        config.projection.check_len(nu.len())?;
        let m = nu.len();
        let start = g0.unwrap_or_else(|| Potential::zeros(m));
        start.check_len(nu)?;
        let projected_on_entry = !config.projection.contains(start.values());
        let g = config.projection.project(&start)?;
        let weight_accum = match config.averaging {
            Averaging::Weighted { omega } => 0f64.powf(omega),
            _ => 1.0,
        };
        let adam = matches!(config.method, Method::Adam { .. });
        Ok(Self {
            t: 0,
            g_avg: g.clone(),
            g,
            weight_accum,
            rng: RngStream::with_stream(config.seed, streams::SOLVER),
            adam_m: if adam { vec![0.0; m] } else { Vec::new() },
            adam_v: if adam { vec![0.0; m] } else { Vec::new() },
            projected_on_entry,
            workspace: GradientWorkspace::new(m),
            batch: vec![0.0; config.batch_size * nu.dim()],
        })
    }

    /// The estimate returned by the solver: the average, or the last iterate
    /// without averaging.
    pub fn output(&self) -> &Potential {
        &self.g_avg
    }

    /// Draws a batch from `src` and performs one step.
    pub fn step(&mut self, config: &SolverConfig, src: &SourceDistribution, nu: &DiscreteMeasure) -> Result<()> {
        if self.t >= config.t_max {
            return Err(Error::Exhausted(config.t_max));
        }
        if src.dim() != nu.dim() {
            return Err(Error::LengthMismatch {
                expected: nu.dim(),
                got: src.dim(),
            });
        }
        let mut batch = std::mem::take(&mut self.batch);
        batch.resize(config.batch_size * nu.dim(), 0.0);
        src.fill_batch(&mut self.rng, &mut batch);
        let res = self.step_on_batch(config, nu, &batch);
        self.batch = batch;
        res
    }

    /// One step with caller-supplied samples (row-major, any positive count).
    pub fn step_on_batch(&mut self, config: &SolverConfig, nu: &DiscreteMeasure, xs: &[f64]) -> Result<()> {
        if self.t >= config.t_max {
            return Err(Error::Exhausted(config.t_max));
        }
        if xs.is_empty() || !xs.len().is_multiple_of(nu.dim()) {
            return Err(Error::EmptyBatch);
        }
        let k = self.t + 1;
        let eps = config.gradient_eps(k);
        let grad = self.workspace.batch_gradient(self.g.values(), xs, nu, eps);
        let g = self.g.values_mut();
        match config.method {
            Method::Adam { beta1, beta2, lr } => {
                let c1 = 1.0 - beta1.powi(k as i32);
                let c2 = 1.0 - beta2.powi(k as i32);
                for j in 0..g.len() {
                    let gr = grad[j];
                    self.adam_m[j] = beta1 * self.adam_m[j] + (1.0 - beta1) * gr;
                    self.adam_v[j] = beta2 * self.adam_v[j] + (1.0 - beta2) * gr * gr;
                    let mh = self.adam_m[j] / c1;
                    let vh = self.adam_v[j] / c2;
                    g[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
            _ => {
                let gamma = config.step_size(k);
                for (v, gr) in g.iter_mut().zip(grad) {
                    *v -= gamma * gr;
                }
            }
        }
        config.projection.project_in_place(g);

        match config.averaging {
            Averaging::Plain => {
                let kf = k as f64;
                let (r_new, r_old) = (1.0 / (kf + 1.0), kf / (kf + 1.0));
                for (a, v) in self.g_avg.values_mut().iter_mut().zip(self.g.values()) {
                    *a = r_new * v + r_old * *a;
                }
            }
            Averaging::Weighted { omega } => {
                self.weight_accum = weighted_average_update(
                    self.g_avg.values_mut(),
                    self.g.values(),
                    k,
                    omega,
                    self.weight_accum,
                );
            }
            Averaging::None => self.g_avg.values_mut().copy_from_slice(self.g.values()),
        }
        self.t = k;
        Ok(())
    }
}

/// Schedule values handed to evaluation hooks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub t: usize,
    pub eps: f64,
    pub gamma: f64,
    /// Milliseconds spent in solver steps so far (evaluation excluded).
    pub wall_ms: f64,
}

/// Runs `t_max` steps from `init` and calls `hook` at every scheduled
/// iteration. Hooks must draw from their own streams; the solver stream is
/// never shared with them.
pub fn run<R, F>(
    config: &SolverConfig,
    src: &SourceDistribution,
    nu: &DiscreteMeasure,
    g0: Option<Potential>,
    mut hook: F,
) -> Result<(SolverState, Vec<R>)>
where
    F: FnMut(&Checkpoint, &SolverState) -> Result<R>,
{
    let mut state = SolverState::init(config, nu, g0)?;
    let schedule = config.eval_every.iterations(config.t_max);
    let mut records = Vec::with_capacity(schedule.len());
    let mut elapsed = 0.0;
    for &target in &schedule {
        let started = Instant::now();
        while state.t < target {
            state.step(config, src, nu)?;
        }
        elapsed += started.elapsed().as_secs_f64() * 1e3;
        let cp = Checkpoint {
            t: state.t,
            eps: config.reported_eps(state.t),
            gamma: config.step_size(state.t),
            wall_ms: elapsed,
        };
        records.push(hook(&cp, &state)?);
    }
    while state.t < config.t_max {
        state.step(config, src, nu)?;
    }
    Ok((state, records))
}
