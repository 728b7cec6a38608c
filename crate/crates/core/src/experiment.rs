//! Configuration-driven experiments: instance construction, solver runs with
//! scheduled evaluation, and CSV/sidecar persistence.
//!
//! Configs are flat `key = value` files with dotted sections:
//!
//! ```text
//! instance.kind = example3
//! instance.m = 100
//! solver.batch_size = 16
//! run.repeats = 10
//! compare.fixed05.method = fixed
//! compare.fixed05.fixed_eps = 0.5
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::{self, GroundTruthInstance, EXAMPLE2_DEFAULT_MC_N};
use crate::measures::{DiscreteMeasure, SourceDistribution, SourceKind};
use crate::metrics::{self, fit_rate, mean_records, EvalRecord, Evaluator, RecordField};
use crate::projection::ProjectionSet;
use crate::rng::{streams, RngStream};
use crate::transport_map;
use crate::solvers::{self, Averaging, EvalSchedule, Method, SolverConfig};

/// Config parse or validation failure, tied to a line when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstanceChoice {
    Example1 { d: usize, m: usize },
    Example2 { d: usize, m: usize, seed: u64, mc_n: usize },
    Example3 { delta: f64, m: usize },
    /// `<stem>.csv` + `<stem>.json` written by [`GroundTruthInstance::save`].
    Saved { path: PathBuf },
    /// Target measure CSV with the uniform unit ball as source. No ground
    /// truth, so only `export-map` accepts it.
    Target { path: PathBuf },
}

impl InstanceChoice {
    pub fn build(&self) -> Result<GroundTruthInstance> {
        match self {
            InstanceChoice::Example1 { d, m } => ground_truth::example1(*d, *m),
            InstanceChoice::Example2 { d, m, seed, mc_n } => ground_truth::example2(*d, *m, *seed, *mc_n),
            InstanceChoice::Example3 { delta, m } => ground_truth::example3(*delta, *m),
            InstanceChoice::Saved { path } => GroundTruthInstance::load(path),
            InstanceChoice::Target { path } => Err(Error::Config {
                field: "instance.kind",
                reason: format!("`target` ({}) has no ground truth; use it for export-map only", path.display()),
            }),
        }
    }

    /// Source and target without requiring a ground truth.
    pub fn problem(&self) -> Result<(SourceDistribution, DiscreteMeasure)> {
        match self {
            InstanceChoice::Target { path } => {
                let nu = DiscreteMeasure::load_csv(path)?;
                let src = SourceDistribution::new(SourceKind::UniformBall {
                    center: vec![0.0; nu.dim()],
                    radius: 1.0,
                })?;
                Ok((src, nu))
            }
            other => {
                let gt = other.build()?;
                Ok((gt.src, gt.nu))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionKind {
    Cu,
    CInf,
    None,
}

/// Solver settings before they are bound to an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// `None` means `Diam(Supp μ)`.
    pub gamma1: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub eps_scale: f64,
    pub projection: ProjectionKind,
    pub batch_size: usize,
    pub scale_gamma_with_batch: bool,
    pub averaging: Averaging,
    pub t_max: usize,
    pub seed: u64,
    pub method: Method,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gamma1: None,
            a: solvers::DEFAULT_A,
            b: solvers::DEFAULT_B,
            eps_scale: solvers::DEFAULT_EPS_SCALE,
            projection: ProjectionKind::Cu,
            batch_size: 1,
            scale_gamma_with_batch: true,
            averaging: Averaging::Plain,
            t_max: 100_000,
            seed: 0,
            method: Method::Drag,
        }
    }
}

impl SolverSettings {
    /// Binds the settings to an instance; `seed` replaces the base seed.
    pub fn resolve(
        &self,
        src: &SourceDistribution,
        nu: &DiscreteMeasure,
        eval: &EvalSettings,
        seed: u64,
    ) -> Result<SolverConfig> {
        let r = src.radius_bound();
        let projection = match self.projection {
            ProjectionKind::Cu => ProjectionSet::lipschitz_for(nu, r)?,
            ProjectionKind::CInf => ProjectionSet::box_cinf(r)?,
            ProjectionKind::None => ProjectionSet::None,
        };
        let cfg = SolverConfig {
            gamma1: self.gamma1.unwrap_or(src.diameter()),
            a: self.a,
            b: self.b,
            eps_scale: self.eps_scale,
            projection,
            batch_size: self.batch_size,
            scale_gamma_with_batch: self.scale_gamma_with_batch,
            averaging: self.averaging,
            t_max: self.t_max,
            eval_every: eval.schedule(),
            seed,
            method: self.method.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_cost: usize,
    pub n_map: usize,
    pub p: f64,
    pub points: usize,
    pub start: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_cost: 1_000_000,
            n_map: 1_000_000,
            p: metrics::DEFAULT_MAP_P,
            points: 40,
            start: 10,
        }
    }
}

impl EvalSettings {
    pub fn schedule(&self) -> EvalSchedule {
        EvalSchedule::Geometric {
            points: self.points,
            start: self.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSettings {
    pub n: usize,
    pub bands: usize,
}

impl Default for ExportSettings {
    fn default() -> Self {
        Self { n: 10_000, bands: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceChoice,
    pub solver: SolverSettings,
    pub eval: EvalSettings,
    pub repeats: usize,
    pub output_dir: PathBuf,
    /// Named solver variants for `compare`, in file order.
    pub variants: Vec<(String, SolverSettings)>,
    pub export: ExportSettings,
}

pub const DEFAULT_REPEATS: usize = 10;

struct Entry {
    value: String,
    line: usize,
}

fn cfg_err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> std::result::Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| cfg_err(Some(e.line), format!("`{key}`: cannot parse `{}`", e.value))),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }
}

fn solver_from_table(
    table: &mut Table,
    prefix: &str,
    base: &SolverSettings,
) -> std::result::Result<SolverSettings, ConfigError> {
    let key = |k: &str| format!("{prefix}.{k}");
    let mut s = base.clone();
    let line = |t: &Table, k: &str| t.line_of(&key(k));

    let gamma_line = line(table, "gamma1");
    if let Some(e) = table.take(&key("gamma1")) {
        s.gamma1 = if e.value == "diameter" {
            None
        } else {
            Some(e.value.parse().map_err(|_| {
                cfg_err(gamma_line, format!("`{}`: cannot parse `{}`", key("gamma1"), e.value))
            })?)
        };
    }
    if let Some(v) = table.parse(&key("a"))? {
        s.a = v;
    }
    let b_line = line(table, "b");
    if let Some(v) = table.parse::<f64>(&key("b"))? {
        s.b = v;
    }
    if !(s.b > 0.5 && s.b < 1.0) {
        return Err(cfg_err(b_line, format!("`{}` = {} violates ½ < b < 1", key("b"), s.b)));
    }
    if let Some(v) = table.parse(&key("eps_scale"))? {
        s.eps_scale = v;
    }
    if let Some(v) = table.parse(&key("batch_size"))? {
        s.batch_size = v;
    }
    if let Some(v) = table.parse(&key("scale_gamma_with_batch"))? {
        s.scale_gamma_with_batch = v;
    }
    if let Some(v) = table.parse(&key("t_max"))? {
        s.t_max = v;
    }
    if let Some(v) = table.parse(&key("seed"))? {
        s.seed = v;
    }

    let proj_line = line(table, "projection");
    if let Some(e) = table.take(&key("projection")) {
        s.projection = match e.value.as_str() {
            "cu" => ProjectionKind::Cu,
            "cinf" => ProjectionKind::CInf,
            "none" => ProjectionKind::None,
            other => return Err(cfg_err(proj_line, format!("unknown projection `{other}` (cu|cinf|none)"))),
        };
    }

    let avg_line = line(table, "averaging");
    let omega_line = line(table, "omega");
    let avg_kind = table.take(&key("averaging")).map(|e| e.value);
    let omega: Option<f64> = table.parse(&key("omega"))?;
    s.averaging = match (avg_kind.as_deref(), s.averaging) {
        (Some("plain"), _) => Averaging::Plain,
        (Some("none"), _) => Averaging::None,
        (Some("weighted"), prev) => Averaging::Weighted {
            omega: omega.unwrap_or(match prev {
                Averaging::Weighted { omega } => omega,
                _ => solvers::DEFAULT_OMEGA,
            }),
        },
        (Some(other), _) => {
            return Err(cfg_err(avg_line, format!("unknown averaging `{other}` (plain|weighted|none)")))
        }
        (None, Averaging::Weighted { omega: prev }) => Averaging::Weighted {
            omega: omega.unwrap_or(prev),
        },
        (None, prev) => {
            if omega.is_some() {
                return Err(cfg_err(omega_line, "`omega` requires averaging = weighted"));
            }
            prev
        }
    };

    let method_line = line(table, "method");
    let method_kind = table.take(&key("method")).map(|e| e.value);
    let fixed_eps: Option<f64> = table.parse(&key("fixed_eps"))?;
    let beta1: Option<f64> = table.parse(&key("adam_beta1"))?;
    let beta2: Option<f64> = table.parse(&key("adam_beta2"))?;
    let lr: Option<f64> = table.parse(&key("adam_lr"))?;
    let kind = method_kind.unwrap_or_else(|| match s.method {
        Method::Drag => "drag".into(),
        Method::FixedEps { .. } => "fixed".into(),
        Method::NoReg => "noreg".into(),
        Method::Adam { .. } => "adam".into(),
    });
    s.method = match kind.as_str() {
        "drag" => Method::Drag,
        "noreg" => Method::NoReg,
        "fixed" => {
            let prev = match s.method {
                Method::FixedEps { eps } => Some(eps),
                _ => None,
            };
            Method::FixedEps {
                eps: fixed_eps
                    .or(prev)
                    .ok_or_else(|| cfg_err(method_line, "method = fixed requires `fixed_eps`"))?,
            }
        }
        "adam" => {
            let (pb1, pb2, plr) = match s.method {
                Method::Adam { beta1, beta2, lr } => (beta1, beta2, lr),
                _ => (solvers::ADAM_BETA1, solvers::ADAM_BETA2, solvers::ADAM_LR),
            };
            Method::Adam {
                beta1: beta1.unwrap_or(pb1),
                beta2: beta2.unwrap_or(pb2),
                lr: lr.unwrap_or(plr),
            }
        }
        other => {
            return Err(cfg_err(method_line, format!("unknown method `{other}` (drag|fixed|noreg|adam)")))
        }
    };
    Ok(s)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut variant_order: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(Some(line), format!("expected `key = value`, got `{content}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(cfg_err(Some(line), "empty key"));
            }
            if let Some(rest) = k.strip_prefix("compare.") {
                let name = rest.split('.').next().unwrap_or("").to_string();
                if !variant_order.contains(&name) {
                    variant_order.push(name);
                }
            }
            if let Some(prev) = entries.insert(k.clone(), Entry { value: v, line }) {
                return Err(cfg_err(Some(line), format!("duplicate key `{k}` (first set on line {})", prev.line)));
            }
        }
        let mut t = Table { entries };

        let kind_line = t.line_of("instance.kind");
        let kind = t
            .take("instance.kind")
            .ok_or_else(|| cfg_err(None, "missing `instance.kind`"))?;
        let need = |k: &str| cfg_err(kind_line, format!("instance kind `{}` requires `{k}`", kind.value));
        let instance = match kind.value.as_str() {
            "example1" => InstanceChoice::Example1 {
                d: t.parse("instance.d")?.unwrap_or(10),
                m: t.parse("instance.m")?.ok_or_else(|| need("instance.m"))?,
            },
            "example2" => InstanceChoice::Example2 {
                d: t.parse("instance.d")?.unwrap_or(10),
                m: t.parse("instance.m")?.ok_or_else(|| need("instance.m"))?,
                seed: t.parse("instance.seed")?.unwrap_or(0),
                mc_n: t.parse("instance.mc_n")?.unwrap_or(EXAMPLE2_DEFAULT_MC_N),
            },
            "example3" => InstanceChoice::Example3 {
                delta: t.parse("instance.delta")?.unwrap_or(0.5),
                m: t.parse("instance.m")?.ok_or_else(|| need("instance.m"))?,
            },
            "saved" => InstanceChoice::Saved {
                path: t
                    .take("instance.path")
                    .map(|e| PathBuf::from(e.value))
                    .ok_or_else(|| need("instance.path"))?,
            },
            "target" => InstanceChoice::Target {
                path: t
                    .take("instance.path")
                    .map(|e| PathBuf::from(e.value))
                    .ok_or_else(|| need("instance.path"))?,
            },
            other => {
                return Err(cfg_err(
                    kind_line,
                    format!("unknown instance kind `{other}` (example1|example2|example3|saved|target)"),
                ))
            }
        };

        let solver = solver_from_table(&mut t, "solver", &SolverSettings::default())?;
        let mut variants = Vec::new();
        for name in variant_order {
            if name.is_empty() {
                return Err(cfg_err(None, "empty compare variant name"));
            }
            let prefix = format!("compare.{name}");
            let v = solver_from_table(&mut t, &prefix, &solver)?;
            variants.push((name, v));
        }

        let mut eval = EvalSettings::default();
        if let Some(v) = t.parse("eval.n_cost")? {
            eval.n_cost = v;
        }
        if let Some(v) = t.parse("eval.n_map")? {
            eval.n_map = v;
        }
        let p_line = t.line_of("eval.p");
        if let Some(v) = t.parse::<f64>("eval.p")? {
            if !(v >= 1.0) {
                return Err(cfg_err(p_line, format!("`eval.p` must be >= 1, got {v}")));
            }
            eval.p = v;
        }
        if let Some(v) = t.parse("eval.points")? {
            eval.points = v;
        }
        if let Some(v) = t.parse("eval.start")? {
            eval.start = v;
        }

        let repeats_line = t.line_of("run.repeats");
        let repeats = t.parse("run.repeats")?.unwrap_or(DEFAULT_REPEATS);
        if repeats == 0 {
            return Err(cfg_err(repeats_line, "`run.repeats` must be >= 1"));
        }
        let output_dir = t
            .take("run.output_dir")
            .map(|e| PathBuf::from(e.value))
            .unwrap_or_else(|| PathBuf::from("out"));

        let mut export = ExportSettings::default();
        if let Some(v) = t.parse("export.n")? {
            export.n = v;
        }
        if let Some(v) = t.parse("export.bands")? {
            export.bands = v;
        }

        if let Some((k, e)) = t.entries.iter().min_by_key(|(_, e)| e.line) {
            return Err(cfg_err(Some(e.line), format!("unknown key `{k}`")));
        }

        let cfg = Self {
            instance,
            solver,
            eval,
            repeats,
            output_dir,
            variants,
            export,
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| cfg_err(None, format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Writes the fully resolved config back in the flat format.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        match &self.instance {
            InstanceChoice::Example1 { d, m } => {
                put("instance.kind", "example1".into());
                put("instance.d", d.to_string());
                put("instance.m", m.to_string());
            }
            InstanceChoice::Example2 { d, m, seed, mc_n } => {
                put("instance.kind", "example2".into());
                put("instance.d", d.to_string());
                put("instance.m", m.to_string());
                put("instance.seed", seed.to_string());
                put("instance.mc_n", mc_n.to_string());
            }
            InstanceChoice::Example3 { delta, m } => {
                put("instance.kind", "example3".into());
                put("instance.delta", delta.to_string());
                put("instance.m", m.to_string());
            }
            InstanceChoice::Saved { path } => {
                put("instance.kind", "saved".into());
                put("instance.path", path.display().to_string());
            }
            InstanceChoice::Target { path } => {
                put("instance.kind", "target".into());
                put("instance.path", path.display().to_string());
            }
        }
        let solver_lines = |prefix: &str, s: &SolverSettings, put: &mut dyn FnMut(&str, String)| {
            let k = |n: &str| format!("{prefix}.{n}");
            match &s.method {
                Method::Drag => put(&k("method"), "drag".into()),
                Method::NoReg => put(&k("method"), "noreg".into()),
                Method::FixedEps { eps } => {
                    put(&k("method"), "fixed".into());
                    put(&k("fixed_eps"), eps.to_string());
                }
                Method::Adam { beta1, beta2, lr } => {
                    put(&k("method"), "adam".into());
                    put(&k("adam_beta1"), beta1.to_string());
                    put(&k("adam_beta2"), beta2.to_string());
                    put(&k("adam_lr"), lr.to_string());
                }
            }
            put(
                &k("gamma1"),
                s.gamma1.map(|g| g.to_string()).unwrap_or_else(|| "diameter".into()),
            );
            put(&k("a"), s.a.to_string());
            put(&k("b"), s.b.to_string());
            put(&k("eps_scale"), s.eps_scale.to_string());
            put(
                &k("projection"),
                match s.projection {
                    ProjectionKind::Cu => "cu",
                    ProjectionKind::CInf => "cinf",
                    ProjectionKind::None => "none",
                }
                .into(),
            );
            put(&k("batch_size"), s.batch_size.to_string());
            put(&k("scale_gamma_with_batch"), s.scale_gamma_with_batch.to_string());
            match s.averaging {
                Averaging::Plain => put(&k("averaging"), "plain".into()),
                Averaging::None => put(&k("averaging"), "none".into()),
                Averaging::Weighted { omega } => {
                    put(&k("averaging"), "weighted".into());
                    put(&k("omega"), omega.to_string());
                }
            }
            put(&k("t_max"), s.t_max.to_string());
            put(&k("seed"), s.seed.to_string());
        };
        let mut lines: Vec<(String, String)> = Vec::new();
        {
            let mut push = |k: &str, v: String| lines.push((k.to_string(), v));
            solver_lines("solver", &self.solver, &mut push);
            for (name, v) in &self.variants {
                solver_lines(&format!("compare.{name}"), v, &mut push);
            }
        }
        for (k, v) in lines {
            put(&k, v);
        }
        put("eval.n_cost", self.eval.n_cost.to_string());
        put("eval.n_map", self.eval.n_map.to_string());
        put("eval.p", self.eval.p.to_string());
        put("eval.points", self.eval.points.to_string());
        put("eval.start", self.eval.start.to_string());
        put("run.repeats", self.repeats.to_string());
        put("run.output_dir", self.output_dir.display().to_string());
        put("export.n", self.export.n.to_string());
        put("export.bands", self.export.bands.to_string());
        out
    }

    /// Seeds of the repeats: `solver.seed + r`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.solver.seed.wrapping_add(r)).collect()
    }
}

/// Runs one seed and evaluates on the shared schedule.
///
/// The evaluation pool is drawn from the `EVAL` stream of the solver seed, so
/// variants run with the same seed share both their evaluation points and the
/// first-step samples' stream layout.
pub fn run_repeat(gt: &GroundTruthInstance, cfg: &SolverConfig, eval: &EvalSettings) -> Result<Vec<EvalRecord>> {
    let mut eval_rng = RngStream::with_stream(cfg.seed, streams::EVAL);
    let evaluator = Evaluator::new(gt, eval.n_cost, eval.n_map, eval.p, &mut eval_rng)?;
    let (_, records) = solvers::run(cfg, &gt.src, &gt.nu, None, |cp, state| {
        let (pot, cost, map) = evaluator.evaluate(state.output())?;
        Ok(EvalRecord {
            t: cp.t,
            eps: cp.eps,
            gamma: cp.gamma,
            pot_err_sq: pot,
            cost_gap: cost,
            map_err: map,
            wall_ms: cp.wall_ms,
        })
    })?;
    Ok(records)
}

/// Runs every seed of `settings` (in parallel) and returns `(seed, records)`.
pub fn run_seeds(
    gt: &GroundTruthInstance,
    settings: &SolverSettings,
    eval: &EvalSettings,
    seeds: &[u64],
) -> Result<Vec<(u64, Vec<EvalRecord>)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = settings.resolve(&gt.src, &gt.nu, eval, seed)?;
            Ok((seed, run_repeat(gt, &cfg, eval)?))
        })
        .collect()
}

pub fn write_run_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    metrics::write_records(std::io::BufWriter::new(file), records)
}

pub fn read_run_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path)?;
    metrics::read_records(std::io::BufReader::new(file))
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ExperimentConfig,
    pub config_text: String,
    pub seeds: Vec<u64>,
    pub git_describe: String,
}

pub fn write_meta(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let meta = RunMeta {
        config: cfg.clone(),
        config_text: cfg.to_flat(),
        seeds: cfg.seeds(),
        git_describe: git_describe(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Domain(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), text)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<RunMeta> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Domain(e.to_string()))
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(probe)?;
    Ok(())
}

/// Executes every repeat and writes `run_<seed>.csv` files plus `meta.json`.
pub fn execute_run(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<(u64, Vec<EvalRecord>)>> {
    ensure_writable(dir)?;
    let gt = cfg.instance.build()?;
    let runs = run_seeds(&gt, &cfg.solver, &cfg.eval, &cfg.seeds())?;
    for (seed, recs) in &runs {
        write_run_csv(&dir.join(format!("run_{seed}.csv")), recs)?;
    }
    write_meta(dir, cfg)?;
    Ok(runs)
}

/// Final seed-mean errors and fitted slopes of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub name: String,
    pub final_pot_err_sq: f64,
    pub final_cost_gap: f64,
    pub final_map_err: f64,
    pub slope_pot: Option<f64>,
    pub slope_cost: Option<f64>,
    pub slope_map: Option<f64>,
}

pub fn summarize(name: &str, runs: &[Vec<EvalRecord>]) -> Result<VariantSummary> {
    let mean = mean_records(runs)?;
    let last = mean.last().copied().ok_or_else(|| Error::Domain("no evaluations".into()))?;
    let slope = |f| fit_rate(&mean, f, metrics::DEFAULT_FIT_WINDOW).ok();
    Ok(VariantSummary {
        name: name.to_string(),
        final_pot_err_sq: last.pot_err_sq,
        final_cost_gap: last.cost_gap,
        final_map_err: last.map_err,
        slope_pot: slope(RecordField::PotErrSq),
        slope_cost: slope(RecordField::CostGap),
        slope_map: slope(RecordField::MapErr),
    })
}

/// Runs each variant (or the base solver when none are listed) into
/// `<dir>/<variant>/run_<seed>.csv`.
pub fn execute_compare(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<VariantSummary>> {
    ensure_writable(dir)?;
    let gt = cfg.instance.build()?;
    let variants: Vec<(String, SolverSettings)> = if cfg.variants.is_empty() {
        vec![("base".into(), cfg.solver.clone())]
    } else {
        cfg.variants.clone()
    };
    let seeds = cfg.seeds();
    let mut out = Vec::with_capacity(variants.len());
    for (name, settings) in &variants {
        let vdir = dir.join(name);
        std::fs::create_dir_all(&vdir)?;
        let runs = run_seeds(&gt, settings, &cfg.eval, &seeds)?;
        for (seed, recs) in &runs {
            write_run_csv(&vdir.join(format!("run_{seed}.csv")), recs)?;
        }
        let recs: Vec<Vec<EvalRecord>> = runs.into_iter().map(|(_, r)| r).collect();
        out.push(summarize(name, &recs)?);
    }
    write_meta(dir, cfg)?;
    Ok(out)
}

/// Solves with the base solver and writes `<dir>/map_export.csv`: points of
/// the unit ball drawn from the `EXPORT` stream, labelled by quantile band
/// and the atom they are transported to.
pub fn execute_export(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    ensure_writable(dir)?;
    let (src, nu) = cfg.instance.problem()?;
    let eval = EvalSettings {
        points: 0,
        ..cfg.eval.clone()
    };
    let sc = cfg.solver.resolve(&src, &nu, &eval, cfg.solver.seed)?;
    let (state, _) = solvers::run(&sc, &src, &nu, None, |_, _| Ok(()))?;
    let ball = SourceDistribution::new(SourceKind::UniformBall {
        center: vec![0.0; nu.dim()],
        radius: 1.0,
    })?;
    let mut rng = RngStream::with_stream(cfg.solver.seed, streams::EXPORT);
    let xs = ball.sample_batch(cfg.export.n, &mut rng)?;
    let labels = transport_map::mk_quantile_labels(state.output(), &xs, &nu, cfg.export.bands)?;
    let path = dir.join("map_export.csv");
    let file = std::fs::File::create(&path)?;
    transport_map::write_map_export(std::io::BufWriter::new(file), &xs, &labels, &nu)?;
    write_meta(dir, cfg)?;
    Ok(path)
}
