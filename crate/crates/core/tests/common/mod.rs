//! Seeded invariant checks shared by the property tests and the acceptance
//! harness. Each check returns `Err(description)` on the first violation.
#![allow(dead_code)]

use sdot::experiment::{run_seeds, EvalSettings, SolverSettings};
use sdot::ground_truth::{self, GroundTruthInstance};
use sdot::metrics::{write_records, EvalRecord};
use sdot::semidual::{
    ctransform_hard, ctransform_soft, hard_subgradient, minibatch_gradient, sample_objective,
    softmax_weights, stochastic_gradient,
};
use sdot::solvers::{self, weighted_average_update};
use sdot::transport_map::{cell_counts, CellLocator};
use sdot::{
    Averaging, DiscreteMeasure, Method, Potential, ProjectionSet, RngStream, SolverConfig, SolverState,
    SourceDistribution,
};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

/// Random target with `m` distinct atoms in `[-1, 1]^d` and random weights.
pub fn random_measure(rng: &mut RngStream, m: usize, d: usize) -> DiscreteMeasure {
    let points: Vec<f64> = (0..m * d).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(points, d, raw.iter().map(|w| w / total).collect()).unwrap()
}

pub fn random_vec(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()
}

/// Naive first-index argmin of `½‖x − y_j‖² − g_j`.
pub fn brute_force_cell(g: &[f64], x: &[f64], nu: &DiscreteMeasure) -> usize {
    let mut best = f64::INFINITY;
    let mut idx = 0;
    for j in 0..nu.len() {
        let c: f64 = x.iter().zip(nu.atom(j)).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
        let v = c - g[j];
        if v < best {
            best = v;
            idx = j;
        }
    }
    idx
}

fn log_eps(rng: &mut RngStream) -> f64 {
    10f64.powf(-3.0 + 4.0 * rng.uniform())
}

pub fn gradient_identities(seed: u64, cases: usize) -> Check {
    let mut rng = RngStream::new(seed);
    for case in 0..cases {
        let m = 2 + (rng.next_u64() % 20) as usize;
        let d = 1 + (rng.next_u64() % 4) as usize;
        let nu = random_measure(&mut rng, m, d);
        let g = Potential::from(random_vec(&mut rng, m, 1.0));
        let x = random_vec(&mut rng, d, 1.5);
        let eps = log_eps(&mut rng);
        let chi = softmax_weights(&g, &x, &nu, eps).unwrap();
        let s: f64 = chi.iter().sum();
        ensure!((s - 1.0).abs() < 1e-10, "case {case}: Σχ = {s}");
        ensure!(chi.iter().all(|c| *c >= 0.0), "case {case}: negative χ");
        let grad = stochastic_gradient(&g, &x, &nu, eps).unwrap();
        let z: f64 = grad.values.iter().sum();
        ensure!(z.abs() < 1e-10, "case {case}: Σ∇ = {z}");
        let hard = hard_subgradient(&g, &x, &nu).unwrap();
        let z: f64 = hard.values.iter().sum();
        ensure!(z.abs() < 1e-10, "case {case}: Σ hard ∇ = {z}");
        let xs = random_vec(&mut rng, 8 * d, 1.5);
        let mb = minibatch_gradient(&g, &xs, &nu, eps).unwrap();
        let z: f64 = mb.values.iter().sum();
        ensure!(z.abs() < 1e-10, "case {case}: Σ batch ∇ = {z}");
    }
    Ok(())
}

pub fn shift_invariance(seed: u64, cases: usize) -> Check {
    let mut rng = RngStream::new(seed);
    for case in 0..cases {
        let m = 2 + (rng.next_u64() % 20) as usize;
        let d = 1 + (rng.next_u64() % 4) as usize;
        let nu = random_measure(&mut rng, m, d);
        let g = Potential::from(random_vec(&mut rng, m, 1.0));
        let c = 4.0 * rng.uniform() - 2.0;
        let gs = g.shifted(c);
        let x = random_vec(&mut rng, d, 1.5);
        let (_, j0) = ctransform_hard(&g, &x, &nu).unwrap();
        let (_, j1) = ctransform_hard(&gs, &x, &nu).unwrap();
        ensure!(j0 == j1, "case {case}: argmin moved {j0} -> {j1} under shift {c}");
        let locate = |p: &Potential| CellLocator::new(p, &nu).unwrap().locate_all(&x)[0];
        ensure!(locate(&g) == locate(&gs), "case {case}: located cell moved under shift");
        let eps = log_eps(&mut rng);
        let a = softmax_weights(&g, &x, &nu, eps).unwrap();
        let b = softmax_weights(&gs, &x, &nu, eps).unwrap();
        let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure!(worst <= 1e-12, "case {case}: χ moved by {worst:e} under shift");
    }
    Ok(())
}

/// `hard ≤ soft ≤ hard + ε ln(1/w_min)` and 1-Lipschitz in `‖·‖∞`.
pub fn transform_sandwich(seed: u64, cases: usize) -> Check {
    let mut rng = RngStream::new(seed);
    for case in 0..cases {
        let m = 2 + (rng.next_u64() % 20) as usize;
        let d = 1 + (rng.next_u64() % 4) as usize;
        let nu = random_measure(&mut rng, m, d);
        let g = Potential::from(random_vec(&mut rng, m, 1.0));
        let f = Potential::from(random_vec(&mut rng, m, 1.0));
        let x = random_vec(&mut rng, d, 1.5);
        let eps = log_eps(&mut rng);
        let hard = ctransform_hard(&g, &x, &nu).unwrap().0;
        let soft = ctransform_soft(&g, &x, &nu, eps).unwrap();
        let slack = 1e-12 * (1.0 + hard.abs());
        let upper = hard + eps * (1.0 / nu.min_weight()).ln();
        ensure!(
            hard - slack <= soft && soft <= upper + slack,
            "case {case}: sandwich {hard} <= {soft} <= {upper} fails (eps {eps})"
        );
        let sup = g.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let hf = ctransform_hard(&f, &x, &nu).unwrap().0;
        ensure!((hard - hf).abs() <= sup + 1e-12, "case {case}: hard transform expands");
        let sf = ctransform_soft(&f, &x, &nu, eps).unwrap();
        ensure!((soft - sf).abs() <= sup + 1e-12, "case {case}: soft transform expands");
    }
    Ok(())
}

fn random_projection(rng: &mut RngStream, m: usize) -> ProjectionSet {
    match rng.next_u64() % 3 {
        0 => ProjectionSet::box_cinf(0.1 + 2.0 * rng.uniform()).unwrap(),
        1 => {
            let nu = random_measure(rng, m, 2);
            ProjectionSet::lipschitz_for(&nu, 0.5 + rng.uniform()).unwrap()
        }
        _ => ProjectionSet::None,
    }
}

pub fn projection_properties(seed: u64, cases: usize) -> Check {
    let mut rng = RngStream::new(seed);
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    for case in 0..cases {
        let m = 1 + (rng.next_u64() % 20) as usize;
        let set = random_projection(&mut rng, m);
        let a = random_vec(&mut rng, m, 10.0);
        let b = random_vec(&mut rng, m, 10.0);
        let pa = set.project(&Potential::from(a.clone())).unwrap();
        let pb = set.project(&Potential::from(b.clone())).unwrap();
        ensure!(set.contains(pa.values()), "case {case}: projection left the set");
        let ppa = set.project(&pa).unwrap();
        ensure!(ppa == pa, "case {case}: projection not idempotent");
        ensure!(
            norm(pa.values(), pb.values()) <= norm(&a, &b) + 1e-12,
            "case {case}: projection expands distances"
        );
    }
    Ok(())
}

/// Vectorized cell location against the naive argmin on `instances` random
/// (ν, g, x) triples, half of them one-dimensional.
pub fn assignment_brute_force(seed: u64, instances: usize) -> Check {
    let mut rng = RngStream::new(seed);
    for case in 0..instances {
        let m = 1 + (rng.next_u64() % 30) as usize;
        let d = if case % 2 == 0 { 1 } else { 2 + (rng.next_u64() % 3) as usize };
        let nu = random_measure(&mut rng, m, d);
        let g = Potential::from(random_vec(&mut rng, m, 0.5));
        let xs = random_vec(&mut rng, 4 * d, 2.0);
        let loc = CellLocator::new(&g, &nu).unwrap();
        let got = loc.locate_all(&xs);
        let transformed = loc.transform_all(&xs);
        for (i, x) in xs.chunks_exact(d).enumerate() {
            let want = brute_force_cell(g.values(), x, &nu);
            ensure!(got[i] == want, "instance {case}: located {} vs brute force {want}", got[i]);
            let (hv, hj) = ctransform_hard(&g, x, &nu).unwrap();
            ensure!(hj == want, "instance {case}: ctransform argmin {hj} vs {want}");
            ensure!(transformed[i] == (hv, hj), "instance {case}: transform_all disagrees");
        }
    }
    Ok(())
}

/// Central finite differences of the sample objective against the sample
/// gradient on the same points.
pub fn fd_gradient(seed: u64, n: usize) -> Check {
    let mut rng = RngStream::new(seed);
    let h = 1e-6;
    for (m, d, eps) in [(5, 2, 0.1), (8, 1, 0.05), (4, 3, 0.5)] {
        let nu = random_measure(&mut rng, m, d);
        let src = SourceDistribution::new(sdot::SourceKind::UniformBox {
            lo: vec![-1.0; d],
            hi: vec![1.0; d],
        })
        .unwrap();
        let xs = src.sample_batch(n, &mut rng).unwrap();
        let g = Potential::from(random_vec(&mut rng, m, 0.3));
        let grad = minibatch_gradient(&g, &xs, &nu, eps).unwrap();
        for j in 0..m {
            let mut up = g.clone();
            up.values_mut()[j] += h;
            let mut dn = g.clone();
            dn.values_mut()[j] -= h;
            let fd = (sample_objective(&up, &xs, &nu, eps).unwrap().value
                - sample_objective(&dn, &xs, &nu, eps).unwrap().value)
                / (2.0 * h);
            ensure!(
                (fd - grad.values[j]).abs() <= 1e-5,
                "m={m} d={d} eps={eps} j={j}: FD {fd} vs gradient {}",
                grad.values[j]
            );
        }
    }
    Ok(())
}

fn small_config(averaging: Averaging, t_max: usize, seed: u64) -> (SolverConfig, SourceDistribution, DiscreteMeasure) {
    let gt = ground_truth::example3(0.5, 6).unwrap();
    let mut cfg = SolverConfig::defaults_for(&gt.src, &gt.nu).unwrap();
    cfg.averaging = averaging;
    cfg.t_max = t_max;
    cfg.seed = seed;
    cfg.batch_size = 2;
    (cfg, gt.src, gt.nu)
}

/// Runs `t_max` steps and returns the recorded iterates `g_0..g_t` and the final state.
pub fn iterates(cfg: &SolverConfig, src: &SourceDistribution, nu: &DiscreteMeasure) -> (Vec<Vec<f64>>, SolverState) {
    let mut st = SolverState::init(cfg, nu, None).unwrap();
    let mut out = vec![st.g.values().to_vec()];
    while st.t < cfg.t_max {
        st.step(cfg, src, nu).unwrap();
        out.push(st.g.values().to_vec());
    }
    (out, st)
}

/// `ḡ_100` equals the arithmetic mean of the stored `g_0..g_100`.
pub fn plain_averaging(seed: u64) -> Check {
    let (cfg, src, nu) = small_config(Averaging::Plain, 100, seed);
    let (its, st) = iterates(&cfg, &src, &nu);
    ensure!(its.len() == 101, "expected 101 iterates, got {}", its.len());
    for j in 0..nu.len() {
        let mean = its.iter().map(|g| g[j]).sum::<f64>() / its.len() as f64;
        let got = st.output().values()[j];
        ensure!((mean - got).abs() <= 1e-9, "coordinate {j}: average {got} vs mean {mean}");
    }
    Ok(())
}

/// Online weighted average against `Σ ln(k+1)^ω g_k / Σ ln(k+1)^ω`.
pub fn weighted_averaging(seed: u64, omega: f64, t_max: usize) -> Check {
    let (cfg, src, nu) = small_config(Averaging::Weighted { omega }, t_max, seed);
    let (its, st) = iterates(&cfg, &src, &nu);
    let weights: Vec<f64> = (0..its.len()).map(|k| ((k + 1) as f64).ln().powf(omega)).collect();
    let total: f64 = weights.iter().sum();
    for j in 0..nu.len() {
        let want = its.iter().zip(&weights).map(|(g, w)| w * g[j]).sum::<f64>() / total;
        let got = st.output().values()[j];
        ensure!((want - got).abs() <= 1e-9, "coordinate {j}: recursion {got} vs explicit {want}");
    }
    let mut avg = its[0].clone();
    let mut acc = 0f64.powf(omega);
    for (k, g) in its.iter().enumerate().skip(1) {
        acc = weighted_average_update(&mut avg, g, k, omega, acc);
    }
    ensure!(
        avg.iter().zip(st.output().values()).all(|(a, b)| (a - b).abs() <= 1e-12),
        "free-standing update disagrees with the solver"
    );
    Ok(())
}

/// Cell counts at `g*` against the weights, `sigma` binomial standard
/// deviations. `weight_mc_n`, when set, adds the variance of weights that were
/// themselves estimated by Monte Carlo.
pub fn optimality_certificate(gt: &GroundTruthInstance, n: usize, sigma: f64, weight_mc_n: Option<usize>, seed: u64) -> Check {
    let mut rng = RngStream::with_stream(seed, 11);
    let counts = cell_counts(&gt.g_star, &gt.src, &gt.nu, n, &mut rng).map_err(|e| e.to_string())?;
    for (j, (&c, &w)) in counts.iter().zip(gt.nu.weights()).enumerate() {
        let mut var = w * (1.0 - w) / n as f64;
        if let Some(k) = weight_mc_n {
            var += w * (1.0 - w) / k as f64;
        }
        let dev = (c as f64 / n as f64 - w).abs();
        ensure!(
            dev <= sigma * var.sqrt() + 1e-12,
            "{:?} cell {j}: mass {} vs weight {w} ({:.2}σ)",
            gt.label,
            c as f64 / n as f64,
            dev / var.sqrt()
        );
    }
    Ok(())
}

pub fn certificates_all_examples() -> Check {
    optimality_certificate(&ground_truth::example1(10, 50).unwrap(), 1_000_000, 4.0, None, 1)?;
    let mc_n = 1_000_000;
    let ex2 = ground_truth::example2(10, 30, 3, mc_n).map_err(|e| e.to_string())?;
    optimality_certificate(&ex2, 1_000_000, 4.0, Some(mc_n), 2)?;
    optimality_certificate(&ground_truth::example3(0.5, 100).unwrap(), 1_000_000, 4.0, None, 3)?;
    Ok(())
}

/// CSV bytes with the wall-clock column removed.
pub fn csv_without_wall(records: &[EvalRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map(|(a, _)| a).unwrap_or(l).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn run_determinism(seed: u64) -> Check {
    let gt = ground_truth::example3(0.5, 10).unwrap();
    let settings = SolverSettings {
        batch_size: 4,
        t_max: 2_000,
        ..SolverSettings::default()
    };
    let eval = EvalSettings {
        n_cost: 20_000,
        n_map: 20_000,
        ..EvalSettings::default()
    };
    let seeds = [seed, seed + 1];
    let a = run_seeds(&gt, &settings, &eval, &seeds).map_err(|e| e.to_string())?;
    let b = run_seeds(&gt, &settings, &eval, &seeds).map_err(|e| e.to_string())?;
    for ((sa, ra), (sb, rb)) in a.iter().zip(&b) {
        ensure!(sa == sb, "seed order differs");
        ensure!(csv_without_wall(ra) == csv_without_wall(rb), "seed {sa}: runs differ");
    }
    ensure!(
        csv_without_wall(&a[0].1) != csv_without_wall(&a[1].1),
        "different seeds produced identical runs"
    );
    Ok(())
}

/// FixedEps(ε) matches Drag with `a = 0` and `eps_scale = ε` step for step.
pub fn fixed_equals_drag_a0(seed: u64) -> Check {
    let (mut cfg, src, nu) = small_config(Averaging::Plain, 300, seed);
    cfg.a = 0.0;
    cfg.eps_scale = 0.2;
    let (_, drag) = iterates(&cfg, &src, &nu);
    cfg.a = solvers::DEFAULT_A;
    cfg.method = Method::FixedEps { eps: 0.2 };
    let (_, fixed) = iterates(&cfg, &src, &nu);
    ensure!(drag.output() == fixed.output(), "averages differ");
    ensure!(drag.g == fixed.g, "iterates differ");
    Ok(())
}
