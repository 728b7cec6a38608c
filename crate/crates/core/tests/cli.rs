use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdot::experiment::{read_meta, read_run_csv, ExperimentConfig};
use sdot::metrics::{write_records, EvalRecord, EVAL_CSV_HEADER};

fn sdot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdot"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const EX3: &str = "\
instance.kind = example3
instance.m = 10
solver.batch_size = 2
solver.t_max = 3000
eval.n_cost = 20000
eval.n_map = 20000
eval.points = 15
run.repeats = 2
";

fn strip_wall(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_is_reproducible_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), EX3).unwrap();
    ok(&sdot(&["run", "--config", "c.cfg", "--out", "a"], dir.path()));
    ok(&sdot(&["run", "--config", "c.cfg", "--out", "b"], dir.path()));
    for seed in [0, 1] {
        let name = format!("run_{seed}.csv");
        let a = fs::read_to_string(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read_to_string(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a.lines().next().unwrap(), EVAL_CSV_HEADER);
        assert_eq!(strip_wall(&a), strip_wall(&b));
    }
    let seeded = sdot(&["run", "--config", "c.cfg", "--out", "c", "--seed", "40"], dir.path());
    ok(&seeded);
    assert!(dir.path().join("c/run_40.csv").exists());
    assert!(dir.path().join("c/run_41.csv").exists());
}

#[test]
fn invalid_b_is_rejected_with_constraint() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), format!("{EX3}solver.b = 1.5\n")).unwrap();
    let out = sdot(&["run", "--config", "c.cfg", "--out", "o"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("½ < b < 1"), "{err}");
    assert!(err.contains("line 9"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), format!("{EX3}\n# comment\nsolver.gamma = 2\n")).unwrap();
    let out = sdot(&["run", "--config", "c.cfg"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 11") && err.contains("solver.gamma"), "{err}");
}

#[test]
fn repeats_share_the_evaluation_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "\
instance.kind = example3
instance.m = 10
solver.t_max = 100000
eval.n_cost = 2000
eval.n_map = 2000
run.repeats = 3
";
    fs::write(dir.path().join("c.cfg"), cfg).unwrap();
    ok(&sdot(&["run", "--config", "c.cfg", "--out", "o"], dir.path()));
    let runs: Vec<Vec<EvalRecord>> = (0..3)
        .map(|s| read_run_csv(&dir.path().join(format!("o/run_{s}.csv"))).unwrap())
        .collect();
    let ts: Vec<Vec<usize>> = runs.iter().map(|r| r.iter().map(|x| x.t).collect()).collect();
    assert_eq!(ts[0].len(), 40);
    assert_eq!(*ts[0].last().unwrap(), 100_000);
    assert_eq!(ts[0], ts[1]);
    assert_eq!(ts[1], ts[2]);
}

#[test]
fn meta_sidecar_round_trips_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{EX3}solver.averaging = weighted\nsolver.omega = 2\ncompare.f.method = fixed\ncompare.f.fixed_eps = 0.05\n");
    fs::write(dir.path().join("c.cfg"), &text).unwrap();
    ok(&sdot(&["run", "--config", "c.cfg", "--out", "o"], dir.path()));
    let meta = read_meta(&dir.path().join("o")).unwrap();
    let mut original = ExperimentConfig::parse(&text).unwrap();
    original.output_dir = "o".into();
    assert_eq!(meta.config, original);
    assert_eq!(ExperimentConfig::parse(&meta.config_text).unwrap(), original);
    assert_eq!(meta.seeds, vec![0, 1]);
    assert!(!meta.git_describe.is_empty());
}

#[test]
fn compare_writes_one_directory_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "\
instance.kind = example1
instance.d = 3
instance.m = 20
solver.t_max = 2000
eval.n_cost = 5000
eval.n_map = 5000
eval.points = 12
run.repeats = 2
compare.drag.method = drag
compare.fixed05.method = fixed
compare.fixed05.fixed_eps = 0.5
compare.fixed005.method = fixed
compare.fixed005.fixed_eps = 0.05
compare.noreg.method = noreg
";
    fs::write(dir.path().join("c.cfg"), cfg).unwrap();
    let stdout = ok(&sdot(&["compare", "--config", "c.cfg", "--out", "cmp"], dir.path()));
    let names = ["drag", "fixed05", "fixed005", "noreg"];
    let mut grids = Vec::new();
    for n in names {
        assert!(stdout.contains(n), "{stdout}");
        for s in 0..2 {
            let recs = read_run_csv(&dir.path().join(format!("cmp/{n}/run_{s}.csv"))).unwrap();
            grids.push(recs.iter().map(|r| r.t).collect::<Vec<_>>());
        }
    }
    assert!(grids.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(stdout.lines().count(), 5);
}

fn synthetic(path: &Path, f: impl Fn(f64) -> f64) {
    let recs: Vec<EvalRecord> = (0..30)
        .map(|i| {
            let t = (10.0 * 1.3f64.powi(i)).round() as usize;
            EvalRecord {
                t,
                eps: 0.1,
                gamma: 1.0,
                pot_err_sq: f(t as f64),
                cost_gap: f(t as f64),
                map_err: f(t as f64),
                wall_ms: 0.0,
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).unwrap();
    fs::write(path, buf).unwrap();
}

fn slope_line(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find(|l| l.starts_with(key))
        .and_then(|l| l.rsplit('\t').next())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn slopes_of_synthetic_power_laws() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(&dir.path().join("a.csv"), |t| 1.0 / t);
    synthetic(&dir.path().join("b.csv"), |t| 3.0 / t.sqrt());
    let out = ok(&sdot(&["slopes", "a.csv"], dir.path()));
    assert!((slope_line(&out, "a.csv") + 1.0).abs() < 1e-6);
    let out = ok(&sdot(&["slopes", "a.csv", "b.csv", "--field", "map_err", "--window", "0.5"], dir.path()));
    let (a, b) = (slope_line(&out, "a.csv"), slope_line(&out, "b.csv"));
    assert!((b + 0.5).abs() < 1e-6);
    let mean = slope_line(&out, "mean_of_slopes");
    assert!((mean + 0.75).abs() < 1e-6);
    let pooled = slope_line(&out, "slope_of_mean");
    assert!(pooled > a && pooled < b, "{pooled}");
}

#[test]
fn slopes_rejects_empty_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    fs::write(dir.path().join("header.csv"), format!("{EVAL_CSV_HEADER}\n")).unwrap();
    fs::write(dir.path().join("bad.csv"), "t,eps\n1,2\n").unwrap();
    for f in ["empty.csv", "header.csv", "bad.csv", "missing.csv"] {
        let out = sdot(&["slopes", f], dir.path());
        assert!(!out.status.success(), "{f} accepted");
    }
    let out = sdot(&["slopes", "bad.csv", "--field", "nope"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn export_map_labels_unit_ball_points() {
    let dir = tempfile::tempdir().unwrap();
    let mut target = String::from("w,x1,x2\n");
    for k in 0..12 {
        let th = k as f64 * 0.5;
        target.push_str(&format!("{},{},{}\n", 1.0 / 12.0, 0.8 * th.cos(), 0.3 * th.sin() + 0.1 * k as f64 / 12.0));
    }
    fs::write(dir.path().join("nu.csv"), target).unwrap();
    let cfg = "\
instance.kind = target
instance.path = nu.csv
solver.t_max = 3000
export.n = 500
export.bands = 10
";
    fs::write(dir.path().join("c.cfg"), cfg).unwrap();
    ok(&sdot(&["export-map", "--config", "c.cfg", "--out", "ex"], dir.path()));
    let text = fs::read_to_string(dir.path().join("ex/map_export.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,band,atom,t1,t2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 500);
    for r in &rows {
        assert!(r[0] * r[0] + r[1] * r[1] <= 1.0);
        assert!((1.0..=10.0).contains(&r[2]));
        assert!(r[3] >= 0.0 && r[3] < 12.0);
    }
    let again = sdot(&["export-map", "--config", "c.cfg", "--out", "ex2"], dir.path());
    ok(&again);
    assert_eq!(text, fs::read_to_string(dir.path().join("ex2/map_export.csv")).unwrap());
    // the target kind carries no ground truth, so `run` refuses it
    assert!(!sdot(&["run", "--config", "c.cfg", "--out", "r"], dir.path()).status.success());
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let rates = ExperimentConfig::load(root.join("example3_rates.cfg")).unwrap();
    assert_eq!(rates.solver.batch_size, 16);
    let cmp = ExperimentConfig::load(root.join("example1_compare.cfg")).unwrap();
    assert_eq!(cmp.variants.len(), 7);
}
