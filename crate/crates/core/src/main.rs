use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdot::experiment::{self, ExperimentConfig, VariantSummary};
use sdot::metrics::{self, fit_rate, mean_records, RecordField};

#[derive(Parser)]
#[command(name = "sdot", version, about = "Semi-discrete optimal transport with decreasing-regularization averaged SGD")]
struct Cli {
    /// Worker threads for seed-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all repeats of one solver configuration.
    Run(RunArgs),
    /// Run every `compare.<name>` variant on a shared instance and grid.
    Compare(RunArgs),
    /// Fit log-log slopes to evaluation CSVs.
    Slopes {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "pot_err_sq")]
        field: String,
        #[arg(long, default_value_t = metrics::DEFAULT_FIT_WINDOW)]
        window: f64,
    },
    /// Solve, then label points of the unit ball by quantile band and cell.
    ExportMap(RunArgs),
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.solver.seed = seed;
        for (_, v) in cfg.variants.iter_mut() {
            v.seed = seed;
        }
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    Ok((cfg, out))
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

fn print_summary(rows: &[VariantSummary]) {
    println!(
        "{:<16} {:>12} {:>12} {:>12} {:>9} {:>9} {:>9}",
        "variant", "pot_err_sq", "cost_gap", "map_err", "slope_pot", "slope_cost", "slope_map"
    );
    for r in rows {
        println!(
            "{:<16} {:>12.4e} {:>12.4e} {:>12.4e} {:>9} {:>9} {:>9}",
            r.name,
            r.final_pot_err_sq,
            r.final_cost_gap,
            r.final_map_err,
            fmt_slope(r.slope_pot),
            fmt_slope(r.slope_cost),
            fmt_slope(r.slope_map)
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let (cfg, out) = load(args)?;
    let runs = experiment::execute_run(&cfg, &out).map_err(|e| e.to_string())?;
    let recs: Vec<_> = runs.into_iter().map(|(_, r)| r).collect();
    let summary = experiment::summarize("run", &recs).map_err(|e| e.to_string())?;
    print_summary(&[summary]);
    eprintln!("wrote {} runs to {}", recs.len(), out.display());
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> Result<(), String> {
    let (cfg, out) = load(args)?;
    let rows = experiment::execute_compare(&cfg, &out).map_err(|e| e.to_string())?;
    print_summary(&rows);
    Ok(())
}

fn cmd_slopes(paths: &[PathBuf], field: &str, window: f64) -> Result<(), String> {
    let field = RecordField::parse(field).map_err(|e| e.to_string())?;
    let mut runs = Vec::with_capacity(paths.len());
    let mut slopes = Vec::with_capacity(paths.len());
    for p in paths {
        let recs = experiment::read_run_csv(p).map_err(|e| format!("{}: {e}", p.display()))?;
        if recs.is_empty() {
            return Err(format!("{}: no records", p.display()));
        }
        let s = fit_rate(&recs, field, window).map_err(|e| format!("{}: {e}", p.display()))?;
        println!("{}\t{s:.6}", p.display());
        slopes.push(s);
        runs.push(recs);
    }
    let mean_of_slopes = slopes.iter().sum::<f64>() / slopes.len() as f64;
    println!("mean_of_slopes\t{mean_of_slopes:.6}");
    let mean = mean_records(&runs).map_err(|e| e.to_string())?;
    let pooled = fit_rate(&mean, field, window).map_err(|e| e.to_string())?;
    println!("slope_of_mean\t{pooled:.6}");
    Ok(())
}

fn cmd_export(args: &RunArgs) -> Result<(), String> {
    let (cfg, out) = load(args)?;
    let path = experiment::execute_export(&cfg, &out).map_err(|e| e.to_string())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Slopes { csv, field, window } => cmd_slopes(csv, field, *window),
        Command::ExportMap(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
