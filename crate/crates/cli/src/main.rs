use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cdqmc::cdalg::{diagnostics_b, epsilon_dimension, plan_build, plan_cost, Plan};
use cdqmc::decomp::Integrand;
use cdqmc::gfpoly::FieldBase;
use cdqmc::harness::{
    dump_points, run_convergence_study, run_estimates, selftest, write_csv_with_meta, ExperimentConfig,
};
use cdqmc::quadrature::{summarize, GeneratorCache, RuleKind};
use cdqmc::scramble::ScrambleConfig;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cdqmc", version, about = "Changing dimension quadrature experiments")]
struct Cli {
    /// TOML file with experiment settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Weight preset, e.g. `product:a=3,c=1`, `finite-order:beta=2,a=3`, `fi-pairs:J=256,a=3`.
    #[arg(long, global = true)]
    weights: Option<String>,
    /// Integrand, e.g. `product-form:J=1000,p=3`; defaults to the one matched to the weights.
    #[arg(long, global = true)]
    integrand: Option<String>,
    /// Smoothness of the Sobolev kernel.
    #[arg(long, global = true)]
    chi: Option<usize>,
    /// Interlacing factor.
    #[arg(long, global = true)]
    alpha: Option<usize>,
    /// Prime base of the lattice rules.
    #[arg(long, global = true)]
    base: Option<u32>,
    /// `plr` or `mc`.
    #[arg(long, global = true)]
    rule: Option<RuleKind>,
    /// `linear`, `poly:<s>` or `exp:<sigma>`.
    #[arg(long, global = true)]
    cost: Option<String>,
    /// Variance decay rate assumed for the building blocks.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Target accuracy for `plan` and `estimate`.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Comma-separated accuracies for `study`.
    #[arg(long, global = true, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    /// Replications.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (`study`, `estimate`) or file (`plan`, `points`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the plan for one accuracy as JSON.
    Plan,
    /// Run the changing dimension algorithm on the integrand.
    Estimate,
    /// Convergence study over the accuracy grid.
    Study,
    /// Print an interlaced scrambled point set as digit strings.
    Points {
        /// `b^m` points.
        #[arg(long, default_value_t = 4)]
        m: u32,
        /// Dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Skip scrambling and keep `m` digits.
        #[arg(long)]
        identity: bool,
    },
    /// Run the built-in consistency checks.
    Selftest,
}

fn merge(mut cfg: ExperimentConfig, o: Overrides) -> (ExperimentConfig, bool) {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { cfg.$f = v; })* };
    }
    set!(weights, chi, alpha, base, rule, cost, tau, epsilon, eps_grid, reps, seed);
    if o.integrand.is_some() {
        cfg.integrand = o.integrand;
    }
    let explicit_out = o.out.is_some();
    if let Some(out) = o.out {
        cfg.out = out;
    }
    (cfg, explicit_out)
}

fn metadata(cfg: &ExperimentConfig, extra: serde_json::Value) -> serde_json::Value {
    json!({ "version": cdqmc::VERSION, "config": cfg, "results": extra })
}

fn build_plan(cfg: &ExperimentConfig, epsilon: f64) -> Result<Plan> {
    Ok(plan_build(&cfg.weight_model()?, epsilon, &cfg.planner_options(), cfg.template()?)?)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<bool> {
    let base_cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let (cfg, explicit_out) = merge(base_cfg, cli.overrides);
    if cfg.reps < 2 && matches!(cli.command, Command::Study) {
        bail!("a study needs at least two replications");
    }
    let cache = GeneratorCache::default();
    match cli.command {
        Command::Plan => {
            let plan = build_plan(&cfg, cfg.epsilon)?;
            let mut w = writer(explicit_out.then_some(cfg.out.as_path()))?;
            writeln!(w, "{}", plan.to_json()?)?;
            w.flush()?;
            eprintln!(
                "|Q| = {}, d(eps) = {}, cost = {}, B(eps) = {}",
                plan.len(),
                epsilon_dimension(&plan),
                plan_cost(&plan, cfg.cost_model()?),
                diagnostics_b(&plan)
            );
        }
        Command::Estimate => {
            let plan = build_plan(&cfg, cfg.epsilon)?;
            let f = cfg.integrand()?;
            let model = cfg.cost_model()?;
            let rows = run_estimates(&f, &plan, cfg.reps.max(1), cfg.seed, model, &cache)?;
            let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
            let summary = if values.len() >= 2 { Some(summarize(&values)?) } else { None };
            let extra = json!({
                "sets": plan.len(),
                "d_eps": epsilon_dimension(&plan),
                "plan_cost": plan_cost(&plan, model),
                "integral": f.known_integral(),
                "summary": summary,
            });
            let path = cfg.out.join("estimate.csv");
            write_csv_with_meta(&path, &rows, &metadata(&cfg, extra))?;
            match summary {
                Some(s) => println!("estimate {} ± {} over {} reps", s.mean, s.mean_stderr, s.reps),
                None => println!("estimate {}", values[0]),
            }
            println!("wrote {}", path.display());
        }
        Command::Study => {
            let f = cfg.integrand()?;
            let study = run_convergence_study(&f, &cfg, &cache)?;
            let path = cfg.out.join("study.csv");
            let extra = json!({ "slope": study.slope, "slope_stderr": study.slope_stderr, "integral": study.integral });
            write_csv_with_meta(&path, &study.rows, &metadata(&cfg, extra))?;
            for r in &study.rows {
                println!("eps {:<10} cost {:<12.4e} |Q| {:<7} d {:<3} rmse2 {:.4e}", r.epsilon, r.cost, r.sets, r.d_eps, r.rmse2);
            }
            if let (Some(s), Some(se)) = (study.slope, study.slope_stderr) {
                println!("slope of log RMSE^2 vs log cost: {s:.3} ± {se:.3}");
            }
            println!("wrote {}", path.display());
        }
        Command::Points { m, dim, identity } => {
            let b = FieldBase::new(cfg.base)?;
            let ps = cache.point_set(b, cfg.alpha * dim, m)?;
            let scramble = (!identity).then(|| ScrambleConfig::new(cfg.alpha, cfg.seed));
            let mut w = writer(explicit_out.then_some(cfg.out.as_path()))?;
            dump_points(&mut w, &ps, cfg.alpha, scramble)?;
            w.flush()?;
        }
        Command::Selftest => {
            let checks = selftest()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
