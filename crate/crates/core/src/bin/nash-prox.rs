use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nash_prox::game::{kl_divergence, ContextBatch};
use nash_prox::harness::config::{ExperimentConfig, PRESETS};
use nash_prox::harness::run::{build_game, build_reference};
use nash_prox::harness::{preset, rng_split, run_checks, run_experiment, write_outputs};
use nash_prox::oracle::{exploitability, exploitability_of, solve_vnw_at, DEFAULT_TOL};
use nash_prox::game::RegularizedSpec;
use nash_prox::Error;

#[derive(Parser)]
#[command(name = "nash-prox", about = "Solvers and exact oracles for KL-regularized preference games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every configured seed and write per-seed and aggregate CSVs.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// One of the built-in presets.
        #[arg(long)]
        preset: Option<String>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the regularized equilibrium and report exploitabilities.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-context CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a property suite: gradients, estimators, oracle, contraction or all.
    Check {
        #[arg(long)]
        suite: String,
    },
    /// Run the cartesian product of config overrides listed in a grid file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Print a preset as TOML.
    Preset { name: String },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Convergence { .. } | Error::Support(_) => 2,
        _ => 1,
    }
}

fn load(config: Option<&Path>, preset_name: Option<&str>) -> nash_prox::Result<ExperimentConfig> {
    match (config, preset_name) {
        (Some(p), _) => ExperimentConfig::load(p),
        (None, Some(n)) => {
            preset(n).ok_or_else(|| Error::Config(format!("unknown preset `{n}`; known: {}", PRESETS.join(", "))))
        }
        (None, None) => Err(Error::Config("either --config or --preset is required".into())),
    }
}

/// Runs `cfg` into `cfg.run.out`; returns whether any seed aborted.
fn run(cfg: &ExperimentConfig) -> nash_prox::Result<bool> {
    let runs = run_experiment(cfg)?;
    let out = PathBuf::from(&cfg.run.out);
    write_outputs(cfg, &runs, &out)?;
    let mut aborted = false;
    for r in &runs {
        let last = r.records.last().expect("step-0 row");
        match &r.abort {
            Some(reason) => {
                aborted = true;
                eprintln!("seed {}: aborted at {reason}", r.seed);
            }
            None => println!("seed {}: step {} exploitability {:.6e}", r.seed, last.step, last.exploitability),
        }
    }
    println!("wrote {}", out.display());
    Ok(aborted)
}

fn oracle(cfg: &ExperimentConfig, out: &Path, csv: Option<&Path>) -> nash_prox::Result<()> {
    let seed = cfg.run.seeds.first().copied().unwrap_or(0);
    let game = build_game(cfg, seed)?;
    let reference = build_reference(cfg, game.num_actions())?;
    let spec = RegularizedSpec::new(cfg.spec.beta, reference.clone())?;
    let batch = if game.is_context_free() {
        ContextBatch::singleton()
    } else {
        game.sample_contexts(cfg.run.eval_contexts, &mut rng_split(seed, "eval"), Some(seed))
    };
    let report = exploitability(&game, &spec, &reference, &batch)?;
    let mut text = String::new();
    let mut rows = String::from("context,residual,iterations,exploitability,kl_to_ref,reference_exploitability\n");
    let mut worst_residual: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut mean_kl = 0.0;
    for (i, x) in batch.effective().iter().enumerate() {
        let sol = solve_vnw_at(&game, &spec, x, None, DEFAULT_TOL, 1_000_000)?;
        let gap = exploitability_of(&game, &spec, &sol.policy, x)?;
        let kl = kl_divergence(&sol.policy, &reference.probs(x)?)?;
        worst_residual = worst_residual.max(sol.residual);
        worst_gap = worst_gap.max(gap);
        mean_kl += kl / batch.effective().len() as f64;
        writeln!(rows, "{i},{:e},{},{gap:e},{kl:e},{:e}", sol.residual, sol.iterations, exploitability_of(&game, &spec, &reference.probs(x)?, x)?).unwrap();
        if game.is_context_free() {
            let probs: Vec<String> = sol.policy.iter().map(|p| format!("{p:.16e}")).collect();
            let mut kv = BTreeMap::new();
            kv.insert("vnw.policy", probs.join(" "));
            kv.insert("vnw.eta", format!("{:e}", sol.eta));
            kv.insert("vnw.iterations", sol.iterations.to_string());
            for (k, v) in kv {
                writeln!(text, "{k} = {v}").unwrap();
            }
        }
    }
    writeln!(text, "seed = {seed}").unwrap();
    writeln!(text, "contexts = {}", batch.effective().len()).unwrap();
    writeln!(text, "beta = {}", cfg.spec.beta).unwrap();
    writeln!(text, "vnw.max_residual = {worst_residual:e}").unwrap();
    writeln!(text, "vnw.max_exploitability = {worst_gap:e}").unwrap();
    writeln!(text, "vnw.mean_kl_to_ref = {mean_kl:e}").unwrap();
    writeln!(text, "reference.exploitability = {:e}", report.value).unwrap();
    writeln!(text, "reference.self_value = {:e}", report.self_value).unwrap();
    writeln!(text, "reference.best_response_value = {:e}", report.best_response_value).unwrap();
    std::fs::write(out, text)?;
    if let Some(path) = csv {
        std::fs::write(path, rows)?;
    }
    Ok(())
}

/// Every combination of the grid's `"table.key" = [values]` overrides.
fn grid_configs(base: &ExperimentConfig, grid_text: &str) -> nash_prox::Result<Vec<(String, ExperimentConfig)>> {
    let grid: toml::Table = toml::from_str(grid_text).map_err(|e| Error::Config(format!("grid: {e}")))?;
    let mut points: Vec<(String, toml::Value)> = vec![(String::new(), toml::Value::try_from(base).expect("configs serialize"))];
    for (key, values) in &grid {
        let values = values.as_array().ok_or_else(|| Error::Config(format!("grid key `{key}` must list values")))?;
        let path: Vec<&str> = key.split('.').collect();
        let mut next = Vec::new();
        for (label, point) in &points {
            for v in values {
                let mut p = point.clone();
                let mut slot = &mut p;
                for part in &path {
                    slot = slot
                        .get_mut(*part)
                        .ok_or_else(|| Error::Config(format!("grid key `{key}` does not name a config field")))?;
                }
                *slot = v.clone();
                let tag = format!("{}={}", path.last().unwrap(), v).replace(['"', '/', ' '], "");
                next.push((if label.is_empty() { tag } else { format!("{label},{tag}") }, p));
            }
        }
        points = next;
    }
    points
        .into_iter()
        .map(|(label, v)| {
            let mut cfg = ExperimentConfig::parse(&toml::to_string(&v).expect("tables serialize"))?;
            cfg.run.out = Path::new(&base.run.out).join(&label).display().to_string();
            cfg.name = format!("{}[{label}]", base.name);
            Ok((label, cfg))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: nash_prox::Result<u8> = (|| match cli.command {
        Command::Run { config, preset: name, seed, out } => {
            let mut cfg = load(config.as_deref(), name.as_deref())?;
            if let Some(s) = seed {
                cfg.run.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.run.out = o.display().to_string();
            }
            Ok(if run(&cfg)? { 2 } else { 0 })
        }
        Command::Oracle { config, out, csv } => {
            oracle(&ExperimentConfig::load(&config)?, &out, csv.as_deref())?;
            Ok(0)
        }
        Command::Check { suite } => {
            let report = run_checks(&suite)?;
            println!("{report}");
            Ok(if report.passed() { 0 } else { 3 })
        }
        Command::Sweep { config, grid } => {
            let base = ExperimentConfig::load(&config)?;
            let mut aborted = false;
            for (label, cfg) in grid_configs(&base, &std::fs::read_to_string(&grid)?)? {
                println!("== {label}");
                aborted |= run(&cfg)?;
            }
            Ok(if aborted { 2 } else { 0 })
        }
        Command::Preset { name } => {
            let cfg = load(None, Some(&name))?;
            print!("{}", cfg.to_toml());
            Ok(0)
        }
    })();
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
