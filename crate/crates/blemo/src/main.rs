//! Command-line harness around the bilevel optimization library.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use blemo::framework::{Gamma, Mode, RunConfig, StopRule};
use blemo::harness::{compare_runs, emit_plots, run_experiment, run_one, ExperimentSpec};
use blemo::problems::{load_or_generate_pf, make_problem, set_label, ProblemConfig, VarSet};
use blemo::{BlemoError, Result};

#[derive(Parser)]
#[command(
    name = "blemo",
    about = "Bilevel multi-objective evolutionary optimization with Pareto-set prediction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run or a batch experiment
    Run(RunArgs),
    /// Rank-sum comparisons of modes over an experiment directory
    Compare {
        /// Experiment directory to compare
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Significance level
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Write matplotlib scripts for an experiment directory
    Plots {
        /// Experiment directory to plot
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Generate or refresh a cached true front
    PfCache {
        /// Problem id, for example DS2 or TP1
        #[arg(long)]
        problem: String,
        /// Variable-size set (S1, S2, or S3)
        #[arg(long)]
        set: Option<VarSet>,
        /// Number of reference points
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Directory holding the pf_cache folder
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Batch experiment description (TOML); excludes the single-run flags
    #[arg(long, conflicts_with = "problem")]
    spec: Option<PathBuf>,
    /// Problem id for a single run
    #[arg(long)]
    problem: Option<String>,
    /// Variable-size set (S1, S2, or S3)
    #[arg(long)]
    set: Option<VarSet>,
    /// Search mode: psp, os, or ne
    #[arg(long, default_value = "psp")]
    mode: Mode,
    /// Random seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Prediction cadence: an interval like 10, or inf
    #[arg(long)]
    gamma: Option<String>,
    /// Training-set capacity threshold
    #[arg(long)]
    ds: Option<usize>,
    /// Stop rule: igd, hv, or none
    #[arg(long)]
    stop: Option<String>,
    /// Stop-rule tolerance
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stop-rule window length
    #[arg(long)]
    omega: Option<usize>,
    /// Upper-level population size
    #[arg(long = "pop-ul")]
    pop_ul: Option<usize>,
    /// Lower-level population size
    #[arg(long = "pop-ll")]
    pop_ll: Option<usize>,
    /// Lower-level evaluation budget
    #[arg(long = "max-ll-fe")]
    max_ll_fe: Option<u64>,
    /// Upper-level generation cap
    #[arg(long = "max-ul-gens")]
    max_ul_gens: Option<usize>,
    /// Predictor training epoch cap per refit
    #[arg(long = "train-epochs")]
    train_epochs: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Base run configuration (TOML), overridden by the other flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference-front size for metric reporting
    #[arg(long = "pf-points", default_value_t = 500)]
    pf_points: usize,
}

fn build_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    config.mode = args.mode;
    config.seed = args.seed;
    if let Some(gamma) = &args.gamma {
        config.gamma = gamma.parse::<Gamma>()?;
    }
    if let Some(ds) = args.ds {
        config.ds = ds;
    }
    if let Some(stop) = &args.stop {
        let epsilon = args.epsilon;
        let omega = args.omega;
        config.stop = match stop.as_str() {
            "igd" => StopRule::Igd {
                epsilon: epsilon.unwrap_or(1e-2),
                omega: omega.unwrap_or(5),
            },
            "hv" => StopRule::Hv {
                epsilon: epsilon.unwrap_or(1e-3),
                omega: omega.unwrap_or(10),
            },
            "none" => StopRule::None,
            other => {
                return Err(BlemoError::InvalidConfig(format!(
                    "unknown stop rule '{other}' (expected igd, hv, or none)"
                )))
            }
        };
    } else {
        match (&mut config.stop, args.epsilon, args.omega) {
            (StopRule::Igd { epsilon, omega }, e, o) | (StopRule::Hv { epsilon, omega }, e, o) => {
                if let Some(e) = e {
                    *epsilon = e;
                }
                if let Some(o) = o {
                    *omega = o;
                }
            }
            _ => {}
        }
    }
    if let Some(n) = args.pop_ul {
        config.n_u = n;
    }
    if let Some(n) = args.pop_ll {
        config.n_l = n;
    }
    if let Some(cap) = args.max_ll_fe {
        config.max_ll_fe = Some(cap);
    }
    if let Some(gens) = args.max_ul_gens {
        config.max_ul_gens = gens;
    }
    if let Some(epochs) = args.train_epochs {
        config.train.max_epochs = epochs;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if let Some(spec_path) = &args.spec {
        let spec = ExperimentSpec::from_toml(&std::fs::read_to_string(spec_path)?)?;
        let summary = run_experiment(&spec, &args.out)?;
        let failed = summary.runs.iter().filter(|r| r.error.is_some()).count();
        println!(
            "experiment finished: {} runs, {} failed, summary at {}",
            summary.runs.len(),
            failed,
            args.out.join("summary.json").display()
        );
        for group in &summary.groups {
            println!(
                "  {} {} {}: median distance {:.4}, median hypervolume {:.4} over {} runs",
                group.problem,
                group.set,
                group.mode,
                group.median_igd.unwrap_or(f64::NAN),
                group.median_hv.unwrap_or(f64::NAN),
                group.runs
            );
        }
        if failed > 0 {
            return Err(BlemoError::InvalidConfig(format!(
                "{failed} runs failed; see error.txt in their directories"
            )));
        }
        return Ok(());
    }

    let problem_id = args.problem.clone().ok_or_else(|| {
        BlemoError::InvalidConfig("either --spec or --problem is required".into())
    })?;
    let config = build_config(&args)?;
    let problem_cfg = ProblemConfig::new(&problem_id, args.set);
    let problem = make_problem(&problem_cfg)?;
    let set = set_label(args.set).to_string();
    let reference = load_or_generate_pf(
        problem.as_ref(),
        &set,
        args.pf_points,
        &args.out.join("pf_cache"),
    )?;
    let dir = args.out.join(format!(
        "{}_{}_{}_s{}",
        problem.name(),
        set,
        config.mode,
        config.seed
    ));
    let meta = run_one(&problem_cfg, &config, &reference, &dir)?;
    println!(
        "{} {} {} seed {}: {} generations, {} UL + {} LL evaluations, stop {:?}",
        meta.problem,
        meta.set,
        meta.config.mode,
        meta.config.seed,
        meta.generations,
        meta.ul_fe,
        meta.ll_fe,
        meta.stop_reason
    );
    match (meta.final_igd, meta.final_hv) {
        (Some(i), Some(h)) => println!("  final distance {i:.6}, hypervolume {h:.6}"),
        _ => println!("  final front empty"),
    }
    println!("  artifacts in {}", dir.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare { out, alpha } => compare_runs(&out, alpha).map(|report| {
            println!(
                "{} comparisons at alpha {} written to {}",
                report.comparisons.len(),
                report.alpha,
                out.join("comparison.json").display()
            );
            for c in &report.comparisons {
                println!(
                    "  {} {}: {} (median {:.4}) vs {} (median {:.4}) p={:.4}{} -> {}",
                    c.problem,
                    c.set,
                    c.mode_a,
                    c.median_a,
                    c.mode_b,
                    c.median_b,
                    c.p_value,
                    if c.exact { " (exact)" } else { "" },
                    match c.verdict.as_str() {
                        "a" => c.mode_a.as_str(),
                        "b" => c.mode_b.as_str(),
                        _ => "tie",
                    }
                );
            }
        }),
        Command::Plots { out } => emit_plots(&out).map(|scripts| {
            for script in scripts {
                println!("wrote {}", script.display());
            }
        }),
        Command::PfCache {
            problem,
            set,
            n,
            out,
        } => (|| -> Result<()> {
            let cfg = ProblemConfig::new(&problem, set);
            let prob = make_problem(&cfg)?;
            let label = set_label(set).to_string();
            let pf = load_or_generate_pf(prob.as_ref(), &label, n, &out.join("pf_cache"))?;
            println!(
                "cached {} reference points for {} {} under {}",
                pf.len(),
                prob.name(),
                label,
                out.join("pf_cache").display()
            );
            Ok(())
        })(),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
