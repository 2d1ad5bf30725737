use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metachain::experiment::{csv_document, run_campaign, run_instance, Budgets, Instance, Predictions, Tasks};
use metachain::{prefactor, spectrum, CampaignConfig, ChainParams, Error, Result};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_REGIME: u8 = 3;
const EXIT_BLOWUP: u8 = 4;
const EXIT_INCONCLUSIVE: u8 = 5;
const EXIT_PARTIAL: u8 = 6;

#[derive(Parser)]
#[command(name = "metachain", version, about = "Metastable transitions in a ring of coupled double wells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the saddle and minimum spectra for one chain.
    Spectrum {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        mu: f64,
    },
    /// Tabulate prefactors over a range of chain lengths.
    Prefactor {
        /// A single N, an inclusive range `A..B`, or a comma list.
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 2.0)]
        mu: f64,
    },
    /// Simulate first-hitting times from the negative minimum.
    Simulate(RunArgs),
    /// Bracket the capacity with upper and lower bounds.
    Capacity(RunArgs),
    /// Run a campaign described by a JSON config.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        /// Result CSV; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recompute instances whose recorded config hash differs.
        #[arg(long)]
        force: bool,
        /// Worker threads; overrides the config when given.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2.0)]
    mu: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    trajectories: usize,
    #[arg(long, default_value_t = 20000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::HashMismatch { .. } => EXIT_CONFIG,
        Error::Regime { .. } => EXIT_REGIME,
        Error::Blowup { .. } => EXIT_BLOWUP,
        Error::Inconclusive { .. } | Error::StatisticalTolerance { .. } => EXIT_INCONCLUSIVE,
        _ => EXIT_OTHER,
    }
}

fn parse_ns(list: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config { location: "--n".into(), message: format!("cannot parse `{list}`") };
    if let Some((a, b)) = list.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        return if a <= b { Ok((a..=b).collect()) } else { Err(bad()) };
    }
    list.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn params(n: usize, mu: f64, eps: f64) -> Result<ChainParams> {
    let p = Instance { n, mu, epsilon: eps }.params()?;
    p.require_sync_regime()?;
    Ok(p)
}

fn run_single(args: &RunArgs, tasks: Tasks) -> Result<()> {
    params(args.n, args.mu, args.eps)?;
    let inst = Instance { n: args.n, mu: args.mu, epsilon: args.eps };
    let budgets = Budgets {
        trajectories: args.trajectories,
        samples: args.samples,
        grid_step: args.grid_step,
        dt: args.dt,
        rho: args.rho,
        max_time: args.max_time,
        ..Budgets::default()
    };
    let record = metachain::parallel::with_workers(args.workers, || {
        run_instance(&inst, &budgets, &tasks, &Predictions::default(), args.seed)
    })??;
    if tasks.simulate {
        eprintln!(
            "mean hitting time {:.6} (95% CI {:.6}..{:.6}), {} censored",
            record.mean_emp.unwrap_or(f64::NAN),
            record.ci95_low.unwrap_or(f64::NAN),
            record.ci95_high.unwrap_or(f64::NAN),
            record.censored.unwrap_or(0)
        );
    }
    if tasks.capacity {
        eprintln!(
            "log capacity in [{:.6}, {:.6}], asymptotic {:.6}",
            record.log_cap_lower.unwrap_or(f64::NAN),
            record.log_cap_upper.unwrap_or(f64::NAN),
            record.log_cap_asymptotic.unwrap_or(f64::NAN)
        );
        if let Some(o) = record.log_cap_oracle {
            eprintln!("grid oracle log capacity {o:.6}");
        }
    }
    emit(args.out.as_ref(), &csv_document(std::slice::from_ref(&record)))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Spectrum { n, mu } => {
            let s = spectrum(&params(n, mu, 0.1)?);
            let mut text = String::from("k,gamma_k,lambda,nu\n");
            for k in 0..s.n() {
                let gamma_k = k.checked_sub(1).map(|i| s.gamma_k[i].to_string()).unwrap_or_default();
                text.push_str(&format!("{k},{gamma_k},{},{}\n", s.lambda[k], s.nu[k]));
            }
            emit(None, &text)?;
        }
        Command::Prefactor { n, mu } => {
            let mut text = String::from("n,c_n,det_ratio,v_mu,abs_c_n_minus_v,n_abs_c_n_minus_v\n");
            for n in parse_ns(&n)? {
                let r = prefactor(&params(n, mu, 0.1)?)?;
                let (v, d, nd) = match r.v_mu {
                    Some(v) => {
                        let d = (r.c_n_product - v).abs();
                        (v.to_string(), d.to_string(), (n as f64 * d).to_string())
                    }
                    None => Default::default(),
                };
                text.push_str(&format!("{n},{},{},{v},{d},{nd}\n", r.c_n_product, r.det_ratio));
            }
            emit(None, &text)?;
        }
        Command::Simulate(args) => run_single(&args, Tasks { simulate: true, capacity: false })?,
        Command::Capacity(args) => run_single(&args, Tasks { simulate: false, capacity: true })?,
        Command::Campaign { config, out, force, workers } => {
            let mut cfg = CampaignConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| Error::Config {
                location: config.display().to_string(),
                message: "no output path (set `output` or pass --out)".into(),
            })?;
            let summary = run_campaign(&cfg, &out, force)?;
            eprintln!(
                "{} computed, {} reused, {} failed; results in {}",
                summary.completed,
                summary.skipped,
                summary.failed.len(),
                summary.csv.display()
            );
            for (i, msg) in &summary.failed {
                eprintln!("instance {i} failed: {msg}");
            }
            if !summary.failed.is_empty() {
                return Ok(EXIT_PARTIAL);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
