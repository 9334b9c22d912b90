use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use vlasov_dlr::config::{self, SimConfig};
use vlasov_dlr::simulation::{output_dir, simulate};
use vlasov_dlr::Error;

pub const THREADS_ENV: &str = "VLASOV_DLR_THREADS";

/// Runs a low-rank DG Vlasov-Poisson experiment and writes run.csv, a
/// manifest and checkpoints into the output directory.
#[derive(Debug, Parser)]
#[command(name = "vlasov-dlr", version)]
struct Args {
    /// TOML configuration; omitted keys take scenario defaults.
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `time.tau=1e-3` (repeatable).
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (replaces `output.dir`).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Worker threads; takes precedence over the config and the environment.
    #[arg(long)]
    threads: Option<usize>,

    /// Continue from a checkpoint.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,

    /// Validate and print the resolved configuration without running.
    #[arg(long)]
    dry_run: bool,
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Config(_) | Error::UnknownStrategy { .. } => "config",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
        Error::Compatibility { .. } | Error::NonFinite(_) | Error::SolverDivergence { .. } => "numerical",
        _ => "runtime",
    }
}

fn fail(stage: &str, err: &Error) -> ExitCode {
    let record = json!({
        "status": "error",
        "stage": stage,
        "kind": error_kind(err),
        "message": err.to_string(),
    });
    eprintln!("{record}");
    ExitCode::from(if stage == "config" { 2 } else { 1 })
}

fn thread_count(args: &Args, cfg: &SimConfig) -> Result<Option<usize>, Error> {
    if let Some(n) = args.threads {
        return Ok(Some(n));
    }
    if let Some(n) = cfg.threads {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={s} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut cfg = match config::load(args.config.as_deref(), &args.overrides) {
        Ok(c) => c,
        Err(e) => return fail("config", &e),
    };
    cfg.output.dir = output_dir(&cfg, args.output.as_deref());
    let threads = match thread_count(&args, &cfg) {
        Ok(Some(0)) => return fail("config", &Error::Config("thread count must be >= 1".into())),
        Ok(t) => t,
        Err(e) => return fail("config", &e),
    };
    cfg.threads = threads;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail("setup", &Error::InvalidArgument(format!("thread pool: {e}"))),
    };
    log::info!(
        "scenario {} with {} on {} threads, output in {}",
        cfg.scenario,
        cfg.integrator.scheme,
        pool.current_num_threads(),
        cfg.output.dir.display()
    );
    let dir = cfg.output.dir.clone();
    match pool.install(|| simulate(&cfg, Some(&dir), args.resume.as_deref())) {
        Ok(out) => {
            let last = out.records.last().expect("at least the initial record");
            let record = json!({
                "status": "ok",
                "steps": out.steps,
                "t": out.t,
                "rank": last.rank,
                "mass_rel_err": ((last.mass - out.reference.mass) / out.reference.mass).abs(),
                "output": dir.display().to_string(),
            });
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => fail("run", &e),
    }
}
