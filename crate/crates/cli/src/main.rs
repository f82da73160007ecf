use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use udfwh::packages::RepositoryManifest;
use udfwh::presets;
use udfwh::sandbox::SandboxPolicy;
use udfwh::skew::gen_skew;
use udfwh::warehouse::{ab_replay, run_workload, Mode, RunConfig, WarehouseError, Workload};

#[derive(Parser)]
#[command(
    name = "udfwh",
    version,
    about = "Simulated virtual warehouse for sandboxed UDF execution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload and print its metrics document.
    Run(Common),
    /// Print Zipf-skewed partition sizes as a workload fragment.
    GenSkew {
        #[arg(long, default_value_t = 8)]
        partitions: usize,
        #[arg(long, default_value_t = 2000)]
        rows: u64,
        #[arg(long = "zipf-s", default_value_t = 1.2)]
        zipf_s: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay queries with redistribution forced on and off.
    AbReplay {
        #[command(flatten)]
        common: Common,
        /// Only replay queries whose key starts with this prefix.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Cache latency probe plus a 1000-query, 20-template replay.
    BenchCache(Common),
    /// Dynamic estimator against static reservations at mean and max peak.
    BenchSched(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    workload: Option<PathBuf>,
    /// JSON file with configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(String),
    Internal(String),
}

impl From<WarehouseError> for Failure {
    fn from(e: WarehouseError) -> Self {
        match e {
            WarehouseError::Config(_) | WarehouseError::InvalidWorkload(_) | WarehouseError::LiveModeUnavailable => {
                Failure::Config(e.to_string())
            }
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {what} {}: {e}", path.display())))
}

impl Common {
    fn config(&self, base: RunConfig) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json(&read(p, "config")?)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
            None => base,
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(m) = &self.mode {
            c.mode = match m.as_str() {
                "simulated" => Mode::Simulated,
                "live" => Mode::Live,
                other => return Err(Failure::Config(format!("unknown mode `{other}`"))),
            };
        }
        for a in &self.set {
            c.apply_assignment(a).map_err(|e| Failure::Config(e.to_string()))?;
        }
        c.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(c)
    }

    fn manifest(&self, fallback: impl FnOnce() -> RepositoryManifest) -> Result<Arc<RepositoryManifest>, Failure> {
        let m = match &self.manifest {
            Some(p) => RepositoryManifest::from_json(&read(p, "manifest")?)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
            None => fallback(),
        };
        Ok(Arc::new(m))
    }

    fn policy(&self) -> Result<SandboxPolicy, Failure> {
        match &self.policy {
            Some(p) => SandboxPolicy::from_json(&read(p, "policy")?)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
            None => Ok(SandboxPolicy::default_policy()),
        }
    }

    fn workload(&self, fallback: Option<fn() -> Workload>) -> Result<Workload, Failure> {
        match (&self.workload, fallback) {
            (Some(p), _) => {
                Workload::from_json(&read(p, "workload")?).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
            }
            (None, Some(f)) => Ok(f()),
            (None, None) => Err(Failure::Config("--workload is required".into())),
        }
    }

    fn emit(&self, doc: &str) -> Result<(), Failure> {
        emit(self.out.as_deref(), doc)
    }
}

fn emit(out: Option<&Path>, doc: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, doc).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", p.display())))?;
            eprintln!("udfwh: wrote {}", p.display());
        }
        None => print!("{doc}"),
    }
    Ok(())
}

fn skew_preset() -> Workload {
    Workload {
        templates: vec![presets::skew_template("skew-zipf", 8, 2000, 1.2)],
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let config = common.config(RunConfig::default())?;
            let workload = common.workload(None)?;
            let wh = run_workload(
                &config,
                common.manifest(RepositoryManifest::new)?,
                common.policy()?,
                &workload,
            )?;
            let m = wh.metrics();
            eprintln!(
                "udfwh: {} queries, {} succeeded, {} oom, {} failed",
                m.queries, m.succeeded, m.oom, m.failed
            );
            common.emit(&m.to_json())
        }
        Command::GenSkew {
            partitions,
            rows,
            zipf_s,
            seed,
            out,
        } => {
            let frag = gen_skew(partitions, rows, zipf_s, seed).map_err(|e| Failure::Config(e.to_string()))?;
            let mut doc = serde_json::to_string_pretty(&frag).expect("fragment serializes");
            doc.push('\n');
            emit(out.as_deref(), &doc)
        }
        Command::AbReplay { common, filter } => {
            let config = common.config(presets::skew_config())?;
            let workload = common.workload(Some(skew_preset))?;
            let r = ab_replay(
                &config,
                common.manifest(RepositoryManifest::new)?,
                common.policy()?,
                &workload,
                filter.as_deref(),
            )?;
            eprintln!(
                "udfwh: {} queries replayed, {} gate-enabled",
                r.deltas.len(),
                r.enabled_queries
            );
            common.emit(&r.to_json())
        }
        Command::BenchCache(common) => {
            let config = common.config(RunConfig::default())?;
            let b = presets::bench_cache(&config)?;
            eprintln!(
                "udfwh: solver hit rate {:.4}, init {} / {} / {} ms",
                b.metrics.solver_cache.hit_rate, b.latency.cold_ms, b.latency.solver_hit_ms, b.latency.env_hit_ms
            );
            common.emit(&b.to_json())
        }
        Command::BenchSched(common) => {
            let config = common.config(presets::sched_config())?;
            let b = presets::bench_sched(&config)?;
            for a in &b.arms {
                eprintln!(
                    "udfwh: {:<12} oom_rate {:.4} queue_wait_total {:.1} ms",
                    a.name, a.metrics.oom_rate, a.metrics.queue_wait_ms.total
                );
            }
            common.emit(&b.to_json())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("udfwh: config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("udfwh: error: {msg}");
            ExitCode::from(3)
        }
    }
}
