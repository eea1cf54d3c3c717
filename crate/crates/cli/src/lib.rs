//! Command-line front end: one subcommand per pipeline stage, plus the
//! review task server.

pub mod server;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use proofread_core::pipeline::{Pipeline, RunConfig};
use proofread_core::workflow::SystemClock;
use proofread_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "proofread", version, about = "Segmentation proofreading automation pipeline")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding every pipeline artifact.
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus (volumes, synapses, ground truth).
    Gen,
    /// Compute the adjacency table of every volume.
    Adjacency(AdjacencyArgs),
    /// Build labeled candidate splits.
    Candidates,
    /// Compute shape and connectivity features.
    Features(FeatureArgs),
    /// Train the 3D CNN on the training split.
    TrainCnn(TrainCnnArgs),
    /// Train the fusion SVM on the fusion split.
    TrainFusion(TrainFusionArgs),
    /// Score calibration and test candidates.
    Score,
    /// Rank test candidates and report the value captured within a budget.
    Triage(TriageArgs),
    /// Calibrate the orphan-link accept threshold.
    Calibrate(CalibrateArgs),
    /// Run orphan linking on the test volume.
    OrphanLink(OrphanArgs),
    /// Write PR curves, effort/value, review precision and the summary.
    Eval,
    /// Serve review tasks over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AdjacencyArgs {
    /// Downsample factor (1, 2, 4, 8 or 16).
    #[arg(long)]
    pub factor: Option<u32>,
    #[arg(long)]
    pub block_edge: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Also write every evidence cube to evidence.bin.
    #[arg(long)]
    pub write_evidence_bin: bool,
}

#[derive(Debug, Args)]
pub struct TrainCnnArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFusionArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    /// Fraction of candidates to review.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub target_error: Option<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OrphanArgs {
    #[arg(long)]
    pub passes: Option<u32>,
    #[arg(long)]
    pub weight_min: Option<u64>,
    #[arg(long)]
    pub weight_max: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = proofread_core::taskserve::DEFAULT_PORT)]
    pub port: u16,
    /// Rescore candidates with this model instead of reading scores.jsonl.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Cli {
    /// The config file (or defaults) with flag overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.data_dir.is_some() {
            c.data_dir = self.data_dir.clone();
        }
        match &self.command {
            Command::Adjacency(a) => {
                set(&mut c.adjacency.factor, a.factor);
                set(&mut c.adjacency.block_edge, a.block_edge);
            }
            Command::Features(f) => c.features.write_evidence_bin |= f.write_evidence_bin,
            Command::TrainCnn(t) => {
                set(&mut c.cnn.train.epochs, t.epochs);
                set(&mut c.cnn.train.lr, t.lr);
                set(&mut c.cnn.train.batch, t.batch);
            }
            Command::TrainFusion(t) => set(&mut c.fusion.lambda, t.lambda),
            Command::Triage(t) => set(&mut c.triage.budget, t.budget),
            Command::Calibrate(a) => {
                set(&mut c.calibrate.target_error, a.target_error);
                set(&mut c.calibrate.confidence, a.confidence);
            }
            Command::OrphanLink(o) => {
                set(&mut c.orphan.passes, o.passes);
                set(&mut c.orphan.weight_min, o.weight_min);
                set(&mut c.orphan.weight_max, o.weight_max);
            }
            Command::Gen | Command::Candidates | Command::Score | Command::Eval | Command::Serve(_) => {}
        }
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).unwrap_or_default());
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let config = cli.run_config()?;
    if let Command::Serve(args) = &cli.command {
        let dir = config
            .data_dir
            .clone()
            .ok_or_else(|| Error::InvalidArgument("a data directory is required (--data-dir)".into()))?;
        return serve(Pipeline::open(dir, config), args);
    }
    let p = Pipeline::new(config)?;
    match &cli.command {
        Command::Gen => {
            let c = p.gen()?;
            println!("generated {} volumes in {}", c.volumes.len(), p.dir.display());
        }
        Command::Adjacency(_) => p.adjacency(None)?,
        Command::Candidates => {
            let r = p.candidates()?;
            println!("{} candidate records", r.len());
        }
        Command::Features(_) => p.features()?,
        Command::TrainCnn(_) => {
            let b = p.train_cnn()?;
            println!("cnn trained, fingerprint {}", b.train_fingerprint);
        }
        Command::TrainFusion(_) => {
            let b = p.train_fusion()?;
            println!("fusion trained, fingerprint {}", b.train_fingerprint);
        }
        Command::Score => {
            let s = p.score()?;
            println!("{} candidates scored", s.len());
        }
        Command::Triage(_) => {
            let t = p.triage()?;
            println!(
                "{} of {} candidates selected, captured value {}",
                t.selected,
                t.candidates,
                t.captured_value.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
        }
        Command::Calibrate(_) => print_json(&p.calibrate()?),
        Command::OrphanLink(_) => print_json(&p.orphan_link()?),
        Command::Eval => print_json(&p.eval()?),
        Command::Serve(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn serve(p: Pipeline, args: &ServeArgs) -> Result<()> {
    let svc = Arc::new(p.task_service(args.model.as_deref(), Arc::new(SystemClock))?);
    let addr = format!("{}:{}", args.host, args.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new(&addr), e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::io(Path::new(&addr), e))?;
        log::info!("serving {} candidates on http://{addr}", svc.stats().total);
        axum::serve(listener, server::router(svc))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(Path::new(&addr), e))
    })
}

/// `code: message` on one line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("{}: {}", e.code(), msg)
}
