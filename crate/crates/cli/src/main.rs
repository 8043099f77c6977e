use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hyp3d_cli::analyze::cmd_analyze;
use hyp3d_cli::config::{ConfigArgs, Paths, RunConfig};
use hyp3d_cli::data::cmd_gen;
use hyp3d_cli::error::CliResult;
use hyp3d_cli::eval::cmd_eval;
use hyp3d_cli::train::cmd_train;

#[derive(Parser)]
#[command(name = "hyp3d", version, about = "Hyperbolic multimodal embedding harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[command(flatten)]
    overrides: ConfigArgs,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic concept tree and a preview batch.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoders on the joint loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Batched δ-hyperbolicity of embeddings or of a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint `.json`, `.lemb` file or directory of `emb_*.lemb`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "run/analysis")]
        out_dir: PathBuf,
    },
    /// Hierarchy metrics and distance histograms of a trained checkpoint.
    Eval {
        #[arg(long, default_value = "run/checkpoint.json")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "run/eval")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Gen { common } => {
            let cfg = common.resolve()?;
            let tree = cmd_gen(&cfg, &common.data_dir)?;
            println!("wrote {} nodes to {}", tree.len(), common.data_dir.display());
        }
        Cmd::Train { common, run_dir, resume } => {
            let cfg = common.resolve()?;
            let paths = Paths {
                data_dir: common.data_dir.clone(),
                run_dir,
            };
            let out = cmd_train(&cfg, &paths, resume.as_deref())?;
            if let (Some(a), Some(b)) = (out.first_joint, out.last_joint) {
                println!("joint loss {a} -> {b}");
            }
            if out.improved() == Some(false) {
                eprintln!("warning: final joint loss is not below the initial one");
            }
            println!("wrote {}", out.checkpoint_path.display());
        }
        Cmd::Analyze { common, input, out_dir } => {
            let cfg = common.resolve()?;
            let reports = cmd_analyze(&input, &common.data_dir, &out_dir, cfg.hyp_batch_size, cfg.seed)?;
            for (name, r) in &reports {
                println!("{name}: delta_rel {} +- {} over {} batches", r.mean_delta_rel, r.std_delta_rel, r.num_batches);
            }
        }
        Cmd::Eval { checkpoint, data_dir, out_dir } => {
            let m = cmd_eval(&checkpoint, &data_dir, &out_dir)?;
            print!("{}", m.to_kv());
            println!("wrote {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
