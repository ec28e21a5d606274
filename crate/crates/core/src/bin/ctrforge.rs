use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, ValueEnum};

use ctrforge::commands::{cmd_evaluate, cmd_recommend, cmd_report, cmd_synth, cmd_train};
use ctrforge::config::RunConfig;
use ctrforge::dataset::ContentType;
use ctrforge::models::Architecture;
use ctrforge::CtrError;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Synth,
    Train,
    Evaluate,
    Recommend,
    Report,
}

/// Click-through-rate models for next-day content recommendation.
#[derive(Parser, Debug)]
#[command(name = "ctrforge", version)]
struct Cli {
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// pnn, deepfm, xdeepfm, difm or all.
    #[arg(long)]
    model: Option<String>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// User to recommend for.
    #[arg(long)]
    user: Option<String>,
    /// Number of recommendations.
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    k: i64,
    /// Content type to recommend.
    #[arg(long, default_value = "drug")]
    content_type: String,
}

fn models(arg: Option<&str>) -> Result<Vec<Architecture>, CtrError> {
    match arg {
        None | Some("all") => Ok(Architecture::ALL.to_vec()),
        Some(name) => name.parse().map(|a| vec![a]).map_err(CtrError::Config),
    }
}

fn run(cli: Cli) -> Result<(), CtrError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    match cli.command {
        Command::Synth => {
            let s = cmd_synth(&cfg, cli.force)?;
            println!("wrote {} events for {} users to {}", s.events, s.users, s.logs.display());
            for (t, n) in s.per_type {
                println!("  {t}: {n}");
            }
            println!("ground truth: {}", s.ground_truth.display());
        }
        Command::Train => {
            for s in cmd_train(&cfg, &models(cli.model.as_deref())?)? {
                let last = s.metrics.last().expect("at least one epoch");
                println!(
                    "{} {}: {} epochs, train_loss {:.4}, val_auc {} -> {}",
                    s.content_type,
                    s.architecture,
                    s.metrics.len(),
                    last.train_loss,
                    last.val_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "NA".into()),
                    s.checkpoint.display()
                );
            }
        }
        Command::Evaluate => {
            let reports = cmd_evaluate(&cfg, &models(cli.model.as_deref())?)?;
            print!("{}", ctrforge::report::render_text(&reports));
        }
        Command::Recommend => {
            let user = cli.user.ok_or_else(|| CtrError::Config("recommend needs --user".into()))?;
            let arch = match cli.model.as_deref() {
                None => Architecture::DeepFm,
                Some(name) => name.parse().map_err(CtrError::Config)?,
            };
            let ct: ContentType = cli.content_type.parse().map_err(CtrError::Config)?;
            let list = cmd_recommend(&cfg, arch, ct, &user, cli.k)?;
            println!("{}", serde_json::to_string_pretty(&list).expect("serializable"));
        }
        Command::Report => print!("{}", cmd_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ProcessExit {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ProcessExit::from(e.exit_code().code() as u8)
        }
    }
}
