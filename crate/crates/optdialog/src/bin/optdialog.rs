use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optdialog::app::{self, AppError, ValidateTargets};
use optdialog::config::{parse_config, Overrides};
use optdialog_core::AblationSetting;

#[derive(Parser)]
#[command(name = "optdialog", version, about = "Multi-agent food image classification over a chat backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a single image.
    Run {
        #[command(flatten)]
        common: Common,
        /// Image file.
        #[arg(long)]
        image: PathBuf,
        /// Image id used for detections lookup and transcript names (default: file stem).
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Evaluate every image of a manifest.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate settings a, b, c and d in sequence.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Pretty-print a transcript file.
    Inspect { transcript: PathBuf },
    /// Check input files without running anything.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Mock script file.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Directory of prompt templates.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON or TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Endpoint URL or mock:<script.json>.
    #[arg(long)]
    backend: Option<String>,
    /// Model name sent to HTTP endpoints.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_parser = parse_setting)]
    setting: Option<AblationSetting>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory of prompt templates replacing the built-in set.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-<setting>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_setting(s: &str) -> Result<AblationSetting, String> {
    s.parse().map_err(|e| format!("{e}"))
}

impl Common {
    fn overrides(&self, with_rounds: bool) -> Overrides {
        Overrides {
            setting: self.setting,
            rounds: if with_rounds { self.rounds } else { None },
            parallelism: self.parallelism,
            backend: self.backend.clone(),
            manifest: self.manifest.clone(),
            detections: self.detections.clone(),
            model: self.model.clone(),
            template_dir: self.templates.clone(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), AppError> {
    match command {
        Command::Run { common, image, image_id } => {
            let cfg = parse_config(common.config.as_deref(), common.overrides(true))?;
            let out = common.out.unwrap_or_else(|| app::default_out_dir(cfg.setting.as_str()));
            println!("{}", app::run_single(&cfg, &image, image_id.as_deref(), &out)?);
            println!("output: {}", out.display());
            Ok(())
        }
        Command::Evaluate { common } => {
            let cfg = parse_config(common.config.as_deref(), common.overrides(true))?;
            let out = common.out.unwrap_or_else(|| app::default_out_dir(cfg.setting.as_str()));
            let result = app::evaluate(&cfg, &out)?;
            let r = &result.report;
            println!(
                "setting {}: acc_standard {:.4}  acc_paper {:.4}  macro_recall {:.4}  macro_f1 {:.4}  abstained {}",
                cfg.setting, r.acc_standard, r.acc_paper, r.macro_recall, r.macro_f1, r.abstentions
            );
            println!("output: {}", out.display());
            match result.failures().count() {
                0 => Ok(()),
                n => Err(AppError::Runtime(format!("{n} image(s) failed; see summary.json in {}", out.display()))),
            }
        }
        Command::Ablate { common } => {
            let cfg = parse_config(common.config.as_deref(), common.overrides(false))?;
            let out = common.out.unwrap_or_else(|| app::default_out_dir("ablation"));
            let rows = app::ablate(&cfg, common.rounds, &out)?;
            print!("{}", app::ablation_csv(&rows));
            println!("output: {}", out.display());
            match rows.iter().filter(|r| r.status() != "ok").count() {
                0 => Ok(()),
                n => Err(AppError::Runtime(format!("{n} setting(s) did not complete cleanly"))),
            }
        }
        Command::Inspect { transcript } => {
            print!("{}", app::inspect(&transcript)?);
            Ok(())
        }
        Command::Validate { config, manifest, detections, script, templates } => {
            let targets = ValidateTargets { config, manifest, detections, script, templates };
            let (lines, ok) = app::validate(&targets);
            if lines.is_empty() {
                return Err(AppError::Config("nothing to validate".into()));
            }
            for l in &lines {
                println!("{l}");
            }
            if ok {
                Ok(())
            } else {
                Err(AppError::Config("validation failed".into()))
            }
        }
    }
}
