use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use coreseq::cli::{run, CommandKind};
use coreseq::config::Config;

/// Copy/rewrite sequence-to-sequence pipeline: alignment training,
/// coverage analysis, model training, generation, and evaluation.
#[derive(Parser)]
#[command(name = "coreseq", version, about)]
struct Args {
    /// align | coverage | train | generate | evaluate
    command: String,

    /// Config file (key=value lines)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set epochs=20 (repeatable; wins
    /// over the config file)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn execute(args: &Args) -> coreseq::Result<()> {
    let cmd = CommandKind::parse(&args.command)?;
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for kv in &args.set {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(coreseq::Error::Config(format!(
                "--set expects KEY=VALUE, got '{kv}'"
            )));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    let artifacts = run(cmd, &cfg)?;
    for a in artifacts {
        println!("{}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single machine-parseable line: category<TAB>message
            eprintln!("{}\t{}", e.category(), e);
            ExitCode::FAILURE
        }
    }
}
