mod analyze;
mod output;
mod simulate;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epistoch::model::ModelDocument;

use crate::output::Input;

#[derive(Parser)]
#[command(name = "epistoch", version, about = "Stochastic epidemic models: simulation and analysis")]
struct Cli {
    /// Worker threads for replica sweeps (0 = all cores). Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Model document (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for manifest.json and the result files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent replicas and summarise their outcomes.
    Simulate(simulate::SimulateArgs),
    /// Evaluate analytic quantities of the model.
    Analyze(analyze::AnalyzeArgs),
    /// Run Monte Carlo cross-checks against the theory.
    Validate(validate::ValidateArgs),
}

/// 0: success; 1: a validation suite failed; 2: error.
fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => load(&a.common).and_then(|i| simulate::run(&i, a, cli.threads)),
        Command::Analyze(a) => load(&a.common).and_then(|i| analyze::run(&i, a)),
        Command::Validate(a) => load(&a.common).and_then(|i| validate::run(&i, a, cli.threads)),
    };
    match result {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(common: &Common) -> anyhow::Result<Input> {
    let text = std::fs::read_to_string(&common.model)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", common.model.display()))?;
    let doc = ModelDocument::from_json(&text)
        .map_err(|e| anyhow::anyhow!("invalid model document {}: {e}", common.model.display()))?;
    let spec = doc.spec()?;
    Ok(Input { digest: output::sha256_hex(text.as_bytes()), doc, spec, out: common.out.clone() })
}
