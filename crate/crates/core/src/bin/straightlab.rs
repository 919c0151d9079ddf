use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use straightlab::cli::{run, Command, RunConfig};

/// Train straightened world models, plan with them and analyze the results.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// gen-data | train | eval-plan | mpc | analyze-linear | sweep-theorem | heatmap | pca | curvature
    command: Command,
    /// key=value configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// KEY=VALUE overrides applied after the file
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut overrides = Vec::new();
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            eprintln!("ConfigError: override '{o}' is not KEY=VALUE");
            return ExitCode::from(2);
        };
        overrides.push((k.trim().to_string(), v.to_string()));
    }
    let result = match &args.config {
        Some(path) => RunConfig::load(path, &overrides),
        None => RunConfig::parse("", &overrides),
    }
    .and_then(|cfg| run(args.command, &cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {}", e.class(), e.to_string().replace('\n', "; "));
            ExitCode::FAILURE
        }
    }
}
