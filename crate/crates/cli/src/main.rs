use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optispin_cli::{presets, CliError};

#[derive(Parser)]
#[command(name = "optispin", version, about = "Nuclear-spin coherence simulations and fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file or a bundled preset.
    Run {
        /// Config file (same as --config).
        path: Option<PathBuf>,
        #[arg(long, conflicts_with = "path")]
        config: Option<PathBuf>,
        /// Bundled preset name, e.g. fig2b.
        #[arg(long, conflicts_with_all = ["path", "config"])]
        preset: Option<String>,
        /// Override a config key, e.g. --set ensemble.ions=1000. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List presets, or print one.
    Presets {
        name: Option<String>,
    },
}

fn config_text(path: Option<PathBuf>, preset: Option<String>) -> Result<String, CliError> {
    match (path, preset) {
        (Some(p), _) => fs::read_to_string(&p).map_err(|e| CliError::Io { path: p, source: e }),
        (None, Some(name)) => presets::get(&name)
            .map(str::to_string)
            .ok_or_else(|| CliError::Schema(format!("no preset `{name}`; try `optispin presets`"))),
        (None, None) => Err(CliError::Schema("give a config path or --preset".into())),
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Presets { name: None } => {
            presets::names().for_each(|n| println!("{n}"));
            Ok(())
        }
        Command::Presets { name: Some(name) } => match presets::get(&name) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(CliError::Schema(format!("no preset `{name}`"))),
        },
        Command::Run {
            path,
            config,
            preset,
            mut set,
            seed,
            out,
            threads,
        } => config_text(path.or(config), preset).and_then(|text| {
            if let Some(s) = seed {
                set.push(format!("seed={s}"));
            }
            if let Some(o) = out {
                set.push(format!("output_dir={}", toml::Value::String(o.display().to_string())));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .expect("thread pool");
            pool.install(|| optispin_cli::run(&text, &set)).map(|m| {
                eprintln!("{}: wrote {} files, config digest {}", m.experiment, m.files.len() + 1, m.config_digest);
                println!("{}", serde_json::to_string_pretty(&m.headline).expect("json"));
            })
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

