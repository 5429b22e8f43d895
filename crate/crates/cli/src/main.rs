use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tubelight_cli::config::{ExperimentConfig, OUT_ENV};
use tubelight_cli::{report, run, CliError, CliResult, RunManifest};

#[derive(Parser)]
#[command(name = "tubelight", version, about = "Run tube light-transport experiments and summarize them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file or a previous manifest.
    Run {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        config: Option<PathBuf>,
        /// Re-run the resolved config echoed in a run manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize every run manifest under a directory.
    Report {
        dir: PathBuf,
    },
    Simulate2d(ExperimentArgs),
    Simulate3d(ExperimentArgs),
    Gamma(ExperimentArgs),
    Renewal(ExperimentArgs),
    Ladder(ExperimentArgs),
    Occupation(ExperimentArgs),
    Brightness(ExperimentArgs),
    WhSolve(ExperimentArgs),
    Eye(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Config file; its `experiment` key, if present, must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override config keys.
#[derive(Args, Default)]
struct Overrides {
    /// Source distances, comma separated.
    #[arg(long = "s", value_delimiter = ',')]
    s_values: Vec<f64>,
    #[arg(long)]
    n_rays: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long = "out")]
    output_dir: Option<PathBuf>,
    /// Thread count or "auto".
    #[arg(long)]
    workers: Option<String>,
    /// Any other key, as `key=value` with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(self, table: &mut toml::Table) -> CliResult<()> {
        if !self.s_values.is_empty() {
            table.insert(
                "s_values".into(),
                self.s_values.into_iter().map(toml::Value::Float).collect::<Vec<_>>().into(),
            );
        }
        let ints = [("n_rays", self.n_rays), ("seed", self.seed), ("max_steps", self.max_steps)];
        for (key, v) in ints {
            if let Some(v) = v {
                let v = i64::try_from(v).map_err(|_| CliError::config(key, "value too large"))?;
                table.insert(key.into(), v.into());
            }
        }
        if let Some(dir) = self.output_dir {
            table.insert("output_dir".into(), dir.to_string_lossy().into_owned().into());
        }
        if let Some(w) = self.workers {
            table.insert("workers".into(), parse_value(&w));
        }
        for kv in self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::config("--set", format!("expected KEY=VALUE, got {kv:?}")))?;
            table.insert(k.trim().into(), parse_value(v.trim()));
        }
        Ok(())
    }
}

/// A TOML value, or the raw text as a string when it does not parse.
fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn load_table(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    text.parse()
        .map_err(|e: toml::de::Error| CliError::config("config", format!("{}: {}", path.display(), e.message())))
}

fn manifest_table(path: &Path) -> CliResult<toml::Table> {
    let m = RunManifest::read(path)?;
    toml::Table::try_from(&m.config).map_err(|e| CliError::config("manifest", e.to_string()))
}

fn execute(cmd: Command) -> CliResult<()> {
    let (mut table, experiment, overrides) = match cmd {
        Command::Report { dir } => {
            print!("{}", report::report(&dir)?);
            return Ok(());
        }
        Command::Run {
            config,
            manifest,
            overrides,
        } => {
            let table = match (config, manifest) {
                (Some(c), _) => load_table(&c)?,
                (None, Some(m)) => manifest_table(&m)?,
                (None, None) => unreachable!("clap requires one of --config and --manifest"),
            };
            (table, None, overrides)
        }
        Command::Simulate2d(a) => experiment_table(a, "simulate2d")?,
        Command::Simulate3d(a) => experiment_table(a, "simulate3d")?,
        Command::Gamma(a) => experiment_table(a, "gamma")?,
        Command::Renewal(a) => experiment_table(a, "renewal")?,
        Command::Ladder(a) => experiment_table(a, "ladder")?,
        Command::Occupation(a) => experiment_table(a, "occupation")?,
        Command::Brightness(a) => experiment_table(a, "brightness")?,
        Command::WhSolve(a) => experiment_table(a, "wh-solve")?,
        Command::Eye(a) => experiment_table(a, "eye")?,
    };
    if let Some(name) = experiment {
        match table.get("experiment") {
            Some(toml::Value::String(s)) if s != name => {
                return Err(CliError::config(
                    "experiment",
                    format!("config names {s:?} but the subcommand is {name:?}"),
                ));
            }
            _ => {
                table.insert("experiment".into(), name.into());
            }
        }
    }
    overrides.apply(&mut table)?;
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let cfg = ExperimentConfig::from_table(table)?.resolve(env_out)?;
    let manifest = run(cfg)?;
    eprintln!(
        "{} finished in {:.1} s; {} output file(s) in {}",
        manifest.config.experiment,
        manifest.wall_seconds,
        manifest.outputs.len(),
        manifest.config.output_dir().display()
    );
    Ok(())
}

fn experiment_table(a: ExperimentArgs, name: &'static str) -> CliResult<(toml::Table, Option<&'static str>, Overrides)> {
    let table = match &a.config {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    Ok((table, Some(name), a.overrides))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tubelight: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
