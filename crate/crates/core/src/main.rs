use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use recbench::atomic::{convert_csv, write_atomic_file, AtomicFileKind, FieldMapping};
use recbench::runner::bench::bench_eval;
use recbench::runner::config::parse_override;
use recbench::runner::search::SearchOptions;
use recbench::runner::{
    grid_search, load_config, parse_range_file, random_search, resume_experiment, run_experiment, ResumeOptions,
    RunError, RunOptions,
};

#[derive(Parser)]
#[command(
    name = "recbench",
    version,
    about = "Benchmarking engine for recommendation algorithms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a headed CSV file into an atomic file.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `source=name:type,...`
        #[arg(long)]
        mapping: String,
        /// Atomic file kind; defaults to the output suffix.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value = ",")]
        delimiter: char,
        #[arg(long, default_value = ",")]
        separator: char,
    },
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value` override; repeatable.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        eval_setting: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue an interrupted run from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to check against the checkpoint's hash.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume even if the config hash differs.
        #[arg(long)]
        force: bool,
    },
    /// Hyperparameter search.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Grid)]
        method: Method,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        parallel: bool,
    },
    /// Time the accelerated evaluation path against a naive loop.
    Bench {
        #[arg(long, default_value_t = 5000)]
        users: usize,
        #[arg(long, default_value_t = 10000)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 2020)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Grid,
    Random,
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>, RunError> {
    set.iter().map(|s| parse_override(s)).collect()
}

fn kind_from_name(name: &str) -> Result<AtomicFileKind, RunError> {
    AtomicFileKind::ALL
        .into_iter()
        .find(|k| k.suffix().trim_start_matches('.') == name.trim_start_matches('.'))
        .ok_or_else(|| RunError::InvalidValue {
            key: "kind".into(),
            reason: format!("unknown atomic file kind `{name}`"),
        })
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Convert {
            input,
            output,
            mapping,
            kind,
            delimiter,
            separator,
        } => {
            let kind = match kind {
                Some(k) => kind_from_name(&k)?,
                None => AtomicFileKind::from_path(&output).ok_or_else(|| RunError::InvalidValue {
                    key: "output".into(),
                    reason: "cannot infer the atomic file kind; pass --kind".into(),
                })?,
            };
            let mapping = FieldMapping::parse(&mapping)?;
            let delimiter = u8::try_from(delimiter).map_err(|_| RunError::InvalidValue {
                key: "delimiter".into(),
                reason: "must be a single-byte character".into(),
            })?;
            let table = convert_csv(&input, &mapping, kind, delimiter)?;
            write_atomic_file(&table, &output, separator)?;
            println!("wrote {} rows to {}", table.row_count(), output.display());
        }
        Command::Run {
            config,
            set,
            eval_setting,
            seed,
        } => {
            let mut ov = overrides(&set)?;
            if let Some(s) = eval_setting {
                ov.push(("eval.setting".into(), s));
            }
            if let Some(s) = seed {
                ov.push(("seed".into(), s.to_string()));
            }
            let cfg = load_config(Some(&config), &ov)?;
            let outcome = run_experiment(&cfg, &RunOptions::default())?;
            if let Some(report) = outcome.report {
                print!("{}", report.to_text());
            }
        }
        Command::Resume {
            checkpoint,
            config,
            force,
        } => {
            let config = config.map(|c| load_config(Some(&c), &[])).transpose()?;
            let outcome = resume_experiment(
                &checkpoint,
                &ResumeOptions {
                    config,
                    force,
                    run: RunOptions::default(),
                },
            )?;
            if let Some(report) = outcome.report {
                print!("{}", report.to_text());
            }
        }
        Command::Tune {
            config,
            space,
            method,
            trials,
            set,
            parallel,
        } => {
            let cfg = load_config(Some(&config), &overrides(&set)?)?;
            let space = parse_range_file(&space)?;
            let opts = SearchOptions { parallel };
            let results = match method {
                Method::Grid => grid_search(&cfg, &space, &opts)?,
                Method::Random => random_search(&cfg, &space, trials, cfg.seed(), &opts)?,
            };
            println!("rank\ttrial\tbest_valid\tassignment");
            for (rank, t) in results.iter().enumerate() {
                let a: Vec<String> = t.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{}\t{}\t{}\t{}", rank + 1, t.index, t.best_valid, a.join(" "));
            }
        }
        Command::Bench {
            users,
            items,
            k,
            repeats,
            seed,
        } => {
            let report = bench_eval(users, items, k, repeats, seed);
            print!("{}", report.to_text());
            print!("{}", report.report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('"', "'");
            eprintln!("error code={} message=\"{message}\"", e.code());
            ExitCode::FAILURE
        }
    }
}
