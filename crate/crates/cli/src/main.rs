use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::warn;

use spc_core::dataset::{self, build_benchmark, format_experiment_plans, load_experiment_plans, ExperimentPlan};
use spc_core::fixtures::write_three_room_fixture;
use spc_core::metrics::{format_deviation_table, format_report};
use spc_core::pipeline::{
    deviation_from_dirs, evaluate, validate_config, with_threads, LoadedConfig, Pipeline, PipelineError, Stage,
};

#[derive(Debug, Parser)]
#[command(name = "spc", version, about = "Synthetic labeled point clouds: scan, annotate, mix, evaluate")]
struct Cli {
    /// Pipeline configuration file (TOML). Omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output root, overriding `output` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 = one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override such as `scanner.max_dist=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Place scanner stations in every room.
    Plan,
    /// Ray-cast every station against the scene.
    Scan {
        /// Also write the true component of every point.
        #[arg(long)]
        debug: bool,
    },
    /// Transfer component labels onto the scans.
    Annotate,
    /// Transfer colors from the reference cloud.
    Colorize,
    /// Build the mixed and benchmark training-set plans.
    Mix {
        /// Proportions to plan (percent, multiple of 5); repeatable.
        #[arg(long = "proportion")]
        proportions: Vec<u32>,
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        replicates: Option<u32>,
        /// Also export every plan as a dataset under this directory.
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
    },
    /// Derive benchmark plans (synthetic scenes removed) from mix plans.
    Benchmark {
        #[arg(long, value_name = "PLANS")]
        from: PathBuf,
        /// Write the plans here instead of standard output.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Partition exported scenes into fixed-size blocks.
    Blocks {
        #[arg(long)]
        size: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long, value_name = "DIR")]
        gt: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
        /// Mixing proportion to record in the report.
        #[arg(long)]
        proportion: Option<u32>,
    },
    /// Mixing-minus-benchmark deltas from two report directories.
    Deviate {
        #[arg(long, value_name = "DIR")]
        mix: PathBuf,
        #[arg(long, value_name = "DIR")]
        bench: PathBuf,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [5, 95])]
        range: Vec<u32>,
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Class proportions and mix counts.
    Report,
    /// Run plan, scan, annotate, colorize, mix, blocks and report.
    All,
    /// Check the configuration and print it with defaults filled in.
    Validate,
    /// Write the three-room example scene, reference scan, real pool and config.
    Fixture {
        dir: PathBuf,
    },
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.overrides.clone();
    if let Some(s) = cli.seed {
        out.push(format!("seed={s}"));
    }
    if let Some(t) = cli.threads {
        out.push(format!("threads={t}"));
    }
    match &cli.command {
        Command::Scan { debug: true } => out.push("debug=true".into()),
        Command::Mix { proportions, total, replicates, .. } => {
            if !proportions.is_empty() {
                let list: Vec<String> = proportions.iter().map(u32::to_string).collect();
                out.push(format!("mixing.proportions=[{}]", list.join(",")));
            }
            if let Some(t) = total {
                out.push(format!("mixing.total={t}"));
            }
            if let Some(r) = replicates {
                out.push(format!("mixing.replicates={r}"));
            }
        }
        Command::Blocks { size, points } => {
            if let Some(s) = size {
                out.push(format!("mixing.block_size={s:?}"));
            }
            if let Some(p) = points {
                out.push(format!("mixing.points_per_block={p}"));
            }
        }
        _ => {}
    }
    out
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn load(cli: &Cli) -> Result<LoadedConfig, PipelineError> {
    let mut loaded = LoadedConfig::load(cli.config.as_deref(), &overrides(cli))?;
    if let Some(out) = &cli.out {
        loaded.set_output(out);
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let loaded = load(&cli)?;
    init_logging(&loaded.config.verbosity);
    let threads = loaded.config.threads;
    match &cli.command {
        Command::Validate => {
            let errors = validate_config(&loaded.config);
            if !errors.is_empty() {
                return Err(PipelineError::Invalid(errors));
            }
            print!("{}", loaded.snapshot.to_toml());
            Ok(())
        }
        Command::Fixture { dir } => {
            let seed = cli.seed.unwrap_or(loaded.config.seed);
            let paths = write_three_room_fixture(dir, seed).map_err(|e| PipelineError::Runtime(e.to_string()))?;
            println!("config: {}", paths.config.display());
            Ok(())
        }
        Command::Benchmark { from, output } => benchmark(from, output.as_deref()),
        Command::Eval { gt, pred, report, proportion } => with_threads(threads, || {
            let outcome = evaluate(gt.as_deref(), pred)?;
            let text = format_report(&outcome.report, *proportion, outcome.epoch);
            write_text(report, &text)?;
            if let Some(e) = outcome.epoch {
                println!("best epoch: {e} of {}", outcome.epochs.len());
            }
            println!(
                "points: {}  oa: {:.4}  oa7: {:.4}  miou: {:.4}",
                outcome.points, outcome.report.oa, outcome.report.oa7, outcome.report.miou
            );
            Ok(())
        })?,
        Command::Deviate { mix, bench, range, report } => {
            let table = deviation_from_dirs(mix, bench, (range[0], range[1]))?;
            let text = format_deviation_table(&table);
            if let Some(path) = report {
                write_text(path, &text)?;
            }
            print!("{text}");
            Ok(())
        }
        command => {
            let pipeline = Pipeline::new(loaded)?;
            with_threads(threads, || run_pipeline(&pipeline, command))?
        }
    }
}

fn run_pipeline(pipeline: &Pipeline, command: &Command) -> Result<(), PipelineError> {
    let stage = match command {
        Command::Plan => Stage::Plan,
        Command::Scan { .. } => Stage::Scan,
        Command::Annotate => Stage::Annotate,
        Command::Colorize => Stage::Colorize,
        Command::Mix { .. } => Stage::Mix,
        Command::Blocks { .. } => Stage::Blocks,
        Command::Report => Stage::Report,
        Command::All => {
            let manifest = pipeline.run_all()?;
            for s in &manifest.stages {
                println!("{:<9} {:>8.2} s", s.name, s.seconds);
            }
            println!("output: {}", pipeline.out().display());
            return Ok(());
        }
        other => unreachable!("{other:?} is not a pipeline stage"),
    };
    let record = pipeline.run_stage(stage)?;
    println!("{:<9} {:>8.2} s", record.name, record.seconds);
    if let Command::Mix { export: Some(dir), .. } = command {
        let n = pipeline.export_plans(dir)?;
        println!("exported {n} plan(s) to {}", dir.display());
    }
    Ok(())
}

fn benchmark(from: &Path, output: Option<&Path>) -> Result<(), PipelineError> {
    let plans = load_experiment_plans(from)?;
    let mut out = Vec::new();
    let mut first_err = None;
    for plan in &plans {
        if let ExperimentPlan::Mix(m) = plan {
            match build_benchmark(m) {
                Ok(b) => out.push(ExperimentPlan::Benchmark(b)),
                Err(e) => {
                    warn!("{}: {e}", m.name());
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(match first_err {
            Some(e) => e.into(),
            None => PipelineError::Runtime(format!("{}: no mix plans", from.display())),
        });
    }
    let text = format_experiment_plans(&out);
    match output {
        Some(path) => {
            dataset::write_file(path, text.as_bytes())?;
            println!("{} benchmark plan(s) written to {}", out.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: {first}");
            eprintln!("{}", text.lines().skip(1).collect::<Vec<_>>().join("\n").trim());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
