mod args;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ldtf_core::config::RunConfig;
use ldtf_core::formats::SplitTag;
use ldtf_core::pipeline::{self, Artifacts, PipelineError, SynthOptions};

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    Ok(config)
}

fn or_default(explicit: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    explicit.clone().unwrap_or(default)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => {
            a.paths.apply(&mut config);
            let options = SynthOptions {
                classes: a.classes.clone().map_or_else(|| SynthOptions::default().classes, |c| c.0),
                beats_per_class: a.beats_per_class,
                num_records: a.num_records,
                noise_fraction: a.noise_fraction,
                rr_interval: a.rr_interval,
                seed: a.seed,
            };
            let s = pipeline::run_synth(&options, &config.paths.records_dir, &config.paths.annotations_dir)?;
            println!(
                "wrote {} records ({} beats) to {} and {}",
                s.records.len(),
                s.beats,
                config.paths.records_dir.display(),
                config.paths.annotations_dir.display()
            );
        }
        Command::Ingest(a) => {
            a.paths.apply(&mut config);
            a.out.apply(&mut config);
            a.classes.apply(&mut config);
            a.preprocess.apply(&mut config);
            let art = Artifacts::in_dir(&config.paths.output_dir);
            let segments = or_default(&a.segments, art.segments);
            let manifest = or_default(&a.manifest, art.manifest);
            let s = pipeline::run_ingest(&config, &segments, &manifest)?;
            print!("{}", s.table());
            if s.segments_written == 0 {
                log::warn!("no beats could be extracted; the manifest is empty");
            }
            println!(
                "{} segments from {} records -> {} and {}",
                s.segments_written,
                s.records,
                segments.display(),
                manifest.display()
            );
        }
        Command::Embed(a) => {
            a.out.apply(&mut config);
            a.lde.apply(&mut config);
            let art = Artifacts::in_dir(&config.paths.output_dir);
            let segments = or_default(&a.segments, art.segments);
            let out = or_default(&a.embeddings, art.embeddings);
            let n = pipeline::run_embed(&config, &segments, &out, a.csv.as_deref())?;
            println!("{n} embeddings of {}×{} -> {}", config.model.d, config.model.seq_len, out.display());
        }
        Command::Train(a) => {
            a.out.apply(&mut config);
            a.classes.apply(&mut config);
            a.model.apply(&mut config);
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            if let Some(lr) = a.lr {
                config.train.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                config.train.batch_size = b;
            }
            let art = Artifacts::in_dir(&config.paths.output_dir);
            let checkpoint = or_default(&a.checkpoint, art.checkpoint);
            let history = or_default(&a.history, art.history);
            let s = pipeline::run_train(
                &config,
                &or_default(&a.embeddings, art.embeddings),
                &or_default(&a.manifest, art.manifest),
                &checkpoint,
                &history,
            )?;
            println!(
                "loss {:.6} -> {:.6} over {} epochs; checkpoint {}, history {}",
                s.initial_loss,
                s.final_loss,
                s.history.epochs.len(),
                checkpoint.display(),
                history.display()
            );
        }
        Command::Eval(a) => {
            a.out.apply(&mut config);
            a.classes.apply(&mut config);
            let split: SplitTag = a.split.parse().map_err(PipelineError::Usage)?;
            let art = Artifacts::in_dir(&config.paths.output_dir);
            let report_path = or_default(&a.report, art.report);
            let report = pipeline::run_eval(
                &config,
                &or_default(&a.checkpoint, art.checkpoint),
                &or_default(&a.embeddings, art.embeddings),
                &or_default(&a.manifest, art.manifest),
                split,
                &report_path,
            )?;
            print!("{}", report.to_table());
            println!("report -> {}", report_path.display());
        }
        Command::Params(a) => {
            a.classes.apply(&mut config);
            a.model.apply(&mut config);
            config.validate()?;
            print!("{}", pipeline::params_report(&config));
        }
    }
    Ok(())
}
