use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperenergy::checkpoint::{Checkpoint, ResumeFile, TOOL_VERSION};
use hyperenergy::data::{
    ingest_csv, make_windows, prepare, synth_generate, ColumnMap, GapPolicy, PreparedData, Profile, Split,
    TimeSeries, extract_calendar_features, TIMESTAMP_FORMAT,
};
use hyperenergy::eval::{
    ablation_run, evaluate, write_ablation_csv, write_ablation_runs_csv, write_metrics_csv, write_predictions_csv,
};
use hyperenergy::train::{grid_search, GridOptions, GridRecord, Trainer, RESULTS_HEADER};
use hyperenergy::{Error, HyperEnergyModel, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hyperenergy", version, about = "Kernelized hypernetwork forecasting of hourly energy use")]
struct Cli {
    /// Parallel trials for gridsearch and ablate; overrides `jobs` in the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic hourly consumption series as CSV.
    Synth {
        #[arg(long)]
        profile: Profile,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Relative noise level; 0 gives a noiseless series.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes checkpoint.json, history.csv and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Continue from train_state.json in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop this session after the given total epoch count; resume later.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a checkpoint on every window of a CSV series.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics.csv and predictions.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// chrono format of the timestamp column; ISO-8601 when unset.
        #[arg(long)]
        timestamp_format: Option<String>,
    },
    /// Train every grid point and rank them by validation SMAPE.
    Gridsearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Enumerate the grid without training.
        #[arg(long)]
        dry_run: bool,
        /// Skip points already in grid_results.csv.
        #[arg(long)]
        resume: bool,
    },
    /// Train each variant under each seed and compare median test metrics.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Forecast the hours after one window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Last hour of the input window; the final row of the file when unset.
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        timestamp_format: Option<String>,
        /// CSV destination; stdout when unset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Numerical(_) => 4,
        Error::Checkpoint(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let result = match cli.command {
        Command::Synth {
            profile,
            days,
            seed,
            noise,
            out,
        } => cmd_synth(profile, days, seed, noise, &out),
        Command::Train {
            config,
            output_dir,
            resume,
            stop_after,
        } => cmd_train(&config, output_dir, resume, stop_after),
        Command::Evaluate {
            checkpoint,
            data,
            out,
            stride,
            timestamp_format,
        } => cmd_evaluate(&checkpoint, &data, &out, stride, timestamp_format),
        Command::Gridsearch {
            config,
            output_dir,
            dry_run,
            resume,
        } => cmd_gridsearch(&config, output_dir, jobs, dry_run, resume),
        Command::Ablate { config, output_dir } => cmd_ablate(&config, output_dir, jobs),
        Command::Predict {
            checkpoint,
            data,
            end,
            timestamp_format,
            out,
        } => cmd_predict(&checkpoint, &data, end.as_deref(), timestamp_format, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn stamp(config_hash: &str) -> Vec<String> {
    vec![format!("config_hash={config_hash}"), format!("tool_version={TOOL_VERSION}")]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_config(path: &Path, output_dir: Option<PathBuf>, jobs: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        cfg.jobs = j;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<PreparedData> {
    let series = cfg.load_series()?;
    let data = prepare(&series, &cfg.window_config())?;
    eprintln!(
        "data: {} hours, windows train={} val={} test={}",
        series.len(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    Ok(data)
}

fn cmd_synth(profile: Profile, days: usize, seed: u64, noise: f64, out: &Path) -> Result<()> {
    let series = synth_generate(profile, days, seed, noise)?;
    let args = serde_json::json!({ "profile": profile, "days": days, "seed": seed, "noise": noise });
    let hash = hyperenergy::config::hash_json(&args);
    let mut comments = stamp(&hash);
    comments.push(format!("synth profile={profile} days={days} seed={seed} noise={noise}"));
    series.write_csv(create(out)?, &comments)?;
    eprintln!("wrote {} rows to {}", series.len(), out.display());
    Ok(())
}

fn cmd_train(config: &Path, output_dir: Option<PathBuf>, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let cfg = load_config(config, output_dir, None)?;
    let hash = cfg.hash();
    let data = load_data(&cfg)?;
    let spec = cfg.model_spec();
    let model = HyperEnergyModel::build(&spec, cfg.seed, Some(&data.train.inputs))?;
    let state_path = cfg.output_dir.join("train_state.json");
    let mut trainer = if resume {
        let file = ResumeFile::load(&state_path, &hash)?;
        eprintln!("resuming after epoch {}", file.state.completed_epochs);
        Trainer::resume(model, &cfg.train, file.state)?
    } else {
        Trainer::new(model, &cfg.train, cfg.seed)?
    };
    let limit = stop_after.unwrap_or(usize::MAX);
    while !trainer.is_finished() && trainer.completed_epochs() < limit {
        trainer.epoch(&data.train, &data.val, &data.scaler)?;
        let e = trainer.history().epochs.last().expect("an epoch just finished");
        eprintln!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_smape {:.3}  lr {:.2e}",
            e.epoch, e.train_loss, e.val_loss, e.val_smape, e.learning_rate
        );
        ResumeFile::new(trainer.state(), &hash).save(&state_path)?;
    }
    let comments = stamp(&hash);
    trainer
        .history()
        .write_csv(create(&cfg.output_dir.join("history.csv"))?, &comments)?;
    let best = trainer.best_model();
    Checkpoint::from_model(&best, Some(&data.scaler), &data.features, &hash)
        .save(&cfg.output_dir.join("checkpoint.json"))?;
    let batch = cfg.train.eval_batch_size;
    let val = evaluate(&best, &data.val, &data.scaler, batch)?;
    let test = evaluate(&best, &data.test, &data.scaler, batch)?;
    write_metrics_csv(
        create(&cfg.output_dir.join("metrics.csv"))?,
        &comments,
        &[val.report.clone(), test.report.clone()],
    )?;
    write_predictions_csv(
        create(&cfg.output_dir.join("test_predictions.csv"))?,
        &comments,
        &test.predictions,
        spec.variant,
    )?;
    match trainer.history().stop_reason {
        Some(reason) => eprintln!(
            "stopped ({}) after {} epochs; best epoch {}",
            reason.name(),
            trainer.completed_epochs(),
            trainer.history().best_epoch
        ),
        None => eprintln!(
            "paused after {} epochs; continue with --resume",
            trainer.completed_epochs()
        ),
    }
    println!(
        "test mae={:.4} rmse={:.4} smape={:.4}",
        test.report.mae, test.report.rmse, test.report.smape
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, HyperEnergyModel)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.to_model()?;
    if ck.scaler.is_none() {
        return Err(Error::Checkpoint(format!("{} carries no scaler", path.display())));
    }
    Ok((ck, model))
}

fn read_series(path: &Path, timestamp_format: Option<String>) -> Result<TimeSeries> {
    let columns = ColumnMap {
        timestamp_format,
        ..ColumnMap::default()
    };
    ingest_csv(path, &columns, GapPolicy::Reject)
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, out: &Path, stride: usize, timestamp_format: Option<String>) -> Result<()> {
    let (ck, model) = load_checkpoint(checkpoint)?;
    let scaler = ck.scaler.as_ref().expect("checked on load");
    let series = read_series(data, timestamp_format)?;
    let table = extract_calendar_features(&series, &ck.features)?;
    let windows = make_windows(&table, scaler, model.spec.window, model.spec.horizon, stride, Split::Test)?;
    let eval = evaluate(&model, &windows, scaler, 256)?;
    let comments = stamp(&ck.config_hash);
    write_metrics_csv(create(&out.join("metrics.csv"))?, &comments, &[eval.report.clone()])?;
    write_predictions_csv(create(&out.join("predictions.csv"))?, &comments, &eval.predictions, model.spec.variant)?;
    println!(
        "windows={} mae={:.4} rmse={:.4} smape={:.4}",
        windows.len(),
        eval.report.mae,
        eval.report.rmse,
        eval.report.smape
    );
    Ok(())
}

fn write_ranking(path: &Path, comments: &[String], ranking: &[GridRecord]) -> Result<()> {
    use std::io::Write;
    let mut out = create(path)?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in ranking {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_gridsearch(config: &Path, output_dir: Option<PathBuf>, jobs: Option<usize>, dry_run: bool, resume: bool) -> Result<()> {
    let cfg = load_config(config, output_dir, jobs)?;
    let spec = cfg.model_spec();
    let space = cfg.grid.for_variant(spec.variant);
    if dry_run {
        println!("{} combinations for {}", space.len(), spec.variant);
        for p in space.points() {
            println!(
                "{} hidden_units={} optimizer={:?} loss={:?} degree={} gamma={} activation={:?}",
                p.index, p.hidden_units, p.optimizer, p.loss, p.degree, p.gamma, p.activation
            );
        }
        return Ok(());
    }
    let hash = cfg.hash();
    let data = load_data(&cfg)?;
    let opts = GridOptions {
        jobs: cfg.jobs,
        results: Some(cfg.output_dir.join("grid_results.csv")),
        resume,
        config_hash: hash.clone(),
    };
    eprintln!("grid: {} combinations, {} job(s)", space.len(), cfg.jobs);
    let outcome = grid_search(&cfg.grid, &spec, &cfg.train, &data, cfg.seed, &opts)?;
    let comments = stamp(&hash);
    write_ranking(&cfg.output_dir.join("grid_ranking.csv"), &comments, &outcome.ranking)?;
    if let Some(best) = &outcome.best {
        Checkpoint::from_model(best, Some(&data.scaler), &data.features, &hash)
            .save(&cfg.output_dir.join("best_checkpoint.json"))?;
    }
    match outcome.ranking.first().filter(|r| r.is_ok()) {
        Some(top) => println!(
            "best: index={} hidden_units={} optimizer={:?} loss={:?} degree={} gamma={} activation={:?} val_smape={:.4}",
            top.index, top.hidden_units, top.optimizer, top.loss, top.degree, top.gamma, top.activation, top.val_smape
        ),
        None => println!("best: <none> (every combination failed)"),
    }
    Ok(())
}

fn cmd_ablate(config: &Path, output_dir: Option<PathBuf>, jobs: Option<usize>) -> Result<()> {
    let cfg = load_config(config, output_dir, jobs)?;
    let ablation = cfg
        .ablation
        .clone()
        .ok_or_else(|| Error::Config("the config has no [ablation] table".into()))?;
    let hash = cfg.hash();
    let data = load_data(&cfg)?;
    let log = |run: &hyperenergy::eval::AblationRun| match &run.outcome {
        Ok(m) => eprintln!(
            "run variant={} seed={} test_smape={:.4} test_mae={:.4} epochs={}",
            run.variant, run.seed, m.test.smape, m.test.mae, m.epochs
        ),
        Err(e) => eprintln!("run variant={} seed={} failed: {e}", run.variant, run.seed),
    };
    let table = ablation_run(&data, &cfg.model_spec(), &cfg.train, &ablation, cfg.jobs, Some(&log))?;
    let comments = stamp(&hash);
    write_ablation_csv(create(&cfg.output_dir.join("ablation_summary.csv"))?, &comments, &table)?;
    write_ablation_runs_csv(create(&cfg.output_dir.join("ablation_runs.csv"))?, &comments, &table)?;
    for s in &table.summary {
        match s.smape {
            Some(sm) => println!(
                "{:<32} median_smape={:.4} min={:.4} max={:.4} failed={}/{}",
                s.variant.tag(),
                sm.median,
                sm.min,
                sm.max,
                s.failed,
                s.runs
            ),
            None => println!("{:<32} all {} runs failed", s.variant.tag(), s.runs),
        }
    }
    Ok(())
}

fn cmd_predict(
    checkpoint: &Path,
    data: &Path,
    end: Option<&str>,
    timestamp_format: Option<String>,
    out: Option<&Path>,
) -> Result<()> {
    let (ck, model) = load_checkpoint(checkpoint)?;
    let scaler = ck.scaler.as_ref().expect("checked on load");
    let series = read_series(data, timestamp_format.clone())?;
    let table = extract_calendar_features(&series, &ck.features)?;
    let n = model.spec.window;
    let last = match end {
        Some(s) => {
            let ts = hyperenergy::data::parse_timestamp(s, timestamp_format.as_deref())?;
            table
                .timestamps
                .iter()
                .position(|t| *t == ts)
                .ok_or_else(|| Error::Data(format!("{s} is not in {}", data.display())))?
        }
        None => table.timestamps.len() - 1,
    };
    if last + 1 < n {
        return Err(Error::Data(format!("need {n} hours up to the window end, found {}", last + 1)));
    }
    let rows: Vec<f64> = (last + 1 - n..=last).flat_map(|i| table.row(i).to_vec()).collect();
    let scaled = scaler.features.transform_rows(&rows);
    let inputs = hyperenergy::autodiff::Tensor::new(&[1, n, ck.features.len()], scaled)?;
    let pred = model.predict(&inputs, 1)?;
    let start = table.timestamps[last];

    let write = |w: &mut dyn std::io::Write| -> Result<()> {
        writeln!(w, "# config_hash={}", ck.config_hash)?;
        writeln!(w, "# tool_version={TOOL_VERSION}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["step", "timestamp", "predicted"])?;
        for (i, &v) in pred.data().iter().enumerate() {
            let ts = start + chrono::TimeDelta::hours(i as i64 + 1);
            csv.write_record([
                i.to_string(),
                ts.format(TIMESTAMP_FORMAT).to_string(),
                scaler.unscale_target(v).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    };
    match out {
        Some(path) => write(&mut create(path)?),
        None => write(&mut std::io::stdout().lock()),
    }
}
