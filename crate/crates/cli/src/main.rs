use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tte_core::config::{Precision, Settings};
use tte_core::geo::{dataset_stats, filter_dataset, PathRecord, RoadNetwork};
use tte_core::io::{load_network, load_paths, save_network, save_paths};
use tte_core::model::Model;
use tte_core::raster::Rasterizer;
use tte_core::synth::{generate_network, generate_paths, true_traffic_table};
use tte_core::traffic::{build_traffic_table, TrafficTable};
use tte_core::train::{
    evaluate, export_feature_maps, load_checkpoint, metrics, predict, resolve_output_scales,
    save_checkpoint, split_dataset, train, write_feature_maps, write_history, Context, Dataset,
    MetricsReport,
};
use tte_core::{Error, Scalar};

#[derive(Parser)]
#[command(
    name = "tte",
    version,
    about = "Travel time estimation from path images"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Settings file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory holding nodes.csv and edges.csv.
    #[arg(long)]
    network: PathBuf,
    /// Path records, one JSON object per line.
    #[arg(long)]
    paths: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city: network, paths and its true traffic table.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Filter records by duration and length consistency and print dataset statistics.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
        /// Filtered records (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the hourly per-edge speed table from records.
    Traffic {
        #[command(flatten)]
        data: DataArgs,
        /// Traffic table CSV.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Split, train, and write checkpoint, history and the held-out test set.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Traffic table CSV.
        #[arg(long)]
        traffic: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Report RMSE, MAE and MAPE from a checkpoint or a predictions file.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Model checkpoint (needs --traffic).
        #[arg(long, conflicts_with = "predictions", requires = "traffic")]
        checkpoint: Option<PathBuf>,
        /// Traffic table CSV.
        #[arg(long)]
        traffic: Option<PathBuf>,
        /// CSV with columns id,estimate_s.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Metrics CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write per-record travel time estimates.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// Traffic table CSV.
        #[arg(long)]
        traffic: PathBuf,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Predictions CSV (id,estimate_s).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Export feature maps of one window of one record.
    Inspect {
        #[command(flatten)]
        data: DataArgs,
        /// Traffic table CSV.
        #[arg(long)]
        traffic: PathBuf,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for the pixmaps.
        #[arg(long)]
        out: PathBuf,
        /// Record id (default: first record).
        #[arg(long)]
        record: Option<u64>,
        /// Window index within the record.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Max+avg layer, 0 = first.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

type Result<T> = std::result::Result<T, Error>;

fn settings(args: &ConfigArgs, base: Option<Settings>) -> Result<Settings> {
    let mut s = base.unwrap_or_default();
    if let Some(path) = &args.config {
        s.apply_text(&fs::read_to_string(path)?)?;
    }
    for kv in &args.overrides {
        s.apply_override(kv)?;
    }
    s.validate()?;
    Ok(s)
}

fn load_data(data: &DataArgs) -> Result<(RoadNetwork, Vec<PathRecord>)> {
    Ok((load_network(&data.network)?, load_paths(&data.paths)?))
}

fn load_traffic(path: &Path, net: &RoadNetwork) -> Result<TrafficTable> {
    TrafficTable::read_csv(std::io::BufReader::new(fs::File::open(path)?), net)
}

fn save_traffic(table: &TrafficTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_metrics(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    println!("{report}");
    if let Some(path) = out {
        report.write_csv(BufWriter::new(fs::File::create(path)?))?;
    }
    Ok(())
}

fn context<'a>(net: &'a RoadNetwork, table: &'a TrafficTable, s: &Settings) -> Result<Context<'a>> {
    Ok(Context {
        rasterizer: Rasterizer::new(net, table, s.raster)?,
        windowing: s.windowing,
        tz_offset_s: s.tz_offset_s,
    })
}

fn run_train<T: Scalar>(
    s: &Settings,
    net: &RoadNetwork,
    records: &[PathRecord],
    table: &TrafficTable,
    out: &Path,
) -> Result<()> {
    let (train_set, val_set, test_set) = split_dataset(records, s.train.split, s.train.seed)?;
    fs::create_dir_all(out)?;
    save_paths(&test_set, &out.join("test.jsonl"))?;
    let ctx = context(net, table, s)?;
    let mut model_cfg = s.model.clone();
    resolve_output_scales(&mut model_cfg, &train_set, &ctx)?;
    let model = Model::<T>::new(model_cfg, s.train.seed)?;
    let s_max = s.model.temporal.s_max;
    let train_data = Dataset::new(&train_set, &ctx, s_max, s.train.cache_size)?;
    let val_data = Dataset::new(&val_set, &ctx, s_max, s.train.cache_size)?;
    eprintln!(
        "training on {} paths, validating on {}, {} parameters",
        train_set.len(),
        val_set.len(),
        model.parameter_count()
    );
    let outcome = train(model, &train_data, &val_data, &ctx, &s.train, |row| {
        eprintln!(
            "iteration {}: train loss {:.5}, val MAE {:.2} s, MAPE {:.2} %, RMSE {:.2} s",
            row.iteration, row.train_loss, row.val_mae, row.val_mape, row.val_rmse
        );
    })?;
    write_history(
        BufWriter::new(fs::File::create(out.join("history.csv"))?),
        &outcome.history,
    )?;
    save_checkpoint(
        &out.join("checkpoint.bin"),
        s,
        &outcome.model,
        outcome.best_iteration as u64,
    )?;
    println!(
        "best validation MAE at iteration {}",
        outcome.best_iteration
    );
    if !test_set.is_empty() {
        let test_data = Dataset::new(&test_set, &ctx, s_max, 0)?;
        write_metrics(&evaluate(&outcome.model, &test_data, &ctx)?, None)?;
    }
    Ok(())
}

/// Checkpoint settings, then the config file and overrides on top.
fn checkpoint_settings<T: Scalar>(path: &Path, cfg: &ConfigArgs) -> Result<(Settings, Model<T>)> {
    let (saved, model, _) = load_checkpoint::<T>(path)?;
    let s = settings(cfg, Some(saved))?;
    if s.model != model.config {
        return Err(Error::Config(
            "model hyperparameters cannot be overridden for a trained checkpoint".into(),
        ));
    }
    Ok((s, model))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let (s, _, _) = load_checkpoint::<f64>(path)?;
    Ok(s.precision)
}

fn run_predict<T: Scalar>(
    data: &DataArgs,
    traffic: &Path,
    checkpoint: &Path,
    out: &Path,
    cfg: &ConfigArgs,
) -> Result<()> {
    let (s, model) = checkpoint_settings::<T>(checkpoint, cfg)?;
    let (net, records) = load_data(data)?;
    let table = load_traffic(traffic, &net)?;
    let ctx = context(&net, &table, &s)?;
    let ds = Dataset::new(&records, &ctx, s.model.temporal.s_max, 0)?;
    let preds = predict(&model, &ds, &ctx)?;
    let mut w = BufWriter::new(fs::File::create(out)?);
    writeln!(w, "id,estimate_s")?;
    for (r, p) in records.iter().zip(&preds) {
        writeln!(w, "{},{}", r.id, p)?;
    }
    w.flush()?;
    Ok(())
}

fn run_eval_checkpoint<T: Scalar>(
    data: &DataArgs,
    traffic: &Path,
    checkpoint: &Path,
    out: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<()> {
    let (s, model) = checkpoint_settings::<T>(checkpoint, cfg)?;
    let (net, records) = load_data(data)?;
    let table = load_traffic(traffic, &net)?;
    let ctx = context(&net, &table, &s)?;
    let ds = Dataset::new(&records, &ctx, s.model.temporal.s_max, 0)?;
    write_metrics(&evaluate(&model, &ds, &ctx)?, out)
}

fn run_eval_predictions(data: &DataArgs, predictions: &Path, out: Option<&Path>) -> Result<()> {
    let records = load_paths(&data.paths)?;
    let mut reader = csv::Reader::from_path(predictions)?;
    let mut by_id = std::collections::BTreeMap::new();
    for row in reader.deserialize::<(u64, f64)>() {
        let (id, est) = row?;
        by_id.insert(id, est);
    }
    let mut preds = Vec::with_capacity(records.len());
    for r in &records {
        let p = by_id
            .get(&r.id)
            .ok_or_else(|| Error::Validation(format!("no prediction for record {}", r.id)))?;
        preds.push(*p);
    }
    let truths: Vec<f64> = records.iter().map(PathRecord::total_time_s).collect();
    write_metrics(&metrics(&preds, &truths)?, out)
}

#[allow(clippy::too_many_arguments)]
fn run_inspect<T: Scalar>(
    data: &DataArgs,
    traffic: &Path,
    checkpoint: &Path,
    out: &Path,
    record: Option<u64>,
    window: usize,
    layer: usize,
    cfg: &ConfigArgs,
) -> Result<()> {
    let (s, model) = checkpoint_settings::<T>(checkpoint, cfg)?;
    let (net, records) = load_data(data)?;
    let table = load_traffic(traffic, &net)?;
    let rec = match record {
        Some(id) => records.iter().find(|r| r.id == id),
        None => records.first(),
    }
    .ok_or_else(|| Error::Validation("record not found".into()))?;
    let ctx = context(&net, &table, &s)?;
    let windows = tte_core::raster::slide_windows(rec, &s.windowing, &net)?;
    let w = windows.get(window).ok_or_else(|| {
        Error::Validation(format!("record {} has {} windows", rec.id, windows.len()))
    })?;
    let hour = tte_core::traffic::local_hour(rec.departure_time, s.tz_offset_s);
    let image = ctx.rasterizer.rasterize::<T>(w, rec, hour)?;
    let maps = export_feature_maps(&model, &image, layer)?;
    let files = write_feature_maps(
        out,
        &format!("record{}_window{}_layer{}", rec.id, window, layer),
        &maps,
    )?;
    for c in 0..image.d() {
        let path = out.join(tte_core::raster::dump_file_name(rec.id, window, c));
        tte_core::raster::write_channel_ppm(&image, c, BufWriter::new(fs::File::create(path)?))?;
    }
    println!("wrote {} feature maps to {}", files.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, cfg } => {
            let s = settings(&cfg, None)?;
            let net = generate_network(&s.synth)?;
            let records = generate_paths(&net, &s.synth)?;
            fs::create_dir_all(&out)?;
            save_network(&net, &out)?;
            save_paths(&records, &out.join("paths.jsonl"))?;
            save_traffic(
                &true_traffic_table(&net, &s.synth)?,
                &out.join("traffic.csv"),
            )?;
            println!(
                "{} nodes, {} edges, {} paths written to {}",
                net.nodes.len(),
                net.edges.len(),
                records.len(),
                out.display()
            );
        }
        Command::Prepare { data, out } => {
            let (net, records) = load_data(&data)?;
            let kept = filter_dataset(&records, &net);
            if kept.is_empty() {
                eprintln!("warning: no records passed filtering");
            }
            save_paths(&kept, &out)?;
            println!("{}", dataset_stats(&kept, &net)?);
        }
        Command::Traffic { data, out, cfg } => {
            let s = settings(&cfg, None)?;
            let (net, records) = load_data(&data)?;
            save_traffic(&build_traffic_table(&records, &net, s.tz_offset_s)?, &out)?;
        }
        Command::Train {
            data,
            traffic,
            out,
            cfg,
        } => {
            let s = settings(&cfg, None)?;
            let (net, records) = load_data(&data)?;
            let table = load_traffic(&traffic, &net)?;
            match s.precision {
                Precision::F32 => run_train::<f32>(&s, &net, &records, &table, &out)?,
                Precision::F64 => run_train::<f64>(&s, &net, &records, &table, &out)?,
            }
        }
        Command::Eval {
            data,
            checkpoint,
            traffic,
            predictions,
            out,
            cfg,
        } => match (checkpoint, predictions) {
            (Some(ckpt), None) => {
                let traffic = traffic.expect("clap enforces --traffic");
                match checkpoint_precision(&ckpt)? {
                    Precision::F32 => {
                        run_eval_checkpoint::<f32>(&data, &traffic, &ckpt, out.as_deref(), &cfg)?
                    }
                    Precision::F64 => {
                        run_eval_checkpoint::<f64>(&data, &traffic, &ckpt, out.as_deref(), &cfg)?
                    }
                }
            }
            (None, Some(pred)) => run_eval_predictions(&data, &pred, out.as_deref())?,
            _ => {
                return Err(Error::Config(
                    "eval needs exactly one of --checkpoint or --predictions".into(),
                ))
            }
        },
        Command::Predict {
            data,
            traffic,
            checkpoint,
            out,
            cfg,
        } => match checkpoint_precision(&checkpoint)? {
            Precision::F32 => run_predict::<f32>(&data, &traffic, &checkpoint, &out, &cfg)?,
            Precision::F64 => run_predict::<f64>(&data, &traffic, &checkpoint, &out, &cfg)?,
        },
        Command::Inspect {
            data,
            traffic,
            checkpoint,
            out,
            record,
            window,
            layer,
            cfg,
        } => match checkpoint_precision(&checkpoint)? {
            Precision::F32 => run_inspect::<f32>(
                &data,
                &traffic,
                &checkpoint,
                &out,
                record,
                window,
                layer,
                &cfg,
            )?,
            Precision::F64 => run_inspect::<f64>(
                &data,
                &traffic,
                &checkpoint,
                &out,
                record,
                window,
                layer,
                &cfg,
            )?,
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
