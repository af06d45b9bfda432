use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use ndarray_npy::WriteNpyExt;
use radar_reloc::checkpoint::Checkpoint;
use radar_reloc::data::format::{read_scan, ScanDtype};
use radar_reloc::data::{build_benchmark, BenchmarkSpec, DatasetManifest, Split};
use radar_reloc::eval::evaluate_manifest;
use radar_reloc::geometry::{polar_to_cartesian_image, CartesianSpec};
use radar_reloc::plot::{emit_plots, render_plots};
use radar_reloc::train::{train_from_config, TrainConfig, TrainOptions};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Radar relocalization toolkit.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Root directory for outputs when a command's --output is not given.
    #[arg(long, global = true, env = "RADAR_RELOC_OUT", default_value = "out")]
    out_root: PathBuf,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert polar scans (.npy + .meta) to Cartesian images.
    Convert(ConvertArgs),
    /// Generate a synthetic multi-traversal dataset.
    Simulate(SimulateArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write error tables and plots.
    Eval(EvalArgs),
    /// Re-render plots from the CSV tables in a directory.
    Plot(PlotArgs),
}

/// Config file plus `key=value` overrides shared by the commands that take one.
#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set model.attention_mode=off`.
    /// Values are parsed as TOML, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct ConvertArgs {
    /// A scan file or a directory of them.
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    U8,
    F32,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    traversals: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// nested | plain | off
    #[arg(long)]
    attention: Option<String>,
    /// dense | residual
    #[arg(long)]
    encoder: Option<String>,
    /// Drop the relative-pose terms from the loss.
    #[arg(long)]
    no_geometric_constraints: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the manifest recorded in the checkpoint.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding frames.csv and the CDF tables.
    dir: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let out_root = cli.out_root.clone();
    match cli.command {
        Command::Convert(a) => convert(a, &out_root),
        Command::Simulate(a) => simulate(a, &out_root),
        Command::Train(a) => train(a, &out_root),
        Command::Eval(a) => eval(a, &out_root),
        Command::Plot(a) => {
            for f in render_plots(&a.dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables.
fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).context("empty config key")?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("config key '{p}' is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Reads the config file (if any), makes `path_keys` relative to it
/// absolute, then applies the overrides in order.
fn layered_config<T: DeserializeOwned>(
    args: &ConfigArgs,
    path_keys: &[&str],
    extra: Vec<(String, Value)>,
) -> Result<T> {
    let mut table = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut t: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            let dir = path.parent().unwrap_or(Path::new(""));
            for key in path_keys {
                if let Some(Value::String(p)) = t.get(*key) {
                    if Path::new(p).is_relative() {
                        let abs = dir.join(p).to_string_lossy().into_owned();
                        t.insert(key.to_string(), Value::String(abs));
                    }
                }
            }
            t
        }
        None => Table::new(),
    };
    for s in &args.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("override '{s}' is not KEY=VALUE"))?;
        set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    for (k, v) in extra {
        set_dotted(&mut table, &k, v)?;
    }
    Ok(Value::Table(table).try_into().context("invalid configuration")?)
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn convert(a: ConvertArgs, out_root: &Path) -> Result<()> {
    let spec: CartesianSpec = layered_config(&a.config, &[], Vec::new())?;
    let out = a.output.unwrap_or_else(|| out_root.join("cartesian"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .with_context(|| format!("listing {}", a.input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "npy"))
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    if inputs.is_empty() {
        bail!("no .npy scans in {}", a.input.display());
    }
    for path in &inputs {
        let scan = read_scan(path)?;
        let img = polar_to_cartesian_image(&scan, &spec)?;
        let dest = out.join(path.file_name().context("scan path has no file name")?);
        write_image(&dest, &img)?;
    }
    println!("converted {} scans into {}", inputs.len(), out.display());
    Ok(())
}

fn write_image(path: &Path, img: &radar_reloc::geometry::CartesianImage) -> Result<()> {
    let arr = Array2::from_shape_vec(
        (img.height(), img.width()),
        img.pixels().iter().map(|&x| x as f32).collect(),
    )?;
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    arr.write_npy(std::io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: SimulateArgs, out_root: &Path) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(s) = a.seed {
        extra.push(("seed".into(), Value::Integer(s as i64)));
    }
    if let Some(t) = a.traversals {
        extra.push(("traversals".into(), Value::Integer(t as i64)));
    }
    if let Some(f) = a.frames {
        extra.push(("frames_per_traversal".into(), Value::Integer(f as i64)));
    }
    let spec: BenchmarkSpec = layered_config(&a.config, &[], extra)?;
    let out = a.output.unwrap_or_else(|| out_root.join("dataset"));
    let dtype = match a.dtype {
        DtypeArg::U8 => ScanDtype::U8,
        DtypeArg::F32 => ScanDtype::F32,
    };
    let manifest = build_benchmark(&spec)?.write(&out, dtype)?;
    for s in &manifest.sequences {
        println!("{} ({}): {}", s.name, s.split, out.join(&s.scan_dir).display());
    }
    println!("manifest: {}", out.join(radar_reloc::data::format::MANIFEST_FILE).display());
    Ok(())
}

fn train(a: TrainArgs, out_root: &Path) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(m) = &a.manifest {
        extra.push(("manifest".into(), path_value(m)));
    }
    if let Some(e) = a.epochs {
        extra.push(("epochs".into(), Value::Integer(e as i64)));
    }
    if let Some(lr) = a.lr {
        extra.push(("learning_rate".into(), Value::Float(lr)));
    }
    if let Some(s) = a.seed {
        extra.push(("seed".into(), Value::Integer(s as i64)));
    }
    if let Some(m) = &a.attention {
        let mode: radar_reloc::attention::AttentionMode = m.parse()?;
        extra.push(("model.attention_mode".into(), Value::try_from(mode)?));
    }
    if let Some(e) = &a.encoder {
        let v: radar_reloc::network::EncoderVariant = e.parse()?;
        extra.push(("model.encoder.variant".into(), Value::try_from(v)?));
    }
    if a.no_geometric_constraints {
        extra.push(("loss.geometric_constraints".into(), Value::Boolean(false)));
    }
    let config: TrainConfig = layered_config(&a.config, &["manifest"], extra)?;
    config.validate()?;
    let out = a.output.unwrap_or_else(|| out_root.join("run"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()?).context("writing resolved config")?;
    let options = TrainOptions {
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    let outcome = train_from_config(&config, &options)?;
    let mut w = String::from("epoch,loss,global_loss,relative_loss,beta,gamma,val_translation_m,val_rotation_deg\n");
    for e in &outcome.history {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch,
            e.loss,
            e.global_loss,
            e.relative_loss,
            e.beta,
            e.gamma,
            opt(e.val_translation),
            opt(e.val_rotation)
        ));
    }
    fs::write(out.join("history.csv"), w).context("writing history.csv")?;
    println!("checkpoints: {}", out.join("checkpoints").display());
    Ok(())
}

fn eval(a: EvalArgs, out_root: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let manifest_path = a
        .manifest
        .or_else(|| ckpt.config.manifest.clone())
        .context("no manifest given and none recorded in the checkpoint")?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let split = match a.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let report = evaluate_manifest(&ckpt, &manifest, split)?;
    if report.frame_count() == 0 {
        bail!("no frames in the selected split");
    }
    let out = a.output.unwrap_or_else(|| out_root.join("eval"));
    emit_plots(&report, &out)?;
    for s in &report.sequences {
        println!(
            "{:<16} {:>6} frames  {:>8.3} m  {:>8.3} deg",
            s.name,
            s.frames.len(),
            s.mean_translation,
            s.mean_rotation
        );
    }
    println!(
        "{:<16} {:>6} frames  {:>8.3} m  {:>8.3} deg",
        "average",
        report.frame_count(),
        report.mean_translation,
        report.mean_rotation
    );
    println!("tables and plots: {}", out.display());
    Ok(())
}
