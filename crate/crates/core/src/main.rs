use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gesture_core::config::{StreamKind, SynthConfig, TrainConfig};
use gesture_core::data::{
    build_split, generate_synthetic, load_sequence, write_dataset, Dataset, GestureBatch,
    PrepareOptions, PreparedSample, SplitProtocol,
};
use gesture_core::model::{LoadedModel, StreamModel};
use gesture_core::skeleton::{DatasetKind, SkeletonTopology};
use gesture_core::tensor::Checkpoint;
use gesture_core::train::{
    confusion_csv, evaluate, history_csv, prepare_all, scores_csv, train_stream,
};

#[derive(Parser)]
#[command(
    name = "gesture",
    version,
    about = "Skeleton hand-gesture recognition with two fused streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stream on a dataset directory.
    Train {
        #[arg(long)]
        stream: String,
        #[arg(long)]
        data_root: PathBuf,
        /// `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// History CSV (defaults to `<out>.history.csv`).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate one checkpoint, or fuse two.
    Eval {
        #[arg(long, num_args = 1..=2, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Multiply the two streams' probabilities.
        #[arg(long)]
        fuse: bool,
        /// Confusion-matrix CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-sequence score CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the attention maps of a graph-stream checkpoint for one sequence.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn topology_for(joints: usize) -> Result<SkeletonTopology> {
    let kind = match joints {
        22 => DatasetKind::Dhg22,
        21 => DatasetKind::Fpha21,
        j => bail!("no built-in hand topology with {j} joints"),
    };
    Ok(SkeletonTopology::hand(kind)?)
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(StreamModel::from_checkpoint(&ck)?)
}

fn options(cfg: &TrainConfig) -> PrepareOptions {
    PrepareOptions {
        frames: cfg.frames,
        wrist_center: cfg.wrist_center,
    }
}

fn train(
    stream: &str,
    data_root: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    history: Option<PathBuf>,
) -> Result<()> {
    let stream = StreamKind::parse(stream)?;
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p, stream)?,
        None => TrainConfig::for_stream(stream),
    };
    if cfg.stream != stream {
        bail!(
            "--stream {} conflicts with `stream = {}` in the config",
            stream.as_str(),
            cfg.stream.as_str()
        );
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = Dataset::load(data_root)?;
    let first = ds.train.first().context("the training split is empty")?;
    let topo = topology_for(first.joints())?;
    cfg.dataset = topo.kind();
    let train = prepare_all(&ds.train, &topo, options(&cfg))?;
    let val = prepare_all(&ds.val, &topo, options(&cfg))?;
    let model = StreamModel::new(&cfg, topo.joint_count(), ds.num_classes())?;
    let outcome = train_stream(model, &train, &val, &cfg)?;
    outcome
        .model
        .to_checkpoint(&cfg, topo.joint_count(), &ds.class_names)
        .save(out)?;
    let history =
        history.unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", out.display())));
    fs::write(&history, history_csv(&outcome.history))?;
    let last = outcome.history.last().context("no epochs were run")?;
    println!(
        "trained {} for {} epochs (best epoch {}), final train accuracy {:.4}; wrote {} and {}",
        stream.as_str(),
        outcome.history.len(),
        outcome.best_epoch,
        last.train_acc,
        out.display(),
        history.display()
    );
    Ok(())
}

fn eval(
    checkpoints: &[PathBuf],
    data_root: &Path,
    split: &str,
    fuse: bool,
    report: Option<&Path>,
    scores: Option<&Path>,
) -> Result<()> {
    if fuse && checkpoints.len() != 2 {
        bail!("--fuse needs exactly two checkpoints");
    }
    let ds = Dataset::load(data_root)?;
    let seqs = match split {
        "train" => &ds.train,
        "val" => &ds.val,
        "test" => &ds.test,
        other => bail!("unknown split `{other}`"),
    };
    let first = seqs
        .first()
        .with_context(|| format!("the {split} split is empty"))?;
    let topo = topology_for(first.joints())?;
    let models = checkpoints
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>>>()?;
    let mut last = None;
    for (m, path) in models.iter().zip(checkpoints) {
        let samples = prepare_all(seqs, &topo, options(&m.config))?;
        let r = evaluate(&[&m.model], &samples, ds.num_classes())?;
        println!(
            "{} ({}): accuracy {:.4}",
            path.display(),
            m.model.kind().as_str(),
            r.accuracy
        );
        last = Some(r);
    }
    if fuse {
        let (a, b) = (&models[0], &models[1]);
        if options(&a.config) != options(&b.config) {
            bail!("the two checkpoints sample sequences differently");
        }
        let samples = prepare_all(seqs, &topo, options(&a.config))?;
        let r = evaluate(&[&a.model, &b.model], &samples, ds.num_classes())?;
        println!("fused: accuracy {:.4}", r.accuracy);
        last = Some(r);
    }
    let r = last.expect("at least one checkpoint");
    if let Some(p) = report {
        fs::write(p, confusion_csv(&r, &ds.class_names))?;
    }
    if let Some(p) = scores {
        fs::write(p, scores_csv(&r))?;
    }
    Ok(())
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let cfg = SynthConfig::load(spec)?;
    let topo = SkeletonTopology::hand(cfg.dataset)?;
    let seqs = generate_synthetic(&cfg.spec, &topo)?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    let protocol = SplitProtocol::SyntheticRandom {
        seed: cfg.split_seed,
        test_fraction: cfg.test_fraction,
    };
    let split = build_split(&labels, &protocol)?;
    write_dataset(out, &seqs, &split, &cfg.spec.class_names())?;
    println!(
        "wrote {} sequences ({} train, {} val, {} test) to {}",
        seqs.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn export_attention(checkpoint: &Path, sequence: &Path, out: &Path) -> Result<()> {
    let m = load_model(checkpoint)?;
    let seq = load_sequence(sequence)?;
    let topo = topology_for(seq.joints())?;
    let sample = PreparedSample::new(&seq, &topo, options(&m.config))?;
    let maps = m
        .model
        .attention_maps(&GestureBatch::from_samples(&[&sample])?)?;
    let j = topo.joint_count();
    let mut s = String::from("unit,joint");
    for c in 0..j {
        let _ = write!(s, ",j{c}");
    }
    s.push('\n');
    for (u, map) in maps.iter().enumerate() {
        for (r, row) in map.data().chunks(j).enumerate() {
            let _ = write!(s, "{u},{r}");
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
    }
    fs::write(out, s)?;
    println!("wrote {} attention maps to {}", maps.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train {
            stream,
            data_root,
            config,
            seed,
            out,
            history,
        } => train(&stream, &data_root, config.as_deref(), seed, &out, history),
        Command::Eval {
            checkpoint,
            data_root,
            split,
            fuse,
            report,
            scores,
        } => eval(
            &checkpoint,
            &data_root,
            &split,
            fuse,
            report.as_deref(),
            scores.as_deref(),
        ),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::ExportAttention {
            checkpoint,
            sequence,
            out,
        } => export_attention(&checkpoint, &sequence, &out),
    }
}
