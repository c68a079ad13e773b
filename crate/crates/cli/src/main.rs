//! `maskpad`: generate a synthetic corpus, write labels, train, score,
//! evaluate and run the component ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use maskpad_core::dataset::{generate_synthetic_corpus, split_protocol, Corpus, SynthConfig};
use maskpad_core::evaluation::{evaluate, write_roc_csv, ThresholdKind};
use maskpad_core::geometry::{region_weight_map, LabelMode, RegionWeights, DEFAULT_GRID};
use maskpad_core::inference::{load_scores, score_corpus, write_scores, ScoringConfig};
use maskpad_core::network::{load_checkpoint, save_checkpoint, ModelConfig, Variant};
use maskpad_core::pipeline::{content_hash, run_ablation, write_ablation_csv, AblationConfig, RunManifest, RUN_MANIFEST_FILE};
use maskpad_core::trainer::{train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(name = "maskpad", version, about = "Masked-face presentation attack detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Threshold {
    All,
    Unmask,
}

impl From<Threshold> for ThresholdKind {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::All => ThresholdKind::All,
            Threshold::Unmask => ThresholdKind::Unmask,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (PNG frames, landmarks, manifest).
    Synth {
        /// Synthetic corpus config (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 14×14 pixel label and region weight map of every frame.
    Labels {
        #[arg(long)]
        corpus: PathBuf,
        /// Partial labels for AM2 (`off` gives zero maps).
        #[arg(long, value_enum, default_value = "on")]
        pal: OnOff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one backbone on the train split, early stopping on dev.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        backbone: Variant,
        /// Training config overrides (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "on")]
        pal: OnOff,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the dev and test splits with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        rw: OnOff,
        /// Defaults to the split seed recorded in the checkpoint.
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the error-rate report of test scores at a dev threshold.
    Eval {
        /// Test video scores.
        #[arg(long)]
        scores: PathBuf,
        /// Dev video scores the threshold is chosen on.
        #[arg(long)]
        dev_scores: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        threshold: Threshold,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score every backbone with and without PAL and RW.
    Ablation {
        #[arg(long)]
        corpus: PathBuf,
        /// Ablation config overrides (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Restrict to one backbone.
        #[arg(long, value_parser = parse_variant)]
        backbone: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: maskpad_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match command {
        Command::Synth { config, seed, out } => {
            let mut cfg = match &config {
                Some(p) => SynthConfig::load(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let inputs: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            let manifest = manifest("synth", &args, &config, vec![cfg.seed], &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let corpus = generate_synthetic_corpus(&cfg)?;
                corpus.save(dir)?;
                fs::write(dir.join("synth_config.txt"), cfg.to_text())?;
                eprintln!("{} videos, {} frames", corpus.manifest.len(), corpus.samples.len());
                Ok(())
            })
        }
        Command::Labels { corpus, pal, out } => {
            let inputs = [corpus.as_path()];
            let manifest = manifest("labels", &args, &None, vec![], &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let corpus = Corpus::load(&corpus)?;
                let mode = if pal.on() { LabelMode::Partial } else { LabelMode::ZeroMap };
                let paths: BTreeMap<&str, &str> =
                    corpus.manifest.entries.iter().map(|e| (e.video_id.as_str(), e.path.as_str())).collect();
                for s in &corpus.samples {
                    let vdir = dir.join(paths[s.video_id.as_str()]);
                    fs::create_dir_all(&vdir)?;
                    let k = s.frame_index;
                    s.pixel_label(mode, DEFAULT_GRID)?.grid().write(&vdir.join(format!("label_{k:03}.txt")))?;
                    region_weight_map(&s.landmarks, RegionWeights::default(), DEFAULT_GRID)?
                        .grid()
                        .write(&vdir.join(format!("weights_{k:03}.txt")))?;
                }
                Ok(())
            })
        }
        Command::Train { corpus, backbone, config, seed, pal, split_seed, out } => {
            let mut tcfg = match &config {
                Some(p) => TrainConfig::load(p, TrainConfig::for_variant(backbone))?,
                None => TrainConfig::for_variant(backbone),
            };
            if let Some(s) = seed {
                tcfg.seed = s;
            }
            tcfg.pal = pal.on();
            let mut inputs = vec![corpus.as_path()];
            inputs.extend(config.as_deref());
            let manifest = manifest("train", &args, &config, vec![tcfg.seed], &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let corpus = Corpus::load(&corpus)?;
                let split = split_protocol(&corpus.manifest, split_seed)?;
                let (train, dev) = (corpus.select(&split.train), corpus.select(&split.dev));
                let model_cfg = ModelConfig::for_variant(backbone).with_seed(tcfg.seed);
                let outcome = train_with_progress(model_cfg, &train, &dev, &tcfg, |e| {
                    eprintln!(
                        "epoch {:3}  train {:.4}  dev {:.4}  dev acer {:6.2}  lr {:.2e}",
                        e.epoch, e.train_loss, e.dev_loss, e.dev_acer, e.lr
                    )
                })?;
                let metadata = BTreeMap::from([
                    ("backbone".to_string(), backbone.to_string()),
                    ("seed".to_string(), tcfg.seed.to_string()),
                    ("split_seed".to_string(), split_seed.to_string()),
                    ("pal".to_string(), if tcfg.pal { "on" } else { "off" }.to_string()),
                    ("best_epoch".to_string(), outcome.log.best_epoch.to_string()),
                    ("class_weight_bona_fide".to_string(), outcome.class_weights.bona_fide.to_string()),
                    ("class_weight_attack".to_string(), outcome.class_weights.attack.to_string()),
                ]);
                save_checkpoint(&outcome.model, dir, metadata)?;
                fs::write(dir.join("train_log.csv"), outcome.log.to_csv_string())?;
                fs::write(dir.join("train_config.txt"), tcfg.to_text())?;
                Ok(())
            })
        }
        Command::Score { checkpoint, corpus, rw, split_seed, out } => {
            let inputs = [checkpoint.as_path(), corpus.as_path()];
            let manifest = manifest("score", &args, &None, vec![], &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let (model, ckpt) = load_checkpoint(&checkpoint)?;
                let split_seed = match (split_seed, ckpt.metadata.get("split_seed")) {
                    (Some(s), _) => s,
                    (None, Some(s)) => s.parse().context("checkpoint split_seed")?,
                    (None, None) => 0,
                };
                let corpus = Corpus::load(&corpus)?;
                let split = split_protocol(&corpus.manifest, split_seed)?;
                let cfg = if rw.on() { ScoringConfig::rw(RegionWeights::default()) } else { ScoringConfig::plain() };
                for (name, ids) in [("dev", &split.dev), ("test", &split.test)] {
                    let records = score_corpus(&model, &corpus.select(ids), &cfg)?;
                    write_scores(&records, fs::File::create(dir.join(format!("{name}_scores.csv")))?)?;
                }
                Ok(())
            })
        }
        Command::Eval { scores, dev_scores, threshold, out } => {
            let inputs = [scores.as_path(), dev_scores.as_path()];
            let manifest = manifest("eval", &args, &None, vec![], &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let test = load_scores(&scores)?;
                let dev = load_scores(&dev_scores)?;
                let report = evaluate(&dev, &test, threshold.into())?;
                let text = report.to_csv_string();
                fs::write(dir.join("report.csv"), &text)?;
                write_roc_csv(&report.roc, fs::File::create(dir.join("roc.csv"))?)?;
                print!("{text}");
                Ok(())
            })
        }
        Command::Ablation { corpus, config, seed, backbone, out } => {
            let mut cfg = match &config {
                Some(p) => AblationConfig::load(p)?,
                None => AblationConfig::default(),
            };
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if let Some(b) = backbone {
                cfg.backbones = vec![b];
            }
            let mut inputs = vec![corpus.as_path()];
            inputs.extend(config.as_deref());
            let manifest = manifest("ablation", &args, &config, cfg.seeds.clone(), &out, &inputs)?;
            staged(&out, &inputs, manifest, |dir| {
                let corpus = Corpus::load(&corpus)?;
                let result = run_ablation(&corpus, &cfg, |tag, e| {
                    eprintln!("{tag}  epoch {:3}  train {:.4}  dev {:.4}  dev acer {:6.2}", e.epoch, e.train_loss, e.dev_loss, e.dev_acer)
                })?;
                for run in &result.runs {
                    let rdir = dir.join(format!("{}_pal-{}_seed-{}", run.backbone, if run.pal { "on" } else { "off" }, run.seed));
                    fs::create_dir_all(&rdir)?;
                    fs::write(rdir.join("train_log.csv"), run.log.to_csv_string())?;
                    for rw in [false, true] {
                        let s = run.scored(rw);
                        let tag = if rw { "rw" } else { "plain" };
                        write_scores(&s.dev, fs::File::create(rdir.join(format!("dev_scores_{tag}.csv")))?)?;
                        write_scores(&s.test, fs::File::create(rdir.join(format!("test_scores_{tag}.csv")))?)?;
                    }
                }
                let mut buf = Vec::new();
                write_ablation_csv(&result.rows, &mut buf)?;
                fs::write(dir.join("ablation.csv"), &buf)?;
                print!("{}", String::from_utf8(buf)?);
                Ok(())
            })
        }
    }
}

fn manifest(
    command: &str,
    args: &[String],
    config: &Option<PathBuf>,
    seeds: Vec<u64>,
    out: &Path,
    inputs: &[&Path],
) -> Result<RunManifest> {
    Ok(RunManifest {
        command: command.to_string(),
        args: args.to_vec(),
        config_paths: config.iter().cloned().collect(),
        seeds,
        output_dir: out.to_path_buf(),
        input_hash: content_hash(inputs)?,
    })
}

/// Build the outputs in a sibling staging directory and move it into place
/// only on success, so a failed command leaves nothing behind.
fn staged(out: &Path, inputs: &[&Path], manifest: RunManifest, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let abs_out = std::path::absolute(out)?;
    for input in inputs {
        let abs_in = std::path::absolute(input)?;
        if abs_out.starts_with(&abs_in) || abs_in.starts_with(&abs_out) {
            bail!("output {} overlaps input {}", out.display(), input.display());
        }
    }
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        if !empty && !out.join(RUN_MANIFEST_FILE).exists() {
            bail!("refusing to replace {}: not an output directory of this tool", out.display());
        }
    }
    let name = abs_out.file_name().context("output path has no final component")?.to_string_lossy().into_owned();
    let parent = abs_out.parent().context("output path has no parent")?;
    fs::create_dir_all(parent)?;
    let stage = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;
    let result = build(&stage).and_then(|()| Ok(manifest.write(&stage)?));
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&stage);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(&stage, out).with_context(|| format!("moving outputs into {}", out.display()))?;
    Ok(())
}
