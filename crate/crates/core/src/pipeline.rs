//! End-to-end runs: the component ablation over backbones, label mode and
//! inference mode, and the manifest recorded with every artifact directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::synth::parse_key_values;
use crate::dataset::{split_protocol, Category, Corpus, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, ThresholdKind};
use crate::geometry::RegionWeights;
use crate::inference::{aggregate, frame_maps, score_maps, ScoreRecord, ScoringConfig};
use crate::network::{ModelConfig, Variant};
use crate::trainer::{train_with_progress, EpochRecord, TrainConfig, TrainLog};

/// Provenance written next to every artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// SHA-256 over the input files (sorted by path, directories walked).
    pub input_hash: String,
}

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(RUN_MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<RunManifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_MANIFEST_FILE))?)?)
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.file_name().is_some_and(|n| n == RUN_MANIFEST_FILE) {
                continue;
            }
            collect_files(&p, out)?;
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    } else {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(())
}

/// Content hash of the given files and directory trees; paths are hashed
/// relative to their root so relocating inputs keeps the hash.
pub fn content_hash(inputs: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    for root in inputs {
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            let bytes = std::fs::read(&f)?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hasher.finalize().iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub backbones: Vec<Variant>,
    /// Each seed drives model initialisation, batch order and augmentation.
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    /// Per-backbone training configuration; `pal` and `seed` are overridden.
    pub train: BTreeMap<Variant, TrainConfig>,
    pub models: BTreeMap<Variant, ModelConfig>,
    pub weights: RegionWeights,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            backbones: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            split_seed: 0,
            train: Variant::ALL.iter().map(|&v| (v, TrainConfig::desk_scale())).collect(),
            models: Variant::ALL.iter().map(|&v| (v, ModelConfig::for_variant(v))).collect(),
            weights: RegionWeights::default(),
        }
    }
}

impl AblationConfig {
    /// Apply `key = value` overrides. Recognised keys: `backbones`, `seeds`
    /// (comma lists), `split_seed`, `w_eye`, `w_mask`, `w_other`, and
    /// `<backbone>.<train key>` for any training config key.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        let mut train_lines: BTreeMap<Variant, String> = BTreeMap::new();
        for (key, value) in parse_key_values(text)? {
            let bad = |e: &dyn std::fmt::Display| Error::parse(format!("ablation config key {key}"), e);
            match key.as_str() {
                "backbones" => {
                    self.backbones = value.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?;
                }
                "seeds" => {
                    self.seeds = value.split(',').map(|v| v.trim().parse().map_err(|e| bad(&e))).collect::<Result<_>>()?;
                }
                "split_seed" => self.split_seed = value.parse().map_err(|e| bad(&e))?,
                "w_eye" => self.weights.eye = value.parse().map_err(|e| bad(&e))?,
                "w_mask" => self.weights.mask = value.parse().map_err(|e| bad(&e))?,
                "w_other" => self.weights.other = value.parse().map_err(|e| bad(&e))?,
                _ => {
                    let (backbone, sub) = key.split_once('.').ok_or_else(|| bad(&"unknown key"))?;
                    let backbone: Variant = backbone.parse()?;
                    writeln!(train_lines.entry(backbone).or_default(), "{sub} = {value}").unwrap();
                }
            }
        }
        for (backbone, lines) in train_lines {
            let base = self.train.get(&backbone).cloned().unwrap_or_else(TrainConfig::desk_scale);
            self.train.insert(backbone, base.apply_text(&lines)?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::default().apply_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.backbones.is_empty() {
            return Err(Error::InvalidConfig("ablation needs at least one seed and one backbone".into()));
        }
        self.weights.validate()?;
        self.train.values().try_for_each(TrainConfig::validate)?;
        self.models.values().try_for_each(ModelConfig::validate)
    }
}

/// Dev and test video scores of one trained model under one inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub dev: Vec<ScoreRecord>,
    pub test: Vec<ScoreRecord>,
}

impl ScoredRun {
    pub fn report(&self, kind: ThresholdKind) -> Result<EvalReport> {
        evaluate(&self.dev, &self.test, kind)
    }
}

/// One trained model scored with and without regional weighting.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub backbone: Variant,
    pub pal: bool,
    pub seed: u64,
    pub log: TrainLog,
    pub plain: ScoredRun,
    pub rw: ScoredRun,
}

impl TrainedRun {
    pub fn scored(&self, rw: bool) -> &ScoredRun {
        if rw {
            &self.rw
        } else {
            &self.plain
        }
    }
}

/// One seed-averaged ablation row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub backbone: Variant,
    pub pal: bool,
    pub rw: bool,
    pub acer_unmask: f64,
    pub acer_all: f64,
    pub apcer_am2_all: f64,
    pub apcer_all: f64,
    pub bpcer_all: f64,
    pub auc: f64,
    pub n_seeds: usize,
}

impl AblationRow {
    pub fn label(&self) -> &'static str {
        match (self.pal, self.rw) {
            (false, false) => "baseline",
            (false, true) => "+RW",
            (true, false) => "+PAL",
            (true, true) => "+PAL+RW",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub runs: Vec<TrainedRun>,
    pub rows: Vec<AblationRow>,
}

/// APCER over all AM2 test videos (print and replay pooled) at `tau`.
pub fn am2_apcer(test: &[ScoreRecord], tau: f64) -> Result<f64> {
    let am2: Vec<f64> = test.iter().filter(|r| r.category == Category::AM2).map(|r| r.score).collect();
    crate::evaluation::apcer(&am2, tau)
}

fn score_run(model: &crate::network::Model<f32>, samples: &[&Sample], weights: RegionWeights) -> Result<(Vec<ScoreRecord>, Vec<ScoreRecord>)> {
    let maps = frame_maps(model, samples)?;
    let plain = aggregate(samples, &score_maps(samples, &maps, &ScoringConfig::plain())?)?;
    let rw = aggregate(samples, &score_maps(samples, &maps, &ScoringConfig::rw(weights))?)?;
    Ok((plain, rw))
}

/// Train every (backbone, PAL on/off, seed) combination once and score it
/// both ways; RW needs no retraining.
pub fn run_ablation(
    corpus: &Corpus,
    cfg: &AblationConfig,
    mut progress: impl FnMut(&str, &EpochRecord),
) -> Result<AblationResult> {
    cfg.validate()?;
    let split = split_protocol(&corpus.manifest, cfg.split_seed)?;
    let train = corpus.select(&split.train);
    let dev = corpus.select(&split.dev);
    let test = corpus.select(&split.test);
    let mut runs = Vec::new();
    for &backbone in &cfg.backbones {
        let base_train = cfg.train.get(&backbone).cloned().unwrap_or_else(TrainConfig::desk_scale);
        let base_model = cfg.models.get(&backbone).cloned().unwrap_or_else(|| ModelConfig::for_variant(backbone));
        for pal in [false, true] {
            for &seed in &cfg.seeds {
                let tcfg = TrainConfig { pal, seed, ..base_train.clone() };
                let tag = format!("{backbone} pal={} seed={seed}", if pal { "on" } else { "off" });
                let outcome = train_with_progress(base_model.clone().with_seed(seed), &train, &dev, &tcfg, |e| progress(&tag, e))?;
                let (dev_plain, dev_rw) = score_run(&outcome.model, &dev, cfg.weights)?;
                let (test_plain, test_rw) = score_run(&outcome.model, &test, cfg.weights)?;
                runs.push(TrainedRun {
                    backbone,
                    pal,
                    seed,
                    log: outcome.log,
                    plain: ScoredRun { dev: dev_plain, test: test_plain },
                    rw: ScoredRun { dev: dev_rw, test: test_rw },
                });
            }
        }
    }
    let rows = summarize(&runs)?;
    Ok(AblationResult { runs, rows })
}

/// Seed-average the runs into rows ordered backbone, then baseline, +RW,
/// +PAL, +PAL+RW.
pub fn summarize(runs: &[TrainedRun]) -> Result<Vec<AblationRow>> {
    let mut backbones: Vec<Variant> = runs.iter().map(|r| r.backbone).collect();
    backbones.dedup();
    let mut rows = Vec::new();
    for backbone in backbones {
        for (pal, rw) in [(false, false), (false, true), (true, false), (true, true)] {
            let sel: Vec<&TrainedRun> = runs.iter().filter(|r| r.backbone == backbone && r.pal == pal).collect();
            if sel.is_empty() {
                continue;
            }
            let mut acc = [0.0f64; 6];
            for run in &sel {
                let s = run.scored(rw);
                let unmask = s.report(ThresholdKind::Unmask)?;
                let all = s.report(ThresholdKind::All)?;
                for (a, v) in acc.iter_mut().zip([
                    unmask.acer,
                    all.acer,
                    am2_apcer(&s.test, all.tau)?,
                    all.apcer_overall,
                    all.bpcer_overall,
                    all.roc.auc,
                ]) {
                    *a += v;
                }
            }
            let n = sel.len() as f64;
            rows.push(AblationRow {
                backbone,
                pal,
                rw,
                acer_unmask: acc[0] / n,
                acer_all: acc[1] / n,
                apcer_am2_all: acc[2] / n,
                apcer_all: acc[3] / n,
                bpcer_all: acc[4] / n,
                auc: acc[5] / n,
                n_seeds: sel.len(),
            });
        }
    }
    Ok(rows)
}

pub const ABLATION_HEADER: [&str; 11] = [
    "backbone",
    "variant",
    "pal",
    "rw",
    "acer_unmask",
    "acer_all",
    "apcer_am2_all",
    "apcer_all",
    "bpcer_all",
    "auc",
    "n_seeds",
];

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_HEADER)?;
    let onoff = |b: bool| if b { "on" } else { "off" }.to_string();
    for r in rows {
        w.write_record([
            r.backbone.to_string(),
            r.label().to_string(),
            onoff(r.pal),
            onoff(r.rw),
            format!("{:.4}", r.acer_unmask),
            format!("{:.4}", r.acer_all),
            format!("{:.4}", r.apcer_am2_all),
            format!("{:.4}", r.apcer_all),
            format!("{:.4}", r.bpcer_all),
            format!("{:.6}", r.auc),
            r.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablation_to_string(rows: &[AblationRow]) -> String {
    let mut buf = Vec::new();
    write_ablation_csv(rows, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}
