//! Frame scoring (plain or regionally weighted map mean) and aggregation to
//! video scores.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use image::imageops::{self, FilterType};
use rayon::prelude::*;

use crate::dataset::{Category, Medium, Sample};
use crate::error::{Error, Result};
use crate::geometry::{region_weight_map, RegionWeightMap, RegionWeights};
use crate::grid::Grid;
use crate::network::{Model, Scalar};

/// One video's decision score (bona fide probability, higher is more
/// genuine).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub video_id: String,
    pub identity: String,
    pub category: Category,
    pub medium: Medium,
    pub score: f64,
    /// Unknown when read back from a scores file.
    pub n_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub use_rw: bool,
    pub weights: RegionWeights,
    /// Divide by the summed weights instead of the cell count.
    pub normalize: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { use_rw: true, weights: RegionWeights::default(), normalize: false }
    }
}

impl ScoringConfig {
    pub fn plain() -> Self {
        ScoringConfig { use_rw: false, ..Self::default() }
    }

    pub fn rw(weights: RegionWeights) -> Self {
        ScoringConfig { use_rw: true, weights, normalize: false }
    }
}

/// Mean over all cells of `map ∘ weights`, or the weight-normalised mean.
pub fn frame_score(map: &Grid, weights: &RegionWeightMap, normalize: bool) -> Result<f64> {
    let w = weights.grid();
    if map.shape() != w.shape() {
        return Err(Error::shape(format!("{:?}", w.shape()), format!("{:?}", map.shape())));
    }
    let weighted: f64 = map.iter().zip(w.iter()).map(|(m, w)| m * w).sum();
    Ok(if normalize { weighted / w.iter().sum::<f64>() } else { weighted / map.as_slice().len() as f64 })
}

pub fn video_score(frame_scores: &[f64]) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::EmptyInput("frame scores"));
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

/// Predicted map of every frame, in input order.
pub fn frame_maps<T: Scalar>(model: &Model<T>, samples: &[&Sample]) -> Result<Vec<Grid>> {
    let size = model.config().input_size as u32;
    samples
        .par_iter()
        .map(|s| {
            let out = if s.image.dimensions() == (size, size) {
                model.forward(&s.image)?
            } else {
                model.forward(&imageops::resize(&s.image, size, size, FilterType::Triangle))?
            };
            Ok(out.map)
        })
        .collect()
}

/// Score frames from precomputed maps.
pub fn score_maps(samples: &[&Sample], maps: &[Grid], cfg: &ScoringConfig) -> Result<Vec<f64>> {
    if samples.len() != maps.len() {
        return Err(Error::shape(format!("{} maps", samples.len()), format!("{} maps", maps.len())));
    }
    samples
        .iter()
        .zip(maps)
        .map(|(s, map)| {
            if cfg.use_rw {
                let wm = region_weight_map(&s.landmarks, cfg.weights, map.rows())?;
                frame_score(map, &wm, cfg.normalize)
            } else {
                Ok(map.mean())
            }
        })
        .collect()
}

/// Average frame scores per video; records sorted by video id.
pub fn aggregate(samples: &[&Sample], frame_scores: &[f64]) -> Result<Vec<ScoreRecord>> {
    let mut by_video: BTreeMap<&str, (&Sample, Vec<f64>)> = BTreeMap::new();
    for (s, &score) in samples.iter().zip(frame_scores) {
        by_video.entry(s.video_id.as_str()).or_insert_with(|| (s, Vec::new())).1.push(score);
    }
    by_video
        .into_values()
        .map(|(s, scores)| {
            Ok(ScoreRecord {
                video_id: s.video_id.clone(),
                identity: s.identity.clone(),
                category: s.category,
                medium: s.medium,
                score: video_score(&scores)?,
                n_frames: Some(scores.len()),
            })
        })
        .collect()
}

pub fn score_corpus<T: Scalar>(model: &Model<T>, samples: &[&Sample], cfg: &ScoringConfig) -> Result<Vec<ScoreRecord>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples to score"));
    }
    cfg.weights.validate()?;
    let maps = frame_maps(model, samples)?;
    aggregate(samples, &score_maps(samples, &maps, cfg)?)
}

pub const SCORES_HEADER: [&str; 5] = ["video_id", "identity", "category", "medium", "score"];

pub fn write_scores<W: Write>(records: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORES_HEADER)?;
    for r in records {
        w.write_record([
            r.video_id.clone(),
            r.identity.clone(),
            r.category.to_string(),
            r.medium.to_string(),
            r.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn scores_to_string(records: &[ScoreRecord]) -> String {
    let mut buf = Vec::new();
    write_scores(records, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(SCORES_HEADER) {
        return Err(Error::parse("scores header", format!("expected {}", SCORES_HEADER.join(","))));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let score: f64 = rec[4].parse().map_err(|e| Error::parse("score", e))?;
            if !score.is_finite() {
                return Err(Error::parse("score", format!("non-finite value for {}", &rec[0])));
            }
            Ok(ScoreRecord {
                video_id: rec[0].to_string(),
                identity: rec[1].to_string(),
                category: rec[2].parse()?,
                medium: rec[3].parse()?,
                score,
                n_frames: None,
            })
        })
        .collect()
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    read_scores(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{face_landmarks, FaceParams};

    #[test]
    fn unit_weights_reduce_to_plain_mean() {
        let lm = face_landmarks(&FaceParams::default(), 224, 224);
        let wm = region_weight_map(&lm, RegionWeights::UNIFORM, 14).unwrap();
        let map = Grid::from_vec(14, 14, (0..196).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect()).unwrap();
        assert!((frame_score(&map, &wm, false).unwrap() - map.mean()).abs() < 1e-12);
    }

    #[test]
    fn constant_map_scales_by_region_fractions() {
        let lm = face_landmarks(&FaceParams::default(), 224, 224);
        let w = RegionWeights::default();
        let wm = region_weight_map(&lm, w, 14).unwrap();
        let (e, m, o) = wm.region_counts();
        let c = 0.7;
        let want = c * (w.eye * e as f64 + w.mask * m as f64 + w.other * o as f64) / 196.0;
        assert!((frame_score(&Grid::filled(14, 14, c), &wm, false).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn video_score_examples() {
        assert!((video_score(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(video_score(&[0.42]).unwrap(), 0.42);
        assert!(video_score(&[]).is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let recs = vec![ScoreRecord {
            video_id: "v1".into(),
            identity: "id001".into(),
            category: Category::AM2,
            medium: Medium::Replay,
            score: 0.123456789012345,
            n_frames: None,
        }];
        let text = scores_to_string(&recs);
        assert_eq!(read_scores(text.as_bytes()).unwrap(), recs);
    }
}
