//! Sample taxonomy, corpus manifests and the synthetic corpus.

pub mod augment;
pub mod split;
pub mod synth;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, LabelMode, LandmarkSet, PixelLabel};

pub use augment::{augment, resize_pair, AugmentConfig};
pub use split::{split_protocol, ProtocolSplit};
pub use synth::{generate_synthetic_corpus, SynthConfig};

/// BM0/BM1 are bona fide without/with a real mask. AM0 attacks show an
/// unmasked face, AM1 a masked face, AM2 an unmasked spoof partly covered by
/// a real mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    BM0,
    BM1,
    AM0,
    AM1,
    AM2,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::BM0, Category::BM1, Category::AM0, Category::AM1, Category::AM2];
    pub const ATTACKS: [Category; 3] = [Category::AM0, Category::AM1, Category::AM2];

    pub fn is_bona_fide(self) -> bool {
        matches!(self, Category::BM0 | Category::BM1)
    }

    pub fn is_masked(self) -> bool {
        matches!(self, Category::BM1 | Category::AM1 | Category::AM2)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::BM0 => "BM0",
            Category::BM1 => "BM1",
            Category::AM0 => "AM0",
            Category::AM1 => "AM1",
            Category::AM2 => "AM2",
        };
        f.write_str(s)
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::parse("category", format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    BonaFide,
    Print,
    Replay,
}

impl Medium {
    pub const ATTACKS: [Medium; 2] = [Medium::Print, Medium::Replay];
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medium::BonaFide => "bona_fide",
            Medium::Print => "print",
            Medium::Replay => "replay",
        })
    }
}

impl FromStr for Medium {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bona_fide" => Ok(Medium::BonaFide),
            "print" => Ok(Medium::Print),
            "replay" => Ok(Medium::Replay),
            _ => Err(Error::parse("medium", format!("unknown medium {s:?}"))),
        }
    }
}

fn check_category_medium(category: Category, medium: Medium) -> Result<()> {
    if category.is_bona_fide() != (medium == Medium::BonaFide) {
        return Err(Error::InvalidConfig(format!("category {category} cannot have medium {medium}")));
    }
    Ok(())
}

/// One frame of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub category: Category,
    pub medium: Medium,
    pub identity: String,
    pub landmarks: LandmarkSet,
    pub frame_index: usize,
    pub video_id: String,
}

impl Sample {
    pub fn new(
        image: RgbImage,
        category: Category,
        medium: Medium,
        identity: impl Into<String>,
        landmarks: LandmarkSet,
        frame_index: usize,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        check_category_medium(category, medium)?;
        if (image.width(), image.height()) != (landmarks.width(), landmarks.height()) {
            return Err(Error::shape(
                format!("{}x{}", landmarks.width(), landmarks.height()),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        Ok(Sample {
            image,
            category,
            medium,
            identity: identity.into(),
            landmarks,
            frame_index,
            video_id: video_id.into(),
        })
    }

    pub fn is_bona_fide(&self) -> bool {
        self.category.is_bona_fide()
    }

    pub fn pixel_label(&self, mode: LabelMode, grid_size: usize) -> Result<PixelLabel> {
        geometry::pixel_label(&self.landmarks, self.category, mode, grid_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub identity: String,
    pub category: Category,
    pub medium: Medium,
    pub n_frames: usize,
    pub path: String,
}

/// Per-video index of a corpus, serialised as
/// `video_id,identity,category,medium,n_frames,path`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Identities in first-appearance order.
    pub fn identities(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.identity.clone()))
            .map(|e| e.identity.clone())
            .collect()
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["video_id", "identity", "category", "medium", "n_frames", "path"])?;
        for e in &self.entries {
            w.write_record([
                e.video_id.as_str(),
                e.identity.as_str(),
                &e.category.to_string(),
                &e.medium.to_string(),
                &e.n_frames.to_string(),
                e.path.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Manifest> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::parse("manifest", format!("expected 6 fields, got {}", rec.len())));
            }
            let category: Category = rec[2].parse()?;
            let medium: Medium = rec[3].parse()?;
            check_category_medium(category, medium)?;
            entries.push(ManifestEntry {
                video_id: rec[0].to_string(),
                identity: rec[1].to_string(),
                category,
                medium,
                n_frames: rec[4].parse().map_err(|e| Error::parse("manifest n_frames", e))?,
                path: rec[5].to_string(),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Manifest::read_csv(std::fs::File::open(path)?)
    }
}

/// Frames plus the manifest describing them.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub const MANIFEST_FILE: &'static str = "manifest.csv";

    /// Samples whose video belongs to `video_ids`, in corpus order.
    pub fn select<'a>(&'a self, video_ids: &[String]) -> Vec<&'a Sample> {
        let ids: std::collections::HashSet<&str> = video_ids.iter().map(String::as_str).collect();
        self.samples.iter().filter(|s| ids.contains(s.video_id.as_str())).collect()
    }

    /// Write PNG frames, landmark CSVs and the manifest under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for s in &self.samples {
            let entry = self
                .manifest
                .entries
                .iter()
                .find(|e| e.video_id == s.video_id)
                .ok_or_else(|| Error::InvalidConfig(format!("sample video {} not in manifest", s.video_id)))?;
            let vdir = dir.join(&entry.path);
            std::fs::create_dir_all(&vdir)?;
            s.image.save(vdir.join(frame_file(s.frame_index)))?;
            s.landmarks.save(&vdir.join(landmark_file(s.frame_index)))?;
        }
        let mut f = std::fs::File::create(dir.join(Self::MANIFEST_FILE))?;
        self.manifest.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let manifest = Manifest::load(&dir.join(Self::MANIFEST_FILE))?;
        let mut samples = Vec::new();
        for e in &manifest.entries {
            let vdir = dir.join(&e.path);
            for k in 0..e.n_frames {
                let img_path = vdir.join(frame_file(k));
                if !img_path.exists() {
                    return Err(Error::MissingInput(img_path));
                }
                let image = image::open(&img_path)?.to_rgb8();
                let landmarks = LandmarkSet::load(&vdir.join(landmark_file(k)), image.width(), image.height())?;
                samples.push(Sample::new(image, e.category, e.medium, e.identity.clone(), landmarks, k, e.video_id.clone())?);
            }
        }
        Ok(Corpus { manifest, samples })
    }
}

pub fn frame_file(k: usize) -> String {
    format!("frame_{k:03}.png")
}

pub fn landmark_file(k: usize) -> String {
    format!("landmarks_{k:03}.csv")
}
