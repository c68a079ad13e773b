//! Deterministic synthetic corpus with analytic faces.
//!
//! Each identity is a parameter vector (face ellipse, skin colour, eye
//! spacing) from which 68 landmarks are computed in closed form. Bona fide
//! frames are smooth shaded faces with low-amplitude sensor noise. Print and
//! replay attacks add a high-frequency periodic pattern (a rotated halftone
//! for print, a moiré grating for replay) plus a mild colour transform of the
//! reproduced medium. Real masks are an opaque fabric texture drawn inside the
//! mask polygon: under the attack pattern for AM1 (the mask was part of the
//! reproduced face), on top of it for AM2 (a real mask on a spoof).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Category, Corpus, Manifest, ManifestEntry, Medium, Sample};
use crate::error::{Error, Result};
use crate::geometry::{mask_polygon, LandmarkSet, MaskPolygon, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    /// Videos per identity for each bona fide category.
    pub videos_per_identity_per_category: usize,
    /// Attack videos per (attack category, medium) for every bona fide video.
    pub attack_replicas: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    /// Mean amplitude of the attack pattern in [0, 1] intensity units.
    pub attack_texture_strength: f64,
    pub image_size: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_identities: 40,
            videos_per_identity_per_category: 4,
            attack_replicas: 1,
            frames_per_video: 1,
            seed: 7,
            attack_texture_strength: 0.07,
            image_size: 224,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 identities for disjoint splits, got {}",
                self.n_identities
            )));
        }
        for (name, v) in [
            ("videos_per_identity_per_category", self.videos_per_identity_per_category),
            ("attack_replicas", self.attack_replicas),
            ("frames_per_video", self.frames_per_video),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.attack_texture_strength > 0.0 && self.attack_texture_strength.is_finite()) {
            return Err(Error::InvalidConfig("attack_texture_strength must be > 0".into()));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!("image_size {} too small", self.image_size)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_identities = {}", self.n_identities).unwrap();
        writeln!(s, "videos_per_identity_per_category = {}", self.videos_per_identity_per_category).unwrap();
        writeln!(s, "attack_replicas = {}", self.attack_replicas).unwrap();
        writeln!(s, "frames_per_video = {}", self.frames_per_video).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "attack_texture_strength = {}", self.attack_texture_strength).unwrap();
        writeln!(s, "image_size = {}", self.image_size).unwrap();
        s
    }

    pub fn parse_text(text: &str) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::default();
        for (key, value) in parse_key_values(text)? {
            let bad = |e: &dyn std::fmt::Display| Error::parse(format!("synth config key {key}"), e);
            match key.as_str() {
                "n_identities" => cfg.n_identities = value.parse().map_err(|e| bad(&e))?,
                "videos_per_identity_per_category" => {
                    cfg.videos_per_identity_per_category = value.parse().map_err(|e| bad(&e))?
                }
                "attack_replicas" => cfg.attack_replicas = value.parse().map_err(|e| bad(&e))?,
                "frames_per_video" => cfg.frames_per_video = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                "attack_texture_strength" => cfg.attack_texture_strength = value.parse().map_err(|e| bad(&e))?,
                "image_size" => cfg.image_size = value.parse().map_err(|e| bad(&e))?,
                _ => return Err(Error::parse("synth config", format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SynthConfig> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        SynthConfig::parse_text(&std::fs::read_to_string(path)?)
    }
}

/// Parse a flat `key = value` file; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("key=value file", format!("line {}: missing '='", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse("key=value file", format!("duplicate key {:?}", k.trim())));
        }
    }
    Ok(out)
}

/// Stateless 64-bit mixer used to derive independent per-item seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finaliser
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Geometry and appearance of one synthetic face, in a 224-pixel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub cx: f64,
    pub cy: f64,
    /// Half width of the jaw ellipse.
    pub half_width: f64,
    /// Depth of the jaw below the ear line.
    pub jaw_depth: f64,
    /// Distance between eye centres as a fraction of `half_width`.
    pub eye_spacing: f64,
    pub skin: [f64; 3],
}

impl Default for FaceParams {
    fn default() -> Self {
        FaceParams { cx: 112.0, cy: 96.0, half_width: 68.0, jaw_depth: 90.0, eye_spacing: 0.82, skin: [0.78, 0.6, 0.5] }
    }
}

impl FaceParams {
    fn sample(rng: &mut impl Rng) -> Self {
        let tone = rng.random_range(0.35..0.9);
        FaceParams {
            cx: 112.0,
            cy: 96.0,
            half_width: rng.random_range(62.0..72.0),
            jaw_depth: rng.random_range(82.0..94.0),
            eye_spacing: rng.random_range(0.74..0.9),
            skin: [tone, tone * rng.random_range(0.72..0.82), tone * rng.random_range(0.58..0.7)],
        }
    }

    /// Pose variation: translation and isotropic scale about the frame centre.
    fn posed(&self, dx: f64, dy: f64, scale: f64) -> Self {
        FaceParams {
            cx: 112.0 + (self.cx - 112.0) * scale + dx,
            cy: 112.0 + (self.cy - 112.0) * scale + dy,
            half_width: self.half_width * scale,
            jaw_depth: self.jaw_depth * scale,
            ..self.clone()
        }
    }

    fn eye_line(&self) -> f64 {
        self.cy - 0.15 * self.jaw_depth
    }

    fn eye_centres(&self) -> [Point; 2] {
        let dx = 0.5 * self.eye_spacing * self.half_width;
        [Point::new(self.cx - dx, self.eye_line()), Point::new(self.cx + dx, self.eye_line())]
    }
}

/// Closed-form 68-point landmarks for a face rendered into a `width × height`
/// image (coordinates scale from the 224 reference frame).
pub fn face_landmarks(p: &FaceParams, width: u32, height: u32) -> LandmarkSet {
    let (a, b) = (p.half_width, p.jaw_depth);
    let mut pts = Vec::with_capacity(68);
    // Jaw 0..=16: lower half ellipse from the left ear line to the right.
    for k in 0..17 {
        let phi = PI - PI * k as f64 / 16.0;
        pts.push(Point::new(p.cx + a * phi.cos(), p.cy + b * phi.sin()));
    }
    let [le, re] = p.eye_centres();
    let eye_w = 0.3 * a;
    let eye_h = 0.07 * b;
    // Brows 17..=26: shallow arcs above each eye.
    for centre in [le, re] {
        for k in 0..5 {
            let t = k as f64 / 4.0 - 0.5;
            let y = centre.y - 0.2 * b - 0.06 * b * (1.0 - 4.0 * t * t);
            pts.push(Point::new(centre.x + t * 1.4 * eye_w, y));
        }
    }
    // Nose bridge 27..=30 and base 31..=35.
    let tip = p.cy + 0.35 * b;
    for k in 0..4 {
        let y = p.eye_line() + (tip - p.eye_line()) * k as f64 / 3.0;
        pts.push(Point::new(p.cx, y));
    }
    for k in 0..5 {
        let t = k as f64 / 4.0 - 0.5;
        pts.push(Point::new(p.cx + t * 0.36 * a, p.cy + 0.42 * b - 0.03 * b * (1.0 - 4.0 * t * t)));
    }
    // Eyes 36..=47: outer corner, two upper, inner corner, two lower.
    for (centre, outer_sign) in [(le, -1.0), (re, 1.0)] {
        let hw = 0.5 * eye_w;
        let ring = [(-1.0, 0.0), (-0.35, -1.0), (0.35, -1.0), (1.0, 0.0), (0.35, 1.0), (-0.35, 1.0)];
        for (u, v) in ring {
            // Left eye runs outer(left) to inner(right); right eye mirrors.
            let u = if outer_sign < 0.0 { u } else { -u };
            pts.push(Point::new(centre.x + u * hw, centre.y + v * 0.5 * eye_h));
        }
    }
    // Mouth: 12 outer points, 8 inner points.
    let mc = Point::new(p.cx, p.cy + 0.62 * b);
    for k in 0..12 {
        let th = PI + 2.0 * PI * k as f64 / 12.0;
        pts.push(Point::new(mc.x + 0.32 * a * th.cos(), mc.y + 0.09 * b * th.sin()));
    }
    for k in 0..8 {
        let th = PI + 2.0 * PI * k as f64 / 8.0;
        pts.push(Point::new(mc.x + 0.24 * a * th.cos(), mc.y + 0.035 * b * th.sin()));
    }
    let sx = width as f64 / 224.0;
    let sy = height as f64 / 224.0;
    let pts = pts.into_iter().map(|q| Point::new(q.x * sx, q.y * sy)).collect();
    LandmarkSet::new(pts, width, height).expect("analytic landmarks are valid")
}

const MASK_COLOURS: [[f64; 3]; 4] = [[0.62, 0.78, 0.92], [0.9, 0.9, 0.9], [0.2, 0.2, 0.23], [0.88, 0.7, 0.75]];

/// Per-video appearance drawn from the video's random stream.
struct VideoStyle {
    background: [f64; 3],
    gain: f64,
    mask_colour: [f64; 3],
    pleat_period: f64,
    attack: Option<AttackPattern>,
}

struct AttackPattern {
    medium: Medium,
    amplitude: f64,
    period: f64,
    angle: f64,
    phase: f64,
}

impl AttackPattern {
    fn sample(medium: Medium, strength: f64, rng: &mut impl Rng) -> Self {
        let (period, angle) = match medium {
            Medium::Print => (rng.random_range(3.0..4.2), rng.random_range(0.2..0.8)),
            _ => (rng.random_range(2.4..3.4), rng.random_range(-0.6..0.6) + PI / 2.0),
        };
        AttackPattern {
            medium,
            amplitude: strength * rng.random_range(0.4..1.6),
            period,
            angle,
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    /// Colour response of the reproduction medium followed by its pattern.
    fn apply(&self, x: f64, y: f64, c: [f64; 3]) -> [f64; 3] {
        let (s, co) = self.angle.sin_cos();
        let u = x * co + y * s;
        let v = -x * s + y * co;
        let w = 2.0 * PI / self.period;
        match self.medium {
            Medium::Print => {
                let gray = (c[0] + c[1] + c[2]) / 3.0;
                let dot = (w * u + self.phase).cos() * (w * v).cos();
                // Halftone dots are most visible on darker ink coverage.
                let amp = self.amplitude * (1.3 - 0.6 * gray);
                c.map(|ch| 0.06 + 0.86 * (0.85 * ch + 0.15 * gray) + amp * dot)
            }
            _ => {
                let grating = (w * u + self.phase).sin();
                let subpixel = [(2.0 * PI * x / 3.0).cos(), (2.0 * PI * x / 3.0 + 2.1).cos(), (2.0 * PI * x / 3.0 + 4.2).cos()];
                let mut out = [0.0; 3];
                for i in 0..3 {
                    let ch = c[i].max(0.0).powf(1.1) + if i == 2 { 0.03 } else { 0.0 };
                    out[i] = ch + self.amplitude * (grating + 0.35 * subpixel[i]);
                }
                out
            }
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn polygon_of(lm: &LandmarkSet, idx: std::ops::Range<usize>) -> MaskPolygon {
    MaskPolygon::new(lm.points()[idx].to_vec()).expect("analytic feature polygon")
}

fn dist_to_polyline(p: Point, pts: &[Point]) -> f64 {
    pts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Render one frame. `size` is the output side length; geometry is laid out
/// in the 224 reference frame and scaled.
fn render_frame(
    face: &FaceParams,
    category: Category,
    style: &VideoStyle,
    size: u32,
    rng: &mut ChaCha8Rng,
) -> (RgbImage, LandmarkSet) {
    let lm = face_landmarks(face, size, size);
    let mask = mask_polygon(&lm).expect("analytic mask polygon");
    let k = size as f64 / 224.0;
    let (cx, cy) = (face.cx * k, face.cy * k);
    let (a, b) = (face.half_width * k, face.jaw_depth * k);
    let eyes = [polygon_of(&lm, 36..42), polygon_of(&lm, 42..48)];
    let eye_centres = face.eye_centres().map(|c| Point::new(c.x * k, c.y * k));
    let iris_r = 0.028 * b;
    let brows = [&lm.points()[17..22], &lm.points()[22..27]];
    let mouth = polygon_of(&lm, 48..60);
    let lips_inner = polygon_of(&lm, 60..68);
    let nose = &lm.points()[27..31];
    let nostrils = [lm.point(32), lm.point(34)];
    let mask_top = mask.bounding_box().y0;
    let noise = Normal::new(0.0, 0.012).unwrap();

    let masked_real = matches!(category, Category::BM1 | Category::AM1 | Category::AM2);
    // Geometry is area-sampled on a 2×2 grid per pixel; the attack pattern
    // is a property of the medium and is evaluated at the pixel centre.
    let colour_at = |p: Point, centre: Point| -> [f64; 3] {
        let ty = p.y / size as f64;
        let mut c = lerp(style.background, style.background.map(|v| v * 0.8), ty);

        let nx = (p.x - cx) / a;
        let ny = if p.y >= cy { (p.y - cy) / b } else { (p.y - cy) / (0.78 * b) };
        let r2 = nx * nx + ny * ny;
        if r2 <= 1.0 {
            let shade = 1.0 - 0.18 * r2 + 0.05 * nx;
            c = face.skin.map(|v| v * shade);
            if let Some(e) = eyes.iter().position(|e| e.contains(p)) {
                let ec = eye_centres[e];
                let d = ((p.x - ec.x).powi(2) + (p.y - ec.y).powi(2)).sqrt();
                c = if d < iris_r { [0.12, 0.08, 0.06] } else { [0.92, 0.9, 0.88] };
            } else if brows.iter().any(|br| dist_to_polyline(p, br) < 0.022 * b) {
                c = face.skin.map(|v| v * 0.35);
            } else if lips_inner.contains(p) {
                c = [0.25, 0.08, 0.08];
            } else if mouth.contains(p) {
                c = [face.skin[0] * 1.05, face.skin[1] * 0.6, face.skin[2] * 0.62];
            } else if nostrils.iter().any(|n| (p.x - n.x).powi(2) + (p.y - n.y).powi(2) < (0.02 * b).powi(2)) {
                c = face.skin.map(|v| v * 0.45);
            } else if dist_to_polyline(p, nose) < 0.015 * b {
                c = face.skin.map(|v| v * 0.88);
            }
        }

        let in_mask = masked_real && mask.contains(p);
        let mask_px = || -> [f64; 3] {
            let pleat = 1.0 + 0.05 * (2.0 * PI * (p.y - mask_top) / (style.pleat_period * k)).sin();
            let shade = 1.0 - 0.1 * (nx * nx).min(1.0);
            style.mask_colour.map(|v| v * pleat * shade)
        };
        let attack = |c| style.attack.as_ref().unwrap().apply(centre.x / k, centre.y / k, c);
        match category {
            Category::BM0 => {}
            Category::BM1 => {
                if in_mask {
                    c = mask_px();
                }
            }
            Category::AM0 => c = attack(c),
            Category::AM1 => {
                if in_mask {
                    c = mask_px();
                }
                c = attack(c);
            }
            Category::AM2 => {
                c = attack(c);
                if in_mask {
                    c = mask_px();
                }
            }
        }
        c
    };

    let mut img = RgbImage::new(size, size);
    for py in 0..size {
        for px in 0..size {
            let centre = Point::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut c = [0.0; 3];
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let s = colour_at(Point::new(px as f64 + ox, py as f64 + oy), centre);
                for i in 0..3 {
                    c[i] += 0.25 * s[i];
                }
            }

            let px_val = c.map(|v| {
                let v = v * style.gain + noise.sample(rng);
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(px, py, Rgb(px_val));
        }
    }
    (img, lm)
}

fn medium_tag(m: Medium) -> &'static str {
    match m {
        Medium::BonaFide => "live",
        Medium::Print => "print",
        Medium::Replay => "replay",
    }
}

/// Video plan: (category, medium, replica index) per identity, in a fixed
/// order.
fn video_plan(cfg: &SynthConfig) -> Vec<(Category, Medium, usize)> {
    let mut plan = Vec::new();
    for cat in [Category::BM0, Category::BM1] {
        for v in 0..cfg.videos_per_identity_per_category {
            plan.push((cat, Medium::BonaFide, v));
        }
    }
    let n_attack = cfg.videos_per_identity_per_category * cfg.attack_replicas;
    for cat in Category::ATTACKS {
        for medium in Medium::ATTACKS {
            for v in 0..n_attack {
                plan.push((cat, medium, v));
            }
        }
    }
    plan
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:03}")
}

/// Manifest implied by a configuration, without rendering anything.
pub fn plan_manifest(cfg: &SynthConfig) -> Result<Manifest> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for i in 0..cfg.n_identities {
        let identity = identity_name(i);
        for &(category, medium, v) in &video_plan(cfg) {
            let video_id = format!("{identity}_{category}_{}_{v:02}", medium_tag(medium));
            entries.push(ManifestEntry {
                path: format!("videos/{video_id}"),
                video_id,
                identity: identity.clone(),
                category,
                medium,
                n_frames: cfg.frames_per_video,
            });
        }
    }
    Ok(Manifest { entries })
}

/// Render every frame of one manifest entry. Depends only on the config and
/// the entry, so videos may be generated in any order or in parallel.
pub fn render_video(cfg: &SynthConfig, entry: &ManifestEntry, identity_index: usize) -> Result<Vec<Sample>> {
    let mut id_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 1, identity_index as u64]));
    let face = FaceParams::sample(&mut id_rng);
    let vid_hash = entry.video_id.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut vrng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2, vid_hash]));
    let bg_base: f64 = vrng.random_range(0.25..0.75);
    let style = VideoStyle {
        background: [bg_base, bg_base * vrng.random_range(0.85..1.15), bg_base * vrng.random_range(0.85..1.15)],
        gain: vrng.random_range(0.92..1.08),
        mask_colour: MASK_COLOURS[vrng.random_range(0..MASK_COLOURS.len())],
        pleat_period: vrng.random_range(14.0..22.0),
        attack: (entry.medium != Medium::BonaFide)
            .then(|| AttackPattern::sample(entry.medium, cfg.attack_texture_strength, &mut vrng)),
    };
    let pose = (vrng.random_range(-5.0..5.0), vrng.random_range(-5.0..5.0), vrng.random_range(0.95..1.05));
    (0..entry.n_frames)
        .map(|f| {
            let mut frng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 3, vid_hash, f as u64]));
            let posed = face.posed(
                pose.0 + frng.random_range(-1.5..1.5),
                pose.1 + frng.random_range(-1.5..1.5),
                pose.2,
            );
            let (image, lm) = render_frame(&posed, entry.category, &style, cfg.image_size, &mut frng);
            Sample::new(image, entry.category, entry.medium, entry.identity.clone(), lm, f, entry.video_id.clone())
        })
        .collect()
}

/// Generate the full corpus described by `cfg`.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    use rayon::prelude::*;

    let manifest = plan_manifest(cfg)?;
    let per_identity = video_plan(cfg).len();
    let videos: Vec<Vec<Sample>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| render_video(cfg, e, i / per_identity))
        .collect::<Result<_>>()?;
    Ok(Corpus { manifest, samples: videos.into_iter().flatten().collect() })
}
