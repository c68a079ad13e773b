//! Landmark geometry: mask polygons, eye regions, partial attack labels and
//! region weight maps.
//!
//! Landmarks follow the standard 68-point layout (jaw 0–16, eyebrows 17–26,
//! nose 27–35, eyes 36–47, mouth 48–67) in continuous pixel coordinates where
//! the image spans `[0, width] × [0, height]`.

use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const NUM_LANDMARKS: usize = 68;
pub const DEFAULT_GRID: usize = 14;

const JAW: RangeInclusive<usize> = 0..=16;
const BROWS: RangeInclusive<usize> = 17..=26;
const EYES: RangeInclusive<usize> = 36..=47;

/// Jaw points 1–15 closed through the second nose-bridge point.
pub const DEFAULT_MASK_INDICES: [usize; 16] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 28];

/// Cells whose covered fraction is within this distance below 0.5 count as
/// covered; exact ties are inside.
const COVERAGE_EPS: f64 = 1e-9;

const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// 68 facial landmarks in the pixel frame of a `width × height` image.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    width: u32,
    height: u32,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, width: u32, height: u32) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidLandmarks(format!("expected {NUM_LANDMARKS} points, got {}", points.len())));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidLandmarks(format!("image size {width}x{height}")));
        }
        if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidLandmarks(format!("point {i} is not finite")));
        }
        let jaw = &points[JAW];
        if !polyline_is_simple(jaw, false) {
            return Err(Error::InvalidLandmarks("jaw polyline self-intersects".into()));
        }
        Ok(LandmarkSet { points, width, height })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Reflect every point about the image's vertical centre line. Indices are
    /// kept, so derived regions (mask polygon, eye box) reflect vertex-wise.
    pub fn mirror(&self) -> LandmarkSet {
        let w = self.width as f64;
        LandmarkSet {
            points: self.points.iter().map(|p| Point::new(w - p.x, p.y)).collect(),
            width: self.width,
            height: self.height,
        }
    }

    /// Map into a `width × height` image by scaling each axis.
    pub fn rescale(&self, width: u32, height: u32) -> Result<LandmarkSet> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        LandmarkSet::new(self.points.iter().map(|p| Point::new(p.x * sx, p.y * sy)).collect(), width, height)
    }

    pub fn bounding_box(&self) -> Rect {
        bounding_box(self.points.iter())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "x", "y"])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([i.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, width: u32, height: u32) -> Result<LandmarkSet> {
        #[derive(Deserialize)]
        struct Row {
            index: usize,
            x: f64,
            y: f64,
        }
        let mut points = vec![None; NUM_LANDMARKS];
        let mut rdr = csv::Reader::from_reader(input);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["index", "x", "y"] {
            return Err(Error::parse("landmark csv", "header must be index,x,y"));
        }
        for row in rdr.deserialize() {
            let row: Row = row?;
            let slot = points
                .get_mut(row.index)
                .ok_or_else(|| Error::parse("landmark csv", format!("index {} out of range", row.index)))?;
            if slot.replace(Point::new(row.x, row.y)).is_some() {
                return Err(Error::parse("landmark csv", format!("duplicate index {}", row.index)));
            }
        }
        let points = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::parse("landmark csv", format!("missing index {i}"))))
            .collect::<Result<Vec<_>>>()?;
        LandmarkSet::new(points, width, height)
    }

    pub fn load(path: &Path, width: u32, height: u32) -> Result<LandmarkSet> {
        LandmarkSet::read_csv(std::fs::File::open(path)?, width, height)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn mirror(&self, width: f64) -> Rect {
        Rect { x0: width - self.x1, y0: self.y0, x1: width - self.x0, y1: self.y1 }
    }
}

fn bounding_box<'a>(points: impl Iterator<Item = &'a Point>) -> Rect {
    let mut r = Rect { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY };
    for p in points {
        r.x0 = r.x0.min(p.x);
        r.y0 = r.y0.min(p.y);
        r.x1 = r.x1.max(p.x);
        r.y1 = r.y1.max(p.y);
    }
    r
}

/// Closed simple polygon in image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPolygon {
    vertices: Vec<Point>,
}

impl MaskPolygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateGeometry(format!("{} vertices", vertices.len())));
        }
        let area = polygon_area(&vertices);
        if !(area > AREA_EPS) {
            return Err(Error::DegenerateGeometry(format!("polygon area {area}")));
        }
        if !polyline_is_simple(&vertices, true) {
            return Err(Error::DegenerateGeometry("polygon self-intersects".into()));
        }
        Ok(MaskPolygon { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    pub fn bounding_box(&self) -> Rect {
        bounding_box(self.vertices.iter())
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn mirror(&self, width: f64) -> MaskPolygon {
        MaskPolygon { vertices: self.vertices.iter().map(|p| Point::new(width - p.x, p.y)).collect() }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> MaskPolygon {
        MaskPolygon { vertices: self.vertices.iter().map(|p| Point::new(p.x * sx, p.y * sy)).collect() }
    }

    /// Area of the part of the polygon inside `rect`.
    pub fn clipped_area(&self, rect: &Rect) -> f64 {
        polygon_area(&clip_to_rect(&self.vertices, rect))
    }
}

/// Absolute shoelace area.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    signed_area(vertices).abs()
}

fn signed_area(vertices: &[Point]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        acc += vertices[j].x * vertices[i].y - vertices[i].x * vertices[j].y;
        j = i;
    }
    0.5 * acc
}

/// Sutherland–Hodgman clip of an arbitrary simple polygon against a rectangle.
/// The result may contain zero-width bridges for concave input; its shoelace
/// area is still the exact intersection area.
pub fn clip_to_rect(vertices: &[Point], rect: &Rect) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Top(f64),
        Bottom(f64),
    }
    impl Edge {
        fn inside(self, p: Point) -> bool {
            match self {
                Edge::Left(x) => p.x >= x,
                Edge::Right(x) => p.x <= x,
                Edge::Top(y) => p.y >= y,
                Edge::Bottom(y) => p.y <= y,
            }
        }
        fn cross(self, a: Point, b: Point) -> Point {
            match self {
                Edge::Left(x) | Edge::Right(x) => {
                    let t = (x - a.x) / (b.x - a.x);
                    Point::new(x, a.y + t * (b.y - a.y))
                }
                Edge::Top(y) | Edge::Bottom(y) => {
                    let t = (y - a.y) / (b.y - a.y);
                    Point::new(a.x + t * (b.x - a.x), y)
                }
            }
        }
    }

    let mut out = vertices.to_vec();
    for edge in [Edge::Left(rect.x0), Edge::Right(rect.x1), Edge::Top(rect.y0), Edge::Bottom(rect.y1)] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (edge.inside(prev), edge.inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(edge.cross(prev, cur)),
                (false, true) => {
                    out.push(edge.cross(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = orientation(p3, p4, p1);
    let d2 = orientation(p3, p4, p2);
    let d3 = orientation(p1, p2, p3);
    let d4 = orientation(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

/// True when no two non-adjacent segments of the polyline touch.
fn polyline_is_simple(points: &[Point], closed: bool) -> bool {
    let n = points.len();
    let n_seg = if closed { n } else { n.saturating_sub(1) };
    let seg = |i: usize| (points[i], points[(i + 1) % n]);
    for i in 0..n_seg {
        for j in i + 2..n_seg {
            if closed && i == 0 && j == n_seg - 1 {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Polygon covered by a face mask: jaw points 1–15 closed through nose-bridge
/// point 28.
pub fn mask_polygon(landmarks: &LandmarkSet) -> Result<MaskPolygon> {
    mask_polygon_with(landmarks, &DEFAULT_MASK_INDICES)
}

pub fn mask_polygon_with(landmarks: &LandmarkSet, indices: &[usize]) -> Result<MaskPolygon> {
    let vertices = indices
        .iter()
        .map(|&i| {
            landmarks
                .points
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("mask landmark index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    MaskPolygon::new(vertices)
}

/// Padded bounding box of the eyebrow and eye points, clamped to the image.
pub fn eye_region(landmarks: &LandmarkSet) -> Rect {
    let pts = &landmarks.points;
    let bb = bounding_box(pts[BROWS].iter().chain(pts[EYES].iter()));
    let (pad_x, pad_y) = (0.05 * bb.width(), 0.10 * bb.height());
    let (w, h) = (landmarks.width as f64, landmarks.height as f64);
    Rect {
        x0: (bb.x0 - pad_x).clamp(0.0, w),
        y0: (bb.y0 - pad_y).clamp(0.0, h),
        x1: (bb.x1 + pad_x).clamp(0.0, w),
        y1: (bb.y1 + pad_y).clamp(0.0, h),
    }
}

/// Patch of the image that grid cell `(row, col)` summarises.
pub fn cell_rect(row: usize, col: usize, grid_size: usize, width: u32, height: u32) -> Rect {
    let cw = width as f64 / grid_size as f64;
    let ch = height as f64 / grid_size as f64;
    Rect { x0: col as f64 * cw, y0: row as f64 * ch, x1: (col + 1) as f64 * cw, y1: (row + 1) as f64 * ch }
}

/// Fraction of every cell's patch covered by the polygon.
pub fn coverage_grid(polygon: &MaskPolygon, width: u32, height: u32, grid_size: usize) -> Grid {
    let mut out = Grid::zeros(grid_size, grid_size);
    let bb = polygon.bounding_box();
    for r in 0..grid_size {
        for c in 0..grid_size {
            let cell = cell_rect(r, c, grid_size, width, height);
            if cell.intersection_area(&bb) > 0.0 {
                out[(r, c)] = polygon.clipped_area(&cell) / cell.area();
            }
        }
    }
    out
}

fn is_covered(fraction: f64) -> bool {
    fraction >= 0.5 - COVERAGE_EPS
}

/// Binary pixel-wise target: 1 = bona fide, 0 = attack.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLabel {
    grid: Grid,
    category: Category,
}

impl PixelLabel {
    pub fn new(grid: Grid, category: Category) -> Result<Self> {
        if grid.iter().any(|v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidConfig("pixel label entries must be 0 or 1".into()));
        }
        let uniform = match category {
            Category::BM0 | Category::BM1 => Some(1.0),
            Category::AM0 | Category::AM1 => Some(0.0),
            Category::AM2 => None,
        };
        if let Some(v) = uniform {
            if grid.iter().any(|x| x != v) {
                return Err(Error::InvalidConfig(format!("{category} label must be all {v}")));
            }
        }
        Ok(PixelLabel { grid, category })
    }

    pub fn uniform(category: Category, grid_size: usize) -> Self {
        let v = if category.is_bona_fide() { 1.0 } else { 0.0 };
        PixelLabel { grid: Grid::filled(grid_size, grid_size, v), category }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn binary_label(&self) -> f64 {
        if self.category.is_bona_fide() {
            1.0
        } else {
            0.0
        }
    }

    pub fn flip_horizontal(&self) -> PixelLabel {
        PixelLabel { grid: self.grid.flip_horizontal(), category: self.category }
    }
}

/// Pixel label for a category. Only AM2 depends on the polygon: a cell is bona
/// fide when at least half of its patch lies inside the mask.
pub fn rasterize_label(
    polygon: &MaskPolygon,
    category: Category,
    width: u32,
    height: u32,
    grid_size: usize,
) -> PixelLabel {
    if category != Category::AM2 {
        return PixelLabel::uniform(category, grid_size);
    }
    let grid = coverage_grid(polygon, width, height, grid_size).map(|f| if is_covered(f) { 1.0 } else { 0.0 });
    PixelLabel { grid, category }
}

/// How AM2 samples are supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Real-mask region of a partial attack is labelled bona fide.
    Partial,
    /// Every attack, partial or not, gets an all-zero map.
    ZeroMap,
}

pub fn pixel_label(landmarks: &LandmarkSet, category: Category, mode: LabelMode, grid_size: usize) -> Result<PixelLabel> {
    match (category, mode) {
        (Category::AM2, LabelMode::Partial) => {
            let poly = mask_polygon(landmarks)?;
            Ok(rasterize_label(&poly, category, landmarks.width, landmarks.height, grid_size))
        }
        _ => Ok(PixelLabel::uniform(category, grid_size)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionWeights {
    pub eye: f64,
    pub mask: f64,
    pub other: f64,
}

impl Default for RegionWeights {
    fn default() -> Self {
        RegionWeights { eye: 0.6, mask: 0.1, other: 0.3 }
    }
}

impl RegionWeights {
    pub const UNIFORM: RegionWeights = RegionWeights { eye: 1.0, mask: 1.0, other: 1.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("eye", self.eye), ("mask", self.mask), ("other", self.other)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} weight must be positive, got {w}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> RegionWeights {
        RegionWeights { eye: self.eye * k, mask: self.mask * k, other: self.other * k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionWeightMap {
    grid: Grid,
    weights: RegionWeights,
}

impl RegionWeightMap {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> RegionWeights {
        self.weights
    }

    /// Cell counts assigned to (eye, mask, other).
    pub fn region_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for r in 0..self.grid.rows() {
            for c in 0..self.grid.cols() {
                match self.region(r, c) {
                    Region::Eye => counts.0 += 1,
                    Region::Mask => counts.1 += 1,
                    Region::Other => counts.2 += 1,
                }
            }
        }
        counts
    }

    fn region(&self, r: usize, c: usize) -> Region {
        let v = self.grid[(r, c)];
        // Priority order resolves equal configured weights.
        if v == self.weights.eye {
            Region::Eye
        } else if v == self.weights.mask {
            Region::Mask
        } else {
            Region::Other
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Eye,
    Mask,
    Other,
}

/// Per-cell region weights: eye box first, then mask polygon, else other.
pub fn region_weight_map(landmarks: &LandmarkSet, weights: RegionWeights, grid_size: usize) -> Result<RegionWeightMap> {
    weights.validate()?;
    let (w, h) = (landmarks.width, landmarks.height);
    let eye = eye_region(landmarks);
    let mask = coverage_grid(&mask_polygon(landmarks)?, w, h, grid_size);
    let mut grid = Grid::zeros(grid_size, grid_size);
    for r in 0..grid_size {
        for c in 0..grid_size {
            let cell = cell_rect(r, c, grid_size, w, h);
            grid[(r, c)] = if is_covered(cell.intersection_area(&eye) / cell.area()) {
                weights.eye
            } else if is_covered(mask[(r, c)]) {
                weights.mask
            } else {
                weights.other
            };
        }
    }
    Ok(RegionWeightMap { grid, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{face_landmarks, FaceParams};

    fn face() -> LandmarkSet {
        face_landmarks(&FaceParams::default(), 224, 224)
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> MaskPolygon {
        MaskPolygon::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)]).unwrap()
    }

    #[test]
    fn mask_area_is_a_plausible_fraction_of_the_face() {
        let lm = face();
        let poly = mask_polygon(&lm).unwrap();
        let bb = lm.bounding_box();
        let frac = poly.area() / bb.area();
        assert!((0.25..=0.60).contains(&frac), "mask/face area ratio {frac}");
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let pts = (0..68).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        let lm = LandmarkSet::new(pts, 224, 224).unwrap();
        assert!(matches!(mask_polygon(&lm), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn rejects_bad_landmark_sets() {
        assert!(LandmarkSet::new(vec![Point::new(0.0, 0.0); 67], 10, 10).is_err());
        let mut pts = face().points().to_vec();
        pts[3].x = f64::NAN;
        assert!(LandmarkSet::new(pts, 224, 224).is_err());
        // Swap two jaw points so the polyline crosses itself.
        let mut pts = face().points().to_vec();
        pts.swap(2, 8);
        assert!(matches!(LandmarkSet::new(pts, 224, 224), Err(Error::InvalidLandmarks(_))));
    }

    #[test]
    fn mirrored_landmarks_give_mirrored_polygon_and_eye_box() {
        let lm = face();
        let m = lm.mirror();
        let p = mask_polygon(&lm).unwrap();
        let pm = mask_polygon(&m).unwrap();
        for (a, b) in p.vertices().iter().zip(pm.vertices()) {
            assert_eq!(b.x, 224.0 - a.x);
            assert_eq!(b.y, a.y);
        }
        let e = eye_region(&lm);
        let em = eye_region(&m);
        let expect = e.mirror(224.0);
        assert!((em.x0 - expect.x0).abs() < 1e-9 && (em.x1 - expect.x1).abs() < 1e-9);
        assert_eq!((em.y0, em.y1), (e.y0, e.y1));
    }

    #[test]
    fn eye_region_contains_eye_points_and_clamps() {
        let lm = face();
        let r = eye_region(&lm);
        for i in BROWS.chain(EYES) {
            assert!(r.contains(lm.point(i)));
        }
        let mut pts = lm.points().to_vec();
        pts[36] = Point::new(0.0, 0.0);
        pts[45] = Point::new(224.0, 60.0);
        let r = eye_region(&LandmarkSet::new(pts, 224, 224).unwrap());
        assert_eq!((r.x0, r.y0, r.x1), (0.0, 0.0, 224.0));
    }

    #[test]
    fn bottom_half_square_labels_bottom_seven_rows() {
        let poly = square(-10.0, 112.0, 240.0, 240.0);
        let label = rasterize_label(&poly, Category::AM2, 224, 224, 14);
        for r in 0..14 {
            for c in 0..14 {
                assert_eq!(label.grid()[(r, c)], if r >= 7 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn uniform_categories_ignore_polygon() {
        let poly = square(0.0, 0.0, 224.0, 224.0);
        for cat in [Category::AM0, Category::AM1] {
            assert!(rasterize_label(&poly, cat, 224, 224, 14).grid().iter().all(|v| v == 0.0));
        }
        for cat in [Category::BM0, Category::BM1] {
            assert!(rasterize_label(&poly, cat, 224, 224, 14).grid().iter().all(|v| v == 1.0));
        }
    }

    #[test]
    fn polygon_off_image_gives_zero_label() {
        let poly = square(300.0, 300.0, 400.0, 400.0);
        assert!(rasterize_label(&poly, Category::AM2, 224, 224, 14).grid().iter().all(|v| v == 0.0));
    }

    #[test]
    fn exact_half_coverage_counts_as_inside() {
        // Covers the left half of column 0 patches in every row.
        let poly = square(0.0, 0.0, 8.0, 224.0);
        let label = rasterize_label(&poly, Category::AM2, 224, 224, 14);
        assert!((0..14).all(|r| label.grid()[(r, 0)] == 1.0));
        assert!((0..14).all(|r| label.grid()[(r, 1)] == 0.0));
    }

    #[test]
    fn concave_clip_area_is_exact() {
        // L-shape: 2x2 square missing its upper-right quadrant.
        let l = MaskPolygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ])
        .unwrap();
        let r = Rect { x0: 0.5, y0: 0.5, x1: 1.5, y1: 1.5 };
        assert!((l.clipped_area(&r) - 0.75).abs() < 1e-12);
        assert!((l.area() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn weight_map_assigns_paper_weights() {
        let lm = face();
        let map = region_weight_map(&lm, RegionWeights::default(), 14).unwrap();
        let eye = eye_region(&lm);
        let (ne, nm, no) = map.region_counts();
        assert!(ne > 0 && nm > 0 && no > 0);
        assert_eq!(ne + nm + no, 196);
        for r in 0..14 {
            for c in 0..14 {
                let cell = cell_rect(r, c, 14, 224, 224);
                if cell.intersection_area(&eye) == cell.area() {
                    assert_eq!(map.grid()[(r, c)], 0.6);
                }
            }
        }
        // Corner cells are background.
        assert_eq!(map.grid()[(0, 0)], 0.3);
        assert_eq!(map.grid()[(13, 13)], 0.3);
    }

    #[test]
    fn unit_weights_give_all_ones() {
        let map = region_weight_map(&face(), RegionWeights::UNIFORM, 14).unwrap();
        assert!(map.grid().iter().all(|v| v == 1.0));
    }

    #[test]
    fn non_positive_weights_rejected() {
        let w = RegionWeights { eye: 0.6, mask: 0.0, other: 0.3 };
        assert!(region_weight_map(&face(), w, 14).is_err());
    }

    #[test]
    fn landmark_csv_round_trip() {
        let lm = face();
        let text = lm.to_csv_string();
        assert!(text.starts_with("index,x,y\n"));
        assert_eq!(text.lines().count(), 69);
        let back = LandmarkSet::read_csv(text.as_bytes(), 224, 224).unwrap();
        assert_eq!(back, lm);
        assert!(LandmarkSet::read_csv("index,x,y\n0,1,2\n".as_bytes(), 224, 224).is_err());
    }
}
