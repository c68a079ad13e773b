//! Presentation attack detection metrics: APCER, BPCER, ACER, BPCER-anchored
//! thresholds, ROC points and AUC.
//!
//! Scores are bona fide probabilities; a presentation is classified as an
//! attack iff `score < tau`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::dataset::{Category, Medium};
use crate::error::{Error, Result};
use crate::inference::ScoreRecord;

/// Which dev bona fide scores anchor the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    /// Masked and unmasked bona fide (BM0 and BM1).
    All,
    /// Unmasked bona fide only (BM0).
    Unmask,
}

impl fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdKind::All => "bpcer10_all",
            ThresholdKind::Unmask => "bpcer10_unmask",
        })
    }
}

impl FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "bpcer10_all" => Ok(ThresholdKind::All),
            "unmask" | "bpcer10_unmask" => Ok(ThresholdKind::Unmask),
            other => Err(Error::InvalidConfig(format!("unknown threshold kind '{other}'"))),
        }
    }
}

/// Rank `k = ceil(target * n)` without spurious round-up from products such
/// as `0.1 * 30 = 3.0000000000000004`.
fn target_rank(target: f64, n: usize) -> usize {
    let raw = target * n as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// The `ceil(target * n)`-th smallest bona fide score (at least the
/// smallest). With strict `<` classification this keeps the empirical BPCER
/// below `target` and is the largest threshold that does.
pub fn threshold_at_bpcer(bona_fide: &[f64], target: f64) -> Result<f64> {
    if bona_fide.is_empty() {
        return Err(Error::EmptyInput("bona fide dev scores"));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidConfig(format!("BPCER target {target} outside [0, 1]")));
    }
    let mut sorted = bona_fide.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[target_rank(target, sorted.len()) - 1])
}

/// Threshold at 10% BPCER on the dev bona fide records selected by `kind`.
pub fn select_threshold(dev: &[ScoreRecord], kind: ThresholdKind, target: f64) -> Result<f64> {
    let scores: Vec<f64> = dev
        .iter()
        .filter(|r| match kind {
            ThresholdKind::All => r.category.is_bona_fide(),
            ThresholdKind::Unmask => r.category == Category::BM0,
        })
        .map(|r| r.score)
        .collect();
    threshold_at_bpcer(&scores, target)
}

/// Percentage of attack scores classified as bona fide (`score >= tau`).
pub fn apcer(attacks: &[f64], tau: f64) -> Result<f64> {
    if attacks.is_empty() {
        return Err(Error::EmptyInput("attack scores"));
    }
    Ok(100.0 * attacks.iter().filter(|&&s| s >= tau).count() as f64 / attacks.len() as f64)
}

/// Percentage of bona fide scores classified as attack (`score < tau`).
pub fn bpcer(bona_fide: &[f64], tau: f64) -> Result<f64> {
    if bona_fide.is_empty() {
        return Err(Error::EmptyInput("bona fide scores"));
    }
    Ok(100.0 * bona_fide.iter().filter(|&&s| s < tau).count() as f64 / bona_fide.len() as f64)
}

fn split_classes(records: &[ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
    let bf = records.iter().filter(|r| r.category.is_bona_fide()).map(|r| r.score).collect();
    let at = records.iter().filter(|r| !r.category.is_bona_fide()).map(|r| r.score).collect();
    (bf, at)
}

/// Overall (APCER, BPCER, ACER) with every video weighted equally.
pub fn error_rates(records: &[ScoreRecord], tau: f64) -> Result<(f64, f64, f64)> {
    let (bf, at) = split_classes(records);
    if bf.is_empty() {
        return Err(Error::MissingClass("bona fide".into()));
    }
    if at.is_empty() {
        return Err(Error::MissingClass("attack".into()));
    }
    let a = apcer(&at, tau)?;
    let b = bpcer(&bf, tau)?;
    Ok((a, b, (a + b) / 2.0))
}

pub fn acer(records: &[ScoreRecord], tau: f64) -> Result<f64> {
    Ok(error_rates(records, tau)?.2)
}

/// P(bona fide score > attack score), ties counting one half.
pub fn auc(bona_fide: &[f64], attacks: &[f64]) -> Result<f64> {
    if bona_fide.is_empty() || attacks.is_empty() {
        return Err(Error::MissingClass(if bona_fide.is_empty() { "bona fide" } else { "attack" }.into()));
    }
    let mut at = attacks.to_vec();
    at.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in bona_fide {
        let below = at.partition_point(|&a| a < s);
        let tied = at[below..].partition_point(|&a| a <= s);
        wins += below as f64 + 0.5 * tied as f64;
    }
    Ok(wins / (bona_fide.len() as f64 * at.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Error rates at every distinct score, ascending in `tau`.
pub fn roc(records: &[ScoreRecord]) -> Result<Roc> {
    let (bf, at) = split_classes(records);
    let auc = auc(&bf, &at)?;
    let mut bf_sorted = bf.clone();
    bf_sorted.sort_by(f64::total_cmp);
    let mut at_sorted = at.clone();
    at_sorted.sort_by(f64::total_cmp);
    let mut taus: Vec<f64> = records.iter().map(|r| r.score).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let points = taus
        .into_iter()
        .map(|tau| {
            let bf_below = bf_sorted.partition_point(|&s| s < tau);
            let at_below = at_sorted.partition_point(|&s| s < tau);
            RocPoint {
                tau,
                apcer: 100.0 * (at_sorted.len() - at_below) as f64 / at_sorted.len() as f64,
                bpcer: 100.0 * bf_below as f64 / bf_sorted.len() as f64,
            }
        })
        .collect();
    Ok(Roc { points, auc })
}

pub fn write_roc_csv<W: Write>(roc: &Roc, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "apcer", "bpcer"])?;
    for p in &roc.points {
        w.write_record([p.tau.to_string(), p.apcer.to_string(), p.bpcer.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Test-set results at one dev-derived threshold, laid out like a
/// per-category PAD results table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tau: f64,
    pub tau_kind: ThresholdKind,
    pub bpcer_bm0: Option<f64>,
    pub bpcer_bm1: Option<f64>,
    /// Indexed `[medium][category]` with media (print, replay) and
    /// categories (AM0, AM1, AM2).
    pub apcer: [[Option<f64>; 3]; 2],
    pub apcer_overall: f64,
    pub bpcer_overall: f64,
    pub acer: f64,
    pub roc: Roc,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 12] = [
        "tau_kind",
        "tau",
        "bpcer_bm0",
        "bpcer_bm1",
        "apcer_print_am0",
        "apcer_print_am1",
        "apcer_print_am2",
        "apcer_replay_am0",
        "apcer_replay_am1",
        "apcer_replay_am2",
        "acer",
        "auc",
    ];

    pub fn apcer_of(&self, medium: Medium, category: Category) -> Option<f64> {
        let m = Medium::ATTACKS.iter().position(|&x| x == medium)?;
        let c = Category::ATTACKS.iter().position(|&x| x == category)?;
        self.apcer[m][c]
    }

    pub fn csv_row(&self) -> Vec<String> {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut row = vec![self.tau_kind.to_string(), self.tau.to_string(), cell(self.bpcer_bm0), cell(self.bpcer_bm1)];
        for m in &self.apcer {
            row.extend(m.iter().map(|&v| cell(v)));
        }
        row.push(format!("{:.6}", self.acer));
        row.push(format!("{:.6}", self.roc.auc));
        row
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_row())?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn scores_where(records: &[ScoreRecord], f: impl Fn(&ScoreRecord) -> bool) -> Vec<f64> {
    records.iter().filter(|r| f(r)).map(|r| r.score).collect()
}

/// Report for `test` at the threshold derived from `dev`.
pub fn evaluate(dev: &[ScoreRecord], test: &[ScoreRecord], kind: ThresholdKind) -> Result<EvalReport> {
    let tau = select_threshold(dev, kind, 0.10)?;
    evaluate_at(test, tau, kind)
}

pub fn evaluate_at(test: &[ScoreRecord], tau: f64, kind: ThresholdKind) -> Result<EvalReport> {
    let (apcer_overall, bpcer_overall, acer) = error_rates(test, tau)?;
    let per_bf = |c: Category| bpcer(&scores_where(test, |r| r.category == c), tau).ok();
    let mut table = [[None; 3]; 2];
    for (m, &medium) in Medium::ATTACKS.iter().enumerate() {
        for (c, &category) in Category::ATTACKS.iter().enumerate() {
            table[m][c] = apcer(&scores_where(test, |r| r.medium == medium && r.category == category), tau).ok();
        }
    }
    Ok(EvalReport {
        tau,
        tau_kind: kind,
        bpcer_bm0: per_bf(Category::BM0),
        bpcer_bm1: per_bf(Category::BM1),
        apcer: table,
        apcer_overall,
        bpcer_overall,
        acer,
        roc: roc(test)?,
    })
}
