//! Evaluation metrics over per-scene predicted distributions on a trajectory set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::geometry::{AgentPose, DrivableMask};
use crate::trajset::{final_distance, is_drivable, max_dist, mean_distance, Trajectory, TrajectorySet};

pub const NLL_CLAMP: f64 = 1e-12;
pub const ECE_BINS: usize = 10;
pub const DAC_TOP_K: usize = 5;
pub const HIT_RATE_K: usize = 5;
pub const HIT_RATE_DISTANCE: f64 = 2.0;

/// One evaluated scene.
#[derive(Clone, Debug)]
pub struct PredictionRecord<'a> {
    pub probs: Vec<f64>,
    pub gt: Trajectory,
    pub mask: &'a DrivableMask,
    pub pose: AgentPose,
    /// Index of the set element closest to `gt`.
    pub best_mode: usize,
}

impl PredictionRecord<'_> {
    pub fn validate(&self, modes: usize) -> Result<()> {
        if self.probs.len() != modes {
            return Err(Error::Shape(format!(
                "{} probabilities for {modes} modes",
                self.probs.len()
            )));
        }
        if self.best_mode >= modes {
            return Err(Error::InvalidArgument(format!(
                "best mode {} out of range",
                self.best_mode
            )));
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }
}

/// Mode indices by descending probability; ties keep the lower index first.
pub fn ranked_modes(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// The `k` most probable modes.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut r = ranked_modes(probs);
    r.truncate(k);
    r
}

/// Mean that does not depend on the order of `values`.
fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn non_empty(records: &[PredictionRecord<'_>]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one record".into()));
    }
    Ok(())
}

fn check_k(k: usize, set: &TrajectorySet) -> Result<()> {
    if k == 0 || k > set.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={} for this trajectory set",
            set.len()
        )));
    }
    Ok(())
}

fn check_record(record: &PredictionRecord<'_>, set: &TrajectorySet) -> Result<()> {
    if record.probs.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for a set of {} modes",
            record.probs.len(),
            set.len()
        )));
    }
    if record.gt.len() != set.horizon() {
        return Err(Error::Shape(format!(
            "ground truth has {} points, set elements have {}",
            record.gt.len(),
            set.horizon()
        )));
    }
    Ok(())
}

/// Smallest mean displacement among the `k` most probable modes.
pub fn ade_k(record: &PredictionRecord<'_>, set: &TrajectorySet, k: usize) -> Result<f64> {
    check_k(k, set)?;
    check_record(record, set)?;
    top_k(&record.probs, k)
        .into_iter()
        .map(|m| mean_distance(&set.elements[m], &record.gt))
        .try_fold(f64::INFINITY, |best, d| d.map(|d| best.min(d)))
}

/// Final-point displacement of the most probable mode.
pub fn fde_1(record: &PredictionRecord<'_>, set: &TrajectorySet) -> Result<f64> {
    check_record(record, set)?;
    let top = top_k(&record.probs, 1)[0];
    final_distance(&set.elements[top], &record.gt)
}

/// Fraction of records whose most probable mode is the best mode.
pub fn acc(records: &[PredictionRecord<'_>]) -> Result<f64> {
    non_empty(records)?;
    let hits = records
        .iter()
        .filter(|r| top_k(&r.probs, 1).first() == Some(&r.best_mode))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean 1-based position of the best mode in the probability ranking.
pub fn rank(records: &[PredictionRecord<'_>]) -> Result<f64> {
    non_empty(records)?;
    let ranks = records
        .iter()
        .map(|r| {
            let pos = ranked_modes(&r.probs).iter().position(|&m| m == r.best_mode);
            pos.map(|p| (p + 1) as f64)
                .ok_or_else(|| Error::InvalidArgument(format!("best mode {} out of range", r.best_mode)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(order_free_mean(ranks))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllValue {
    pub nll: f64,
    /// Records whose best-mode probability was raised to the clamp.
    pub clamped: usize,
}

/// Mean negative log-probability of the best mode, probabilities clamped at 1e-12.
pub fn nll(records: &[PredictionRecord<'_>]) -> Result<NllValue> {
    non_empty(records)?;
    let mut clamped = 0;
    let mut values = Vec::with_capacity(records.len());
    for r in records {
        let p = *r
            .probs
            .get(r.best_mode)
            .ok_or_else(|| Error::InvalidArgument(format!("best mode {} out of range", r.best_mode)))?;
        if p < NLL_CLAMP {
            clamped += 1;
        }
        values.push(-p.max(NLL_CLAMP).ln());
    }
    Ok(NllValue {
        nll: order_free_mean(values),
        clamped,
    })
}

/// Confidence/correctness pairs: top-1 probability and whether it is the best mode.
fn confidences(records: &[PredictionRecord<'_>]) -> Vec<(f64, bool)> {
    records
        .iter()
        .map(|r| {
            let top = top_k(&r.probs, 1)[0];
            (r.probs[top], top == r.best_mode)
        })
        .collect()
}

/// Expected calibration error over equal-width confidence bins; the last bin
/// is closed at 1.
pub fn ece(records: &[PredictionRecord<'_>], n_bins: usize) -> Result<f64> {
    non_empty(records)?;
    ece_from_pairs(&confidences(records), n_bins)
}

/// Expected calibration error of raw `(confidence, correct)` pairs.
pub fn ece_from_pairs(pairs: &[(f64, bool)], n_bins: usize) -> Result<f64> {
    if pairs.is_empty() || n_bins == 0 {
        return Err(Error::InvalidArgument(
            "calibration needs records and at least one bin".into(),
        ));
    }
    let mut bins: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n_bins];
    for &(c, ok) in pairs {
        let b = ((c * n_bins as f64).floor() as usize).min(n_bins - 1);
        bins[b].push((c, ok));
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for bin in bins.iter_mut().filter(|b| !b.is_empty()) {
        bin.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let count = bin.len() as f64;
        let conf = bin.iter().map(|p| p.0).sum::<f64>() / count;
        let accuracy = bin.iter().filter(|p| p.1).count() as f64 / count;
        total += count / n * (accuracy - conf).abs();
    }
    Ok(total)
}

/// Mean fraction of the `top_k` most probable modes lying entirely on drivable cells.
pub fn dac(records: &[PredictionRecord<'_>], set: &TrajectorySet, top_k_modes: usize) -> Result<f64> {
    non_empty(records)?;
    check_k(top_k_modes, set)?;
    // mean of per-record fractions, computed from the integer total
    let mut inside = 0usize;
    for r in records {
        check_record(r, set)?;
        inside += top_k(&r.probs, top_k_modes)
            .into_iter()
            .filter(|&m| is_drivable(&set.elements[m], r.mask, &r.pose))
            .count();
    }
    Ok(inside as f64 / (top_k_modes * records.len()) as f64)
}

/// Fraction of records where some top-`k` mode stays within `d` meters
/// (largest pointwise distance) of the ground truth.
pub fn hit_rate(records: &[PredictionRecord<'_>], set: &TrajectorySet, k: usize, d: f64) -> Result<f64> {
    non_empty(records)?;
    check_k(k, set)?;
    let mut hits = 0;
    for r in records {
        check_record(r, set)?;
        if top_k(&r.probs, k)
            .into_iter()
            .any(|m| max_dist(&set.elements[m], &r.gt) <= d)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// The eleven reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub acc: f64,
    pub nll: f64,
    pub ece: f64,
    pub rnk: f64,
    pub ade_1: f64,
    pub ade_5: f64,
    pub ade_10: f64,
    pub ade_15: f64,
    pub fde_1: f64,
    pub hit_rate_5_2: f64,
    pub dac: f64,
}

/// Metric names in report order, and whether larger values are better.
pub const METRIC_NAMES: [(&str, bool); 11] = [
    ("acc", true),
    ("nll", false),
    ("ece", false),
    ("rnk", false),
    ("ade_1", false),
    ("ade_5", false),
    ("ade_10", false),
    ("ade_15", false),
    ("fde_1", false),
    ("hit_rate_5_2", true),
    ("dac", true),
];

impl MetricValues {
    pub fn as_array(&self) -> [f64; 11] {
        [
            self.acc,
            self.nll,
            self.ece,
            self.rnk,
            self.ade_1,
            self.ade_5,
            self.ade_10,
            self.ade_15,
            self.fde_1,
            self.hit_rate_5_2,
            self.dac,
        ]
    }

    pub fn from_array(v: [f64; 11]) -> Self {
        MetricValues {
            acc: v[0],
            nll: v[1],
            ece: v[2],
            rnk: v[3],
            ade_1: v[4],
            ade_5: v[5],
            ade_10: v[6],
            ade_15: v[7],
            fde_1: v[8],
            hit_rate_5_2: v[9],
            dac: v[10],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricValues,
    pub nll_clamped: usize,
    pub records: usize,
}

/// All metrics at once. Mode counts above the set size are capped at `|K|`.
pub fn evaluate(records: &[PredictionRecord<'_>], set: &TrajectorySet) -> Result<Evaluation> {
    non_empty(records)?;
    for r in records {
        r.validate(set.len())?;
        check_record(r, set)?;
    }
    let cap = |k: usize| k.min(set.len());
    let mean_ade = |k: usize| -> Result<f64> {
        let v = records
            .iter()
            .map(|r| ade_k(r, set, cap(k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(order_free_mean(v))
    };
    let fde = records.iter().map(|r| fde_1(r, set)).collect::<Result<Vec<_>>>()?;
    let nll_value = nll(records)?;
    Ok(Evaluation {
        metrics: MetricValues {
            acc: acc(records)?,
            nll: nll_value.nll,
            ece: ece(records, ECE_BINS)?,
            rnk: rank(records)?,
            ade_1: mean_ade(1)?,
            ade_5: mean_ade(5)?,
            ade_10: mean_ade(10)?,
            ade_15: mean_ade(15)?,
            fde_1: order_free_mean(fde),
            hit_rate_5_2: hit_rate(records, set, cap(HIT_RATE_K), HIT_RATE_DISTANCE)?,
            dac: dac(records, set, cap(DAC_TOP_K))?,
        },
        nll_clamped: nll_value.clamped,
        records: records.len(),
    })
}
