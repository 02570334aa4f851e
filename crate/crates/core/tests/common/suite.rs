//! Handcrafted metric fixtures and brute-force recomputation of every metric.

use gvcl::metrics::{MetricValues, PredictionRecord};
use gvcl::rng::rng_from;
use gvcl::scenegen::{AgentPose, DrivableMask};
use gvcl::trajset::{Trajectory, TrajectorySet};
use rand::Rng;

pub const K: usize = 10;

pub fn mask() -> DrivableMask {
    let mut m = DrivableMask::new(80, 80, 0.5, [-20.0, -20.0], false).unwrap();
    // everything with y > 3 is off-road
    m.paint(|p| p[1] <= 3.0);
    m
}

pub fn set(seed: u64) -> TrajectorySet {
    let mut rng = rng_from(seed, &[]);
    let elements = (0..K)
        .map(|_| {
            Trajectory::new(
                (0..3)
                    .map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0)])
                    .collect(),
            )
        })
        .collect();
    TrajectorySet {
        format_version: 1,
        epsilon: 1.0,
        elements,
        source_hash: String::new(),
    }
}

pub fn records<'m>(mask: &'m DrivableMask, set: &TrajectorySet, n: usize, seed: u64) -> Vec<PredictionRecord<'m>> {
    let mut rng = rng_from(seed, &[1]);
    (0..n)
        .map(|i| {
            // a quarter of the records carry exact ties
            let raw: Vec<f64> = (0..K)
                .map(|_| {
                    if i % 4 == 0 {
                        rng.random_range(1..4) as f64
                    } else {
                        rng.random_range(0.01..1.0)
                    }
                })
                .collect();
            let total: f64 = raw.iter().sum();
            let probs = raw.iter().map(|v| v / total).collect();
            // every third ground truth sits near a set element, so hits occur
            let gt = if i % 3 == 1 {
                let e = &set.elements[rng.random_range(0..set.len())];
                Trajectory::new(
                    e.points
                        .iter()
                        .map(|p| [p[0] + rng.random_range(-0.6..0.6), p[1] + rng.random_range(-0.6..0.6)])
                        .collect(),
                )
            } else {
                Trajectory::new(
                    (0..3)
                        .map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0)])
                        .collect(),
                )
            };
            let best = brute_closest(&gt, set);
            PredictionRecord {
                probs,
                gt,
                mask,
                pose: AgentPose::new([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], 0.0, 5.0),
                best_mode: best,
            }
        })
        .collect()
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn brute_closest(gt: &Trajectory, set: &TrajectorySet) -> usize {
    let d = |e: &Trajectory| {
        e.points
            .iter()
            .zip(&gt.points)
            .map(|(a, b)| dist(*a, *b))
            .fold(0.0, f64::max)
    };
    let mut best = 0;
    for j in 1..set.len() {
        if d(&set.elements[j]) < d(&set.elements[best]) {
            best = j;
        }
    }
    best
}

/// Zero-based position of mode `j`: modes strictly more probable, plus equally
/// probable modes of lower index.
pub fn position(p: &[f64], j: usize) -> usize {
    (0..p.len()).filter(|&i| p[i] > p[j] || (p[i] == p[j] && i < j)).count()
}

pub fn in_top(p: &[f64], j: usize, k: usize) -> bool {
    position(p, j) < k
}

pub fn brute_ade(r: &PredictionRecord<'_>, set: &TrajectorySet, k: usize) -> f64 {
    (0..set.len())
        .filter(|&j| in_top(&r.probs, j, k))
        .map(|j| {
            let e = &set.elements[j];
            e.points
                .iter()
                .zip(&r.gt.points)
                .map(|(a, b)| dist(*a, *b))
                .sum::<f64>()
                / e.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_inside(r: &PredictionRecord<'_>, traj: &Trajectory) -> bool {
    traj.points.iter().all(|&[x, y]| {
        let (s, c) = r.pose.heading.sin_cos();
        let map = [r.pose.position[0] + c * x - s * y, r.pose.position[1] + s * x + c * y];
        r.mask.is_drivable(map)
    })
}

/// All eleven metrics by direct enumeration, with every `k` capped at `|K|`.
pub fn brute_metrics(recs: &[PredictionRecord<'_>], set: &TrajectorySet) -> MetricValues {
    let n = recs.len() as f64;
    let kk = set.len();
    let top1 = |r: &PredictionRecord<'_>| (0..kk).find(|&j| position(&r.probs, j) == 0).unwrap();
    let acc = recs.iter().filter(|r| top1(r) == r.best_mode).count() as f64 / n;
    let rnk = recs
        .iter()
        .map(|r| (position(&r.probs, r.best_mode) + 1) as f64)
        .sum::<f64>()
        / n;
    let nll = recs.iter().map(|r| -r.probs[r.best_mode].ln()).sum::<f64>() / n;
    let mut ece = 0.0;
    for b in 0..10 {
        let lo = b as f64 / 10.0;
        let hi = (b + 1) as f64 / 10.0;
        let members: Vec<_> = recs
            .iter()
            .filter(|r| {
                let c = r.probs[top1(r)];
                c >= lo && (c < hi || (b == 9 && c <= 1.0))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let nb = members.len() as f64;
        let conf = members.iter().map(|r| r.probs[top1(r)]).sum::<f64>() / nb;
        let accuracy = members.iter().filter(|r| top1(r) == r.best_mode).count() as f64 / nb;
        ece += nb / n * (accuracy - conf).abs();
    }
    let ade = |k: usize| recs.iter().map(|r| brute_ade(r, set, k.min(kk))).sum::<f64>() / n;
    let fde_1 = recs
        .iter()
        .map(|r| {
            let e = &set.elements[top1(r)];
            dist(*e.points.last().unwrap(), *r.gt.points.last().unwrap())
        })
        .sum::<f64>()
        / n;
    let k5 = 5.min(kk);
    let hit_rate_5_2 = recs
        .iter()
        .filter(|r| {
            (0..kk).any(|j| {
                in_top(&r.probs, j, k5)
                    && set.elements[j]
                        .points
                        .iter()
                        .zip(&r.gt.points)
                        .all(|(a, b)| dist(*a, *b) <= 2.0)
            })
        })
        .count() as f64
        / n;
    let dac = recs
        .iter()
        .map(|r| {
            (0..kk)
                .filter(|&j| in_top(&r.probs, j, k5) && brute_inside(r, &set.elements[j]))
                .count()
        })
        .sum::<usize>() as f64
        / (k5 as f64 * n);
    MetricValues {
        acc,
        nll,
        ece,
        rnk,
        ade_1: ade(1),
        ade_5: ade(5),
        ade_10: ade(10),
        ade_15: ade(15),
        fde_1,
        hit_rate_5_2,
        dac,
    }
}

/// Compare computed metrics with the brute-force values: counts and
/// count-derived ratios exactly, continuous values within `1e-9`.
pub fn compare(got: &MetricValues, want: &MetricValues) -> Result<(), String> {
    let exact = [
        ("acc", got.acc, want.acc),
        ("rnk", got.rnk, want.rnk),
        ("hit_rate", got.hit_rate_5_2, want.hit_rate_5_2),
        ("dac", got.dac, want.dac),
    ];
    for (name, g, w) in exact {
        if g != w {
            return Err(format!("{name}: {g} vs {w}"));
        }
    }
    let close = [
        ("nll", got.nll, want.nll),
        ("ece", got.ece, want.ece),
        ("ade_1", got.ade_1, want.ade_1),
        ("ade_5", got.ade_5, want.ade_5),
        ("ade_10", got.ade_10, want.ade_10),
        ("ade_15", got.ade_15, want.ade_15),
        ("fde_1", got.fde_1, want.fde_1),
    ];
    for (name, g, w) in close {
        if (g - w).abs() >= 1e-9 {
            return Err(format!("{name}: {g} vs {w}"));
        }
    }
    Ok(())
}
