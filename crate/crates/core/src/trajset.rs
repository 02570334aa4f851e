//! Fixed trajectory sets: epsilon-covers of a trajectory corpus and the two
//! label types derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::scenegen::geometry::{AgentPose, DrivableMask, Point};

pub const TRAJSET_FORMAT_VERSION: u32 = 1;

/// Future positions in the ego frame at prediction time (x forward, y left).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn new(points: Vec<Point>) -> Self {
        Trajectory { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

fn check_lengths(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "trajectories of length {} and {} cannot be compared",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn point_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Largest pointwise Euclidean distance.
pub fn traj_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(max_dist(a, b))
}

pub(crate) fn max_dist(a: &Trajectory, b: &Trajectory) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| point_dist(*p, *q))
        .fold(0.0, f64::max)
}

/// Mean pointwise Euclidean distance.
pub fn mean_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_lengths(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| point_dist(*p, *q))
        .sum::<f64>()
        / a.len() as f64)
}

/// Distance between the last points.
pub fn final_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(match (a.points.last(), b.points.last()) {
        (Some(p), Some(q)) => point_dist(*p, *q),
        _ => 0.0,
    })
}

/// Hex SHA-256 over the corpus (count, lengths and little-endian coordinates).
pub fn corpus_digest(corpus: &[Trajectory]) -> String {
    let mut h = Sha256::new();
    h.update((corpus.len() as u64).to_le_bytes());
    for t in corpus {
        h.update((t.len() as u64).to_le_bytes());
        for p in &t.points {
            h.update(p[0].to_le_bytes());
            h.update(p[1].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub format_version: u32,
    pub epsilon: f64,
    pub elements: Vec<Trajectory>,
    pub source_hash: String,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.elements.first().map_or(0, Trajectory::len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: TrajectorySet = read_json(path)?;
        if set.format_version != TRAJSET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported trajectory set version {}",
                set.format_version
            )));
        }
        if set.elements.is_empty() {
            return Err(Error::Format(format!("{}: empty trajectory set", path.display())));
        }
        Ok(set)
    }
}

/// Greedy epsilon-cover. Each round selects, among trajectories not yet
/// covered, the one whose epsilon-ball holds the most uncovered trajectories
/// (lowest index on ties). Selected elements are therefore pairwise more than
/// `epsilon` apart.
pub fn build_cover(corpus: &[Trajectory], epsilon: f64) -> Result<TrajectorySet> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a trajectory set from an empty corpus".into(),
        ));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let horizon = corpus[0].len();
    for (i, t) in corpus.iter().enumerate() {
        if t.len() != horizon {
            return Err(Error::Shape(format!(
                "trajectory {i} has {} points, expected {horizon}",
                t.len()
            )));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("trajectory {i} has non-finite points")));
        }
    }

    let n = corpus.len();
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        neighbors[i].push(i as u32);
        for j in i + 1..n {
            if max_dist(&corpus[i], &corpus[j]) <= epsilon {
                neighbors[i].push(j as u32);
                neighbors[j].push(i as u32);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    let mut gain: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut elements = Vec::new();
    while remaining > 0 {
        let mut best = None;
        for i in 0..n {
            if !covered[i] && best.is_none_or(|b: usize| gain[i] > gain[b]) {
                best = Some(i);
            }
        }
        let c = best.expect("an uncovered trajectory exists");
        elements.push(corpus[c].clone());
        for &u in &neighbors[c] {
            let u = u as usize;
            if !covered[u] {
                covered[u] = true;
                remaining -= 1;
                for &w in &neighbors[u] {
                    gain[w as usize] -= 1;
                }
            }
        }
    }
    Ok(TrajectorySet {
        format_version: TRAJSET_FORMAT_VERSION,
        epsilon,
        elements,
        source_hash: corpus_digest(corpus),
    })
}

/// Index of the nearest element; ties go to the lowest index.
pub fn closest_mode(gt: &Trajectory, set: &TrajectorySet) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("trajectory set is empty".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (i, e) in set.elements.iter().enumerate() {
        let d = traj_distance(gt, e)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// Whether every point of an ego-frame trajectory lands on a drivable cell.
pub fn is_drivable(traj: &Trajectory, mask: &DrivableMask, pose: &AgentPose) -> bool {
    traj.points.iter().all(|&p| mask.is_drivable(pose.to_map(p)))
}

/// Entry `j` is true iff element `j`, placed at `pose`, stays on drivable cells.
pub fn drivable_labels(set: &TrajectorySet, mask: &DrivableMask, pose: &AgentPose) -> Vec<bool> {
    set.elements.iter().map(|e| is_drivable(e, mask, pose)).collect()
}
