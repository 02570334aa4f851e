//! Map-frame geometry shared by scene generation, labels and metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Point,
    pub heading: f64,
    pub speed: f64,
}

impl AgentPose {
    pub fn new(position: Point, heading: f64, speed: f64) -> Self {
        AgentPose {
            position,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
        }
    }

    /// Ego frame (x forward, y left) to map frame.
    pub fn to_map(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [
            self.position[0] + c * p[0] - s * p[1],
            self.position[1] + s * p[0] + c * p[1],
        ]
    }

    /// Map frame to ego frame.
    pub fn to_ego(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.position[0];
        let dy = p[1] - self.position[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// The same pose after rotating the map frame by +90 degrees about its origin.
    pub fn rotated_90(&self) -> Self {
        AgentPose::new(rot90(self.position), self.heading + PI / 2.0, self.speed)
    }
}

pub fn rot90(p: Point) -> Point {
    [-p[1], p[0]]
}

/// Bit-packed occupancy grid; `true` marks a drivable cell. Cell `(ix, iy)`
/// covers `[origin + i * resolution, origin + (i + 1) * resolution)` on each axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivableMask {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point,
    bits: Vec<u64>,
}

impl DrivableMask {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point, drivable: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("mask must have at least one cell".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mask resolution must be positive, got {resolution}"
            )));
        }
        let fill = if drivable { u64::MAX } else { 0 };
        let mut mask = DrivableMask {
            width,
            height,
            resolution,
            origin,
            bits: vec![fill; (width * height).div_ceil(64)],
        };
        mask.clear_padding();
        Ok(mask)
    }

    fn clear_padding(&mut self) {
        let n = self.width * self.height;
        if !n.is_multiple_of(64) {
            if let Some(last) = self.bits.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn get(&self, ix: usize, iy: usize) -> bool {
        let i = iy * self.width + ix;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, ix: usize, iy: usize, drivable: bool) {
        let i = iy * self.width + ix;
        if drivable {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Map-frame center of a cell.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        let (r, o) = (self.resolution(), self.origin());
        [o[0] + (ix as f64 + 0.5) * r, o[1] + (iy as f64 + 0.5) * r]
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let (r, o) = (self.resolution(), self.origin());
        let fx = ((p[0] - o[0]) / r).floor();
        let fy = ((p[1] - o[1]) / r).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64 {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    /// Points outside the grid are not drivable.
    pub fn is_drivable(&self, p: Point) -> bool {
        self.cell_of(p).is_some_and(|(ix, iy)| self.get(ix, iy))
    }

    pub fn drivable_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn drivable_fraction(&self) -> f64 {
        self.drivable_count() as f64 / (self.width * self.height) as f64
    }

    /// Set every cell whose center satisfies `pred`.
    pub fn paint(&mut self, pred: impl Fn(Point) -> bool) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                if pred(self.cell_center(ix, iy)) {
                    self.set(ix, iy, true);
                }
            }
        }
    }

    /// The mask after rotating the map frame by +90 degrees about its origin.
    pub fn rotated_90(&self) -> Self {
        let (r, o) = (self.resolution(), self.origin());
        let mut out = DrivableMask::new(
            self.height,
            self.width,
            r,
            [-(o[1] + self.height as f64 * r), o[0]],
            false,
        )
        .expect("rotation preserves a valid shape");
        for iy in 0..out.height {
            for ix in 0..out.width {
                if self.get(iy, self.height - 1 - ix) {
                    out.set(ix, iy, true);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ego_round_trip() {
        let pose = AgentPose::new([12.5, -3.25], 2.1, 4.0);
        for p in [[0.0, 0.0], [3.0, -7.5], [-40.0, 22.0]] {
            let back = pose.to_ego(pose.to_map(p));
            assert!((back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9);
        }
        let fwd = pose.to_map([1.0, 0.0]);
        assert!((fwd[0] - 12.5 - 2.1f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cells_and_bounds() {
        let mut m = DrivableMask::new(4, 3, 0.5, [-1.0, -1.0], false).unwrap();
        m.set(2, 1, true);
        assert!(m.is_drivable([0.1, -0.4]));
        assert!(!m.is_drivable([0.6, -0.4]));
        assert!(!m.is_drivable([10.0, 0.0]));
        assert!(!m.is_drivable([-1.01, -0.9]));
        assert_eq!(m.drivable_count(), 1);
        assert!(DrivableMask::new(0, 3, 0.5, [0.0, 0.0], true).is_err());
        assert!(DrivableMask::new(3, 3, 0.0, [0.0, 0.0], true).is_err());
        let full = DrivableMask::new(5, 5, 1.0, [0.0, 0.0], true).unwrap();
        assert_eq!(full.drivable_count(), 25);
    }

    #[test]
    fn rotation_moves_cells_with_points() {
        let mut m = DrivableMask::new(6, 4, 0.5, [-1.5, -1.0], false).unwrap();
        m.set(1, 0, true);
        m.set(4, 3, true);
        let rot = m.rotated_90();
        for iy in 0..m.height() {
            for ix in 0..m.width() {
                let c = m.cell_center(ix, iy);
                assert_eq!(m.get(ix, iy), rot.is_drivable(rot90(c)), "cell {ix},{iy}");
            }
        }
        let four = rot.rotated_90().rotated_90().rotated_90();
        assert_eq!(four, m);
    }
}
