//! Ego-centered, heading-up bird's-eye-view raster with semantic channels:
//! 0 = drivable area, 1 = target history, 2 = other agents' histories.

use super::geometry::{AgentPose, DrivableMask, Point};

pub const RASTER_SIZE: usize = 64;
pub const RASTER_CHANNELS: usize = 3;
pub const RASTER_RESOLUTION: f64 = 0.5;
/// Pixel holding the ego position: 20 m visible ahead, 12 m behind.
pub const ANCHOR_ROW: usize = 40;
pub const ANCHOR_COL: usize = 32;
pub const OLDEST_INTENSITY: f32 = 0.25;

pub const RASTER_LEN: usize = RASTER_SIZE * RASTER_SIZE * RASTER_CHANNELS;

/// Ego-frame position of a pixel center (x forward, y left).
pub fn pixel_to_ego(row: usize, col: usize) -> Point {
    [
        (ANCHOR_ROW as f64 - row as f64) * RASTER_RESOLUTION,
        (ANCHOR_COL as f64 - col as f64) * RASTER_RESOLUTION,
    ]
}

/// Nearest pixel to an ego-frame point, if it lies on the raster.
pub fn ego_to_pixel(p: Point) -> Option<(usize, usize)> {
    let r = (ANCHOR_ROW as f64 - p[0] / RASTER_RESOLUTION).round();
    let c = (ANCHOR_COL as f64 - p[1] / RASTER_RESOLUTION).round();
    let n = RASTER_SIZE as f64;
    (r >= 0.0 && c >= 0.0 && r < n && c < n).then_some((r as usize, c as usize))
}

/// Intensity of pose `k` out of `n`, rising linearly to 1 at the newest.
pub fn history_intensity(k: usize, n: usize) -> f32 {
    if n <= 1 {
        return 1.0;
    }
    OLDEST_INTENSITY + (1.0 - OLDEST_INTENSITY) * k as f32 / (n - 1) as f32
}

fn paint_history(plane: &mut [f32], ego: &AgentPose, poses: &[AgentPose]) {
    for (k, pose) in poses.iter().enumerate() {
        let v = history_intensity(k, poses.len());
        let centre = ego.to_ego(pose.position);
        // paint a 3x3 block; neighbours may fall off the raster
        let r = ANCHOR_ROW as f64 - centre[0] / RASTER_RESOLUTION;
        let c = ANCHOR_COL as f64 - centre[1] / RASTER_RESOLUTION;
        let (r, c) = (r.round(), c.round());
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + f64::from(dr), c + f64::from(dc));
                if rr >= 0.0 && cc >= 0.0 && rr < RASTER_SIZE as f64 && cc < RASTER_SIZE as f64 {
                    let idx = rr as usize * RASTER_SIZE + cc as usize;
                    plane[idx] = plane[idx].max(v);
                }
            }
        }
    }
}

/// Channel-planar `3 x 64 x 64` raster around `ego`.
pub fn render_raster(
    mask: &DrivableMask,
    ego: &AgentPose,
    target_history: &[AgentPose],
    others: &[Vec<AgentPose>],
) -> Vec<f32> {
    let plane = RASTER_SIZE * RASTER_SIZE;
    let mut raster = vec![0.0f32; RASTER_LEN];
    let (map, rest) = raster.split_at_mut(plane);
    let (target, other) = rest.split_at_mut(plane);
    for row in 0..RASTER_SIZE {
        for col in 0..RASTER_SIZE {
            if mask.is_drivable(ego.to_map(pixel_to_ego(row, col))) {
                map[row * RASTER_SIZE + col] = 1.0;
            }
        }
    }
    paint_history(target, ego, target_history);
    for h in others {
        paint_history(other, ego, h);
    }
    raster
}
