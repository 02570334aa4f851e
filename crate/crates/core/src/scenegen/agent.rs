//! Lane-following agents: pure-pursuit steering, curve-aware speed control
//! and constant-turn-rate-and-velocity integration.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::AgentPose;
use super::layout::{RoadLayout, Route};
use super::GeneratorConfig;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::trajset::{is_drivable, Trajectory};

/// Poses sampled at the frame rate over history and future, plus the
/// dynamic state at prediction time.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    /// `history_len` poses ending at prediction time, then `future_len` poses.
    pub poses: Vec<AgentPose>,
    pub accel: f64,
    pub yaw_rate: f64,
}

impl AgentTrack {
    pub fn history<'a>(&'a self, cfg: &GeneratorConfig) -> &'a [AgentPose] {
        &self.poses[..cfg.history_len]
    }

    pub fn current(&self, cfg: &GeneratorConfig) -> &AgentPose {
        &self.poses[cfg.history_len - 1]
    }

    /// Future positions in the ego frame of the current pose.
    pub fn future(&self, cfg: &GeneratorConfig) -> Trajectory {
        let ego = self.current(cfg);
        Trajectory::new(
            self.poses[cfg.history_len..]
                .iter()
                .map(|p| ego.to_ego(p.position))
                .collect(),
        )
    }
}

/// Integrate one agent along `route` from arclength `s_start` for `frames`
/// frame intervals after the initial pose. `noise` supplies the per-step
/// acceleration and yaw-rate perturbations.
pub fn simulate_on_route<R: Rng>(
    route: &Route,
    s_start: f64,
    v0: f64,
    v_target: f64,
    frames: usize,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> AgentTrack {
    let steps_per_frame = (1.0 / (cfg.frame_rate * cfg.dt)).round() as usize;
    let accel_noise = Normal::new(0.0, cfg.accel_noise).expect("finite noise scale");
    let yaw_noise = Normal::new(0.0, cfg.yaw_rate_noise).expect("finite noise scale");
    let now_step = (cfg.history_len - 1) * steps_per_frame;

    let mut pos = route.point_at(s_start);
    let mut heading = route.heading_at(s_start);
    let mut v = v0;
    let mut s = s_start;
    let mut poses = vec![AgentPose::new(pos, heading, v)];
    let (mut accel_now, mut yaw_now) = (0.0, 0.0);

    for step in 0..frames * steps_per_frame {
        s = route.project(pos, s, 5.0 + v * cfg.dt);
        let lookahead = (cfg.lookahead_gain * v).clamp(cfg.lookahead_min, cfg.lookahead_max);
        let target = route.point_at(s + lookahead);
        let (sh, ch) = heading.sin_cos();
        let (dx, dy) = (target[0] - pos[0], target[1] - pos[1]);
        let lat = -sh * dx + ch * dy;
        let dist2 = dx * dx + dy * dy;
        let curvature = if dist2 > 0.0 { 2.0 * lat / dist2 } else { 0.0 };

        let braking = v * v / (2.0 * cfg.comfort_decel) + cfg.lookahead_min;
        let mut v_limit = f64::INFINITY;
        let mut probe = 0.0;
        while probe <= braking {
            let k = route.curvature_at(s + probe);
            if k > 1e-9 {
                v_limit = v_limit.min((cfg.max_lat_accel / k).sqrt());
            }
            probe += 1.0;
        }
        let v_des = v_target.min(v_limit);
        let mut a = (cfg.speed_gain * (v_des - v)).clamp(-cfg.max_decel, cfg.max_accel);
        let mut omega = v * curvature;
        if cfg.accel_noise > 0.0 {
            a += accel_noise.sample(rng);
        }
        if cfg.yaw_rate_noise > 0.0 {
            omega += yaw_noise.sample(rng);
        }
        if step == now_step {
            accel_now = a;
            yaw_now = omega;
        }

        pos = [pos[0] + v * heading.cos() * cfg.dt, pos[1] + v * heading.sin() * cfg.dt];
        heading += omega * cfg.dt;
        v = (v + a * cfg.dt).max(0.0);
        if (step + 1) % steps_per_frame == 0 {
            poses.push(AgentPose::new(pos, heading, v));
        }
    }
    AgentTrack {
        poses,
        accel: accel_now,
        yaw_rate: yaw_now,
    }
}

/// Arclength interval of `route` that lies inside the mask bounds.
fn in_map_span(layout: &RoadLayout, route: &Route) -> Option<(f64, f64)> {
    let mut span: Option<(f64, f64)> = None;
    let mut s = 0.0;
    while s <= route.length() {
        if layout.mask.cell_of(route.point_at(s)).is_some() {
            span = Some(span.map_or((s, s), |(a, _)| (a, s)));
        }
        s += 1.0;
    }
    span
}

fn initial_speed(route: &Route, s: f64, v_target: f64, cfg: &GeneratorConfig) -> f64 {
    let k = route.curvature_at(s);
    if k > 1e-9 {
        v_target.min((cfg.max_lat_accel / k).sqrt())
    } else {
        v_target
    }
}

/// The target agent of a scene: history poses, ego-frame future and
/// `(speed, acceleration, yaw rate)` at prediction time. The future is
/// rejection-sampled to stay on drivable cells.
pub fn simulate_agent(layout: &RoadLayout, cfg: &GeneratorConfig, seed: u64) -> Result<AgentTrack> {
    if layout.routes.is_empty() || layout.mask.drivable_count() == 0 {
        return Err(Error::Generation("layout has no road to place an agent on".into()));
    }
    let frames = cfg.history_len + cfg.future_len - 1;
    let history_time = (cfg.history_len - 1) as f64 / cfg.frame_rate;
    let future_time = cfg.future_len as f64 / cfg.frame_rate;
    for attempt in 0..cfg.max_attempts {
        let mut rng = rng_from(seed, &[0xa9e7, attempt as u64]);
        let route = &layout.routes[rng.random_range(0..layout.routes.len())];
        let Some((s_in, s_out)) = in_map_span(layout, route) else {
            continue;
        };
        let v_target = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
        let latest = (s_out - 0.95 * v_target * future_time).max(s_in + 1.0);
        let s_now = rng.random_range(s_in + 1.0..=latest.max(s_in + 1.0));
        let s_start = (s_now - v_target * history_time).max(0.0);
        let v0 = initial_speed(route, s_start, v_target, cfg);
        let track = simulate_on_route(route, s_start, v0, v_target, frames, cfg, &mut rng);
        let ego = track.current(cfg);
        if is_drivable(&track.future(cfg), &layout.mask, ego) && layout.mask.is_drivable(ego.position) {
            return Ok(track);
        }
    }
    Err(Error::Generation(format!(
        "no drivable agent placement after {} attempts",
        cfg.max_attempts
    )))
}

/// History-only agent anywhere on the in-map part of a random route.
pub fn simulate_background_agent(layout: &RoadLayout, cfg: &GeneratorConfig, seed: u64) -> Option<Vec<AgentPose>> {
    let mut rng = rng_from(seed, &[0xb6]);
    let route = &layout.routes[rng.random_range(0..layout.routes.len())];
    let (s_in, s_out) = in_map_span(layout, route)?;
    let v_target = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
    let s_start = rng.random_range(s_in..=s_out.max(s_in));
    let v0 = initial_speed(route, s_start, v_target, cfg);
    Some(simulate_on_route(route, s_start, v0, v_target, cfg.history_len - 1, cfg, &mut rng).poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::layout::generate_layout;

    #[test]
    fn noiseless_straight_motion() {
        let cfg = GeneratorConfig {
            accel_noise: 0.0,
            yaw_rate_noise: 0.0,
            ..GeneratorConfig::default()
        };
        let route = Route::new((0..=800).map(|i| [i as f64 * 0.25 - 50.0, -1.75]).collect());
        let mut rng = rng_from(1, &[]);
        let v = 8.0;
        let frames = cfg.history_len + cfg.future_len - 1;
        let track = simulate_on_route(&route, 0.0, v, v, frames, &cfg, &mut rng);
        let fut = track.future(&cfg);
        for (k, p) in fut.points.iter().enumerate() {
            let expected = v * (k + 1) as f64 / cfg.frame_rate;
            assert!((p[0] - expected).abs() < 1e-9, "{k}: {p:?}");
            assert!(p[1].abs() < 1e-9);
        }
        assert_eq!(track.accel, 0.0);
        assert_eq!(track.yaw_rate, 0.0);
    }

    #[test]
    fn futures_are_drivable() {
        let cfg = GeneratorConfig::default();
        for seed in 0..30 {
            let layout = generate_layout(seed, &cfg);
            let track = simulate_agent(&layout, &cfg, seed).unwrap();
            assert_eq!(track.poses.len(), cfg.history_len + cfg.future_len);
            assert!(is_drivable(&track.future(&cfg), &layout.mask, track.current(&cfg)));
        }
    }
}
