//! Procedural road layouts: drivable mask plus lane-center routes.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{DrivableMask, Point};
use super::GeneratorConfig;
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    Straight,
    Curved,
    TIntersection,
    Crossroads,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 4] = [
        LayoutKind::Straight,
        LayoutKind::Curved,
        LayoutKind::TIntersection,
        LayoutKind::Crossroads,
    ];
}

const ROUTE_SPACING: f64 = 0.25;
/// Routes reach this far from the layout center, beyond the map edge.
const ROUTE_REACH: f64 = 110.0;
const JUNCTION_MARGIN: f64 = 5.0;

/// Lane-center polyline with cumulative arclength.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    points: Vec<Point>,
    cum: Vec<f64>,
}

impl Route {
    pub fn new(points: Vec<Point>) -> Self {
        assert!(points.len() >= 2, "a route needs at least two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(s);
        }
        Route { points, cum }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().expect("non-empty route")
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let len = self.cum[i + 1] - self.cum[i];
        let t = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        (i, t)
    }

    pub fn point_at(&self, s: f64) -> Point {
        let (i, t) = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Unsigned curvature from the heading change over a 2 m window.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (lo, hi) = ((s - 1.0).max(0.0), (s + 1.0).min(self.length()));
        if hi <= lo {
            return 0.0;
        }
        let dh = super::geometry::wrap_angle(self.heading_at(hi) - self.heading_at(lo));
        dh.abs() / (hi - lo)
    }

    /// Arclength of the closest route point, searching near `hint`.
    pub fn project(&self, p: Point, hint: f64, window: f64) -> f64 {
        let (start, _) = self.segment(hint - window);
        let (end, _) = self.segment(hint + window);
        let mut best = (f64::INFINITY, hint);
        for i in start..=end {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * d[0], a[1] + t * d[1]];
            let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
            if dist < best.0 {
                best = (dist, self.cum[i] + t * (self.cum[i + 1] - self.cum[i]));
            }
        }
        best.1
    }
}

/// Rotation then translation from the layout frame into the map frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: Point,
}

impl RigidTransform {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }

    pub fn invert(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (p[0] - self.translation[0], p[1] - self.translation[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

#[derive(Clone, Debug)]
pub struct RoadLayout {
    pub kind: LayoutKind,
    pub lanes_per_direction: usize,
    pub half_width: f64,
    /// Signed radius of the curved road (positive bends left); zero otherwise.
    pub radius: f64,
    pub transform: RigidTransform,
    pub mask: DrivableMask,
    pub routes: Vec<Route>,
}

impl RoadLayout {
    /// Whether a layout-frame point lies on the road surface.
    pub fn on_road_local(&self, q: Point) -> bool {
        on_road(self.kind, self.half_width, self.radius, q)
    }
}

fn on_road(kind: LayoutKind, hw: f64, radius: f64, q: Point) -> bool {
    let junction = || q[0].hypot(q[1]) <= hw + JUNCTION_MARGIN;
    match kind {
        LayoutKind::Straight => q[1].abs() <= hw,
        LayoutKind::Curved => ((q[0]).hypot(q[1] - radius) - radius.abs()).abs() <= hw,
        LayoutKind::TIntersection => q[1].abs() <= hw || (q[0].abs() <= hw && q[1] >= 0.0) || junction(),
        LayoutKind::Crossroads => q[1].abs() <= hw || q[0].abs() <= hw || junction(),
    }
}

fn right_of(h: Point) -> Point {
    [h[1], -h[0]]
}

fn left_of(h: Point) -> Point {
    [-h[1], h[0]]
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: Point, k: f64) -> Point {
    [a[0] * k, a[1] * k]
}

fn push_line(out: &mut Vec<Point>, from: Point, to: Point) {
    let len = (to[0] - from[0]).hypot(to[1] - from[1]);
    let n = ((len / ROUTE_SPACING).ceil() as usize).max(1);
    let start = usize::from(!out.is_empty());
    for k in start..=n {
        let t = k as f64 / n as f64;
        out.push([from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])]);
    }
}

fn push_arc(out: &mut Vec<Point>, center: Point, radius: f64, from_angle: f64, sweep: f64) {
    let n = ((radius * sweep.abs() / ROUTE_SPACING).ceil() as usize).max(1);
    for k in 1..=n {
        let a = from_angle + sweep * k as f64 / n as f64;
        out.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
    }
}

/// Route entering along arm `from` and leaving along arm `to` in lane `lane`
/// (0 = next to the center line), with a circular fillet of radius `r` for turns.
fn junction_route(from: Point, to: Point, offset: f64, r: f64) -> Vec<Point> {
    let h_in = scale(from, -1.0);
    let h_out = to;
    let start = add(scale(from, ROUTE_REACH), scale(right_of(h_in), offset));
    let end = add(scale(to, ROUTE_REACH), scale(right_of(h_out), offset));
    let mut pts = Vec::new();
    let cross = h_in[0] * h_out[1] - h_in[1] * h_out[0];
    if cross.abs() < 1e-9 {
        push_line(&mut pts, start, end);
        return pts;
    }
    let corner = add(scale(right_of(h_in), offset), scale(right_of(h_out), offset));
    let t1 = add(corner, scale(h_in, -r));
    let t2 = add(corner, scale(h_out, r));
    let normal = if cross > 0.0 { left_of(h_in) } else { right_of(h_in) };
    let center = add(t1, scale(normal, r));
    push_line(&mut pts, start, t1);
    let a0 = (t1[1] - center[1]).atan2(t1[0] - center[0]);
    push_arc(&mut pts, center, r, a0, cross.signum() * PI / 2.0);
    push_line(&mut pts, t2, end);
    pts
}

fn offset_polyline(center: &[Point], offset: f64) -> Vec<Point> {
    let n = center.len();
    (0..n)
        .map(|i| {
            let (a, b) = (center[i.saturating_sub(1)], center[(i + 1).min(n - 1)]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let h = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            add(center[i], scale(right_of(h), offset))
        })
        .collect()
}

pub fn generate_layout(seed: u64, cfg: &GeneratorConfig) -> RoadLayout {
    let mut rng = rng_from(seed, &[0x1a70]);
    let kind = LayoutKind::ALL[rng.random_range(0..LayoutKind::ALL.len())];
    build_layout(kind, &mut rng, cfg)
}

pub fn generate_layout_of_kind(kind: LayoutKind, seed: u64, cfg: &GeneratorConfig) -> RoadLayout {
    let mut rng = rng_from(seed, &[0x1a70, kind as u64 + 1]);
    build_layout(kind, &mut rng, cfg)
}

fn build_layout<R: Rng>(kind: LayoutKind, rng: &mut R, cfg: &GeneratorConfig) -> RoadLayout {
    let lanes = rng.random_range(1..=2usize);
    let w = cfg.lane_width;
    let hw = lanes as f64 * w;
    let radius = if kind == LayoutKind::Curved {
        let r = rng.random_range(cfg.curve_radius[0]..=cfg.curve_radius[1]);
        if rng.random_bool(0.5) {
            r
        } else {
            -r
        }
    } else {
        0.0
    };
    let transform = RigidTransform {
        rotation: rng.random_range(-PI..PI),
        translation: [
            rng.random_range(-cfg.max_shift..=cfg.max_shift),
            rng.random_range(-cfg.max_shift..=cfg.max_shift),
        ],
    };

    let x = [1.0, 0.0];
    let arms: Vec<Point> = match kind {
        LayoutKind::Straight | LayoutKind::Curved => vec![x, [-1.0, 0.0]],
        LayoutKind::TIntersection => vec![x, [-1.0, 0.0], [0.0, 1.0]],
        LayoutKind::Crossroads => vec![x, [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
    };

    let mut local_routes = Vec::new();
    if kind == LayoutKind::Curved {
        let r = radius.abs();
        let sign = radius.signum();
        let max_angle = (ROUTE_REACH / r).min(0.48 * PI);
        let n = ((2.0 * max_angle * r / ROUTE_SPACING).ceil() as usize).max(2);
        let center: Vec<Point> = (0..=n)
            .map(|k| {
                let phi = -max_angle + 2.0 * max_angle * k as f64 / n as f64;
                [r * phi.sin(), sign * r * (1.0 - phi.cos())]
            })
            .collect();
        let reversed: Vec<Point> = center.iter().rev().copied().collect();
        for lane in 0..lanes {
            let o = (lane as f64 + 0.5) * w;
            local_routes.push(offset_polyline(&center, o));
            local_routes.push(offset_polyline(&reversed, o));
        }
    } else {
        for &from in &arms {
            for &to in &arms {
                if from == to {
                    continue;
                }
                let h_in = scale(from, -1.0);
                let cross = h_in[0] * to[1] - h_in[1] * to[0];
                let lane_choices: Vec<usize> = if cross > 1e-9 {
                    vec![0]
                } else if cross < -1e-9 {
                    vec![lanes - 1]
                } else {
                    (0..lanes).collect()
                };
                for lane in lane_choices {
                    let r = if cross > 1e-9 {
                        rng.random_range(cfg.left_turn_radius[0]..=cfg.left_turn_radius[1])
                    } else {
                        rng.random_range(cfg.right_turn_radius[0]..=cfg.right_turn_radius[1])
                    };
                    local_routes.push(junction_route(from, to, (lane as f64 + 0.5) * w, r));
                }
            }
        }
    }

    let cells = (cfg.map_size / cfg.resolution).round() as usize;
    let half = cfg.map_size / 2.0;
    let mut mask = DrivableMask::new(cells, cells, cfg.resolution, [-half, -half], false)
        .expect("generator config yields a valid grid");
    mask.paint(|p| on_road(kind, hw, radius, transform.invert(p)));
    let routes = local_routes
        .into_iter()
        .map(|pts| Route::new(pts.into_iter().map(|p| transform.apply(p)).collect()))
        .collect();
    RoadLayout {
        kind,
        lanes_per_direction: lanes,
        half_width: hw,
        radius,
        transform,
        mask,
        routes,
    }
}
