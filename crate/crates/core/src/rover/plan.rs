use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{RoverError, LIFT_MAX_M, LIFT_MIN_M};

/// Axis-aligned plan-view rectangle, metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Area {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Area { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }
}

pub type Obstacle = Area;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub dwell_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    RowMajor,
    ColumnMajor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub waypoints: Vec<Waypoint>,
    pub resolution: f64,
    pub z_stops: Vec<f64>,
    pub order: SweepOrder,
    /// Plan-view path length through the (x, y) stops.
    pub length_m: f64,
}

impl SamplePlan {
    pub fn xy_stops(&self) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = Vec::new();
        for w in &self.waypoints {
            if out.last() != Some(&[w.x, w.y]) {
                out.push([w.x, w.y]);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOptions {
    /// Spacing of lift stops; the plan resolution when absent.
    pub z_resolution: Option<f64>,
    /// Explicit lift heights, overriding `z_resolution`.
    pub z_stops: Option<Vec<f64>>,
    pub rover_radius_m: f64,
    pub dwell_s: f64,
    /// Reachability is flooded from the free cell nearest this point.
    pub start: Option<[f64; 2]>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            z_resolution: None,
            z_stops: None,
            rover_radius_m: 0.25,
            dwell_s: 1.0,
            start: None,
        }
    }
}

pub fn z_stops(z_resolution: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut k = 0;
    loop {
        let z = LIFT_MIN_M + k as f64 * z_resolution;
        if z > LIFT_MAX_M + 1e-9 {
            break;
        }
        v.push((z * 1e9).round() / 1e9);
        k += 1;
    }
    v
}

/// Free cells of the grid over `area`: centre at least `radius` from the area
/// edge and outside every obstacle inflated by `radius`.
pub fn free_cells(
    area: Area,
    resolution: f64,
    obstacles: &[Obstacle],
    radius: f64,
) -> (usize, usize, Vec<bool>) {
    let nx = ((area.max[0] - area.min[0]) / resolution + 1e-9).floor() as usize;
    let ny = ((area.max[1] - area.min[1]) / resolution + 1e-9).floor() as usize;
    let mut free = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = cell_center(area, resolution, i, j);
            let clear_walls = c[0] - area.min[0] >= radius - 1e-9
                && area.max[0] - c[0] >= radius - 1e-9
                && c[1] - area.min[1] >= radius - 1e-9
                && area.max[1] - c[1] >= radius - 1e-9;
            let blocked = obstacles.iter().any(|o| {
                Area::new(
                    [o.min[0] - radius, o.min[1] - radius],
                    [o.max[0] + radius, o.max[1] + radius],
                )
                .contains(c)
            });
            free[j * nx + i] = clear_walls && !blocked;
        }
    }
    (nx, ny, free)
}

pub fn cell_center(area: Area, resolution: f64, i: usize, j: usize) -> [f64; 2] {
    let snap = |v: f64| (v * 1e9).round() / 1e9;
    [
        snap(area.min[0] + (i as f64 + 0.5) * resolution),
        snap(area.min[1] + (j as f64 + 0.5) * resolution),
    ]
}

fn reachable(nx: usize, ny: usize, free: &[bool], start: usize) -> Vec<bool> {
    let mut seen = vec![false; free.len()];
    let mut q = VecDeque::from([start]);
    seen[start] = true;
    while let Some(c) = q.pop_front() {
        let (i, j) = (c % nx, c / nx);
        let mut push = |n: usize| {
            if free[n] && !seen[n] {
                seen[n] = true;
                q.push_back(n);
            }
        };
        if i > 0 {
            push(c - 1);
        }
        if i + 1 < nx {
            push(c + 1);
        }
        if j > 0 {
            push(c - nx);
        }
        if j + 1 < ny {
            push(c + nx);
        }
    }
    seen
}

fn path_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

fn serpentine(nx: usize, ny: usize, ok: &[bool], order: SweepOrder) -> Vec<(usize, usize)> {
    let (outer, inner) = match order {
        SweepOrder::RowMajor => (ny, nx),
        SweepOrder::ColumnMajor => (nx, ny),
    };
    let mut out = Vec::new();
    let mut forward = true;
    for a in 0..outer {
        let line: Vec<(usize, usize)> = (0..inner)
            .map(|b| match order {
                SweepOrder::RowMajor => (b, a),
                SweepOrder::ColumnMajor => (a, b),
            })
            .filter(|&(i, j)| ok[j * nx + i])
            .collect();
        if line.is_empty() {
            continue;
        }
        if forward {
            out.extend(line);
        } else {
            out.extend(line.into_iter().rev());
        }
        forward = !forward;
    }
    out
}

/// Serpentine sweep over reachable grid cells with ascending lift stops at
/// each cell. The shorter of the row-major and column-major sweeps is kept.
pub fn plan_sampling(
    area: Area,
    resolution: f64,
    obstacles: &[Obstacle],
    options: &PlanOptions,
) -> Result<SamplePlan, RoverError> {
    if !(resolution > 0.0) {
        return Err(RoverError::BadResolution);
    }
    let zres = options.z_resolution.unwrap_or(resolution);
    if !(zres > 0.0) {
        return Err(RoverError::BadResolution);
    }
    let (nx, ny, free) = free_cells(area, resolution, obstacles, options.rover_radius_m);
    let start_pt = options.start.unwrap_or(area.min);
    let start = (0..free.len()).filter(|&c| free[c]).min_by(|&a, &b| {
        let d = |c: usize| {
            let p = cell_center(area, resolution, c % nx, c / nx);
            (p[0] - start_pt[0]).powi(2) + (p[1] - start_pt[1]).powi(2)
        };
        d(a).total_cmp(&d(b)).then(a.cmp(&b))
    });
    let Some(start) = start else {
        return Err(RoverError::NoReachableCells);
    };
    let ok = reachable(nx, ny, &free, start);
    let centers = |cells: &[(usize, usize)]| -> Vec<[f64; 2]> {
        cells
            .iter()
            .map(|&(i, j)| cell_center(area, resolution, i, j))
            .collect()
    };
    let rows = centers(&serpentine(nx, ny, &ok, SweepOrder::RowMajor));
    let cols = centers(&serpentine(nx, ny, &ok, SweepOrder::ColumnMajor));
    let (lr, lc) = (path_length(&rows), path_length(&cols));
    let (order, xy, length_m) = if lc < lr - 1e-9 {
        (SweepOrder::ColumnMajor, cols, lc)
    } else {
        (SweepOrder::RowMajor, rows, lr)
    };
    let zs = match &options.z_stops {
        Some(v) if !v.is_empty() => v.clone(),
        _ => z_stops(zres),
    };
    let waypoints = xy
        .iter()
        .flat_map(|p| {
            zs.iter().map(move |&z| Waypoint {
                x: p[0],
                y: p[1],
                z,
                dwell_s: options.dwell_s,
            })
        })
        .collect();
    Ok(SamplePlan {
        waypoints,
        resolution,
        z_stops: zs,
        order,
        length_m,
    })
}
