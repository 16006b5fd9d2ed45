use serde::{Deserialize, Serialize};

/// Long side of a tile footprint, millimetres.
pub const TILE_LONG_MM: u64 = 1200;
/// Short side of a tile footprint, millimetres.
pub const TILE_SHORT_MM: u64 = 600;

/// Room box. x runs along `length_m`, y along `width_m`, z up to `height_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for Room {
    fn default() -> Self {
        // Smallest box holding 28 tiles per long wall and 52 on the floor.
        Room {
            length_m: 8.4,
            width_m: 4.8,
            height_m: 2.4,
        }
    }
}

impl Room {
    pub fn is_valid(&self) -> bool {
        [self.length_m, self.width_m, self.height_m]
            .iter()
            .all(|d| d.is_finite() && *d > 0.0)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0.0..=self.length_m).contains(&p[0])
            && (0.0..=self.width_m).contains(&p[1])
            && (0.0..=self.height_m).contains(&p[2])
    }

    fn mm(v: f64) -> u64 {
        (v * 1000.0).round() as u64
    }

    /// Surface extent (u, v) in millimetres.
    pub fn surface_extent_mm(&self, surface: Surface) -> (u64, u64) {
        match surface {
            Surface::WallA | Surface::WallB => (Self::mm(self.length_m), Self::mm(self.height_m)),
            Surface::Floor | Surface::Ceiling => (Self::mm(self.length_m), Self::mm(self.width_m)),
        }
    }

    /// Maps surface coordinates (metres) to a 3D point on that surface.
    pub fn surface_point(&self, surface: Surface, u: f64, v: f64) -> [f64; 3] {
        match surface {
            Surface::WallA => [u, 0.0, v],
            Surface::WallB => [u, self.width_m, v],
            Surface::Floor => [u, v, 0.0],
            Surface::Ceiling => [u, v, self.height_m],
        }
    }

    /// Signed distance of `p` from the surface plane.
    pub fn plane_distance(&self, surface: Surface, p: [f64; 3]) -> f64 {
        match surface {
            Surface::WallA => p[1],
            Surface::WallB => p[1] - self.width_m,
            Surface::Floor => p[2],
            Surface::Ceiling => p[2] - self.height_m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    WallA,
    WallB,
    Floor,
    Ceiling,
}

impl Surface {
    /// Tile numbering order.
    pub const ALL: [Surface; 4] = [
        Surface::WallA,
        Surface::WallB,
        Surface::Ceiling,
        Surface::Floor,
    ];

    /// Inward-pointing unit normal.
    pub fn normal(self) -> [f64; 3] {
        match self {
            Surface::WallA => [0.0, 1.0, 0.0],
            Surface::WallB => [0.0, -1.0, 0.0],
            Surface::Floor => [0.0, 0.0, 1.0],
            Surface::Ceiling => [0.0, 0.0, -1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Surface::WallA => "wall_a",
            Surface::WallB => "wall_b",
            Surface::Floor => "floor",
            Surface::Ceiling => "ceiling",
        }
    }
}

/// Axis-aligned tile rectangle in surface coordinates, millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub u_mm: u64,
    pub v_mm: u64,
    pub u_len_mm: u64,
    pub v_len_mm: u64,
}

impl Footprint {
    pub fn landscape(u_mm: u64, v_mm: u64) -> Self {
        Footprint {
            u_mm,
            v_mm,
            u_len_mm: TILE_LONG_MM,
            v_len_mm: TILE_SHORT_MM,
        }
    }

    pub fn portrait(u_mm: u64, v_mm: u64) -> Self {
        Footprint {
            u_mm,
            v_mm,
            u_len_mm: TILE_SHORT_MM,
            v_len_mm: TILE_LONG_MM,
        }
    }

    /// Interiors intersect. Shared edges do not count.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        self.u_mm < other.u_mm + other.u_len_mm
            && other.u_mm < self.u_mm + self.u_len_mm
            && self.v_mm < other.v_mm + other.v_len_mm
            && other.v_mm < self.v_mm + self.v_len_mm
    }

    pub fn within(&self, extent: (u64, u64)) -> bool {
        self.u_mm + self.u_len_mm <= extent.0 && self.v_mm + self.v_len_mm <= extent.1
    }

    pub fn is_tile_sized(&self) -> bool {
        let mut sides = [self.u_len_mm, self.v_len_mm];
        sides.sort_unstable();
        sides == [TILE_SHORT_MM, TILE_LONG_MM]
    }

    pub fn center_m(&self) -> (f64, f64) {
        (
            (self.u_mm as f64 + self.u_len_mm as f64 / 2.0) / 1000.0,
            (self.v_mm as f64 + self.v_len_mm as f64 / 2.0) / 1000.0,
        )
    }
}

/// Row-based packing: rows run along u, each row either landscape or portrait.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct RowPlan {
    portrait_rows: u64,
    landscape_rows: u64,
}

impl RowPlan {
    fn capacity(&self, u_mm: u64) -> u64 {
        self.portrait_rows * (u_mm / TILE_SHORT_MM) + self.landscape_rows * (u_mm / TILE_LONG_MM)
    }
}

fn best_plan(u_mm: u64, v_mm: u64) -> RowPlan {
    (0..=v_mm / TILE_LONG_MM)
        .map(|p| RowPlan {
            portrait_rows: p,
            landscape_rows: (v_mm - p * TILE_LONG_MM) / TILE_SHORT_MM,
        })
        .fold(None::<RowPlan>, |best, plan| match best {
            Some(b) if b.capacity(u_mm) >= plan.capacity(u_mm) => Some(b),
            _ => Some(plan),
        })
        .expect("at least one plan")
}

/// Maximum number of non-overlapping tiles the row packer fits on an extent.
pub fn surface_capacity(extent: (u64, u64)) -> u64 {
    best_plan(extent.0, extent.1).capacity(extent.0)
}

/// Lays out `count` tiles on an extent, or returns `None` if they do not fit.
pub fn pack_surface(extent: (u64, u64), count: u64) -> Option<Vec<Footprint>> {
    let (u_mm, v_mm) = extent;
    let plan = best_plan(u_mm, v_mm);
    if plan.capacity(u_mm) < count {
        return None;
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut v = 0;
    let rows = std::iter::repeat_n(false, plan.landscape_rows as usize)
        .chain(std::iter::repeat_n(true, plan.portrait_rows as usize));
    for portrait in rows {
        let (step, height) = if portrait {
            (TILE_SHORT_MM, TILE_LONG_MM)
        } else {
            (TILE_LONG_MM, TILE_SHORT_MM)
        };
        let mut u = 0;
        while u + step <= u_mm && (out.len() as u64) < count {
            out.push(if portrait {
                Footprint::portrait(u, v)
            } else {
                Footprint::landscape(u, v)
            });
            u += step;
        }
        v += height;
    }
    Some(out)
}
