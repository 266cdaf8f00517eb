//! Periodic yarn patterns, yarn material specs and derived yarn parameters.
//!
//! A pattern file holds one periodic repeat. Yarn ends that continue into a
//! neighbouring tile are listed in `connections` as
//! `[yarn_i, point_j, yarn_k, point_l, x_off, y_off]`: point `j` of yarn `i`
//! coincides with point `l` of yarn `k` taken from the ghost tile at
//! `(x_off, y_off)`. A seam may be listed once or in both directions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::rod::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternClass {
    Knit,
    Woven,
}

impl PatternClass {
    pub fn default_shrink_factor(self) -> f64 {
        match self {
            PatternClass::Knit => 0.8,
            PatternClass::Woven => 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 6]", into = "[i64; 6]")]
pub struct Connection {
    pub yarn_i: usize,
    pub point_j: usize,
    pub yarn_k: usize,
    pub point_l: usize,
    pub offset: (i32, i32),
}

impl TryFrom<[i64; 6]> for Connection {
    type Error = String;

    fn try_from(v: [i64; 6]) -> std::result::Result<Self, String> {
        let idx = |x: i64, what: &str| usize::try_from(x).map_err(|_| format!("negative {what} index {x}"));
        Ok(Connection {
            yarn_i: idx(v[0], "yarn")?,
            point_j: idx(v[1], "point")?,
            yarn_k: idx(v[2], "yarn")?,
            point_l: idx(v[3], "point")?,
            offset: (v[4] as i32, v[5] as i32),
        })
    }
}

impl From<Connection> for [i64; 6] {
    fn from(c: Connection) -> Self {
        [c.yarn_i as i64, c.point_j as i64, c.yarn_k as i64, c.point_l as i64, c.offset.0 as i64, c.offset.1 as i64]
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}, {}, {}]",
            self.yarn_i, self.point_j, self.yarn_k, self.point_l, self.offset.0, self.offset.1
        )
    }
}

pub const GHOST_OFFSETS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Seam joining the last point of yarn `end_yarn` to the first point of
/// `start_yarn` in the ghost tile at `offset`:
/// `p[end_yarn][last] == ghost(offset, p[start_yarn][0])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seam {
    pub end_yarn: usize,
    pub start_yarn: usize,
    pub offset: (i32, i32),
}

/// Endpoint of a ghost stretch-shear edge: a point of the simulated tile,
/// possibly taken from a ghost tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostEnd {
    pub yarn: usize,
    pub point: usize,
    pub offset: (i32, i32),
}

/// Ghost stretch-shear edge across a seam, with the frame it uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostEdge {
    pub from: GhostEnd,
    pub to: GhostEnd,
    pub frame_yarn: usize,
    pub frame_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YarnPattern {
    pub period: (f64, f64),
    pub yarns: Vec<Vec<Vec3>>,
    pub connections: Vec<Connection>,
    #[serde(rename = "class")]
    pub pattern_class: PatternClass,
    #[serde(skip)]
    seams: Vec<Seam>,
}

impl YarnPattern {
    /// Build and validate a pattern.
    pub fn new(period: (f64, f64), yarns: Vec<Vec<Vec3>>, connections: Vec<Connection>, pattern_class: PatternClass) -> Result<Self> {
        let mut p = YarnPattern {
            period,
            yarns,
            connections,
            pattern_class,
            seams: Vec::new(),
        };
        p.seams = p.validate().map_err(Error::InvalidInput)?;
        Ok(p)
    }

    pub fn seams(&self) -> &[Seam] {
        &self.seams
    }

    pub fn total_length(&self) -> f64 {
        self.yarns.iter().flat_map(|y| y.windows(2).map(|w| (w[1] - w[0]).norm())).sum()
    }

    pub fn area(&self) -> f64 {
        self.period.0 * self.period.1
    }

    pub fn flat_translation(&self, offset: (i32, i32)) -> Vec3 {
        Vec3::new(offset.0 as f64 * self.period.0, offset.1 as f64 * self.period.1, 0.0)
    }

    fn validate(&self) -> std::result::Result<Vec<Seam>, String> {
        let (px, py) = self.period;
        if !(px > 0.0 && py > 0.0) {
            return Err(format!("period ({px}, {py}) must be positive"));
        }
        if self.yarns.is_empty() {
            return Err("pattern has no yarns".into());
        }
        for (i, y) in self.yarns.iter().enumerate() {
            if y.len() < 3 {
                return Err(format!("yarn {i} has {} points; at least 3 are required", y.len()));
            }
            for (j, w) in y.windows(2).enumerate() {
                if !((w[1] - w[0]).norm() > 0.0) {
                    return Err(format!("yarn {i} edge {j} has zero length"));
                }
            }
        }
        let slack = 0.05 * px.min(py);
        for (i, y) in self.yarns.iter().enumerate() {
            for (j, p) in y.iter().enumerate() {
                if p.x < -slack || p.x > px + slack || p.y < -slack || p.y > py + slack {
                    return Err(format!("yarn {i} point {j} at ({}, {}) lies outside the period box", p.x, p.y));
                }
            }
        }

        let mut seams = BTreeSet::new();
        for c in &self.connections {
            if !GHOST_OFFSETS.contains(&c.offset) {
                return Err(format!("invalid ghost offset ({}, {}) in connection {c}", c.offset.0, c.offset.1));
            }
            let last = |y: usize| self.yarns.get(y).map(|v| v.len() - 1);
            let (Some(li), Some(lk)) = (last(c.yarn_i), last(c.yarn_k)) else {
                return Err(format!("connection {c} references a missing yarn"));
            };
            if c.point_j > li || c.point_l > lk {
                return Err(format!("connection {c} references a missing point"));
            }
            let seam = if c.point_j == li && c.point_l == 0 {
                Seam { end_yarn: c.yarn_i, start_yarn: c.yarn_k, offset: c.offset }
            } else if c.point_j == 0 && c.point_l == lk {
                Seam { end_yarn: c.yarn_k, start_yarn: c.yarn_i, offset: (-c.offset.0, -c.offset.1) }
            } else {
                return Err(format!("connection {c} must join the last point of one yarn to the first point of another"));
            };
            let end = self.yarns[seam.end_yarn][self.yarns[seam.end_yarn].len() - 1];
            let start = self.yarns[seam.start_yarn][0] + self.flat_translation(seam.offset);
            if (end - start).norm() > 1e-6 * px.max(py) {
                return Err(format!("connection {c}: connected points do not coincide across the tile boundary"));
            }
            seams.insert(seam);
        }
        let seams: Vec<Seam> = seams.into_iter().collect();
        for y in 0..self.yarns.len() {
            let ends = seams.iter().filter(|s| s.end_yarn == y).count();
            let starts = seams.iter().filter(|s| s.start_yarn == y).count();
            if ends != 1 || starts != 1 {
                return Err(format!(
                    "yarn {y}: each end must appear in exactly one connection (last point in {ends}, first point in {starts})"
                ));
            }
        }
        Ok(seams)
    }

    /// The two ghost stretch-shear edges of a seam: the first edge of the
    /// start yarn seen from the end point, and the last edge of the end yarn
    /// seen from the start point.
    pub fn seam_ghost_edges(&self, seam: &Seam) -> [GhostEdge; 2] {
        let last = self.yarns[seam.end_yarn].len() - 1;
        let back = (-seam.offset.0, -seam.offset.1);
        [
            GhostEdge {
                from: GhostEnd { yarn: seam.end_yarn, point: last, offset: (0, 0) },
                to: GhostEnd { yarn: seam.start_yarn, point: 1, offset: seam.offset },
                frame_yarn: seam.start_yarn,
                frame_edge: 0,
            },
            GhostEdge {
                from: GhostEnd { yarn: seam.end_yarn, point: last - 1, offset: back },
                to: GhostEnd { yarn: seam.start_yarn, point: 0, offset: (0, 0) },
                frame_yarn: seam.end_yarn,
                frame_edge: last - 1,
            },
        ]
    }
}

/// Affine map `x ↦ linear·x + translation` taking a point of the simulated
/// tile to its copy in a ghost tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
}

impl TileTransform {
    pub fn identity() -> Self {
        Self { linear: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { linear: Matrix3::identity(), translation: t }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.linear * x + self.translation
    }
}

/// Source of ghost-tile transforms, flat or through a deformed mid-surface.
pub trait Tiling {
    fn ghost(&self, offset: (i32, i32)) -> TileTransform;
}

/// Pure translation by whole periods.
#[derive(Debug, Clone, Copy)]
pub struct FlatTiling {
    pub period: (f64, f64),
}

impl Tiling for FlatTiling {
    fn ghost(&self, offset: (i32, i32)) -> TileTransform {
        TileTransform::translation(Vec3::new(offset.0 as f64 * self.period.0, offset.1 as f64 * self.period.1, 0.0))
    }
}

/// Position of point `point` of yarn `yarn` in the ghost tile at `offset`.
pub fn ghost_point(positions: &[Vec<Vec3>], yarn: usize, point: usize, offset: (i32, i32), tiling: &dyn Tiling) -> Result<Vec3> {
    let p = positions
        .get(yarn)
        .and_then(|y| y.get(point))
        .ok_or_else(|| Error::invalid(format!("no point {point} on yarn {yarn}")))?;
    Ok(tiling.ghost(offset).apply(p))
}

pub fn load_pattern(path: &Path) -> Result<YarnPattern> {
    let load_err = |reason: String| Error::Load { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let raw: YarnPattern = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
    YarnPattern::new(raw.period, raw.yarns, raw.connections, raw.pattern_class).map_err(|e| match e {
        Error::InvalidInput(reason) => load_err(reason),
        other => other,
    })
}

pub fn save_pattern(pattern: &YarnPattern, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(pattern)?)?;
    Ok(())
}

/// Yarn material and fabric measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub name: String,
    /// Modulus slope in compression (Pa per unit strain).
    pub k1: f64,
    /// Modulus slope in tension (Pa per unit strain).
    pub k2: f64,
    pub poisson: f64,
    /// Fiber density, kg/m³.
    pub rho_yarn: f64,
    /// Fabric areal density, kg/m² (swatch mass per repeat divided by the repeat area).
    pub rho_shell: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    /// Defaults to the pattern class value when absent.
    #[serde(default)]
    pub shrink_factor: Option<f64>,
    /// The yarn modulus never drops below `k2 · reference_strain`; bending
    /// and twisting use that modulus.
    #[serde(default = "default_reference_strain")]
    pub reference_strain: f64,
}

fn default_friction() -> f64 {
    0.2
}

fn default_reference_strain() -> f64 {
    0.05
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config { field: field.into(), reason: reason.into() });
        for (field, v) in [("k1", self.k1), ("k2", self.k2), ("rho_yarn", self.rho_yarn), ("rho_shell", self.rho_shell)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(field, "must be positive");
            }
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return bad("poisson", "must lie in [0, 0.5)");
        }
        if !(self.friction >= 0.0) {
            return bad("friction", "must be non-negative");
        }
        if let Some(s) = self.shrink_factor {
            if !(s > 0.0 && s < 1.0) {
                return bad("shrink_factor", "must lie in (0, 1)");
            }
        }
        if !(self.reference_strain > 0.0) {
            return bad("reference_strain", "must be positive");
        }
        Ok(())
    }

    pub fn shrink_factor_for(&self, class: PatternClass) -> f64 {
        self.shrink_factor.unwrap_or(class.default_shrink_factor())
    }

    /// Floor modulus, also used for bending and twisting.
    pub fn reference_modulus(&self) -> f64 {
        self.k2 * self.reference_strain
    }

    pub fn shear_modulus(&self, youngs: f64) -> f64 {
        youngs / (2.0 * (1.0 + self.poisson))
    }
}

pub fn load_material(path: &Path) -> Result<MaterialSpec> {
    let load_err = |reason: String| Error::Load { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let spec: MaterialSpec = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// `r = sqrt(ρ_shell p_x p_y / (ρ_yarn L0 π))`.
pub fn estimate_yarn_radius(pattern: &YarnPattern, spec: &MaterialSpec) -> Result<f64> {
    let l0 = pattern.total_length();
    if !(l0 > 0.0) {
        return Err(Error::invalid("pattern has zero total yarn length"));
    }
    Ok((spec.rho_shell * pattern.area() / (spec.rho_yarn * l0 * std::f64::consts::PI)).sqrt())
}

/// Woven repeat generator. `weft_over[i][j]` says whether weft `i` passes over
/// warp `j`. Weft yarns run along x, warp yarns along y, with centerline
/// heights blended between crossings by half-cosine ramps.
pub fn woven_pattern(weft_over: &[Vec<bool>], spacing: f64, amplitude: f64, edges_per_cell: usize) -> Result<YarnPattern> {
    let n_weft = weft_over.len();
    let n_warp = weft_over.first().map_or(0, |r| r.len());
    if n_weft == 0 || n_warp == 0 || weft_over.iter().any(|r| r.len() != n_warp) {
        return Err(Error::invalid("weave matrix must be rectangular and non-empty"));
    }
    if edges_per_cell == 0 {
        return Err(Error::invalid("edges_per_cell must be positive"));
    }
    let period = (n_warp as f64 * spacing, n_weft as f64 * spacing);
    let profile = |heights: &[f64], s: f64| {
        let m = heights.len() as i64;
        let u = s / spacing - 0.5;
        let j0 = u.floor();
        let t = u - j0;
        let a = heights[(j0 as i64).rem_euclid(m) as usize];
        let b = heights[(j0 as i64 + 1).rem_euclid(m) as usize];
        a + (b - a) * 0.5 * (1.0 - (std::f64::consts::PI * t).cos())
    };
    let mut yarns: Vec<Vec<Vec3>> = Vec::new();
    let mut connections = Vec::new();
    for (i, row) in weft_over.iter().enumerate() {
        let heights: Vec<f64> = row.iter().map(|&o| if o { amplitude } else { -amplitude }).collect();
        let n = n_warp * edges_per_cell;
        let y = (i as f64 + 0.5) * spacing;
        let pts = (0..=n)
            .map(|k| {
                let x = k as f64 * period.0 / n as f64;
                Vec3::new(x, y, profile(&heights, x))
            })
            .collect();
        yarns.push(pts);
    }
    for j in 0..n_warp {
        let heights: Vec<f64> = weft_over.iter().map(|r| if r[j] { -amplitude } else { amplitude }).collect();
        let n = n_weft * edges_per_cell;
        let x = (j as f64 + 0.5) * spacing;
        let pts = (0..=n)
            .map(|k| {
                let y = k as f64 * period.1 / n as f64;
                Vec3::new(x, y, profile(&heights, y))
            })
            .collect();
        yarns.push(pts);
    }
    for (y, pts) in yarns.iter().enumerate() {
        let last = pts.len() - 1;
        let offset = if y < n_weft { (1, 0) } else { (0, 1) };
        connections.push(Connection { yarn_i: y, point_j: last, yarn_k: y, point_l: 0, offset });
        connections.push(Connection { yarn_i: y, point_j: 0, yarn_k: y, point_l: last, offset: (-offset.0, -offset.1) });
    }
    YarnPattern::new(period, yarns, connections, PatternClass::Woven)
}

pub fn plain_weave_matrix() -> Vec<Vec<bool>> {
    (0..2).map(|i| (0..2).map(|j| (i + j) % 2 == 0).collect()).collect()
}

/// 2/1 twill: each weft floats over two warps and under one, shifted by one per row.
pub fn twill_matrix() -> Vec<Vec<bool>> {
    (0..3).map(|i| (0..3).map(|j| (j + 3 - i) % 3 != 2).collect()).collect()
}

/// Five-end weft-faced satin with move number 2.
pub fn satin_matrix() -> Vec<Vec<bool>> {
    (0..5).map(|i| (0..5).map(|j| j != (2 * i) % 5).collect()).collect()
}

/// A straight yarn spanning the period along x, connected to itself.
pub fn single_yarn_pattern(length: f64, width: f64, points: usize) -> Result<YarnPattern> {
    let n = points.max(3) - 1;
    let pts = (0..=n).map(|k| Vec3::new(k as f64 * length / n as f64, 0.5 * width, 0.0)).collect();
    YarnPattern::new(
        (length, width),
        vec![pts],
        vec![Connection { yarn_i: 0, point_j: n, yarn_k: 0, point_l: 0, offset: (1, 0) }],
        PatternClass::Woven,
    )
}
