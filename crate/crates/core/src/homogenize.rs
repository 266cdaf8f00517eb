//! Sampling of macroscopic deformations, embedding of the periodic patch on
//! the deformed mid-surface, and constrained minimization of the tiled yarns.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector2};
use num_dual::DualNum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::min_separation;
use crate::pattern::{Seam, TileTransform, Tiling};
use crate::rod::{RodState, Vec3};
use crate::solver::{minimize_with_homogenization, ConstraintSet, ContactModel, LinearRow, PointRef, RelaxedPatch, SolverConfig, TwistRow};
use crate::{Error, Result};

/// Tolerance for deciding that a fundamental form sits at rest.
const REST_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCategory {
    StretchWeft,
    StretchWarp,
    Biaxial,
    Shear,
    BendWeft,
    BendWarp,
    BendBias,
}

impl SampleCategory {
    pub const ALL: [SampleCategory; 7] = [
        SampleCategory::StretchWeft,
        SampleCategory::StretchWarp,
        SampleCategory::Biaxial,
        SampleCategory::Shear,
        SampleCategory::BendWeft,
        SampleCategory::BendWarp,
        SampleCategory::BendBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SampleCategory::StretchWeft => "stretch_weft",
            SampleCategory::StretchWarp => "stretch_warp",
            SampleCategory::Biaxial => "biaxial",
            SampleCategory::Shear => "shear",
            SampleCategory::BendWeft => "bend_weft",
            SampleCategory::BendWarp => "bend_warp",
            SampleCategory::BendBias => "bend_bias",
        }
    }

    pub fn is_bending(self) -> bool {
        matches!(self, SampleCategory::BendWeft | SampleCategory::BendWarp | SampleCategory::BendBias)
    }
}

impl fmt::Display for SampleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SampleCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SampleCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sample category `{s}`")))
    }
}

/// Macroscopic deformation given by target fundamental forms. Exactly one of
/// the two deviates from rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationSample {
    pub first_form: Matrix2<f64>,
    pub second_form: Matrix2<f64>,
    pub category: SampleCategory,
}

impl DeformationSample {
    pub fn identity(category: SampleCategory) -> Self {
        Self { first_form: Matrix2::identity(), second_form: Matrix2::zeros(), category }
    }

    pub fn membrane(first_form: Matrix2<f64>, category: SampleCategory) -> Result<Self> {
        let s = Self { first_form, second_form: Matrix2::zeros(), category };
        s.validate()?;
        Ok(s)
    }

    pub fn bending(second_form: Matrix2<f64>, category: SampleCategory) -> Result<Self> {
        let s = Self { first_form: Matrix2::identity(), second_form, category };
        s.validate()?;
        Ok(s)
    }

    pub fn is_identity(&self) -> bool {
        self.membrane_at_rest() && self.bending_at_rest()
    }

    fn membrane_at_rest(&self) -> bool {
        (self.first_form - Matrix2::identity()).amax() <= REST_TOL
    }

    fn bending_at_rest(&self) -> bool {
        self.second_form.amax() <= REST_TOL
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidSample(why));
        let (i, ii) = (&self.first_form, &self.second_form);
        if (i[(0, 1)] - i[(1, 0)]).abs() > REST_TOL || (ii[(0, 1)] - ii[(1, 0)]).abs() > REST_TOL {
            return bad("fundamental forms must be symmetric".into());
        }
        if !i.iter().chain(ii.iter()).all(|v| v.is_finite()) {
            return bad("fundamental forms must be finite".into());
        }
        if !self.membrane_at_rest() && !self.bending_at_rest() {
            return bad("membrane and bending deformations are never combined".into());
        }
        if i[(0, 0)] <= 0.0 || i.determinant() <= 0.0 {
            return bad(format!("first form {i:?} is not positive definite"));
        }
        if self.is_identity() {
            return Ok(());
        }
        match self.category {
            SampleCategory::StretchWeft | SampleCategory::StretchWarp | SampleCategory::Biaxial => {
                if i[(0, 1)].abs() > REST_TOL || !self.bending_at_rest() {
                    return bad("stretch samples have zero shear and no bending".into());
                }
            }
            SampleCategory::Shear => {
                if (i[(0, 0)] - 1.0).abs() > REST_TOL || (i[(1, 1)] - 1.0).abs() > REST_TOL || !self.bending_at_rest() {
                    return bad("shear samples have unit diagonal".into());
                }
            }
            SampleCategory::BendWeft | SampleCategory::BendWarp => {
                if !self.membrane_at_rest() {
                    return bad("bending samples keep the rest metric".into());
                }
                let single = ii[(0, 1)].abs() <= REST_TOL && (ii[(0, 0)].abs() <= REST_TOL || ii[(1, 1)].abs() <= REST_TOL);
                if !single {
                    return bad("single-direction bending has one nonzero curvature".into());
                }
            }
            SampleCategory::BendBias => {
                if !self.membrane_at_rest() {
                    return bad("bending samples keep the rest metric".into());
                }
                let k = ii[(0, 0)];
                let tol = 1e-12 * k.abs();
                if k == 0.0 || (ii[(1, 1)].abs() - k.abs()).abs() > tol || (ii[(0, 1)].abs() - k.abs()).abs() > tol {
                    return bad("bias bending needs |II12| = |II11| = |II22| != 0".into());
                }
            }
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Ranges and counts of the deformation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Stretch ratio range `[λ_min, λ_max]` for uniaxial and biaxial samples.
    pub stretch_range: (f64, f64),
    pub stretch_count: usize,
    pub biaxial_count: usize,
    /// Largest `|I12|`.
    pub shear_max: f64,
    pub shear_count: usize,
    /// Largest curvature magnitude, 1/m.
    pub curvature_max: f64,
    pub curvature_count: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            stretch_range: (0.9, 1.3),
            stretch_count: 11,
            biaxial_count: 5,
            shear_max: 0.3,
            shear_count: 11,
            curvature_max: 200.0,
            curvature_count: 11,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config { field: field.into(), reason: reason.into() });
        let (lo, hi) = self.stretch_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("stretch_range", "needs 0 < min <= max");
        }
        if !(self.shear_max >= 0.0 && self.shear_max < 1.0) {
            return bad("shear_max", "must lie in [0, 1) to keep the metric positive definite");
        }
        if !(self.curvature_max >= 0.0 && self.curvature_max.is_finite()) {
            return bad("curvature_max", "must be finite and nonnegative");
        }
        for (field, n) in [
            ("stretch_count", self.stretch_count),
            ("biaxial_count", self.biaxial_count),
            ("shear_count", self.shear_count),
            ("curvature_count", self.curvature_count),
        ] {
            if n == 0 {
                return bad(field, "must be at least 1");
            }
        }
        Ok(())
    }
}

/// Membrane and bending samples of the configured grid, with the identity
/// appearing once.
pub fn sample_deformation_grid(config: &SamplingConfig) -> Vec<DeformationSample> {
    let (lo, hi) = config.stretch_range;
    let stretches = linspace(lo, hi, config.stretch_count);
    let coarse = linspace(lo, hi, config.biaxial_count);
    let shears = linspace(-config.shear_max, config.shear_max, config.shear_count);
    let curvatures = linspace(-config.curvature_max, config.curvature_max, config.curvature_count);
    let diag = |a: f64, b: f64| Matrix2::new(a, 0.0, 0.0, b);

    let mut out: Vec<DeformationSample> = Vec::new();
    let mut push = |s: DeformationSample| {
        if !(s.is_identity() && out.iter().any(|o| o.is_identity())) {
            out.push(s);
        }
    };
    let membrane = |first, category| DeformationSample { first_form: first, second_form: Matrix2::zeros(), category };
    let bending = |second, category| DeformationSample { first_form: Matrix2::identity(), second_form: second, category };
    for &l in &stretches {
        push(membrane(diag(l * l, 1.0), SampleCategory::StretchWeft));
    }
    for &l in &stretches {
        push(membrane(diag(1.0, l * l), SampleCategory::StretchWarp));
    }
    for &a in &coarse {
        for &b in &coarse {
            push(membrane(diag(a * a, b * b), SampleCategory::Biaxial));
        }
    }
    for &s in &shears {
        push(membrane(Matrix2::new(1.0, s, s, 1.0), SampleCategory::Shear));
    }
    for &k in &curvatures {
        push(bending(diag(k, 0.0), SampleCategory::BendWeft));
    }
    for &k in &curvatures {
        push(bending(diag(0.0, k), SampleCategory::BendWarp));
    }
    for &k in &curvatures {
        push(bending(Matrix2::new(k, k, k, k), SampleCategory::BendBias));
    }
    out
}

/// Deformed mid-surface `φ` over material coordinates `X ∈ ℝ²`, with the
/// rest mid-plane at height `z_mid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceMap {
    /// `φ(X) = F·X`, normal `e_z`.
    Affine { f: Matrix2<f64>, z_mid: f64 },
    /// Isometric wrap onto a cylinder of curvature `curvature` bending along
    /// unit direction `d`, centered at material point `origin`.
    Cylinder { d: Vector2<f64>, curvature: f64, origin: Vector2<f64>, z_mid: f64 },
}

impl SurfaceMap {
    fn frame(d: &Vector2<f64>) -> (Vec3, Vec3) {
        (Vec3::new(d.x, d.y, 0.0), Vec3::new(-d.y, d.x, 0.0))
    }

    /// Mid-surface point offset by `h` along the normal.
    pub fn position(&self, x: &Vector2<f64>, h: f64) -> Vec3 {
        match *self {
            SurfaceMap::Affine { f, z_mid } => {
                let y = f * x;
                Vec3::new(y.x, y.y, z_mid + h)
            }
            SurfaceMap::Cylinder { d, curvature: k, origin, z_mid } => {
                let (dd, aa) = Self::frame(&d);
                let rel = x - origin;
                let (u, v) = (rel.dot(&d), rel.x * -d.y + rel.y * d.x);
                let base = Vec3::new(origin.x, origin.y, z_mid) + dd * ((k * u).sin() / k) + aa * v
                    + Vec3::z() * ((1.0 - (k * u).cos()) / k);
                base + self.normal(x) * h
            }
        }
    }

    pub fn normal(&self, x: &Vector2<f64>) -> Vec3 {
        self.rotation(x).column(2).into_owned()
    }

    /// Rotation factor of the polar decomposition of `∇φ`, completed by the
    /// normal.
    pub fn rotation(&self, x: &Vector2<f64>) -> Matrix3<f64> {
        match *self {
            SurfaceMap::Affine { .. } => Matrix3::identity(),
            SurfaceMap::Cylinder { d, curvature: k, origin, .. } => {
                let u = (x - origin).dot(&d);
                self.axis_rotation(k * u)
            }
        }
    }

    /// Rotation by `angle` about the cylinder axis; identity for affine maps.
    fn axis_rotation(&self, angle: f64) -> Matrix3<f64> {
        match *self {
            SurfaceMap::Affine { .. } => Matrix3::identity(),
            SurfaceMap::Cylinder { d, .. } => {
                let (dd, aa) = Self::frame(&d);
                let (s, c) = angle.sin_cos();
                let td = dd * c + Vec3::z() * s;
                let tz = -dd * s + Vec3::z() * c;
                // maps d ↦ td, a ↦ a, e_z ↦ tz
                Matrix3::from_columns(&[td, aa, tz]) * Matrix3::from_columns(&[dd, aa, Vec3::z()]).transpose()
            }
        }
    }

    /// Map applied to generic scalars, for derivative checks.
    pub fn position_generic<D: DualNum<Primitive = f64> + Copy>(&self, x: [D; 2]) -> [D; 3] {
        match *self {
            SurfaceMap::Affine { f, z_mid } => [
                x[0] * f[(0, 0)] + x[1] * f[(0, 1)],
                x[0] * f[(1, 0)] + x[1] * f[(1, 1)],
                D::from(z_mid),
            ],
            SurfaceMap::Cylinder { d, curvature: k, origin, z_mid } => {
                let r0 = x[0] - origin.x;
                let r1 = x[1] - origin.y;
                let u = r0 * d.x + r1 * d.y;
                let v = r0 * -d.y + r1 * d.x;
                let su = (u * k).sin() / k;
                let cu = (D::one() - (u * k).cos()) / k;
                [su * d.x - v * d.y + origin.x, su * d.y + v * d.x + origin.y, cu + z_mid]
            }
        }
    }

    /// Transform taking the simulated tile to the ghost tile at `offset`.
    pub fn ghost_transform(&self, offset: (i32, i32), period: (f64, f64)) -> TileTransform {
        let t = Vector2::new(offset.0 as f64 * period.0, offset.1 as f64 * period.1);
        match *self {
            SurfaceMap::Affine { f, .. } => {
                let y = f * t;
                TileTransform::translation(Vec3::new(y.x, y.y, 0.0))
            }
            SurfaceMap::Cylinder { d, curvature: k, origin, z_mid } => {
                let (_, aa) = Self::frame(&d);
                let du = t.dot(&d);
                let dv = t.x * -d.y + t.y * d.x;
                let linear = self.axis_rotation(k * du);
                let axis_point = Vec3::new(origin.x, origin.y, z_mid + 1.0 / k);
                TileTransform { linear, translation: axis_point - linear * axis_point + aa * dv }
            }
        }
    }
}

/// Principal square root of a symmetric positive definite 2×2 matrix.
pub fn spd_sqrt(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidSample(format!("{m:?} is not positive definite")));
    }
    let root = Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Mid-surface of `sample` for a patch of the given period whose rest
/// mid-plane sits at `z_mid`.
pub fn embed_surface(sample: &DeformationSample, period: (f64, f64), z_mid: f64) -> Result<SurfaceMap> {
    sample.validate()?;
    if sample.second_form.amax() <= REST_TOL {
        return Ok(SurfaceMap::Affine { f: spd_sqrt(&sample.first_form)?, z_mid });
    }
    // every bending sample has a rank-one second form κ d dᵀ
    let eig = SymmetricEigen::new(sample.second_form);
    let k = if eig.eigenvalues[0].abs() >= eig.eigenvalues[1].abs() { 0 } else { 1 };
    let curvature = eig.eigenvalues[k];
    let other = eig.eigenvalues[1 - k];
    if other.abs() > 1e-9 * curvature.abs() {
        return Err(Error::InvalidSample(format!("second form {:?} is not a single-direction bend", sample.second_form)));
    }
    let mut d: Vector2<f64> = eig.eigenvectors.column(k).into_owned();
    // fix the sign so the embedding is a deterministic function of the sample
    if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) {
        d = -d;
    }
    let extent = (period.0 * d.x).abs() + (period.1 * d.y).abs();
    if curvature.abs() * extent >= std::f64::consts::TAU {
        return Err(Error::InvalidSample(format!(
            "curvature {curvature} wraps the patch extent {extent} beyond a full turn"
        )));
    }
    let origin = Vector2::new(0.5 * period.0, 0.5 * period.1);
    Ok(SurfaceMap::Cylinder { d, curvature, origin, z_mid })
}

/// Tiling of ghost tiles through a surface map.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceTiling {
    pub map: SurfaceMap,
    pub period: (f64, f64),
}

impl Tiling for SurfaceTiling {
    fn ghost(&self, offset: (i32, i32)) -> TileTransform {
        self.map.ghost_transform(offset, self.period)
    }
}

/// Height of the rest mid-plane: halfway between the lowest and highest
/// centerline point.
pub fn mid_plane(state: &RodState) -> f64 {
    let (lo, hi) = state
        .yarns
        .iter()
        .flat_map(|y| y.points.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    0.5 * (lo + hi)
}

fn material(p: &Vec3) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

fn quat_of(m: &Matrix3<f64>) -> crate::rod::Quat {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m)).into_inner()
}

/// Place the rest state on the surface: points at `φ(X) + h·n(X)` with `h`
/// their height above the mid-plane, frames rotated by `R` at the edge
/// midpoint, seam couplings carrying the ghost rotation.
pub fn tile_on_surface(rest: &RodState, seams: &[Seam], tiling: &SurfaceTiling, z_mid: f64) -> RodState {
    let map = &tiling.map;
    let mut out = rest.clone();
    for (yarn, src) in out.yarns.iter_mut().zip(&rest.yarns) {
        for (p, q) in yarn.points.iter_mut().zip(&src.points) {
            *p = map.position(&material(q), q.z - z_mid);
        }
        for (e, frame) in yarn.frames.iter_mut().enumerate() {
            let mid = 0.5 * (src.points[e] + src.points[e + 1]);
            *frame = quat_of(&map.rotation(&material(&mid))) * *frame;
        }
    }
    for c in &mut out.couplings {
        if let Some(s) = seams.iter().find(|s| s.end_yarn == c.from.yarn && s.start_yarn == c.to.yarn) {
            c.to_rotation = quat_of(&tiling.ghost(s.offset).linear) * c.to_rotation;
        }
    }
    out
}

/// Fluctuation rows: per yarn `Σ_j R̄ᵀ ũ_j = 0` with the repeat-averaged
/// rotation `R̄`, and per seam `R_endᵀ ũ_end − R_startᵀ ũ_start = 0` with
/// per-point rotations. `target` is the tiled state, so `ũ = x − target`.
pub fn rve_constraints(target: &RodState, rest: &RodState, seams: &[Seam], map: &SurfaceMap, scale: f64) -> Vec<LinearRow> {
    let rbar = averaged_rotation(rest, map);
    let mut rows = Vec::new();
    for (y, yarn) in target.yarns.iter().enumerate() {
        for c in 0..3 {
            let axis: Vec3 = rbar.column(c).into_owned();
            rows.push(LinearRow {
                terms: (0..yarn.points.len()).map(|point| (PointRef { yarn: y, point }, axis)).collect(),
                rhs: yarn.points.iter().map(|p| axis.dot(p)).sum(),
                scale,
            });
        }
    }
    for s in seams {
        let last = target.yarns[s.end_yarn].points.len() - 1;
        let r_end = map.rotation(&material(&rest.yarns[s.end_yarn].points[last]));
        let r_start = map.rotation(&material(&rest.yarns[s.start_yarn].points[0]));
        let (x_end, x_start) = (target.yarns[s.end_yarn].points[last], target.yarns[s.start_yarn].points[0]);
        for c in 0..3 {
            let (a, b): (Vec3, Vec3) = (r_end.column(c).into_owned(), r_start.column(c).into_owned());
            rows.push(LinearRow {
                terms: vec![
                    (PointRef { yarn: s.end_yarn, point: last }, a),
                    (PointRef { yarn: s.start_yarn, point: 0 }, -b),
                ],
                rhs: a.dot(&x_end) - b.dot(&x_start),
                scale,
            });
        }
    }
    rows
}

/// Polar rotation of the mean per-point rotation over the repeat.
fn averaged_rotation(rest: &RodState, map: &SurfaceMap) -> Matrix3<f64> {
    let mut sum = Matrix3::zeros();
    let mut n = 0usize;
    for p in rest.yarns.iter().flat_map(|y| y.points.iter()) {
        sum += map.rotation(&material(p));
        n += 1;
    }
    let mean = sum / n.max(1) as f64;
    let svd = mean.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let mut r = u * v_t;
            if r.determinant() < 0.0 {
                let mut u = u;
                u.column_mut(2).neg_mut();
                r = u * v_t;
            }
            r
        }
        _ => Matrix3::identity(),
    }
}

/// Zero net twist per yarn and matching end twists.
pub fn zero_twist_constraints(state: &RodState) -> Vec<TwistRow> {
    ConstraintSet::zero_twist(state)
}

/// Outcome of one homogenization sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub sample: DeformationSample,
    /// Minimized yarn energy per unit rest area, J/m².
    pub energy_density: f64,
    pub converged: bool,
    /// Largest scaled hard residual at the final iterate.
    pub residual: f64,
    pub iterations: usize,
    /// Failure reason when the minimization did not run to completion.
    pub error: Option<String>,
}

/// Minimized tiled state of one sample alongside its record.
pub struct SampleSolution {
    pub record: EnergyRecord,
    pub state: RodState,
    pub tiling: SurfaceTiling,
    pub contacts: ContactModel,
}

impl SampleSolution {
    /// Smallest centerline distance between yarn segments minus the
    /// contact thickness; negative values are interpenetration.
    pub fn min_gap(&self) -> f64 {
        let positions: Vec<Vec<Vec3>> = self.state.yarns.iter().map(|y| y.points.clone()).collect();
        let d = self.contacts.thickness;
        min_separation(&positions, &self.contacts.topology, &self.tiling, 2.0 * d) - d
    }
}

/// Embed, tile, constrain and minimize one sample.
pub fn homogenize_sample(patch: &RelaxedPatch, sample: &DeformationSample, config: &SolverConfig) -> Result<EnergyRecord> {
    solve_sample(patch, sample, config).map(|s| s.record)
}

pub fn solve_sample(patch: &RelaxedPatch, sample: &DeformationSample, config: &SolverConfig) -> Result<SampleSolution> {
    let z_mid = mid_plane(&patch.rest);
    let map = embed_surface(sample, patch.period, z_mid)?;
    let tiling = SurfaceTiling { map, period: patch.period };
    let target = tile_on_surface(&patch.rest, &patch.seams, &tiling, z_mid);
    let scale = patch.length_scale();
    let constraints = ConstraintSet {
        linear: rve_constraints(&target, &patch.rest, &patch.seams, &map, scale),
        twist: zero_twist_constraints(&target),
        contacts: Some(ContactModel::for_state(&target, &patch.seams, patch.radius, config.contact_thickness)),
    };
    let (state, energy, report) = minimize_with_homogenization(target, patch.material, &constraints, &tiling, scale, config)?;
    let record = EnergyRecord {
        sample: *sample,
        energy_density: energy / patch.area(),
        converged: report.converged,
        residual: report.max_residual,
        iterations: report.iterations,
        error: None,
    };
    Ok(SampleSolution { record, state, tiling, contacts: constraints.contacts.expect("contacts installed above") })
}

/// Run every sample on a pool of `jobs` threads (all cores when `None`).
/// Failed samples are kept as non-converged records; output order follows
/// `samples`.
pub fn run_homogenization(
    patch: &RelaxedPatch,
    samples: &[DeformationSample],
    config: &SolverConfig,
    jobs: Option<usize>,
) -> Result<Vec<EnergyRecord>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                homogenize_sample(patch, s, config).unwrap_or_else(|e| {
                    log::warn!("sample {} {:?} failed: {e}", s.category, s.first_form);
                    EnergyRecord {
                        sample: *s,
                        energy_density: f64::NAN,
                        converged: false,
                        residual: f64::NAN,
                        iterations: 0,
                        error: Some(e.to_string()),
                    }
                })
            })
            .collect()
    });
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    #[serde(rename = "I11")]
    i11: f64,
    #[serde(rename = "I22")]
    i22: f64,
    #[serde(rename = "I12")]
    i12: f64,
    #[serde(rename = "II11")]
    ii11: f64,
    #[serde(rename = "II22")]
    ii22: f64,
    #[serde(rename = "II12")]
    ii12: f64,
    category: SampleCategory,
    energy_density: f64,
    converged: bool,
    residual: f64,
}

pub fn write_energy_csv<W: Write>(records: &[EnergyRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let (i, ii) = (&r.sample.first_form, &r.sample.second_form);
        w.serialize(CsvRow {
            i11: i[(0, 0)],
            i22: i[(1, 1)],
            i12: i[(0, 1)],
            ii11: ii[(0, 0)],
            ii22: ii[(1, 1)],
            ii12: ii[(0, 1)],
            category: r.sample.category,
            energy_density: r.energy_density,
            converged: r.converged,
            residual: r.residual,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_energy_csv<R: Read>(input: R) -> Result<Vec<EnergyRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: CsvRow = row.map_err(csv_error)?;
        let sample = DeformationSample {
            first_form: Matrix2::new(row.i11, row.i12, row.i12, row.i22),
            second_form: Matrix2::new(row.ii11, row.ii12, row.ii12, row.ii22),
            category: row.category,
        };
        sample.validate()?;
        out.push(EnergyRecord {
            sample,
            energy_density: row.energy_density,
            converged: row.converged,
            residual: row.residual,
            iterations: 0,
            error: None,
        });
    }
    Ok(out)
}

pub fn save_energy_csv(records: &[EnergyRecord], path: &Path) -> Result<()> {
    write_energy_csv(records, std::fs::File::create(path)?)
}

pub fn load_energy_csv(path: &Path) -> Result<Vec<EnergyRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
    read_energy_csv(file).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("energy table: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{single_yarn_pattern, FlatTiling};
    use crate::solver::{ModulusLaw, RodMaterial};
    use approx::assert_relative_eq;
    use nalgebra::SVector;
    use num_dual::{hessian, Dual2SVec64};
    use proptest::prelude::*;

    /// First and second fundamental forms of `map` at `x`, by automatic
    /// differentiation of the embedding.
    fn forms(map: &SurfaceMap, x: Vector2<f64>) -> (Matrix2<f64>, Matrix2<f64>) {
        let n = map.normal(&x);
        let mut jac = nalgebra::Matrix3x2::zeros();
        let mut ii = Matrix2::zeros();
        for k in 0..3 {
            let (_, g, h) = hessian(
                |v: SVector<Dual2SVec64<2>, 2>| map.position_generic([v[0], v[1]])[k],
                &SVector::from([x.x, x.y]),
            );
            jac.row_mut(k).copy_from(&g.transpose());
            ii += h * n[k];
        }
        (jac.transpose() * jac, ii)
    }

    #[test]
    fn default_grid_has_one_identity_and_valid_samples() {
        let samples = sample_deformation_grid(&SamplingConfig::default());
        assert_eq!(samples.len(), 87);
        assert_eq!(samples.iter().filter(|s| s.is_identity()).count(), 1);
        for s in &samples {
            s.validate().unwrap();
        }
        let count = |c| samples.iter().filter(|s| s.category == c).count();
        assert_eq!(count(SampleCategory::Biaxial), 25);
        assert_eq!(count(SampleCategory::Shear), 11 - 1);
        assert_eq!(count(SampleCategory::BendBias), 11 - 1);
        assert_eq!(samples.iter().filter(|s| s.category.is_bending()).count(), 30);
    }

    #[test]
    fn invalid_samples_are_rejected() {
        let mixed = DeformationSample {
            first_form: Matrix2::new(1.1, 0.0, 0.0, 1.0),
            second_form: Matrix2::new(10.0, 0.0, 0.0, 0.0),
            category: SampleCategory::BendWeft,
        };
        assert!(matches!(mixed.validate(), Err(Error::InvalidSample(_))));
        assert!(DeformationSample::membrane(Matrix2::new(1.0, 0.2, 0.1, 1.0), SampleCategory::Shear).is_err());
        assert!(DeformationSample::membrane(Matrix2::new(1.0, 1.0, 1.0, 1.0), SampleCategory::Shear).is_err());
        assert!(DeformationSample::bending(Matrix2::new(1.0, 0.5, 0.5, 1.0), SampleCategory::BendBias).is_err());
        assert!(DeformationSample::bending(Matrix2::new(1.0, 0.0, 0.0, 1.0), SampleCategory::BendWeft).is_err());
        let wrap = DeformationSample::bending(Matrix2::new(1e5, 0.0, 0.0, 0.0), SampleCategory::BendWeft).unwrap();
        assert!(embed_surface(&wrap, (1e-3, 1e-3), 0.0).is_err());
        assert_eq!("bend_bias".parse::<SampleCategory>().unwrap(), SampleCategory::BendBias);
    }

    #[test]
    fn embeddings_reproduce_target_forms() {
        let period = (1.2e-3, 0.9e-3);
        let cfg = SamplingConfig::default();
        for s in sample_deformation_grid(&cfg) {
            let map = embed_surface(&s, period, 3e-5).unwrap();
            for x in [Vector2::new(0.0, 0.0), Vector2::new(1e-3, 2e-4), Vector2::new(6e-4, 4.5e-4)] {
                let (i, ii) = forms(&map, x);
                assert!((i - s.first_form).amax() < 1e-10, "{s:?}: {i}");
                assert!((ii - s.second_form).amax() < 1e-10 * cfg.curvature_max, "{s:?}: {ii}");
            }
        }
        let s = DeformationSample::membrane(Matrix2::new(1.21, 0.0, 0.0, 1.0), SampleCategory::StretchWeft).unwrap();
        match embed_surface(&s, period, 0.0).unwrap() {
            SurfaceMap::Affine { f, .. } => assert!((f - Matrix2::new(1.1, 0.0, 0.0, 1.0)).amax() < 1e-14),
            other => panic!("expected an affine map, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn ghost_transforms_commute_with_the_embedding(
            k in -300.0f64..300.0,
            bias in any::<bool>(),
            x in 0.0f64..1e-3,
            y in 0.0f64..1e-3,
            h in -1e-4f64..1e-4,
            ox in -1i32..=1,
            oy in -1i32..=1,
        ) {
            prop_assume!(k.abs() > 1e-3);
            let ii = if bias { Matrix2::new(k, k, k, k) } else { Matrix2::new(k, 0.0, 0.0, 0.0) };
            let cat = if bias { SampleCategory::BendBias } else { SampleCategory::BendWeft };
            let s = DeformationSample::bending(ii, cat).unwrap();
            let period = (1e-3, 1e-3);
            let map = embed_surface(&s, period, 2e-5).unwrap();
            let ghost = map.ghost_transform((ox, oy), period);
            let p = Vector2::new(x, y);
            let shifted = p + Vector2::new(ox as f64 * period.0, oy as f64 * period.1);
            let expect = map.position(&shifted, h);
            prop_assert!((ghost.apply(&map.position(&p, h)) - expect).amax() < 1e-15);
            prop_assert!((ghost.linear * map.rotation(&p) - map.rotation(&shifted)).amax() < 1e-12);
            let r = map.rotation(&p);
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        }
    }

    fn straight_patch(youngs: f64, radius: f64) -> RelaxedPatch {
        let p = single_yarn_pattern(1e-3, 1e-3, 11).unwrap();
        let material = RodMaterial { law: ModulusLaw::Constant { youngs }, poisson: 0.3, radius };
        crate::solver::relax_pattern_with(&p, material, 1.0, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn identity_tiling_is_the_rest_state_and_satisfies_its_rows() {
        let patch = straight_patch(1e9, 5e-5);
        let z = mid_plane(&patch.rest);
        let s = DeformationSample::identity(SampleCategory::Biaxial);
        let map = embed_surface(&s, patch.period, z).unwrap();
        let tiling = SurfaceTiling { map, period: patch.period };
        let tiled = tile_on_surface(&patch.rest, &patch.seams, &tiling, z);
        assert_eq!(tiled, patch.rest);
        let flat = FlatTiling { period: patch.period };
        assert_eq!(tiling.ghost((1, -1)).translation, flat.ghost((1, -1)).translation);
    }

    #[test]
    fn tiled_states_satisfy_fluctuation_rows_and_seam_ties() {
        let patch = straight_patch(1e9, 5e-5);
        let z = mid_plane(&patch.rest);
        for s in sample_deformation_grid(&SamplingConfig::default()) {
            let map = embed_surface(&s, patch.period, z).unwrap();
            let tiling = SurfaceTiling { map, period: patch.period };
            let tiled = tile_on_surface(&patch.rest, &patch.seams, &tiling, z);
            for row in rve_constraints(&tiled, &patch.rest, &patch.seams, &map, patch.length_scale()) {
                assert!(row.value(&tiled).abs() < 1e-15, "{s:?}");
            }
            for seam in &patch.seams {
                let end = *tiled.yarns[seam.end_yarn].points.last().unwrap();
                let start = tiled.yarns[seam.start_yarn].points[0];
                assert!((tiling.ghost(seam.offset).apply(&start) - end).amax() < 1e-15);
            }
            // a rigid translation moves every yarn sum and nothing across seams
            let mut moved = tiled.clone();
            let t = Vec3::new(1e-6, -2e-6, 3e-6);
            for p in moved.yarns.iter_mut().flat_map(|y| y.points.iter_mut()) {
                *p += t;
            }
            let rows = rve_constraints(&tiled, &patch.rest, &patch.seams, &map, patch.length_scale());
            let n = tiled.yarns[0].points.len() as f64;
            let rbar = averaged_rotation(&patch.rest, &map);
            for c in 0..3 {
                assert_relative_eq!(rows[c].value(&moved), n * (rbar.transpose() * t)[c], max_relative = 1e-9, epsilon = 1e-20);
            }
        }
    }

    #[test]
    fn straight_yarn_stretch_matches_closed_form() {
        let (youngs, r) = (1e9, 5e-5);
        let patch = straight_patch(youngs, r);
        let area = std::f64::consts::PI * r * r;
        let period = patch.period;
        for l in [1.05, 1.2] {
            let s = DeformationSample::membrane(Matrix2::new(l * l, 0.0, 0.0, 1.0), SampleCategory::StretchWeft).unwrap();
            let rec = homogenize_sample(&patch, &s, &SolverConfig::default()).unwrap();
            assert!(rec.converged);
            let expect = 0.5 * youngs * area * (l - 1.0f64).powi(2) * period.0 / (period.0 * period.1);
            assert_relative_eq!(rec.energy_density, expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn straight_yarn_bending_matches_closed_form_and_is_even() {
        let (youngs, r) = (1e9, 5e-5);
        let patch = straight_patch(youngs, r);
        let i1 = std::f64::consts::PI * r.powi(4) / 4.0;
        let l0 = patch.rest.yarns[0].rest_lengths[0];
        let mut energies = Vec::new();
        for k in [150.0, -150.0] {
            let s = DeformationSample::bending(Matrix2::new(k, 0.0, 0.0, 0.0), SampleCategory::BendWeft).unwrap();
            let rec = homogenize_sample(&patch, &s, &SolverConfig::default()).unwrap();
            assert!(rec.converged);
            let discrete = 2.0 / l0 * (0.5 * k * l0).tan();
            let expect = 0.5 * youngs * i1 * discrete * discrete * patch.period.0 / patch.area();
            assert_relative_eq!(rec.energy_density, expect, max_relative = 1e-3);
            energies.push(rec.energy_density);
        }
        assert_relative_eq!(energies[0], energies[1], max_relative = 1e-6);
        // bending across the yarn costs nothing for a straight yarn at mid-plane
        let s = DeformationSample::bending(Matrix2::new(0.0, 0.0, 0.0, 150.0), SampleCategory::BendWarp).unwrap();
        let rec = homogenize_sample(&patch, &s, &SolverConfig::default()).unwrap();
        assert!(rec.energy_density < 1e-6 * energies[0]);
    }

    #[test]
    fn energy_table_round_trips_through_csv() {
        let samples = sample_deformation_grid(&SamplingConfig::default());
        let records: Vec<_> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| EnergyRecord {
                sample: *s,
                energy_density: i as f64 * 0.125,
                converged: i % 3 != 0,
                residual: 1e-9,
                iterations: 0,
                error: None,
            })
            .collect();
        let mut buf = Vec::new();
        write_energy_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("I11,I22,I12,II11,II22,II12,category,energy_density,converged,residual\n"));
        assert_eq!(read_energy_csv(buf.as_slice()).unwrap(), records);
    }
}
