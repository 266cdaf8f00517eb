//! Quasi-static shell experiments: a clamped uniaxial stretch test and drape
//! over a sphere or from two pinned corners.
//!
//! Both reuse the constrained Newton solver. Clamped and pinned coordinates
//! are eliminated from the unknowns, gravity is a constant external force on
//! lumped vertex masses and sphere contact is one unilateral row per nearby
//! vertex keeping it `h/2` outside the sphere.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rod::Vec3;
use crate::shell::{element_energy_hessian, shell_energy, shell_energy_gradient, write_obj, ShellParams, TriangleShellMesh};
use crate::solver::{solve, Linearization, Problem, Row, RowKind, SolveReport, SolverConfig};
use crate::{Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Rectangular swatch; the stretch axis is x, `length` along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Swatch {
    pub length: f64,
    pub width: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for Swatch {
    fn default() -> Self {
        Self { length: 0.08, width: 0.05, nx: 16, ny: 10 }
    }
}

impl Swatch {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::Config { field: "length".into(), reason: "length and width must be positive".into() });
        }
        // even counts put a vertex line on the mid-span and a vertex at the center
        if self.nx < 2 || self.ny < 2 || self.nx % 2 == 1 || self.ny % 2 == 1 {
            let field = if self.nx < 2 || self.nx % 2 == 1 { "nx" } else { "ny" };
            return Err(Error::Config { field: field.into(), reason: "nx and ny must be even and at least 2".into() });
        }
        Ok(())
    }

    /// Mesh whose warp direction makes `cut_angle_deg` with the x axis: 0° is a
    /// warp cut, 90° a weft cut and 45° a bias cut.
    pub fn mesh(&self, cut_angle_deg: f64) -> Result<TriangleShellMesh> {
        TriangleShellMesh::rectangle(self.length, self.width, self.nx, self.ny, (90.0 - cut_angle_deg).to_radians())
    }

    pub fn vertex(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    fn column(&self, i: usize) -> Vec<usize> {
        (0..=self.ny).map(|j| self.vertex(i, j)).collect()
    }

    /// Boundary vertices in counterclockwise order.
    fn ring(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let mut ring: Vec<usize> = (0..nx).map(|i| self.vertex(i, 0)).collect();
        ring.extend((0..ny).map(|j| self.vertex(nx, j)));
        ring.extend((1..=nx).rev().map(|i| self.vertex(i, ny)));
        ring.extend((1..=ny).rev().map(|j| self.vertex(0, j)));
        ring
    }
}

#[derive(Debug, Clone, Copy)]
struct Sphere {
    center: Vec3,
    radius: f64,
}

struct ShellProblem<'a> {
    mesh: &'a TriangleShellMesh,
    params: &'a ShellParams,
    x: Vec<Vec3>,
    dof: Vec<[Option<usize>; 3]>,
    n: usize,
    /// External force per vertex.
    load: Vec<Vec3>,
    sphere: Option<Sphere>,
    candidates: Vec<usize>,
    margin: f64,
}

impl<'a> ShellProblem<'a> {
    fn new(mesh: &'a TriangleShellMesh, params: &'a ShellParams, x: Vec<Vec3>, locked: &[[bool; 3]]) -> Self {
        let mut n = 0;
        let dof = locked
            .iter()
            .map(|l| {
                l.map(|fixed| {
                    (!fixed).then(|| {
                        n += 1;
                        n - 1
                    })
                })
            })
            .collect();
        Self { mesh, params, load: vec![Vec3::zeros(); x.len()], x, dof, n, sphere: None, candidates: Vec::new(), margin: 0.0 }
    }

    fn separation(&self) -> f64 {
        0.5 * self.params.h
    }

    fn contact_value(&self, s: &Sphere, v: usize) -> f64 {
        (self.x[v] - s.center).norm() - (s.radius + self.separation())
    }

    fn solve(&mut self, config: &SolverConfig) -> Result<SolveReport> {
        if self.n == 0 {
            return Ok(SolveReport {
                converged: true,
                iterations: 0,
                energy: self.energy()?,
                max_residual: 0.0,
                last_displacement: 0.0,
                history: Vec::new(),
            });
        }
        solve(self, config)
    }
}

impl Problem for ShellProblem<'_> {
    type Snapshot = Vec<Vec3>;

    fn dof_count(&self) -> usize {
        self.n
    }

    fn begin_outer(&mut self) -> Result<f64> {
        if let Some(s) = self.sphere {
            self.candidates = (0..self.x.len()).filter(|&v| self.contact_value(&s, v) < self.margin).collect();
        }
        Ok(0.0)
    }

    fn energy(&self) -> Result<f64> {
        let work: f64 = self.x.iter().zip(&self.load).map(|(x, f)| f.dot(x)).sum();
        Ok(shell_energy(self.mesh, &self.x, self.params)? - work)
    }

    fn linearize(&self) -> Result<Linearization> {
        let energy = self.energy()?;
        let parts: Vec<_> = (0..self.mesh.triangles.len())
            .into_par_iter()
            .map(|t| element_energy_hessian(self.mesh, &self.x, self.params, t))
            .collect();
        let mut gradient = DVector::zeros(self.n);
        let mut hessian = Vec::with_capacity(parts.len() * 18 * 18);
        for (t, (_, g, h)) in parts.iter().enumerate() {
            let stencil = self.mesh.stencil(t);
            let idx: [Option<usize>; 18] = std::array::from_fn(|a| stencil[a / 3].and_then(|v| self.dof[v][a % 3]));
            for (a, i) in idx.iter().enumerate() {
                let Some(i) = *i else { continue };
                gradient[i] += g[a];
                for (b, j) in idx.iter().enumerate() {
                    if let Some(j) = *j {
                        hessian.push((i, j, h[(a, b)]));
                    }
                }
            }
        }
        for (d, f) in self.dof.iter().zip(&self.load) {
            for k in 0..3 {
                if let Some(i) = d[k] {
                    gradient[i] -= f[k];
                }
            }
        }
        let mut rows = Vec::new();
        if let Some(s) = self.sphere {
            for &v in &self.candidates {
                let d = self.x[v] - s.center;
                let normal = d / d.norm();
                let grad = (0..3).filter_map(|k| self.dof[v][k].map(|i| (i, normal[k]))).collect();
                rows.push(Row {
                    kind: RowKind::Unilateral,
                    value: self.contact_value(&s, v),
                    grad,
                    hess: Vec::new(),
                    scale: s.radius,
                    key: v as u64,
                });
            }
        }
        Ok(Linearization { energy, gradient, hessian, rows })
    }

    fn row_values(&self) -> Result<Vec<f64>> {
        Ok(match self.sphere {
            Some(s) => self.candidates.iter().map(|&v| self.contact_value(&s, v)).collect(),
            None => Vec::new(),
        })
    }

    fn apply_step(&mut self, dx: &DVector<f64>) {
        for (x, d) in self.x.iter_mut().zip(&self.dof) {
            for k in 0..3 {
                if let Some(i) = d[k] {
                    x[k] += dx[i];
                }
            }
        }
    }

    fn step_limit(&self, dx: &DVector<f64>) -> f64 {
        // vertices outside the candidate band must not reach the sphere unseen
        let moved = self.step_norm(dx);
        if self.sphere.is_some() && moved > 0.5 * self.margin {
            0.5 * self.margin / moved
        } else {
            1.0
        }
    }

    fn step_norm(&self, dx: &DVector<f64>) -> f64 {
        self.dof
            .iter()
            .map(|d| d.iter().map(|i| i.map_or(0.0, |i| dx[i] * dx[i])).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn snapshot(&self) -> Vec<Vec3> {
        self.x.clone()
    }

    fn restore(&mut self, snapshot: Vec<Vec3>) {
        self.x = snapshot;
    }
}

/// Elastic force the shell exerts on the `fixed` vertices, `-Σ ∂E/∂x`.
pub fn boundary_force(mesh: &TriangleShellMesh, x: &[Vec3], params: &ShellParams, fixed: &[usize]) -> Result<Vec3> {
    let g = shell_energy_gradient(mesh, x, params)?;
    Ok(-fixed.iter().map(|&v| g[v]).sum::<Vec3>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StretchConfig {
    pub swatch: Swatch,
    pub cut_angle_deg: f64,
    /// Engineering strains of the clamp separation, solved in order.
    pub strains: Vec<f64>,
    pub solver: SolverConfig,
}

impl Default for StretchConfig {
    fn default() -> Self {
        Self {
            swatch: Swatch::default(),
            cut_angle_deg: 0.0,
            strains: (1..=10).map(|k| 0.02 * k as f64).collect(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchPoint {
    pub strain: f64,
    /// Axial pull on the moving clamp, N.
    pub force: f64,
    /// Deformed over rest width along the mid-span vertex line.
    pub compression_ratio: f64,
    /// `|F_left,x + F_right,x| / |F_right,x|`.
    pub axial_imbalance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchCurve {
    pub cut_angle_deg: f64,
    pub swatch: Swatch,
    pub params: ShellParams,
    pub points: Vec<StretchPoint>,
    /// Some strain points failed to converge and are left out of the CSV.
    pub partial: bool,
    #[serde(skip)]
    pub final_positions: Vec<Vec3>,
    #[serde(skip)]
    pub triangles: Vec<[usize; 3]>,
}

impl StretchCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "strain,force_N,compression_ratio")?;
        for p in self.points.iter().filter(|p| p.converged) {
            writeln!(out, "{:.17e},{:.17e},{:.17e}", p.strain, p.force, p.compression_ratio)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn force_at(&self, strain: f64) -> Option<f64> {
        self.points.iter().find(|p| p.converged && (p.strain - strain).abs() < 1e-12).map(|p| p.force)
    }

    pub fn compression_at(&self, strain: f64) -> Option<f64> {
        self.points.iter().find(|p| p.converged && (p.strain - strain).abs() < 1e-12).map(|p| p.compression_ratio)
    }
}

/// Clamp vertices are fixed; every other vertex stays in the swatch plane.
/// Without gravity the in-plane load keeps a flat state in equilibrium, but
/// lateral compression makes it a saddle toward wrinkling, which this test
/// leaves out.
fn stretch_locks(sw: &Swatch, vertices: usize) -> Vec<[bool; 3]> {
    let mut locked = vec![[false, false, true]; vertices];
    for v in sw.column(0).into_iter().chain(sw.column(sw.nx)) {
        locked[v] = [true; 3];
    }
    locked
}

/// Clamp both short edges, pull one to `(1 + ε)·length` for each scheduled
/// strain and record the reaction force and the mid-span narrowing.
pub fn stretch_test(params: &ShellParams, config: &StretchConfig) -> Result<StretchCurve> {
    params.validate()?;
    config.swatch.validate()?;
    config.solver.validate()?;
    if config.strains.iter().any(|e| !(e.is_finite() && *e > -1.0)) {
        return Err(Error::Config { field: "strains".into(), reason: "strains must be finite and above -1".into() });
    }
    let sw = config.swatch;
    let mesh = sw.mesh(config.cut_angle_deg)?;
    let left = sw.column(0);
    let right = sw.column(sw.nx);
    let mid = sw.column(sw.nx / 2);
    let locked = stretch_locks(&sw, mesh.vertex_count());
    let mut x = mesh.rest.clone();
    let mut stretch_prev = 1.0;
    let mut points = Vec::with_capacity(config.strains.len());
    for &strain in &config.strains {
        let stretch = 1.0 + strain;
        // warm start from the previous solution, stretched affinely
        let mut guess = x.clone();
        for p in &mut guess {
            p.x *= stretch / stretch_prev;
        }
        for &v in &right {
            guess[v].x = mesh.rest[v].x * stretch;
        }
        let mut problem = ShellProblem::new(&mesh, params, guess, &locked);
        let report = problem.solve(&config.solver)?;
        let x_new = problem.x;
        let fr = boundary_force(&mesh, &x_new, params, &right)?;
        let fl = boundary_force(&mesh, &x_new, params, &left)?;
        let (lo, hi) = mid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(x_new[v].y), hi.max(x_new[v].y)));
        let force = -fr.x;
        let point = StretchPoint {
            strain,
            force,
            compression_ratio: (hi - lo) / sw.width,
            axial_imbalance: if force != 0.0 { (fl.x + fr.x).abs() / force.abs() } else { (fl.x + fr.x).abs() },
            converged: report.converged,
            iterations: report.iterations,
            max_residual: report.max_residual,
        };
        if report.converged {
            x = x_new;
            stretch_prev = stretch;
        } else {
            log::warn!(
                "stretch test at cut {}° did not converge at strain {strain} after {} iterations",
                config.cut_angle_deg, report.iterations
            );
        }
        points.push(point);
    }
    let partial = points.iter().any(|p| !p.converged);
    Ok(StretchCurve {
        cut_angle_deg: config.cut_angle_deg,
        swatch: sw,
        params: *params,
        points,
        partial,
        final_positions: x,
        triangles: mesh.triangles.clone(),
    })
}

/// Run independent stretch tests concurrently.
pub fn stretch_tests(params: &ShellParams, configs: &[StretchConfig]) -> Result<Vec<StretchCurve>> {
    configs.par_iter().map(|c| stretch_test(params, c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    /// Sphere centered below the swatch center, which rests on its apex.
    Sphere { radius: f64 },
    /// Swatch hung in a vertical plane from its two top corners, pulled
    /// together to `(1 - slack)` of the width apart.
    WallPins { slack: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrapeConfig {
    pub swatch: Swatch,
    pub cut_angle_deg: f64,
    pub obstacle: Obstacle,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Areal density, kg/m².
    pub density: f64,
    /// Gravity is ramped up over this many solves.
    pub load_steps: usize,
    /// Out-of-plane perturbation of the initial state relative to the
    /// swatch span; breaks symmetric equilibria.
    pub noise: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for DrapeConfig {
    fn default() -> Self {
        Self {
            swatch: Swatch { length: 0.3, width: 0.3, nx: 20, ny: 20 },
            cut_angle_deg: 90.0,
            obstacle: Obstacle::Sphere { radius: 0.08 },
            gravity: STANDARD_GRAVITY,
            density: 0.15,
            load_steps: 4,
            noise: 1e-4,
            seed: 0,
            solver: SolverConfig { max_outer_iters: 2000, ..SolverConfig::default() },
        }
    }
}

impl DrapeConfig {
    pub fn validate(&self) -> Result<()> {
        self.swatch.validate()?;
        self.solver.validate()?;
        let bad = |field: &str, reason: &str| Err(Error::Config { field: field.into(), reason: reason.into() });
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return bad("gravity", "must be non-negative");
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density", "must be positive");
        }
        if self.load_steps == 0 {
            return bad("load_steps", "must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", "must be non-negative");
        }
        match self.obstacle {
            Obstacle::Sphere { radius } if !(radius > 0.0 && radius.is_finite()) => bad("obstacle.radius", "must be positive"),
            Obstacle::WallPins { slack } if !(0.0..1.0).contains(&slack) => bad("obstacle.slack", "must lie in [0, 1)"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrapeDescriptors {
    /// Vertical extent of the draped swatch.
    pub drape_height: f64,
    /// Largest horizontal distance from the drape axis where the surface
    /// crosses mid-height.
    pub silhouette_radius: f64,
    /// Folds along the free boundary, from sign changes of its turning angle
    /// seen from above.
    pub fold_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrapeResult {
    pub descriptors: DrapeDescriptors,
    pub converged: bool,
    pub iterations: usize,
    pub energy: f64,
    pub max_residual: f64,
    /// Deepest sphere penetration, positive inside.
    pub max_penetration: f64,
    #[serde(skip)]
    pub positions: Vec<Vec3>,
    #[serde(skip)]
    pub triangles: Vec<[usize; 3]>,
}

impl DrapeResult {
    pub fn save_obj(&self, path: &Path) -> Result<()> {
        write_obj(&self.positions, &self.triangles, std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Quasi-static drape under gravity.
pub fn drape_test(params: &ShellParams, config: &DrapeConfig) -> Result<DrapeResult> {
    params.validate()?;
    config.validate()?;
    let sw = config.swatch;
    let mesh = sw.mesh(config.cut_angle_deg)?;
    let span = sw.length.max(sw.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut locked = vec![[false; 3]; mesh.vertex_count()];
    let (x0, axis, free_edge, closed): (Vec<Vec3>, Vec3, Vec<usize>, bool) = match config.obstacle {
        Obstacle::Sphere { radius } => {
            let lift = radius + 0.5 * params.h;
            let x0 = mesh
                .rest
                .iter()
                .map(|p| Vec3::new(p.x - 0.5 * sw.length, p.y - 0.5 * sw.width, lift + config.noise * span * rng.random_range(-1.0..1.0)))
                .collect();
            // horizontal pinning at the apex stands in for static friction
            let c = sw.vertex(sw.nx / 2, sw.ny / 2);
            locked[c] = [true, true, false];
            (x0, Vec3::zeros(), sw.ring(), true)
        }
        Obstacle::WallPins { slack } => {
            let x0: Vec<Vec3> = mesh
                .rest
                .iter()
                .map(|p| {
                    Vec3::new((p.x - 0.5 * sw.length) * (1.0 - slack), config.noise * span * rng.random_range(-1.0..1.0), -p.y)
                })
                .collect();
            for v in [sw.vertex(0, 0), sw.vertex(sw.nx, 0)] {
                locked[v] = [true; 3];
            }
            (x0, Vec3::zeros(), (0..=sw.nx).map(|i| sw.vertex(i, sw.ny)).collect(), false)
        }
    };
    let mut problem = ShellProblem::new(&mesh, params, x0, &locked);
    if let Obstacle::Sphere { radius } = config.obstacle {
        problem.sphere = Some(Sphere { center: Vec3::zeros(), radius });
        problem.margin = 0.1 * span;
    }
    let weight: Vec<f64> = mesh.vertex_areas().iter().map(|a| a * config.density * config.gravity).collect();
    let mut iterations = 0;
    let mut converged = true;
    let mut last = None;
    for step in 1..=config.load_steps {
        let f = step as f64 / config.load_steps as f64;
        problem.load = weight.iter().map(|w| Vec3::new(0.0, 0.0, -f * w)).collect();
        let report = problem.solve(&config.solver)?;
        iterations += report.iterations;
        if !report.converged {
            log::warn!("drape did not converge at load step {step}/{}", config.load_steps);
            converged = false;
        }
        last = Some(report);
    }
    let report = last.expect("at least one load step");
    let x = problem.x.clone();
    let max_penetration = match problem.sphere {
        Some(s) => x.iter().map(|p| (s.radius + 0.5 * params.h) - (p - s.center).norm()).fold(f64::NEG_INFINITY, f64::max),
        None => 0.0,
    };
    Ok(DrapeResult {
        descriptors: drape_descriptors(&x, &mesh.triangles, &axis, &free_edge, closed),
        converged,
        iterations,
        energy: report.energy,
        max_residual: report.max_residual,
        max_penetration,
        positions: x,
        triangles: mesh.triangles.clone(),
    })
}

/// Shape descriptors of a draped mesh about the vertical line through `axis`.
pub fn drape_descriptors(x: &[Vec3], triangles: &[[usize; 3]], axis: &Vec3, edge: &[usize], closed: bool) -> DrapeDescriptors {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let z_mid = 0.5 * (lo + hi);
    let radial = |p: &Vec3| ((p.x - axis.x).powi(2) + (p.y - axis.y).powi(2)).sqrt();
    let mut silhouette: f64 = 0.0;
    let mut crossed = false;
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (x[t[k]], x[t[(k + 1) % 3]]);
            if (a.z - z_mid) * (b.z - z_mid) < 0.0 {
                let s = (z_mid - a.z) / (b.z - a.z);
                silhouette = silhouette.max(radial(&(a + (b - a) * s)));
                crossed = true;
            }
        }
    }
    if !crossed {
        silhouette = x.iter().map(radial).fold(0.0, f64::max);
    }
    let pts: Vec<(f64, f64)> = edge.iter().map(|&v| (x[v].x, x[v].y)).collect();
    DrapeDescriptors { drape_height: hi - lo, silhouette_radius: silhouette, fold_count: count_folds(&pts, closed) }
}

/// Folds of a plane polyline: sign changes of the turning angle, ignoring
/// turns small against the sharpest one, two changes per fold.
pub fn count_folds(points: &[(f64, f64)], closed: bool) -> usize {
    let n = points.len();
    if n < 3 {
        return 0;
    }
    let turn = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        let (u, v) = ((b.0 - a.0, b.1 - a.1), (c.0 - b.0, c.1 - b.1));
        (u.0 * v.1 - u.1 * v.0).atan2(u.0 * v.0 + u.1 * v.1)
    };
    let turns: Vec<f64> = if closed {
        (0..n).map(|i| turn(points[(i + n - 1) % n], points[i], points[(i + 1) % n])).collect()
    } else {
        (1..n - 1).map(|i| turn(points[i - 1], points[i], points[i + 1])).collect()
    };
    let sharpest = turns.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let signs: Vec<f64> = turns.iter().filter(|t| t.abs() > (0.02 * sharpest).max(1e-4)).map(|t| t.signum()).collect();
    if signs.is_empty() {
        return 0;
    }
    let mut changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    if closed && signs.len() > 1 && signs[0] != signs[signs.len() - 1] {
        changes += 1;
    }
    changes.div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shell::{stiffness_from_moduli, OrthotropicModuli};
    use approx::assert_relative_eq;

    fn woven() -> ShellParams {
        ShellParams { s00: 4.0e6, s01: 3.0e5, s11: 3.0e6, s22: 2.0e5, b00: 4.0e5, b11: 3.0e5, b22: 1.0e5, b01: 0.0, h: 5e-4 }
    }

    fn isotropic() -> ShellParams {
        let s = stiffness_from_moduli(&OrthotropicModuli { e_t: 3e6, e_p: 3e6, nu_tp: 0.3, nu_pt: 0.3, mu: 3e6 / 2.6 }).unwrap();
        ShellParams { s00: s[(0, 0)], s01: s[(0, 1)], s11: s[(1, 1)], s22: s[(2, 2)], b00: 1e5, b11: 1e5, b22: 1e5, b01: 0.0, h: 5e-4 }
    }

    fn coarse(strains: Vec<f64>) -> StretchConfig {
        StretchConfig { swatch: Swatch { length: 0.08, width: 0.05, nx: 8, ny: 6 }, strains, ..StretchConfig::default() }
    }

    #[test]
    fn rest_state_has_no_force() {
        let curve = stretch_test(&woven(), &coarse(vec![0.0])).unwrap();
        let p = &curve.points[0];
        assert!(p.converged);
        assert!(p.force.abs() < 1e-12);
        assert_relative_eq!(p.compression_ratio, 1.0, epsilon = 1e-12);
        let mesh = Swatch::default().mesh(0.0).unwrap();
        let f = boundary_force(&mesh, &mesh.rest, &woven(), &Swatch::default().column(0)).unwrap();
        assert!(f.norm() < 1e-12);
    }

    #[test]
    fn single_quad_matches_the_hand_derived_clamp_force() {
        let p = ShellParams { s01: 0.0, ..woven() };
        let cfg = StretchConfig {
            swatch: Swatch { length: 0.03, width: 0.02, nx: 1, ny: 1 },
            strains: vec![0.05, 0.1, 0.2],
            ..StretchConfig::default()
        };
        // a one-cell swatch has every vertex clamped; bypass the even-count check
        let sw = cfg.swatch;
        let mesh = sw.mesh(0.0).unwrap();
        let right = [sw.vertex(1, 0), sw.vertex(1, 1)];
        for &e in &cfg.strains {
            let l = 1.0 + e;
            let mut x = mesh.rest.clone();
            for &v in &right {
                x[v].x *= l;
            }
            let f = -boundary_force(&mesh, &x, &p, &right).unwrap().x;
            // E = A·½h·s11·(λ² − 1)² with the warp axis along x; dE/dδ over the length
            let expected = 2.0 * p.h * p.s11 * (l * l - 1.0) * l * sw.width;
            assert_relative_eq!(f, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn clamp_forces_balance_and_match_the_energy_derivative() {
        let p = woven();
        let curve = stretch_test(&p, &coarse(vec![0.05, 0.1])).unwrap();
        for pt in &curve.points {
            assert!(pt.converged);
            assert!(pt.axial_imbalance < 1e-8, "imbalance {}", pt.axial_imbalance);
        }
        // envelope theorem: the reaction is dE*/dδ of the equilibrium energy
        let d = 1e-4;
        let cfg = coarse(vec![0.1 - d, 0.1 + d]);
        let energy = |strain: f64| {
            let c = StretchConfig { strains: vec![strain], ..cfg.clone() };
            let sw = c.swatch;
            let mesh = sw.mesh(0.0).unwrap();
            let locked = stretch_locks(&sw, mesh.vertex_count());
            let mut x = mesh.rest.clone();
            for v in &mut x {
                v.x *= 1.0 + strain;
            }
            let mut problem = ShellProblem::new(&mesh, &p, x, &locked);
            let r = problem.solve(&SolverConfig { position_tol: 1e-12, ..SolverConfig::default() }).unwrap();
            assert!(r.converged);
            r.energy
        };
        let fd = (energy(0.1 + d) - energy(0.1 - d)) / (2.0 * d * cfg.swatch.length);
        let f = curve.force_at(0.1).unwrap();
        assert_relative_eq!(f, fd, max_relative = 1e-4);
    }

    #[test]
    fn force_grows_with_strain_and_the_swatch_narrows() {
        let curve = stretch_test(&woven(), &coarse(StretchConfig::default().strains)).unwrap();
        assert!(!curve.partial);
        for w in curve.points.windows(2) {
            assert!(w[1].force >= w[0].force - 1e-9 * w[0].force.abs());
            assert!(w[1].compression_ratio <= w[0].compression_ratio + 1e-12);
        }
        assert!(curve.points[0].force > 0.0);
        assert!(curve.points.last().unwrap().compression_ratio < 1.0);
        let mut csv = Vec::new();
        curve.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("strain,force_N,compression_ratio\n"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn isotropic_sheets_ignore_the_cut_angle() {
        let square = Swatch { length: 0.05, width: 0.05, nx: 6, ny: 6 };
        let run = |angle: f64| {
            stretch_test(&isotropic(), &StretchConfig { swatch: square, cut_angle_deg: angle, strains: vec![0.05, 0.1], ..StretchConfig::default() })
                .unwrap()
        };
        let (a, b) = (run(0.0), run(90.0));
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_relative_eq!(p.force, q.force, max_relative = 1e-6);
        }
    }

    #[test]
    fn soft_shear_makes_the_bias_cut_softer() {
        let curves = stretch_tests(
            &woven(),
            &[0.0, 45.0, 90.0].map(|a| StretchConfig { cut_angle_deg: a, ..coarse(vec![0.1]) }),
        )
        .unwrap();
        let f: Vec<f64> = curves.iter().map(|c| c.force_at(0.1).unwrap()).collect();
        assert!(f[1] < f[0] && f[1] < f[2], "forces {f:?}");
        let r: Vec<f64> = curves.iter().map(|c| c.compression_at(0.1).unwrap()).collect();
        assert!(r[1] < r[0] && r[1] < r[2], "ratios {r:?}");
    }

    #[test]
    fn fold_counting() {
        let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert_eq!(count_folds(&square, true), 0);
        let n = 64;
        let petals = |k: f64| -> Vec<(f64, f64)> {
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    let r = 1.0 + 0.2 * (k * a).cos();
                    (r * a.cos(), r * a.sin())
                })
                .collect()
        };
        assert_eq!(count_folds(&petals(0.0), true), 0);
        assert_eq!(count_folds(&petals(5.0), true), 5);
        let wave: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64 * 0.5).sin())).collect();
        assert!(count_folds(&wave, false) >= 3);
    }

    fn small_drape() -> DrapeConfig {
        DrapeConfig { swatch: Swatch { length: 0.3, width: 0.3, nx: 8, ny: 8 }, ..DrapeConfig::default() }
    }

    /// Slow (minutes); run with `--ignored`. Currently fails: the stiff-hem
    /// drape shows more boundary sign changes than the soft-hem one.
    #[test]
    #[ignore]
    fn stiff_hem_folds_no_more_than_soft_hem() {
        let aniso = ShellParams { b00: 4e6, b11: 4e4, ..woven() };
        let cfg = DrapeConfig {
            swatch: Swatch { length: 0.2, width: 0.2, nx: 24, ny: 12 },
            obstacle: Obstacle::WallPins { slack: 0.4 },
            ..DrapeConfig::default()
        };
        // the hem runs along x, the weft axis at a 90° cut
        let stiff = drape_test(&aniso, &cfg).unwrap();
        let soft = drape_test(&aniso.swap_axes(), &cfg).unwrap();
        assert!(stiff.converged && soft.converged);
        assert!(
            stiff.descriptors.fold_count <= soft.descriptors.fold_count,
            "stiff hem {} folds, soft hem {}",
            stiff.descriptors.fold_count,
            soft.descriptors.fold_count
        );
    }

    #[test]
    fn zero_gravity_keeps_the_swatch_flat() {
        let cfg = DrapeConfig { gravity: 0.0, noise: 0.0, ..small_drape() };
        let r = drape_test(&woven(), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.descriptors.drape_height < 1e-12);
        assert_eq!(r.descriptors.fold_count, 0);
    }

    #[test]
    fn rigid_plate_barely_deflects() {
        let p = ShellParams { b00: woven().b00 * 1e6, b11: woven().b11 * 1e6, b22: woven().b22 * 1e6, ..woven() };
        let r = drape_test(&p, &small_drape()).unwrap();
        assert!(r.converged);
        assert!(r.descriptors.drape_height < 0.01 * 0.3, "height {}", r.descriptors.drape_height);
        assert!(r.max_penetration < 1e-6);
    }

    #[test]
    fn soft_cloth_drapes_over_the_sphere() {
        let r = drape_test(&woven(), &small_drape()).unwrap();
        assert!(r.converged);
        assert!(r.descriptors.drape_height > 0.05, "height {}", r.descriptors.drape_height);
        assert!(r.max_penetration < 1e-6 * 0.08);
        assert!(r.descriptors.silhouette_radius < 0.15 * 2f64.sqrt());
        let dir = tempfile::tempdir().unwrap();
        r.save_obj(&dir.path().join("drape.obj")).unwrap();
    }
}
