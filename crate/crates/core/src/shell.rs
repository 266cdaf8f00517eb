//! Discrete orthotropic St. Venant-Kirchhoff thin shell on triangle meshes.
//!
//! Membrane strain comes from the per-triangle first fundamental form,
//! bending strain from a second fundamental form built out of averaged
//! mid-edge normals. Material coordinates are flat and their first axis is
//! the weft direction, so index `t` (0) is weft and `p` (1) is warp.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use num_dual::{gradient, hessian, Dual2SVec64, DualNum, DualSVec64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rod::Vec3;
use crate::{Error, Result};

/// Membrane stiffness `S = [[s00, s01, 0], [s01, s11, 0], [0, 0, s22]]` and
/// bending stiffness `B = [[b00, b01/2, 0], [b01/2, b11, 0], [0, 0, b22]]`,
/// both acting on `(tt, pp, tp)` strain triples; the energy scales them by `h`
/// and `h³`. Halving `b01` makes every coefficient multiply the same `½h³`
/// prefactor, so the density reads `½h³(b00 c0² + b11 c1² + b22 c2² + b01 c0 c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellParams {
    pub s00: f64,
    pub s01: f64,
    pub s11: f64,
    pub s22: f64,
    pub b00: f64,
    pub b11: f64,
    pub b22: f64,
    #[serde(default)]
    pub b01: f64,
    /// Shell thickness, m.
    pub h: f64,
}

/// Names of the fitted coefficients, in [`ShellParams::coefficients`] order.
pub const COEFFICIENT_NAMES: [&str; 8] = ["s00", "s01", "s11", "s22", "b00", "b11", "b22", "b01"];

impl ShellParams {
    pub fn validate(&self) -> Result<()> {
        if !self.coefficients().iter().chain([&self.h]).all(|v| v.is_finite()) {
            return Err(Error::InvalidModuli("shell parameters must be finite".into()));
        }
        if !self.membrane_spd() {
            return Err(Error::InvalidModuli(format!(
                "membrane block is not positive definite (s00 {}, s11 {}, s22 {}, s01 {})",
                self.s00, self.s11, self.s22, self.s01
            )));
        }
        if self.b00 < 0.0 || self.b11 < 0.0 || self.b22 < 0.0 {
            return Err(Error::InvalidModuli("bending entries must be non-negative".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidModuli(format!("thickness {} must be positive", self.h)));
        }
        Ok(())
    }

    pub fn membrane_spd(&self) -> bool {
        self.s00 > 0.0 && self.s11 > 0.0 && self.s22 > 0.0 && self.s00 * self.s11 - self.s01 * self.s01 > 0.0
    }

    pub fn membrane_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.s00, self.s01, 0.0, self.s01, self.s11, 0.0, 0.0, 0.0, self.s22)
    }

    pub fn bending_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.b00, 0.5 * self.b01, 0.0, 0.5 * self.b01, self.b11, 0.0, 0.0, 0.0, self.b22)
    }

    /// `[s00, s01, s11, s22, b00, b11, b22, b01]`.
    pub fn coefficients(&self) -> [f64; 8] {
        [self.s00, self.s01, self.s11, self.s22, self.b00, self.b11, self.b22, self.b01]
    }

    pub fn from_coefficients(c: &[f64; 8], h: f64) -> Self {
        Self { s00: c[0], s01: c[1], s11: c[2], s22: c[3], b00: c[4], b11: c[5], b22: c[6], b01: c[7], h }
    }

    /// Every stiffness entry multiplied by `factor`, thickness unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_coefficients(&self.coefficients().map(|c| c * factor), self.h)
    }

    /// The same sheet with weft and warp roles exchanged.
    pub fn swap_axes(&self) -> Self {
        Self { s00: self.s11, s11: self.s00, b00: self.b11, b11: self.b00, ..*self }
    }
}

/// Engineering constants of an orthotropic sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthotropicModuli {
    pub e_t: f64,
    pub e_p: f64,
    pub nu_tp: f64,
    pub nu_pt: f64,
    pub mu: f64,
}

/// Membrane stiffness from Young's moduli, Poisson ratios and shear modulus.
pub fn stiffness_from_moduli(m: &OrthotropicModuli) -> Result<Matrix3<f64>> {
    let d = 1.0 - m.nu_tp * m.nu_pt;
    if !(d > 0.0) {
        return Err(Error::InvalidModuli(format!("1 - nu_tp nu_pt = {d} must be positive")));
    }
    let (a, b) = (m.nu_pt * m.e_t, m.nu_tp * m.e_p);
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
        return Err(Error::InvalidModuli(format!("reciprocity violated: nu_pt E_t = {a}, nu_tp E_p = {b}")));
    }
    Ok(Matrix3::new(m.e_t, a, 0.0, b, m.e_p, 0.0, 0.0, 0.0, m.mu * d) / d)
}

/// Inverse of [`stiffness_from_moduli`] for a symmetric membrane block.
pub fn moduli_from_stiffness(s: &Matrix3<f64>) -> Result<OrthotropicModuli> {
    let (s00, s01, s11, s22) = (s[(0, 0)], s[(0, 1)], s[(1, 1)], s[(2, 2)]);
    if !(s00 > 0.0 && s11 > 0.0 && s00 * s11 - s01 * s01 > 0.0) {
        return Err(Error::InvalidModuli("membrane block is not positive definite".into()));
    }
    let d = 1.0 - s01 * s01 / (s00 * s11);
    Ok(OrthotropicModuli { e_t: s00 * d, e_p: s11 * d, nu_tp: s01 / s11, nu_pt: s01 / s00, mu: s22 })
}

/// Strain triple `(Ĩ_tt, Ĩ_pp, Ĩ_tp)` of `Ĩ = rest⁻¹(form − rest)`.
pub fn form_strain(form: &Matrix2<f64>, rest: &Matrix2<f64>) -> Result<Vector3<f64>> {
    let inv = rest
        .try_inverse()
        .filter(|_| rest.determinant().abs() > 0.0)
        .ok_or_else(|| Error::DegenerateElement { element: 0, reason: "singular rest first form".into() })?;
    let d = inv * (form - rest);
    Ok(Vector3::new(d[(0, 0)], d[(1, 1)], d[(0, 1)]))
}

/// `√A (Ĩ_tt, Ĩ_pp, Ĩ_tp)`.
pub fn membrane_constraint(first: &Matrix2<f64>, rest: &Matrix2<f64>, area: f64) -> Result<Vector3<f64>> {
    Ok(form_strain(first, rest)? * area.sqrt())
}

/// `√A` times the strain of `rest⁻¹ second`; the rest second form is zero.
pub fn bending_constraint(second: &Matrix2<f64>, rest_first: &Matrix2<f64>, area: f64) -> Result<Vector3<f64>> {
    Ok(form_strain(&(second + rest_first), rest_first)? * area.sqrt())
}

/// Energy per unit rest area of homogeneous strains.
pub fn energy_density(params: &ShellParams, membrane: &Vector3<f64>, bending: &Vector3<f64>) -> f64 {
    0.5 * params.h * membrane.dot(&(params.membrane_matrix() * membrane))
        + 0.5 * params.h.powi(3) * bending.dot(&(params.bending_matrix() * bending))
}

/// `J = D_s D_m⁻¹` from deformed positions and flat material coordinates.
pub fn deformation_gradient(x: &[Vec3; 3], material: &[Vector2<f64>; 3]) -> Result<SMatrix<f64, 3, 2>> {
    let dm = Matrix2::from_columns(&[material[1] - material[0], material[2] - material[0]]);
    let inv = dm
        .try_inverse()
        .filter(|_| dm.determinant().abs() > 0.0)
        .ok_or_else(|| Error::DegenerateElement { element: 0, reason: "collapsed material triangle".into() })?;
    let ds = SMatrix::<f64, 3, 2>::from_columns(&[x[1] - x[0], x[2] - x[0]]);
    if (x[1] - x[0]).cross(&(x[2] - x[0])).norm() == 0.0 {
        return Err(Error::DegenerateElement { element: 0, reason: "zero-area deformed triangle".into() });
    }
    Ok(ds * inv)
}

/// `𝕀 = JᵀJ`.
pub fn first_form(x: &[Vec3; 3], material: &[Vector2<f64>; 3]) -> Result<Matrix2<f64>> {
    let j = deformation_gradient(x, material)?;
    Ok(j.transpose() * j)
}

/// Discrete second form in material coordinates. `opposite[i]` is the
/// vertex across the edge facing vertex `i`, `None` on a boundary edge.
pub fn second_form(x: &[Vec3; 3], opposite: &[Option<Vec3>; 3], material: &[Vector2<f64>; 3]) -> Result<Matrix2<f64>> {
    let lift = |v: &Vec3| [v.x, v.y, v.z];
    let own = [lift(&x[0]), lift(&x[1]), lift(&x[2])];
    if (x[1] - x[0]).cross(&(x[2] - x[0])).norm() == 0.0 {
        return Err(Error::DegenerateElement { element: 0, reason: "zero-area deformed triangle".into() });
    }
    let opp = opposite.map(|o| o.map(|v| lift(&v)));
    let bary = second_form_bary(&own, &opp);
    let dm = Matrix2::from_columns(&[material[1] - material[0], material[2] - material[0]]);
    let inv = dm
        .try_inverse()
        .ok_or_else(|| Error::DegenerateElement { element: 0, reason: "collapsed material triangle".into() })?;
    let b = Matrix2::new(bary[0][0], bary[0][1], bary[1][0], bary[1][1]);
    Ok(inv.transpose() * b * inv)
}

type V3<D> = [D; 3];

fn sub<D: DualNum<Primitive = f64> + Copy>(a: &V3<D>, b: &V3<D>) -> V3<D> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot<D: DualNum<Primitive = f64> + Copy>(a: &V3<D>, b: &V3<D>) -> D {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<D: DualNum<Primitive = f64> + Copy>(a: &V3<D>, b: &V3<D>) -> V3<D> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit<D: DualNum<Primitive = f64> + Copy>(a: &V3<D>) -> V3<D> {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn add<D: DualNum<Primitive = f64> + Copy>(a: &V3<D>, b: &V3<D>) -> V3<D> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Second form in the edge basis `(x1 − x0, x2 − x0)`: mid-edge normals
/// `n_i` interpolate linearly, so `∂n` along edge `x_j − x_0` is
/// `2(n_0 − n_j)` and `II_ab = −∂_a x · ∂_b n`, symmetrized.
fn second_form_bary<D: DualNum<Primitive = f64> + Copy>(x: &[V3<D>; 3], opposite: &[Option<V3<D>>; 3]) -> [[D; 2]; 2] {
    let face = unit(&cross(&sub(&x[1], &x[0]), &sub(&x[2], &x[0])));
    let mut n = [face; 3];
    for i in 0..3 {
        if let Some(o) = &opposite[i] {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            // the neighbor runs the shared edge as k → j
            let other = unit(&cross(&sub(&x[j], &x[k]), &sub(o, &x[k])));
            n[i] = unit(&add(&face, &other));
        }
    }
    let e1 = sub(&x[1], &x[0]);
    let e2 = sub(&x[2], &x[0]);
    let d1 = sub(&n[1], &n[0]);
    let d2 = sub(&n[2], &n[0]);
    let two = D::from(2.0);
    let off = (dot(&d1, &e2) + dot(&d2, &e1)) * 0.5;
    [[two * dot(&d1, &e1), two * off], [two * off, two * dot(&d2, &e2)]]
}

/// Per-triangle rest data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestElement {
    /// Inverse of the material edge matrix `[M1 − M0, M2 − M0]`.
    pub dm_inv: Matrix2<f64>,
    pub rest_first_form: Matrix2<f64>,
    pub area: f64,
}

/// Indexed triangle mesh with flat material coordinates and a flat rest
/// shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleShellMesh {
    pub rest: Vec<Vec3>,
    pub material: Vec<Vector2<f64>>,
    pub triangles: Vec<[usize; 3]>,
    #[serde(skip)]
    elements: Vec<RestElement>,
    /// Vertex across each edge, indexed like [`second_form`]'s `opposite`.
    #[serde(skip)]
    opposite: Vec<[Option<usize>; 3]>,
}

impl TriangleShellMesh {
    pub fn new(rest: Vec<Vec3>, material: Vec<Vector2<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut mesh = Self { rest, material, triangles, elements: Vec::new(), opposite: Vec::new() };
        mesh.rebuild()?;
        Ok(mesh)
    }

    /// Recompute derived rest data, e.g. after deserialization.
    pub fn rebuild(&mut self) -> Result<()> {
        if self.rest.len() != self.material.len() {
            return Err(Error::invalid("rest positions and material coordinates differ in count"));
        }
        let n = self.rest.len();
        let mut elements = Vec::with_capacity(self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) || tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {t} has invalid vertex indices {tri:?}")));
            }
            let x = tri.map(|v| self.rest[v]);
            let m = tri.map(|v| self.material[v]);
            let with_index = |e: Error| match e {
                Error::DegenerateElement { reason, .. } => Error::DegenerateElement { element: t, reason },
                other => other,
            };
            let j = deformation_gradient(&x, &m).map_err(with_index)?;
            let dm = Matrix2::from_columns(&[m[1] - m[0], m[2] - m[0]]);
            let rest_first_form = j.transpose() * j;
            let area = 0.5 * (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
            if dm.determinant() <= 0.0 {
                return Err(Error::DegenerateElement { element: t, reason: "material triangle is clockwise".into() });
            }
            elements.push(RestElement { dm_inv: dm.try_inverse().unwrap_or_else(Matrix2::zeros), rest_first_form, area });
        }
        let mut edges: std::collections::HashMap<(usize, usize), Vec<(usize, usize)>> = std::collections::HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push((t, i));
            }
        }
        let mut opposite = vec![[None; 3]; self.triangles.len()];
        for (edge, users) in &edges {
            match users.as_slice() {
                [_] => {}
                [(t0, i0), (t1, i1)] => {
                    opposite[*t0][*i0] = Some(self.triangles[*t1][*i1]);
                    opposite[*t1][*i1] = Some(self.triangles[*t0][*i0]);
                }
                _ => return Err(Error::invalid(format!("edge {edge:?} is shared by more than two triangles"))),
            }
        }
        self.elements = elements;
        self.opposite = opposite;
        Ok(())
    }

    /// Flat `width × height` rectangle in the xy-plane split into `nx × ny`
    /// cells of two triangles. Material axes are the mesh axes turned by
    /// `-angle`, so the weft direction makes angle `angle` with the x-axis
    /// of the swatch.
    pub fn rectangle(width: f64, height: f64, nx: usize, ny: usize, angle: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || nx == 0 || ny == 0 {
            return Err(Error::invalid("rectangle needs positive size and resolution"));
        }
        let (s, c) = angle.sin_cos();
        let mut rest = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut material = Vec::with_capacity(rest.capacity());
        for j in 0..=ny {
            for i in 0..=nx {
                let p = Vec3::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64, 0.0);
                rest.push(p);
                material.push(Vector2::new(c * p.x + s * p.y, -s * p.x + c * p.y));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // one diagonal direction throughout: every interior edge then
                // joins a parallelogram pair, which keeps the mid-edge normals
                // second-order accurate
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(rest, material, triangles)
    }

    pub fn vertex_count(&self) -> usize {
        self.rest.len()
    }

    pub fn elements(&self) -> &[RestElement] {
        &self.elements
    }

    pub fn opposite(&self) -> &[[Option<usize>; 3]] {
        &self.opposite
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    /// Rest area lumped to vertices, a third of each adjacent triangle.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.rest.len()];
        for (tri, e) in self.triangles.iter().zip(&self.elements) {
            for &v in tri {
                a[v] += e.area / 3.0;
            }
        }
        a
    }

    /// Vertex indices an element's energy depends on: its own three, then
    /// the opposite vertices (if any).
    pub fn stencil(&self, t: usize) -> [Option<usize>; 6] {
        let tri = self.triangles[t];
        let o = self.opposite[t];
        [Some(tri[0]), Some(tri[1]), Some(tri[2]), o[0], o[1], o[2]]
    }

    pub fn first_forms(&self, x: &[Vec3]) -> Result<Vec<Matrix2<f64>>> {
        self.triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| first_form(&tri.map(|v| x[v]), &tri.map(|v| self.material[v])).map_err(|e| at(e, t)))
            .collect()
    }

    pub fn second_forms(&self, x: &[Vec3]) -> Result<Vec<Matrix2<f64>>> {
        self.triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let opp = self.opposite[t].map(|o| o.map(|v| x[v]));
                second_form(&tri.map(|v| x[v]), &opp, &tri.map(|v| self.material[v])).map_err(|e| at(e, t))
            })
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })?;
        let mut mesh: Self =
            serde_json::from_str(&text).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })?;
        mesh.rebuild()?;
        Ok(mesh)
    }
}

fn at(e: Error, element: usize) -> Error {
    match e {
        Error::DegenerateElement { reason, .. } => Error::DegenerateElement { element, reason },
        other => other,
    }
}

/// Energy of one element over its six-vertex stencil, generic for
/// automatic differentiation. Missing opposite vertices are ignored.
fn element_energy<D: DualNum<Primitive = f64> + Copy>(
    x: &[V3<D>; 6],
    present: [bool; 3],
    rest: &RestElement,
    params: &ShellParams,
) -> D {
    let own = [x[0], x[1], x[2]];
    let e1 = sub(&x[1], &x[0]);
    let e2 = sub(&x[2], &x[0]);
    // first form in the edge basis, then pulled back to material coordinates
    let g = [[dot(&e1, &e1), dot(&e1, &e2)], [dot(&e1, &e2), dot(&e2, &e2)]];
    let opp = [0, 1, 2].map(|i| present[i].then_some(x[3 + i]));
    let b = second_form_bary(&own, &opp);
    let m = rest.dm_inv;
    let pull = |f: &[[D; 2]; 2]| {
        let mut out = [[D::from(0.0); 2]; 2];
        for a in 0..2 {
            for c in 0..2 {
                let mut s = D::from(0.0);
                for i in 0..2 {
                    for j in 0..2 {
                        s += f[i][j] * (m[(i, a)] * m[(j, c)]);
                    }
                }
                out[a][c] = s;
            }
        }
        out
    };
    let first = pull(&g);
    let second = pull(&b);
    let ri = rest.rest_first_form.try_inverse().unwrap_or_else(Matrix2::zeros);
    let rf = rest.rest_first_form;
    let strain = |f: &[[D; 2]; 2], subtract: bool| {
        let mut d = [[D::from(0.0); 2]; 2];
        for a in 0..2 {
            for c in 0..2 {
                d[a][c] = if subtract { f[a][c] - rf[(a, c)] } else { f[a][c] };
            }
        }
        let e = |a: usize, c: usize| d[0][c] * ri[(a, 0)] + d[1][c] * ri[(a, 1)];
        [e(0, 0), e(1, 1), e(0, 1)]
    };
    let cs = strain(&first, true);
    let cb = strain(&second, false);
    let quad = |k: &Matrix3<f64>, v: &[D; 3]| {
        let mut s = D::from(0.0);
        for i in 0..3 {
            for j in 0..3 {
                if k[(i, j)] != 0.0 {
                    s += v[i] * v[j] * k[(i, j)];
                }
            }
        }
        s
    };
    let h = params.h;
    (quad(&params.membrane_matrix(), &cs) * h + quad(&params.bending_matrix(), &cb) * h.powi(3)) * (0.5 * rest.area)
}

fn stencil_positions(mesh: &TriangleShellMesh, x: &[Vec3], t: usize) -> ([Vec3; 6], [bool; 3]) {
    let st = mesh.stencil(t);
    let own = mesh.triangles[t];
    let mut p = [Vec3::zeros(); 6];
    for (k, v) in st.iter().enumerate() {
        p[k] = x[v.unwrap_or(own[0])];
    }
    (p, [st[3].is_some(), st[4].is_some(), st[5].is_some()])
}

fn check_positions(mesh: &TriangleShellMesh, x: &[Vec3]) -> Result<()> {
    if x.len() != mesh.vertex_count() {
        return Err(Error::invalid(format!("{} positions for {} vertices", x.len(), mesh.vertex_count())));
    }
    Ok(())
}

/// Energy, gradient and Hessian of element `t` over its 18 stencil
/// coordinates (see [`TriangleShellMesh::stencil`]).
pub fn element_energy_hessian(
    mesh: &TriangleShellMesh,
    x: &[Vec3],
    params: &ShellParams,
    t: usize,
) -> (f64, SVector<f64, 18>, SMatrix<f64, 18, 18>) {
    let (p, present) = stencil_positions(mesh, x, t);
    let rest = mesh.elements[t];
    let flat = SVector::<f64, 18>::from_fn(|i, _| p[i / 3][i % 3]);
    hessian(
        |v: SVector<Dual2SVec64<18>, 18>| {
            let pts = std::array::from_fn(|k| [v[3 * k], v[3 * k + 1], v[3 * k + 2]]);
            element_energy(&pts, present, &rest, params)
        },
        &flat,
    )
}

fn element_gradient(mesh: &TriangleShellMesh, x: &[Vec3], params: &ShellParams, t: usize) -> (f64, SVector<f64, 18>) {
    let (p, present) = stencil_positions(mesh, x, t);
    let rest = mesh.elements[t];
    let flat = SVector::<f64, 18>::from_fn(|i, _| p[i / 3][i % 3]);
    gradient(
        |v: SVector<DualSVec64<18>, 18>| {
            let pts = std::array::from_fn(|k| [v[3 * k], v[3 * k + 1], v[3 * k + 2]]);
            element_energy(&pts, present, &rest, params)
        },
        &flat,
    )
}

/// Total shell energy `Σ ½C_sᵀ(hS)C_s + ½C_bᵀ(h³B)C_b`, J.
pub fn shell_energy(mesh: &TriangleShellMesh, x: &[Vec3], params: &ShellParams) -> Result<f64> {
    check_positions(mesh, x)?;
    mesh.first_forms(x)?;
    let parts: Vec<f64> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let (p, present) = stencil_positions(mesh, x, t);
            let pts = p.map(|v| [v.x, v.y, v.z]);
            element_energy(&pts, present, &mesh.elements[t], params)
        })
        .collect();
    Ok(parts.iter().sum())
}

/// Gradient of [`shell_energy`] with respect to every vertex position.
pub fn shell_energy_gradient(mesh: &TriangleShellMesh, x: &[Vec3], params: &ShellParams) -> Result<Vec<Vec3>> {
    check_positions(mesh, x)?;
    mesh.first_forms(x)?;
    let parts: Vec<SVector<f64, 18>> =
        (0..mesh.triangles.len()).into_par_iter().map(|t| element_gradient(mesh, x, params, t).1).collect();
    let mut g = vec![Vec3::zeros(); x.len()];
    for (t, part) in parts.iter().enumerate() {
        for (k, v) in mesh.stencil(t).iter().enumerate() {
            if let Some(v) = v {
                g[*v] += Vec3::new(part[3 * k], part[3 * k + 1], part[3 * k + 2]);
            }
        }
    }
    Ok(g)
}

/// Wavefront OBJ with positions and 1-based faces.
pub fn write_obj<W: Write>(positions: &[Vec3], triangles: &[[usize; 3]], mut out: W) -> Result<()> {
    for p in positions {
        writeln!(out, "v {:.12e} {:.12e} {:.12e}", p.x, p.y, p.z)?;
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ShellParams {
        ShellParams { s00: 3e6, s01: 4e5, s11: 2e6, s22: 5e5, b00: 2e6, b11: 1.5e6, b22: 4e5, b01: 1e5, h: 5e-4 }
    }

    fn unit_triangle() -> ([Vec3; 3], [Vector2<f64>; 3]) {
        let m = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)];
        (m.map(|v| Vec3::new(v.x, v.y, 0.0)), m)
    }

    #[test]
    fn first_form_basics() {
        let (x, m) = unit_triangle();
        assert_eq!(first_form(&x, &m).unwrap(), Matrix2::identity());
        let scaled = x.map(|p| p * 1.7);
        assert_relative_eq!(first_form(&scaled, &m).unwrap(), Matrix2::identity() * 1.7 * 1.7, epsilon = 1e-14);
        let flat = [x[0], x[1], x[1] * 2.0];
        assert!(matches!(first_form(&flat, &m), Err(Error::DegenerateElement { .. })));
    }

    proptest! {
        #[test]
        fn first_form_is_rotation_invariant(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in -3.0f64..3.0,
                                          px in -1.0f64..1.0, py in -1.0f64..1.0, qz in -1.0f64..1.0) {
            let x = [Vec3::new(0.1, 0.2, 0.0), Vec3::new(1.0 + px, 0.1, 0.2), Vec3::new(0.3, 1.0 + py, qz)];
            let m = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(0.2, 0.9)];
            let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(ax, ay, az)), angle);
            let moved = x.map(|p| r * p + Vec3::new(3.0, -1.0, 2.0));
            let a = first_form(&x, &m).unwrap();
            let b = first_form(&moved, &m).unwrap();
            prop_assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn constraint_examples() {
        let i = Matrix2::identity();
        assert_eq!(membrane_constraint(&i, &i, 0.5).unwrap(), Vector3::zeros());
        let c = membrane_constraint(&Matrix2::new(1.21, 0.0, 0.0, 1.0), &i, 0.25).unwrap();
        assert_relative_eq!(c, Vector3::new(0.5 * 0.21, 0.0, 0.0), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = Matrix2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let rest = a * a.transpose() + Matrix2::identity() * 0.1;
            let b = Matrix2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let form = b * b.transpose() + Matrix2::identity() * 0.1;
            // explicit 2×2 inverse
            let det = rest[(0, 0)] * rest[(1, 1)] - rest[(0, 1)] * rest[(1, 0)];
            let inv = Matrix2::new(rest[(1, 1)], -rest[(0, 1)], -rest[(1, 0)], rest[(0, 0)]) / det;
            let d = inv * (form - rest);
            let c = membrane_constraint(&form, &rest, 4.0).unwrap();
            assert_relative_eq!(c, Vector3::new(d[(0, 0)], d[(1, 1)], d[(0, 1)]) * 2.0, max_relative = 1e-12);
        }
        assert!(matches!(form_strain(&i, &Matrix2::zeros()), Err(Error::DegenerateElement { .. })));
    }

    #[test]
    fn moduli_conversion() {
        let m = OrthotropicModuli { e_t: 5e6, e_p: 3e6, nu_tp: 0.0, nu_pt: 0.0, mu: 1e6 };
        assert_eq!(stiffness_from_moduli(&m).unwrap(), Matrix3::from_diagonal(&Vector3::new(5e6, 3e6, 1e6)));
        let e = 4e6;
        let iso = OrthotropicModuli { e_t: e, e_p: e, nu_tp: 0.3, nu_pt: 0.3, mu: 1e6 };
        assert_relative_eq!(stiffness_from_moduli(&iso).unwrap()[(0, 1)], 0.3 * e / 0.91, max_relative = 1e-14);
        let ortho = OrthotropicModuli { e_t: 5e6, e_p: 2.5e6, nu_tp: 0.2, nu_pt: 0.1, mu: 7e5 };
        let s = stiffness_from_moduli(&ortho).unwrap();
        assert_relative_eq!(s, s.transpose(), max_relative = 1e-14);
        let back = moduli_from_stiffness(&s).unwrap();
        for (a, b) in [(back.e_t, ortho.e_t), (back.e_p, ortho.e_p), (back.nu_tp, ortho.nu_tp), (back.nu_pt, ortho.nu_pt), (back.mu, ortho.mu)] {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let bad = OrthotropicModuli { nu_pt: 0.3, ..ortho };
        assert!(matches!(stiffness_from_moduli(&bad), Err(Error::InvalidModuli(_))));
        let unstable = OrthotropicModuli { e_t: 1.0, e_p: 1.0, nu_tp: 1.2, nu_pt: 1.2, mu: 1.0 };
        assert!(stiffness_from_moduli(&unstable).is_err());
    }

    #[test]
    fn params_validation() {
        params().validate().unwrap();
        assert!(ShellParams { s01: 3e6, ..params() }.validate().is_err());
        assert!(ShellParams { b11: -1.0, ..params() }.validate().is_err());
        assert!(ShellParams { h: 0.0, ..params() }.validate().is_err());
        let json = r#"{"s00":1,"s01":0,"s11":1,"s22":1,"b00":1,"b11":1,"b22":1,"h":0.001}"#;
        let p: ShellParams = serde_json::from_str(json).unwrap();
        assert_eq!(p.b01, 0.0);
    }

    #[test]
    fn flat_meshes_have_zero_second_form() {
        let mesh = TriangleShellMesh::rectangle(0.03, 0.02, 6, 4, 0.3).unwrap();
        let r = Rotation3::from_euler_angles(0.4, -0.2, 1.1);
        let x: Vec<Vec3> = mesh.rest.iter().map(|p| r * p + Vec3::new(0.1, 0.2, 0.3)).collect();
        for ii in mesh.second_forms(&x).unwrap() {
            assert!(ii.amax() < 1e-8);
        }
        for i in mesh.first_forms(&x).unwrap() {
            assert!((i - Matrix2::identity()).amax() < 1e-12);
        }
    }

    /// Rectangle wrapped isometrically onto a cylinder of radius `r` bending
    /// along the first axis.
    fn cylinder_mesh(r: f64, edge: f64) -> (TriangleShellMesh, Vec<Vec3>) {
        let (w, hgt) = (1.0 * r, 0.5 * r);
        let nx = (w / edge).round() as usize;
        let ny = (hgt / edge).round() as usize;
        let mesh = TriangleShellMesh::rectangle(w, hgt, nx, ny, 0.0).unwrap();
        let x = mesh.rest.iter().map(|p| Vec3::new(r * (p.x / r).sin(), p.y, r * (1.0 - (p.x / r).cos()))).collect();
        (mesh, x)
    }

    fn interior_error(mesh: &TriangleShellMesh, forms: &[Matrix2<f64>], expect: &Matrix2<f64>) -> f64 {
        let scale = expect.amax();
        forms
            .iter()
            .zip(mesh.opposite())
            .filter(|(_, o)| o.iter().all(|v| v.is_some()))
            .map(|(f, _)| (f - expect).amax() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn cylinder_second_form_converges() {
        let r = 0.05;
        let mut errors = Vec::new();
        for div in [10.0, 20.0, 40.0] {
            let (mesh, x) = cylinder_mesh(r, r / div);
            let forms = mesh.second_forms(&x).unwrap();
            errors.push(interior_error(&mesh, &forms, &Matrix2::new(1.0 / r, 0.0, 0.0, 0.0)));
        }
        assert!(errors[1] < 0.02, "{errors:?}");
        assert!(errors[2] <= errors[1] && errors[1] <= errors[0], "{errors:?}");
    }

    #[test]
    fn sphere_second_form_is_umbilic() {
        let r: f64 = 0.05;
        let mut errors = Vec::new();
        for div in [20.0, 40.0] {
            let edge = r / div;
            let n = (0.6f64 * r / edge).round() as usize;
            let mesh = TriangleShellMesh::rectangle(0.6 * r, 0.6 * r, n, n, 0.0).unwrap();
            // azimuthal equidistant map onto the sphere around the patch center
            let c = Vector2::new(0.3 * r, 0.3 * r);
            let x: Vec<Vec3> = mesh
                .rest
                .iter()
                .map(|p| {
                    let d = Vector2::new(p.x, p.y) - c;
                    let s = d.norm();
                    let (dir, th) = if s == 0.0 { (Vector2::zeros(), 0.0) } else { (d / s, s / r) };
                    Vec3::new(c.x + r * th.sin() * dir.x, c.y + r * th.sin() * dir.y, r * (1.0 - th.cos()))
                })
                .collect();
            let firsts = mesh.first_forms(&x).unwrap();
            let seconds = mesh.second_forms(&x).unwrap();
            let err = seconds
                .iter()
                .zip(&firsts)
                .zip(mesh.opposite())
                .filter(|(_, o)| o.iter().all(|v| v.is_some()))
                .map(|((ii, i), _)| (ii - i / r).amax() * r)
                .fold(0.0, f64::max);
            errors.push(err);
        }
        assert!(errors[0] < 0.03, "{errors:?}");
        assert!(errors[1] < errors[0], "{errors:?}");
    }

    #[test]
    fn undeformed_mesh_has_zero_energy() {
        let mesh = TriangleShellMesh::rectangle(0.02, 0.01, 4, 3, 0.7).unwrap();
        assert!(shell_energy(&mesh, &mesh.rest, &params()).unwrap() < 1e-25);
        assert!(shell_energy_gradient(&mesh, &mesh.rest, &params()).unwrap().iter().all(|g| g.norm() < 1e-12));
    }

    #[test]
    fn single_triangle_stretch_matches_hand_evaluation() {
        let (x, m) = unit_triangle();
        let mesh = TriangleShellMesh::new(x.to_vec(), m.to_vec(), vec![[0, 1, 2]]).unwrap();
        let p = ShellParams { s01: 0.0, ..params() };
        let l = 1.1;
        let stretched: Vec<Vec3> = x.iter().map(|v| Vec3::new(l * v.x, v.y, v.z)).collect();
        let tt = l * l - 1.0;
        let expect = 0.5 * p.h * p.s00 * 0.5 * tt * tt;
        assert_relative_eq!(shell_energy(&mesh, &stretched, &p).unwrap(), expect, max_relative = 1e-14);
    }

    fn random_deformation(mesh: &TriangleShellMesh, rng: &mut ChaCha8Rng, amp: f64) -> Vec<Vec3> {
        mesh.rest
            .iter()
            .map(|p| {
                p + Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp))
                    + Vec3::new(0.05 * p.x, -0.03 * p.y, 0.4 * p.x * p.y / 0.02)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mesh = TriangleShellMesh::rectangle(0.02, 0.015, 4, 3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = params();
        for _ in 0..5 {
            let x = random_deformation(&mesh, &mut rng, 5e-4);
            let g = shell_energy_gradient(&mesh, &x, &p).unwrap();
            let gmax = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
            let step = 1e-8;
            for v in 0..x.len() {
                for c in 0..3 {
                    let mut xp = x.clone();
                    xp[v][c] += step;
                    let mut xm = x.clone();
                    xm[v][c] -= step;
                    let fd = (shell_energy(&mesh, &xp, &p).unwrap() - shell_energy(&mesh, &xm, &p).unwrap()) / (2.0 * step);
                    assert!((fd - g[v][c]).abs() < 1e-5 * gmax, "vertex {v} comp {c}: fd {fd} vs {}", g[v][c]);
                }
            }
        }
    }

    #[test]
    fn energy_is_rigid_invariant_and_linear_in_stiffness() {
        let mesh = TriangleShellMesh::rectangle(0.02, 0.015, 5, 4, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_deformation(&mesh, &mut rng, 3e-4);
        let p = params();
        let e = shell_energy(&mesh, &x, &p).unwrap();
        assert!(e > 0.0);
        let r = Rotation3::from_euler_angles(1.0, 0.3, -0.8);
        let moved: Vec<Vec3> = x.iter().map(|v| r * v + Vec3::new(1.0, 2.0, 3.0)).collect();
        assert_relative_eq!(shell_energy(&mesh, &moved, &p).unwrap(), e, max_relative = 1e-9);
        assert_relative_eq!(shell_energy(&mesh, &x, &p.scaled(2.0)).unwrap(), 2.0 * e, max_relative = 1e-14);
        let (eh, gh, hh) = element_energy_hessian(&mesh, &x, &p, 7);
        let (eg, gg) = element_gradient(&mesh, &x, &p, 7);
        assert_relative_eq!(eh, eg, max_relative = 1e-14);
        assert!((gh - gg).amax() <= 1e-12 * gg.amax());
        assert!((hh - hh.transpose()).amax() <= 1e-10 * hh.amax());
    }

    #[test]
    fn mesh_rejects_bad_input_and_round_trips() {
        let (x, m) = unit_triangle();
        assert!(TriangleShellMesh::new(x.to_vec(), m.to_vec(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleShellMesh::new(x.to_vec(), m.to_vec(), vec![[0, 2, 1]]).is_err());
        let mesh = TriangleShellMesh::rectangle(0.02, 0.01, 3, 2, 0.25).unwrap();
        assert_relative_eq!(mesh.total_area(), 2e-4, max_relative = 1e-12);
        assert_relative_eq!(mesh.vertex_areas().iter().sum::<f64>(), 2e-4, max_relative = 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.json");
        mesh.save_json(&path).unwrap();
        assert_eq!(TriangleShellMesh::load_json(&path).unwrap(), mesh);
        let mut obj = Vec::new();
        write_obj(&mesh.rest, &mesh.triangles, &mut obj).unwrap();
        let text = String::from_utf8(obj).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 12);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 12);
    }
}
