//! Discrete Cosserat rods: centerline points plus one orientation quaternion
//! per edge, with stretch-shear and bend-twist compliant constraints.
//!
//! Quaternion components are ordered `(w, x, y, z)` whenever they appear as a
//! plain 4-vector (Jacobians, gradients). Frames are stored unnormalized in
//! principle but every solver update renormalizes them.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Matrix4x3, Quaternion, RowVector4, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = Quaternion<f64>;

const UNIT_NORM_TOL: f64 = 1e-6;
const SINGULAR_REL_ROTATION: f64 = 1e-6;

/// Quaternion as a `(w, x, y, z)` 4-vector.
pub fn wxyz(q: &Quat) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

pub fn from_wxyz(v: &Vector4<f64>) -> Quat {
    Quat::new(v[0], v[1], v[2], v[3])
}

/// Matrix of left multiplication: `a * b == left_mul(a) * b`.
pub fn left_mul(a: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (a.w, a.i, a.j, a.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Matrix of right multiplication: `a * b == right_mul(b) * a`.
pub fn right_mul(b: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (b.w, b.i, b.j, b.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Derivative of `q * exp(θ/2)` with respect to the body-frame rotation
/// vector θ at θ = 0.
pub fn tangent_basis(q: &Quat) -> Matrix4x3<f64> {
    left_mul(q).fixed_columns::<3>(1).into_owned() * 0.5
}

/// Apply a body-frame rotation vector to a frame and renormalize.
pub fn rotate_frame(q: &Quat, theta: &Vec3) -> Quat {
    let dq = UnitQuaternion::from_scaled_axis(*theta);
    (q * dq.into_inner()).normalize()
}

fn check_unit(q: &Quat) -> Result<()> {
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
    }
    Ok(())
}

/// Rotation matrix with the frame directors `(d1, d2, d3)` as columns.
pub fn rotation_from_quaternion(q: &Quat) -> Result<Matrix3<f64>> {
    check_unit(q)?;
    Ok(rotation_unchecked(q))
}

/// `R(q) = 2 v vᵀ + (w² − vᵀv) I + 2 w [v]×`, without the unit-norm check.
pub fn rotation_unchecked(q: &Quat) -> Matrix3<f64> {
    let v = Vec3::new(q.i, q.j, q.k);
    let w = q.w;
    2.0 * v * v.transpose() + Matrix3::identity() * (w * w - v.dot(&v)) + 2.0 * w * v.cross_matrix()
}

/// Third director `R(q) ê3`.
pub fn director3(q: &Quat) -> Vec3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Vec3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w * w - x * x - y * y + z * z)
}

/// Jacobian of [`director3`] with respect to `(w, x, y, z)`.
pub fn director3_jacobian(q: &Quat) -> Matrix3x4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    2.0 * Matrix3x4::new(
        y, z, w, x, //
        -x, -w, z, y, //
        w, -x, -y, z,
    )
}

/// Stretch-shear constraint `(p_next − p)/l0 − d3(q)`.
pub fn stretch_shear_constraint(p: &Vec3, p_next: &Vec3, q: &Quat, l0: f64) -> Result<Vec3> {
    if !(l0 > 0.0) {
        return Err(Error::invalid(format!("rest length {l0} must be positive")));
    }
    check_unit(q)?;
    Ok((p_next - p) / l0 - director3(q))
}

/// Stretch-shear value with its Jacobians. `d_p_next = −d_p = I / l0`.
#[derive(Debug, Clone, Copy)]
pub struct StretchShearLinearization {
    pub value: Vec3,
    pub inv_l0: f64,
    pub d_q: Matrix3x4<f64>,
}

pub fn stretch_shear_linearized(p: &Vec3, p_next: &Vec3, q: &Quat, l0: f64) -> StretchShearLinearization {
    StretchShearLinearization {
        value: (p_next - p) / l0 - director3(q),
        inv_l0: 1.0 / l0,
        d_q: -director3_jacobian(q),
    }
}

/// `conj(a) * b`.
pub fn relative_rotation(a: &Quat, b: &Quat) -> Quat {
    a.conjugate() * b
}

fn relative_checked(a: &Quat, b: &Quat) -> Result<Quat> {
    let r = relative_rotation(a, b);
    if r.w.abs() < SINGULAR_REL_ROTATION * a.norm() * b.norm() {
        return Err(Error::SingularConfiguration(format!(
            "relative rotation between adjacent frames is near 180 degrees (Re = {:.3e})",
            r.w
        )));
    }
    Ok(r)
}

/// Modified Darboux vector `(2/l0) Im(conj(a) b) / Re(conj(a) b)`.
pub fn darboux(a: &Quat, b: &Quat, l0: f64) -> Result<Vec3> {
    let r = relative_checked(a, b)?;
    Ok(Vec3::new(r.i, r.j, r.k) * (2.0 / (l0 * r.w)))
}

/// Bend-twist constraint `Ψ − Ψ⁰`. Components 0 and 1 measure bending,
/// component 2 measures twist.
pub fn bend_twist_constraint(a: &Quat, b: &Quat, l0: f64, rest_darboux: &Vec3) -> Result<Vec3> {
    if !(l0 > 0.0) {
        return Err(Error::invalid(format!("rest length {l0} must be positive")));
    }
    check_unit(a)?;
    check_unit(b)?;
    Ok(darboux(a, b, l0)? - rest_darboux)
}

#[derive(Debug, Clone, Copy)]
pub struct BendTwistLinearization {
    pub value: Vec3,
    pub d_a: Matrix3x4<f64>,
    pub d_b: Matrix3x4<f64>,
}

/// Jacobians of `s · Im(r)/Re(r)` with `r = conj(a) b`.
fn ratio_jacobians(a: &Quat, b: &Quat, r: &Quat, s: f64) -> (Matrix3x4<f64>, Matrix3x4<f64>) {
    let rv = Vec3::new(r.i, r.j, r.k);
    let mut d_ratio = Matrix3x4::zeros();
    d_ratio.set_column(0, &(-rv * (s / (r.w * r.w))));
    for k in 0..3 {
        d_ratio[(k, k + 1)] = s / r.w;
    }
    let conj_sign = Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0));
    let dr_da = right_mul(b) * conj_sign;
    let dr_db = left_mul(&a.conjugate());
    (d_ratio * dr_da, d_ratio * dr_db)
}

pub fn bend_twist_linearized(a: &Quat, b: &Quat, l0: f64, rest_darboux: &Vec3) -> Result<BendTwistLinearization> {
    let r = relative_checked(a, b)?;
    let s = 2.0 / l0;
    let value = Vec3::new(r.i, r.j, r.k) * (s / r.w) - rest_darboux;
    let (d_a, d_b) = ratio_jacobians(a, b, &r, s);
    Ok(BendTwistLinearization { value, d_a, d_b })
}

/// Twist term `Im₂(conj(a) b) / Re(conj(a) b)` used by the zero-twist constraints.
pub fn twist_term(a: &Quat, b: &Quat) -> Result<f64> {
    let r = relative_checked(a, b)?;
    Ok(r.k / r.w)
}

pub fn twist_term_linearized(a: &Quat, b: &Quat) -> Result<(f64, RowVector4<f64>, RowVector4<f64>)> {
    let r = relative_checked(a, b)?;
    let (d_a, d_b) = ratio_jacobians(a, b, &r, 1.0);
    Ok((r.k / r.w, d_a.row(2).into_owned(), d_b.row(2).into_owned()))
}

/// Diagonal stiffness blocks of one edge (stretch-shear) and one joint
/// (bend-twist), already multiplied by the rest length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodStiffness {
    pub stretch_shear: Vec3,
    pub bend_twist: Vec3,
}

impl RodStiffness {
    pub fn stretch_shear_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.stretch_shear)
    }

    pub fn bend_twist_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.bend_twist)
    }
}

/// Circular cross-section stiffness: `A = πr²`, `I1 = I2 = πr⁴/4`, `I3 = πr⁴/2`.
pub fn rod_stiffness(youngs: f64, shear: f64, radius: f64, l0: f64) -> Result<RodStiffness> {
    for (name, v) in [("E", youngs), ("G", shear), ("r", radius), ("l0", l0)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} = {v} must be positive")));
        }
    }
    let area = std::f64::consts::PI * radius * radius;
    let i1 = std::f64::consts::PI * radius.powi(4) / 4.0;
    let i3 = 2.0 * i1;
    Ok(RodStiffness {
        stretch_shear: Vec3::repeat(youngs * area * l0),
        bend_twist: Vec3::new(youngs * i1, youngs * i1, shear * i3) * l0,
    })
}

/// Strain-proportional yarn modulus: `k1 ε` in compression, `k2 ε` in tension.
pub fn biphasic_modulus(strain: f64, k1: f64, k2: f64) -> f64 {
    if strain < 0.0 {
        k1 * strain
    } else if strain > 0.0 {
        k2 * strain
    } else {
        0.0
    }
}

/// One open polyline yarn: `n` points, `n − 1` edge frames and rest lengths,
/// `n − 2` interior joint rest Darboux vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YarnRod {
    pub points: Vec<Vec3>,
    pub frames: Vec<Quat>,
    pub rest_lengths: Vec<f64>,
    pub rest_darboux: Vec<Vec3>,
}

impl YarnRod {
    /// Straight, untwisted rest state matching the given centerline.
    pub fn from_centerline(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a yarn needs at least two points"));
        }
        let rest_lengths: Vec<f64> = points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        if let Some(i) = rest_lengths.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::invalid(format!("edge {i} has zero length")));
        }
        let frames = frames_from_centerline(&points);
        let rest_darboux = vec![Vec3::zeros(); frames.len() - 1];
        Ok(Self {
            points,
            frames,
            rest_lengths,
            rest_darboux,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Rest length assigned to joint `j` (between edges `j` and `j + 1`).
    pub fn joint_length(&self, j: usize) -> f64 {
        0.5 * (self.rest_lengths[j] + self.rest_lengths[j + 1])
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

/// Reference to one edge frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub yarn: usize,
    pub edge: usize,
}

/// Bend-twist joint between frames of different yarns (or across a periodic
/// seam of the same yarn).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameCoupling {
    pub from: FrameRef,
    pub to: FrameRef,
    pub rest_length: f64,
    pub rest_darboux: Vec3,
    /// Rotation carrying `to` into the tile of `from`; identity for flat tilings.
    #[serde(default = "Quat::identity")]
    pub to_rotation: Quat,
}

impl FrameCoupling {
    /// Frame of `to` as seen from the tile of `from`.
    pub fn ghost_frame(&self, state: &RodState) -> Quat {
        self.to_rotation * state.frame(self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RodState {
    pub yarns: Vec<YarnRod>,
    pub couplings: Vec<FrameCoupling>,
}

impl RodState {
    pub fn validate(&self) -> Result<()> {
        for (y, yarn) in self.yarns.iter().enumerate() {
            let edges = yarn.points.len().saturating_sub(1);
            if edges == 0 {
                return Err(Error::invalid(format!("yarn {y} has no edges")));
            }
            if yarn.frames.len() != edges || yarn.rest_lengths.len() != edges {
                return Err(Error::invalid(format!(
                    "yarn {y}: {} frames and {} rest lengths for {edges} edges",
                    yarn.frames.len(),
                    yarn.rest_lengths.len()
                )));
            }
            if yarn.rest_darboux.len() != edges - 1 {
                return Err(Error::invalid(format!(
                    "yarn {y}: {} rest Darboux vectors for {} joints",
                    yarn.rest_darboux.len(),
                    edges - 1
                )));
            }
            if let Some(i) = yarn.rest_lengths.iter().position(|&l| !(l > 0.0)) {
                return Err(Error::invalid(format!("yarn {y}: rest length {i} not positive")));
            }
        }
        for (c, coupling) in self.couplings.iter().enumerate() {
            for r in [coupling.from, coupling.to] {
                let ok = self.yarns.get(r.yarn).is_some_and(|y| r.edge < y.frames.len());
                if !ok {
                    return Err(Error::invalid(format!("coupling {c} references missing frame {r:?}")));
                }
            }
            if !(coupling.rest_length > 0.0) {
                return Err(Error::invalid(format!("coupling {c} rest length not positive")));
            }
        }
        Ok(())
    }

    pub fn frame(&self, r: FrameRef) -> &Quat {
        &self.yarns[r.yarn].frames[r.edge]
    }

    pub fn point_count(&self) -> usize {
        self.yarns.iter().map(|y| y.points.len()).sum()
    }

    pub fn total_rest_length(&self) -> f64 {
        self.yarns.iter().flat_map(|y| y.rest_lengths.iter()).sum()
    }

    /// Replace rest lengths and rest Darboux vectors with the values of the
    /// current configuration.
    /// Make the current configuration stress free: rest lengths and Darboux
    /// vectors are recomputed, and each frame is turned by the smallest
    /// rotation that aligns its third director with its edge.
    pub fn reset_rest_to_current(&mut self) -> Result<()> {
        for yarn in &mut self.yarns {
            yarn.rest_lengths = yarn.points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
            for (e, q) in yarn.frames.iter_mut().enumerate() {
                let t = (yarn.points[e + 1] - yarn.points[e]) / yarn.rest_lengths[e];
                let turn = rotation_between(&director3(q), &t);
                *q = (turn * UnitQuaternion::new_normalize(*q)).into_inner();
            }
            for j in 0..yarn.rest_darboux.len() {
                let l = 0.5 * (yarn.rest_lengths[j] + yarn.rest_lengths[j + 1]);
                yarn.rest_darboux[j] = darboux(&yarn.frames[j], &yarn.frames[j + 1], l)?;
            }
        }
        for k in 0..self.couplings.len() {
            let c = self.couplings[k];
            let la = self.yarns[c.from.yarn].rest_lengths[c.from.edge];
            let lb = self.yarns[c.to.yarn].rest_lengths[c.to.edge];
            let l = 0.5 * (la + lb);
            let d = darboux(self.frame(c.from), &c.ghost_frame(self), l)?;
            self.couplings[k].rest_length = l;
            self.couplings[k].rest_darboux = d;
        }
        Ok(())
    }
}

/// Per-edge stretch-shear and per-joint bend-twist diagonal stiffness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessTable {
    pub edges: Vec<Vec<Vec3>>,
    pub joints: Vec<Vec<Vec3>>,
    pub couplings: Vec<Vec3>,
}

impl StiffnessTable {
    /// Uniform material: Young's modulus `youngs`, shear modulus `shear`.
    pub fn uniform(state: &RodState, youngs: f64, shear: f64, radius: f64) -> Result<Self> {
        let mut edges = Vec::with_capacity(state.yarns.len());
        let mut joints = Vec::with_capacity(state.yarns.len());
        for yarn in &state.yarns {
            edges.push(
                yarn.rest_lengths
                    .iter()
                    .map(|&l| rod_stiffness(youngs, shear, radius, l).map(|s| s.stretch_shear))
                    .collect::<Result<Vec<_>>>()?,
            );
            joints.push(
                (0..yarn.rest_darboux.len())
                    .map(|j| rod_stiffness(youngs, shear, radius, yarn.joint_length(j)).map(|s| s.bend_twist))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let couplings = state
            .couplings
            .iter()
            .map(|c| rod_stiffness(youngs, shear, radius, c.rest_length).map(|s| s.bend_twist))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { edges, joints, couplings })
    }
}

fn quad(c: &Vec3, k: &Vec3) -> f64 {
    0.5 * c.component_mul(k).dot(c)
}

/// Total rod energy `Σ ½ C_sᵀ α_s⁻¹ C_s + Σ ½ C_bᵀ α_b⁻¹ C_b`.
pub fn yarn_energy(state: &RodState, stiffness: &StiffnessTable) -> Result<f64> {
    let mut energy = 0.0;
    for (y, yarn) in state.yarns.iter().enumerate() {
        for e in 0..yarn.edge_count() {
            let c = (yarn.points[e + 1] - yarn.points[e]) / yarn.rest_lengths[e] - director3(&yarn.frames[e]);
            energy += quad(&c, &stiffness.edges[y][e]);
        }
        for j in 0..yarn.rest_darboux.len() {
            let c = darboux(&yarn.frames[j], &yarn.frames[j + 1], yarn.joint_length(j))? - yarn.rest_darboux[j];
            energy += quad(&c, &stiffness.joints[y][j]);
        }
    }
    for (k, cp) in state.couplings.iter().enumerate() {
        let c = darboux(state.frame(cp.from), &cp.ghost_frame(state), cp.rest_length)? - cp.rest_darboux;
        energy += quad(&c, &stiffness.couplings[k]);
    }
    Ok(energy)
}

/// Gradient of [`yarn_energy`]; frame gradients are `(w, x, y, z)` vectors
/// projected onto the tangent space of the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct YarnGradient {
    pub points: Vec<Vec<Vec3>>,
    pub frames: Vec<Vec<Vector4<f64>>>,
}

pub fn yarn_energy_gradient(state: &RodState, stiffness: &StiffnessTable) -> Result<YarnGradient> {
    let mut points: Vec<Vec<Vec3>> = state.yarns.iter().map(|y| vec![Vec3::zeros(); y.points.len()]).collect();
    let mut frames: Vec<Vec<Vector4<f64>>> =
        state.yarns.iter().map(|y| vec![Vector4::zeros(); y.frames.len()]).collect();
    for (y, yarn) in state.yarns.iter().enumerate() {
        for e in 0..yarn.edge_count() {
            let lin = stretch_shear_linearized(&yarn.points[e], &yarn.points[e + 1], &yarn.frames[e], yarn.rest_lengths[e]);
            let f = lin.value.component_mul(&stiffness.edges[y][e]);
            points[y][e] -= f * lin.inv_l0;
            points[y][e + 1] += f * lin.inv_l0;
            frames[y][e] += lin.d_q.transpose() * f;
        }
        for j in 0..yarn.rest_darboux.len() {
            let lin = bend_twist_linearized(&yarn.frames[j], &yarn.frames[j + 1], yarn.joint_length(j), &yarn.rest_darboux[j])?;
            let f = lin.value.component_mul(&stiffness.joints[y][j]);
            frames[y][j] += lin.d_a.transpose() * f;
            frames[y][j + 1] += lin.d_b.transpose() * f;
        }
    }
    for (k, cp) in state.couplings.iter().enumerate() {
        let lin = bend_twist_linearized(state.frame(cp.from), &cp.ghost_frame(state), cp.rest_length, &cp.rest_darboux)?;
        let f = lin.value.component_mul(&stiffness.couplings[k]);
        frames[cp.from.yarn][cp.from.edge] += lin.d_a.transpose() * f;
        frames[cp.to.yarn][cp.to.edge] += (lin.d_b * left_mul(&cp.to_rotation)).transpose() * f;
    }
    for (y, yarn) in state.yarns.iter().enumerate() {
        for (g, q) in frames[y].iter_mut().zip(&yarn.frames) {
            let qv = wxyz(q);
            *g -= qv * (g.dot(&qv) / qv.norm_squared());
        }
    }
    Ok(YarnGradient { points, frames })
}

/// Parallel-transported edge frames with `d3` along each edge.
pub fn frames_from_centerline(points: &[Vec3]) -> Vec<Quat> {
    let tangents: Vec<Vec3> = points.windows(2).map(|w| (w[1] - w[0]).normalize()).collect();
    let mut frames = Vec::with_capacity(tangents.len());
    let mut current = rotation_between(&Vec3::z(), &tangents[0]);
    frames.push(current.into_inner());
    for t in tangents.windows(2) {
        current = rotation_between(&t[0], &t[1]) * current;
        frames.push(current.into_inner());
    }
    frames
}

fn rotation_between(a: &Vec3, b: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(a, b).unwrap_or_else(|| {
        let axis = if a.x.abs() < 0.9 { a.cross(&Vec3::x()) } else { a.cross(&Vec3::y()) };
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), std::f64::consts::PI)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn axis_angle(axis: Vec3, angle: f64) -> Quat {
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Quat {
        let v = Vector4::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        from_wxyz(&v.normalize())
    }

    #[test]
    fn identity_quaternion_gives_identity_rotation() {
        let r = rotation_from_quaternion(&Quat::identity()).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quat::new((PI / 4.0).cos(), 0.0, 0.0, (PI / 4.0).sin());
        let r = rotation_from_quaternion(&q).unwrap();
        assert_relative_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-15);
        assert_relative_eq!(r * Vec3::y(), -Vec3::x(), epsilon = 1e-15);
        assert_relative_eq!(r * Vec3::z(), Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn random_rotation_is_orthonormal_and_matches_vector_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q = random_unit(&mut rng);
            let r = rotation_from_quaternion(&q).unwrap();
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            assert!(err < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
            // q ê3 q̄ computed with plain quaternion products.
            let rotated = q * Quat::new(0.0, 0.0, 0.0, 1.0) * q.conjugate();
            let oracle = Vec3::new(rotated.i, rotated.j, rotated.k);
            assert_relative_eq!(r * Vec3::z(), oracle, epsilon = 1e-12);
            assert_relative_eq!(director3(&q), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quat::new(1.0, 0.01, 0.0, 0.0);
        assert!(matches!(rotation_from_quaternion(&q), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn stretch_shear_examples() {
        let l0 = 0.3;
        let p = Vec3::zeros();
        let c = stretch_shear_constraint(&p, &Vec3::new(0.0, 0.0, l0), &Quat::identity(), l0).unwrap();
        assert_eq!(c, Vec3::zeros());
        let c = stretch_shear_constraint(&p, &Vec3::new(0.0, 0.0, 2.0 * l0), &Quat::identity(), l0).unwrap();
        assert_relative_eq!(c, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

        // Edge rotated by 90° about x: ê3 -> -ê2.
        let edge = Vec3::new(0.0, -l0, 0.0);
        let tracked = axis_angle(Vec3::x(), PI / 2.0);
        let c = stretch_shear_constraint(&p, &edge, &tracked, l0).unwrap();
        assert!(c.norm() < 1e-15);
        let c = stretch_shear_constraint(&p, &edge, &Quat::identity(), l0).unwrap();
        assert_relative_eq!(c, Vec3::new(0.0, -1.0, -1.0), epsilon = 1e-15);

        assert!(stretch_shear_constraint(&p, &edge, &tracked, 0.0).is_err());
    }

    #[test]
    fn bend_twist_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l0 = 0.2;
        let qi = random_unit(&mut rng);
        let c = bend_twist_constraint(&qi, &qi, l0, &Vec3::zeros()).unwrap();
        assert!(c.norm() < 1e-14);

        for theta in [0.1, 0.7, -1.3] {
            let qn = qi * axis_angle(Vec3::z(), theta);
            let c = bend_twist_constraint(&qi, &qn, l0, &Vec3::zeros()).unwrap();
            let oracle = Vec3::new(0.0, 0.0, 2.0 / l0 * (theta / 2.0).tan());
            assert_relative_eq!(c, oracle, epsilon = 1e-12);
            let psi = darboux(&qi, &qn, l0).unwrap();
            assert!(bend_twist_constraint(&qi, &qn, l0, &psi).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn bend_twist_antisymmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_unit(&mut rng);
            let b = (a * axis_angle(Vec3::new(rng.random(), rng.random(), rng.random()), rng.random_range(-2.0..2.0))).normalize();
            let ab = bend_twist_constraint(&a, &b, 0.5, &Vec3::zeros()).unwrap();
            let ba = bend_twist_constraint(&b, &a, 0.5, &Vec3::zeros()).unwrap();
            assert_relative_eq!(ab, -ba, epsilon = 1e-10 * ab.norm().max(1.0));
        }
    }

    #[test]
    fn half_turn_is_singular() {
        let a = Quat::identity();
        let b = axis_angle(Vec3::x(), PI);
        assert!(matches!(bend_twist_constraint(&a, &b, 1.0, &Vec3::zeros()), Err(Error::SingularConfiguration(_))));
    }

    #[test]
    fn stiffness_examples() {
        let r = (1.0 / PI).sqrt();
        let s = rod_stiffness(1.0, 0.4, r, 1.0).unwrap();
        assert_relative_eq!(s.stretch_shear, Vec3::repeat(1.0), epsilon = 1e-15);

        let nu = 0.3;
        let e = 2.0e9;
        let g = e / (2.0 * (1.0 + nu));
        let s = rod_stiffness(e, g, 1e-3, 0.01).unwrap();
        assert_relative_eq!(s.bend_twist[2] / s.bend_twist[0], 1.0 / (1.0 + nu), epsilon = 1e-12);
        assert_relative_eq!(s.bend_twist[2] / s.bend_twist[0], 0.7692307692307692, epsilon = 1e-12);

        let s2 = rod_stiffness(e, g, 2e-3, 0.01).unwrap();
        assert_relative_eq!(s2.stretch_shear[0] / s.stretch_shear[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(s2.bend_twist[1] / s.bend_twist[1], 16.0, epsilon = 1e-12);

        assert!(rod_stiffness(0.0, g, 1e-3, 0.01).is_err());
        assert!(rod_stiffness(e, g, 1e-3, -1.0).is_err());
    }

    #[test]
    fn biphasic_examples() {
        assert_eq!(biphasic_modulus(0.0, 3e9, 5e9), 0.0);
        assert_relative_eq!(biphasic_modulus(0.1, 3e9, 5e9), 5e8, epsilon = 1e-6);
        assert_relative_eq!(biphasic_modulus(-0.1, 3e9, 5e9), -3e8, epsilon = 1e-6);
    }

    #[test]
    fn biphasic_energy_gradient_scales_with_strain_squared() {
        // Uniaxial: U(ε) = ½ E(ε) A l0 ε² with E frozen at the current strain;
        // the force is the finite difference with E held fixed.
        let (k1, k2, area, l0) = (3e9, 5e9, 1e-8, 1e-3);
        let force = |eps: f64| {
            let e = biphasic_modulus(eps, k1, k2);
            let u = |x: f64| 0.5 * e * area * l0 * x * x;
            let h = 1e-7;
            (u(eps + h) - u(eps - h)) / (2.0 * h)
        };
        let f1 = force(0.05);
        let f2 = force(0.10);
        assert_relative_eq!(f2 / f1, 4.0, epsilon = 1e-6);
        assert_relative_eq!(force(-0.1) / force(-0.05), 4.0, epsilon = 1e-6);
    }

    fn straight_state(n: usize, l: f64) -> RodState {
        let pts = (0..n).map(|i| Vec3::new(i as f64 * l, 0.0, 0.0)).collect();
        RodState {
            yarns: vec![YarnRod::from_centerline(pts).unwrap()],
            couplings: vec![],
        }
    }

    #[test]
    fn rest_state_has_zero_energy_and_gradient() {
        let state = straight_state(6, 0.1);
        let k = StiffnessTable::uniform(&state, 1e6, 4e5, 0.01).unwrap();
        assert!(yarn_energy(&state, &k).unwrap().abs() < 1e-20);
        let g = yarn_energy_gradient(&state, &k).unwrap();
        assert!(g.points[0].iter().all(|v| v.norm() < 1e-9));
        assert!(g.frames[0].iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn uniform_stretch_energy_matches_closed_form() {
        let (e, g, r, l) = (2e6, 8e5, 0.01, 0.1);
        let mut state = straight_state(8, l);
        let lambda = 1.17;
        for p in &mut state.yarns[0].points {
            *p *= lambda;
        }
        let k = StiffnessTable::uniform(&state, e, g, r).unwrap();
        let ea = e * PI * r * r;
        let oracle = 7.0 * 0.5 * ea * l * (lambda - 1.0) * (lambda - 1.0);
        assert_relative_eq!(yarn_energy(&state, &k).unwrap(), oracle, max_relative = 1e-12);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> (RodState, StiffnessTable) {
        let n = 6;
        let mut pts = Vec::new();
        let mut p = Vec3::zeros();
        for _ in 0..n {
            pts.push(p);
            p += Vec3::new(1.0, 0.0, 0.0) + Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        }
        let mut yarn = YarnRod::from_centerline(pts).unwrap();
        for q in &mut yarn.frames {
            let theta = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            *q = rotate_frame(q, &theta);
        }
        for l in &mut yarn.rest_lengths {
            *l *= rng.random_range(0.8..1.2);
        }
        for d in &mut yarn.rest_darboux {
            *d = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        }
        let last = yarn.frames.len() - 1;
        let state = RodState {
            yarns: vec![yarn],
            couplings: vec![FrameCoupling {
                from: FrameRef { yarn: 0, edge: last },
                to: FrameRef { yarn: 0, edge: 0 },
                rest_length: 1.0,
                rest_darboux: Vec3::new(0.05, -0.02, 0.01),
                to_rotation: rotate_frame(&Quat::identity(), &Vec3::new(rng.random_range(-0.3..0.3), 0.2, rng.random_range(-0.3..0.3))),
            }],
        };
        let k = StiffnessTable::uniform(&state, 3.0, 1.2, 0.4).unwrap();
        (state, k)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let (state, k) = random_state(&mut rng);
            let g = yarn_energy_gradient(&state, &k).unwrap();
            let h = 1e-6;
            let mut max_err: f64 = 0.0;
            let mut max_g: f64 = 0.0;
            for i in 0..state.yarns[0].points.len() {
                for c in 0..3 {
                    let mut sp = state.clone();
                    sp.yarns[0].points[i][c] += h;
                    let mut sm = state.clone();
                    sm.yarns[0].points[i][c] -= h;
                    let fd = (yarn_energy(&sp, &k).unwrap() - yarn_energy(&sm, &k).unwrap()) / (2.0 * h);
                    max_err = max_err.max((fd - g.points[0][i][c]).abs());
                    max_g = max_g.max(g.points[0][i][c].abs());
                }
            }
            for i in 0..state.yarns[0].frames.len() {
                for c in 0..4 {
                    let shifted = |s: f64| {
                        let mut st = state.clone();
                        let mut v = wxyz(&st.yarns[0].frames[i]);
                        v[c] += s;
                        st.yarns[0].frames[i] = from_wxyz(&v.normalize());
                        yarn_energy(&st, &k).unwrap()
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    max_err = max_err.max((fd - g.frames[0][i][c]).abs());
                    max_g = max_g.max(g.frames[0][i][c].abs());
                }
            }
            assert!(max_err / max_g < 1e-5, "relative gradient error {}", max_err / max_g);
        }
    }

    #[test]
    fn translation_gives_zero_net_point_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (state, k) = random_state(&mut rng);
        let g = yarn_energy_gradient(&state, &k).unwrap();
        let sum: Vec3 = g.points[0].iter().sum();
        let scale: f64 = g.points[0].iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(sum.norm() < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn energy_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (state, k) = random_state(&mut rng);
            let q0 = random_unit(&mut rng);
            let r0 = rotation_unchecked(&q0);
            let t = Vec3::new(rng.random(), rng.random(), rng.random());
            let mut moved = state.clone();
            for p in &mut moved.yarns[0].points {
                *p = r0 * *p + t;
            }
            for q in &mut moved.yarns[0].frames {
                *q = q0 * *q;
            }
            // the ghost rotation is conjugated along with the tile
            for c in &mut moved.couplings {
                c.to_rotation = q0 * c.to_rotation * q0.conjugate();
            }
            let e0 = yarn_energy(&state, &k).unwrap();
            let e1 = yarn_energy(&moved, &k).unwrap();
            assert!((e1 - e0).abs() <= 1e-9 * e0);
        }
    }

    #[test]
    fn validate_rejects_inconsistent_counts() {
        let mut state = straight_state(4, 0.1);
        state.yarns[0].rest_darboux.push(Vec3::zeros());
        assert!(state.validate().is_err());
        let mut state = straight_state(4, 0.1);
        state.yarns[0].rest_lengths[1] = 0.0;
        assert!(state.validate().is_err());
    }

    #[test]
    fn reset_makes_any_state_stress_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (mut state, k) = random_state(&mut rng);
            assert!(yarn_energy(&state, &k).unwrap() > 1e-6);
            let points = state.yarns[0].points.clone();
            state.reset_rest_to_current().unwrap();
            assert_eq!(state.yarns[0].points, points);
            assert!(yarn_energy(&state, &k).unwrap() < 1e-24);
        }
    }
}
