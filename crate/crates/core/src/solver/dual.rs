//! Rod block energies written over dual numbers for exact derivatives.
//!
//! Frame variables are body-frame rotation increments θ applied as
//! `normalize(q ⊗ (1, θ/2))`, which agrees with `q ⊗ exp(θ)` to second order.

use nalgebra::{SMatrix, SVector};
use num_dual::{hessian, Dual2SVec64, DualNum};

use crate::rod::{Quat, Vec3};

pub(crate) type Block<const N: usize> = (f64, SVector<f64, N>, SMatrix<f64, N, N>);

fn lift<D: DualNum<Primitive = f64>>(q: &Quat) -> [D; 4] {
    [D::from(q.w), D::from(q.i), D::from(q.j), D::from(q.k)]
}

fn qmul<D: DualNum<Primitive = f64> + Copy>(a: [D; 4], b: [D; 4]) -> [D; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn perturbed<D: DualNum<Primitive = f64> + Copy>(q: &Quat, th: [D; 3]) -> [D; 4] {
    let h = [D::one(), th[0] * 0.5, th[1] * 0.5, th[2] * 0.5];
    let u = qmul(lift(q), h);
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] + u[3] * u[3]).sqrt();
    [u[0] / n, u[1] / n, u[2] / n, u[3] / n]
}

fn director3<D: DualNum<Primitive = f64> + Copy>(u: [D; 4]) -> [D; 3] {
    let [w, x, y, z] = u;
    [(x * z + w * y) * 2.0, (y * z - w * x) * 2.0, w * w - x * x - y * y + z * z]
}

fn ratio<D: DualNum<Primitive = f64> + Copy>(a: [D; 4], b: [D; 4]) -> [D; 4] {
    qmul([a[0], -a[1], -a[2], -a[3]], b)
}

/// `½ Σ k_i C_i²` of a stretch-shear constraint; variables `(δp0, δp1, θ)`.
pub(crate) fn stretch_shear_block(p0: &Vec3, p1: &Vec3, q: &Quat, l0: f64, k: &Vec3) -> Block<9> {
    hessian(
        |x: SVector<Dual2SVec64<9>, 9>| {
            let u = perturbed(q, [x[6], x[7], x[8]]);
            let d3 = director3(u);
            let mut e = Dual2SVec64::<9>::from(0.0);
            for i in 0..3 {
                let c = (x[3 + i] - x[i] + (p1[i] - p0[i])) / l0 - d3[i];
                e += c * c * (0.5 * k[i]);
            }
            e
        },
        &SVector::zeros(),
    )
}

/// `½ Σ k_i C_i²` of a bend-twist constraint; variables `(θa, θb)`. `qb`
/// already includes any ghost rotation.
pub(crate) fn bend_twist_block(qa: &Quat, qb: &Quat, l0: f64, rest: &Vec3, k: &Vec3) -> Block<6> {
    hessian(
        |x: SVector<Dual2SVec64<6>, 6>| {
            let r = ratio(perturbed(qa, [x[0], x[1], x[2]]), perturbed(qb, [x[3], x[4], x[5]]));
            let mut e = Dual2SVec64::<6>::from(0.0);
            for i in 0..3 {
                let c = r[i + 1] / r[0] * (2.0 / l0) - rest[i];
                e += c * c * (0.5 * k[i]);
            }
            e
        },
        &SVector::zeros(),
    )
}

/// Twist term `Im₂(conj(a) b) / Re(conj(a) b)`; variables `(θa, θb)`.
pub(crate) fn twist_block(qa: &Quat, qb: &Quat) -> Block<6> {
    hessian(
        |x: SVector<Dual2SVec64<6>, 6>| {
            let r = ratio(perturbed(qa, [x[0], x[1], x[2]]), perturbed(qb, [x[3], x[4], x[5]]));
            r[3] / r[0]
        },
        &SVector::zeros(),
    )
}
