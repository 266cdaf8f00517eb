//! Periodic yarn patches as quasi-static problems: relaxation and
//! constrained minimization under homogenization constraints.

use nalgebra::{DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::dual::{bend_twist_block, stretch_shear_block, twist_block};
use super::{solve, Linearization, Problem, Row, RowKind, SolveReport, SolverConfig};
use crate::contact::{contact_between, detect_contacts, Contact, ContactTopology, DEFAULT_MARGIN_FACTOR};
use crate::pattern::{FlatTiling, MaterialSpec, PatternClass, Seam, Tiling, YarnPattern};
use crate::rod::{
    biphasic_modulus, rod_stiffness, rotate_frame, yarn_energy, FrameCoupling, FrameRef, Quat, RodState, StiffnessTable,
    Vec3, YarnRod,
};
use crate::{Error, Result};

/// Young's modulus as a function of axial strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusLaw {
    Constant { youngs: f64 },
    /// `|biphasic(ε)|`, never below `floor`; bending and twist use `floor`.
    Biphasic { k1: f64, k2: f64, floor: f64 },
}

impl ModulusLaw {
    pub fn stretch_modulus(&self, strain: f64) -> f64 {
        match *self {
            ModulusLaw::Constant { youngs } => youngs,
            ModulusLaw::Biphasic { k1, k2, floor } => biphasic_modulus(strain, k1, k2).abs().max(floor),
        }
    }

    pub fn bend_modulus(&self) -> f64 {
        match *self {
            ModulusLaw::Constant { youngs } => youngs,
            ModulusLaw::Biphasic { floor, .. } => floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodMaterial {
    pub law: ModulusLaw,
    pub poisson: f64,
    pub radius: f64,
}

impl RodMaterial {
    pub fn from_spec(spec: &MaterialSpec, radius: f64) -> Self {
        RodMaterial {
            law: ModulusLaw::Biphasic { k1: spec.k1, k2: spec.k2, floor: spec.reference_modulus() },
            poisson: spec.poisson,
            radius,
        }
    }

    fn shear(&self, youngs: f64) -> f64 {
        youngs / (2.0 * (1.0 + self.poisson))
    }

    /// Stretch modulus of every edge at its current axial strain.
    pub fn edge_moduli(&self, state: &RodState) -> Vec<Vec<f64>> {
        state
            .yarns
            .iter()
            .map(|y| {
                y.points
                    .windows(2)
                    .zip(&y.rest_lengths)
                    .map(|(w, l0)| self.law.stretch_modulus((w[1] - w[0]).norm() / l0 - 1.0))
                    .collect()
            })
            .collect()
    }

    /// Stiffness evaluated at the current axial strains.
    pub fn stiffness_table(&self, state: &RodState) -> Result<StiffnessTable> {
        self.stiffness_with(state, &self.edge_moduli(state))
    }

    /// Stiffness with the given per-edge stretch moduli.
    pub fn stiffness_with(&self, state: &RodState, moduli: &[Vec<f64>]) -> Result<StiffnessTable> {
        let eb = self.law.bend_modulus();
        let gb = self.shear(eb);
        let r = self.radius;
        let mut edges = Vec::with_capacity(state.yarns.len());
        let mut joints = Vec::with_capacity(state.yarns.len());
        for (y, yarn) in state.yarns.iter().enumerate() {
            let mut e = Vec::with_capacity(yarn.edge_count());
            for (&l0, &ey) in yarn.rest_lengths.iter().zip(&moduli[y]) {
                e.push(rod_stiffness(ey, self.shear(ey), r, l0)?.stretch_shear);
            }
            edges.push(e);
            joints.push(
                (0..yarn.rest_darboux.len())
                    .map(|j| rod_stiffness(eb, gb, r, yarn.joint_length(j)).map(|s| s.bend_twist))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let couplings = state
            .couplings
            .iter()
            .map(|c| rod_stiffness(eb, gb, r, c.rest_length).map(|s| s.bend_twist))
            .collect::<Result<Vec<_>>>()?;
        Ok(StiffnessTable { edges, joints, couplings })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointRef {
    pub yarn: usize,
    pub point: usize,
}

/// Hard row `Σ coefᵀ p − rhs = 0` over point positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub terms: Vec<(PointRef, Vec3)>,
    pub rhs: f64,
    pub scale: f64,
}

impl LinearRow {
    pub fn value(&self, state: &RodState) -> f64 {
        self.terms
            .iter()
            .map(|(p, c)| c.dot(&state.yarns[p.yarn].points[p.point]))
            .sum::<f64>()
            - self.rhs
    }
}

/// Zero-twist rows of one yarn over its internal joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwistRow {
    /// Sum of the twist terms vanishes.
    Sum { yarn: usize },
    /// First and last joint twist agree.
    Ends { yarn: usize },
}

impl TwistRow {
    pub fn value(&self, state: &RodState) -> Result<f64> {
        let twist = |y: usize, j: usize| {
            let f = &state.yarns[y].frames;
            crate::rod::twist_term(&f[j], &f[j + 1])
        };
        match *self {
            TwistRow::Sum { yarn } => (0..state.yarns[yarn].rest_darboux.len()).map(|j| twist(yarn, j)).sum(),
            TwistRow::Ends { yarn } => {
                let last = state.yarns[yarn].rest_darboux.len() - 1;
                Ok(twist(yarn, 0)? - twist(yarn, last)?)
            }
        }
    }
}

/// Unilateral contact rows between yarn edges.
#[derive(Debug, Clone)]
pub struct ContactModel {
    pub topology: ContactTopology,
    /// Minimum centerline distance.
    pub thickness: f64,
    pub margin: f64,
}

impl ContactModel {
    pub fn for_state(state: &RodState, seams: &[Seam], radius: f64, thickness: Option<f64>) -> Self {
        let margin = DEFAULT_MARGIN_FACTOR * radius;
        let min_edge = state
            .yarns
            .iter()
            .flat_map(|y| y.points.windows(2).map(|w| (w[1] - w[0]).norm()))
            .fold(f64::INFINITY, f64::min);
        let thickness = thickness.unwrap_or(2.0 * radius);
        let hops = ContactTopology::hops_for(0.5 * thickness, margin, min_edge);
        let counts = state.yarns.iter().map(|y| y.edge_count()).collect();
        ContactModel { topology: ContactTopology::new(counts, seams.to_vec(), hops), thickness, margin }
    }
}

/// Hard constraints of a patch problem. The compliant rod constraints come
/// from the state and its stiffness.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub linear: Vec<LinearRow>,
    pub twist: Vec<TwistRow>,
    pub contacts: Option<ContactModel>,
}

impl ConstraintSet {
    /// Zero-twist rows for every yarn with enough joints.
    pub fn zero_twist(state: &RodState) -> Vec<TwistRow> {
        let mut rows = Vec::new();
        for (y, yarn) in state.yarns.iter().enumerate() {
            let joints = yarn.rest_darboux.len();
            if joints >= 1 {
                rows.push(TwistRow::Sum { yarn: y });
            }
            if joints >= 2 {
                rows.push(TwistRow::Ends { yarn: y });
            }
        }
        rows
    }
}

/// Rod patch with hard constraints, contacts and a tiling for ghost edges.
pub struct PatchProblem<'a> {
    pub state: RodState,
    material: RodMaterial,
    constraints: &'a ConstraintSet,
    tiling: &'a dyn Tiling,
    stiffness: StiffnessTable,
    moduli: Vec<Vec<f64>>,
    /// Previous lagged and freshly evaluated moduli, for the secant update.
    previous: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    contacts: Vec<Contact>,
    point_offsets: Vec<usize>,
    frame_offsets: Vec<usize>,
    n_dofs: usize,
    length_scale: f64,
    mean_edge: f64,
}

const ROTATION_CAP: f64 = 0.3;

impl<'a> PatchProblem<'a> {
    pub fn new(
        state: RodState,
        material: RodMaterial,
        constraints: &'a ConstraintSet,
        tiling: &'a dyn Tiling,
        length_scale: f64,
    ) -> Result<Self> {
        state.validate()?;
        let mut point_offsets = Vec::with_capacity(state.yarns.len());
        let mut n = 0;
        for y in &state.yarns {
            point_offsets.push(n);
            n += 3 * y.points.len();
        }
        let mut frame_offsets = Vec::with_capacity(state.yarns.len());
        for y in &state.yarns {
            frame_offsets.push(n);
            n += 3 * y.frames.len();
        }
        let edges: usize = state.yarns.iter().map(|y| y.edge_count()).sum();
        let mean_edge = state.total_rest_length() / edges as f64;
        let moduli = material.edge_moduli(&state);
        let stiffness = material.stiffness_with(&state, &moduli)?;
        Ok(Self {
            state,
            material,
            constraints,
            tiling,
            stiffness,
            moduli,
            previous: None,
            contacts: Vec::new(),
            point_offsets,
            frame_offsets,
            n_dofs: n,
            length_scale,
            mean_edge,
        })
    }

    fn pdof(&self, yarn: usize, point: usize) -> usize {
        self.point_offsets[yarn] + 3 * point
    }

    fn fdof(&self, yarn: usize, edge: usize) -> usize {
        self.frame_offsets[yarn] + 3 * edge
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn stiffness(&self) -> &StiffnessTable {
        &self.stiffness
    }

    fn step_cap(&self) -> f64 {
        match &self.constraints.contacts {
            Some(c) => 0.125 * c.thickness,
            None => 0.25 * self.mean_edge,
        }
    }

    fn max_point_move(&self, dx: &DVector<f64>) -> f64 {
        let np = self.frame_offsets.first().copied().unwrap_or(self.n_dofs);
        (0..np / 3)
            .map(|k| Vec3::new(dx[3 * k], dx[3 * k + 1], dx[3 * k + 2]).norm())
            .fold(0.0, f64::max)
    }

    fn max_rotation(&self, dx: &DVector<f64>) -> f64 {
        let np = self.frame_offsets.first().copied().unwrap_or(self.n_dofs);
        (np / 3..self.n_dofs / 3)
            .map(|k| Vec3::new(dx[3 * k], dx[3 * k + 1], dx[3 * k + 2]).norm())
            .fold(0.0, f64::max)
    }

    fn contact_row(&self, c: &Contact, thickness: f64) -> Row {
        let g = self.tiling.ghost(c.offset);
        let nb = g.linear.transpose() * c.normal;
        let mut grad = Vec::with_capacity(12);
        let mut push = |base: usize, v: Vec3| {
            for k in 0..3 {
                grad.push((base + k, v[k]));
            }
        };
        push(self.pdof(c.a.yarn, c.a.edge), c.normal * (1.0 - c.s));
        push(self.pdof(c.a.yarn, c.a.edge + 1), c.normal * c.s);
        push(self.pdof(c.b.yarn, c.b.edge), -nb * (1.0 - c.t));
        push(self.pdof(c.b.yarn, c.b.edge + 1), -nb * c.t);
        let off = CONTACT_OFFSET_CODES.iter().position(|&o| o == c.offset).unwrap_or(7) as u64;
        let key = (1u64 << 63) | ((c.a.yarn as u64) << 48) | ((c.a.edge as u64) << 34) | ((c.b.yarn as u64) << 20) | ((c.b.edge as u64) << 6) | off;
        Row { kind: RowKind::Unilateral, value: c.distance - thickness, grad, hess: Vec::new(), scale: self.length_scale, key }
    }

    fn twist_rows(&self, row: &TwistRow) -> Result<(f64, Vec<(usize, f64)>, Vec<(usize, usize, f64)>)> {
        let yarn = match *row {
            TwistRow::Sum { yarn } | TwistRow::Ends { yarn } => yarn,
        };
        let frames = &self.state.yarns[yarn].frames;
        let joints: Vec<(usize, f64)> = match *row {
            TwistRow::Sum { .. } => (0..frames.len() - 1).map(|j| (j, 1.0)).collect(),
            TwistRow::Ends { .. } => vec![(0, 1.0), (frames.len() - 2, -1.0)],
        };
        let mut value = 0.0;
        let mut grad = Vec::new();
        let mut hess = Vec::new();
        for (j, sign) in joints {
            crate::rod::twist_term(&frames[j], &frames[j + 1])?;
            let (v, g, h) = twist_block(&frames[j], &frames[j + 1]);
            value += sign * v;
            let dofs = dof_list::<6>(&[self.fdof(yarn, j), self.fdof(yarn, j + 1)]);
            for a in 0..6 {
                grad.push((dofs[a], sign * g[a]));
                for b in 0..6 {
                    hess.push((dofs[a], dofs[b], sign * h[(a, b)]));
                }
            }
        }
        Ok((value, grad, hess))
    }
}

const CONTACT_OFFSET_CODES: [(i32, i32); 5] = crate::contact::CONTACT_OFFSETS;

fn dof_list<const N: usize>(bases: &[usize]) -> [usize; N] {
    let mut out = [0; N];
    for (b, &base) in bases.iter().enumerate() {
        for k in 0..3 {
            out[3 * b + k] = base + k;
        }
    }
    out
}

fn scatter<const N: usize>(
    dofs: &[usize; N],
    g: &SVector<f64, N>,
    h: &SMatrix<f64, N, N>,
    gradient: &mut DVector<f64>,
    hessian: &mut Vec<(usize, usize, f64)>,
) {
    for a in 0..N {
        gradient[dofs[a]] += g[a];
        for b in 0..N {
            let v = h[(a, b)];
            if v != 0.0 {
                hessian.push((dofs[a], dofs[b], v));
            }
        }
    }
}

impl Problem for PatchProblem<'_> {
    type Snapshot = RodState;

    fn dof_count(&self) -> usize {
        self.n_dofs
    }

    fn begin_outer(&mut self) -> Result<f64> {
        // Lagged moduli follow the fixed point `E = E(ε(E))`. Plain
        // substitution is a period-two map when `E ∝ |ε|`, so each edge takes
        // a secant step on `E(ε(E)) − E`, starting from averaging.
        let fresh = self.material.edge_moduli(&self.state);
        let mut change: f64 = 0.0;
        let mut next = self.moduli.clone();
        for y in 0..next.len() {
            for e in 0..next[y].len() {
                let (cur, f) = (self.moduli[y][e], fresh[y][e]);
                change = change.max((f - cur).abs() / f);
                let mut omega = 0.5;
                if let Some((pe, pf)) = &self.previous {
                    let de = cur - pe[y][e];
                    if de.abs() > 1e-12 * cur {
                        let slope = (f - pf[y][e]) / de;
                        if slope < 1.0 {
                            omega = (1.0 / (1.0 - slope)).clamp(0.1, 10.0);
                        }
                    }
                }
                next[y][e] = (cur + omega * (f - cur)).max(f64::MIN_POSITIVE);
            }
        }
        self.previous = Some((std::mem::replace(&mut self.moduli, next), fresh));
        self.stiffness = self.material.stiffness_with(&self.state, &self.moduli)?;
        if let Some(model) = &self.constraints.contacts {
            let positions: Vec<Vec<Vec3>> = self.state.yarns.iter().map(|y| y.points.clone()).collect();
            self.contacts = detect_contacts(&positions, &model.topology, self.tiling, 0.5 * model.thickness, model.margin);
        }
        Ok(change)
    }

    fn energy(&self) -> Result<f64> {
        yarn_energy(&self.state, &self.stiffness)
    }

    fn consistent_energy(&mut self) -> Result<f64> {
        self.moduli = self.material.edge_moduli(&self.state);
        self.previous = None;
        self.stiffness = self.material.stiffness_with(&self.state, &self.moduli)?;
        yarn_energy(&self.state, &self.stiffness)
    }

    fn linearize(&self) -> Result<Linearization> {
        let mut gradient = DVector::zeros(self.n_dofs);
        let mut hessian = Vec::new();
        let mut energy = 0.0;
        for (y, yarn) in self.state.yarns.iter().enumerate() {
            for e in 0..yarn.edge_count() {
                let (v, g, h) = stretch_shear_block(
                    &yarn.points[e],
                    &yarn.points[e + 1],
                    &yarn.frames[e],
                    yarn.rest_lengths[e],
                    &self.stiffness.edges[y][e],
                );
                energy += v;
                let dofs = dof_list::<9>(&[self.pdof(y, e), self.pdof(y, e + 1), self.fdof(y, e)]);
                scatter(&dofs, &g, &h, &mut gradient, &mut hessian);
            }
            for j in 0..yarn.rest_darboux.len() {
                crate::rod::darboux(&yarn.frames[j], &yarn.frames[j + 1], 1.0)?;
                let (v, g, h) = bend_twist_block(
                    &yarn.frames[j],
                    &yarn.frames[j + 1],
                    yarn.joint_length(j),
                    &yarn.rest_darboux[j],
                    &self.stiffness.joints[y][j],
                );
                energy += v;
                let dofs = dof_list::<6>(&[self.fdof(y, j), self.fdof(y, j + 1)]);
                scatter(&dofs, &g, &h, &mut gradient, &mut hessian);
            }
        }
        for (k, cp) in self.state.couplings.iter().enumerate() {
            let qa = self.state.frame(cp.from);
            let qb = cp.ghost_frame(&self.state);
            crate::rod::darboux(qa, &qb, 1.0)?;
            let (v, g, h) = bend_twist_block(qa, &qb, cp.rest_length, &cp.rest_darboux, &self.stiffness.couplings[k]);
            energy += v;
            let dofs = dof_list::<6>(&[self.fdof(cp.from.yarn, cp.from.edge), self.fdof(cp.to.yarn, cp.to.edge)]);
            scatter(&dofs, &g, &h, &mut gradient, &mut hessian);
        }

        let mut rows = Vec::new();
        for (k, r) in self.constraints.linear.iter().enumerate() {
            let mut grad = Vec::with_capacity(3 * r.terms.len());
            for (p, c) in &r.terms {
                let base = self.pdof(p.yarn, p.point);
                for i in 0..3 {
                    if c[i] != 0.0 {
                        grad.push((base + i, c[i]));
                    }
                }
            }
            rows.push(Row {
                kind: RowKind::Equality,
                value: r.value(&self.state),
                grad,
                hess: Vec::new(),
                scale: r.scale,
                key: k as u64,
            });
        }
        for (k, t) in self.constraints.twist.iter().enumerate() {
            let (value, grad, hess) = self.twist_rows(t)?;
            rows.push(Row { kind: RowKind::Equality, value, grad, hess, scale: 1.0, key: (1 << 40) + k as u64 });
        }
        if let Some(model) = &self.constraints.contacts {
            rows.extend(self.contacts.iter().map(|c| self.contact_row(c, model.thickness)));
        }
        Ok(Linearization { energy, gradient, hessian, rows })
    }

    fn row_values(&self) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = self.constraints.linear.iter().map(|r| r.value(&self.state)).collect();
        for t in &self.constraints.twist {
            out.push(t.value(&self.state)?);
        }
        if let Some(model) = &self.constraints.contacts {
            let positions: Vec<Vec<Vec3>> = self.state.yarns.iter().map(|y| y.points.clone()).collect();
            for c in &self.contacts {
                out.push(contact_between(&positions, self.tiling, c.a, c.b, c.offset).distance - model.thickness);
            }
        }
        Ok(out)
    }

    fn apply_step(&mut self, dx: &DVector<f64>) {
        for y in 0..self.state.yarns.len() {
            let (po, fo) = (self.point_offsets[y], self.frame_offsets[y]);
            let yarn = &mut self.state.yarns[y];
            for (i, p) in yarn.points.iter_mut().enumerate() {
                *p += Vec3::new(dx[po + 3 * i], dx[po + 3 * i + 1], dx[po + 3 * i + 2]);
            }
            for (e, q) in yarn.frames.iter_mut().enumerate() {
                *q = rotate_frame(q, &Vec3::new(dx[fo + 3 * e], dx[fo + 3 * e + 1], dx[fo + 3 * e + 2]));
            }
        }
    }

    fn step_limit(&self, dx: &DVector<f64>) -> f64 {
        let p = self.max_point_move(dx);
        let r = self.max_rotation(dx);
        let mut f: f64 = 1.0;
        if p > self.step_cap() {
            f = f.min(self.step_cap() / p);
        }
        if r > ROTATION_CAP {
            f = f.min(ROTATION_CAP / r);
        }
        f
    }

    fn step_norm(&self, dx: &DVector<f64>) -> f64 {
        self.max_point_move(dx)
    }

    fn snapshot(&self) -> RodState {
        self.state.clone()
    }

    fn restore(&mut self, snapshot: RodState) {
        self.state = snapshot;
    }
}

/// Axial strain `|Δp|/l0 − 1` of every edge.
pub fn axial_strains(state: &RodState) -> Vec<Vec<f64>> {
    state
        .yarns
        .iter()
        .map(|y| y.points.windows(2).zip(&y.rest_lengths).map(|(w, l)| (w[1] - w[0]).norm() / l - 1.0).collect())
        .collect()
}

/// Bend-twist couplings across seams, one per seam in order, with zero rest
/// curvature.
pub fn seam_couplings(state: &RodState, seams: &[Seam]) -> Vec<FrameCoupling> {
    seams
        .iter()
        .map(|s| {
            let last = state.yarns[s.end_yarn].edge_count() - 1;
            let la = state.yarns[s.end_yarn].rest_lengths[last];
            let lb = state.yarns[s.start_yarn].rest_lengths[0];
            FrameCoupling {
                from: FrameRef { yarn: s.end_yarn, edge: last },
                to: FrameRef { yarn: s.start_yarn, edge: 0 },
                rest_length: 0.5 * (la + lb),
                rest_darboux: Vec3::zeros(),
                to_rotation: Quat::identity(),
            }
        })
        .collect()
}

fn seam_tie_rows(state: &RodState, seams: &[Seam], period: (f64, f64), scale: f64) -> Vec<LinearRow> {
    let mut rows = Vec::new();
    for s in seams {
        let last = state.yarns[s.end_yarn].points.len() - 1;
        let t = [s.offset.0 as f64 * period.0, s.offset.1 as f64 * period.1, 0.0];
        for c in 0..3 {
            let e = Vec3::ith(c, 1.0);
            rows.push(LinearRow {
                terms: vec![
                    (PointRef { yarn: s.end_yarn, point: last }, e),
                    (PointRef { yarn: s.start_yarn, point: 0 }, -e),
                ],
                rhs: t[c],
                scale,
            });
        }
    }
    rows
}

fn centroid_rows(state: &RodState, scale: f64) -> Vec<LinearRow> {
    let n = state.point_count() as f64;
    let centroid: Vec3 = state.yarns.iter().flat_map(|y| y.points.iter()).sum::<Vec3>() / n;
    (0..3)
        .map(|c| {
            let e = Vec3::ith(c, 1.0 / n);
            LinearRow {
                terms: state
                    .yarns
                    .iter()
                    .enumerate()
                    .flat_map(|(y, yarn)| (0..yarn.points.len()).map(move |point| (PointRef { yarn: y, point }, e)))
                    .collect(),
                rhs: centroid[c],
                scale,
            }
        })
        .collect()
}

/// Relaxed patch: `relaxed` keeps the shrunk rest quantities used in the
/// relaxation, `rest` has them reset to the relaxed geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedPatch {
    pub period: (f64, f64),
    pub seams: Vec<Seam>,
    pub pattern_class: PatternClass,
    pub radius: f64,
    pub shrink_factor: f64,
    pub material: RodMaterial,
    pub relaxed: RodState,
    pub rest: RodState,
    /// Relaxation energy of `relaxed` (J).
    pub energy: f64,
    pub report: SolveReport,
}

impl RelaxedPatch {
    pub fn area(&self) -> f64 {
        self.period.0 * self.period.1
    }

    pub fn length_scale(&self) -> f64 {
        self.period.0.max(self.period.1)
    }
}

/// Minimize a periodic patch held at a fixed period under seam ties, a
/// fixed centroid, zero-twist rows and contacts.
pub fn relax_state(
    state: RodState,
    seams: &[Seam],
    period: (f64, f64),
    material: RodMaterial,
    config: &SolverConfig,
) -> Result<(RodState, SolveReport)> {
    let scale = period.0.max(period.1);
    let constraints = ConstraintSet {
        linear: seam_tie_rows(&state, seams, period, scale)
            .into_iter()
            .chain(centroid_rows(&state, scale))
            .collect(),
        twist: ConstraintSet::zero_twist(&state),
        contacts: Some(ContactModel::for_state(&state, seams, material.radius, config.contact_thickness)),
    };
    let tiling = FlatTiling { period };
    let mut problem = PatchProblem::new(state, material, &constraints, &tiling, scale)?;
    let report = solve(&mut problem, config)?;
    Ok((problem.state, report))
}

/// Shrink rest lengths by the pattern's shrink factor, drop rest curvature,
/// relax, and reset the rest state to the result.
pub fn relax_patch(pattern: &YarnPattern, spec: &MaterialSpec, radius: f64, config: &SolverConfig) -> Result<RelaxedPatch> {
    spec.validate()?;
    let shrink = spec.shrink_factor_for(pattern.pattern_class);
    let material = RodMaterial { radius, ..RodMaterial::from_spec(spec, radius) };
    relax_pattern_with(pattern, material, shrink, config)
}

pub(crate) fn relax_pattern_with(
    pattern: &YarnPattern,
    material: RodMaterial,
    shrink: f64,
    config: &SolverConfig,
) -> Result<RelaxedPatch> {
    let mut yarns = Vec::with_capacity(pattern.yarns.len());
    for pts in &pattern.yarns {
        let mut y = YarnRod::from_centerline(pts.clone())?;
        for l in &mut y.rest_lengths {
            *l *= shrink;
        }
        yarns.push(y);
    }
    let mut state = RodState { yarns, couplings: Vec::new() };
    state.couplings = seam_couplings(&state, pattern.seams());
    let (relaxed, report) = relax_state(state, pattern.seams(), pattern.period, material, config)?;
    let report = report.into_result()?;
    let mut rest = relaxed.clone();
    rest.reset_rest_to_current()?;
    Ok(RelaxedPatch {
        period: pattern.period,
        seams: pattern.seams().to_vec(),
        pattern_class: pattern.pattern_class,
        radius: material.radius,
        shrink_factor: shrink,
        material,
        energy: report.energy,
        relaxed,
        rest,
        report,
    })
}

/// Copy a periodic state `nx × ny` times, rewiring seams and couplings.
pub fn tile_state(state: &RodState, seams: &[Seam], period: (f64, f64), nx: usize, ny: usize) -> (RodState, Vec<Seam>, (f64, f64)) {
    let ny_yarns = state.yarns.len();
    let copy_index = |a: usize, b: usize| a + nx * b;
    let mut yarns = Vec::with_capacity(ny_yarns * nx * ny);
    for b in 0..ny {
        for a in 0..nx {
            let _ = copy_index(a, b);
            let t = Vec3::new(a as f64 * period.0, b as f64 * period.1, 0.0);
            for y in &state.yarns {
                let mut c = y.clone();
                for p in &mut c.points {
                    *p += t;
                }
                yarns.push(c);
            }
        }
    }
    let remap = |a: usize, b: usize, o: (i32, i32)| {
        let ta = a as i32 + o.0;
        let tb = b as i32 + o.1;
        let (wa, wb) = (ta.rem_euclid(nx as i32), tb.rem_euclid(ny as i32));
        (copy_index(wa as usize, wb as usize), (ta.div_euclid(nx as i32), tb.div_euclid(ny as i32)))
    };
    let mut new_seams = Vec::new();
    let mut couplings = Vec::new();
    for b in 0..ny {
        for a in 0..nx {
            let here = copy_index(a, b);
            for (k, s) in seams.iter().enumerate() {
                let (there, offset) = remap(a, b, s.offset);
                new_seams.push(Seam {
                    end_yarn: here * ny_yarns + s.end_yarn,
                    start_yarn: there * ny_yarns + s.start_yarn,
                    offset,
                });
                if let Some(c) = state.couplings.get(k) {
                    couplings.push(FrameCoupling {
                        from: FrameRef { yarn: here * ny_yarns + c.from.yarn, edge: c.from.edge },
                        to: FrameRef { yarn: there * ny_yarns + c.to.yarn, edge: c.to.edge },
                        ..*c
                    });
                }
            }
        }
    }
    (RodState { yarns, couplings }, new_seams, (nx as f64 * period.0, ny as f64 * period.1))
}

/// Minimize a tiled state under homogenization constraints.
pub fn minimize_with_homogenization(
    state: RodState,
    material: RodMaterial,
    constraints: &ConstraintSet,
    tiling: &dyn Tiling,
    length_scale: f64,
    config: &SolverConfig,
) -> Result<(RodState, f64, SolveReport)> {
    if constraints.linear.is_empty() {
        return Err(Error::invalid("homogenization needs hard fluctuation constraints"));
    }
    let mut problem = PatchProblem::new(state, material, constraints, tiling, length_scale)?;
    let report = solve(&mut problem, config)?;
    let energy = report.energy;
    Ok((problem.state, energy, report))
}
