//! Quasi-static constrained energy minimization.
//!
//! The core is a damped Newton method on the total energy with equality and
//! unilateral hard constraints enforced through a Schur-complement KKT solve
//! and an active set. Each outer iteration refreshes state-dependent data
//! (stiffness, contacts) through [`Problem::begin_outer`] and then takes one
//! globalized step, retrying with larger damping until an exact-penalty merit
//! function decreases.

mod dual;
mod patch;

pub use patch::{
    axial_strains, minimize_with_homogenization, relax_patch, relax_state, seam_couplings, tile_state, ConstraintSet,
    ContactModel, LinearRow, ModulusLaw, PatchProblem, PointRef, RelaxedPatch, RodMaterial, TwistRow,
};

#[cfg(test)]
pub(crate) use patch::relax_pattern_with;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Largest point displacement (m) of a converged step.
    pub position_tol: f64,
    /// Hard residual tolerance relative to each row's scale.
    pub constraint_tol: f64,
    /// Minimum centerline separation; `None` uses twice the yarn radius.
    pub contact_thickness: Option<f64>,
    pub friction: f64,
    /// Initial Levenberg-Marquardt damping, relative to the Hessian diagonal.
    pub damping: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 500,
            max_inner_iters: 50,
            position_tol: 1e-6,
            constraint_tol: 1e-8,
            contact_thickness: None,
            friction: 0.2,
            damping: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config { field: field.into(), reason: reason.into() });
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters", "must be positive");
        }
        if self.max_inner_iters == 0 {
            return bad("max_inner_iters", "must be positive");
        }
        if !(self.position_tol > 0.0) {
            return bad("position_tol", "must be positive");
        }
        if !(self.constraint_tol > 0.0) {
            return bad("constraint_tol", "must be positive");
        }
        if !(self.damping >= 0.0) {
            return bad("damping", "must be non-negative");
        }
        if !(self.friction >= 0.0) {
            return bad("friction", "must be non-negative");
        }
        if let Some(t) = self.contact_thickness {
            if !(t > 0.0) {
                return bad("contact_thickness", "must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Equality,
    /// Feasible when the value is non-negative.
    Unilateral,
}

/// One hard constraint row linearized at the current state.
#[derive(Debug, Clone)]
pub struct Row {
    pub kind: RowKind,
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
    /// Second derivatives, entered into the Lagrangian Hessian for equality rows.
    pub hess: Vec<(usize, usize, f64)>,
    /// Residuals are reported as `value / scale`.
    pub scale: f64,
    /// Stable identity used to warm-start the contact active set.
    pub key: u64,
}

pub struct Linearization {
    pub energy: f64,
    pub gradient: DVector<f64>,
    /// Full symmetric Hessian entries; duplicates are summed.
    pub hessian: Vec<(usize, usize, f64)>,
    pub rows: Vec<Row>,
}

/// A quasi-static minimization problem over a flat vector of increments.
pub trait Problem {
    type Snapshot;

    fn dof_count(&self) -> usize;
    /// Refresh state-dependent data; called once per outer iteration.
    /// Returns the relative change of any lagged model data, zero if none.
    fn begin_outer(&mut self) -> Result<f64>;
    fn energy(&self) -> Result<f64>;
    fn linearize(&self) -> Result<Linearization>;
    /// Current values of the rows returned by the last `linearize`, same order.
    fn row_values(&self) -> Result<Vec<f64>>;
    fn apply_step(&mut self, dx: &DVector<f64>);
    /// Largest factor in `(0, 1]` by which `dx` may be taken.
    fn step_limit(&self, dx: &DVector<f64>) -> f64;
    /// Energy with lagged model data re-evaluated at the current state.
    fn consistent_energy(&mut self) -> Result<f64> {
        self.energy()
    }
    /// Size of a step in length units, compared against `position_tol`.
    fn step_norm(&self, dx: &DVector<f64>) -> f64;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub max_residual: f64,
    pub max_displacement: f64,
    pub damping: f64,
    pub active_constraints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub energy: f64,
    pub max_residual: f64,
    pub last_displacement: f64,
    pub history: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Convergence {
                iterations: self.iterations,
                displacement: self.last_displacement,
                residual: self.max_residual,
            })
        }
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "iteration,energy,max_residual,max_displacement,damping,active_constraints")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{:.17e},{:.6e},{:.6e},{:.3e},{}",
                r.iteration, r.energy, r.max_residual, r.max_displacement, r.damping, r.active_constraints
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)
    }
}

const MU_MIN: f64 = 1e-8;
/// Relative merit increase attributed to rounding.
const MERIT_NOISE: f64 = 1e-11;
/// Second-order corrections tried per step.
const MAX_CORRECTIONS: usize = 3;
/// Largest relative change of lagged stiffness at convergence.
const MODEL_TOL: f64 = 1e-8;
/// Damping at or below which a step is treated as undamped.
const MU_CONVERGED: f64 = 1e-4;
/// Consecutive negligible, heavily damped steps after which a solve is
/// abandoned: the iterate sits at a saddle it cannot leave.
const STALL_ITERS: usize = 25;
const MU_STALLED: f64 = 1e2;

fn violation(rows: &[Row], values: &[f64]) -> f64 {
    rows.iter()
        .zip(values)
        .map(|(r, &v)| match r.kind {
            RowKind::Equality => v.abs(),
            RowKind::Unilateral => (-v).max(0.0),
        })
        .sum()
}

fn max_scaled_residual(rows: &[Row], values: &[f64]) -> f64 {
    rows.iter()
        .zip(values)
        .map(|(r, &v)| match r.kind {
            RowKind::Equality => v.abs() / r.scale,
            RowKind::Unilateral => (-v).max(0.0) / r.scale,
        })
        .fold(0.0, f64::max)
}

struct Factored {
    chol: CscCholesky<f64>,
}

impl Factored {
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

/// Symmetric matrix whose diagonal can be shifted cheaply.
struct ShiftableMatrix {
    csc: CscMatrix<f64>,
    base: Vec<f64>,
    diag_pos: Vec<usize>,
    diag: Vec<f64>,
}

impl ShiftableMatrix {
    fn new(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 0.0);
        }
        for &(i, j, v) in triplets {
            coo.push(i, j, v);
        }
        let csc = CscMatrix::from(&coo);
        let mut diag_pos = vec![0; n];
        let mut diag = vec![0.0; n];
        let (offsets, rows, values) = (csc.col_offsets(), csc.row_indices(), csc.values());
        for j in 0..n {
            for p in offsets[j]..offsets[j + 1] {
                if rows[p] == j {
                    diag_pos[j] = p;
                    diag[j] = values[p];
                }
            }
        }
        let base = values.to_vec();
        Self { csc, base, diag_pos, diag }
    }

    fn factor_shifted(&mut self, mu: f64) -> Option<Factored> {
        let dmax = self.diag.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        let floor = 1e-12 * dmax.max(f64::MIN_POSITIVE);
        let values = self.csc.values_mut();
        values.copy_from_slice(&self.base);
        for (j, &p) in self.diag_pos.iter().enumerate() {
            values[p] += mu * self.diag[j].abs().max(floor) + floor * 1e-3;
        }
        CscCholesky::factor(&self.csc).ok().map(|chol| Factored { chol })
    }
}

struct QpSolution {
    dx: DVector<f64>,
    lambda: Vec<f64>,
    active: Vec<bool>,
}

/// Solve `S x = r` after symmetric Jacobi scaling. The small diagonal shift
/// tolerates redundant rows; one refinement pass restores accuracy.
fn solve_schur(s: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let k = s.nrows();
    let smax = (0..k).map(|a| s[(a, a)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let d = DVector::from_fn(k, |a, _| 1.0 / s[(a, a)].abs().max(1e-300 * smax).sqrt());
    let mut scaled = DMatrix::from_fn(k, k, |a, b| d[a] * s[(a, b)] * d[b]);
    for a in 0..k {
        scaled[(a, a)] += 1e-13;
    }
    let lu = scaled.lu();
    let singular = || Error::SingularConfiguration("hard constraint system is singular".into());
    let mut x = lu.solve(&rhs.component_mul(&d)).ok_or_else(singular)?.component_mul(&d);
    let r = rhs - s * &x;
    x += lu.solve(&r.component_mul(&d)).ok_or_else(singular)?.component_mul(&d);
    Ok(x)
}

/// Factored KKT data shared by the step and its corrections.
struct QpSystem<'a> {
    h: &'a Factored,
    rows: &'a [Row],
    jt: DMatrix<f64>,
    y: DMatrix<f64>,
    s_all: DMatrix<f64>,
}

impl<'a> QpSystem<'a> {
    fn new(h: &'a Factored, rows: &'a [Row], n: usize) -> Self {
        let m = rows.len();
        let mut jt = DMatrix::zeros(n, m);
        for (k, r) in rows.iter().enumerate() {
            for &(i, v) in &r.grad {
                jt[(i, k)] += v;
            }
        }
        let (y, s_all) = if m == 0 {
            (DMatrix::zeros(n, 0), DMatrix::zeros(0, 0))
        } else {
            let y = h.solve(&jt);
            let s_all = jt.transpose() * &y;
            (y, s_all)
        };
        Self { h, rows, jt, y, s_all }
    }

    /// Minimize `½ dxᵀ H dx + gᵀ dx` subject to `c + J dx = 0` on equality
    /// rows and `c + J dx ≥ 0` on active unilateral rows, by a primal active
    /// set. `g = None` stands for a zero gradient.
    fn solve(&self, g: Option<&DVector<f64>>, values: &[f64], initial_active: &[bool]) -> Result<QpSolution> {
        let n = self.jt.nrows();
        let m = self.rows.len();
        let rows = self.rows;
        let dx0 = match g {
            Some(g) => -self.h.solve(&DMatrix::from_column_slice(n, 1, g.as_slice())).column(0).into_owned(),
            None => DVector::zeros(n),
        };
        if m == 0 {
            return Ok(QpSolution { dx: dx0, lambda: Vec::new(), active: Vec::new() });
        }
        let r0: Vec<f64> = (0..m).map(|k| self.jt.column(k).dot(&dx0) + values[k]).collect();

        // Dual problem: min ½ ωᵀ S ω + ωᵀ r0 with ω ≥ 0 on unilateral rows,
        // dx = dx0 + Y ω. Lawson–Hanson active set; the objective decreases
        // strictly, so the working set never repeats.
        let unilateral = |i: usize| rows[i].kind == RowKind::Unilateral;
        let mut free: Vec<bool> = (0..m).map(|i| !unilateral(i) || initial_active[i]).collect();
        let mut omega = DVector::<f64>::zeros(m);
        let solve_free = |free: &[bool]| -> Result<DVector<f64>> {
            let idx: Vec<usize> = (0..m).filter(|&k| free[k]).collect();
            let mut out = DVector::zeros(m);
            if idx.is_empty() {
                return Ok(out);
            }
            let k = idx.len();
            let s = DMatrix::from_fn(k, k, |a, b| self.s_all[(idx[a], idx[b])]);
            let rhs = DVector::from_iterator(k, idx.iter().map(|&i| -r0[i]));
            let sol = solve_schur(&s, &rhs)?;
            for (a, &i) in idx.iter().enumerate() {
                out[i] = sol[a];
            }
            Ok(out)
        };
        let max_rounds = 6 * m + 20;
        for _ in 0..max_rounds {
            let target = solve_free(&free)?;
            let blocked: Vec<usize> = (0..m).filter(|&i| free[i] && unilateral(i) && target[i] < 0.0).collect();
            if !blocked.is_empty() {
                let mut alpha: f64 = 1.0;
                for &i in &blocked {
                    alpha = alpha.min(omega[i] / (omega[i] - target[i]));
                }
                omega += (&target - &omega) * alpha;
                for i in 0..m {
                    if free[i] && unilateral(i) && omega[i] <= 1e-15 * omega.amax() {
                        omega[i] = 0.0;
                        free[i] = false;
                    }
                }
                continue;
            }
            omega = target;
            let w = &self.s_all * &omega + DVector::from_column_slice(&r0);
            let add = (0..m)
                .filter(|&i| !free[i] && unilateral(i))
                .map(|i| (i, w[i] / rows[i].scale))
                .filter(|&(_, v)| v < -1e-12)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match add {
                Some((i, _)) => free[i] = true,
                None => {
                    let dx = dx0 + &self.y * &omega;
                    let lambda = omega.iter().map(|w| -w).collect();
                    return Ok(QpSolution { dx, lambda, active: free });
                }
            }
        }
        Err(Error::Contact("active-set iteration did not settle".into()))
    }
}

/// Run the outer quasi-static loop to convergence or the iteration cap.
pub fn solve<P: Problem>(problem: &mut P, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let mut mu = config.damping.max(MU_MIN);
    let mut rho: f64 = 0.0;
    let mut eq_lambda: Vec<f64> = Vec::new();
    let mut active_keys: BTreeSet<u64> = BTreeSet::new();
    let mut history = Vec::new();
    let mut last_energy = f64::NAN;
    let mut last_residual = f64::INFINITY;
    let mut last_disp = f64::INFINITY;
    let mut stalled = 0;

    for outer in 0..config.max_outer_iters {
        let model_change = problem.begin_outer()?;
        let lin = problem.linearize()?;
        let values0: Vec<f64> = lin.rows.iter().map(|r| r.value).collect();
        let viol0 = violation(&lin.rows, &values0);

        let mut triplets = lin.hessian.clone();
        let eq_rows: Vec<usize> = (0..lin.rows.len()).filter(|&k| lin.rows[k].kind == RowKind::Equality).collect();
        if eq_lambda.len() == eq_rows.len() {
            for (&k, &l) in eq_rows.iter().zip(&eq_lambda) {
                triplets.extend(lin.rows[k].hess.iter().map(|&(i, j, v)| (i, j, l * v)));
            }
        }
        let mut hmat = ShiftableMatrix::new(problem.dof_count(), &triplets);
        let initial_active: Vec<bool> = lin
            .rows
            .iter()
            .map(|r| r.kind == RowKind::Unilateral && (r.value <= 0.0 || active_keys.contains(&r.key)))
            .collect();

        let mut accepted = None;
        for _ in 0..config.max_inner_iters {
            let Some(fact) = hmat.factor_shifted(mu) else {
                mu = (mu * 10.0).max(1e-8);
                continue;
            };
            let system = QpSystem::new(&fact, &lin.rows, problem.dof_count());
            let qp = system.solve(Some(&lin.gradient), &values0, &initial_active)?;
            let lmax = qp.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
            rho = rho.max(2.0 * lmax);
            let phi0 = lin.energy + rho * viol0;
            let factor = problem.step_limit(&qp.dx);
            let mut dx = &qp.dx * factor;
            let snapshot = problem.snapshot();
            problem.apply_step(&dx);
            let mut trial = problem.energy().and_then(|e| problem.row_values().map(|v| (e, v)));
            // second-order corrections pull nonlinear rows back to feasibility
            for _ in 0..MAX_CORRECTIONS {
                let Ok((_, values1)) = &trial else { break };
                let viol1 = violation(&lin.rows, values1);
                if viol1 <= viol0.max(f64::MIN_POSITIVE) * 1e-3 {
                    break;
                }
                let Ok(corr) = system.solve(None, values1, &qp.active) else { break };
                let before = problem.snapshot();
                problem.apply_step(&corr.dx);
                let next = problem.energy().and_then(|e| problem.row_values().map(|v| (e, v)));
                match next {
                    Ok((e, v)) if violation(&lin.rows, &v) < viol1 => {
                        dx += &corr.dx;
                        trial = Ok((e, v));
                    }
                    _ => {
                        problem.restore(before);
                        break;
                    }
                }
            }
            match trial {
                Ok((e1, values1)) => {
                    let viol1 = violation(&lin.rows, &values1);
                    let phi1 = e1 + rho * viol1;
                    let slack = MERIT_NOISE * (lin.energy.abs() + rho * viol0) + 1e-300;
                    // below the displacement tolerance the merit change is rounding noise
                    let negligible = problem.step_norm(&dx) <= 1e-3 * config.position_tol
                        && (viol1 <= viol0 * (1.0 + 1e-6)
                            || max_scaled_residual(&lin.rows, &values1) <= 1e-3 * config.constraint_tol);
                    if phi1.is_finite() && (phi1 <= phi0 + slack || negligible) {
                        accepted = Some((dx, qp, factor, e1, values1, mu));
                        mu = (mu / 3.0).max(MU_MIN);
                        break;
                    }
                }
                Err(e) => log::debug!("rejected step: {e}"),
            }
            problem.restore(snapshot);
            mu *= 10.0;
        }
        let Some((dx, qp, factor, energy, values, mu_used)) = accepted else {
            log::warn!("no acceptable step after {} damping increases", config.max_inner_iters);
            break;
        };

        eq_lambda = eq_rows.iter().map(|&k| qp.lambda[k]).collect();
        active_keys = lin
            .rows
            .iter()
            .zip(&qp.active)
            .filter(|(r, &a)| a && r.kind == RowKind::Unilateral)
            .map(|(r, _)| r.key)
            .collect();
        let disp = problem.step_norm(&dx);
        let residual = max_scaled_residual(&lin.rows, &values);
        history.push(IterationRecord {
            iteration: outer + 1,
            energy,
            max_residual: residual,
            max_displacement: disp,
            damping: mu_used,
            active_constraints: qp.active.iter().filter(|&&a| a).count(),
        });
        log::trace!("iter {} energy {energy:.6e} residual {residual:.3e} disp {disp:.3e}", outer + 1);
        last_energy = energy;
        last_residual = residual;
        last_disp = disp;
        // damping held up by negative curvature outside the feasible set shrinks
        // the step by about mu / MU_CONVERGED; only a step that is tiny after
        // undoing that counts as converged
        let undamped = disp * (mu_used / MU_CONVERGED).max(1.0);
        if mu_used >= MU_STALLED && disp < 1e-3 * config.position_tol {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if undamped < config.position_tol && residual < config.constraint_tol && factor == 1.0
            && model_change <= MODEL_TOL
        {
            return Ok(SolveReport {
                converged: true,
                iterations: outer + 1,
                energy: problem.consistent_energy()?,
                max_residual: residual,
                last_displacement: disp,
                history,
            });
        }
        if stalled >= STALL_ITERS {
            log::debug!("stalled after {} iterations at damping {mu_used:.3e}", outer + 1);
            break;
        }
    }
    if last_energy.is_nan() {
        last_energy = problem.energy()?;
    }
    Ok(SolveReport {
        converged: false,
        iterations: history.len(),
        energy: last_energy,
        max_residual: last_residual,
        last_displacement: last_disp,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Quadratic bowl `½ Σ a_i (x_i − b_i)²` with optional linear and
    /// unilateral rows, solved exactly by the KKT system.
    struct Bowl {
        x: DVector<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        eq: Vec<(Vec<f64>, f64)>,
        ineq: Vec<(Vec<f64>, f64)>,
    }

    impl Problem for Bowl {
        type Snapshot = DVector<f64>;
        fn dof_count(&self) -> usize {
            self.x.len()
        }
        fn begin_outer(&mut self) -> Result<f64> {
            Ok(0.0)
        }
        fn energy(&self) -> Result<f64> {
            Ok((0..self.x.len()).map(|i| 0.5 * self.a[i] * (self.x[i] - self.b[i]).powi(2)).sum())
        }
        fn linearize(&self) -> Result<Linearization> {
            let n = self.x.len();
            let rows = self
                .eq
                .iter()
                .map(|r| (r, RowKind::Equality))
                .chain(self.ineq.iter().map(|r| (r, RowKind::Unilateral)))
                .enumerate()
                .map(|(k, ((c, d), kind))| Row {
                    kind,
                    value: c.iter().zip(self.x.iter()).map(|(c, x)| c * x).sum::<f64>() - d,
                    grad: c.iter().copied().enumerate().collect(),
                    hess: Vec::new(),
                    scale: 1.0,
                    key: k as u64,
                })
                .collect();
            Ok(Linearization {
                energy: self.energy()?,
                gradient: DVector::from_fn(n, |i, _| self.a[i] * (self.x[i] - self.b[i])),
                hessian: (0..n).map(|i| (i, i, self.a[i])).collect(),
                rows,
            })
        }
        fn row_values(&self) -> Result<Vec<f64>> {
            Ok(self
                .eq
                .iter()
                .chain(&self.ineq)
                .map(|(c, d)| c.iter().zip(self.x.iter()).map(|(c, x)| c * x).sum::<f64>() - d)
                .collect())
        }
        fn apply_step(&mut self, dx: &DVector<f64>) {
            self.x += dx;
        }
        fn step_limit(&self, _: &DVector<f64>) -> f64 {
            1.0
        }
        fn step_norm(&self, dx: &DVector<f64>) -> f64 {
            dx.amax()
        }
        fn snapshot(&self) -> DVector<f64> {
            self.x.clone()
        }
        fn restore(&mut self, s: DVector<f64>) {
            self.x = s;
        }
    }

    #[test]
    fn unconstrained_bowl_reaches_minimum() {
        let mut p = Bowl { x: DVector::zeros(3), a: vec![1.0, 4.0, 9.0], b: vec![1.0, -2.0, 0.5], eq: vec![], ineq: vec![] };
        let report = solve(&mut p, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 3);
        assert_relative_eq!(p.x, DVector::from_vec(vec![1.0, -2.0, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn equality_constrained_bowl_matches_lagrange_solution() {
        // min ½(x−1)² + ½(y−1)² s.t. x + y = 0 → x = y = 0
        let mut p = Bowl {
            x: DVector::from_vec(vec![3.0, -1.0]),
            a: vec![1.0, 1.0],
            b: vec![1.0, 1.0],
            eq: vec![(vec![1.0, 1.0], 0.0)],
            ineq: vec![],
        };
        let report = solve(&mut p, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert_relative_eq!(p.x, DVector::from_vec(vec![0.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn unilateral_rows_activate_and_release() {
        // bound x ≥ 2 is active, bound y ≥ −5 is not
        let mut p = Bowl {
            x: DVector::from_vec(vec![3.0, 0.0]),
            a: vec![1.0, 1.0],
            b: vec![0.0, 0.0],
            eq: vec![],
            ineq: vec![(vec![1.0, 0.0], 2.0), (vec![0.0, 1.0], -5.0)],
        };
        let report = solve(&mut p, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert_relative_eq!(p.x, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.position_tol = 0.0;
        assert!(c.validate().is_err());
        let c = SolverConfig { max_outer_iters: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let mut p = Bowl { x: DVector::zeros(1), a: vec![1.0], b: vec![1.0], eq: vec![], ineq: vec![] };
        let report = solve(&mut p, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,energy,max_residual,max_displacement,damping,active_constraints");
        assert_eq!(lines.len(), report.history.len() + 1);
    }
}
