//! Weighted linear least-squares fit of shell stiffness to homogenized
//! energy densities.
//!
//! The shell energy density of a homogeneous sample is linear in the eight
//! coefficients, so each record contributes one row. Membrane and bending
//! samples never mix, which splits the system into two independent blocks.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::homogenize::{DeformationSample, EnergyRecord, SampleCategory};
use crate::shell::{ShellParams, COEFFICIENT_NAMES};
use crate::solver::RelaxedPatch;
use crate::{Error, Result};

/// Relative singular value below which a direction counts as unidentifiable.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Gaussian width over membrane strain magnitude.
    pub sigma_membrane: f64,
    /// Gaussian width over curvature magnitude, 1/m.
    pub sigma_bending: f64,
    /// Fit the warp-weft bending coupling `b01`.
    pub include_b01: bool,
    /// Keep the diagonal coefficients non-negative.
    pub nonneg: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { sigma_membrane: 0.15, sigma_bending: 100.0, include_b01: false, nonneg: false }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("sigma_membrane", self.sigma_membrane), ("sigma_bending", self.sigma_bending)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config { field: field.into(), reason: "must be positive".into() });
            }
        }
        Ok(())
    }
}

/// Membrane strain `(Ĩ_tt, Ĩ_pp, Ĩ_tp)` and curvature `(𝕀𝕀_tt, 𝕀𝕀_pp,
/// 𝕀𝕀_tp)` of a sample against the identity rest metric.
pub fn sample_strains(sample: &DeformationSample) -> ([f64; 3], [f64; 3]) {
    let d: Matrix2<f64> = sample.first_form - Matrix2::identity();
    let b = sample.second_form;
    ([d[(0, 0)], d[(1, 1)], d[(0, 1)]], [b[(0, 0)], b[(1, 1)], b[(0, 1)]])
}

/// Row `r` with `⟨r, γ⟩` equal to the shell energy density of `sample`, in
/// [`COEFFICIENT_NAMES`] order.
pub fn design_row(sample: &DeformationSample, h: f64) -> [f64; 8] {
    let (m, b) = sample_strains(sample);
    let (hm, hb) = (0.5 * h, 0.5 * h.powi(3));
    [
        hm * m[0] * m[0],
        2.0 * hm * m[0] * m[1],
        hm * m[1] * m[1],
        hm * m[2] * m[2],
        hb * b[0] * b[0],
        hb * b[1] * b[1],
        hb * b[2] * b[2],
        hb * b[0] * b[1],
    ]
}

/// Gaussian weight centered at zero strain; the strain magnitude is the
/// Frobenius norm of the strain or curvature tensor.
pub fn sample_weight(sample: &DeformationSample, config: &FitConfig) -> f64 {
    let (m, b) = sample_strains(sample);
    if sample.category.is_bending() {
        let n2 = b[0] * b[0] + b[1] * b[1] + 2.0 * b[2] * b[2];
        (-n2 / (2.0 * config.sigma_bending.powi(2))).exp()
    } else {
        let n2 = m[0] * m[0] + m[1] * m[1] + 2.0 * m[2] * m[2];
        (-n2 / (2.0 * config.sigma_membrane.powi(2))).exp()
    }
}

/// Shell thickness from the relaxed patch: twice the yarn radius times the
/// crimp factor, the ratio of the tube bounding thickness to one yarn
/// diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thickness {
    pub h: f64,
    pub crimp_factor: f64,
}

pub fn shell_thickness(patch: &RelaxedPatch) -> Thickness {
    let (lo, hi) = patch
        .rest
        .yarns
        .iter()
        .flat_map(|y| y.points.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let d = 2.0 * patch.radius;
    let crimp_factor = (hi - lo + d) / d;
    Thickness { h: d * crimp_factor, crimp_factor }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub coefficients: Vec<String>,
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `‖√W (Aγ − U)‖`.
    pub residual_norm: f64,
    /// Condition number of the weighted normal matrix `AᵀWA`.
    pub condition_number: f64,
    pub rows: usize,
    /// Coefficients pinned at zero by the non-negativity constraint.
    pub clamped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ShellParams,
    pub h: f64,
    /// `h·S` entries, the combination the energies actually determine.
    pub membrane_products: BTreeMap<String, f64>,
    /// `h³·B` entries.
    pub bending_products: BTreeMap<String, f64>,
    pub membrane: BlockReport,
    pub bending: BlockReport,
    pub membrane_spd: bool,
    pub sample_counts: BTreeMap<SampleCategory, usize>,
    pub skipped_unconverged: usize,
    pub config: FitConfig,
}

impl FitReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })
    }
}

struct BlockSolution {
    values: Vec<f64>,
    report: BlockReport,
}

/// Least squares for one block. `columns` index into the design row; `nonneg`
/// marks the entries held non-negative when `config.nonneg` is set.
fn solve_block(
    rows: &[([f64; 8], f64, f64)],
    columns: &[usize],
    nonneg: &[bool],
    enforce: bool,
) -> Result<BlockSolution> {
    let names: Vec<String> = columns.iter().map(|&c| COEFFICIENT_NAMES[c].to_string()).collect();
    let p = columns.len();
    let n = rows.len();
    // pad to at least p rows so the SVD exposes the full null space
    let m = n.max(p);
    let mut a = DMatrix::zeros(m, p);
    let mut y = DVector::zeros(m);
    for (i, (row, u, w)) in rows.iter().enumerate() {
        let sw = w.sqrt();
        for (k, &c) in columns.iter().enumerate() {
            a[(i, k)] = sw * row[c];
        }
        y[i] = sw * u;
    }
    let scale: Vec<f64> = (0..p).map(|k| a.column(k).norm()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let mut scaled = a.clone();
    for (k, s) in scale.iter().enumerate() {
        scaled.column_mut(k).unscale_mut(*s);
    }
    let svd = scaled.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::invalid("SVD failed"))?;
    let smax = svd.singular_values.max();
    let mut unidentifiable = vec![false; p];
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if !(s > RANK_TOL * smax) {
            for k in 0..p {
                if v_t[(i, k)].abs() > 1e-6 {
                    unidentifiable[k] = true;
                }
            }
        }
    }
    if unidentifiable.iter().any(|&u| u) {
        return Err(Error::UnderdeterminedFit {
            coefficients: names.iter().zip(&unidentifiable).filter(|(_, &u)| u).map(|(n, _)| n.clone()).collect(),
        });
    }

    let lsq = |free: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..p).filter(|&k| free[k]).collect();
        let mut z = DVector::zeros(p);
        if idx.is_empty() {
            return Some(z);
        }
        let sub = scaled.select_columns(&idx);
        let sol = sub.svd(true, true).solve(&y, 0.0).ok()?;
        for (j, &k) in idx.iter().enumerate() {
            z[k] = sol[j];
        }
        Some(z)
    };
    let mut z = lsq(&vec![true; p]).ok_or_else(|| Error::invalid("least-squares solve failed"))?;
    let mut clamped = vec![false; p];
    if enforce && (0..p).any(|k| nonneg[k] && z[k] < 0.0) {
        // exhaustive active-set search: every subset of constrained entries
        // pinned at zero, keeping the best feasible solution
        let constrained: Vec<usize> = (0..p).filter(|&k| nonneg[k]).collect();
        let mut best: Option<(f64, DVector<f64>, Vec<bool>)> = None;
        for mask in 0u32..(1 << constrained.len()) {
            let mut pinned = vec![false; p];
            for (b, &k) in constrained.iter().enumerate() {
                pinned[k] = mask & (1 << b) != 0;
            }
            let free: Vec<bool> = pinned.iter().map(|&x| !x).collect();
            let Some(cand) = lsq(&free) else { continue };
            if constrained.iter().any(|&k| cand[k] < 0.0) {
                continue;
            }
            let r = (&scaled * &cand - &y).norm();
            if best.as_ref().is_none_or(|(br, _, _)| r < *br) {
                best = Some((r, cand, pinned));
            }
        }
        let (_, cand, pinned) = best.ok_or_else(|| Error::invalid("no non-negative solution"))?;
        z = cand;
        clamped = pinned;
    }
    let values: Vec<f64> = (0..p).map(|k| z[k] / scale[k]).collect();
    let gamma = DVector::from_vec(values.clone());
    let residual = &a * &gamma - &y;
    let residual_norm = residual.norm();

    let normal = a.transpose() * &a;
    let eig = normal.clone().symmetric_eigen();
    let (emin, emax) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition_number = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    let dof = n.saturating_sub(p);
    let sigma2 = if dof > 0 { residual_norm * residual_norm / dof as f64 } else { 0.0 };
    let standard_errors = match normal.try_inverse() {
        Some(inv) => (0..p).map(|k| (sigma2 * inv[(k, k)]).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; p],
    };
    Ok(BlockSolution {
        report: BlockReport {
            coefficients: names.clone(),
            values: values.clone(),
            standard_errors,
            residual_norm,
            condition_number,
            rows: n,
            clamped: names.iter().zip(&clamped).filter(|(_, &c)| c).map(|(n, _)| n.clone()).collect(),
        },
        values,
    })
}

/// Fit shell parameters of thickness `h` to the converged records.
pub fn fit(records: &[EnergyRecord], config: &FitConfig, h: f64) -> Result<FitReport> {
    config.validate()?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config { field: "h".into(), reason: "shell thickness must be positive".into() });
    }
    let mut membrane = Vec::new();
    let mut bending = Vec::new();
    let mut counts = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        if !r.converged || !r.energy_density.is_finite() {
            skipped += 1;
            continue;
        }
        *counts.entry(r.sample.category).or_insert(0) += 1;
        let row = (design_row(&r.sample, h), r.energy_density, sample_weight(&r.sample, config));
        if r.sample.category.is_bending() {
            bending.push(row);
        } else {
            membrane.push(row);
        }
    }
    let bend_cols: Vec<usize> = if config.include_b01 { vec![4, 5, 6, 7] } else { vec![4, 5, 6] };
    let m = solve_block(&membrane, &[0, 1, 2, 3], &[true, false, true, true], config.nonneg);
    let b = solve_block(&bending, &bend_cols, &[true, true, true, false], config.nonneg);
    let (m, b) = match (m, b) {
        (Ok(m), Ok(b)) => (m, b),
        // report every unidentifiable coefficient at once
        (Err(Error::UnderdeterminedFit { coefficients: mut a }), Err(Error::UnderdeterminedFit { coefficients: c })) => {
            a.extend(c);
            return Err(Error::UnderdeterminedFit { coefficients: a });
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let mut c = [0.0; 8];
    for (k, v) in [0, 1, 2, 3].iter().zip(&m.values) {
        c[*k] = *v;
    }
    for (k, v) in bend_cols.iter().zip(&b.values) {
        c[*k] = *v;
    }
    let params = ShellParams::from_coefficients(&c, h);
    let membrane_spd = params.membrane_spd();
    if !membrane_spd {
        log::warn!("fitted membrane block is not positive definite: {params:?}");
    }
    let membrane_products = COEFFICIENT_NAMES[..4].iter().zip(&c[..4]).map(|(n, v)| (n.to_string(), h * v)).collect();
    let bending_products =
        bend_cols.iter().map(|&k| (COEFFICIENT_NAMES[k].to_string(), h.powi(3) * c[k])).collect();
    Ok(FitReport {
        params,
        h,
        membrane_products,
        bending_products,
        membrane: m.report,
        bending: b.report,
        membrane_spd,
        sample_counts: counts,
        skipped_unconverged: skipped,
        config: config.clone(),
    })
}
