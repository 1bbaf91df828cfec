//! Computing and certifying D_g.
//!
//! The solver ascends θ(K) = Σ c_i log det K_i − max_{Π(K)} Σ_j d_j log det(A_j K A_jᵀ)
//! from several starting points and turns the final coupling into extremizers
//! V_i = K_i⁻¹, U_j = (A_j Π A_jᵀ)⁻¹, Π = K. Only the certificate check is
//! trusted; the ascent itself is a heuristic.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::ascent::{Ascent, Outcome, Settings};
use crate::coupling::{default_mu_schedule, Coupling, COUPLING_TOL};
use crate::datum::{self, map_extremizers_to_dual, offsets, Datum};
use crate::error::{FrblError, Result};
use crate::finiteness::{self, Budget, Finiteness, ProductSubspace, Witness, WitnessSide};
use crate::linalg;
use crate::operator::{matrix_from_json, matrix_to_json, spd_list_from_json, spd_list_to_json, BlockDiagonal, SpdOperator};
use crate::rational::Rational;

/// Π eigenvalues below this fraction of the largest are treated as zero.
const PI_TRUNCATION: f64 = 1e-12;

/// Gaussian extremizer candidates (V_i, U_j, Π).
#[derive(Debug, Clone, PartialEq)]
pub struct Extremizers {
    pub v: Vec<SpdOperator>,
    pub u: Vec<SpdOperator>,
    pub pi: Coupling,
}

impl Extremizers {
    /// Checks shapes against the datum and that Π is positive semidefinite.
    /// Block agreement Π_ii = V_i⁻¹ is left to [`certify`].
    pub fn new(datum: &Datum, v: Vec<SpdOperator>, u: Vec<SpdOperator>, pi: DMatrix<f64>) -> Result<Self> {
        if v.len() != datum.k() || u.len() != datum.m() {
            return Err(FrblError::InvalidArgument(format!(
                "expected {} V and {} U operators, got {} and {}",
                datum.k(),
                datum.m(),
                v.len(),
                u.len()
            )));
        }
        for (i, (vi, &n)) in v.iter().zip(datum.input_dims()).enumerate() {
            if vi.dim() != n {
                return Err(FrblError::InvalidArgument(format!("V[{}] is {}x{}, expected {n}x{n}", i + 1, vi.dim(), vi.dim())));
            }
        }
        for (j, (uj, &n)) in u.iter().zip(datum.output_dims()).enumerate() {
            if uj.dim() != n {
                return Err(FrblError::InvalidArgument(format!("U[{}] is {}x{}, expected {n}x{n}", j + 1, uj.dim(), uj.dim())));
            }
        }
        let pi = Coupling::new(pi, datum.input_dims(), None)?;
        Ok(Self { v, u, pi })
    }

    /// Extremizers read off a coupling K: V_i = K_i⁻¹, U_j = (A_j K A_jᵀ)⁻¹, Π = K.
    pub fn from_coupling(datum: &Datum, k: &DMatrix<f64>) -> Result<Self> {
        let pi = Coupling::new(k.clone(), datum.input_dims(), None)?;
        let v = (0..datum.k())
            .map(|i| SpdOperator::symmetrized(&pi.block(i)).map(|b| b.inverse()))
            .collect::<Result<Vec<_>>>()?;
        let u = datum
            .scaled_maps()
            .iter()
            .map(|a| SpdOperator::symmetrized(&(a * k * a.transpose())).map(|m| m.inverse()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { v, u, pi })
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "V": spd_list_to_json(&self.v),
            "U": spd_list_to_json(&self.u),
            "Pi": matrix_to_json(self.pi.matrix()),
        })
    }

    pub fn from_json_value(v: &Value, datum: &Datum) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| FrblError::Parse("extremizers: expected an object".into()))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "V" | "U" | "Pi") {
                return Err(FrblError::Parse(format!("extremizers: unknown field {key:?}")));
            }
        }
        let get = |k: &str| obj.get(k).ok_or_else(|| FrblError::Parse(format!("extremizers: missing field {k:?}")));
        let vs = spd_list_from_json(get("V")?, "V")?;
        let us = spd_list_from_json(get("U")?, "U")?;
        let pi = matrix_from_json(get("Pi")?, "Pi")?;
        let n = datum.total_dim();
        if pi.nrows() != n || (n > 0 && pi.ncols() != n) {
            return Err(FrblError::Parse(format!("Pi is {}x{}, expected {n}x{n}", pi.nrows(), pi.ncols())));
        }
        let pi = if n == 0 { DMatrix::zeros(0, 0) } else { pi };
        Self::new(datum, vs, us, pi)
    }

    pub fn from_json(s: &str, datum: &Datum) -> Result<Self> {
        Self::from_json_value(&serde_json::from_str(s)?, datum)
    }
}

/// Extremizers for the dual datum: V' = U⁻¹, U' = V⁻¹ and Π' = U·[A_j Π A_lᵀ]_{jl}·U
/// with U = ⊕U_j. Certification carries over because ΘΠ = 0 forces the blocks of
/// A'_i Π' A'_iᵀ to equal V_i.
pub fn dual_extremizers(datum: &Datum, ext: &Extremizers) -> Extremizers {
    let (v, u) = map_extremizers_to_dual(&ext.v, &ext.u);
    let a = stacked_maps(datum);
    let ublk = linalg::block_diag(&ext.u.iter().map(|u| u.matrix().clone()).collect::<Vec<_>>());
    let pi = &ublk * (&a * ext.pi.matrix() * a.transpose()) * &ublk;
    Extremizers { v, u, pi: Coupling::from_parts(&pi, datum.output_dims()) }
}

/// All A_j stacked vertically: E_0 → E^0.
fn stacked_maps(datum: &Datum) -> DMatrix<f64> {
    let maps = datum.scaled_maps();
    let mut out = DMatrix::zeros(datum.total_output_dim(), datum.total_dim());
    for (a, off) in maps.iter().zip(datum.output_offsets()) {
        out.view_mut((off, 0), (a.nrows(), a.ncols())).copy_from(a);
    }
    out
}

/// ½(Σ d_j log det U_j − Σ c_i log det V_i).
pub fn dg_objective(datum: &Datum, v: &[SpdOperator], u: &[SpdOperator]) -> f64 {
    let pos: f64 = datum.d_f64().iter().zip(u).map(|(d, u)| d * u.logdet()).sum();
    let neg: f64 = datum.c_f64().iter().zip(v).map(|(c, v)| c * v.logdet()).sum();
    0.5 * (pos - neg)
}

/// Θ = V_c − Σ_j d_j A_jᵀ U_j A_j, together with V_c.
pub fn theta_operator(datum: &Datum, v: &[SpdOperator], u: &[SpdOperator]) -> (DMatrix<f64>, DMatrix<f64>) {
    let vc = BlockDiagonal::weighted(&datum.c_f64(), v).to_dense();
    let mut theta = vc.clone();
    for ((a, d), uj) in datum.scaled_maps().iter().zip(datum.d_f64()).zip(u) {
        theta -= a.transpose() * uj.matrix() * a * d;
    }
    (linalg::sym(&theta), vc)
}

/// λ_min(Θ) ≥ −tol·‖V_c‖.
pub fn is_feasible(datum: &Datum, v: &[SpdOperator], u: &[SpdOperator], tol: f64) -> bool {
    let (theta, vc) = theta_operator(datum, v, u);
    theta.nrows() == 0 || linalg::min_eig(&theta) >= -tol * linalg::sym_norm(&vc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    CertifiedOptimal,
    FeasibleOnly,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub value: f64,
    pub theta_min_eig: f64,
    /// ‖V_c‖; feasibility is judged on theta_min_eig relative to it.
    pub theta_scale: f64,
    pub complementarity: f64,
    pub block_residual: f64,
    pub uj_residual: f64,
    pub tol: f64,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedOptimal
    }
}

pub fn certify(datum: &Datum, ext: &Extremizers, tol: f64) -> Certificate {
    let value = dg_objective(datum, &ext.v, &ext.u);
    let (theta, vc) = theta_operator(datum, &ext.v, &ext.u);
    let scale = linalg::sym_norm(&vc);
    let theta_min_eig = if theta.nrows() == 0 { 0.0 } else { linalg::min_eig(&theta) };
    let pi = ext.pi.matrix();
    let complementarity = if pi.nrows() == 0 {
        0.0
    } else {
        let (root, _) = linalg::psd_sqrt(pi, PI_TRUNCATION);
        linalg::op_norm(&(&root * &theta * &root))
    };
    let block_residual = ext
        .v
        .iter()
        .enumerate()
        .map(|(i, v)| ext.pi.block_deviation(i, v.inverse().matrix()))
        .fold(0.0, f64::max);
    let uj_residual = datum
        .scaled_maps()
        .iter()
        .zip(&ext.u)
        .map(|(a, u)| {
            let target = u.inverse();
            let diff = target.matrix() - a * pi * a.transpose();
            linalg::sym_norm(&diff) / linalg::sym_norm(target.matrix()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    let feasible = theta_min_eig >= -tol * scale;
    let verdict = if feasible && complementarity <= tol && block_residual <= tol && uj_residual <= tol {
        Verdict::CertifiedOptimal
    } else if feasible {
        Verdict::FeasibleOnly
    } else {
        Verdict::Infeasible
    };
    Certificate { value, theta_min_eig, theta_scale: scale, complementarity, block_residual, uj_residual, tol, verdict }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Certification tolerance.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_outer: usize,
    /// Stopping threshold on the Riemannian gradient of the last barrier stage.
    pub outer_tol: f64,
    pub mu_schedule: Vec<f64>,
    pub max_enum_dim: usize,
    pub random_trials: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            restarts: 4,
            seed: 0,
            max_outer: 5000,
            outer_tol: 1e-9,
            mu_schedule: default_mu_schedule(),
            max_enum_dim: Budget::default().max_enum_dim,
            random_trials: Budget::default().random_trials,
        }
    }
}

impl SolveOptions {
    fn budget(&self) -> Budget {
        Budget { max_enum_dim: self.max_enum_dim, random_trials: self.random_trials, seed: self.seed }
    }

    fn settings(&self, n: usize, independent: bool) -> Settings {
        Settings {
            mu_schedule: self.mu_schedule.clone(),
            final_tol: self.outer_tol,
            inner_tol: 1e-10,
            max_outer: self.max_outer,
            independent,
            value_cap: 50.0 * n as f64,
            cond_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DgValue {
    Finite(f64),
    /// `witness` is absent when divergence was observed but no violating
    /// subspace was found.
    Infinite { witness: Option<Box<Witness>>, reason: String },
}

impl DgValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            DgValue::Finite(v) => *v,
            DgValue::Infinite { .. } => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, DgValue::Finite(_))
    }

    pub fn to_json_value(&self) -> Value {
        match self {
            DgValue::Finite(v) => json!({"finite": true, "value": v}),
            DgValue::Infinite { witness, reason } => json!({
                "finite": false,
                "witness": witness.as_ref().map(|w| w.to_json_value()),
                "suspected": witness.is_none(),
                "reason": reason,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub index: usize,
    pub value: Option<f64>,
    pub verdict: Option<Verdict>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub dg_value: DgValue,
    pub certificate: Option<Certificate>,
    pub iterations: usize,
    pub dual_gap_note: String,
    pub extremizers: Option<Extremizers>,
    pub restarts: Vec<RestartSummary>,
    /// Index of the restart whose result is reported.
    pub best_restart: Option<usize>,
}

impl SolveReport {
    pub fn verdict(&self) -> Option<Verdict> {
        self.certificate.as_ref().map(|c| c.verdict)
    }

    pub fn is_certified(&self) -> bool {
        self.verdict() == Some(Verdict::CertifiedOptimal)
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "dg_value": self.dg_value.to_json_value(),
            "certificate": self.certificate,
            "iterations": self.iterations,
            "dual_gap_note": self.dual_gap_note,
            "extremizers": self.extremizers.as_ref().map(|e| e.to_json_value()),
            "restarts": self.restarts,
            "best_restart": self.best_restart,
        })
    }

    fn infinite(witness: Option<Witness>, reason: String, iterations: usize, restarts: Vec<RestartSummary>) -> Self {
        SolveReport {
            dg_value: DgValue::Infinite { witness: witness.map(Box::new), reason },
            certificate: None,
            iterations,
            dual_gap_note: "D_g is infinite; no extremizers exist".into(),
            extremizers: None,
            restarts,
            best_restart: None,
        }
    }
}

struct RestartResult {
    summary: RestartSummary,
    extremizers: Option<Extremizers>,
    certificate: Option<Certificate>,
    outcome: Outcome,
    factors: Vec<DMatrix<f64>>,
    coupling: DMatrix<f64>,
}

fn initial_factors(dims: &[usize], index: usize, seed: u64) -> Vec<DMatrix<f64>> {
    if index == 0 {
        return dims.iter().map(|&n| DMatrix::identity(n, n)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    dims.iter()
        .map(|&n| {
            let g = DMatrix::from_fn(n, n, |_, _| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
            let k = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
            linalg::cholesky(&k).expect("shifted Gram matrix is positive definite")
        })
        .collect()
}

/// Witness for a non-surjective B_j: the kernel of B_jᵀ inside E^j, seen in the dual.
fn kernel_witness(datum: &Datum) -> Option<Witness> {
    let dual = datum.dual();
    for j in 0..datum.m() {
        let bj = datum.assemble_bj(j);
        let reference = linalg::op_norm(&bj);
        let range = linalg::orthonormal_basis(&bj, datum::RANK_TOL, reference);
        let mj = datum.output_dims()[j];
        if range.ncols() == mj {
            continue;
        }
        let kernel = linalg::orthogonal_complement(&range, mj);
        let bases = datum
            .output_dims()
            .iter()
            .enumerate()
            .map(|(l, &n)| if l == j { kernel.clone() } else { DMatrix::zeros(n, 0) })
            .collect();
        let t = ProductSubspace::new(bases).ok()?;
        let counts = finiteness::subspace_counts(&dual, &t);
        if counts.slack < Rational::from_integer(0) {
            return Some(Witness {
                side: WitnessSide::Dual,
                subspace: t,
                counts,
                reason: format!("B_{} is not surjective", j + 1),
            });
        }
    }
    None
}


/// Candidate subspaces read off a diverging iterate: for each threshold on the
/// eigenvalues of the K_i, the span of the eigenvectors above it (datum side),
/// and the same for the pushforward precisions U_j (dual side).
fn divergence_witness(datum: &Datum, factors: &[DMatrix<f64>], coupling: &DMatrix<f64>) -> Option<Witness> {
    let blocks: Vec<DMatrix<f64>> = factors.iter().map(|l| l * l.transpose()).collect();
    if let Some(w) = threshold_scan(datum, &blocks, WitnessSide::Datum) {
        return Some(w);
    }
    let precisions: Vec<DMatrix<f64>> = datum
        .scaled_maps()
        .iter()
        .map(|a| {
            let m = linalg::sym(&(a * coupling * a.transpose()));
            linalg::sym_fn(&m, |x| 1.0 / x.max(f64::MIN_POSITIVE))
        })
        .collect();
    threshold_scan(&datum.dual(), &precisions, WitnessSide::Dual)
}

fn threshold_scan(target: &Datum, blocks: &[DMatrix<f64>], side: WitnessSide) -> Option<Witness> {
    let eigs: Vec<(nalgebra::DVector<f64>, DMatrix<f64>)> = blocks.iter().map(linalg::sym_eig).collect();
    let mut levels: Vec<f64> = eigs.iter().flat_map(|(v, _)| v.iter().cloned()).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    levels.dedup();
    for &tau in &levels {
        let bases: Vec<DMatrix<f64>> = eigs
            .iter()
            .map(|(vals, vecs)| {
                let cols: Vec<usize> = (0..vals.len()).filter(|&c| vals[c] >= tau).collect();
                DMatrix::from_fn(vecs.nrows(), cols.len(), |r, c| vecs[(r, cols[c])])
            })
            .collect();
        let Ok(t) = ProductSubspace::new(bases) else { continue };
        let counts = finiteness::subspace_counts(target, &t);
        if counts.slack < Rational::from_integer(0) && !counts.near_threshold {
            return Some(Witness {
                side,
                subspace: t,
                counts,
                reason: "spanned by the growing directions of a diverging ascent".into(),
            });
        }
    }
    None
}

fn run_restart(datum: &Datum, opts: &SolveOptions, index: usize) -> RestartResult {
    let maps = datum.scaled_maps();
    let c = datum.c_f64();
    let d = datum.d_f64();
    let settings = opts.settings(datum.total_dim(), false);
    let ascent = Ascent::new(&maps, &c, &d, datum.input_dims(), &settings);
    let res = ascent.run(initial_factors(datum.input_dims(), index, opts.seed));
    let (extremizers, certificate) = match Extremizers::from_coupling(datum, &res.coupling) {
        Err(_) => (None, None),
        Ok(ext) => {
            let cert = certify(datum, &ext, opts.tol);
            (Some(ext), Some(cert))
        }
    };
    let outcome_text = match &res.outcome {
        Outcome::Converged => "converged".to_string(),
        Outcome::Exhausted => "iteration cap reached".to_string(),
        Outcome::Diverged(why) => format!("diverged: {why}"),
    };
    RestartResult {
        summary: RestartSummary {
            index,
            value: certificate.as_ref().map(|c| c.value),
            verdict: certificate.as_ref().map(|c| c.verdict),
            iterations: res.iterations,
            grad_norm: res.grad_norm,
            outcome: outcome_text,
        },
        extremizers,
        certificate,
        outcome: res.outcome,
        factors: res.factors,
        coupling: res.coupling,
    }
}

fn rank(v: Option<Verdict>) -> u8 {
    match v {
        Some(Verdict::CertifiedOptimal) => 2,
        Some(Verdict::FeasibleOnly) => 1,
        _ => 0,
    }
}

/// Computes D_g, or +∞ with a witness when the finiteness conditions fail.
pub fn compute_dg(datum: &Datum, opts: &SolveOptions) -> Result<SolveReport> {
    if datum.k() == 0 && datum.m() == 0 {
        let ext = Extremizers { v: vec![], u: vec![], pi: Coupling::from_parts(&DMatrix::zeros(0, 0), &[]) };
        let cert = certify(datum, &ext, opts.tol);
        return Ok(SolveReport {
            dg_value: DgValue::Finite(0.0),
            certificate: Some(cert),
            iterations: 0,
            dual_gap_note: "empty datum".into(),
            extremizers: Some(ext),
            restarts: vec![],
            best_restart: None,
        });
    }
    let pre = finiteness::check_finiteness(datum, &opts.budget());
    if let Finiteness::Infinite(w) = pre.verdict {
        return Ok(SolveReport::infinite(Some(*w), "finiteness pre-check".into(), 0, vec![]));
    }
    if !datum.validate().all_surjective() {
        let w = kernel_witness(datum);
        return Ok(SolveReport::infinite(w, "some B_j is not surjective".into(), 0, vec![]));
    }

    let results: Vec<RestartResult> =
        (0..opts.restarts.max(1)).into_par_iter().map(|i| run_restart(datum, opts, i)).collect();
    let iterations = results.iter().map(|r| r.summary.iterations).sum();
    let summaries: Vec<RestartSummary> = results.iter().map(|r| r.summary.clone()).collect();

    let best = results
        .iter()
        .filter(|r| r.certificate.is_some())
        .max_by(|a, b| {
            // A converged run beats a higher value from an unfinished one, whose
            // value still carries the bias of a larger barrier weight.
            let key = |r: &RestartResult| {
                (rank(r.summary.verdict), r.outcome == Outcome::Converged, r.summary.value.unwrap_or(f64::NEG_INFINITY))
            };
            let (ka, kb) = (key(a), key(b));
            // Reversed index so that ties resolve to the lowest restart.
            ka.0.cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(b.summary.index.cmp(&a.summary.index))
        });

    // A diverging ascent suggests +∞ unless the exhaustive pre-check proved finiteness.
    let proven_finite = pre.verdict == Finiteness::Finite;
    if !proven_finite && best.is_none_or(|b| !b.certificate.as_ref().is_some_and(|c| c.is_certified())) {
        if let Some(div) = results.iter().find(|r| matches!(r.outcome, Outcome::Diverged(_))) {
            let mut witness = divergence_witness(datum, &div.factors, &div.coupling);
            if witness.is_none() {
                let wide = Budget { random_trials: opts.random_trials.max(1) * 10, ..opts.budget() };
                witness = finiteness::check_finiteness(datum, &wide).witness().cloned();
            }
            let reason = match &div.outcome {
                Outcome::Diverged(why) => format!("ascent diverged in restart {} ({why})", div.summary.index),
                _ => unreachable!(),
            };
            return Ok(SolveReport::infinite(witness, reason, iterations, summaries));
        }
    }

    let Some(best) = best else {
        let report = SolveReport {
            dg_value: DgValue::Finite(f64::NAN),
            certificate: None,
            iterations,
            dual_gap_note: "no restart produced usable extremizers".into(),
            extremizers: None,
            restarts: summaries,
            best_restart: None,
        };
        return Err(FrblError::SolveConvergence(Box::new(report)));
    };
    let cert = best.certificate.clone().expect("filtered on certificate");
    let note = match cert.verdict {
        Verdict::CertifiedOptimal => format!(
            "optimality certified at tol {:e}: Θ ≥ 0 and Π^(1/2)ΘΠ^(1/2) = 0 within the reported residuals",
            cert.tol
        ),
        Verdict::FeasibleOnly => "feasible but not certified; the value is a lower bound on D_g".into(),
        Verdict::Infeasible => "extremizer candidate is infeasible; the value is not a bound".into(),
    };
    let report = SolveReport {
        dg_value: DgValue::Finite(cert.value),
        certificate: Some(cert),
        iterations,
        dual_gap_note: note,
        extremizers: best.extremizers.clone(),
        restarts: summaries,
        best_restart: Some(best.summary.index),
    };
    let all_exhausted = results.iter().all(|r| r.outcome == Outcome::Exhausted);
    if !report.is_certified() && all_exhausted {
        return Err(FrblError::SolveConvergence(Box::new(report)));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCheck {
    pub dg: f64,
    pub dg_dual: f64,
    pub gap: f64,
    pub within_tol: bool,
    pub primal: SolveReport,
    pub dual: SolveReport,
}

impl DualityCheck {
    pub fn to_json_value(&self) -> Value {
        json!({
            "dg": self.primal.dg_value.to_json_value(),
            "dg_dual": self.dual.dg_value.to_json_value(),
            "gap": if self.gap.is_finite() { json!(self.gap) } else { json!(null) },
            "within_tol": self.within_tol,
            "primal_verdict": self.primal.verdict(),
            "dual_verdict": self.dual.verdict(),
        })
    }
}

/// Solves the datum and its dual and compares the two values.
pub fn verify_duality(datum: &Datum, tol: f64, opts: &SolveOptions) -> Result<DualityCheck> {
    let primal = compute_dg(datum, opts)?;
    let dual = compute_dg(&datum.dual(), opts)?;
    let (a, b) = (primal.dg_value.as_f64(), dual.dg_value.as_f64());
    let gap = match (a.is_finite(), b.is_finite()) {
        (true, true) => (a - b).abs(),
        (false, false) => 0.0,
        _ => f64::INFINITY,
    };
    Ok(DualityCheck { dg: a, dg_dual: b, gap, within_tol: gap <= tol, primal, dual })
}

/// Best constant over independent Gaussian inputs:
/// sup over K_i of Σ c_i h(Z_i) − Σ d_j h(B_j Z). `+∞` when the scaling
/// condition fails or the ascent diverges.
pub fn compute_mg(datum: &Datum, opts: &SolveOptions) -> Result<f64> {
    if datum.k() == 0 && datum.m() == 0 {
        return Ok(0.0);
    }
    if !datum.scaling_holds() || !datum.validate().all_surjective() {
        return Ok(f64::INFINITY);
    }
    let maps: Vec<DMatrix<f64>> = (0..datum.m()).map(|j| datum.assemble_bj(j)).collect();
    let c = datum.c_f64();
    let d = datum.d_f64();
    let settings = opts.settings(datum.total_dim(), true);
    let ascent = Ascent::new(&maps, &c, &d, datum.input_dims(), &settings);
    let runs: Vec<_> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|i| ascent.run(initial_factors(datum.input_dims(), i, opts.seed)))
        .collect();
    if runs.iter().any(|r| matches!(r.outcome, Outcome::Diverged(_))) {
        return Ok(f64::INFINITY);
    }
    let best = runs.iter().map(|r| r.theta).fold(f64::NEG_INFINITY, f64::max);
    if runs.iter().all(|r| r.outcome == Outcome::Exhausted) {
        return Err(FrblError::InvalidArgument(format!(
            "independent-coupling ascent did not converge in {} iterations",
            opts.max_outer
        )));
    }
    Ok(0.5 * best)
}

/// Differential entropy of N(0, cov); `-inf` when cov is singular.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows() as f64;
    match linalg::logdet_spd(cov) {
        Some(ld) => 0.5 * (n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + ld),
        None => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyCheck {
    pub lhs_entropy: f64,
    pub lhs_determinant: f64,
    pub diff: f64,
    /// Some pushforward covariance B_j K B_jᵀ is singular.
    pub degenerate: bool,
}

/// Evaluates Σ c_i h(c_i⁻¹Z_i) − Σ d_j h(B_j Z) for Z ~ N(0, K) once through
/// Gaussian entropies and once through the log-det objective at Λ_c⁻¹KΛ_c⁻¹.
pub fn entropic_consistency(datum: &Datum, k_list: &[SpdOperator], coupling: &Coupling) -> Result<EntropyCheck> {
    if k_list.len() != datum.k() || coupling.block_dims() != datum.input_dims() {
        return Err(FrblError::InvalidArgument("coupling does not match the datum".into()));
    }
    for (i, ki) in k_list.iter().enumerate() {
        let dev = coupling.block_deviation(i, ki.matrix());
        if dev > COUPLING_TOL {
            return Err(FrblError::InvalidArgument(format!("coupling block {} differs from K_{} by {dev:e}", i + 1, i + 1)));
        }
    }
    let c = datum.c_f64();
    let d = datum.d_f64();
    let k = coupling.matrix();

    let mut lhs_entropy = 0.0;
    for (ci, ki) in c.iter().zip(k_list) {
        lhs_entropy += ci * gaussian_entropy(&(ki.matrix() / (ci * ci)));
    }
    let mut degenerate = false;
    for (j, dj) in d.iter().enumerate() {
        let b = datum.assemble_bj(j);
        let h = gaussian_entropy(&linalg::sym(&(&b * k * b.transpose())));
        degenerate |= h == f64::NEG_INFINITY;
        lhs_entropy -= dj * h;
    }

    let inv_lc = datum.lambda_c().map(|x| 1.0 / x);
    let kp = DMatrix::from_fn(k.nrows(), k.ncols(), |r, s| inv_lc[r] * k[(r, s)] * inv_lc[s]);
    let offs = offsets(datum.input_dims());
    let mut theta = 0.0;
    for (i, (&n, ci)) in datum.input_dims().iter().zip(&c).enumerate() {
        let block = kp.view((offs[i], offs[i]), (n, n)).into_owned();
        theta += ci * linalg::logdet_spd(&block).unwrap_or(f64::NEG_INFINITY);
    }
    for (a, dj) in datum.scaled_maps().iter().zip(&d) {
        let push = linalg::sym(&(a * &kp * a.transpose()));
        theta -= dj * linalg::logdet_spd(&push).unwrap_or(f64::NEG_INFINITY);
    }
    let lhs_determinant = 0.5 * theta;

    let diff = if lhs_entropy == lhs_determinant {
        0.0
    } else {
        (lhs_entropy - lhs_determinant).abs() / lhs_determinant.abs().max(1.0)
    };
    Ok(EntropyCheck { lhs_entropy, lhs_determinant, diff, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational;

    fn r(s: &str) -> Rational {
        rational::parse(s).unwrap()
    }

    fn scalar(x: f64) -> SpdOperator {
        SpdOperator::new(DMatrix::from_element(1, 1, x)).unwrap()
    }

    /// Reverse-Young datum for n = 1 built directly.
    fn reverse_young_1(p: &str, q: &str, rr: &str) -> Datum {
        let (p, q, rr) = (r(p), r(q), r(rr));
        let one = Rational::from_integer(1);
        let (pf, qf) = (rational::to_f64(&p), rational::to_f64(&q));
        Datum::from_fn(&[1, 1], &[1, 2], &[one / p, one / q], &[one / rr - one, one], |i, j| {
            Some(match (i, j) {
                (0, 0) => DMatrix::from_element(1, 1, pf),
                (1, 0) => DMatrix::from_element(1, 1, qf),
                (0, 1) => DMatrix::from_column_slice(2, 1, &[pf, 0.0]),
                _ => DMatrix::from_column_slice(2, 1, &[0.0, qf]),
            })
        })
        .unwrap()
    }

    fn log_cs2(s: f64) -> f64 {
        if (s - 1.0).abs() < 1e-15 {
            return 0.0;
        }
        let sp = s / (s - 1.0);
        s.abs().ln() / s - sp.abs().ln() / sp
    }

    #[test]
    fn objective_arithmetic() {
        let id = Datum::identity(1);
        assert_eq!(dg_objective(&id, &[scalar(1.0)], &[scalar(1.0)]), 0.0);
        let v = dg_objective(&id, &[scalar(2.0)], &[scalar(0.5)]);
        assert!((v + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn feasibility_on_identity() {
        let id = Datum::identity(2);
        let i2 = SpdOperator::identity(2);
        assert!(is_feasible(&id, &[i2.clone()], &[i2.clone()], 1e-12));
        assert!(!is_feasible(&id, &[i2.clone()], &[SpdOperator::scaled_identity(2, 2.0)], 1e-12));
    }

    #[test]
    fn certificate_examples() {
        let id = Datum::identity(1);
        let ext = Extremizers::new(&id, vec![scalar(1.0)], vec![scalar(1.0)], DMatrix::identity(1, 1)).unwrap();
        let cert = certify(&id, &ext, 1e-12);
        assert_eq!(cert.verdict, Verdict::CertifiedOptimal);
        let ext = Extremizers::new(&id, vec![scalar(2.0)], vec![scalar(1.0)], DMatrix::from_element(1, 1, 0.5)).unwrap();
        let cert = certify(&id, &ext, 1e-6);
        assert_eq!(cert.verdict, Verdict::FeasibleOnly);
        assert!((cert.complementarity - 0.5).abs() < 1e-15);
        assert!((cert.value + 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_solves_to_zero() {
        let rep = compute_dg(&Datum::identity(2), &SolveOptions::default()).unwrap();
        assert!(rep.is_certified());
        assert!(rep.dg_value.as_f64().abs() < 1e-9);
    }

    #[test]
    fn reverse_young_value_and_certificate() {
        let datum = reverse_young_1("2/3", "2/3", "1/2");
        let rep = compute_dg(&datum, &SolveOptions::default()).unwrap();
        let log_c = 0.5 * (log_cs2(2.0 / 3.0) * 2.0 - log_cs2(0.5));
        assert!((log_c.exp().powi(2) - 64.0 / 27.0).abs() < 1e-12);
        assert!(rep.is_certified(), "{:?}", rep.certificate);
        assert!((rep.dg_value.as_f64() + log_c).abs() < 1e-6, "{}", rep.dg_value.as_f64());
    }

    #[test]
    fn dual_extremizers_certify() {
        let datum = reverse_young_1("4/5", "2/3", "4/7");
        let rep = compute_dg(&datum, &SolveOptions::default()).unwrap();
        let ext = rep.extremizers.unwrap();
        let dual = dual_extremizers(&datum, &ext);
        let cert = certify(&datum.dual(), &dual, 1e-6);
        assert_eq!(cert.verdict, Verdict::CertifiedOptimal, "{cert:?}");
        assert!((cert.value - rep.dg_value.as_f64()).abs() < 1e-9);
    }

    #[test]
    fn scaling_failure_is_infinite() {
        let one = Rational::from_integer(1);
        let datum =
            Datum::from_fn(&[1, 1], &[1], &[one, one], &[one], |_, _| Some(DMatrix::from_element(1, 1, 1.0))).unwrap();
        let rep = compute_dg(&datum, &SolveOptions::default()).unwrap();
        assert!(!rep.dg_value.is_finite());
        assert!(rep.extremizers.is_none());
    }

    #[test]
    fn independent_constant_single_input() {
        // With k = 1 and c = 1 the coupling set is a point, so M_g = D_g.
        let one = Rational::from_integer(1);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let datum = Datum::from_fn(&[2], &[2], &[one], &[one], |_, _| Some(b.clone())).unwrap();
        let mg = compute_mg(&datum, &SolveOptions::default()).unwrap();
        let dg = compute_dg(&datum, &SolveOptions::default()).unwrap().dg_value.as_f64();
        assert!((mg - dg).abs() < 1e-8);
        assert!((dg + 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn independent_constant_dominates_scaled_dg() {
        // The independent coupling loses to the optimal one after the c_i⁻¹
        // rescaling, so M_g ≥ D_g + Σ c_i dim(E_i) log c_i.
        let datum = reverse_young_1("2/3", "2/3", "1/2");
        let opts = SolveOptions::default();
        let mg = compute_mg(&datum, &opts).unwrap();
        let dg = compute_dg(&datum, &opts).unwrap().dg_value.as_f64();
        let shift: f64 = datum.c_f64().iter().map(|c| c * c.ln()).sum();
        assert!(mg >= dg + shift - 1e-8, "{mg} vs {}", dg + shift);
    }

    #[test]
    fn entropy_routes_agree_on_sum_datum() {
        let one = Rational::from_integer(1);
        let datum =
            Datum::from_fn(&[1, 1], &[1], &[one, one], &[one], |_, _| Some(DMatrix::from_element(1, 1, 1.0))).unwrap();
        let ks = [scalar(1.0), scalar(1.0)];
        let check = entropic_consistency(&datum, &ks, &Coupling::independent(&ks)).unwrap();
        let half_log_2pie = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((check.lhs_determinant + 0.5 * 2f64.ln()).abs() < 1e-14);
        // Scaling fails here (2 ≠ 1), so the routes differ by one copy of ½log(2πe).
        assert!((check.lhs_entropy - check.lhs_determinant - half_log_2pie).abs() < 1e-14);
    }

    #[test]
    fn extremizer_json_round_trip() {
        let datum = reverse_young_1("2/3", "2/3", "1/2");
        let rep = compute_dg(&datum, &SolveOptions { restarts: 1, ..Default::default() }).unwrap();
        let ext = rep.extremizers.unwrap();
        let back = Extremizers::from_json_value(&ext.to_json_value(), &datum).unwrap();
        assert_eq!(back, ext);
    }
}
