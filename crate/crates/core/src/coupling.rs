//! The inner concave problem: maximize Σ_j d_j log det(A_j K A_jᵀ) over
//! couplings K ∈ Π(K_1,…,K_k), where A_j = B_jΛ_c.
//!
//! The diagonal blocks are pinned by writing K = L R Lᵀ with L the block
//! Cholesky factor of ⊕K_i and R a correlation matrix whose diagonal blocks are
//! identities. Only the off-diagonal blocks of R are free. The objective is
//! smoothed by μ·log det R (equal to μ·log det K up to a constant) and
//! maximized by damped Newton steps, annealing μ towards zero.

use nalgebra::{DMatrix, DVector};

use crate::datum::{offsets, Datum};
use crate::error::{FrblError, Result};
use crate::linalg;
use crate::operator::{SpdOperator, SymmetricOperator};

/// PSD and prescribed-block tolerance for [`Coupling`].
pub const COUPLING_TOL: f64 = 1e-9;

/// A positive-semidefinite matrix on E_0 with known diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    ambient: SymmetricOperator,
    block_dims: Vec<usize>,
}

impl Coupling {
    /// Checks positive semidefiniteness and, if given, the prescribed blocks.
    pub fn new(matrix: DMatrix<f64>, block_dims: &[usize], prescribed: Option<&[SpdOperator]>) -> Result<Self> {
        let n: usize = block_dims.iter().sum();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(FrblError::InvalidArgument(format!(
                "coupling is {}x{} but the blocks add up to {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let ambient = SymmetricOperator::new(matrix)?;
        let scale = linalg::sym_norm(ambient.matrix()).max(f64::MIN_POSITIVE);
        if linalg::min_eig(ambient.matrix()) < -COUPLING_TOL * scale {
            return Err(FrblError::NotPositiveDefinite("coupling has a negative eigenvalue".into()));
        }
        let c = Self { ambient, block_dims: block_dims.to_vec() };
        if let Some(ks) = prescribed {
            if ks.len() != block_dims.len() {
                return Err(FrblError::InvalidArgument("one prescribed block per factor expected".into()));
            }
            for (i, k) in ks.iter().enumerate() {
                let dev = c.block_deviation(i, k.matrix());
                if dev > COUPLING_TOL {
                    return Err(FrblError::InvalidArgument(format!(
                        "coupling block {} deviates from the prescribed block by {dev:e}",
                        i + 1
                    )));
                }
            }
        }
        Ok(c)
    }

    /// The block-diagonal (independent) coupling ⊕K_i.
    pub fn independent(blocks: &[SpdOperator]) -> Self {
        let mats: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.matrix().clone()).collect();
        Self {
            ambient: SymmetricOperator::symmetrized(&linalg::block_diag(&mats)),
            block_dims: blocks.iter().map(|b| b.dim()).collect(),
        }
    }

    pub(crate) fn from_parts(matrix: &DMatrix<f64>, block_dims: &[usize]) -> Self {
        Self { ambient: SymmetricOperator::symmetrized(matrix), block_dims: block_dims.to_vec() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.ambient.matrix()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let off = offsets(&self.block_dims)[i];
        let n = self.block_dims[i];
        self.matrix().view((off, off), (n, n)).into_owned()
    }

    /// Relative deviation ‖K_ii − target‖ / ‖target‖.
    pub fn block_deviation(&self, i: usize, target: &DMatrix<f64>) -> f64 {
        let diff = self.block(i) - target;
        linalg::sym_norm(&diff) / linalg::sym_norm(target).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOptions {
    /// Barrier weights, applied in order with warm starts.
    pub mu_schedule: Vec<f64>,
    /// Stopping threshold on the off-diagonal gradient norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self { mu_schedule: default_mu_schedule(), tol: 1e-8, max_iter: 10_000 }
    }
}

pub fn default_mu_schedule() -> Vec<f64> {
    (0..=8).map(|e| 10f64.powi(-e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSolution {
    pub coupling: Coupling,
    /// Σ_j d_j log det(A_j K A_jᵀ), without the barrier.
    pub value: f64,
    pub barrier_mu: f64,
    pub grad_residual: f64,
    pub iterations: usize,
    /// Smoothed objective after every accepted step, one list per μ.
    pub trace: Vec<Vec<f64>>,
}

/// Σ_j d_j log det(A_j K A_jᵀ); `-inf` when a pushforward is singular.
pub fn objective(datum: &Datum, k: &Coupling) -> f64 {
    let d = datum.d_f64();
    let mut total = 0.0;
    for (j, a) in datum.scaled_maps().iter().enumerate() {
        let m = a * k.matrix() * a.transpose();
        match linalg::logdet_spd(&m) {
            Some(v) => total += d[j] * v,
            None => return f64::NEG_INFINITY,
        }
    }
    total
}

pub fn maximize_coupling(datum: &Datum, k_list: &[SpdOperator], opts: &CouplingOptions) -> Result<CouplingSolution> {
    if k_list.len() != datum.k() || k_list.iter().zip(datum.input_dims()).any(|(k, &n)| k.dim() != n) {
        return Err(FrblError::InvalidArgument("K_list must hold one block per factor with matching dimension".into()));
    }
    let rep = datum.validate();
    if let Some(j) = rep.surjective.iter().position(|s| !s) {
        return Err(FrblError::Finiteness(format!("B_{} is not surjective", j + 1)));
    }
    let factors: Vec<DMatrix<f64>> =
        k_list.iter().map(|k| linalg::cholesky(k.matrix()).expect("SpdOperator has a Cholesky factor")).collect();
    let engine = InnerEngine::new(&datum.scaled_maps(), &datum.d_f64(), datum.input_dims(), &factors);
    let mut r = DMatrix::identity(engine.n, engine.n);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    let schedule = if opts.mu_schedule.is_empty() { vec![0.0] } else { opts.mu_schedule.clone() };
    for &mu in &schedule {
        let run = engine.newton(&r, mu, opts.tol, opts.max_iter).ok_or_else(|| {
            FrblError::NotPositiveDefinite("pushforward covariances are numerically singular at the independent coupling".into())
        })?;
        iterations += run.iterations;
        trace.push(run.trace.clone());
        r = run.r.clone();
        let exhausted = !run.converged;
        last = Some((run, mu));
        if exhausted {
            break;
        }
    }
    let (run, mu) = last.expect("schedule is non-empty");
    let k = engine.coupling_from(&run.r);
    let sol = CouplingSolution {
        value: run.eval.value,
        coupling: k,
        barrier_mu: mu,
        grad_residual: run.eval.grad.norm(),
        iterations,
        trace,
    };
    if run.converged {
        Ok(sol)
    } else {
        Err(FrblError::CouplingConvergence(Box::new(sol)))
    }
}

/// Evaluation of the smoothed objective at a correlation matrix R.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    /// Σ d_j log det M_j + μ log det R.
    pub phi: f64,
    /// Σ d_j log det M_j.
    pub value: f64,
    /// Gradient with respect to the free entries of R.
    pub grad: DVector<f64>,
    /// d_j A'_jᵀ M_j⁻¹ A'_j for each j.
    pub w: Vec<DMatrix<f64>>,
    pub r_inv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonRun {
    pub r: DMatrix<f64>,
    pub eval: Eval,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// The inner problem in correlation coordinates for fixed factors L_i.
pub(crate) struct InnerEngine {
    pub n: usize,
    dims: Vec<usize>,
    d: Vec<f64>,
    /// A'_j = A_j L.
    maps: Vec<DMatrix<f64>>,
    l: DMatrix<f64>,
    params: Vec<(usize, usize)>,
}

impl InnerEngine {
    pub fn new(scaled_maps: &[DMatrix<f64>], d: &[f64], dims: &[usize], factors: &[DMatrix<f64>]) -> Self {
        let n: usize = dims.iter().sum();
        let l = linalg::block_diag(factors);
        let owner: Vec<usize> = dims.iter().enumerate().flat_map(|(i, &ni)| std::iter::repeat_n(i, ni)).collect();
        let mut params = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if owner[a] != owner[b] {
                    params.push((a, b));
                }
            }
        }
        Self {
            n,
            dims: dims.to_vec(),
            d: d.to_vec(),
            maps: scaled_maps.iter().map(|a| a * &l).collect(),
            l,
            params,
        }
    }

    pub fn coupling_from(&self, r: &DMatrix<f64>) -> Coupling {
        Coupling::from_parts(&(&self.l * r * self.l.transpose()), &self.dims)
    }

    pub fn evaluate(&self, r: &DMatrix<f64>, mu: f64) -> Option<Eval> {
        let chol_r = linalg::cholesky(r)?;
        let logdet_r = 2.0 * chol_r.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let r_inv = if mu > 0.0 { linalg::inv_spd(r)? } else { DMatrix::zeros(self.n, self.n) };
        let mut value = 0.0;
        let mut w = Vec::with_capacity(self.maps.len());
        for (a, &dj) in self.maps.iter().zip(&self.d) {
            let m = a * r * a.transpose();
            let m_inv = linalg::inv_spd(&m)?;
            value += dj * linalg::logdet_spd(&m)?;
            w.push(linalg::sym(&(a.transpose() * m_inv * a)) * dj);
        }
        if !value.is_finite() {
            return None;
        }
        let mut g = &r_inv * mu;
        for wj in &w {
            g += wj;
        }
        let grad = DVector::from_iterator(self.params.len(), self.params.iter().map(|&(a, b)| 2.0 * g[(a, b)]));
        Some(Eval { phi: value + mu * logdet_r, value, grad, w, r_inv })
    }

    /// Negated Hessian of the smoothed objective in the free entries.
    fn neg_hessian(&self, e: &Eval, mu: f64) -> DMatrix<f64> {
        let p = self.params.len();
        let mut h = DMatrix::zeros(p, p);
        let term = |m: &DMatrix<f64>, (a, b): (usize, usize), (c, d): (usize, usize)| {
            2.0 * (m[(b, c)] * m[(a, d)] + m[(b, d)] * m[(a, c)])
        };
        for s in 0..p {
            for t in s..p {
                let (ps, pt) = (self.params[s], self.params[t]);
                let mut v = 0.0;
                for (wj, dj) in e.w.iter().zip(&self.d) {
                    // w carries the weight d_j once; the Hessian needs it once, not squared.
                    v += term(wj, ps, pt) / dj;
                }
                v += mu * term(&e.r_inv, ps, pt);
                h[(s, t)] = v;
                h[(t, s)] = v;
            }
        }
        h
    }

    fn step(&self, r: &DMatrix<f64>, dir: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let mut out = r.clone();
        for (&(a, b), &v) in self.params.iter().zip(dir.iter()) {
            out[(a, b)] += t * v;
            out[(b, a)] += t * v;
        }
        out
    }

    /// Damped Newton ascent at fixed μ, warm-started at `r0` (or at the
    /// independent coupling when `r0` is not evaluable). `None` when neither
    /// evaluates in floating point, which happens for badly conditioned factors.
    pub fn newton(&self, r0: &DMatrix<f64>, mu: f64, tol: f64, max_iter: usize) -> Option<NewtonRun> {
        let mut r = r0.clone();
        let mut eval = match self.evaluate(&r, mu) {
            Some(e) => e,
            None => {
                r = DMatrix::identity(self.n, self.n);
                self.evaluate(&r, mu)?
            }
        };
        let mut trace = vec![eval.phi];
        if self.params.is_empty() {
            return Some(NewtonRun { r, eval, iterations: 0, converged: true, trace });
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            if eval.grad.norm() <= tol {
                converged = true;
                break;
            }
            let dir = nalgebra::Cholesky::new(self.neg_hessian(&eval, mu)).map(|c| c.solve(&eval.grad));
            let candidates: Vec<DVector<f64>> = match dir {
                Some(nd) if nd.dot(&eval.grad) > 0.0 => {
                    // Newton decrement below rounding of phi: the gradient left
                    // over sits in stiff barrier directions and gains nothing.
                    if nd.dot(&eval.grad) <= 1e-14 * eval.phi.abs().max(1.0) {
                        converged = true;
                        break;
                    }
                    vec![nd, eval.grad.clone()]
                }
                _ => vec![eval.grad.clone()],
            };
            let mut accepted = None;
            for dir in &candidates {
                let slope = dir.dot(&eval.grad);
                if slope <= 1e-30 {
                    continue;
                }
                let mut t = 1.0;
                for _ in 0..80 {
                    let trial = self.step(&r, dir, t);
                    if let Some(e) = self.evaluate(&trial, mu) {
                        if e.phi >= eval.phi + 1e-4 * t * slope {
                            accepted = Some((trial, e));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
                // Newton decrement below rounding of phi: nothing left to gain.
                if slope <= 1e-13 * eval.phi.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            iterations += 1;
            match accepted {
                Some((nr, ne)) => {
                    let gain = ne.phi - eval.phi;
                    r = nr;
                    eval = ne;
                    trace.push(eval.phi);
                    if gain <= 1e-15 * eval.phi.abs().max(1.0) && eval.grad.norm() <= tol.sqrt() {
                        converged = true;
                        break;
                    }
                }
                None => break,
            }
            if converged {
                break;
            }
        }
        Some(NewtonRun { r, eval, iterations, converged, trace })
    }
}
