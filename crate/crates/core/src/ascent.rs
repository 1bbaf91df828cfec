//! Outer ascent in K-space.
//!
//! θ_μ(K) = Σ c_i log det K_i − max_R [Σ_j d_j log det(A_j L R Lᵀ A_jᵀ) + μ log det R],
//! with K_i = L_i L_iᵀ. The envelope gradient, pulled back through L_i, is
//! S_i = c_i I − W_ii − μ((R⁻¹)_ii − I) with W = Σ_j d_j A'_jᵀ M_j⁻¹ A'_j.
//! Steps follow the affine-invariant geodesic K_i ← L_i exp(t S_i) L_iᵀ.
//!
//! With `independent` set the coupling is frozen at R = I, which turns the
//! same loop into the ascent for the independent-coupling constant.

use nalgebra::DMatrix;

use crate::coupling::{Eval, InnerEngine};
use crate::linalg;

/// Consecutive accepted steps without a measurable gain before a stage stops.
const STALL_STEPS: usize = 20;

#[derive(Debug, Clone)]
pub(crate) struct Settings {
    pub mu_schedule: Vec<f64>,
    pub final_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub independent: bool,
    /// Divergence threshold on θ/2.
    pub value_cap: f64,
    pub cond_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Outcome {
    Converged,
    Exhausted,
    Diverged(String),
}

#[derive(Debug, Clone)]
pub(crate) struct AscentResult {
    pub factors: Vec<DMatrix<f64>>,
    /// Final coupling K = L R Lᵀ.
    pub coupling: DMatrix<f64>,
    pub theta: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub outcome: Outcome,
}

struct Point {
    factors: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
    eval: Eval,
    theta: f64,
    grad: Vec<DMatrix<f64>>,
    gnorm2: f64,
}

pub(crate) struct Ascent<'a> {
    maps: &'a [DMatrix<f64>],
    c: &'a [f64],
    d: &'a [f64],
    dims: &'a [usize],
    settings: &'a Settings,
}

impl<'a> Ascent<'a> {
    pub fn new(maps: &'a [DMatrix<f64>], c: &'a [f64], d: &'a [f64], dims: &'a [usize], settings: &'a Settings) -> Self {
        Self { maps, c, d, dims, settings }
    }

    fn point(&self, factors: Vec<DMatrix<f64>>, r_warm: &DMatrix<f64>, mu: f64) -> Option<Point> {
        let engine = InnerEngine::new(self.maps, self.d, self.dims, &factors);
        let (r, eval) = if self.settings.independent {
            let r = DMatrix::identity(engine.n, engine.n);
            let eval = engine.evaluate(&r, 0.0)?;
            (r, eval)
        } else {
            let run = engine.newton(r_warm, mu, self.settings.inner_tol, 500)?;
            (run.r, run.eval)
        };
        let logdet_k: Vec<f64> =
            factors.iter().map(|l| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()).collect();
        let theta = self.c.iter().zip(&logdet_k).map(|(c, l)| c * l).sum::<f64>() - eval.phi;
        if !theta.is_finite() {
            return None;
        }
        let mut w = DMatrix::zeros(engine.n, engine.n);
        for wj in &eval.w {
            w += wj;
        }
        let mut grad = Vec::with_capacity(self.dims.len());
        let mut off = 0;
        let mut gnorm2 = 0.0;
        for (&n, &ci) in self.dims.iter().zip(self.c) {
            let mut s = DMatrix::identity(n, n) * ci - w.view((off, off), (n, n));
            if !self.settings.independent && mu > 0.0 {
                s -= (eval.r_inv.view((off, off), (n, n)) - DMatrix::<f64>::identity(n, n)) * mu;
            }
            let s = linalg::sym(&s);
            gnorm2 += s.norm_squared();
            grad.push(s);
            off += n;
        }
        Some(Point { factors, r, eval, theta, grad, gnorm2 })
    }

    fn moved(&self, p: &Point, t: f64) -> Option<Vec<DMatrix<f64>>> {
        p.factors
            .iter()
            .zip(&p.grad)
            .map(|(l, s)| {
                let e = linalg::sym_exp(&(s * t));
                linalg::cholesky(&e).map(|ce| l * ce)
            })
            .collect()
    }

    /// Rescales all factors so that the mean log-eigenvalue of ⊕K_i is zero.
    /// θ is unchanged under the scaling condition.
    fn normalize(factors: &mut [DMatrix<f64>]) {
        let n: usize = factors.iter().map(|l| l.nrows()).sum();
        if n == 0 {
            return;
        }
        let total: f64 = factors.iter().map(|l| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()).sum();
        let s = (-total / (2.0 * n as f64)).exp();
        for l in factors.iter_mut() {
            *l *= s;
        }
    }

    fn condition(factors: &[DMatrix<f64>]) -> f64 {
        let blocks: Vec<DMatrix<f64>> = factors.iter().map(|l| l * l.transpose()).collect();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for b in &blocks {
            let (vals, _) = linalg::sym_eig(b);
            if let (Some(a), Some(z)) = (vals.iter().next(), vals.iter().last()) {
                lo = lo.min(*a);
                hi = hi.max(*z);
            }
        }
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn run(&self, init: Vec<DMatrix<f64>>) -> AscentResult {
        let s = self.settings;
        let n: usize = self.dims.iter().sum();
        let cmax = self.c.iter().cloned().fold(1.0f64, f64::max);
        let schedule: Vec<f64> =
            if s.independent || s.mu_schedule.is_empty() { vec![0.0] } else { s.mu_schedule.clone() };
        let mut factors = init;
        Self::normalize(&mut factors);
        let mut r = DMatrix::identity(n, n);
        let mut iterations = 0;
        let mut outcome = Outcome::Converged;
        let mut current: Option<Point> = None;
        'stages: for (stage, &mu) in schedule.iter().enumerate() {
            let last_stage = stage + 1 == schedule.len();
            let stage_tol = if last_stage { s.final_tol } else { s.final_tol.max(1e-2 * mu) };
            let mut p = match self.point(factors.clone(), &r, mu) {
                Some(p) => p,
                None => {
                    outcome = Outcome::Diverged("objective undefined at the starting point".into());
                    break;
                }
            };
            let mut t = 1.0 / cmax;
            let mut stalled = 0;
            loop {
                if p.gnorm2.sqrt() <= stage_tol {
                    break;
                }
                if iterations >= s.max_outer {
                    outcome = Outcome::Exhausted;
                    current = Some(p);
                    break 'stages;
                }
                iterations += 1;
                let mut tt = t;
                let mut accepted = None;
                for _ in 0..60 {
                    if let Some(f) = self.moved(&p, tt) {
                        if let Some(q) = self.point(f, &p.r, mu) {
                            if q.theta >= p.theta + 1e-4 * tt * p.gnorm2 {
                                accepted = Some(q);
                                break;
                            }
                        }
                    }
                    tt *= 0.5;
                }
                let Some(mut q) = accepted else {
                    // No ascent possible at this precision; the stage is as converged as it gets.
                    break;
                };
                let sy: f64 = p.grad.iter().zip(&q.grad).map(|(a, b)| -(a * tt).dot(&(b - a))).sum();
                let ss = tt * tt * p.gnorm2;
                t = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e6) } else { (tt * 2.0).min(1e6) };
                Self::normalize(&mut q.factors);
                // Steps that no longer move theta above rounding level end the stage.
                if q.theta - p.theta <= 1e-14 * q.theta.abs().max(1.0) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                let value = 0.5 * q.theta;
                let cond = Self::condition(&q.factors);
                p = q;
                if value > s.value_cap || cond > s.cond_cap {
                    outcome = Outcome::Diverged(format!("value {value:.3e}, condition number {cond:.3e}"));
                    current = Some(p);
                    break 'stages;
                }
                if stalled >= STALL_STEPS {
                    break;
                }
            }
            factors = p.factors.clone();
            r = p.r.clone();
            current = Some(p);
        }
        match current {
            Some(p) => {
                let k = {
                    let l = linalg::block_diag(&p.factors);
                    linalg::sym(&(&l * &p.r * l.transpose()))
                };
                let grad_norm = p.gnorm2.sqrt();
                let theta_plain = p.theta + p.eval.phi - p.eval.value;
                AscentResult { factors: p.factors, coupling: k, theta: theta_plain, grad_norm, iterations, outcome }
            }
            None => AscentResult {
                coupling: linalg::block_diag(&factors.iter().map(|l| l * l.transpose()).collect::<Vec<_>>()),
                factors,
                theta: f64::NAN,
                grad_norm: f64::NAN,
                iterations,
                outcome,
            },
        }
    }
}
