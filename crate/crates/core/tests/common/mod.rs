//! Random instance generators and closed-form oracles shared by the integration tests.
#![allow(dead_code)]

use frbl::coupling::Coupling;
use frbl::datum::Datum;
use frbl::operator::SpdOperator;
use frbl::rational::Rational;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn q(p: i64, d: i64) -> Rational {
    Rational::new(p, d)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let qr = gaussian(n, n, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the distribution is Haar.
    DMatrix::from_fn(n, n, |a, b| q[(a, b)] * r[(b, b)].signum())
}

pub fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, rng);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2
}

/// Random composition of n into positive parts.
pub fn random_split(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut parts = Vec::new();
    let mut left = n;
    while left > 0 {
        let p = rng.random_range(1..=left);
        parts.push(p);
        left -= p;
    }
    parts
}

pub fn row_blocks(m: &DMatrix<f64>, sizes: &[usize]) -> Vec<DMatrix<f64>> {
    let mut off = 0;
    sizes
        .iter()
        .map(|&s| {
            let b = m.rows(off, s).into_owned();
            off += s;
            b
        })
        .collect()
}

pub fn pick<T: Copy>(options: &[T], rng: &mut impl Rng) -> T {
    options[rng.random_range(0..options.len())]
}

const WEIGHTS: [(i64, i64); 5] = [(1, 3), (1, 2), (1, 1), (3, 2), (2, 1)];

fn random_weight(rng: &mut impl Rng) -> Rational {
    let (p, d) = pick(&WEIGHTS, rng);
    q(p, d)
}

/// Frames for a random geometric datum on ℝ^h: inputs are row blocks of one
/// orthogonal matrix with weight d1 + d2, outputs are row blocks of two more
/// orthogonal matrices with weights d1 and d2.
pub fn random_frames(rng: &mut impl Rng) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<Rational>, Vec<Rational>) {
    let h = rng.random_range(1..=4);
    let (d1, d2) = (random_weight(rng), random_weight(rng));
    let two_outputs = rng.random_bool(0.5);
    let c0 = if two_outputs { d1 + d2 } else { d1 };
    let us = row_blocks(&random_orthogonal(h, rng), &random_split(h, rng));
    let mut vs = row_blocks(&random_orthogonal(h, rng), &random_split(h, rng));
    let mut d = vec![d1; vs.len()];
    if two_outputs {
        let more = row_blocks(&random_orthogonal(h, rng), &random_split(h, rng));
        d.extend(std::iter::repeat_n(d2, more.len()));
        vs.extend(more);
    }
    let c = vec![c0; us.len()];
    (us, vs, c, d)
}

pub fn random_geometric(rng: &mut impl Rng) -> (Datum, DMatrix<f64>) {
    let (us, vs, c, d) = random_frames(rng);
    frbl::geometric::from_frames_with_sigma(&us, &vs, &c, &d).expect("frames satisfy the identity")
}

/// Vectors q_i and weights c_i with Σ c_i q_i q_iᵀ = id, from two orthonormal bases.
pub fn random_rank_one_frame(rng: &mut impl Rng) -> (Vec<DVector<f64>>, Vec<Rational>) {
    let n = rng.random_range(1..=3);
    let w = pick(&[q(1, 3), q(1, 2), q(2, 3)], rng);
    let (o1, o2) = (random_orthogonal(n, rng), random_orthogonal(n, rng));
    let vectors = o1.column_iter().chain(o2.column_iter()).map(|c| c.into_owned()).collect();
    let weights = std::iter::repeat_n(w, n).chain(std::iter::repeat_n(Rational::from_integer(1) - w, n)).collect();
    (vectors, weights)
}

/// Input for the Gaussian-kernel construction on ℝ^h, h = r + s: U spans r
/// directions of an orthonormal basis p_l, Q has eigenvalue c0 on the other s
/// and −d2 on the first t ≤ r; outputs are a rotated copy of the basis (weight
/// d1) and a rotated copy of p_t..p_h (weight d2), with c0 = d1 + d2.
pub struct KernelInput {
    pub q: DMatrix<f64>,
    pub u: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub c: Vec<Rational>,
    pub d: Vec<Rational>,
}

pub fn random_kernel_input(rng: &mut impl Rng) -> KernelInput {
    let r = rng.random_range(1..=2);
    let s = rng.random_range(1..=2);
    let t = rng.random_range(0..=r);
    let h = r + s;
    let (d1, d2) = (random_weight(rng), random_weight(rng));
    let c0 = d1 + d2;
    let p = random_orthogonal(h, rng).transpose();
    let col = |l: usize| p.column(l).into_owned();
    let mut qm = DMatrix::zeros(h, h);
    for l in r..h {
        qm += col(l) * col(l).transpose() * frbl::rational::to_f64(&c0);
    }
    for l in 0..t {
        qm -= col(l) * col(l).transpose() * frbl::rational::to_f64(&d2);
    }
    let pt = p.transpose();
    let u = row_blocks(&pt.rows(0, r).into_owned(), &random_split(r, rng));
    let v1 = random_orthogonal(h, rng) * &pt;
    let v2 = random_orthogonal(h - t, rng) * pt.rows(t, h - t);
    KernelInput { q: qm, c: vec![c0; u.len()], u, v: vec![v1, v2], d: vec![d1, d2] }
}

/// Random datum with surjective maps satisfying the scaling condition, with Gaussian blocks.
pub fn random_scaling_datum(rng: &mut impl Rng) -> Datum {
    loop {
        let k = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let in_dims: Vec<usize> = (0..k).map(|_| rng.random_range(1..=2)).collect();
        let out_dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..=2)).collect();
        let d: Vec<Rational> = (0..m).map(|_| random_weight(rng)).collect();
        let mut c: Vec<Rational> = (0..k - 1).map(|_| random_weight(rng)).collect();
        let out_total: Rational = d.iter().zip(&out_dims).map(|(d, &n)| d * Rational::from_integer(n as i64)).sum();
        let in_partial: Rational =
            c.iter().zip(&in_dims).map(|(c, &n)| c * Rational::from_integer(n as i64)).sum();
        let last = (out_total - in_partial) / Rational::from_integer(in_dims[k - 1] as i64);
        if last <= Rational::from_integer(0) {
            continue;
        }
        c.push(last);
        let blocks: Vec<DMatrix<f64>> =
            (0..k * m).map(|idx| gaussian(out_dims[idx % m], in_dims[idx / m], rng)).collect();
        let datum = Datum::from_fn(&in_dims, &out_dims, &c, &d, |i, j| Some(blocks[i * m + j].clone())).unwrap();
        if datum.validate().all_surjective() {
            return datum;
        }
    }
}

/// Random coupling together with its diagonal blocks.
pub fn random_coupling(dims: &[usize], rng: &mut impl Rng) -> (Vec<SpdOperator>, Coupling) {
    let n: usize = dims.iter().sum();
    coupling_from_matrix(dims, random_spd(n, rng))
}

pub fn coupling_from_matrix(dims: &[usize], k: DMatrix<f64>) -> (Vec<SpdOperator>, Coupling) {
    let mut off = 0;
    let blocks = dims
        .iter()
        .map(|&ni| {
            let b = k.view((off, off), (ni, ni)).into_owned();
            off += ni;
            SpdOperator::symmetrized(&b).unwrap()
        })
        .collect();
    let coupling = Coupling::new(k, dims, None).unwrap();
    (blocks, coupling)
}

/// C_s² = |s|^{1/s} / |s'|^{1/s'} with s' = s/(s−1); s = 1 gives 1.
pub fn sharp_young_sq(s: f64) -> f64 {
    if s == 1.0 {
        return 1.0;
    }
    let sp = s / (s - 1.0);
    s.abs().powf(1.0 / s) / sp.abs().powf(1.0 / sp)
}

/// D_g of the reverse Young datum: −n log C with C² = C_p² C_q² / C_r².
pub fn reverse_young_dg(p: f64, qq: f64, r: f64, n: usize) -> f64 {
    -0.5 * n as f64 * (sharp_young_sq(p) * sharp_young_sq(qq) / sharp_young_sq(r)).ln()
}

/// Σ_j d_j log det(A_j K A_jᵀ) for a correlation matrix `corr` between the
/// 1-D factors with variances `var`; `-inf` off the PSD cone.
pub fn coupling_value_1d(maps: &[DMatrix<f64>], d: &[f64], var: &[f64], corr: &DMatrix<f64>) -> f64 {
    let s = DMatrix::from_diagonal(&DVector::from_iterator(var.len(), var.iter().map(|v| v.sqrt())));
    let k = &s * corr * &s;
    let mut total = 0.0;
    for (a, dj) in maps.iter().zip(d) {
        let det = (a * &k * a.transpose()).determinant();
        if det <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += dj * det.ln();
    }
    total
}

fn corr3(r12: f64, r13: f64, r23: f64) -> Option<DMatrix<f64>> {
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    (det >= -1e-12).then(|| DMatrix::from_row_slice(3, 3, &[1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0]))
}

fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> + Clone {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n).map(move |a| (lo + a as f64 * step).clamp(-1.0, 1.0))
}

/// Grid maximum over correlations at step 1e-3. For three factors a coarse
/// pass (step 2e-2) localizes the maximizer of the concave objective first,
/// and each (ρ12, ρ13) line also tries the two boundary values of ρ23.
pub fn grid_max_1d(maps: &[DMatrix<f64>], d: &[f64], var: &[f64]) -> f64 {
    match var.len() {
        1 => coupling_value_1d(maps, d, var, &DMatrix::identity(1, 1)),
        2 => grid(-1.0, 1.0, 1e-3)
            .map(|r| coupling_value_1d(maps, d, var, &DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0])))
            .fold(f64::NEG_INFINITY, f64::max),
        3 => {
            let search = |lo: [f64; 3], hi: [f64; 3], step: f64| {
                let mut best = (f64::NEG_INFINITY, [0.0; 3]);
                for a in grid(lo[0], hi[0], step) {
                    for b in grid(lo[1], hi[1], step) {
                        // ρ23 ranges over ab ± sqrt((1 − a²)(1 − b²)); the exact
                        // endpoints catch optima on the boundary of the PSD cone.
                        let half = ((1.0 - a * a) * (1.0 - b * b)).max(0.0).sqrt();
                        let ends = [a * b - half, a * b + half].into_iter().filter(|e| (lo[2]..=hi[2]).contains(e));
                        for c in grid(lo[2], hi[2], step).chain(ends) {
                            if let Some(corr) = corr3(a, b, c.clamp(-1.0, 1.0)) {
                                let v = coupling_value_1d(maps, d, var, &corr);
                                if v > best.0 {
                                    best = (v, [a, b, c]);
                                }
                            }
                        }
                    }
                }
                best
            };
            let (_, x) = search([-1.0; 3], [1.0; 3], 2e-2);
            let lo = x.map(|v| ((v - 3e-2) * 1e3).round() / 1e3);
            let hi = x.map(|v| ((v + 3e-2) * 1e3).round() / 1e3);
            search(lo, hi, 1e-3).0
        }
        _ => panic!("grid search supports at most three factors"),
    }
}
