//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` are implemented as stated and are
//! known to fail for a mathematical reason given next to the entry; the run
//! fails if any other criterion fails or if an expected failure starts passing.

mod common;

use std::time::Instant;

use common::*;
use frbl::catalog;
use frbl::coupling::{maximize_coupling, CouplingOptions};
use frbl::datum::Datum;
use frbl::decompose::verify_additivity;
use frbl::finiteness::{
    check_finiteness, greedy_index_sets, random_admissible_basis, subspace_counts, Budget, Finiteness,
    ProductSubspace,
};
use frbl::geometric::{from_frames, gauss_kernel_datum, geometric_extremizers, is_geometric};
use frbl::operator::{SpdOperator, SymmetricOperator};
use frbl::rational::{self, Rational};
use frbl::solver::{
    certify, compute_dg, compute_mg, dual_extremizers, entropic_consistency, is_feasible, verify_duality,
    Extremizers, SolveOptions, Verdict,
};
use nalgebra::DMatrix;
use rand::Rng;

/// M_g is a supremum over a subset of the couplings allowed for D_g after the
/// c_i⁻¹ rescaling, so the entropy scaling property bounds it from below:
/// M_g ≥ D_g + Σ c_i dim(E_i) log c_i. The stated upper bound fails whenever
/// some c_i ≠ 1 and the constraint is not tight.
const EXPECTED_FAILURES: &[&str] = &["9b"];

type Outcome = (bool, String);

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn dg(datum: &Datum) -> Result<f64, String> {
    compute_dg(datum, &opts()).map(|r| r.dg_value.as_f64()).map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let cases = [((2, 3), (2, 3), (1, 2), 1), ((2, 3), (2, 3), (1, 2), 2), ((4, 5), (2, 3), (4, 7), 1)];
    let mut worst: f64 = 0.0;
    for (p, qq, r, n) in cases {
        let f = |(a, b): (i64, i64)| a as f64 / b as f64;
        let entry = catalog::reverse_young(q(p.0, p.1), q(qq.0, qq.1), q(r.0, r.1), n).unwrap();
        let rep = match compute_dg(&entry.datum, &opts()) {
            Ok(r) => r,
            Err(e) => return (false, format!("{}: {e}", entry.name)),
        };
        if rep.verdict() != Some(Verdict::CertifiedOptimal) {
            return (false, format!("{}: verdict {:?}", entry.name, rep.verdict()));
        }
        let err = (rep.dg_value.as_f64() - reverse_young_dg(f(p), f(qq), f(r), n)).abs();
        worst = worst.max(err);
    }
    (worst <= 1e-5, format!("3 cases certified, max |D_g - oracle| = {worst:.2e} (tol 1e-5)"))
}

fn criterion_2() -> Outcome {
    let mut data: Vec<(String, Datum)> = catalog::standard().into_iter().map(|e| (e.name, e.datum)).collect();
    let mut rng = rng(2);
    for s in 0..20 {
        data.push((format!("random geometric #{s}"), random_geometric(&mut rng).0));
    }
    let mut worst: f64 = 0.0;
    for (name, datum) in &data {
        match verify_duality(datum, 1e-5, &opts()) {
            Ok(check) => worst = worst.max(check.gap.abs()),
            Err(e) => return (false, format!("{name}: {e}")),
        }
    }
    (worst <= 1e-5, format!("{} data, max |D_g - D_g(dual)| = {worst:.2e} (tol 1e-5)", data.len()))
}

fn criterion_3() -> Outcome {
    let mut rng = rng(3);
    let mut data = Vec::new();
    for _ in 0..10 {
        let (us, vs, c, d) = random_frames(&mut rng);
        data.push(("from_frames", from_frames(&us, &vs, &c, &d).unwrap()));
        let (vectors, weights) = random_rank_one_frame(&mut rng);
        data.push(("barthe_rank_one", catalog::barthe_rank_one(&vectors, &weights).unwrap().datum));
        let kin = random_kernel_input(&mut rng);
        let qop = SymmetricOperator::new(kin.q).unwrap();
        data.push(("gauss_kernel_datum", gauss_kernel_datum(&qop, &kin.u, &kin.v, &kin.c, &kin.d).unwrap()));
    }
    let mut worst: f64 = 0.0;
    for (kind, datum) in &data {
        match dg(datum) {
            Ok(v) => worst = worst.max(v.abs()),
            Err(e) => return (false, format!("{kind}: {e}")),
        }
    }
    (worst <= 1e-6, format!("{} geometric data, max |D_g| = {worst:.2e} (tol 1e-6)", data.len()))
}

fn scale_u(datum: &Datum, ext: &Extremizers, j: usize, s: f64) -> Extremizers {
    let mut u = ext.u.clone();
    u[j] = u[j].scale(s);
    Extremizers::new(datum, ext.v.clone(), u, ext.pi.matrix().clone()).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = rng(4);
    let mut cases: Vec<(String, Datum, DMatrix<f64>)> = Vec::new();
    for s in 0..10 {
        let (datum, sigma) = random_geometric(&mut rng);
        cases.push((format!("random geometric #{s}"), datum, sigma));
    }
    let lw = catalog::loomis_whitney().unwrap().datum;
    cases.push(("loomis_whitney".into(), lw.clone(), DMatrix::identity(3, 3)));
    let mut checked = 0;
    for (name, datum, sigma) in &cases {
        if is_geometric(datum, sigma, 1e-9).is_err() {
            return (false, format!("{name}: Σ does not witness geometry"));
        }
        let ext = geometric_extremizers(datum, sigma).unwrap();
        let cert = certify(datum, &ext, 1e-9);
        if cert.verdict != Verdict::CertifiedOptimal {
            return (false, format!("{name}: exact extremizers give {:?}", cert.verdict));
        }
        for j in 0..datum.m() {
            let bad = certify(datum, &scale_u(datum, &ext, j, 1.1), 1e-9);
            if bad.verdict == Verdict::CertifiedOptimal {
                return (false, format!("{name}: scaling U_{} by 1.1 still certifies", j + 1));
            }
            checked += 1;
        }
        let dual = certify(&datum.dual(), &dual_extremizers(datum, &ext), 1e-9);
        if dual.verdict != Verdict::CertifiedOptimal {
            return (false, format!("{name}: dual extremizers give {:?}", dual.verdict));
        }
    }
    // Closed-form non-geometric extremizers and their duals.
    let mut hints = 0;
    for entry in catalog::standard() {
        if let Some(hint) = &entry.extremal_hint {
            let c = certify(&entry.datum, hint, 1e-6);
            let d = certify(&entry.datum.dual(), &dual_extremizers(&entry.datum, hint), 1e-6);
            if !c.is_certified() || !d.is_certified() {
                return (false, format!("{}: hint {:?}, dual {:?}", entry.name, c.verdict, d.verdict));
            }
            hints += 1;
        }
    }
    (
        true,
        format!(
            "{} geometric data certify at 1e-9, {checked} perturbed U_j rejected, duals certify; {hints} closed-form hints and duals certify",
            cases.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = rng(5);
    let copts = CouplingOptions::default();
    let mut worst: f64 = 0.0;
    let cases = 12;
    for s in 0..cases {
        let n = 2 + s % 2;
        let m = rng.random_range(1..=2);
        let out_dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..=n)).collect();
        let d: Vec<Rational> = (0..m).map(|_| pick(&[q(1, 2), q(1, 1), q(2, 1)], &mut rng)).collect();
        let c: Vec<Rational> = (0..n).map(|_| pick(&[q(1, 2), q(1, 1), q(3, 2)], &mut rng)).collect();
        let blocks: Vec<DMatrix<f64>> = (0..n * m).map(|idx| gaussian(out_dims[idx % m], 1, &mut rng)).collect();
        let datum = Datum::from_fn(&vec![1; n], &out_dims, &c, &d, |i, j| Some(blocks[i * m + j].clone())).unwrap();
        let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let k_list: Vec<SpdOperator> = var.iter().map(|&v| SpdOperator::scaled_identity(1, v)).collect();
        let sol = match maximize_coupling(&datum, &k_list, &copts) {
            Ok(s) => s,
            Err(e) => return (false, format!("case {s}: {e}")),
        };
        let oracle = grid_max_1d(&datum.scaled_maps(), &datum.d_f64(), &var);
        worst = worst.max((sol.value - oracle).abs());
    }
    let one = Rational::from_integer(1);
    let sum = Datum::from_fn(&[1, 1], &[1], &[one, one], &[one], |_, _| Some(DMatrix::from_element(1, 1, 1.0))).unwrap();
    let ids = vec![SpdOperator::identity(1); 2];
    let sum_value = maximize_coupling(&sum, &ids, &copts).map(|s| s.value).unwrap_or(f64::NAN);
    let sum_err = (sum_value - 4f64.ln()).abs();
    (
        worst <= 1e-4 && sum_err <= 1e-6,
        format!("{cases} 1-D instances, max |solver - grid| = {worst:.2e} (tol 1e-4); sum instance |value - log 4| = {sum_err:.2e} (tol 1e-6)"),
    )
}

fn same_kind(a: &Finiteness, b: &Finiteness) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

fn criterion_6() -> Outcome {
    let one = q(1, 1);
    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let mut infinite: Vec<(&str, Datum)> = vec![
        ("scaling violated", Datum::from_fn(&[1], &[1], &[one], &[q(2, 1)], |_, _| Some(scalar(1.0))).unwrap()),
        (
            "wide projection",
            Datum::from_fn(&[2], &[1], &[one], &[one], |_, _| Some(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))).unwrap(),
        ),
        (
            "zero map",
            Datum::from_fn(&[1, 1], &[1, 1], &[one, one], &[one, one], |i, j| (i == 1).then(|| scalar(1.0 + j as f64)))
                .unwrap(),
        ),
        (
            "zero block in sum",
            Datum::from_fn(&[1, 1], &[1], &[one, one], &[q(2, 1)], |i, _| (i == 0).then(|| scalar(1.0))).unwrap(),
        ),
    ];
    infinite.push(("dual of zero map", infinite[2].1.dual()));
    let budget = Budget::default();
    for (name, datum) in &infinite {
        let v = check_finiteness(datum, &budget);
        let Some(w) = v.witness() else {
            return (false, format!("{name}: no witness"));
        };
        if w.recheck(datum).slack >= Rational::from_integer(0) {
            return (false, format!("{name}: witness does not re-verify"));
        }
        if !same_kind(&v.verdict, &check_finiteness(&datum.dual(), &budget).verdict) {
            return (false, format!("{name}: dual verdict differs"));
        }
    }
    let entries = catalog::standard();
    for e in &entries {
        let v = check_finiteness(&e.datum, &budget);
        if v.verdict != Finiteness::Finite {
            return (false, format!("{}: {:?}", e.name, v.to_json_value()["verdict"]));
        }
        if !same_kind(&v.verdict, &check_finiteness(&e.datum.dual(), &budget).verdict) {
            return (false, format!("{}: dual verdict differs", e.name));
        }
    }
    (
        true,
        format!(
            "{} infinite data give re-verified witnesses, {} catalog data Finite, verdicts agree with duals",
            infinite.len(),
            entries.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let ry = catalog::reverse_young(q(2, 3), q(2, 3), q(1, 2), 1).unwrap().datum;
    // (name, first summand, second summand); T is the first summand.
    let sums = [
        ("reverse_young + holder", ry.clone(), catalog::holder(1, &[q(1, 3), q(2, 3)]).unwrap().datum),
        ("barthe_planar(3) + reverse_young", catalog::barthe_planar(3).unwrap().datum, ry),
        (
            "dual_reverse_young + identity",
            catalog::dual_reverse_young(q(4, 5), q(2, 3), q(4, 7), 1).unwrap().datum,
            Datum::identity(1),
        ),
    ];
    let mut worst_crit: f64 = 0.0;
    for (name, a, b) in &sums {
        let datum = &a.direct_sum(b);
        let first = a.total_dim();
        let t = ProductSubspace::coordinate(datum.input_dims(), (1u64 << first) - 1);
        if subspace_counts(datum, &t).slack != Rational::from_integer(0) {
            return (false, format!("{name}: summand is not critical"));
        }
        match verify_additivity(datum, &t, 1e-5, &opts()) {
            Ok(a) if a.critical => worst_crit = worst_crit.max(a.gap.abs()),
            Ok(_) => return (false, format!("{name}: not flagged critical")),
            Err(e) => return (false, format!("{name}: {e}")),
        }
    }
    let mut worst_sub = f64::NEG_INFINITY;
    let mut count = 0;
    for e in catalog::standard().into_iter().filter(|e| e.datum.total_dim() <= 3) {
        let n = e.datum.total_dim();
        for mask in 1..(1u64 << n) - 1 {
            let t = ProductSubspace::coordinate(e.datum.input_dims(), mask);
            match verify_additivity(&e.datum, &t, 1e-5, &opts()) {
                Ok(a) => worst_sub = worst_sub.max(a.gap),
                Err(err) => return (false, format!("{} mask {mask:b}: {err}", e.name)),
            }
            count += 1;
        }
    }
    (
        worst_crit <= 1e-5 && worst_sub <= 1e-5,
        format!(
            "critical splits max |gap| = {worst_crit:.2e}; {count} coordinate subspaces max D_g - D_g(T) - D_g(E_0/T) = {worst_sub:.2e} (tol 1e-5)"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = rng(8);
    let mut worst = f64::NEG_INFINITY;
    let mut tight: f64 = f64::INFINITY;
    for case in 0..200 {
        let datum = random_scaling_datum(&mut rng);
        let n = datum.total_dim();
        let c = datum.c_f64();
        let u: Vec<SpdOperator> =
            datum.output_dims().iter().map(|&m| SpdOperator::new(random_spd(m, &mut rng)).unwrap()).collect();
        let w: Vec<DMatrix<f64>> = datum.input_dims().iter().map(|&ni| random_spd(ni, &mut rng)).collect();
        let mut m = DMatrix::zeros(n, n);
        for ((a, dj), uj) in datum.scaled_maps().iter().zip(datum.d_f64()).zip(&u) {
            m += a.transpose() * uj.matrix() * a * dj;
        }
        let cw = block_diag(&w, &c);
        let cdiag = block_diag(&w.iter().map(|wi| DMatrix::identity(wi.nrows(), wi.nrows())).collect::<Vec<_>>(), &c);
        // V_i = W_i + s·id with s the smallest value making Θ = Σ c_i V_i − Σ d_j A_jᵀU_jA_j PSD,
        // found through the congruence by cdiag^{-1/2}; odd cases add slack.
        let inv_sqrt = cdiag.map(|x: f64| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
        let eig = (&inv_sqrt * (&m - &cw) * &inv_sqrt).symmetric_eigen();
        let (imax, s0) = eig.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let s = if case % 2 == 0 { s0 } else { s0 + rng.random_range(0.1..1.0) * s0.abs().max(1.0) };
        let Ok(v) = w
            .iter()
            .map(|wi| SpdOperator::symmetrized(&(wi + DMatrix::identity(wi.nrows(), wi.nrows()) * s)))
            .collect::<Result<Vec<_>, _>>()
        else {
            continue;
        };
        if !is_feasible(&datum, &v, &u, 1e-9) {
            return (false, format!("case {case}: constructed (V, U) is not feasible"));
        }
        let (blocks, coupling) = if case % 2 == 0 {
            // Coupling concentrated on the kernel direction of Θ.
            let kdir = &inv_sqrt * eig.eigenvectors.column(imax);
            let k = &kdir * kdir.transpose() + DMatrix::identity(n, n) * 1e-6;
            coupling_from_matrix(datum.input_dims(), k)
        } else {
            random_coupling(datum.input_dims(), &mut rng)
        };
        let kmat = coupling.matrix();
        let lhs: f64 = datum
            .scaled_maps()
            .iter()
            .zip(datum.d_f64())
            .zip(&u)
            .map(|((a, dj), uj)| dj * (a * kmat * a.transpose() * uj.matrix()).trace())
            .sum();
        let rhs: f64 = c.iter().zip(&v).zip(&blocks).map(|((ci, vi), ki)| ci * (vi.matrix() * ki.matrix()).trace()).sum();
        let rel = (lhs - rhs) / rhs.abs().max(1.0);
        worst = worst.max(rel);
        if case % 2 == 0 {
            tight = tight.min(-rel);
        }
    }
    (
        worst <= 1e-9,
        format!("200 random pairs, max relative (LHS - RHS) = {worst:.2e} (tol 1e-9); tightest boundary case {tight:.2e}"),
    )
}

/// Block-diagonal matrix with blocks c_i·M_i.
fn block_diag(blocks: &[DMatrix<f64>], c: &[f64]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for (b, ci) in blocks.iter().zip(c) {
        out.view_mut((off, off), b.shape()).copy_from(&(b * *ci));
        off += b.nrows();
    }
    out
}

fn criterion_9a() -> Outcome {
    let mut rng = rng(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let datum = random_scaling_datum(&mut rng);
        let (k_list, coupling) = random_coupling(datum.input_dims(), &mut rng);
        match entropic_consistency(&datum, &k_list, &coupling) {
            Ok(chk) => worst = worst.max(chk.diff),
            Err(e) => return (false, e.to_string()),
        }
    }
    (worst <= 1e-10, format!("100 random instances, max relative diff = {worst:.2e} (tol 1e-10)"))
}

fn criterion_9b() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_name = String::new();
    let mut entries = 0;
    for e in catalog::standard() {
        let (Ok(mg), Ok(d)) = (compute_mg(&e.datum, &opts()), dg(&e.datum)) else {
            return (false, format!("{}: solve failed", e.name));
        };
        let shift: f64 = e
            .datum
            .c_f64()
            .iter()
            .zip(e.datum.input_dims())
            .map(|(c, &n)| c * n as f64 * c.ln())
            .sum();
        let excess = mg - (d + shift);
        if excess > worst {
            worst = excess;
            worst_name = e.name.clone();
        }
        entries += 1;
    }
    (
        worst <= 1e-6,
        format!("{entries} catalog data, max M_g - (D_g + sum c_i n_i log c_i) = {worst:.4} at {worst_name} (tol 1e-6)"),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = rng(10);
    let mut runs = 0;
    for e in catalog::standard().into_iter().filter(|e| e.datum.validate().all_surjective()) {
        for _ in 0..50 {
            let basis = random_admissible_basis(e.datum.input_dims(), &mut rng);
            let g = match greedy_index_sets(&e.datum, &basis) {
                Ok(g) => g,
                Err(err) => return (false, format!("{}: {err}", e.name)),
            };
            for (j, set) in g.index_sets.iter().enumerate() {
                if set.len() != e.datum.output_dims()[j] {
                    return (false, format!("{}: |I_{}| = {}", e.name, j + 1, set.len()));
                }
            }
            if let Some(det) = g.gram_dets.iter().find(|&&det| det <= 0.0) {
                return (false, format!("{}: Gram determinant {det:e}", e.name));
            }
            if let Some(s) = g.balance_slacks.iter().find(|s| **s < Rational::from_integer(0)) {
                return (false, format!("{}: slack {}", e.name, rational::format(s)));
            }
            runs += 1;
        }
    }
    (true, format!("{runs} (datum, ordering) pairs: |I_j| = dim E^j, Gram determinants > 0, slacks >= 0"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9a", criterion_9a),
        ("9b", criterion_9b),
        ("10", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = Vec::new();
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = f();
        let expected_fail = EXPECTED_FAILURES.contains(&id);
        let note = if expected_fail { " [expected failure]" } else { "" };
        println!(
            "{} criterion {id}: {detail} ({:.1}s){note}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if pass == expected_fail {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
