//! Finiteness of D_g: the scaling condition and the dimension condition
//! Σ c_i dim T_i ≤ Σ d_j dim(B_j T) over product-form subspaces T.
//!
//! A violation is a checkable witness that D_g = +∞. The search covers every
//! coordinate-aligned product subspace (when N is small enough), the joint
//! kernels of each factor, random product subspaces of every rank profile and
//! the tail subspaces produced by the greedy index-set construction.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::datum::{offsets, Datum, RANK_TOL};
use crate::error::{FrblError, Result};
use crate::linalg;
use crate::operator::{matrix_from_json, matrix_to_json};
use crate::rational::{self, Rational};

/// Orthonormality tolerance for subspace bases.
pub const BASIS_TOL: f64 = 1e-10;

/// T = ⊕ T_i, stored as one orthonormal basis matrix (dim E_i × t_i) per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSubspace {
    bases: Vec<DMatrix<f64>>,
}

impl ProductSubspace {
    pub fn new(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        for (i, b) in bases.iter().enumerate() {
            let gram = b.transpose() * b;
            let dev = (gram - DMatrix::identity(b.ncols(), b.ncols())).amax();
            if dev > BASIS_TOL {
                return Err(FrblError::InvalidArgument(format!(
                    "basis of T_{} is not orthonormal (Gram deviation {dev:e})",
                    i + 1
                )));
            }
        }
        Ok(Self { bases })
    }

    /// Spanned by the standard basis vectors of E_0 selected by `mask` (bit b = coordinate b).
    pub fn coordinate(dims: &[usize], mask: u64) -> Self {
        let offs = offsets(dims);
        let bases = dims
            .iter()
            .zip(&offs)
            .map(|(&n, &off)| {
                let picked: Vec<usize> = (0..n).filter(|&a| mask >> (off + a) & 1 == 1).collect();
                DMatrix::from_fn(n, picked.len(), |r, c| if r == picked[c] { 1.0 } else { 0.0 })
            })
            .collect();
        Self { bases }
    }

    pub fn whole(dims: &[usize]) -> Self {
        Self { bases: dims.iter().map(|&n| DMatrix::identity(n, n)).collect() }
    }

    /// E_i embedded in E_0.
    pub fn factor(dims: &[usize], i: usize) -> Self {
        Self {
            bases: dims
                .iter()
                .enumerate()
                .map(|(a, &n)| if a == i { DMatrix::identity(n, n) } else { DMatrix::zeros(n, 0) })
                .collect(),
        }
    }

    pub fn bases(&self) -> &[DMatrix<f64>] {
        &self.bases
    }

    /// t_i = dim T_i.
    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    /// Ambient factor dimensions.
    pub fn ambient_dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.nrows()).collect()
    }

    /// Non-zero and not all of E_0.
    pub fn is_proper_nonzero(&self) -> bool {
        let t: usize = self.dims().iter().sum();
        let n: usize = self.ambient_dims().iter().sum();
        t > 0 && t < n
    }

    /// N × Σt_i matrix whose columns span T inside E_0.
    pub fn embedding(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.bases)
    }

    pub fn to_json_value(&self) -> Value {
        json!({ "T": self.bases.iter().map(matrix_to_json).collect::<Vec<_>>() })
    }

    /// Reads `{"T": [...]}`. An empty list `[]` for factor i means T_i = 0,
    /// which needs the ambient dimensions to be known.
    pub fn from_json_value(v: &Value, dims: &[usize]) -> Result<Self> {
        let list = v
            .get("T")
            .and_then(|t| t.as_array())
            .ok_or_else(|| FrblError::Parse("subspace file needs a \"T\" list of per-factor bases".into()))?;
        if list.len() != dims.len() {
            return Err(FrblError::Parse(format!("subspace has {} factors, datum has {}", list.len(), dims.len())));
        }
        let mut bases = Vec::new();
        for (i, (m, &n)) in list.iter().zip(dims).enumerate() {
            let parsed = matrix_from_json(m, &format!("T[{}]", i + 1))?;
            let b = if parsed.nrows() == 0 { DMatrix::zeros(n, 0) } else { parsed };
            if b.nrows() != n {
                return Err(FrblError::Parse(format!("T[{}] has {} rows, expected {n}", i + 1, b.nrows())));
            }
            bases.push(b);
        }
        Self::new(bases)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counts {
    /// Σ c_i t_i.
    pub lhs: Rational,
    /// Σ d_j dim(B_j T).
    pub rhs: Rational,
    pub slack: Rational,
    /// Some singular value sits within a factor 10 of the rank threshold.
    pub near_threshold: bool,
}

impl Counts {
    pub fn to_json_value(&self) -> Value {
        json!({
            "lhs": rational::format(&self.lhs),
            "rhs": rational::format(&self.rhs),
            "slack": rational::format(&self.slack),
            "near_threshold": self.near_threshold,
        })
    }
}

pub fn subspace_counts(datum: &Datum, t: &ProductSubspace) -> Counts {
    let lhs: Rational = datum.c().iter().zip(t.dims()).map(|(c, ti)| c * Rational::from_integer(ti as i64)).sum();
    let emb = t.embedding();
    let mut rhs = Rational::from_integer(0);
    let mut near = false;
    for j in 0..datum.m() {
        let bj = datum.assemble_bj(j);
        let reference = linalg::op_norm(&bj);
        let cut = RANK_TOL * reference;
        let sv = linalg::singular_values(&(&bj * &emb));
        let r = sv.iter().filter(|&&s| s > cut).count();
        near |= sv.iter().any(|&s| s > cut / 10.0 && s <= cut * 10.0);
        rhs += datum.d()[j] * Rational::from_integer(r as i64);
    }
    Counts { lhs, rhs, slack: rhs - lhs, near_threshold: near }
}

/// Which datum a witness subspace lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessSide {
    Datum,
    /// The subspace lives in E^0 and violates the condition for (d, c, B*).
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub side: WitnessSide,
    pub subspace: ProductSubspace,
    pub counts: Counts,
    pub reason: String,
}

impl Witness {
    /// Re-evaluates the counts from scratch.
    pub fn recheck(&self, datum: &Datum) -> Counts {
        match self.side {
            WitnessSide::Datum => subspace_counts(datum, &self.subspace),
            WitnessSide::Dual => subspace_counts(&datum.dual(), &self.subspace),
        }
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "side": match self.side { WitnessSide::Datum => "datum", WitnessSide::Dual => "dual" },
            "reason": self.reason,
            "subspace": self.subspace.to_json_value()["T"],
            "counts": self.counts.to_json_value(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Finiteness {
    Finite,
    Infinite(Box<Witness>),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Simplicity {
    Simple,
    CriticalFound(ProductSubspace),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinitenessVerdict {
    pub scaling_ok: bool,
    pub verdict: Finiteness,
    pub simplicity: Simplicity,
    pub search_log: Vec<String>,
}

impl FinitenessVerdict {
    pub fn is_infinite(&self) -> bool {
        matches!(self.verdict, Finiteness::Infinite(_))
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            Finiteness::Infinite(w) => Some(w),
            _ => None,
        }
    }

    pub fn to_json_value(&self) -> Value {
        let (verdict, witness) = match &self.verdict {
            Finiteness::Finite => ("Finite", Value::Null),
            Finiteness::Infinite(w) => ("Infinite", w.to_json_value()),
            Finiteness::Unknown => ("Unknown", Value::Null),
        };
        let (simplicity, critical) = match &self.simplicity {
            Simplicity::Simple => ("Simple", Value::Null),
            Simplicity::CriticalFound(t) => ("CriticalFound", t.to_json_value()["T"].clone()),
            Simplicity::Unknown => ("Unknown", Value::Null),
        };
        json!({
            "scaling_ok": self.scaling_ok,
            "verdict": verdict,
            "witness": witness,
            "simplicity": simplicity,
            "critical_subspace": critical,
            "search_log": self.search_log,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    /// Exhaustive coordinate enumeration runs when N is at most this.
    pub max_enum_dim: usize,
    pub random_trials: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_enum_dim: 16, random_trials: 200, seed: 0 }
    }
}

/// Outcome of scanning one family of candidate subspaces.
#[derive(Default)]
struct Scan {
    witness: Option<(ProductSubspace, Counts, String)>,
    critical: Option<ProductSubspace>,
    ambiguous: usize,
}

impl Scan {
    fn consider(&mut self, datum: &Datum, t: ProductSubspace, label: impl FnOnce() -> String) -> bool {
        let counts = subspace_counts(datum, &t);
        let negative = counts.slack < Rational::from_integer(0);
        if counts.near_threshold {
            self.ambiguous += 1;
        }
        if negative && self.witness.is_none() {
            self.witness = Some((t, counts, label()));
            return true;
        }
        if counts.slack == Rational::from_integer(0) && !counts.near_threshold && t.is_proper_nonzero() && self.critical.is_none()
        {
            self.critical = Some(t);
        }
        false
    }
}

pub fn check_finiteness(datum: &Datum, budget: &Budget) -> FinitenessVerdict {
    let mut log = Vec::new();
    let (lhs, rhs) = datum.scaling_sides();
    if lhs != rhs {
        let (side, t, d) = if lhs > rhs {
            (WitnessSide::Datum, ProductSubspace::whole(datum.input_dims()), datum.clone())
        } else {
            (WitnessSide::Dual, ProductSubspace::whole(datum.output_dims()), datum.dual())
        };
        let counts = subspace_counts(&d, &t);
        log.push(format!(
            "scaling condition fails: sum c_i dim E_i = {}, sum d_j dim E^j = {}",
            rational::format(&lhs),
            rational::format(&rhs)
        ));
        let reason = "scaling condition fails; the whole space violates the dimension condition".to_string();
        return FinitenessVerdict {
            scaling_ok: false,
            verdict: Finiteness::Infinite(Box::new(Witness { side, subspace: t, counts, reason })),
            simplicity: Simplicity::Unknown,
            search_log: log,
        };
    }
    log.push(format!("scaling condition holds ({} = {})", rational::format(&lhs), rational::format(&rhs)));

    let mut scan = Scan::default();
    let n = datum.total_dim();
    let exhaustive = n <= budget.max_enum_dim && n < 64;
    let mut coordinate_strict = true;
    if exhaustive {
        let mut checked = 0u64;
        for mask in 1..(1u64 << n) {
            let t = ProductSubspace::coordinate(datum.input_dims(), mask);
            checked += 1;
            let before_critical = scan.critical.is_some();
            if scan.consider(datum, t, || format!("coordinate subspace with mask {mask:#b}")) {
                break;
            }
            if !before_critical && scan.critical.is_some() {
                coordinate_strict = false;
            }
        }
        log.push(format!("exhaustive coordinate enumeration: {checked} subspaces checked"));
    } else {
        log.push(format!("coordinate enumeration skipped: N = {n} exceeds max_enum_dim = {}", budget.max_enum_dim));
    }

    if scan.witness.is_none() {
        structured_candidates(datum, &mut scan);
        log.push("joint-kernel subspaces checked".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    if scan.witness.is_none() {
        for trial in 0..budget.random_trials {
            if let Some(t) = random_subspace(datum.input_dims(), &mut rng) {
                if scan.consider(datum, t, || format!("random product subspace, trial {trial}")) {
                    break;
                }
            }
        }
        log.push(format!("{} random product subspaces checked", budget.random_trials));
    }
    if scan.witness.is_none() && datum.validate().all_surjective() {
        let orderings = budget.random_trials.clamp(1, 20);
        for trial in 0..orderings {
            let basis = random_admissible_basis(datum.input_dims(), &mut rng);
            if let Ok(g) = greedy_index_sets(datum, &basis) {
                if let Some(p) = g.balance_slacks.iter().position(|s| *s < Rational::from_integer(0)) {
                    let t = tail_subspace(datum.input_dims(), &basis, p);
                    if scan.consider(datum, t, || format!("greedy tail subspace, ordering {trial}, n = {p}")) {
                        break;
                    }
                }
            }
        }
        log.push(format!("{orderings} greedy basis orderings checked"));
    }
    if scan.ambiguous > 0 {
        log.push(format!("{} candidates had singular values near the rank threshold", scan.ambiguous));
    }

    let verdict = match scan.witness {
        Some((_, counts, label)) if counts.near_threshold => {
            log.push(format!("witness candidate ({label}) is within 10x of the rank threshold; verdict downgraded"));
            Finiteness::Unknown
        }
        Some((t, counts, label)) => {
            Finiteness::Infinite(Box::new(Witness { side: WitnessSide::Datum, subspace: t, counts, reason: label }))
        }
        None if exhaustive => {
            log.push("no violation found; finite modulo the searched families".into());
            Finiteness::Finite
        }
        None => Finiteness::Unknown,
    };
    let simplicity = if matches!(verdict, Finiteness::Infinite(_)) {
        Simplicity::Unknown
    } else if let Some(t) = scan.critical {
        Simplicity::CriticalFound(t)
    } else if exhaustive && coordinate_strict && scan.ambiguous == 0 {
        log.push("all proper coordinate subspaces have strictly positive slack".into());
        Simplicity::Simple
    } else {
        Simplicity::Unknown
    };
    FinitenessVerdict { scaling_ok: true, verdict, simplicity, search_log: log }
}

pub fn find_critical(datum: &Datum, budget: &Budget) -> Option<ProductSubspace> {
    if !datum.scaling_holds() {
        return None;
    }
    let mut scan = Scan::default();
    let n = datum.total_dim();
    if n <= budget.max_enum_dim && n < 64 {
        for mask in 1..(1u64 << n) - 1 {
            scan.consider(datum, ProductSubspace::coordinate(datum.input_dims(), mask), String::new);
            if scan.critical.is_some() {
                return scan.critical;
            }
        }
    }
    structured_candidates(datum, &mut scan);
    if scan.critical.is_some() {
        return scan.critical;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    for _ in 0..budget.random_trials {
        if let Some(t) = random_subspace(datum.input_dims(), &mut rng) {
            scan.consider(datum, t, String::new);
            if scan.critical.is_some() {
                return scan.critical;
            }
        }
    }
    None
}

/// Joint kernels ∩_j ker B_ij, one factor at a time and all together.
fn structured_candidates(datum: &Datum, scan: &mut Scan) {
    let kernels: Vec<DMatrix<f64>> = (0..datum.k())
        .map(|i| {
            let n = datum.input_dims()[i];
            let stacked = DMatrix::from_fn(datum.total_output_dim(), n, |r, c| {
                let offs = datum.output_offsets();
                let j = offs.iter().rposition(|&o| o <= r).unwrap_or(0);
                datum.map(i, j).map_or(0.0, |b| b[(r - offs[j], c)])
            });
            let reference = linalg::op_norm(&stacked).max(1.0);
            let row_space = linalg::orthonormal_basis(&stacked.transpose(), RANK_TOL, reference);
            linalg::orthogonal_complement(&row_space, n)
        })
        .collect();
    let dims = datum.input_dims();
    let mut all = Vec::new();
    for (i, ker) in kernels.iter().enumerate() {
        if ker.ncols() > 0 {
            let bases =
                dims.iter().enumerate().map(|(a, &n)| if a == i { ker.clone() } else { DMatrix::zeros(n, 0) }).collect();
            if scan.consider(datum, ProductSubspace { bases }, || format!("joint kernel of factor {}", i + 1)) {
                return;
            }
        }
        all.push(ker.clone());
    }
    if all.iter().filter(|k| k.ncols() > 0).count() > 1 {
        scan.consider(datum, ProductSubspace { bases: all }, || "sum of joint kernels".into());
    }
}

fn random_orthonormal(n: usize, t: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = linalg::orthonormal_basis(&g, 1e-8, 1.0);
        if q.ncols() == t {
            return q;
        }
    }
}

/// Random product subspace with a rank profile drawn uniformly among proper non-zero ones.
pub fn random_subspace(dims: &[usize], rng: &mut impl Rng) -> Option<ProductSubspace> {
    let total: usize = dims.iter().sum();
    for _ in 0..100 {
        let profile: Vec<usize> = dims.iter().map(|&n| rng.random_range(0..=n)).collect();
        let t: usize = profile.iter().sum();
        if t == 0 || t == total {
            continue;
        }
        let bases = dims.iter().zip(&profile).map(|(&n, &ti)| random_orthonormal(n, ti, rng)).collect();
        return Some(ProductSubspace { bases });
    }
    None
}

/// N × N orthonormal basis of E_0 whose columns each lie in one factor, in random order.
pub fn random_admissible_basis(dims: &[usize], rng: &mut impl Rng) -> DMatrix<f64> {
    let n: usize = dims.iter().sum();
    let offs = offsets(dims);
    let mut cols = Vec::new();
    for (i, &ni) in dims.iter().enumerate() {
        let q = random_orthonormal(ni, ni, rng);
        for c in 0..ni {
            let mut v = nalgebra::DVector::zeros(n);
            v.rows_mut(offs[i], ni).copy_from(&q.column(c));
            cols.push(v);
        }
    }
    cols.shuffle(rng);
    DMatrix::from_columns(&cols)
}

/// The factor each basis column lies in, or an error for a non-product column.
fn column_factors(dims: &[usize], basis: &DMatrix<f64>) -> Result<Vec<usize>> {
    let offs = offsets(dims);
    basis
        .column_iter()
        .enumerate()
        .map(|(c, col)| {
            let norm = col.norm();
            let owners: Vec<usize> = (0..dims.len())
                .filter(|&i| col.rows(offs[i], dims[i]).norm() > BASIS_TOL * norm.max(1.0))
                .collect();
            match owners.as_slice() {
                [i] => Ok(*i),
                _ => Err(FrblError::InvalidArgument(format!("basis vector {} does not lie in a single factor", c + 1))),
            }
        })
        .collect()
}

/// span{e_p : p ≥ n} split by factor.
fn tail_subspace(dims: &[usize], basis: &DMatrix<f64>, n: usize) -> ProductSubspace {
    let offs = offsets(dims);
    let owners = column_factors(dims, basis).expect("admissible basis");
    let bases = dims
        .iter()
        .enumerate()
        .map(|(i, &ni)| {
            let cols: Vec<nalgebra::DVector<f64>> = (n..basis.ncols())
                .filter(|&p| owners[p] == i)
                .map(|p| basis.column(p).rows(offs[i], ni).into_owned())
                .collect();
            if cols.is_empty() {
                DMatrix::zeros(ni, 0)
            } else {
                DMatrix::from_columns(&cols)
            }
        })
        .collect();
    ProductSubspace { bases }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    /// I_j as 1-based positions in the basis ordering.
    pub index_sets: Vec<Vec<usize>>,
    /// Gram determinant of {B_j e_n : n ∈ I_j}.
    pub gram_dets: Vec<f64>,
    /// Σ_j d_j |I_j ∩ {n+1..N}| − Σ_i c_i |S_i ∩ {n+1..N}| for n = 0..N.
    pub balance_slacks: Vec<Rational>,
}

/// Backwards greedy: n ∈ I_j iff B_j e_n is not in the span of the B_j e_{n'} with n' > n.
pub fn greedy_index_sets(datum: &Datum, basis: &DMatrix<f64>) -> Result<GreedyResult> {
    let n = datum.total_dim();
    if basis.nrows() != n || basis.ncols() != n {
        return Err(FrblError::InvalidArgument(format!("basis must be {n}x{n}")));
    }
    if (basis.transpose() * basis - DMatrix::identity(n, n)).amax() > BASIS_TOL {
        return Err(FrblError::InvalidArgument("basis is not orthonormal".into()));
    }
    let owners = column_factors(datum.input_dims(), basis)?;
    let rep = datum.validate();
    if let Some(j) = rep.surjective.iter().position(|s| !s) {
        return Err(FrblError::Finiteness(format!("B_{} is not surjective", j + 1)));
    }
    let mut index_sets = Vec::new();
    let mut gram_dets = Vec::new();
    for j in 0..datum.m() {
        let bj = datum.assemble_bj(j);
        let cut = RANK_TOL * linalg::op_norm(&bj);
        let images = &bj * basis;
        let mut kept: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut set = Vec::new();
        for p in (0..n).rev() {
            let mut v = images.column(p).into_owned();
            for _ in 0..2 {
                for q in &kept {
                    let proj = q.dot(&v);
                    v.axpy(-proj, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm > cut {
                kept.push(v / norm);
                set.push(p + 1);
            }
        }
        set.reverse();
        let chosen = DMatrix::from_columns(&set.iter().map(|&p| images.column(p - 1).into_owned()).collect::<Vec<_>>());
        gram_dets.push((chosen.transpose() * &chosen).determinant());
        index_sets.push(set);
    }
    let zero = Rational::from_integer(0);
    let balance_slacks = (0..=n)
        .map(|cut| {
            let out: Rational = index_sets
                .iter()
                .zip(datum.d())
                .map(|(set, d)| d * Rational::from_integer(set.iter().filter(|&&p| p > cut).count() as i64))
                .sum();
            let inp: Rational = (cut..n).map(|p| datum.c()[owners[p]]).fold(zero, |a, b| a + b);
            out - inp
        })
        .collect();
    Ok(GreedyResult { index_sets, gram_dets, balance_slacks })
}
