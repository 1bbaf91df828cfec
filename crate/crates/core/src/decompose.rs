//! Splitting a datum along a product-form subspace T into the restriction
//! (c, d, B_T) and the quotient (c, d, B_{E_0/T}).

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::datum::{Datum, RANK_TOL};
use crate::error::{FrblError, Result};
use crate::finiteness::{subspace_counts, ProductSubspace};
use crate::linalg;
use crate::operator::matrix_to_json;
use crate::rational::Rational;
use crate::solver::{compute_dg, SolveOptions};

/// Bases chosen for the split and the surviving factor indices (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct IsoLog {
    pub t: Vec<DMatrix<f64>>,
    pub t_perp: Vec<DMatrix<f64>>,
    pub image: Vec<DMatrix<f64>>,
    pub image_perp: Vec<DMatrix<f64>>,
    pub restricted_inputs: Vec<usize>,
    pub restricted_outputs: Vec<usize>,
    pub quotient_inputs: Vec<usize>,
    pub quotient_outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub subspace: ProductSubspace,
    pub restricted: Datum,
    pub quotient: Datum,
    pub iso_log: IsoLog,
}

impl Decomposition {
    /// Per-factor dimensions of both children, zero-dimensional pieces included.
    pub fn split_dims(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let l = &self.iso_log;
        let inputs = l.t.iter().zip(&l.t_perp).map(|(a, b)| (a.ncols(), b.ncols())).collect();
        let outputs = l.image.iter().zip(&l.image_perp).map(|(a, b)| (a.ncols(), b.ncols())).collect();
        (inputs, outputs)
    }

    pub fn to_json_value(&self) -> Value {
        let l = &self.iso_log;
        let mats = |v: &[DMatrix<f64>]| v.iter().map(matrix_to_json).collect::<Vec<_>>();
        let one_based = |v: &[usize]| v.iter().map(|x| x + 1).collect::<Vec<_>>();
        json!({
            "subspace": self.subspace.to_json_value()["T"],
            "restricted": self.restricted.to_json_value(),
            "quotient": self.quotient.to_json_value(),
            "iso_log": {
                "T": mats(&l.t),
                "T_perp": mats(&l.t_perp),
                "BT": mats(&l.image),
                "BT_perp": mats(&l.image_perp),
                "restricted_inputs": one_based(&l.restricted_inputs),
                "restricted_outputs": one_based(&l.restricted_outputs),
                "quotient_inputs": one_based(&l.quotient_inputs),
                "quotient_outputs": one_based(&l.quotient_outputs),
            },
        })
    }
}

fn child(
    datum: &Datum,
    in_bases: &[DMatrix<f64>],
    out_bases: &[DMatrix<f64>],
) -> Result<(Datum, Vec<usize>, Vec<usize>)> {
    let ins: Vec<usize> = (0..datum.k()).filter(|&i| in_bases[i].ncols() > 0).collect();
    let outs: Vec<usize> = (0..datum.m()).filter(|&j| out_bases[j].ncols() > 0).collect();
    let in_dims: Vec<usize> = ins.iter().map(|&i| in_bases[i].ncols()).collect();
    let out_dims: Vec<usize> = outs.iter().map(|&j| out_bases[j].ncols()).collect();
    let c: Vec<Rational> = ins.iter().map(|&i| datum.c()[i]).collect();
    let d: Vec<Rational> = outs.iter().map(|&j| datum.d()[j]).collect();
    let d = Datum::from_fn(&in_dims, &out_dims, &c, &d, |a, b| {
        let (i, j) = (ins[a], outs[b]);
        datum.map(i, j).map(|m| out_bases[j].transpose() * m * &in_bases[i])
    })?;
    Ok((d, ins, outs))
}

pub fn decompose(datum: &Datum, t: &ProductSubspace) -> Result<Decomposition> {
    if t.ambient_dims() != datum.input_dims() {
        return Err(FrblError::InvalidArgument("subspace does not live in the datum's input spaces".into()));
    }
    let t_bases = t.bases().to_vec();
    let t_perp: Vec<DMatrix<f64>> =
        t_bases.iter().zip(datum.input_dims()).map(|(b, &n)| linalg::orthogonal_complement(b, n)).collect();
    let emb = t.embedding();
    let mut image = Vec::with_capacity(datum.m());
    let mut image_perp = Vec::with_capacity(datum.m());
    for j in 0..datum.m() {
        let bj = datum.assemble_bj(j);
        let basis = linalg::orthonormal_basis(&(&bj * &emb), RANK_TOL, linalg::op_norm(&bj));
        image_perp.push(linalg::orthogonal_complement(&basis, datum.output_dims()[j]));
        image.push(basis);
    }
    let (restricted, ri, ro) = child(datum, &t_bases, &image)?;
    let (quotient, qi, qo) = child(datum, &t_perp, &image_perp)?;
    Ok(Decomposition {
        subspace: t.clone(),
        restricted,
        quotient,
        iso_log: IsoLog {
            t: t_bases,
            t_perp,
            image,
            image_perp,
            restricted_inputs: ri,
            restricted_outputs: ro,
            quotient_inputs: qi,
            quotient_outputs: qo,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Additivity {
    pub dg_full: f64,
    pub dg_t: f64,
    pub dg_quotient: f64,
    /// dg_full − (dg_t + dg_quotient); `-inf` when only the parts are infinite.
    pub gap: f64,
    pub critical: bool,
    /// Equality within tol for critical T, subadditivity otherwise.
    pub holds: bool,
}

impl Additivity {
    pub fn to_json_value(&self) -> Value {
        let num = |x: f64| if x.is_finite() { json!(x) } else { json!(x.to_string()) };
        json!({
            "dg_full": num(self.dg_full),
            "dg_T": num(self.dg_t),
            "dg_quotient": num(self.dg_quotient),
            "gap": num(self.gap),
            "critical": self.critical,
            "holds": self.holds,
        })
    }
}

pub fn verify_additivity(datum: &Datum, t: &ProductSubspace, tol: f64, opts: &SolveOptions) -> Result<Additivity> {
    let dec = decompose(datum, t)?;
    let counts = subspace_counts(datum, t);
    let critical = counts.slack == Rational::from_integer(0) && !counts.near_threshold;
    let dg_full = compute_dg(datum, opts)?.dg_value.as_f64();
    let dg_t = compute_dg(&dec.restricted, opts)?.dg_value.as_f64();
    let dg_quotient = compute_dg(&dec.quotient, opts)?.dg_value.as_f64();
    let parts = dg_t + dg_quotient;
    let gap = match (dg_full.is_finite(), parts.is_finite()) {
        (true, true) => dg_full - parts,
        (false, false) => 0.0,
        (true, false) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
    };
    let holds = if critical { gap.abs() <= tol } else { gap <= tol };
    Ok(Additivity { dg_full, dg_t, dg_quotient, gap, critical, holds })
}
