//! The datum (c, d, B): exponents, space dimensions and the grid of maps
//! B_ij : E_i → E^j. E_0 is the direct sum of the E_i in declared order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{DatumError, Result, Side};
use crate::linalg;
use crate::operator::{matrix_from_json, matrix_to_json, SpdOperator};
use crate::rational::{self, Rational};

/// Relative singular-value tolerance used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    c: Vec<Rational>,
    d: Vec<Rational>,
    maps: Vec<Vec<Option<DMatrix<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub k: usize,
    pub m: usize,
    pub total_dim: usize,
    pub scaling_holds: bool,
    #[serde(serialize_with = "ser_rational")]
    pub scaling_lhs: Rational,
    #[serde(serialize_with = "ser_rational")]
    pub scaling_rhs: Rational,
    pub ranks: Vec<usize>,
    pub surjective: Vec<bool>,
}

impl ValidationReport {
    pub fn all_surjective(&self) -> bool {
        self.surjective.iter().all(|&s| s)
    }
}

fn ser_rational<S: serde::Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}

impl Datum {
    /// `maps[i][j]` is B_ij with shape dim(E^j) × dim(E_i); `None` is the zero map.
    pub fn new(
        input_dims: Vec<usize>,
        output_dims: Vec<usize>,
        c: Vec<Rational>,
        d: Vec<Rational>,
        maps: Vec<Vec<Option<DMatrix<f64>>>>,
    ) -> std::result::Result<Self, DatumError> {
        if c.len() != input_dims.len() {
            return Err(DatumError::ExponentCount { side: Side::Input, expected: input_dims.len(), found: c.len() });
        }
        if d.len() != output_dims.len() {
            return Err(DatumError::ExponentCount { side: Side::Output, expected: output_dims.len(), found: d.len() });
        }
        for (side, dims) in [(Side::Input, &input_dims), (Side::Output, &output_dims)] {
            if let Some(idx) = dims.iter().position(|&n| n == 0) {
                return Err(DatumError::ZeroDimension { side, index: idx + 1 });
            }
        }
        for (side, exps) in [(Side::Input, &c), (Side::Output, &d)] {
            if let Some(idx) = exps.iter().position(|r| !rational::is_positive(r)) {
                return Err(DatumError::NonPositiveExponent { side, index: idx + 1, value: rational::format(&exps[idx]) });
            }
        }
        if maps.len() != input_dims.len() || maps.iter().any(|row| row.len() != output_dims.len()) {
            return Err(DatumError::Ragged("map grid must be k x m".into()));
        }
        for (i, row) in maps.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    if b.nrows() != output_dims[j] || b.ncols() != input_dims[i] {
                        return Err(DatumError::Shape {
                            i: i + 1,
                            j: j + 1,
                            expected_rows: output_dims[j],
                            expected_cols: input_dims[i],
                            found_rows: b.nrows(),
                            found_cols: b.ncols(),
                        });
                    }
                    if b.iter().any(|v| !v.is_finite()) {
                        return Err(DatumError::NonFinite { i: i + 1, j: j + 1 });
                    }
                }
            }
        }
        Ok(Self { input_dims, output_dims, c, d, maps })
    }

    /// Convenience constructor from integer-ratio pairs and a closure producing B_ij.
    pub fn from_fn(
        input_dims: &[usize],
        output_dims: &[usize],
        c: &[Rational],
        d: &[Rational],
        mut f: impl FnMut(usize, usize) -> Option<DMatrix<f64>>,
    ) -> std::result::Result<Self, DatumError> {
        let maps = (0..input_dims.len()).map(|i| (0..output_dims.len()).map(|j| f(i, j)).collect()).collect();
        Self::new(input_dims.to_vec(), output_dims.to_vec(), c.to_vec(), d.to_vec(), maps)
    }

    /// k = m = 1, c = d = 1, B = id on ℝⁿ.
    pub fn identity(n: usize) -> Self {
        let one = Rational::from_integer(1);
        Self::from_fn(&[n], &[n], &[one], &[one], |_, _| Some(DMatrix::identity(n, n))).expect("identity datum")
    }

    pub fn k(&self) -> usize {
        self.input_dims.len()
    }

    pub fn m(&self) -> usize {
        self.output_dims.len()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn c(&self) -> &[Rational] {
        &self.c
    }

    pub fn d(&self) -> &[Rational] {
        &self.d
    }

    pub fn c_f64(&self) -> Vec<f64> {
        self.c.iter().map(rational::to_f64).collect()
    }

    pub fn d_f64(&self) -> Vec<f64> {
        self.d.iter().map(rational::to_f64).collect()
    }

    /// B_ij, or `None` for the zero map (0-based indices).
    pub fn map(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.maps[i][j].as_ref()
    }

    /// N = Σ dim E_i.
    pub fn total_dim(&self) -> usize {
        self.input_dims.iter().sum()
    }

    pub fn total_output_dim(&self) -> usize {
        self.output_dims.iter().sum()
    }

    /// Start of each factor's coordinates inside E_0.
    pub fn input_offsets(&self) -> Vec<usize> {
        offsets(&self.input_dims)
    }

    pub fn output_offsets(&self) -> Vec<usize> {
        offsets(&self.output_dims)
    }

    /// Diagonal of Λ_c on E_0.
    pub fn lambda_c(&self) -> DVector<f64> {
        let c = self.c_f64();
        DVector::from_iterator(self.total_dim(), self.input_dims.iter().zip(&c).flat_map(|(&n, &ci)| std::iter::repeat_n(ci, n)))
    }

    /// B_j : E_0 → E^j, the horizontal concatenation of the B_ij.
    pub fn assemble_bj(&self, j: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.output_dims[j], self.total_dim());
        for (i, off) in self.input_offsets().into_iter().enumerate() {
            if let Some(b) = &self.maps[i][j] {
                out.view_mut((0, off), b.shape()).copy_from(b);
            }
        }
        out
    }

    /// A_j = B_jΛ_c, the map that enters every determinant.
    pub fn scaled_map(&self, j: usize) -> DMatrix<f64> {
        let lam = self.lambda_c();
        let mut a = self.assemble_bj(j);
        for (col, l) in lam.iter().enumerate() {
            a.column_mut(col).scale_mut(*l);
        }
        a
    }

    pub fn scaled_maps(&self) -> Vec<DMatrix<f64>> {
        (0..self.m()).map(|j| self.scaled_map(j)).collect()
    }

    /// Σ c_i dim E_i and Σ d_j dim E^j, exactly.
    pub fn scaling_sides(&self) -> (Rational, Rational) {
        let lhs = self.c.iter().zip(&self.input_dims).map(|(c, &n)| c * Rational::from_integer(n as i64));
        let rhs = self.d.iter().zip(&self.output_dims).map(|(d, &n)| d * Rational::from_integer(n as i64));
        (lhs.sum(), rhs.sum())
    }

    pub fn scaling_holds(&self) -> bool {
        let (l, r) = self.scaling_sides();
        l == r
    }

    /// Rank of B_j at relative tolerance [`RANK_TOL`].
    pub fn rank_bj(&self, j: usize) -> usize {
        let b = self.assemble_bj(j);
        let sv = linalg::singular_values(&b);
        let top = sv.first().copied().unwrap_or(0.0);
        sv.iter().filter(|&&s| s > RANK_TOL * top).count()
    }

    pub fn validate(&self) -> ValidationReport {
        let (lhs, rhs) = self.scaling_sides();
        let ranks: Vec<usize> = (0..self.m()).map(|j| self.rank_bj(j)).collect();
        let surjective = ranks.iter().zip(&self.output_dims).map(|(r, n)| r == n).collect();
        ValidationReport {
            k: self.k(),
            m: self.m(),
            total_dim: self.total_dim(),
            scaling_holds: lhs == rhs,
            scaling_lhs: lhs,
            scaling_rhs: rhs,
            ranks,
            surjective,
        }
    }

    /// (d, c, B*) with B*[j][i] = B[i][j]ᵀ.
    pub fn dual(&self) -> Datum {
        let maps = (0..self.m())
            .map(|j| (0..self.k()).map(|i| self.maps[i][j].as_ref().map(|b| b.transpose())).collect())
            .collect();
        Datum {
            input_dims: self.output_dims.clone(),
            output_dims: self.input_dims.clone(),
            c: self.d.clone(),
            d: self.c.clone(),
            maps,
        }
    }

    /// Direct sum of two data: factors and outputs are concatenated, cross maps are zero.
    pub fn direct_sum(&self, other: &Datum) -> Datum {
        let (k1, m1) = (self.k(), self.m());
        let mut maps = vec![vec![None; m1 + other.m()]; k1 + other.k()];
        for i in 0..k1 {
            for j in 0..m1 {
                maps[i][j] = self.maps[i][j].clone();
            }
        }
        for i in 0..other.k() {
            for j in 0..other.m() {
                maps[k1 + i][m1 + j] = other.maps[i][j].clone();
            }
        }
        Datum {
            input_dims: [self.input_dims.clone(), other.input_dims.clone()].concat(),
            output_dims: [self.output_dims.clone(), other.output_dims.clone()].concat(),
            c: [self.c.clone(), other.c.clone()].concat(),
            d: [self.d.clone(), other.d.clone()].concat(),
            maps,
        }
    }

    pub fn to_json_value(&self) -> Value {
        let mut b = BTreeMap::new();
        for (i, row) in self.maps.iter().enumerate() {
            for (j, m) in row.iter().enumerate() {
                if let Some(m) = m {
                    b.insert(format!("{},{}", i + 1, j + 1), matrix_to_json(m));
                }
            }
        }
        serde_json::json!({
            "input_dims": self.input_dims,
            "output_dims": self.output_dims,
            "c": self.c.iter().map(rational::format).collect::<Vec<_>>(),
            "d": self.d.iter().map(rational::format).collect::<Vec<_>>(),
            "B": b,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("datum serializes")
    }

    pub fn from_json_value(v: &Value) -> Result<Datum> {
        let file: DatumFile = serde_json::from_value(v.clone())?;
        let (k, m) = (file.input_dims.len(), file.output_dims.len());
        let mut maps = vec![vec![None; m]; k];
        for (key, val) in &file.b {
            let (i, j) = parse_key(key, k, m)?;
            maps[i][j] = Some(matrix_from_json(val, &format!("B[{key}]"))?);
        }
        Ok(Datum::new(file.input_dims, file.output_dims, file.c, file.d, maps)?)
    }

    pub fn from_json(s: &str) -> Result<Datum> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_json_value(&v)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&self.to_json_value()).expect("datum serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatumFile {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    #[serde(deserialize_with = "rational::deserialize_list")]
    c: Vec<Rational>,
    #[serde(deserialize_with = "rational::deserialize_list")]
    d: Vec<Rational>,
    #[serde(rename = "B", default)]
    b: BTreeMap<String, Value>,
}

fn parse_key(key: &str, k: usize, m: usize) -> std::result::Result<(usize, usize), DatumError> {
    let bad = || DatumError::BadKey(key.to_string());
    let (a, b) = key.split_once(',').ok_or_else(bad)?;
    let i: usize = a.trim().parse().map_err(|_| bad())?;
    let j: usize = b.trim().parse().map_err(|_| bad())?;
    if i == 0 || j == 0 || i > k || j > m {
        return Err(bad());
    }
    Ok((i - 1, j - 1))
}

pub(crate) fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|&n| {
            let o = acc;
            acc += n;
            o
        })
        .collect()
}

/// Extremizers for the dual datum: V'_j = U_j⁻¹ and U'_i = V_i⁻¹.
pub fn map_extremizers_to_dual(v: &[SpdOperator], u: &[SpdOperator]) -> (Vec<SpdOperator>, Vec<SpdOperator>) {
    (u.iter().map(|x| x.inverse()).collect(), v.iter().map(|x| x.inverse()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::FrblError;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn reverse_young_1d() -> Datum {
        let t = 2.0 / 3.0;
        Datum::from_fn(&[1, 1], &[1, 2], &[r(3, 2), r(3, 2)], &[r(1, 1), r(1, 1)], |i, j| match (i, j) {
            (_, 0) => Some(mat(1, 1, &[t])),
            (0, 1) => Some(mat(2, 1, &[t, 0.0])),
            _ => Some(mat(2, 1, &[0.0, t])),
        })
        .unwrap()
    }

    #[test]
    fn identity_validates() {
        let rep = Datum::identity(1).validate();
        assert!(rep.scaling_holds && rep.all_surjective());
    }

    #[test]
    fn reverse_young_scaling() {
        let d = reverse_young_1d();
        let rep = d.validate();
        assert!(rep.scaling_holds);
        assert_eq!(rep.scaling_lhs, r(3, 1));
        let a2 = d.scaled_map(1);
        assert!((a2 - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn scaling_failure_detected() {
        let one = r(1, 1);
        let d = Datum::from_fn(&[2], &[1], &[one], &[one], |_, _| Some(mat(1, 2, &[1.0, 0.0]))).unwrap();
        let rep = d.validate();
        assert!(!rep.scaling_holds);
        assert_eq!((rep.scaling_lhs, rep.scaling_rhs), (r(2, 1), r(1, 1)));
    }

    #[test]
    fn assemble_fills_zero_blocks() {
        let one = r(1, 1);
        let d = Datum::from_fn(&[1, 1], &[1], &[one, one], &[one], |i, _| (i == 0).then(|| mat(1, 1, &[1.0]))).unwrap();
        assert_eq!(d.assemble_bj(0), mat(1, 2, &[1.0, 0.0]));
        assert!(!d.validate().surjective.is_empty());
    }

    #[test]
    fn shape_errors_name_the_index() {
        let one = r(1, 1);
        let err = Datum::from_fn(&[1, 2], &[1], &[one, one], &[one], |_, _| Some(mat(1, 1, &[1.0])))
            .unwrap_err();
        assert_eq!(
            err,
            DatumError::Shape { i: 2, j: 1, expected_rows: 1, expected_cols: 2, found_rows: 1, found_cols: 1 }
        );
        let err = Datum::from_fn(&[1], &[1], &[r(0, 1)], &[one], |_, _| None).unwrap_err();
        assert!(matches!(err, DatumError::NonPositiveExponent { side: Side::Input, index: 1, .. }));
        let err = Datum::from_fn(&[0], &[1], &[one], &[one], |_, _| None).unwrap_err();
        assert!(matches!(err, DatumError::ZeroDimension { side: Side::Input, index: 1 }));
    }

    #[test]
    fn dual_is_an_involution() {
        let d = reverse_young_1d();
        assert_eq!(d.dual().dual(), d);
        let dual = d.dual();
        assert_eq!(dual.c(), d.d());
        for i in 0..d.k() {
            let offs = d.output_offsets();
            let expected = DMatrix::from_fn(d.input_dims()[i], d.total_output_dim(), |r, col| {
                let j = offs.iter().rposition(|&o| o <= col).unwrap();
                d.map(i, j).map_or(0.0, |b| b[(col - offs[j], r)])
            });
            assert_eq!(dual.assemble_bj(i), expected);
        }
    }

    #[test]
    fn json_round_trip_and_fingerprint() {
        let d = reverse_young_1d();
        let back = Datum::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.fingerprint(), d.fingerprint());
        assert_ne!(d.dual().fingerprint(), d.fingerprint());
    }

    #[test]
    fn json_errors() {
        let bad_key = r#"{"input_dims":[1],"output_dims":[1],"c":["1"],"d":["1"],"B":{"2,1":[[1]]}}"#;
        assert!(matches!(Datum::from_json(bad_key), Err(FrblError::InvalidDatum(DatumError::BadKey(_)))));
        let bad_shape = r#"{"input_dims":[1],"output_dims":[2],"c":["2"],"d":["1"],"B":{"1,1":[[1]]}}"#;
        assert!(matches!(Datum::from_json(bad_shape), Err(FrblError::InvalidDatum(DatumError::Shape { .. }))));
        let bad_rat = r#"{"input_dims":[1],"output_dims":[1],"c":["1/0"],"d":["1"],"B":{}}"#;
        assert!(Datum::from_json(bad_rat).is_err());
        let ints = r#"{"input_dims":[1],"output_dims":[1],"c":[1],"d":["1"],"B":{"1,1":[[1]]}}"#;
        assert_eq!(Datum::from_json(ints).unwrap(), Datum::identity(1));
    }

    #[test]
    fn extremizer_dual_map() {
        let v = vec![SpdOperator::scaled_identity(1, 2.0)];
        let u = vec![SpdOperator::scaled_identity(1, 0.5)];
        let (v2, u2) = map_extremizers_to_dual(&v, &u);
        assert!((v2[0].matrix()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((u2[0].matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        let (v3, u3) = map_extremizers_to_dual(&v2, &u2);
        assert!((v3[0].matrix() - v[0].matrix()).amax() < 1e-15);
        assert!((u3[0].matrix() - u[0].matrix()).amax() < 1e-15);
    }
}
