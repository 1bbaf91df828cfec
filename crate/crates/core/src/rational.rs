//! Exact exponent arithmetic.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::Deserializer;

use crate::error::{FrblError, Result};

pub type Rational = Ratio<i64>;

/// Parses `"p/q"` or an integer literal.
pub fn parse(s: &str) -> Result<Rational> {
    let bad = || FrblError::Parse(format!("not a rational: {s:?}"));
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s, "1"),
    };
    let p: i64 = num.parse().map_err(|_| bad())?;
    let q: i64 = den.parse().map_err(|_| bad())?;
    if q == 0 {
        return Err(bad());
    }
    Ok(Rational::new(p, q))
}

/// `"p/q"`, or just `"p"` for integers.
pub fn format(r: &Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Best rational approximation with denominator at most `max_den`, by
/// continued fractions. `None` if no convergent is within `tol`.
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    let sign = if x < 0.0 { -1 } else { 1 };
    let mut y = x.abs();
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    for _ in 0..64 {
        let a = y.floor();
        if a > i64::MAX as f64 / 4.0 {
            break;
        }
        let a = a as i64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let approx = h1 as f64 / k1 as f64;
        if (approx - x.abs()).abs() <= tol {
            return Some(Rational::new(sign * h1, k1));
        }
        let frac = y - a as f64;
        if frac <= 0.0 {
            break;
        }
        y = 1.0 / frac;
    }
    None
}

pub fn is_positive(r: &Rational) -> bool {
    r.is_positive()
}

pub fn sum<'a>(it: impl IntoIterator<Item = &'a Rational>) -> Rational {
    it.into_iter().fold(Rational::zero(), |a, b| a + b)
}

pub(crate) fn deserialize_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Rational>, D::Error> {
    struct ListVisitor;
    impl<'de> Visitor<'de> for ListVisitor {
        type Value = Vec<Rational>;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a list of rationals written as \"p/q\" strings or integers")
        }
        fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(v) = seq.next_element::<serde_json::Value>()? {
                let r = match &v {
                    serde_json::Value::String(s) => parse(s).map_err(de::Error::custom)?,
                    serde_json::Value::Number(n) if n.is_i64() => Rational::from_integer(n.as_i64().unwrap_or(0)),
                    other => return Err(de::Error::custom(format!("expected rational, found {other}"))),
                };
                out.push(r);
            }
            Ok(out)
        }
    }
    d.deserialize_seq(ListVisitor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["3/2", "1", "-4/7", "12"] {
            assert_eq!(format(&parse(s).unwrap()), s);
        }
        assert_eq!(parse("6/4").unwrap(), Rational::new(3, 2));
        assert!(parse("1/0").is_err());
        assert!(parse("x").is_err());
        assert!(parse("0.5").is_err());
    }

    #[test]
    fn rationalize_recovers_simple_fractions() {
        assert_eq!(rationalize(2.0 / 3.0, 1000, 1e-12), Some(Rational::new(2, 3)));
        assert_eq!(rationalize(-0.25, 1000, 1e-12), Some(Rational::new(-1, 4)));
        assert_eq!(rationalize(3.0, 1000, 1e-12), Some(Rational::from_integer(3)));
        assert_eq!(rationalize(std::f64::consts::PI, 100, 1e-12), None);
    }
}
