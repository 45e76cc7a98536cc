//! Parsing and formatting of exact rationals written as `"p/q"` strings.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Parses `"p/q"` or a bare integer `"p"`. Surrounding whitespace is ignored.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num.parse().map_err(|_| Error::parse(format!("bad numerator in rational `{s}`")))?;
    let den: BigInt = den.parse().map_err(|_| Error::parse(format!("bad denominator in rational `{s}`")))?;
    if den.is_zero() {
        return Err(Error::parse(format!("zero denominator in rational `{s}`")));
    }
    Ok(BigRational::new(num, den))
}

/// Canonical `"p/q"` form with `q > 0` and `gcd(p, q) = 1`.
pub fn format_rational(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

pub fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn from_i64(k: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_integers() {
        assert_eq!(parse_rational("-3/6").unwrap(), BigRational::new((-1).into(), 2.into()));
        assert_eq!(parse_rational(" 7 ").unwrap(), from_i64(7));
        assert_eq!(parse_rational("4/-2").unwrap(), from_i64(-2));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/2/3").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn format_round_trips() {
        for s in ["0/1", "-5/3", "12/7"] {
            let q = parse_rational(s).unwrap();
            assert_eq!(format_rational(&q), s);
        }
        assert_eq!(format_rational(&parse_rational("4/-2").unwrap()), "-2/1");
    }
}
