//! Serde adapter for `f64` fields that may hold NaN or an infinity.
//!
//! Finite values are written as JSON numbers; the rest as the strings `"NaN"`,
//! `"inf"` and `"-inf"`, which plain JSON numbers cannot express.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(untagged)]
pub enum ExtendedFloat {
    Finite(f64),
    Special(String),
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("NaN")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match ExtendedFloat::deserialize(d)? {
        ExtendedFloat::Finite(x) => Ok(x),
        ExtendedFloat::Special(s) => match s.as_str() {
            "NaN" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("expected a number, `NaN`, `inf` or `-inf`, got `{other}`"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super")] f64);

    #[test]
    fn special_values_round_trip() {
        for x in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&Wrap(x)).unwrap();
            assert_eq!(serde_json::from_str::<Wrap>(&s).unwrap().0, x);
        }
        let s = serde_json::to_string(&Wrap(f64::NAN)).unwrap();
        assert_eq!(s, "\"NaN\"");
        assert!(serde_json::from_str::<Wrap>(&s).unwrap().0.is_nan());
        assert!(serde_json::from_str::<Wrap>("\"nope\"").is_err());
    }
}
