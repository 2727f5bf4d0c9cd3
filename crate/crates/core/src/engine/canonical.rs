use serde::Serialize;

use crate::error::{Error, Result};

/// JSON with object keys sorted at every level and floats in shortest
/// round-trip form. Two equal values always give identical bytes.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json::Value keeps objects in a BTreeMap, so conversion sorts keys.
    let v = serde_json::to_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| Error::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    #[test]
    fn keys_sorted_recursively() {
        let mut inner = IndexMap::new();
        inner.insert("zeta", 1.0);
        inner.insert("alpha", 0.1);
        let mut outer = IndexMap::new();
        outer.insert("b", inner.clone());
        outer.insert("a", inner);
        assert_eq!(
            to_canonical_string(&outer).unwrap(),
            r#"{"a":{"alpha":0.1,"zeta":1.0},"b":{"alpha":0.1,"zeta":1.0}}"#
        );
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1 + 0.2, 1.0 / 3.0, 1e-300, 147.56147123, f64::MIN_POSITIVE] {
            let s = to_canonical_string(&x).unwrap();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
