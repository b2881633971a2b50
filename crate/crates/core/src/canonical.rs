//! Canonical JSON: object keys sorted, two-space indentation, trailing newline.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn to_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Value {
    // Going through `Value` sorts object keys because the map is ordered.
    serde_json::to_value(value).expect("in-memory values always serialize")
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(&to_value(value)).expect("value serializes");
    out.push('\n');
    out
}

pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    hex::encode(Sha256::digest(to_json(value).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct S {
        zeta: u8,
        alpha: u8,
    }

    #[test]
    fn keys_are_sorted() {
        let json = to_json(&S { zeta: 1, alpha: 2 });
        assert!(json.find("alpha").unwrap() < json.find("zeta").unwrap());
        assert!(json.ends_with('\n'));
    }
}
