//! Byte-stable JSON: object keys sorted, no insignificant whitespace.

use serde::Serialize;

/// Serialize through `serde_json::Value`, whose maps are ordered by key.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("ledger types serialize to JSON");
    serde_json::to_string(&value).expect("JSON values always serialize")
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    to_string(value).into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Unsorted {
        zeta: u8,
        alpha: u8,
    }

    #[test]
    fn keys_come_out_sorted() {
        assert_eq!(
            to_string(&Unsorted { zeta: 1, alpha: 2 }),
            r#"{"alpha":2,"zeta":1}"#
        );
    }
}
