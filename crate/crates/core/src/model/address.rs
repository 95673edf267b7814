use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Largest address blob accepted from a log.
pub const MAX_ADDRESS_LEN: usize = 64;

/// Opaque transport address (ep, iface or device address).
///
/// Compared byte-wise; no structure is assumed. Rendered as lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddressBlob(Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AddressError {
    #[error("address blob must not be empty")]
    Empty,
    #[error("address blob of {0} bytes exceeds {MAX_ADDRESS_LEN}")]
    TooLong(usize),
    #[error("address must be lowercase hex: {0}")]
    BadHex(String),
}

impl AddressBlob {
    pub fn new(bytes: Vec<u8>) -> Result<Self, AddressError> {
        if bytes.is_empty() {
            return Err(AddressError::Empty);
        }
        if bytes.len() > MAX_ADDRESS_LEN {
            return Err(AddressError::TooLong(bytes.len()));
        }
        Ok(Self(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, AddressError> {
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(AddressError::BadHex(s.to_string()));
        }
        let bytes = hex::decode(s).map_err(|_| AddressError::BadHex(s.to_string()))?;
        Self::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for AddressBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AddressBlob({})", self.to_hex())
    }
}

impl fmt::Display for AddressBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for AddressBlob {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for AddressBlob {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct HexVisitor;

        impl Visitor<'_> for HexVisitor {
            type Value = AddressBlob;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a lowercase hex address string")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<AddressBlob, E> {
                AddressBlob::from_hex(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_str(HexVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip() {
        let a = AddressBlob::new(vec![0xde, 0xad, 0x00, 0x01]).unwrap();
        assert_eq!(a.to_hex(), "dead0001");
        assert_eq!(AddressBlob::from_hex("dead0001").unwrap(), a);
    }

    #[test]
    fn rejects_empty_long_and_uppercase() {
        assert_eq!(AddressBlob::new(vec![]), Err(AddressError::Empty));
        assert_eq!(AddressBlob::new(vec![0; 65]), Err(AddressError::TooLong(65)));
        assert!(AddressBlob::from_hex("DEAD").is_err());
        assert!(AddressBlob::from_hex("abc").is_err());
    }

    #[test]
    fn different_lengths_never_equal() {
        let a = AddressBlob::new(vec![1, 2]).unwrap();
        let b = AddressBlob::new(vec![1, 2, 0]).unwrap();
        assert_ne!(a, b);
    }
}
