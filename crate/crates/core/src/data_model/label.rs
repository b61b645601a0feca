//! Aspect catalog and the trinary per-aspect label vector.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of financial aspects every label vector covers.
pub const NUM_ASPECTS: usize = 5;

/// Number of states per aspect (absent, non-complaint, complaint).
pub const NUM_STATES: usize = 3;

/// Canonical aspect names, in label-vector order.
pub const CANONICAL_ASPECTS: [&str; NUM_ASPECTS] = [
    "Transaction",
    "CustomerService",
    "ClaimedBenefit",
    "ServiceTypes",
    "Miscellaneous",
];

/// Ordered list of the five aspect identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectCatalog {
    names: Vec<String>,
}

impl AspectCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() != NUM_ASPECTS {
            return Err(Error::InvalidCatalog(format!(
                "expected {NUM_ASPECTS} aspects, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::InvalidCatalog("empty aspect name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidCatalog(format!("duplicate aspect `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for AspectCatalog {
    fn default() -> Self {
        Self {
            names: CANONICAL_ASPECTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Serialize for AspectCatalog {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AspectCatalog {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        AspectCatalog::new(names).map_err(serde::de::Error::custom)
    }
}

/// State of a single aspect within a review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum AspectState {
    #[default]
    Absent = 0,
    NonComplaint = 1,
    Complaint = 2,
}

impl AspectState {
    pub const ALL: [AspectState; NUM_STATES] = [
        AspectState::Absent,
        AspectState::NonComplaint,
        AspectState::Complaint,
    ];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_present(self) -> bool {
        self != AspectState::Absent
    }

    pub fn is_complaint(self) -> bool {
        self == AspectState::Complaint
    }
}

/// Per-review label: one trinary state for each of the five aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AspectLabelVector([AspectState; NUM_ASPECTS]);

impl AspectLabelVector {
    pub fn new(states: [AspectState; NUM_ASPECTS]) -> Self {
        Self(states)
    }

    /// Builds a vector from raw integers, rejecting anything outside `{0, 1, 2}`.
    pub fn from_values(values: &[i64]) -> Result<Self> {
        if values.len() != NUM_ASPECTS {
            return Err(Error::LengthMismatch(format!(
                "label vector needs {NUM_ASPECTS} entries, got {}",
                values.len()
            )));
        }
        let mut states = [AspectState::Absent; NUM_ASPECTS];
        for (position, (&value, slot)) in values.iter().zip(states.iter_mut()).enumerate() {
            *slot = usize::try_from(value)
                .ok()
                .and_then(AspectState::from_index)
                .ok_or(Error::InvalidLabelState { position, value })?;
        }
        Ok(Self(states))
    }

    pub fn states(&self) -> &[AspectState; NUM_ASPECTS] {
        &self.0
    }

    pub fn get(&self, aspect: usize) -> AspectState {
        self.0[aspect]
    }

    pub fn values(&self) -> [u8; NUM_ASPECTS] {
        self.0.map(|s| s as u8)
    }
}

impl fmt::Display for AspectLabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.values();
        write!(f, "[{}, {}, {}, {}, {}]", v[0], v[1], v[2], v[3], v[4])
    }
}

impl Serialize for AspectLabelVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.values().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AspectLabelVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<i64>::deserialize(d)?;
        AspectLabelVector::from_values(&raw).map_err(serde::de::Error::custom)
    }
}

/// Encodes a set of (aspect, is_complaint) annotations as a label vector.
pub fn encode_label<S: AsRef<str>>(
    present: &[(S, bool)],
    catalog: &AspectCatalog,
) -> Result<AspectLabelVector> {
    let mut states = [AspectState::Absent; NUM_ASPECTS];
    let mut seen = [false; NUM_ASPECTS];
    for (name, is_complaint) in present {
        let name = name.as_ref();
        let idx = catalog
            .index_of(name)
            .ok_or_else(|| Error::UnknownAspect(name.to_string()))?;
        if seen[idx] {
            return Err(Error::DuplicateAspect(name.to_string()));
        }
        seen[idx] = true;
        states[idx] = if *is_complaint {
            AspectState::Complaint
        } else {
            AspectState::NonComplaint
        };
    }
    Ok(AspectLabelVector(states))
}

/// Lists the present aspects in catalog order with their complaint flag.
pub fn decode_label(label: &AspectLabelVector, catalog: &AspectCatalog) -> Vec<(String, bool)> {
    label
        .states()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_present())
        .map(|(j, s)| (catalog.name(j).to_string(), s.is_complaint()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: [i64; 5]) -> AspectLabelVector {
        AspectLabelVector::from_values(&v).unwrap()
    }

    #[test]
    fn encodes_reference_review() {
        let cat = AspectCatalog::default();
        let v = encode_label(
            &[
                ("Transaction", true),
                ("ClaimedBenefit", true),
                ("ServiceTypes", true),
            ],
            &cat,
        )
        .unwrap();
        assert_eq!(v, lv([2, 0, 2, 2, 0]));
    }

    #[test]
    fn encodes_empty_and_single_non_complaint() {
        let cat = AspectCatalog::default();
        let none: [(&str, bool); 0] = [];
        assert_eq!(encode_label(&none, &cat).unwrap(), lv([0; 5]));
        assert_eq!(
            encode_label(&[("ServiceTypes", false)], &cat).unwrap(),
            lv([0, 0, 0, 1, 0])
        );
    }

    #[test]
    fn rejects_unknown_and_duplicate_aspects() {
        let cat = AspectCatalog::default();
        match encode_label(&[("Mortgage", true)], &cat) {
            Err(Error::UnknownAspect(n)) => assert_eq!(n, "Mortgage"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            encode_label(&[("Transaction", true), ("Transaction", false)], &cat),
            Err(Error::DuplicateAspect(_))
        ));
    }

    #[test]
    fn decodes_examples() {
        let cat = AspectCatalog::default();
        assert_eq!(
            decode_label(&lv([2, 0, 2, 2, 0]), &cat),
            vec![
                ("Transaction".to_string(), true),
                ("ClaimedBenefit".to_string(), true),
                ("ServiceTypes".to_string(), true)
            ]
        );
        assert!(decode_label(&lv([0; 5]), &cat).is_empty());
        assert_eq!(
            decode_label(&lv([1, 2, 0, 0, 0]), &cat),
            vec![
                ("Transaction".to_string(), false),
                ("CustomerService".to_string(), true)
            ]
        );
    }

    #[test]
    fn out_of_range_states_are_rejected() {
        assert!(matches!(
            AspectLabelVector::from_values(&[0, 3, 0, 0, 0]),
            Err(Error::InvalidLabelState {
                position: 1,
                value: 3
            })
        ));
        assert!(AspectLabelVector::from_values(&[0, 0, -1, 0, 0]).is_err());
        assert!(AspectLabelVector::from_values(&[0, 0, 0, 0]).is_err());
        assert!(serde_json::from_str::<AspectLabelVector>("[0,1,2,0,7]").is_err());
    }

    #[test]
    fn catalog_invariants() {
        assert!(AspectCatalog::new(["a", "b", "c", "d"]).is_err());
        assert!(AspectCatalog::new(["a", "b", "c", "d", "a"]).is_err());
        assert_eq!(AspectCatalog::default().names().len(), NUM_ASPECTS);
    }

    proptest! {
        #[test]
        fn encode_decode_are_inverse(raw in proptest::array::uniform5(0i64..3)) {
            let cat = AspectCatalog::default();
            let v = lv(raw);
            let decoded = decode_label(&v, &cat);
            prop_assert_eq!(encode_label(&decoded, &cat).unwrap(), v);
        }

        #[test]
        fn decode_encode_is_canonical_order(
            mask in proptest::array::uniform5(any::<bool>()),
            flags in proptest::array::uniform5(any::<bool>()),
            order in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let cat = AspectCatalog::default();
            let listed: Vec<(String, bool)> = order
                .iter()
                .filter(|&&j| mask[j])
                .map(|&j| (cat.name(j).to_string(), flags[j]))
                .collect();
            let mut canonical = listed.clone();
            canonical.sort_by_key(|(n, _)| cat.index_of(n).unwrap());
            let v = encode_label(&listed, &cat).unwrap();
            prop_assert_eq!(decode_label(&v, &cat), canonical);
        }
    }
}
