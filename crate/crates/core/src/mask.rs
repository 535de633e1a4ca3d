//! Binary trainable-tensor selection mask.
//!
//! Bits are stored in *depth order*: index 0 is the tensor nearest the loss
//! (depth 1), index N-1 the tensor nearest the input. Logs print masks in
//! forward order, which is the reverse.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    bits: Vec<bool>,
}

// Serialized form is the forward-order bit string ("0011..."), the same
// orientation logs and figures use.
impl Serialize for SelectionMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.forward_string())
    }
}

impl<'de> Deserialize<'de> for SelectionMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        let forward: Vec<bool> = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(D::Error::custom(format!("bad mask bit '{other}'"))),
            })
            .collect::<Result<_, _>>()?;
        Ok(SelectionMask::from_forward_bits(&forward))
    }
}

#[allow(clippy::len_without_is_empty)] // is_empty would read as "no bits set"
impl SelectionMask {
    pub fn empty(n: usize) -> Self {
        SelectionMask {
            bits: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        SelectionMask {
            bits: vec![true; n],
        }
    }

    /// Build from bits in depth order (index 0 = nearest the loss).
    pub fn from_depth_bits(bits: Vec<bool>) -> Self {
        SelectionMask { bits }
    }

    /// Build from bits printed in forward order (index 0 = nearest the input).
    pub fn from_forward_bits(forward: &[bool]) -> Self {
        SelectionMask {
            bits: forward.iter().rev().copied().collect(),
        }
    }

    /// Build from 1-based depth indices.
    pub fn from_depths(n: usize, depths: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &d in depths {
            assert!((1..=n).contains(&d), "depth {d} out of range 1..={n}");
            bits[d - 1] = true;
        }
        SelectionMask { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty_selection(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Selected state of the tensor at 1-based depth `d`.
    pub fn selected_at_depth(&self, d: usize) -> bool {
        self.bits[d - 1]
    }

    pub fn set_depth(&mut self, d: usize, value: bool) {
        self.bits[d - 1] = value;
    }

    /// Largest selected depth index, if any.
    pub fn deepest(&self) -> Option<usize> {
        self.bits.iter().rposition(|&b| b).map(|i| i + 1)
    }

    pub fn count_selected(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 1-based depth indices of selected tensors, ascending.
    pub fn selected_depths(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect()
    }

    pub fn depth_bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn forward_bits(&self) -> Vec<bool> {
        self.bits.iter().rev().copied().collect()
    }

    /// Compact forward-order string, e.g. "0011010".
    pub fn forward_string(&self) -> String {
        self.bits
            .iter()
            .rev()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn is_subset_of(&self, other: &SelectionMask) -> bool {
        self.bits.len() == other.bits.len()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| !a || b)
    }
}
