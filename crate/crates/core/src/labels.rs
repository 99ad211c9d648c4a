//! Canonical (first-appearance) cluster labelling.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{DncError, Result};
use crate::types::{CanonicalLabelSequence, IdentitySequence};

/// Labels items by order of first appearance, starting at 1.
pub fn canonical_labels<T: Eq + Hash>(items: &[T]) -> Vec<usize> {
    let mut seen: HashMap<&T, usize> = HashMap::new();
    items
        .iter()
        .map(|item| {
            let next = seen.len() + 1;
            *seen.entry(item).or_insert(next)
        })
        .collect()
}

pub fn canonicalize(ids: &IdentitySequence) -> CanonicalLabelSequence {
    CanonicalLabelSequence::new_unchecked(canonical_labels(ids.as_slice()))
}

/// True iff `labels` starts at 1 and every label is at most one above the
/// running maximum. This also rules out gaps in the label set.
pub fn is_canonical(labels: &[usize]) -> bool {
    let mut max = 0usize;
    for &l in labels {
        if l == 0 || l > max + 1 {
            return false;
        }
        max = max.max(l);
    }
    !labels.is_empty()
}

/// True iff `a` and `b` describe the same partition.
pub fn relabel_equivalent<A, B>(a: &[A], b: &[B]) -> Result<bool>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if a.len() != b.len() {
        return Err(DncError::DimensionMismatch(format!(
            "label sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(canonical_labels(a) == canonical_labels(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(s: &str) -> IdentitySequence {
        s.split_whitespace().collect()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(canonicalize(&ids("E A C A E E C")).as_slice(), &[1, 2, 3, 2, 1, 1, 3]);
        assert_eq!(
            canonicalize(&ids("A C A B B C D B D")).as_slice(),
            &[1, 2, 1, 3, 3, 2, 4, 3, 4]
        );
        assert_eq!(canonicalize(&ids("X X X")).as_slice(), &[1, 1, 1]);
    }

    #[test]
    fn is_canonical_examples() {
        assert!(is_canonical(&[1, 2, 3, 2, 1, 1, 3]));
        assert!(!is_canonical(&[2, 1]));
        assert!(!is_canonical(&[1, 3]));
        assert!(!is_canonical(&[]));
        assert!(!is_canonical(&[1, 0]));
    }

    #[test]
    fn relabel_examples() {
        assert!(relabel_equivalent(&[1, 2, 1], &[2, 1, 2]).unwrap());
        assert!(!relabel_equivalent(&[1, 2, 1], &[1, 1, 1]).unwrap());
        let c = canonicalize(&ids("E A C A E E C"));
        assert!(relabel_equivalent(&[1, 2, 3, 2, 1, 1, 3], c.as_slice()).unwrap());
        assert!(relabel_equivalent(&[1, 2], &[1]).is_err());
    }

    proptest! {
        #[test]
        fn canonicalize_is_invariant_to_renaming(
            raw in prop::collection::vec(0u8..6, 1..40),
            shift in 1u8..250,
        ) {
            let a: Vec<u8> = raw.clone();
            let renamed: Vec<u8> = raw.iter().map(|x| x.wrapping_mul(37).wrapping_add(shift)).collect();
            let ca = canonical_labels(&a);
            prop_assert!(is_canonical(&ca));
            prop_assert_eq!(&ca, &canonical_labels(&renamed));
            prop_assert!(relabel_equivalent(&ca, &a).unwrap());
            prop_assert!(relabel_equivalent(&ca, &renamed).unwrap());
        }
    }
}
