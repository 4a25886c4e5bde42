use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{DdsgError, Result};

/// A component index `u ⊆ {0, …, d−1}` (zero-based dimension ids).
///
/// Ordered by cardinality first, then lexicographically, which is the slot
/// order of the vectorized kernel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ComponentIndex(Vec<usize>);

impl ComponentIndex {
    pub fn new(mut dims: Vec<usize>) -> Result<Self> {
        dims.sort_unstable();
        if dims.windows(2).any(|w| w[0] == w[1]) {
            return Err(DdsgError::InvalidArgument(format!("duplicate dimension in component {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn singleton(dim: usize) -> Self {
        Self(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_superset_of(&self, other: &ComponentIndex) -> bool {
        // both sorted
        let mut it = self.0.iter();
        other.0.iter().all(|d| it.any(|x| x == d))
    }

    /// All `2^|u|` subsets, the empty set and `u` itself included.
    pub fn subsets(&self) -> impl Iterator<Item = ComponentIndex> + '_ {
        let k = self.0.len();
        (0u64..(1u64 << k)).map(move |mask| {
            ComponentIndex((0..k).filter(|b| mask >> b & 1 == 1).map(|b| self.0[b]).collect())
        })
    }

    /// Subsets obtained by removing one dimension.
    pub fn facets(&self) -> impl Iterator<Item = ComponentIndex> + '_ {
        (0..self.0.len()).map(move |skip| {
            ComponentIndex(self.0.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &d)| d).collect())
        })
    }
}

impl PartialOrd for ComponentIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ComponentIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl std::fmt::Display for ComponentIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("{")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("}")
    }
}

impl std::str::FromStr for ComponentIndex {
    type Err = DdsgError;
    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| DdsgError::InvalidArgument(format!("bad component index {s:?}")))?;
        if inner.trim().is_empty() {
            return Ok(Self::empty());
        }
        let dims = inner
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| DdsgError::InvalidArgument(format!("bad component index {s:?}")))?;
        Self::new(dims)
    }
}

/// All components of order `k` over `d` dimensions that do not contain any
/// rejected component, in slot order.
pub fn candidates(d: usize, k: usize, rejected: &BTreeSet<ComponentIndex>) -> Vec<ComponentIndex> {
    use itertools::Itertools;
    (0..d)
        .combinations(k)
        .map(ComponentIndex)
        .filter(|c| !rejected.iter().any(|z| c.is_superset_of(z)))
        .collect()
}

/// Every component of order at most `k_max`, the empty one included.
pub fn truncated_family(d: usize, k_max: usize) -> BTreeSet<ComponentIndex> {
    (0..=k_max.min(d))
        .flat_map(|k| candidates(d, k, &BTreeSet::new()))
        .collect()
}

/// Checks that `family` is closed under taking subsets.
pub fn check_downward_closed(family: &BTreeSet<ComponentIndex>) -> Result<()> {
    for u in family {
        if let Some(missing) = u.facets().find(|v| !family.contains(v)) {
            return Err(DdsgError::InconsistentFamily(format!(
                "{u} is present but its subset {missing} is not"
            )));
        }
    }
    if !family.is_empty() && !family.contains(&ComponentIndex::empty()) {
        return Err(DdsgError::InconsistentFamily("the empty component is missing".into()));
    }
    Ok(())
}

/// Combination coefficients `b_i = Σ_{u ∈ family, u ⊇ i} (−1)^{|u|−|i|}` of
/// the cut interpolants. The family must be downward closed.
pub fn combination_coefficients(family: &BTreeSet<ComponentIndex>) -> Result<BTreeMap<ComponentIndex, i64>> {
    check_downward_closed(family)?;
    let mut b: BTreeMap<ComponentIndex, i64> = family.iter().map(|u| (u.clone(), 0)).collect();
    for u in family {
        for v in u.subsets() {
            let sign = if (u.order() - v.order()) % 2 == 0 { 1 } else { -1 };
            *b.get_mut(&v).expect("downward closed") += sign;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci(d: &[usize]) -> ComponentIndex {
        ComponentIndex::new(d.to_vec()).unwrap()
    }

    #[test]
    fn ordering_is_by_order_then_lex() {
        let mut v = vec![ci(&[1, 2]), ci(&[3]), ComponentIndex::empty(), ci(&[0, 4]), ci(&[0])];
        v.sort();
        let s: Vec<String> = v.iter().map(ToString::to_string).collect();
        assert_eq!(s, ["{}", "{0}", "{3}", "{0,4}", "{1,2}"]);
    }

    #[test]
    fn superset_relation() {
        assert!(ci(&[0, 1, 2]).is_superset_of(&ci(&[0, 2])));
        assert!(!ci(&[0, 1]).is_superset_of(&ci(&[2])));
        assert!(ci(&[3]).is_superset_of(&ComponentIndex::empty()));
        assert!(ComponentIndex::new(vec![1, 1]).is_err());
    }

    #[test]
    fn pruned_candidates() {
        let z: BTreeSet<_> = [ci(&[0, 1])].into();
        let c = candidates(3, 3, &z);
        assert!(c.is_empty());
        let c = candidates(3, 2, &z);
        assert_eq!(c, vec![ci(&[0, 2]), ci(&[1, 2])]);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["{}", "{4}", "{0,3,7}"] {
            assert_eq!(s.parse::<ComponentIndex>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn coefficient_examples() {
        let b = combination_coefficients(&truncated_family(2, 1)).unwrap();
        assert_eq!(b[&ComponentIndex::empty()], -1);
        assert_eq!(b[&ci(&[0])], 1);
        assert_eq!(b[&ci(&[1])], 1);
        let b = combination_coefficients(&truncated_family(3, 1)).unwrap();
        assert_eq!(b[&ComponentIndex::empty()], -2);
        let b = combination_coefficients(&truncated_family(2, 2)).unwrap();
        assert_eq!(
            b.values().copied().collect::<Vec<_>>(),
            vec![0, 0, 0, 1],
            "{{}}, {{0}}, {{1}}, {{0,1}}"
        );
    }

    #[test]
    fn closure_violation_detected() {
        let fam: BTreeSet<_> = [ComponentIndex::empty(), ci(&[0]), ci(&[0, 1])].into();
        assert!(combination_coefficients(&fam).is_err());
    }
}
