use crate::error::{DdsgError, Result};

use super::basis::check_level_index;

/// Hierarchical level/index multi-index of one grid node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelIndex {
    levels: Vec<u32>,
    indices: Vec<u32>,
}

impl LevelIndex {
    pub fn new(levels: Vec<u32>, indices: Vec<u32>) -> Result<Self> {
        if levels.len() != indices.len() {
            return Err(DdsgError::DimensionMismatch {
                expected: levels.len(),
                got: indices.len(),
            });
        }
        for (&l, &i) in levels.iter().zip(&indices) {
            check_level_index(l, i)?;
        }
        Ok(Self { levels, indices })
    }

    pub(crate) fn from_parts_unchecked(levels: Vec<u32>, indices: Vec<u32>) -> Self {
        Self { levels, indices }
    }

    pub fn root(dim: usize) -> Self {
        Self {
            levels: vec![1; dim],
            indices: vec![1; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn level_sum(&self) -> u32 {
        self.levels.iter().sum()
    }

    /// Grid coordinates `i_j · 2^{-l_j}`.
    pub fn point(&self) -> Vec<f64> {
        self.levels
            .iter()
            .zip(&self.indices)
            .map(|(&l, &i)| i as f64 / (1u64 << l) as f64)
            .collect()
    }

    /// Canonical packed encoding, one word per dimension: `2^l + i`.
    /// The highest set bit recovers the level.
    pub fn packed(&self) -> Vec<u32> {
        self.levels
            .iter()
            .zip(&self.indices)
            .map(|(&l, &i)| (1u32 << l) | i)
            .collect()
    }

    pub fn from_packed(words: &[u32]) -> Result<Self> {
        let mut levels = Vec::with_capacity(words.len());
        let mut indices = Vec::with_capacity(words.len());
        for &w in words {
            if w < 2 {
                return Err(DdsgError::InvalidLevelIndex { level: 0, index: w });
            }
            let l = 31 - w.leading_zeros();
            levels.push(l);
            indices.push(w - (1u32 << l));
        }
        Self::new(levels, indices)
    }

    /// The two hierarchical children along dimension `j`.
    pub fn children_along(&self, j: usize) -> [LevelIndex; 2] {
        let mut left = self.clone();
        left.levels[j] += 1;
        left.indices[j] = 2 * self.indices[j] - 1;
        let mut right = left.clone();
        right.indices[j] = 2 * self.indices[j] + 1;
        [left, right]
    }

    /// The hierarchical parent along dimension `j`, if `l_j > 1`.
    pub fn parent_along(&self, j: usize) -> Option<LevelIndex> {
        if self.levels[j] <= 1 {
            return None;
        }
        let mut p = self.clone();
        p.levels[j] -= 1;
        let i = self.indices[j];
        p.indices[j] = if ((i + 1) / 2) % 2 == 1 { (i + 1) / 2 } else { (i - 1) / 2 };
        Some(p)
    }

    pub fn parents(&self) -> impl Iterator<Item = LevelIndex> + '_ {
        (0..self.dim()).filter_map(move |j| self.parent_along(j))
    }
}

impl std::fmt::Display for LevelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(l={:?}, i={:?})", self.levels, self.indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trip() {
        let k = LevelIndex::new(vec![1, 3, 5], vec![1, 5, 31]).unwrap();
        assert_eq!(LevelIndex::from_packed(&k.packed()).unwrap(), k);
    }

    #[test]
    fn parent_child_relation() {
        let k = LevelIndex::new(vec![2, 3], vec![3, 5]).unwrap();
        for j in 0..2 {
            for c in k.children_along(j) {
                assert_eq!(c.parent_along(j).unwrap(), k);
                LevelIndex::new(c.levels().to_vec(), c.indices().to_vec()).unwrap();
            }
        }
        assert_eq!(LevelIndex::root(2).parents().count(), 0);
    }

    #[test]
    fn rejects_even_index() {
        assert!(LevelIndex::new(vec![2], vec![2]).is_err());
    }
}
