use serde::{Deserialize, Serialize};

use super::{BoundaryMode, GridOptions, InterpScratch, LevelIndex, SparseGrid};
use crate::error::{DdsgError, Result};

pub const SPARSE_GRID_SCHEMA_VERSION: u32 = 1;

/// Serialized form of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDocument {
    pub levels: Vec<u32>,
    pub indices: Vec<u32>,
    pub surplus: Vec<f64>,
}

/// Versioned structured-text document for a [`SparseGrid`]. Floats are
/// written in shortest round-trip decimal form, so surpluses reload bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseGridDocument {
    pub schema_version: u32,
    pub dim: usize,
    pub out_dim: usize,
    pub max_level: u32,
    pub boundary_mode: BoundaryMode,
    pub threshold: f64,
    pub nodes: Vec<NodeDocument>,
}

impl SparseGrid {
    pub fn to_document(&self) -> SparseGridDocument {
        SparseGridDocument {
            schema_version: SPARSE_GRID_SCHEMA_VERSION,
            dim: self.dim,
            out_dim: self.out_dim,
            max_level: self.max_level,
            boundary_mode: self.boundary,
            threshold: self.threshold,
            nodes: self
                .nodes()
                .map(|n| NodeDocument {
                    levels: n.key.levels().to_vec(),
                    indices: n.key.indices().to_vec(),
                    surplus: n.surplus.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds a grid from a document. Node values are recomputed by
    /// interpolation; refinement flags are not persisted.
    pub fn from_document(doc: &SparseGridDocument) -> Result<Self> {
        if doc.schema_version != SPARSE_GRID_SCHEMA_VERSION {
            return Err(DdsgError::Serialization(format!(
                "unsupported sparse grid schema version {}",
                doc.schema_version
            )));
        }
        let opts = GridOptions {
            max_level: doc.max_level,
            threshold: doc.threshold,
            boundary: doc.boundary_mode,
        };
        opts.validate()?;
        let mut grid = SparseGrid::empty(doc.dim, doc.out_dim, &opts);
        let zeros = vec![0.0; doc.out_dim];
        for node in &doc.nodes {
            let key = LevelIndex::new(node.levels.clone(), node.indices.clone())?;
            if key.dim() != doc.dim {
                return Err(DdsgError::DimensionMismatch {
                    expected: doc.dim,
                    got: key.dim(),
                });
            }
            if node.surplus.len() != doc.out_dim {
                return Err(DdsgError::DimensionMismatch {
                    expected: doc.out_dim,
                    got: node.surplus.len(),
                });
            }
            if key.levels().iter().any(|&l| l > doc.max_level) {
                return Err(DdsgError::Serialization(format!("node {key} exceeds max_level")));
            }
            if grid.contains(&key) {
                return Err(DdsgError::Serialization(format!("duplicate node {key}")));
            }
            if node.surplus.iter().any(|v| !v.is_finite()) {
                return Err(DdsgError::Serialization(format!("non-finite surplus at {key}")));
            }
            grid.push_node(&key, &zeros, &node.surplus);
        }
        let mut scratch = InterpScratch::default();
        let mut values = vec![0.0; grid.values.len()];
        for id in 0..grid.len() {
            let x = grid.key(id).point();
            let m = grid.out_dim;
            grid.accumulate(&x, 1.0, &mut values[id * m..(id + 1) * m], &mut scratch, false);
        }
        grid.values = values;
        Ok(grid)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}
