use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::anchor::AnchorPoint;
use super::component::ComponentIndex;
use super::decompose::{DdsgFunction, DecomposeOptions, OrderSummary};
use crate::error::{DdsgError, Result};
use crate::sparse_grid::{SparseGrid, SparseGridDocument};

pub const DDSG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub index: ComponentIndex,
    pub grid: SparseGridDocument,
}

/// Versioned container for a [`DdsgFunction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdsgDocument {
    pub schema_version: u32,
    pub dim: usize,
    pub out_dim: usize,
    pub anchor: AnchorPoint,
    pub options: DecomposeOptions,
    pub accepted: Vec<ComponentDocument>,
    pub rejected: Vec<ComponentIndex>,
    pub coeff_b: Vec<(ComponentIndex, i64)>,
    pub orders: Vec<OrderSummary>,
}

impl DdsgFunction {
    pub fn to_document(&self) -> DdsgDocument {
        DdsgDocument {
            schema_version: DDSG_SCHEMA_VERSION,
            dim: self.dim,
            out_dim: self.out_dim,
            anchor: self.anchor.clone(),
            options: self.options,
            accepted: self
                .grids
                .iter()
                .map(|(u, g)| ComponentDocument {
                    index: u.clone(),
                    grid: g.to_document(),
                })
                .collect(),
            rejected: self.rejected.iter().cloned().collect(),
            coeff_b: self.coeffs.iter().map(|(u, b)| (u.clone(), *b)).collect(),
            orders: self.orders.clone(),
        }
    }

    /// Rebuilds the function and checks the stored coefficients against the
    /// ones implied by the accepted family.
    pub fn from_document(doc: &DdsgDocument) -> Result<Self> {
        if doc.schema_version != DDSG_SCHEMA_VERSION {
            return Err(DdsgError::Serialization(format!(
                "unsupported decomposition schema version {}",
                doc.schema_version
            )));
        }
        if doc.anchor.dim() != doc.dim || doc.anchor.value.len() != doc.out_dim {
            return Err(DdsgError::Serialization("anchor shape does not match".into()));
        }
        let mut grids = BTreeMap::new();
        for c in &doc.accepted {
            if c.index.is_empty() || c.index.dims().iter().any(|&j| j >= doc.dim) {
                return Err(DdsgError::Serialization(format!("invalid component index {}", c.index)));
            }
            let grid = SparseGrid::from_document(&c.grid)?;
            if grids.insert(c.index.clone(), Arc::new(grid)).is_some() {
                return Err(DdsgError::Serialization(format!("duplicate component {}", c.index)));
            }
        }
        let rejected: BTreeSet<ComponentIndex> = doc.rejected.iter().cloned().collect();
        let f = DdsgFunction::from_parts(doc.anchor.clone(), doc.options, grids, rejected, doc.orders.clone())?;
        let stored: BTreeMap<ComponentIndex, i64> = doc.coeff_b.iter().cloned().collect();
        if stored != f.coeffs {
            return Err(DdsgError::Serialization("coeff_b does not match the accepted family".into()));
        }
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DdsgDocument = serde_json::from_str(s)?;
        Self::from_document(&doc)
    }
}
