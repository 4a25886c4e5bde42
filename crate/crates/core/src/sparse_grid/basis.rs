use serde::{Deserialize, Serialize};

use crate::error::{DdsgError, Result};

/// Finest supported level per dimension.
pub const MAX_LEVEL: u32 = 30;

/// How the one-dimensional basis treats the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Plain hat functions; the interpolant vanishes on the boundary.
    ZeroBoundary,
    /// Level 1 is the constant 1 and the outermost hat of every finer level
    /// extrapolates linearly to the boundary (value 2 at the edge).
    #[default]
    ModifiedLinear,
}

impl std::str::FromStr for BoundaryMode {
    type Err = DdsgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_boundary" => Ok(Self::ZeroBoundary),
            "modified_linear" => Ok(Self::ModifiedLinear),
            other => Err(DdsgError::InvalidArgument(format!("unknown boundary mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ZeroBoundary => "zero_boundary",
            Self::ModifiedLinear => "modified_linear",
        })
    }
}

pub fn check_level_index(level: u32, index: u32) -> Result<()> {
    let valid = (1..=MAX_LEVEL).contains(&level) && index % 2 == 1 && index < (1u32 << level);
    if valid {
        Ok(())
    } else {
        Err(DdsgError::InvalidLevelIndex { level, index })
    }
}

/// One-dimensional hierarchical basis function `φ_{level,index}(x)`.
pub fn basis_1d(level: u32, index: u32, x: f64, mode: BoundaryMode) -> Result<f64> {
    check_level_index(level, index)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(DdsgError::OutOfDomain { point: vec![x] });
    }
    Ok(value(level, index, x, mode))
}

/// Unchecked basis value.
#[inline]
pub(crate) fn value(level: u32, index: u32, x: f64, mode: BoundaryMode) -> f64 {
    let scale = (1u64 << level) as f64;
    match mode {
        BoundaryMode::ZeroBoundary => (1.0 - (x * scale - index as f64).abs()).max(0.0),
        BoundaryMode::ModifiedLinear => {
            if level == 1 {
                1.0
            } else if index == 1 {
                (2.0 - x * scale).max(0.0)
            } else if index == (1u32 << level) - 1 {
                (2.0 - (1.0 - x) * scale).max(0.0)
            } else {
                (1.0 - (x * scale - index as f64).abs()).max(0.0)
            }
        }
    }
}

/// Basis value and derivative. At a kink the right derivative is returned.
#[inline]
pub(crate) fn value_and_slope(level: u32, index: u32, x: f64, mode: BoundaryMode) -> (f64, f64) {
    let scale = (1u64 << level) as f64;
    let hat = |t: f64| {
        let v = 1.0 - t.abs();
        if v <= 0.0 {
            (0.0, 0.0)
        } else if t < 0.0 {
            (v, scale)
        } else {
            (v, -scale)
        }
    };
    match mode {
        BoundaryMode::ZeroBoundary => hat(x * scale - index as f64),
        BoundaryMode::ModifiedLinear => {
            if level == 1 {
                (1.0, 0.0)
            } else if index == 1 {
                let v = 2.0 - x * scale;
                if v <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (v, -scale)
                }
            } else if index == (1u32 << level) - 1 {
                let v = 2.0 - (1.0 - x) * scale;
                if v <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (v, scale)
                }
            } else {
                hat(x * scale - index as f64)
            }
        }
    }
}

/// Integral of the one-dimensional basis function over `[0,1]`.
#[inline]
pub(crate) fn integral(level: u32, index: u32, mode: BoundaryMode) -> f64 {
    let h = 1.0 / (1u64 << level) as f64;
    match mode {
        BoundaryMode::ZeroBoundary => h,
        BoundaryMode::ModifiedLinear => {
            if level == 1 {
                1.0
            } else if index == 1 || index == (1u32 << level) - 1 {
                2.0 * h
            } else {
                h
            }
        }
    }
}

/// Index of the level-`level` basis function whose support contains `x`.
#[inline]
pub(crate) fn containing_index(level: u32, x: f64) -> u32 {
    let cells = 1u32 << (level - 1);
    let cell = ((x * cells as f64) as u32).min(cells - 1);
    2 * cell + 1
}
