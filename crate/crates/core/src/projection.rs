//! Euclidean projections onto the admissible potential sets.
//!
//! Both sets are Cartesian products of intervals, so projecting is a
//! coordinatewise clip in `O(M)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measures::DiscreteMeasure;
use crate::semidual::Potential;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectionSet {
    /// `[0, 2R²]^M`.
    BoxCInf { radius: f64 },
    /// `{g : g_1 = 0, |g_j| ≤ r_j}` with `r_j = R‖y_1 − y_j‖`.
    LipschitzCu { radii: Vec<f64> },
    None,
}

impl ProjectionSet {
    pub fn box_cinf(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(domain(format!("C_inf radius must be > 0, got {radius}")));
        }
        Ok(Self::BoxCInf { radius })
    }

    pub fn lipschitz(radii: Vec<f64>) -> Result<Self> {
        match radii.first() {
            Some(r) if *r == 0.0 => {}
            _ => return Err(domain("C_u radii must start with r_1 = 0")),
        }
        if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(domain("C_u radii must be finite and >= 0"));
        }
        Ok(Self::LipschitzCu { radii })
    }

    /// `C_u` for a target measure and support radius.
    pub fn lipschitz_for(nu: &DiscreteMeasure, radius: f64) -> Result<Self> {
        Self::lipschitz(nu.pairwise_radii(radius)?)
    }

    pub fn check_len(&self, m: usize) -> Result<()> {
        if let Self::LipschitzCu { radii } = self {
            if radii.len() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    got: radii.len(),
                });
            }
        }
        Ok(())
    }

    /// Projects `g` in place.
    pub fn project_in_place(&self, g: &mut [f64]) {
        match self {
            Self::BoxCInf { radius } => {
                let hi = 2.0 * radius * radius;
                g.iter_mut().for_each(|v| *v = v.clamp(0.0, hi));
            }
            Self::LipschitzCu { radii } => {
                debug_assert_eq!(radii.len(), g.len());
                for (v, r) in g.iter_mut().zip(radii) {
                    *v = v.clamp(-r, *r);
                }
                g[0] = 0.0;
            }
            Self::None => {}
        }
    }

    pub fn project(&self, g: &Potential) -> Result<Potential> {
        self.check_len(g.len())?;
        let mut out = g.clone();
        self.project_in_place(out.values_mut());
        Ok(out)
    }

    /// Exact membership test.
    pub fn contains(&self, g: &[f64]) -> bool {
        match self {
            Self::BoxCInf { radius } => {
                let hi = 2.0 * radius * radius;
                g.iter().all(|v| (0.0..=hi).contains(v))
            }
            Self::LipschitzCu { radii } => {
                radii.len() == g.len()
                    && g[0] == 0.0
                    && g.iter().zip(radii).all(|(v, r)| v.abs() <= *r)
            }
            Self::None => true,
        }
    }
}
