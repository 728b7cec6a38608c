//! Benchmark instances with known optimal potentials and transport maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measures::{DiscreteMeasure, SourceDistribution, SourceKind};
use crate::rng::{streams, RngStream};
use crate::semidual::Potential;
use crate::transport_map::{assign_cell, cell_counts, CellLocator};

/// Range of the random optimal potential drawn for the non-uniform instance.
pub const EXAMPLE2_G_RANGE: f64 = 0.1;
/// Default Monte-Carlo count used to set the non-uniform instance's weights.
pub const EXAMPLE2_DEFAULT_MC_N: usize = 10_000_000;
const EXAMPLE2_MIN_MC_N: usize = 100_000;
const EXAMPLE2_MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstanceLabel {
    /// `μ = U([0,1]^d)`, atoms `((j − ½)/M, ½, …, ½)`, uniform weights.
    Example1 { d: usize, m: usize },
    /// Random atoms in `[0,1]^d`, random `g*`, weights = MC cell masses.
    Example2 { d: usize, m: usize, seed: u64, mc_n: usize },
    /// `μ = U([δ, 1 + δ])`, atoms `k/M`, uniform weights.
    Example3 { delta: f64, m: usize },
    /// Loaded from disk.
    File,
}

/// Exact assignment rule `x ↦ cell of T*(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MapOracle {
    /// Cells are the slabs `((j − 1)/m, j/m]` of `x₁ − offset`.
    Slabs { offset: f64, m: usize },
    /// Cells of the stored optimal potential.
    Potential,
}

#[derive(Debug, Clone)]
pub struct GroundTruthInstance {
    pub src: SourceDistribution,
    pub nu: DiscreteMeasure,
    pub g_star: Potential,
    pub map_oracle: MapOracle,
    pub label: InstanceLabel,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    g_star: Vec<f64>,
    source: SourceDistribution,
    map_oracle: MapOracle,
    label: InstanceLabel,
}

impl GroundTruthInstance {
    /// 0-based index of the optimal cell containing `x`.
    pub fn true_cell(&self, x: &[f64]) -> usize {
        match &self.map_oracle {
            MapOracle::Slabs { offset, m } => slab_index(x[0] - offset, *m),
            MapOracle::Potential => assign_cell(&self.g_star, x, &self.nu)
                .map(|c| c.index)
                .expect("instance shapes are consistent"),
        }
    }

    /// Optimal cells for every row of `xs`.
    pub fn true_cells(&self, xs: &[f64]) -> Vec<usize> {
        match &self.map_oracle {
            MapOracle::Slabs { offset, m } => xs
                .chunks_exact(self.nu.dim())
                .map(|x| slab_index(x[0] - offset, *m))
                .collect(),
            MapOracle::Potential => CellLocator::new(&self.g_star, &self.nu)
                .expect("instance shapes are consistent")
                .locate_all(xs),
        }
    }

    /// `T*(x)`.
    pub fn true_map(&self, x: &[f64]) -> &[f64] {
        self.nu.atom(self.true_cell(x))
    }

    /// Writes `<stem>.csv` (the target measure) and `<stem>.json` (optimal
    /// potential, source and map rule).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.nu.save_csv(stem.with_extension("csv"))?;
        let side = Sidecar {
            g_star: self.g_star.values().to_vec(),
            source: self.src.clone(),
            map_oracle: self.map_oracle.clone(),
            label: self.label.clone(),
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| domain(e.to_string()))?;
        std::fs::write(stem.with_extension("json"), text)?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let nu = DiscreteMeasure::load_csv(stem.with_extension("csv"))?;
        let text = std::fs::read_to_string(stem.with_extension("json"))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| domain(e.to_string()))?;
        let g_star = Potential::new(side.g_star)?;
        g_star.check_len(&nu)?;
        if side.source.dim() != nu.dim() {
            return Err(Error::LengthMismatch {
                expected: nu.dim(),
                got: side.source.dim(),
            });
        }
        Ok(Self {
            src: side.source,
            nu,
            g_star,
            map_oracle: side.map_oracle,
            label: side.label,
        })
    }
}

/// 0-based slab of `u` for slabs `((j − 1)/m, j/m]`, clamped to the ends.
fn slab_index(u: f64, m: usize) -> usize {
    let j = (u * m as f64).ceil();
    (j.max(1.0) as usize).min(m) - 1
}

/// Uniform cube source with collinear equispaced atoms; `g* = 0`.
pub fn example1(d: usize, m: usize) -> Result<GroundTruthInstance> {
    if d == 0 || m == 0 {
        return Err(domain("example 1 needs d >= 1 and M >= 1"));
    }
    let mut pts = vec![0.5; m * d];
    for j in 0..m {
        pts[j * d] = (j as f64 + 0.5) / m as f64;
    }
    Ok(GroundTruthInstance {
        src: SourceDistribution::unit_cube(d)?,
        nu: DiscreteMeasure::uniform(pts, d)?,
        g_star: Potential::zeros(m),
        map_oracle: MapOracle::Slabs { offset: 0.0, m },
        label: InstanceLabel::Example1 { d, m },
    })
}

/// Random atoms and a random optimal potential; weights are the Monte-Carlo
/// masses of the optimal cells, so `g*` is optimal by construction.
pub fn example2(d: usize, m: usize, seed: u64, mc_n: usize) -> Result<GroundTruthInstance> {
    if d == 0 || m == 0 {
        return Err(domain("example 2 needs d >= 1 and M >= 1"));
    }
    if mc_n < EXAMPLE2_MIN_MC_N {
        return Err(domain(format!("example 2 needs mc_n >= {EXAMPLE2_MIN_MC_N}, got {mc_n}")));
    }
    let src = SourceDistribution::unit_cube(d)?;
    let mut rng = RngStream::with_stream(seed, streams::INSTANCE);
    for _ in 0..EXAMPLE2_MAX_ATTEMPTS {
        let pts: Vec<f64> = (0..m * d).map(|_| rng.uniform()).collect();
        let raw: Vec<f64> = (0..m)
            .map(|_| EXAMPLE2_G_RANGE * (2.0 * rng.uniform() - 1.0))
            .collect();
        let anchor = raw[0];
        let g_star = Potential::new(raw.iter().map(|v| v - anchor).collect())?;
        let provisional = match DiscreteMeasure::uniform(pts.clone(), d) {
            Ok(nu) => nu,
            Err(Error::DuplicateAtoms(..)) => continue,
            Err(e) => return Err(e),
        };
        let counts = cell_counts(&g_star, &src, &provisional, mc_n, &mut rng)?;
        if counts.contains(&0) {
            continue;
        }
        let weights = counts.iter().map(|c| *c as f64 / mc_n as f64).collect();
        return Ok(GroundTruthInstance {
            src,
            nu: DiscreteMeasure::new(pts, d, weights)?,
            g_star,
            map_oracle: MapOracle::Potential,
            label: InstanceLabel::Example2 { d, m, seed, mc_n },
        });
    }
    Err(Error::Degenerate(format!(
        "example 2: empty optimal cell in all {EXAMPLE2_MAX_ATTEMPTS} draws"
    )))
}

/// Shifted uniform interval against the grid `k/M`.
///
/// Cell boundaries are `b_j = δ + j/M`; `g*` follows from equal reduced costs
/// at each boundary, anchored at `g*_1 = 0`.
pub fn example3(delta: f64, m: usize) -> Result<GroundTruthInstance> {
    if m == 0 || !delta.is_finite() {
        return Err(domain("example 3 needs M >= 1 and finite delta"));
    }
    let mf = m as f64;
    let ys: Vec<f64> = (1..=m).map(|k| k as f64 / mf).collect();
    let mut g = vec![0.0; m];
    for j in 0..m - 1 {
        let b = delta + (j + 1) as f64 / mf;
        g[j + 1] = g[j] + 0.5 * ((b - ys[j + 1]).powi(2) - (b - ys[j]).powi(2));
    }
    Ok(GroundTruthInstance {
        src: SourceDistribution::new(SourceKind::ShiftedUniformInterval { delta, length: 1.0 })?,
        nu: DiscreteMeasure::uniform(ys, 1)?,
        g_star: Potential::new(g)?,
        map_oracle: MapOracle::Slabs { offset: delta, m },
        label: InstanceLabel::Example3 { delta, m },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport_map::map_apply;

    #[test]
    fn example1_shapes() {
        let gt = example1(3, 4).unwrap();
        assert_eq!(gt.nu.atom(2), &[0.625, 0.5, 0.5]);
        assert_eq!(gt.g_star.values(), &[0.0; 4]);
        let single = example1(2, 1).unwrap();
        assert_eq!(single.g_star.values(), &[0.0]);
        assert_eq!(single.true_cell(&[0.9, 0.1]), 0);
    }

    #[test]
    fn example1_full_size_constructs() {
        let gt = example1(1000, 1000).unwrap();
        assert_eq!(gt.nu.len(), 1000);
        assert_eq!(gt.nu.dim(), 1000);
    }

    #[test]
    fn example1_slab_oracle() {
        let gt = example1(2, 10).unwrap();
        assert_eq!(gt.true_cell(&[0.37, 0.2]), 3);
        assert_eq!(gt.true_cell(&[0.4, 0.2]), 3);
        assert_eq!(gt.true_cell(&[0.0, 0.2]), 0);
        assert_eq!(gt.true_cell(&[1.0, 0.2]), 9);
    }

    #[test]
    fn example3_increments() {
        let gt = example3(0.5, 1000).unwrap();
        let step = 1.0 / (2.0 * 1e6) - 0.5 / 1000.0;
        for w in gt.g_star.values().windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
        let gt0 = example3(0.0, 50).unwrap();
        let step0 = 1.0 / (2.0 * 2500.0);
        for w in gt0.g_star.values().windows(2) {
            assert!((w[1] - w[0] - step0).abs() < 1e-14);
        }
    }

    #[test]
    fn example3_map_matches_oracle() {
        let gt = example3(0.5, 8).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..10_000 {
            let x = gt.src.sample(&mut rng);
            assert_eq!(map_apply(&gt.g_star, &x, &gt.nu).unwrap(), gt.true_map(&x));
        }
    }

    #[test]
    fn example2_small_mc_rejected() {
        assert!(example2(3, 5, 1, 1000).is_err());
    }

    #[test]
    fn example2_anchor_and_shift_invariance() {
        let gt = example2(3, 6, 9, 100_000).unwrap();
        assert_eq!(gt.g_star.values()[0], 0.0);
        assert!(gt.g_star.values().iter().all(|v| v.abs() <= 2.0 * EXAMPLE2_G_RANGE));
        let rng = RngStream::new(77);
        let c1 = cell_counts(&gt.g_star, &gt.src, &gt.nu, 100_000, &mut rng.clone()).unwrap();
        let c2 = cell_counts(&gt.g_star.shifted(0.37), &gt.src, &gt.nu, 100_000, &mut rng.clone())
            .unwrap();
        assert_eq!(c1, c2);
        // fresh stream reproduces the weights within binomial noise
        for (c, w) in c1.iter().zip(gt.nu.weights()) {
            let sigma = (w * (1.0 - w) / 1e5).sqrt();
            assert!((*c as f64 / 1e5 - w).abs() < 5.0 * sigma + 1e-5, "{c} vs {w}");
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("inst");
        let gt = example3(0.5, 6).unwrap();
        gt.save(&stem).unwrap();
        let back = GroundTruthInstance::load(&stem).unwrap();
        assert_eq!(back.nu, gt.nu);
        assert_eq!(back.g_star, gt.g_star);
        assert_eq!(back.src, gt.src);
        assert_eq!(back.map_oracle, gt.map_oracle);
    }
}
