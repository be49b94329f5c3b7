//! Trajectory data: pools, synthetic generators, trajectory-level splits,
//! perturbations, and the on-disk format.

mod format;
mod generate;
mod perturb;
mod split;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{read_pool, read_pool_bytes, write_pool, write_pool_bytes, FormatError, MAGIC, VERSION};
pub use generate::{
    generate_diffusion2d, generate_linear_lag_pool, generate_linear_lag_system, Diffusion2dSpec, InitialField, LinearLagSpec,
    LinearLagSystem,
};
pub use perturb::{mean_squared_difference, perturb, PerturbKind, PerturbSpec};
pub use split::{split_pool, SplitFractions, SplitPool};

/// Extents of a pool: `[traj][time][channel][h][w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolShape {
    pub n_traj: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl PoolShape {
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn traj_len(&self) -> usize {
        self.t * self.frame_len()
    }

    pub fn total_len(&self) -> usize {
        self.n_traj * self.traj_len()
    }

    pub fn sites(&self) -> usize {
        self.h * self.w
    }
}

/// Provenance carried with a pool. Synthetic generators record their ground
/// truth here (e.g. `true_lag`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolMeta {
    pub generator: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    /// Perturbations applied after generation, oldest first.
    #[serde(default)]
    pub history: Vec<String>,
}

impl PoolMeta {
    pub fn new(generator: impl Into<String>, seed: u64) -> Self {
        PoolMeta {
            generator: generator.into(),
            params: BTreeMap::new(),
            seed,
            history: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn true_lag(&self) -> Option<usize> {
        self.params.get("true_lag").map(|&v| v as usize)
    }
}

/// An immutable set of multichannel trajectories sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPool {
    shape: PoolShape,
    data: Vec<f32>,
    /// One byte per spatial site, 1 = masked (zero-filled).
    mask: Option<Vec<u8>>,
    meta: PoolMeta,
}

impl TrajectoryPool {
    pub fn new(shape: PoolShape, data: Vec<f32>, meta: PoolMeta) -> Result<Self> {
        Self::with_mask(shape, data, None, meta)
    }

    pub fn with_mask(
        shape: PoolShape,
        data: Vec<f32>,
        mask: Option<Vec<u8>>,
        meta: PoolMeta,
    ) -> Result<Self> {
        if shape.n_traj < 1 || shape.t < 2 || shape.c < 1 || shape.h < 1 || shape.w < 1 {
            return Err(Error::Shape(format!(
                "pool needs n_traj >= 1, T >= 2 and positive C/H/W, got {shape:?}"
            )));
        }
        if data.len() != shape.total_len() {
            return Err(Error::Shape(format!(
                "payload has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                shape.total_len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at flat index {pos}")));
        }
        if let Some(m) = &mask {
            if m.len() != shape.sites() || m.iter().any(|&b| b > 1) {
                return Err(Error::Shape(format!(
                    "mask must have {} bytes in {{0,1}}",
                    shape.sites()
                )));
            }
        }
        Ok(TrajectoryPool {
            shape,
            data,
            mask,
            meta,
        })
    }

    pub fn shape(&self) -> PoolShape {
        self.shape
    }

    pub fn n_traj(&self) -> usize {
        self.shape.n_traj
    }

    pub fn timesteps(&self) -> usize {
        self.shape.t
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[u8]> {
        self.mask.as_deref()
    }

    pub fn meta(&self) -> &PoolMeta {
        &self.meta
    }

    pub fn trajectory(&self, traj: usize) -> &[f32] {
        let n = self.shape.traj_len();
        &self.data[traj * n..(traj + 1) * n]
    }

    pub fn frame(&self, traj: usize, t: usize) -> &[f32] {
        let n = self.shape.frame_len();
        let start = traj * self.shape.traj_len() + t * n;
        &self.data[start..start + n]
    }

    /// View over every trajectory.
    pub fn view(&self) -> PoolView<'_> {
        PoolView {
            pool: self,
            indices: (0..self.shape.n_traj).collect(),
        }
    }

    /// View over a subset of trajectories, in the given order.
    pub fn view_of(&self, indices: &[usize]) -> Result<PoolView<'_>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape.n_traj) {
            return Err(Error::Shape(format!(
                "trajectory index {bad} out of range for pool of {}",
                self.shape.n_traj
            )));
        }
        Ok(PoolView {
            pool: self,
            indices: indices.to_vec(),
        })
    }

    pub(crate) fn into_parts(self) -> (PoolShape, Vec<f32>, Option<Vec<u8>>, PoolMeta) {
        (self.shape, self.data, self.mask, self.meta)
    }
}

/// A borrowed selection of trajectories from a pool.
#[derive(Clone, Debug)]
pub struct PoolView<'a> {
    pool: &'a TrajectoryPool,
    indices: Vec<usize>,
}

impl<'a> PoolView<'a> {
    pub fn pool(&self) -> &'a TrajectoryPool {
        self.pool
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn shape(&self) -> PoolShape {
        PoolShape {
            n_traj: self.indices.len(),
            ..self.pool.shape
        }
    }

    /// Frame `t` of the `i`-th trajectory of the view.
    pub fn frame(&self, i: usize, t: usize) -> &'a [f32] {
        self.pool.frame(self.indices[i], t)
    }

    /// Sub-view keeping the listed positions of this view.
    pub fn select(&self, positions: &[usize]) -> PoolView<'a> {
        PoolView {
            pool: self.pool,
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
        }
    }

    /// Materializes the view as an owned pool.
    pub fn to_pool(&self) -> Result<TrajectoryPool> {
        let mut data = Vec::with_capacity(self.indices.len() * self.pool.shape.traj_len());
        for &i in &self.indices {
            data.extend_from_slice(self.pool.trajectory(i));
        }
        TrajectoryPool::with_mask(
            self.shape(),
            data,
            self.pool.mask.clone(),
            self.pool.meta.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrajectoryPool {
        let shape = PoolShape {
            n_traj: 2,
            t: 3,
            c: 1,
            h: 1,
            w: 2,
        };
        let data = (0..12).map(|v| v as f32).collect();
        TrajectoryPool::new(shape, data, PoolMeta::new("test", 0)).unwrap()
    }

    #[test]
    fn frames_index_traj_time_major() {
        let pool = tiny();
        assert_eq!(pool.frame(0, 0), &[0.0, 1.0]);
        assert_eq!(pool.frame(1, 2), &[10.0, 11.0]);
    }

    #[test]
    fn rejects_non_finite_and_short_pools() {
        let shape = PoolShape {
            n_traj: 1,
            t: 2,
            c: 1,
            h: 1,
            w: 1,
        };
        let err = TrajectoryPool::new(shape, vec![0.0, f32::NAN], PoolMeta::default());
        assert!(matches!(err, Err(Error::Shape(_))));
        let short = PoolShape { t: 1, ..shape };
        assert!(TrajectoryPool::new(short, vec![0.0], PoolMeta::default()).is_err());
    }

    #[test]
    fn view_subset_materializes() {
        let pool = tiny();
        let sub = pool.view_of(&[1]).unwrap().to_pool().unwrap();
        assert_eq!(sub.n_traj(), 1);
        assert_eq!(sub.frame(0, 0), pool.frame(1, 0));
        assert!(pool.view_of(&[2]).is_err());
    }
}
