use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{PoolShape, TrajectoryPool};
use crate::error::{Error, Result};
use crate::rng::{rng_for, standard_normal, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    GaussianNoise,
    Downsample,
    RandomMask,
    Identity,
}

/// An observation-side perturbation of an anchor-source pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "one")]
    pub factor: usize,
    #[serde(default)]
    pub mask_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl PerturbSpec {
    pub fn identity() -> Self {
        PerturbSpec {
            kind: PerturbKind::Identity,
            sigma: 0.0,
            factor: 1,
            mask_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian_noise(sigma: f64, seed: u64) -> Self {
        PerturbSpec {
            kind: PerturbKind::GaussianNoise,
            sigma,
            seed,
            ..Self::identity()
        }
    }

    pub fn downsample(factor: usize) -> Self {
        PerturbSpec {
            kind: PerturbKind::Downsample,
            factor,
            ..Self::identity()
        }
    }

    pub fn random_mask(mask_fraction: f64, seed: u64) -> Self {
        PerturbSpec {
            kind: PerturbKind::RandomMask,
            mask_fraction,
            seed,
            ..Self::identity()
        }
    }

    /// Short label used in reports, e.g. `gaussian_noise(0.05)`.
    pub fn label(&self) -> String {
        match self.kind {
            PerturbKind::Identity => "clean".to_string(),
            PerturbKind::GaussianNoise => format!("gaussian_noise({})", self.sigma),
            PerturbKind::Downsample => format!("downsample(x{})", self.factor),
            PerturbKind::RandomMask => format!("random_mask({})", self.mask_fraction),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if ![1, 2, 4].contains(&self.factor) {
            return Err(Error::Config(format!("factor must be 1, 2 or 4, got {}", self.factor)));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config(format!(
                "mask_fraction must lie in [0,1), got {}",
                self.mask_fraction
            )));
        }
        Ok(())
    }
}

/// Applies `spec` to a copy of `pool`.
///
/// Downsampling block-averages `factor x factor` patches; a unit spatial
/// extent is left as is. Masking zero-fills a seeded subset of spatial sites
/// at every time and channel and records them in the pool mask.
pub fn perturb(pool: &TrajectoryPool, spec: &PerturbSpec) -> Result<TrajectoryPool> {
    spec.validate()?;
    let (shape, mut data, mask, mut meta) = pool.clone().into_parts();
    match spec.kind {
        PerturbKind::Identity => Ok(pool.clone()),
        PerturbKind::GaussianNoise => {
            if spec.sigma > 0.0 {
                let mut rng = rng_for(spec.seed, &[tag("gaussian-noise")]);
                for v in data.iter_mut() {
                    let e = standard_normal(&mut rng);
                    *v = (*v as f64 + spec.sigma * e) as f32;
                }
            }
            meta.history.push(format!("gaussian_noise(sigma={},seed={})", spec.sigma, spec.seed));
            TrajectoryPool::with_mask(shape, data, mask, meta)
        }
        PerturbKind::Downsample => {
            let (new_shape, new_data, new_mask) = downsample(shape, &data, mask.as_deref(), spec.factor)?;
            meta.history.push(format!("downsample(factor={})", spec.factor));
            TrajectoryPool::with_mask(new_shape, new_data, new_mask, meta)
        }
        PerturbKind::RandomMask => {
            let sites = shape.sites();
            let n_masked = (spec.mask_fraction * sites as f64).round() as usize;
            let mut rng = rng_for(spec.seed, &[tag("random-mask"), sites as u64]);
            let mut mask = mask.unwrap_or_else(|| vec![0u8; sites]);
            for s in sample(&mut rng, sites, n_masked.min(sites)).into_iter() {
                mask[s] = 1;
            }
            let plane = shape.sites();
            for frame in data.chunks_mut(plane) {
                for (v, &m) in frame.iter_mut().zip(&mask) {
                    if m == 1 {
                        *v = 0.0;
                    }
                }
            }
            meta.history.push(format!(
                "random_mask(fraction={},seed={})",
                spec.mask_fraction, spec.seed
            ));
            TrajectoryPool::with_mask(shape, data, Some(mask), meta)
        }
    }
}

fn downsample(
    shape: PoolShape,
    data: &[f32],
    mask: Option<&[u8]>,
    factor: usize,
) -> Result<(PoolShape, Vec<f32>, Option<Vec<u8>>)> {
    let fh = if shape.h == 1 { 1 } else { factor };
    let fw = if shape.w == 1 { 1 } else { factor };
    if !shape.h.is_multiple_of(fh) || !shape.w.is_multiple_of(fw) {
        return Err(Error::Shape(format!(
            "downsample factor {factor} does not divide H={} W={}",
            shape.h, shape.w
        )));
    }
    let (nh, nw) = (shape.h / fh, shape.w / fw);
    let new_shape = PoolShape {
        h: nh,
        w: nw,
        ..shape
    };
    let block = (fh * fw) as f64;
    let mut out = Vec::with_capacity(new_shape.total_len());
    for plane in data.chunks(shape.sites()) {
        for i in 0..nh {
            for j in 0..nw {
                let mut acc = 0.0f64;
                for di in 0..fh {
                    for dj in 0..fw {
                        acc += plane[(i * fh + di) * shape.w + j * fw + dj] as f64;
                    }
                }
                out.push((acc / block) as f32);
            }
        }
    }
    // a coarse site is masked only if every fine site under it was
    let new_mask = mask.map(|m| {
        let mut nm = Vec::with_capacity(nh * nw);
        for i in 0..nh {
            for j in 0..nw {
                let all = (0..fh).all(|di| (0..fw).all(|dj| m[(i * fh + di) * shape.w + j * fw + dj] == 1));
                nm.push(u8::from(all));
            }
        }
        nm
    });
    Ok((new_shape, out, new_mask))
}

/// Mean squared difference between two same-shaped pools.
pub fn mean_squared_difference(a: &TrajectoryPool, b: &TrajectoryPool) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}
