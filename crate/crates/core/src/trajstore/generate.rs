//! Synthetic trajectory generators with known memory structure.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{PoolMeta, PoolShape, TrajectoryPool};
use crate::error::{Error, Result};
use crate::rng::{rng_for, standard_normal, tag};

const MAX_STABILITY_ATTEMPTS: usize = 100;

/// Parameters of a VAR(p) generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearLagSpec {
    pub dim: usize,
    pub true_lag: usize,
    pub n_traj: usize,
    pub t: usize,
    pub noise_sigma: f64,
    pub stability_margin: f64,
    /// Coefficient entries are drawn from N(0, (coef_scale / sqrt(dim * lag))^2).
    #[serde(default = "default_coef_scale")]
    pub coef_scale: f64,
    /// Standard deviation of the `true_lag` initial states.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Steps simulated and discarded before recording.
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
}

fn default_coef_scale() -> f64 {
    1.0
}

fn default_init_scale() -> f64 {
    1.0
}

impl LinearLagSpec {
    pub fn new(dim: usize, true_lag: usize, n_traj: usize, t: usize, noise_sigma: f64, seed: u64) -> Self {
        LinearLagSpec {
            dim,
            true_lag,
            n_traj,
            t,
            noise_sigma,
            stability_margin: 0.05,
            coef_scale: default_coef_scale(),
            init_scale: default_init_scale(),
            burn_in: 0,
            seed,
        }
    }
}

/// A sampled VAR(p) system: `x_t = sum_j A_j x_{t-j} + sigma * e_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLagSystem {
    dim: usize,
    coefficients: Vec<DMatrix<f64>>,
    noise_sigma: f64,
}

impl LinearLagSystem {
    pub fn from_coefficients(coefficients: Vec<DMatrix<f64>>, noise_sigma: f64) -> Result<Self> {
        let dim = coefficients
            .first()
            .map(|a| a.nrows())
            .ok_or_else(|| Error::Generation("a VAR system needs at least one lag".into()))?;
        if coefficients.iter().any(|a| a.nrows() != dim || a.ncols() != dim) {
            return Err(Error::Generation(format!("all coefficient blocks must be {dim}x{dim}")));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Generation(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(LinearLagSystem {
            dim,
            coefficients,
            noise_sigma,
        })
    }

    /// Samples coefficients until the companion matrix has spectral radius
    /// `<= 1 - stability_margin`.
    pub fn sample(spec: &LinearLagSpec) -> Result<Self> {
        if spec.dim < 1 || spec.true_lag < 1 {
            return Err(Error::Generation(format!(
                "dim and true_lag must be >= 1 (dim={}, true_lag={})",
                spec.dim, spec.true_lag
            )));
        }
        if !(spec.stability_margin > 0.0 && spec.stability_margin < 1.0) {
            return Err(Error::Generation(format!(
                "stability_margin must lie in (0,1), got {}",
                spec.stability_margin
            )));
        }
        let bound = 1.0 - spec.stability_margin;
        let std = spec.coef_scale / ((spec.dim * spec.true_lag) as f64).sqrt();
        let mut rng = rng_for(spec.seed, &[tag("var-coefficients")]);
        let mut last_radius = f64::NAN;
        for _ in 0..MAX_STABILITY_ATTEMPTS {
            let coefficients: Vec<DMatrix<f64>> = (0..spec.true_lag)
                .map(|_| {
                    DMatrix::from_fn(spec.dim, spec.dim, |_, _| {
                        std * standard_normal(&mut rng)
                    })
                })
                .collect();
            let system = LinearLagSystem::from_coefficients(coefficients, spec.noise_sigma)?;
            last_radius = system.spectral_radius();
            if last_radius <= bound {
                return Ok(system);
            }
        }
        Err(Error::Generation(format!(
            "no stable VAR({}) draw in {MAX_STABILITY_ATTEMPTS} attempts for dim={}, coef_scale={}, \
             stability_margin={} (last spectral radius {last_radius:.4})",
            spec.true_lag, spec.dim, spec.coef_scale, spec.stability_margin
        )))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    pub fn companion(&self) -> DMatrix<f64> {
        let d = self.dim;
        let p = self.lag();
        let mut comp = DMatrix::zeros(d * p, d * p);
        for (j, a) in self.coefficients.iter().enumerate() {
            comp.view_mut((0, j * d), (d, d)).copy_from(a);
        }
        for i in 0..d * (p - 1) {
            comp[(d + i, i)] = 1.0;
        }
        comp
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Simulates `n_traj` trajectories of length `t`.
    pub fn simulate(
        &self,
        n_traj: usize,
        t: usize,
        init_scale: f64,
        burn_in: usize,
        seed: u64,
    ) -> Vec<f32> {
        let d = self.dim;
        let p = self.lag();
        let total = burn_in + t.max(p);
        let mut out = Vec::with_capacity(n_traj * t * d);
        for traj in 0..n_traj {
            let mut rng = rng_for(seed, &[tag("var-trajectory"), traj as u64]);
            let mut states: Vec<Vec<f64>> = Vec::with_capacity(total);
            for _ in 0..p {
                states.push(
                    (0..d)
                        .map(|_| init_scale * standard_normal(&mut rng))
                        .collect(),
                );
            }
            while states.len() < total {
                let now = states.len();
                let mut next: Vec<f64> = (0..d)
                    .map(|_| self.noise_sigma * standard_normal(&mut rng))
                    .collect();
                for (j, a) in self.coefficients.iter().enumerate() {
                    let past = &states[now - 1 - j];
                    for (r, slot) in next.iter_mut().enumerate() {
                        *slot += (0..d).map(|c| a[(r, c)] * past[c]).sum::<f64>();
                    }
                }
                states.push(next);
            }
            for s in &states[burn_in..burn_in + t] {
                out.extend(s.iter().map(|&v| v as f32));
            }
        }
        out
    }
}

/// Samples a VAR(`true_lag`) system and simulates a pool from it. The pool
/// has `C = dim`, `H = W = 1`, and records `true_lag` in its meta.
pub fn generate_linear_lag_system(spec: &LinearLagSpec) -> Result<TrajectoryPool> {
    generate_linear_lag_pool(spec, spec.seed)
}

/// Like [`generate_linear_lag_system`] but simulates with `sim_seed`, so
/// several independent pools can share one sampled system.
pub fn generate_linear_lag_pool(spec: &LinearLagSpec, sim_seed: u64) -> Result<TrajectoryPool> {
    if spec.t <= spec.true_lag + 2 {
        return Err(Error::Generation(format!(
            "T={} must exceed true_lag + 2 = {}",
            spec.t,
            spec.true_lag + 2
        )));
    }
    if spec.n_traj < 1 {
        return Err(Error::Generation("n_traj must be >= 1".into()));
    }
    let system = LinearLagSystem::sample(spec)?;
    let data = system.simulate(spec.n_traj, spec.t, spec.init_scale, spec.burn_in, sim_seed);
    let shape = PoolShape {
        n_traj: spec.n_traj,
        t: spec.t,
        c: spec.dim,
        h: 1,
        w: 1,
    };
    let mut meta = PoolMeta::new("linear", spec.seed)
        .with_param("dim", spec.dim as f64)
        .with_param("true_lag", spec.true_lag as f64)
        .with_param("noise_sigma", spec.noise_sigma)
        .with_param("stability_margin", spec.stability_margin)
        .with_param("coef_scale", spec.coef_scale)
        .with_param("init_scale", spec.init_scale)
        .with_param("burn_in", spec.burn_in as f64)
        .with_param("spectral_radius", system.spectral_radius());
    if sim_seed != spec.seed {
        meta.history.push(format!("simulate(seed={sim_seed})"));
    }
    TrajectoryPool::new(shape, data, meta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialField {
    /// Offset plus a few random Neumann cosine modes.
    RandomSmooth,
    Constant(f64),
}

/// Explicit finite-difference heat equation on a `grid x grid` lattice with
/// zero-flux boundaries, `dx = dt = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diffusion2dSpec {
    pub grid: usize,
    pub n_traj: usize,
    pub t: usize,
    pub diffusivity: f64,
    #[serde(default = "default_steps_per_frame")]
    pub steps_per_frame: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_initial")]
    pub initial: InitialField,
    pub seed: u64,
}

fn default_steps_per_frame() -> usize {
    1
}

fn default_modes() -> usize {
    4
}

fn default_initial() -> InitialField {
    InitialField::RandomSmooth
}

impl Diffusion2dSpec {
    pub fn new(grid: usize, n_traj: usize, t: usize, diffusivity: f64, seed: u64) -> Self {
        Diffusion2dSpec {
            grid,
            n_traj,
            t,
            diffusivity,
            steps_per_frame: 1,
            modes: 4,
            initial: InitialField::RandomSmooth,
            seed,
        }
    }
}

pub fn generate_diffusion2d(spec: &Diffusion2dSpec) -> Result<TrajectoryPool> {
    // dt / dx^2 = 1
    if !(spec.diffusivity >= 0.0 && spec.diffusivity <= 0.25) {
        return Err(Error::Config(format!(
            "explicit scheme unstable: diffusivity*dt/dx^2 = {} must lie in [0, 0.25]",
            spec.diffusivity
        )));
    }
    if spec.grid < 1 || spec.n_traj < 1 || spec.t < 2 || spec.steps_per_frame < 1 {
        return Err(Error::Config(format!(
            "diffusion2d needs grid >= 1, n_traj >= 1, T >= 2, steps_per_frame >= 1: {spec:?}"
        )));
    }
    let g = spec.grid;
    let mut data = Vec::with_capacity(spec.n_traj * spec.t * g * g);
    let mut next = vec![0.0f64; g * g];
    for traj in 0..spec.n_traj {
        let mut field = initial_field(spec, traj);
        for frame in 0..spec.t {
            if frame > 0 {
                for _ in 0..spec.steps_per_frame {
                    heat_step(&field, &mut next, g, spec.diffusivity);
                    std::mem::swap(&mut field, &mut next);
                }
            }
            data.extend(field.iter().map(|&v| v as f32));
        }
    }
    let shape = PoolShape {
        n_traj: spec.n_traj,
        t: spec.t,
        c: 1,
        h: g,
        w: g,
    };
    let meta = PoolMeta::new("diffusion2d", spec.seed)
        .with_param("grid", g as f64)
        .with_param("diffusivity", spec.diffusivity)
        .with_param("steps_per_frame", spec.steps_per_frame as f64)
        .with_param("true_lag", 1.0);
    TrajectoryPool::new(shape, data, meta)
}

fn initial_field(spec: &Diffusion2dSpec, traj: usize) -> Vec<f64> {
    let g = spec.grid;
    match spec.initial {
        InitialField::Constant(c) => vec![c; g * g],
        InitialField::RandomSmooth => {
            let mut rng = rng_for(spec.seed, &[tag("diffusion-init"), traj as u64]);
            let mut field = vec![1.0; g * g];
            let gf = g as f64;
            for _ in 0..spec.modes {
                let kx = rng.random_range(0..4usize) as f64;
                let ky = rng.random_range(0..4usize) as f64;
                let amp = 0.5 * standard_normal(&mut rng);
                for i in 0..g {
                    let cy = (std::f64::consts::PI * ky * (i as f64 + 0.5) / gf).cos();
                    for j in 0..g {
                        let cx = (std::f64::consts::PI * kx * (j as f64 + 0.5) / gf).cos();
                        field[i * g + j] += amp * cx * cy;
                    }
                }
            }
            field
        }
    }
}

/// Five-point Laplacian update with mirrored ghost cells.
fn heat_step(u: &[f64], out: &mut [f64], g: usize, kappa: f64) {
    for i in 0..g {
        for j in 0..g {
            let c = u[i * g + j];
            let up = if i > 0 { u[(i - 1) * g + j] } else { c };
            let down = if i + 1 < g { u[(i + 1) * g + j] } else { c };
            let left = if j > 0 { u[i * g + j - 1] } else { c };
            let right = if j + 1 < g { u[i * g + j + 1] } else { c };
            out[i * g + j] = c + kappa * (up + down + left + right - 4.0 * c);
        }
    }
}
