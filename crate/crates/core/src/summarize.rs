//! Low-dimensional per-timestep state summaries for stage one.
//!
//! Frames are flattened, optionally block-coarsened, standardized per
//! feature, and mapped through a `k x d` basis. The basis comes from one of
//! several representation families: exact PCA, randomized truncated SVD,
//! a Gaussian random projection, sparse coordinate probes, or the identity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{rng_for, standard_normal, tag};
use crate::trajstore::{PoolShape, PoolView};

const SCALE_FLOOR: f64 = 1e-8;
const SVD_OVERSAMPLE: usize = 10;
const SVD_POWER_ITERS: usize = 4;
const PROJECTOR_MAGIC: [u8; 4] = *b"SKPJ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMethod {
    Pca,
    Svd,
    RandomProjection,
    /// Seeded subset of individual features (sparse point probes).
    Probes,
    Identity,
}

impl ProjectorMethod {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorMethod::Pca => "pca",
            ProjectorMethod::Svd => "svd",
            ProjectorMethod::RandomProjection => "random_projection",
            ProjectorMethod::Probes => "probes",
            ProjectorMethod::Identity => "identity",
        }
    }
}

impl std::str::FromStr for ProjectorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pca" => ProjectorMethod::Pca,
            "svd" => ProjectorMethod::Svd,
            "random_projection" | "random-projection" => ProjectorMethod::RandomProjection,
            "probes" => ProjectorMethod::Probes,
            "identity" => ProjectorMethod::Identity,
            other => return Err(Error::Config(format!("unknown summary method {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSpec {
    pub method: ProjectorMethod,
    #[serde(default = "default_variance_target")]
    pub variance_target: f64,
    #[serde(default = "default_max_components")]
    pub max_components: usize,
    #[serde(default = "default_fit_samples")]
    pub fit_samples: usize,
    #[serde(default = "default_coarsen")]
    pub coarsen_factor: usize,
    /// Standardize fine features before coarsening instead of after.
    #[serde(default)]
    pub normalize_before_coarsen: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_variance_target() -> f64 {
    0.99
}
fn default_max_components() -> usize {
    64
}
fn default_fit_samples() -> usize {
    800
}
fn default_coarsen() -> usize {
    1
}

impl Default for ProjectorSpec {
    fn default() -> Self {
        ProjectorSpec {
            method: ProjectorMethod::Pca,
            variance_target: default_variance_target(),
            max_components: default_max_components(),
            fit_samples: default_fit_samples(),
            coarsen_factor: default_coarsen(),
            normalize_before_coarsen: false,
            seed: 0,
        }
    }
}

impl ProjectorSpec {
    pub fn with_method(method: ProjectorMethod) -> Self {
        ProjectorSpec {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_components < 1 {
            return Err(Error::Config("max_components must be >= 1".into()));
        }
        if self.fit_samples < self.max_components {
            return Err(Error::Config(format!(
                "fit_samples ({}) must be >= max_components ({})",
                self.fit_samples, self.max_components
            )));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::Config(format!(
                "variance_target must lie in (0,1], got {}",
                self.variance_target
            )));
        }
        if self.coarsen_factor < 1 {
            return Err(Error::Config("coarsen_factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Short hash identifying this spec in summary provenance.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A fitted affine map from frames to `k`-dimensional summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    spec: ProjectorSpec,
    frame_shape: (usize, usize, usize),
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `k x d`, row-major rows are components.
    basis: DMatrix<f64>,
    /// Cumulative explained-variance fractions of the computed components (pca/svd).
    explained: Option<Vec<f64>>,
    degenerate: bool,
}

impl Projector {
    pub fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.basis.nrows()
    }

    /// Feature dimension the basis acts on (after coarsening).
    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Cumulative explained-variance sequence over all computed components.
    pub fn explained_curve(&self) -> Option<&[f64]> {
        self.explained.as_deref()
    }

    /// Explained-variance fraction of the retained components.
    pub fn explained(&self) -> Option<f64> {
        self.explained
            .as_ref()
            .map(|c| c.get(self.k() - 1).copied().unwrap_or(0.0))
    }

    /// Set when the fitting sample had no variance at all.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Frame extents `(C, H, W)` the projector was fitted on.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frame_shape
    }

    fn check_shape(&self, shape: PoolShape) -> Result<()> {
        let got = (shape.c, shape.h, shape.w);
        if got != self.frame_shape {
            return Err(Error::Shape(format!(
                "projector expects frames of (C,H,W) = {:?} (d={}), pool has {:?} (d={})",
                self.frame_shape,
                self.frame_shape.0 * self.frame_shape.1 * self.frame_shape.2,
                got,
                shape.c * shape.h * shape.w
            )));
        }
        Ok(())
    }

    /// Coarsened, standardized features of one frame.
    pub fn features(&self, frame: &[f64]) -> Vec<f64> {
        let (c, h, w) = self.frame_shape;
        let f = self.spec.coarsen_factor;
        if self.spec.normalize_before_coarsen {
            let z: Vec<f64> = frame
                .iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(&x, (&m, &s))| (x - m) / s)
                .collect();
            coarsen_frame(&z, c, h, w, f)
        } else {
            let x = coarsen_frame(frame, c, h, w, f);
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(&x, (&m, &s))| (x - m) / s)
                .collect()
        }
    }

    /// Summary vector of one frame.
    pub fn project_frame(&self, frame: &[f64]) -> Vec<f64> {
        let z = DVector::from_vec(self.features(frame));
        (&self.basis * z).iter().copied().collect()
    }

    /// Maps a summary back to standardized feature space through the
    /// transposed basis.
    pub fn reconstruct_features(&self, summary: &[f64]) -> Vec<f64> {
        let s = DVector::from_column_slice(summary);
        (self.basis.transpose() * s).iter().copied().collect()
    }

    /// Serializes to a length-prefixed little-endian record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&PROJECTOR_MAGIC);
        body.push(1);
        body.push(u8::from(self.degenerate));
        let spec = serde_json::to_vec(&self.spec).expect("spec serializes");
        body.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        body.extend_from_slice(&spec);
        let (c, h, w) = self.frame_shape;
        for v in [c, h, w, self.mean.len(), self.k(), self.d()] {
            body.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.mean.iter().chain(&self.scale) {
            body.extend_from_slice(&v.to_le_bytes());
        }
        for r in 0..self.k() {
            for col in 0..self.d() {
                body.extend_from_slice(&self.basis[(r, col)].to_le_bytes());
            }
        }
        match &self.explained {
            Some(e) => {
                body.extend_from_slice(&(e.len() as u32 + 1).to_le_bytes());
                for v in e {
                    body.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => body.extend_from_slice(&0u32.to_le_bytes()),
        }
        let mut out = (body.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        let len = rd.u64()? as usize;
        if len != bytes.len() - 8 {
            return Err(record_error("length prefix does not match record size"));
        }
        if rd.take(4)? != PROJECTOR_MAGIC {
            return Err(record_error("bad magic"));
        }
        let head = rd.take(2)?;
        if head[0] != 1 {
            return Err(record_error("unsupported version"));
        }
        let degenerate = head[1] == 1;
        let spec_len = rd.u32()?;
        let spec: ProjectorSpec = serde_json::from_slice(rd.take(spec_len)?)?;
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = rd.u32()?;
        }
        let [c, h, w, n_norm, k, d] = dims;
        let mean = rd.f64s(n_norm)?;
        let scale = rd.f64s(n_norm)?;
        let basis = DMatrix::from_row_slice(k, d, &rd.f64s(k * d)?);
        let n_expl = rd.u32()?;
        let explained = if n_expl == 0 { None } else { Some(rd.f64s(n_expl - 1)?) };
        Ok(Projector {
            spec,
            frame_shape: (c, h, w),
            mean,
            scale,
            basis,
            explained,
            degenerate,
        })
    }
}

fn record_error(msg: &str) -> Error {
    Error::Shape(format!("projector record: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| record_error("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| record_error("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Per-trajectory summary sequences aligned with the source timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct SummarySet {
    k: usize,
    t: usize,
    /// One `t * k` row-major block per trajectory.
    series: Vec<Vec<f64>>,
    provenance: String,
}

impl SummarySet {
    /// Builds a summary set from raw sequences (each `t * k` values).
    pub fn from_series(k: usize, t: usize, series: Vec<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        if k < 1 {
            return Err(Error::Shape("summary dimension must be >= 1".into()));
        }
        if let Some(bad) = series.iter().position(|s| s.len() != t * k) {
            return Err(Error::Shape(format!(
                "trajectory {bad} has {} values, expected T*k = {}",
                series[bad].len(),
                t * k
            )));
        }
        if series.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("summaries must be finite".into()));
        }
        Ok(SummarySet {
            k,
            t,
            series,
            provenance: provenance.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn timesteps(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        &self.series[i]
    }

    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        &self.series[i][t * self.k..(t + 1) * self.k]
    }

    /// Subset of trajectories in the given order.
    pub fn select(&self, indices: &[usize]) -> SummarySet {
        SummarySet {
            k: self.k,
            t: self.t,
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Block-averages each `[h][w]` plane of a `[c][h][w]` frame; unit extents
/// are left alone.
fn coarsen_frame(frame: &[f64], c: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return frame.to_vec();
    }
    let fh = if h == 1 { 1 } else { factor };
    let fw = if w == 1 { 1 } else { factor };
    let (nh, nw) = (h / fh, w / fw);
    let mut out = Vec::with_capacity(c * nh * nw);
    let norm = (fh * fw) as f64;
    for plane in frame.chunks(h * w).take(c) {
        for i in 0..nh {
            for j in 0..nw {
                let mut acc = 0.0;
                for di in 0..fh {
                    for dj in 0..fw {
                        acc += plane[(i * fh + di) * w + j * fw + dj];
                    }
                }
                out.push(acc / norm);
            }
        }
    }
    out
}

fn frame_f64(frame: &[f32]) -> Vec<f64> {
    frame.iter().map(|&v| v as f64).collect()
}

/// Makes the largest-magnitude entry of every row positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for r in 0..basis.nrows() {
        let row = basis.row(r);
        let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            basis.row_mut(r).neg_mut();
        }
    }
}

/// Smallest `k` whose cumulative fraction reaches `target`, capped.
fn components_for(cumulative: &[f64], target: f64, cap: usize) -> usize {
    let k = cumulative
        .iter()
        .position(|&c| c >= target - 1e-10)
        .map(|i| i + 1)
        .unwrap_or(cumulative.len());
    k.clamp(1, cap.max(1))
}

/// Fits a projector on a seeded sample of frames from `view`.
pub fn fit_projector(view: &PoolView<'_>, spec: &ProjectorSpec) -> Result<Projector> {
    spec.validate()?;
    if view.is_empty() {
        return Err(Error::Shape("cannot fit a projector on an empty pool".into()));
    }
    let shape = view.shape();
    let (c, h, w) = (shape.c, shape.h, shape.w);
    let f = spec.coarsen_factor;
    if (h > 1 && h % f != 0) || (w > 1 && w % f != 0) {
        return Err(Error::Shape(format!("coarsen factor {f} does not divide H={h} W={w}")));
    }

    let total = view.len() * shape.t;
    let m = spec.fit_samples.min(total);
    let mut picks = sample(&mut rng_for(spec.seed, &[tag("projector-sample")]), total, m).into_vec();
    picks.sort_unstable();
    let frames: Vec<Vec<f64>> = picks
        .iter()
        .map(|&p| frame_f64(view.frame(p / shape.t, p % shape.t)))
        .collect();

    // standardization statistics live on whichever stage normalizes
    let stage_rows: Vec<Vec<f64>> = if spec.normalize_before_coarsen {
        frames.clone()
    } else {
        frames.iter().map(|fr| coarsen_frame(fr, c, h, w, f)).collect()
    };
    let n_norm = stage_rows[0].len();
    let mut mean = vec![0.0; n_norm];
    for row in &stage_rows {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut scale = vec![0.0; n_norm];
    for row in &stage_rows {
        for ((acc, v), mu) in scale.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu).powi(2);
        }
    }
    scale
        .iter_mut()
        .for_each(|v| *v = (*v / m as f64).sqrt().max(SCALE_FLOOR));

    let mut projector = Projector {
        spec: spec.clone(),
        frame_shape: (c, h, w),
        mean,
        scale,
        basis: DMatrix::zeros(0, 0),
        explained: None,
        degenerate: false,
    };
    let feats: Vec<Vec<f64>> = frames.iter().map(|fr| projector.features(fr)).collect();
    let d = feats[0].len();
    if d < 1 {
        return Err(Error::Shape("feature dimension after coarsening is zero".into()));
    }
    let z = DMatrix::from_fn(m, d, |i, j| feats[i][j]);
    let total_var = z.iter().map(|v| v * v).sum::<f64>();
    let mut rng = rng_for(spec.seed, &[tag("projector-basis"), spec.method as u64]);

    let (basis, explained) = match spec.method {
        ProjectorMethod::Identity => (DMatrix::identity(d, d), None),
        ProjectorMethod::RandomProjection => {
            let k = spec.max_components.min(d);
            let norm = 1.0 / (k as f64).sqrt();
            (DMatrix::from_fn(k, d, |_, _| norm * standard_normal(&mut rng)), None)
        }
        ProjectorMethod::Probes => {
            let k = spec.max_components.min(d);
            let mut sites = sample(&mut rng, d, k).into_vec();
            sites.sort_unstable();
            let mut b = DMatrix::zeros(k, d);
            for (r, &s) in sites.iter().enumerate() {
                b[(r, s)] = 1.0;
            }
            (b, None)
        }
        ProjectorMethod::Pca => {
            let (vals, vecs) = principal_axes(&z);
            spectral_basis(vals, vecs, total_var, spec, &mut projector.degenerate)
        }
        ProjectorMethod::Svd => {
            let (vals, vecs) = randomized_svd(&z, spec.max_components, &mut rng);
            spectral_basis(vals, vecs, total_var, spec, &mut projector.degenerate)
        }
    };
    projector.basis = basis;
    projector.explained = explained;
    if total_var <= 0.0 {
        projector.degenerate = true;
    }
    Ok(projector)
}

/// Keeps the leading components; `vals` are squared singular values sorted
/// descending, `vecs` holds matching unit rows.
fn spectral_basis(
    vals: Vec<f64>,
    vecs: DMatrix<f64>,
    total_var: f64,
    spec: &ProjectorSpec,
    degenerate: &mut bool,
) -> (DMatrix<f64>, Option<Vec<f64>>) {
    if total_var <= 0.0 || vals.is_empty() {
        *degenerate = true;
        let d = vecs.ncols();
        let mut b = DMatrix::zeros(1, d);
        b[(0, 0)] = 1.0;
        return (b, Some(vec![0.0]));
    }
    let mut acc = 0.0;
    let cumulative: Vec<f64> = vals
        .iter()
        .map(|v| {
            acc += v.max(0.0);
            (acc / total_var).min(1.0)
        })
        .collect();
    let k = components_for(&cumulative, spec.variance_target, spec.max_components.min(vals.len()));
    let mut basis = vecs.rows(0, k).into_owned();
    fix_signs(&mut basis);
    (basis, Some(cumulative))
}

/// Exact principal axes of the rows of `z` (already centered).
/// Returns squared singular values (descending) and unit row vectors.
fn principal_axes(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, d) = z.shape();
    if d <= m {
        let eig = SymmetricEigen::new(z.transpose() * z);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vecs = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(c, order[r])]);
        (vals, vecs)
    } else {
        // Gram route: z z^T = U S^2 U^T, axes are z^T u / s
        let eig = SymmetricEigen::new(z * z.transpose());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let keep: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > 1e-12).collect();
        let vals: Vec<f64> = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = DMatrix::zeros(keep.len(), d);
        for (r, &i) in keep.iter().enumerate() {
            let axis = z.transpose() * eig.eigenvectors.column(i);
            let norm = axis.norm();
            vecs.row_mut(r).copy_from(&(axis / norm).transpose());
        }
        (vals, vecs)
    }
}

/// Randomized range finder with power iterations, then an exact SVD of the
/// small projected matrix.
fn randomized_svd(z: &DMatrix<f64>, rank: usize, rng: &mut crate::rng::Rng) -> (Vec<f64>, DMatrix<f64>) {
    let (m, d) = z.shape();
    let r = (rank + SVD_OVERSAMPLE).min(m.min(d));
    let omega = DMatrix::from_fn(d, r, |_, _| standard_normal(rng));
    let mut q = (z * omega).qr().q();
    for _ in 0..SVD_POWER_ITERS {
        let w = (z.transpose() * &q).qr().q();
        q = (z * w).qr().q();
    }
    let b = q.transpose() * z;
    let svd = b.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let vals = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let vecs = DMatrix::from_fn(order.len(), d, |row, col| v_t[(order[row], col)]);
    (vals, vecs)
}

/// Summarizes every trajectory of `view`.
pub fn project(projector: &Projector, view: &PoolView<'_>) -> Result<SummarySet> {
    projector.check_shape(view.shape())?;
    let t = view.shape().t;
    let k = projector.k();
    let series = (0..view.len())
        .map(|i| {
            let mut out = Vec::with_capacity(t * k);
            for step in 0..t {
                out.extend(projector.project_frame(&frame_f64(view.frame(i, step))));
            }
            out
        })
        .collect();
    SummarySet::from_series(k, t, series, projector.spec.hash())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajstore::{generate_diffusion2d, Diffusion2dSpec, PoolMeta, PoolShape, TrajectoryPool};
    use proptest::prelude::*;

    fn pool_from(n_traj: usize, t: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> TrajectoryPool {
        let mut data = Vec::new();
        for i in 0..n_traj {
            for s in 0..t {
                for j in 0..d {
                    data.push(f(i, s, j) as f32);
                }
            }
        }
        let shape = PoolShape { n_traj, t, c: d, h: 1, w: 1 };
        TrajectoryPool::new(shape, data, PoolMeta::default()).unwrap()
    }

    fn gaussian_pool(n_traj: usize, t: usize, d: usize, seed: u64) -> TrajectoryPool {
        let mut rng = crate::rng::rng(seed);
        let vals: Vec<f64> = (0..n_traj * t * d).map(|_| standard_normal(&mut rng)).collect();
        pool_from(n_traj, t, d, |i, s, j| vals[(i * t + s) * d + j])
    }

    #[test]
    fn rank_one_pool_needs_one_component() {
        let pattern = [1.0, -2.0, 0.5, 3.0, 0.0];
        let pool = pool_from(4, 20, 5, |i, s, j| ((i * 20 + s) as f64 * 0.37).sin() * pattern[j]);
        let p = fit_projector(&pool.view(), &ProjectorSpec::default()).unwrap();
        assert_eq!(p.k(), 1);
        assert!(p.explained().unwrap() >= 0.99);
    }

    #[test]
    fn identity_round_trips_frames() {
        let pool = gaussian_pool(3, 10, 8, 1);
        let p = fit_projector(&pool.view(), &ProjectorSpec::with_method(ProjectorMethod::Identity)).unwrap();
        assert_eq!(p.k(), 8);
        let frame: Vec<f64> = pool.frame(1, 3).iter().map(|&v| v as f64).collect();
        let s = p.project_frame(&frame);
        for j in 0..8 {
            let back = s[j] * p.scale()[j] + p.mean()[j];
            assert!((back - frame[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn projected_fit_frames_are_centered() {
        let pool = gaussian_pool(2, 50, 6, 4);
        let spec = ProjectorSpec { fit_samples: 100, max_components: 6, ..Default::default() };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        let s = project(&p, &pool.view()).unwrap();
        for comp in 0..p.k() {
            let mean: f64 = (0..2)
                .flat_map(|i| (0..50).map(move |t| (i, t)))
                .map(|(i, t)| s.state(i, t)[comp])
                .sum::<f64>()
                / 100.0;
            assert!(mean.abs() < 1e-6, "component {comp} mean {mean}");
        }
    }

    #[test]
    fn full_variance_target_reconstructs() {
        let pool = gaussian_pool(2, 30, 5, 9);
        let spec = ProjectorSpec { variance_target: 1.0, fit_samples: 60, max_components: 8, ..Default::default() };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        assert_eq!(p.k(), 5);
        let frame: Vec<f64> = pool.frame(0, 7).iter().map(|&v| v as f64).collect();
        let z = p.features(&frame);
        let back = p.reconstruct_features(&p.project_frame(&frame));
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn pca_basis_is_orthonormal() {
        let pool = gaussian_pool(4, 40, 12, 2);
        let spec = ProjectorSpec { fit_samples: 160, max_components: 8, ..Default::default() };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        let gram = p.basis() * p.basis().transpose();
        let eye = DMatrix::<f64>::identity(p.k(), p.k());
        assert!((gram - eye).amax() < 1e-8);
    }

    #[test]
    fn svd_matches_pca_up_to_sign_on_separated_spectrum() {
        // three strong directions with distinct variances plus weak noise
        let mut rng = crate::rng::rng(5);
        let d = 16;
        let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| standard_normal(&mut rng)).collect()).collect();
        let amps = [6.0, 3.0, 1.5];
        let n = 400;
        let coeffs: Vec<f64> = (0..n * 3).map(|_| standard_normal(&mut rng)).collect();
        let noise: Vec<f64> = (0..n * d).map(|_| 0.01 * standard_normal(&mut rng)).collect();
        let pool = pool_from(1, n, d, |_, s, j| {
            (0..3).map(|c| amps[c] * coeffs[s * 3 + c] * dirs[c][j]).sum::<f64>() + noise[s * d + j]
        });
        // standardization is per feature, so compare both methods on the same features
        let base = ProjectorSpec { fit_samples: n, max_components: 3, variance_target: 1.0, ..Default::default() };
        let pca = fit_projector(&pool.view(), &base).unwrap();
        let svd = fit_projector(&pool.view(), &ProjectorSpec { method: ProjectorMethod::Svd, ..base }).unwrap();
        assert_eq!(pca.k(), svd.k());
        for r in 0..3 {
            let dot: f64 = pca.basis().row(r).dot(&svd.basis().row(r));
            assert!((dot.abs() - 1.0).abs() < 1e-6, "component {r}: |dot| = {}", dot.abs());
        }
    }

    #[test]
    fn zero_variance_pool_is_flagged() {
        let pool = pool_from(2, 10, 4, |_, _, _| 3.0);
        let p = fit_projector(&pool.view(), &ProjectorSpec::default()).unwrap();
        assert!(p.is_degenerate());
        assert_eq!(p.k(), 1);
        assert!(p.scale().iter().all(|&s| s == SCALE_FLOOR));
    }

    #[test]
    fn dimension_mismatch_names_both_sides() {
        let a = gaussian_pool(2, 10, 4, 0);
        let b = gaussian_pool(2, 10, 5, 0);
        let p = fit_projector(&a.view(), &ProjectorSpec::default()).unwrap();
        let msg = project(&p, &b.view()).unwrap_err().to_string();
        assert!(msg.contains("d=4") && msg.contains("d=5"), "{msg}");
    }

    #[test]
    fn coarsening_reduces_feature_dimension() {
        let pool = generate_diffusion2d(&Diffusion2dSpec::new(8, 2, 6, 0.2, 0)).unwrap();
        let spec = ProjectorSpec { coarsen_factor: 2, method: ProjectorMethod::Identity, ..Default::default() };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        assert_eq!(p.d(), 16);
        let spec = ProjectorSpec { normalize_before_coarsen: true, ..spec };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        assert_eq!(p.d(), 16);
        assert_eq!(p.mean().len(), 64);
    }

    #[test]
    fn probes_and_random_projection_shapes() {
        let pool = gaussian_pool(2, 20, 10, 3);
        let spec = ProjectorSpec { method: ProjectorMethod::Probes, max_components: 4, fit_samples: 40, ..Default::default() };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        assert_eq!(p.k(), 4);
        assert!(p.basis().iter().all(|&v| v == 0.0 || v == 1.0));
        let spec = ProjectorSpec { method: ProjectorMethod::RandomProjection, ..spec };
        let p = fit_projector(&pool.view(), &spec).unwrap();
        assert_eq!((p.k(), p.d()), (4, 10));
    }

    #[test]
    fn projector_record_round_trips() {
        let pool = gaussian_pool(3, 20, 6, 8);
        for method in [ProjectorMethod::Pca, ProjectorMethod::Svd, ProjectorMethod::Identity] {
            let p = fit_projector(&pool.view(), &ProjectorSpec { method, fit_samples: 60, max_components: 6, ..Default::default() }).unwrap();
            let bytes = p.to_bytes();
            assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize, bytes.len() - 8);
            assert_eq!(Projector::from_bytes(&bytes).unwrap(), p);
            assert!(Projector::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn sampling_and_bases_are_seeded() {
        let pool = gaussian_pool(3, 30, 6, 8);
        for method in [ProjectorMethod::Svd, ProjectorMethod::RandomProjection, ProjectorMethod::Probes] {
            let spec = ProjectorSpec { method, fit_samples: 40, max_components: 3, seed: 11, ..Default::default() };
            let a = fit_projector(&pool.view(), &spec).unwrap();
            let b = fit_projector(&pool.view(), &spec).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn explained_curve_is_monotone_and_k_minimal(seed in 0u64..500, target in 0.3f64..1.0) {
            let pool = gaussian_pool(2, 15, 7, seed);
            let spec = ProjectorSpec { variance_target: target, fit_samples: 30, max_components: 7, ..Default::default() };
            let p = fit_projector(&pool.view(), &spec).unwrap();
            let curve = p.explained_curve().unwrap();
            prop_assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            prop_assert!(curve[p.k() - 1] >= target - 1e-10);
            if p.k() > 1 {
                prop_assert!(curve[p.k() - 2] < target - 1e-10);
            }
        }

        #[test]
        fn projection_is_affine(seed in 0u64..200, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let pool = gaussian_pool(2, 15, 5, seed);
            let p = fit_projector(&pool.view(), &ProjectorSpec { fit_samples: 30, max_components: 5, ..Default::default() }).unwrap();
            let x: Vec<f64> = pool.frame(0, 1).iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = pool.frame(1, 2).iter().map(|&v| v as f64).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let origin = p.project_frame(&[0.0; 5]);
            let (px, py, pc) = (p.project_frame(&x), p.project_frame(&y), p.project_frame(&combo));
            for j in 0..p.k() {
                // linear part after removing the offset at the origin
                let lhs = pc[j] - origin[j];
                let rhs = a * (px[j] - origin[j]) + b * (py[j] - origin[j]);
                prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
            }
        }
    }
}
