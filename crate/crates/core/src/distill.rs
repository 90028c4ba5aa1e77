//! Distillation of fused 2D features into a position-only feature field.
//!
//! The field is trained to match fused features under the cosine loss
//! `1 - cos(f3d, f2d)`, averaged over a batch, using sparse Adam updates on
//! the lattice vertices the batch touches.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ZERO_NORM};
use crate::field::{stencil, DistilledField};
use crate::fusion::FusedFeatureCloud;
use crate::scene::PointCloud;

/// Coarsest level spans the longest cloud axis in this many cells.
pub const DEFAULT_COARSE_CELLS: f64 = 16.0;

/// Per-row cosine loss with gradient w.r.t. `y` written into `grad`.
///
/// Rows where `y` is numerically zero cost 1 and get a zero subgradient.
/// The target must be non-zero.
pub fn row_loss_and_grad(y: &[f64], target: &[f32], grad: &mut [f64]) -> f64 {
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = target
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if ny <= ZERO_NORM || nt <= ZERO_NORM {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return 1.0;
    }
    let dot: f64 = y.iter().zip(target).map(|(a, &b)| a * b as f64).sum();
    let cos = dot / (ny * nt);
    // d/dy (1 - cos) = -(t_hat - cos * y_hat) / |y|
    for ((g, &yi), &ti) in grad.iter_mut().zip(y).zip(target) {
        *g = -((ti as f64) / nt - cos * yi / ny) / ny;
    }
    1.0 - cos
}

fn row_loss(y: &[f64], target: &[f32]) -> f64 {
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = target
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if ny <= ZERO_NORM || nt <= ZERO_NORM {
        return 1.0;
    }
    let dot: f64 = y.iter().zip(target).map(|(a, &b)| a * b as f64).sum();
    1.0 - dot / (ny * nt)
}

/// Mean of `1 - cos(f3d_i, f2d_i)` over rows.
pub fn cosine_loss(f3d: &FeatureMatrix, f2d: &FeatureMatrix) -> Result<f64> {
    if f3d.dim() != f2d.dim() {
        return Err(Error::DimMismatch {
            expected: f2d.dim(),
            found: f3d.dim(),
        });
    }
    if f3d.rows() != f2d.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted rows vs {} target rows",
            f3d.rows(),
            f2d.rows()
        )));
    }
    if f3d.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = f3d
        .iter_rows()
        .zip(f2d.iter_rows())
        .map(|(a, b)| {
            let y: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            row_loss(&y, b)
        })
        .sum();
    Ok(total / f3d.rows() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub levels: usize,
    /// Voxel size of the coarsest level; each finer level halves it.
    pub base_voxel: f64,
    pub iters: usize,
    pub batch_points: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Half-width of the uniform init for newly created cells.
    pub init_scale: f64,
    /// Record the full supervised-set loss every this many steps (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_voxel: 0.1,
            iters: 500,
            batch_points: 20_000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            init_scale: 1e-2,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with `base_voxel` sized so the coarsest level spans the
    /// cloud's longest axis in [`DEFAULT_COARSE_CELLS`] cells.
    pub fn for_cloud(cloud: &PointCloud) -> Self {
        let (lo, hi) = cloud.bounds();
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let base_voxel = if extent > 0.0 {
            extent / DEFAULT_COARSE_CELLS
        } else {
            1.0
        };
        Self {
            base_voxel,
            ..Self::default()
        }
    }

    pub fn voxel_sizes(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|l| self.base_voxel / (1u64 << l) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.levels == 0 || self.levels > 16 {
            return bad("levels must be in 1..=16");
        }
        if !(self.base_voxel > 0.0 && self.base_voxel.is_finite()) {
            return bad("base_voxel must be positive");
        }
        if self.batch_points == 0 {
            return bad("batch_points must be >= 1");
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return bad("learning_rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub field: DistilledField,
    /// Mean batch loss at every step, measured before the step's update.
    pub loss_trace: Vec<f64>,
    /// `(step, loss)` on the full supervised set, every `eval_every` steps,
    /// starting with step 0.
    pub eval_trace: Vec<(usize, f64)>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic per-cell init: a function of `(seed, level, key)` only, so
/// values do not depend on the order cells are first touched.
pub fn init_cell(seed: u64, level: usize, key: [i32; 3], scale: f64, out: &mut [f32]) {
    let mut h = splitmix64(seed ^ 0xC0FF_EE00);
    h = splitmix64(h ^ level as u64);
    for k in key {
        h = splitmix64(h ^ (k as u32 as u64));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    for v in out {
        *v = (rng.random::<f64>() * 2.0 - 1.0) as f32 * scale as f32;
    }
}

/// A lattice vertex touched by a point: `(level, slot, weight)`.
type Corner = (usize, usize, f64);

fn corners_existing(field: &DistilledField, p: [f64; 3]) -> Vec<Corner> {
    let mut out = Vec::with_capacity(8 * field.levels().len());
    for (li, level) in field.levels().iter().enumerate() {
        for (key, w) in stencil(p, level.voxel_size()) {
            if w != 0.0 {
                if let Some(s) = level.slot(&key) {
                    out.push((li, s, w));
                }
            }
        }
    }
    out
}

fn output_at(field: &DistilledField, corners: &[Corner], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for &(l, s, w) in corners {
        for (o, &v) in y.iter_mut().zip(field.slot_values(l, s)) {
            *o += w * v as f64;
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Trains a field on `cloud` to reproduce `fused` on every point with at
/// least one view.
pub fn train(
    cloud: &PointCloud,
    fused: &FusedFeatureCloud,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cloud.len() != fused.len() {
        return Err(Error::ShapeMismatch(format!(
            "cloud has {} points, fused features {}",
            cloud.len(),
            fused.len()
        )));
    }
    let supervised = fused.supervised();
    if supervised.is_empty() {
        return Err(Error::NoSupervision);
    }
    let dim = fused.dim();
    let positions = cloud.positions();
    let targets = fused.features();
    let mut field = DistilledField::new(dim, &cfg.voxel_sizes(), cloud.bounds())?;
    let nlev = cfg.levels;
    let mut adam = Adam {
        m: vec![Vec::new(); nlev],
        v: vec![Vec::new(); nlev],
    };
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); nlev];
    let mut stamp: Vec<Vec<usize>> = vec![Vec::new(); nlev];
    let mut touched: Vec<Vec<usize>> = vec![Vec::new(); nlev];
    let mut cache: Vec<Option<Box<[Corner]>>> = vec![None; cloud.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut loss_trace = Vec::with_capacity(cfg.iters);
    let mut eval_trace = Vec::new();
    let full_loss = |field: &DistilledField| -> f64 {
        let mut y = vec![0.0; dim];
        let total: f64 = supervised
            .iter()
            .map(|&i| {
                y.iter_mut().for_each(|v| *v = 0.0);
                field.accumulate_at(positions[i], &mut y);
                row_loss(&y, targets.row(i))
            })
            .sum();
        total / supervised.len() as f64
    };
    if cfg.eval_every > 0 {
        eval_trace.push((0, full_loss(&field)));
    }

    let mut y = vec![0.0f64; dim];
    let mut gy = vec![0.0f64; dim];
    for step in 1..=cfg.iters {
        let batch: Vec<usize> = if cfg.batch_points >= supervised.len() {
            supervised.clone()
        } else {
            let mut b: Vec<usize> = index::sample(&mut rng, supervised.len(), cfg.batch_points)
                .into_iter()
                .map(|k| supervised[k])
                .collect();
            b.sort_unstable();
            b
        };
        let inv_m = 1.0 / batch.len() as f64;
        let mut batch_loss = 0.0;
        for &i in &batch {
            if cache[i].is_none() {
                let mut cs = Vec::with_capacity(8 * nlev);
                for li in 0..nlev {
                    let voxel = field.levels()[li].voxel_size();
                    for (key, w) in stencil(positions[i], voxel) {
                        if w == 0.0 {
                            continue;
                        }
                        let (s, created) = field.ensure_cell(li, key, |out| {
                            init_cell(cfg.seed, li, key, cfg.init_scale, out)
                        });
                        if created {
                            adam.m[li].resize((s + 1) * dim, 0.0);
                            adam.v[li].resize((s + 1) * dim, 0.0);
                            grads[li].resize((s + 1) * dim, 0.0);
                            stamp[li].resize(s + 1, 0);
                        }
                        cs.push((li, s, w));
                    }
                }
                cache[i] = Some(cs.into_boxed_slice());
            }
            let corners = cache[i].as_deref().expect("filled above");
            output_at(&field, corners, &mut y);
            batch_loss += row_loss_and_grad(&y, targets.row(i), &mut gy);
            for &(l, s, w) in corners {
                if stamp[l][s] != step {
                    stamp[l][s] = step;
                    touched[l].push(s);
                }
                let g = &mut grads[l][s * dim..(s + 1) * dim];
                for (gi, &d) in g.iter_mut().zip(&gy) {
                    *gi += w * d * inv_m;
                }
            }
        }
        loss_trace.push(batch_loss * inv_m);

        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for l in 0..nlev {
            for &s in &touched[l] {
                let range = s * dim..(s + 1) * dim;
                let params = field.slot_values_mut(l, s);
                for (k, p) in range.clone().zip(params.iter_mut()) {
                    let g = grads[l][k];
                    let m = cfg.beta1 * adam.m[l][k] + (1.0 - cfg.beta1) * g;
                    let v = cfg.beta2 * adam.v[l][k] + (1.0 - cfg.beta2) * g * g;
                    adam.m[l][k] = m;
                    adam.v[l][k] = v;
                    let update = cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
                    *p = (*p as f64 - update) as f32;
                }
                grads[l][range].iter_mut().for_each(|g| *g = 0.0);
            }
            touched[l].clear();
        }

        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            eval_trace.push((step, full_loss(&field)));
        }
    }

    Ok(TrainReport {
        field,
        loss_trace,
        eval_trace,
    })
}

/// Positions with their target features.
#[derive(Debug, Clone)]
pub struct Batch {
    pub positions: Vec<[f64; 3]>,
    pub targets: FeatureMatrix,
}

/// Gradient of the mean batch loss w.r.t. every stored cell value, laid out
/// like the field: `grad[level][slot * dim + component]`.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub per_level: Vec<Vec<f64>>,
}

pub fn analytic_gradient(field: &DistilledField, batch: &Batch) -> Result<Gradient> {
    check_batch(field, batch)?;
    let dim = field.dim();
    let mut per_level: Vec<Vec<f64>> = field
        .levels()
        .iter()
        .map(|l| vec![0.0; l.num_cells() * dim])
        .collect();
    let inv_m = 1.0 / batch.positions.len() as f64;
    let mut y = vec![0.0; dim];
    let mut gy = vec![0.0; dim];
    let mut loss = 0.0;
    for (i, &p) in batch.positions.iter().enumerate() {
        let corners = corners_existing(field, p);
        output_at(field, &corners, &mut y);
        loss += row_loss_and_grad(&y, batch.targets.row(i), &mut gy);
        for (l, s, w) in corners {
            for (g, &d) in per_level[l][s * dim..(s + 1) * dim].iter_mut().zip(&gy) {
                *g += w * d * inv_m;
            }
        }
    }
    Ok(Gradient {
        loss: loss * inv_m,
        per_level,
    })
}

fn check_batch(field: &DistilledField, batch: &Batch) -> Result<()> {
    if batch.positions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.targets.rows() != batch.positions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} positions vs {} targets",
            batch.positions.len(),
            batch.targets.rows()
        )));
    }
    if batch.targets.dim() != field.dim() {
        return Err(Error::DimMismatch {
            expected: field.dim(),
            found: batch.targets.dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-3;
/// Denominator floor for relative errors of near-zero gradients.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Compares analytic gradients against central differences (steps
/// [`FD_STEP`] and half of it, Richardson-extrapolated) on up to
/// `num_params` randomly chosen touched cell parameters.
pub fn grad_check(
    field: &DistilledField,
    batch: &Batch,
    num_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let grad = analytic_gradient(field, batch)?;
    let dim = field.dim();
    let corners: Vec<Vec<Corner>> = batch
        .positions
        .iter()
        .map(|&p| corners_existing(field, p))
        .collect();
    let base: Vec<Vec<f64>> = corners
        .iter()
        .map(|cs| {
            let mut y = vec![0.0; dim];
            output_at(field, cs, &mut y);
            y
        })
        .collect();

    let mut candidates: Vec<(usize, usize)> =
        corners.iter().flatten().map(|&(l, s, _)| (l, s)).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let mut params: Vec<(usize, usize, usize)> = candidates
        .into_iter()
        .flat_map(|(l, s)| (0..dim).map(move |c| (l, s, c)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if params.len() > num_params {
        let picked = index::sample(&mut rng, params.len(), num_params);
        params = picked.into_iter().map(|k| params[k]).collect();
    }

    let m = batch.positions.len() as f64;
    let loss_with = |target: (usize, usize, usize), delta: f64| -> f64 {
        let (tl, ts, tc) = target;
        let mut total = 0.0;
        let mut y = vec![0.0; dim];
        for (i, cs) in corners.iter().enumerate() {
            y.copy_from_slice(&base[i]);
            for &(l, s, w) in cs {
                if l == tl && s == ts {
                    y[tc] += w * delta;
                }
            }
            total += row_loss(&y, batch.targets.row(i));
        }
        total / m
    };

    let mut max_rel: f64 = 0.0;
    for &(l, s, c) in &params {
        let analytic = grad.per_level[l][s * dim + c];
        let central = |h: f64| (loss_with((l, s, c), h) - loss_with((l, s, c), -h)) / (2.0 * h);
        // Richardson extrapolation cancels the h^2 term, which dominates near
        // points whose output norm is small
        let numeric = (4.0 * central(FD_STEP / 2.0) - central(FD_STEP)) / 3.0;
        let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked: params.len(),
    })
}
