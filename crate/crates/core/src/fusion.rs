//! Multi-view pooling of per-pixel features onto cloud points, plus the
//! per-point majority-vote label baseline.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::projection::{scene_pairs, OcclusionConfig, PixelHit};
use crate::scene::Scene;
use crate::tensor::{load_feat, save_feat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Average,
    /// One hit chosen uniformly per point; the stream is keyed by point index
    /// so the choice does not depend on scheduling.
    Random {
        seed: u64,
    },
    /// The member feature with the smallest summed Euclidean distance to the
    /// other members; ties go to the lexicographically smallest feature.
    Median,
}

/// Per-point fused features and the number of views that contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureCloud {
    features: FeatureMatrix,
    view_count: Vec<u32>,
}

impl FusedFeatureCloud {
    pub fn new(features: FeatureMatrix, view_count: Vec<u32>) -> Result<Self> {
        if features.rows() != view_count.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} view counts",
                features.rows(),
                view_count.len()
            )));
        }
        for (i, (row, &k)) in features.iter_rows().zip(&view_count).enumerate() {
            if k == 0 && row.iter().any(|&v| v != 0.0) {
                return Err(Error::ShapeMismatch(format!(
                    "point {i} has no views but a non-zero feature"
                )));
            }
            if k > 0 && row.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!(
                    "point {i} has a non-finite feature"
                )));
            }
        }
        Ok(Self {
            features,
            view_count,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn view_count(&self) -> &[u32] {
        &self.view_count
    }

    pub fn len(&self) -> usize {
        self.view_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_count.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Indices of points seen by at least one view.
    pub fn supervised(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.view_count[i] > 0)
            .collect()
    }

    pub fn view_count_tensor(&self) -> Tensor {
        let data = self.view_count.iter().map(|&k| k as f32).collect();
        Tensor::new(vec![self.len(), 1], data).expect("consistent shape")
    }

    pub fn save(&self, features: impl AsRef<Path>, views: impl AsRef<Path>) -> Result<()> {
        save_feat(features, &self.features.to_tensor())?;
        save_feat(views, &self.view_count_tensor())
    }

    pub fn load(features: impl AsRef<Path>, views: impl AsRef<Path>) -> Result<Self> {
        let f = FeatureMatrix::from_tensor(load_feat(features)?)?;
        let v = load_feat(views)?;
        if v.dims() != [f.rows(), 1] {
            return Err(Error::ShapeMismatch(format!(
                "view counts must be [{}, 1], got {:?}",
                f.rows(),
                v.dims()
            )));
        }
        let counts = v
            .data()
            .iter()
            .map(|&c| {
                if c >= 0.0 && c.fract() == 0.0 && c <= u32::MAX as f32 {
                    Ok(c as u32)
                } else {
                    Err(Error::malformed(
                        "view counts",
                        format!("{c} is not a count"),
                    ))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(f, counts)
    }
}

/// Pairs every point with its visible pixels and pools the pixel features.
pub fn fuse(scene: &Scene, occ: &OcclusionConfig, pool: Pooling) -> Result<FusedFeatureCloud> {
    let dim = scene
        .dim()
        .ok_or_else(|| Error::InvalidConfig("scene has no images to fuse".into()))?;
    let pairs = scene_pairs(scene, occ)?;
    Ok(pool_pairs(scene, dim, &pairs, pool))
}

/// Pools pre-computed pairs (sorted by point, then image).
pub fn pool_pairs(
    scene: &Scene,
    dim: usize,
    pairs: &[(usize, PixelHit)],
    pool: Pooling,
) -> FusedFeatureCloud {
    let m = scene.cloud.len();
    let mut offsets = vec![0usize; m + 1];
    for (p, _) in pairs {
        offsets[p + 1] += 1;
    }
    for i in 0..m {
        offsets[i + 1] += offsets[i];
    }
    let view_count: Vec<u32> = (0..m)
        .map(|i| (offsets[i + 1] - offsets[i]) as u32)
        .collect();
    let mut data = vec![0.0f32; m * dim];

    let fill = |(i, out): (usize, &mut [f32])| {
        let hits = &pairs[offsets[i]..offsets[i + 1]];
        if hits.is_empty() {
            return;
        }
        let rows: Vec<&[f32]> = hits
            .iter()
            .map(|(_, h)| scene.images[h.image_index].pixel(h.u as usize, h.v as usize))
            .collect();
        match pool {
            Pooling::Average => average_into(&rows, out),
            Pooling::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                out.copy_from_slice(rows[rng.random_range(0..rows.len())]);
            }
            Pooling::Median => {
                let mut sorted = rows;
                sorted.sort_by(|a, b| lexicographic(a, b));
                out.copy_from_slice(sorted[medoid(&sorted)]);
            }
        }
    };
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(dim).enumerate().for_each(fill);
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(dim).enumerate().for_each(fill);

    let features = FeatureMatrix::new(m, dim, data).expect("consistent shape");
    FusedFeatureCloud {
        features,
        view_count,
    }
}

fn lexicographic(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Mean in f64, summed in a content-defined order so the result does not
/// depend on the order the views arrived in.
fn average_into(rows: &[&[f32]], out: &mut [f32]) {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| lexicographic(a, b));
    let mut acc = vec![0.0f64; out.len()];
    for r in &sorted {
        for (a, &v) in acc.iter_mut().zip(r.iter()) {
            *a += v as f64;
        }
    }
    let k = rows.len() as f64;
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / k) as f32;
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Index of the member minimizing summed distance to all members; the first
/// such member wins ties.
pub fn medoid(rows: &[&[f32]]) -> usize {
    let k = rows.len();
    let mut sums = vec![0.0f64; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = euclidean(rows[i], rows[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    let mut best = 0;
    for i in 1..k {
        if sums[i] < sums[best] {
            best = i;
        }
    }
    best
}

/// Label per point from per-view label maps: the most frequent label across
/// the point's views, lowest label id on ties, `-1` for unseen points.
pub fn majority_vote_labels(num_points: usize, views: &[Vec<(usize, u32)>]) -> Vec<i64> {
    let mut tallies: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); num_points];
    for view in views {
        for &(p, label) in view {
            if p < num_points {
                *tallies[p].entry(label).or_insert(0) += 1;
            }
        }
    }
    tallies
        .into_iter()
        .map(|t| {
            // BTreeMap iterates labels ascending; strict > keeps the lowest on ties
            let mut best: Option<(u32, u32)> = None;
            for (label, n) in t {
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((label, n));
                }
            }
            best.map_or(-1, |(l, _)| l as i64)
        })
        .collect()
}
