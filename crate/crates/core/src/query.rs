//! Prompt-similarity inference: similarity matrices, 2D/3D feature ensembling,
//! argmax segmentation, single-query heatmaps, and one-per-region retrieval.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::{cosine, is_zero_row, FeatureMatrix};
use crate::field::DistilledField;
use crate::fusion::FusedFeatureCloud;
use crate::scene::{PointCloud, PromptSet};

/// Scores within this distance count as a tie between 2D and 3D.
pub const ENSEMBLE_TIE: f64 = 1e-12;

fn check_dim(features: &FeatureMatrix, dim: usize) -> Result<()> {
    if features.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: features.dim(),
        });
    }
    Ok(())
}

/// `m x N` cosine scores. Rows of zero features are all-zero and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    prompts: usize,
    scores: Vec<f32>,
    zero_rows: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.scores[i * self.prompts..(i + 1) * self.prompts]
    }

    pub fn is_zero_row(&self, i: usize) -> bool {
        self.zero_rows[i]
    }

    pub fn get(&self, i: usize, n: usize) -> f32 {
        self.scores[i * self.prompts + n]
    }
}

pub fn similarities(features: &FeatureMatrix, prompts: &PromptSet) -> Result<SimilarityMatrix> {
    check_dim(features, prompts.dim())?;
    let n = prompts.len();
    let mut scores = Vec::with_capacity(features.rows() * n);
    let mut zero_rows = Vec::with_capacity(features.rows());
    for f in features.iter_rows() {
        let zero = is_zero_row(f);
        zero_rows.push(zero);
        for k in 0..n {
            scores.push(if zero {
                0.0
            } else {
                cosine(f, prompts.embedding(k)) as f32
            });
        }
    }
    Ok(SimilarityMatrix {
        rows: features.rows(),
        prompts: n,
        scores,
        zero_rows,
    })
}

/// Max cosine over the prompt set, `-inf` for a zero feature.
pub fn max_prompt_similarity(feature: &[f32], prompts: &PromptSet) -> f64 {
    if is_zero_row(feature) {
        return f64::NEG_INFINITY;
    }
    (0..prompts.len())
        .map(|n| cosine(feature, prompts.embedding(n)))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    From2D,
    From3D,
    None,
}

impl FeatureSource {
    pub fn code(self) -> f32 {
        match self {
            FeatureSource::From2D => 0.0,
            FeatureSource::From3D => 1.0,
            FeatureSource::None => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub features: FeatureMatrix,
    pub source: Vec<FeatureSource>,
    /// Max prompt similarity of the chosen feature (`-inf` for `None`).
    pub ensemble_score: Vec<f64>,
}

impl EnsembleResult {
    pub fn fraction_3d(&self) -> f64 {
        let n3 = self
            .source
            .iter()
            .filter(|s| **s == FeatureSource::From3D)
            .count();
        n3 as f64 / self.source.len().max(1) as f64
    }
}

/// Per point keeps whichever of the fused (2D) and distilled (3D) features
/// has the higher max similarity to the prompt set. Points without views have
/// no 2D feature; ties go to 3D.
pub fn ensemble_features(
    fused: &FusedFeatureCloud,
    distilled: &FeatureMatrix,
    prompts: &PromptSet,
) -> Result<EnsembleResult> {
    let f2d = fused.features();
    check_dim(f2d, prompts.dim())?;
    check_dim(distilled, prompts.dim())?;
    if distilled.rows() != f2d.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} fused rows vs {} distilled rows",
            f2d.rows(),
            distilled.rows()
        )));
    }
    let m = f2d.rows();
    let mut out = FeatureMatrix::zeros(m, prompts.dim());
    let mut source = Vec::with_capacity(m);
    let mut score = Vec::with_capacity(m);
    for i in 0..m {
        let s2 = if fused.view_count()[i] == 0 {
            f64::NEG_INFINITY
        } else {
            max_prompt_similarity(f2d.row(i), prompts)
        };
        let s3 = max_prompt_similarity(distilled.row(i), prompts);
        let (src, s) = if s2 == f64::NEG_INFINITY && s3 == f64::NEG_INFINITY {
            (FeatureSource::None, f64::NEG_INFINITY)
        } else if s3 == f64::NEG_INFINITY || s2 - s3 > ENSEMBLE_TIE {
            (FeatureSource::From2D, s2)
        } else {
            (FeatureSource::From3D, s3)
        };
        match src {
            FeatureSource::From2D => out.row_mut(i).copy_from_slice(f2d.row(i)),
            FeatureSource::From3D => out.row_mut(i).copy_from_slice(distilled.row(i)),
            FeatureSource::None => {}
        }
        source.push(src);
        score.push(s);
    }
    Ok(EnsembleResult {
        features: out,
        source,
        ensemble_score: score,
    })
}

/// Evaluates the field on the cloud and ensembles against the fused cloud.
pub fn ensemble(
    fused: &FusedFeatureCloud,
    field: &DistilledField,
    cloud: &PointCloud,
    prompts: &PromptSet,
) -> Result<EnsembleResult> {
    if cloud.len() != fused.len() {
        return Err(Error::ShapeMismatch(format!(
            "cloud has {} points, fused features {}",
            cloud.len(),
            fused.len()
        )));
    }
    if field.dim() != prompts.dim() {
        return Err(Error::DimMismatch {
            expected: prompts.dim(),
            found: field.dim(),
        });
    }
    let distilled = field.eval(cloud.positions());
    ensemble_features(fused, &distilled, prompts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Prompt index per point, `-1` for zero features.
    pub labels: Vec<i64>,
    pub confidence: Vec<f32>,
}

/// Argmax over prompt cosines, lowest index on ties.
pub fn segment(features: &FeatureMatrix, prompts: &PromptSet) -> Result<Segmentation> {
    check_dim(features, prompts.dim())?;
    let mut labels = Vec::with_capacity(features.rows());
    let mut confidence = Vec::with_capacity(features.rows());
    for f in features.iter_rows() {
        if is_zero_row(f) {
            labels.push(-1);
            confidence.push(0.0);
            continue;
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for n in 0..prompts.len() {
            let s = cosine(f, prompts.embedding(n));
            if s > best.1 {
                best = (n, s);
            }
        }
        labels.push(best.0 as i64);
        confidence.push(best.1 as f32);
    }
    Ok(Segmentation { labels, confidence })
}

/// Argmax over the rows of a precomputed score matrix.
pub fn argmax_rows(sim: &SimilarityMatrix) -> Segmentation {
    let mut labels = Vec::with_capacity(sim.rows());
    let mut confidence = Vec::with_capacity(sim.rows());
    for i in 0..sim.rows() {
        if sim.is_zero_row(i) || sim.num_prompts() == 0 {
            labels.push(-1);
            confidence.push(0.0);
            continue;
        }
        let row = sim.row(i);
        let mut best = 0;
        for n in 1..row.len() {
            if row[n] > row[best] {
                best = n;
            }
        }
        labels.push(best as i64);
        confidence.push(row[best]);
    }
    Segmentation { labels, confidence }
}

/// Cosine of every point to one query vector (text or image embedding).
pub fn heatmap(features: &FeatureMatrix, query: &[f32]) -> Result<Vec<f32>> {
    check_dim(features, query.len())?;
    if is_zero_row(query) {
        return Err(Error::ZeroQuery);
    }
    Ok(features
        .iter_rows()
        .map(|f| cosine(f, query) as f32)
        .collect())
}

/// Maps a score in `[-1, 1]` to `round((s + 1) * 127.5)`, clamped to `0..=255`.
pub fn quantize_score(s: f32) -> u8 {
    let q = ((s as f64 + 1.0) * 127.5).round();
    q.clamp(0.0, 255.0) as u8
}

pub fn dequantize_score(q: u8) -> f32 {
    (q as f64 / 127.5 - 1.0) as f32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit {
    pub region_id: i64,
    pub point_index: usize,
    pub score: f32,
}

/// Best-scoring point per region, regions ranked by that score (descending),
/// truncated to `top_k`. Ties go to the lower region id, then lower point.
pub fn retrieve(
    features: &FeatureMatrix,
    regions: Option<&[i64]>,
    query: &[f32],
    top_k: usize,
) -> Result<Vec<RetrievalHit>> {
    let regions = regions.ok_or(Error::NoRegions)?;
    if regions.len() != features.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} region ids for {} feature rows",
            regions.len(),
            features.rows()
        )));
    }
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be >= 1".into()));
    }
    let scores = heatmap(features, query)?;
    let mut best: BTreeMap<i64, (usize, f32)> = BTreeMap::new();
    for (i, (&r, &s)) in regions.iter().zip(&scores).enumerate() {
        best.entry(r)
            .and_modify(|b| {
                if s > b.1 {
                    *b = (i, s);
                }
            })
            .or_insert((i, s));
    }
    let mut hits: Vec<RetrievalHit> = best
        .into_iter()
        .map(|(region_id, (point_index, score))| RetrievalHit {
            region_id,
            point_index,
            score,
        })
        .collect();
    // stable sort keeps ascending region order among equal scores
    hits.sort_by(|a, b| b.score.total_cmp(&a.score));
    hits.truncate(top_k);
    Ok(hits)
}
