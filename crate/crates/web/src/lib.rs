//! Browser demo over a synthetic room.
//!
//! [`Demo`] is plain Rust and holds the whole state: the room, its fused
//! features, and a toy embedder. On `wasm32` the [`wasm`] module wraps it for
//! JavaScript; `www/index.html` draws the cloud on a 2D canvas.

use fieldfuse::embed::{engineer_all, Embedder, EmbedderSpec};
use fieldfuse::query::quantize_score;
use fieldfuse::synth::{SynthConfig, SyntheticScene};
use fieldfuse::{
    fuse, heatmap, segment, FusedFeatureCloud, OcclusionConfig, Pooling, Result, Scene,
};

#[cfg(target_arch = "wasm32")]
pub mod wasm;

/// Label code for points with no fused feature.
pub const NO_LABEL: u16 = u16::MAX;

pub struct Demo {
    scene: Scene,
    class_names: Vec<String>,
    embedder: Embedder,
    fused: FusedFeatureCloud,
    seed: u64,
}

impl Demo {
    /// Builds the room, renders its views, and fuses with average pooling
    /// at occlusion ratio 0.05.
    pub fn new(points: usize, views: usize, seed: u64) -> Result<Self> {
        let cfg = SynthConfig {
            points,
            views,
            seed,
            ..SynthConfig::default()
        };
        let room = SyntheticScene::room();
        let out = room.build(&cfg)?;
        let embedder = Embedder::from_spec(&EmbedderSpec::Toy {
            dim: cfg.dim,
            seed: cfg.embed_seed,
        })?;
        let fused = fuse(&out.scene, &OcclusionConfig::new(0.05)?, Pooling::Average)?;
        Ok(Self {
            scene: out.scene,
            class_names: room.class_names,
            embedder,
            fused,
            seed,
        })
    }

    pub fn num_points(&self) -> usize {
        self.scene.cloud.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Flat `[x0, y0, z0, x1, ...]`.
    pub fn positions(&self) -> Vec<f32> {
        self.scene
            .cloud
            .positions()
            .iter()
            .flat_map(|p| p.map(|c| c as f32))
            .collect()
    }

    /// Points with at least one view.
    pub fn seen(&self) -> usize {
        self.fused.supervised().len()
    }

    /// Quantized cosine of every point to `text`, as on the HTTP wire.
    pub fn query(&self, text: &str) -> Result<Vec<u8>> {
        let q = self
            .embedder
            .embed_for_dim(&[text.trim().to_string()], self.fused.dim())?;
        let scores = heatmap(self.fused.features(), q.embedding(0))?;
        Ok(scores.into_iter().map(quantize_score).collect())
    }

    /// Label index per point for a comma- or newline-separated label list;
    /// [`NO_LABEL`] for unseen points.
    pub fn segment(&self, labels: &str, engineer: bool) -> Result<Vec<u16>> {
        let mut names = split_labels(labels);
        if names.is_empty() {
            return Err(fieldfuse::Error::InvalidConfig("no labels given".into()));
        }
        if engineer {
            names = engineer_all(&names)?;
        }
        let prompts = self.embedder.embed_for_dim(&names, self.fused.dim())?;
        let seg = segment(self.fused.features(), &prompts)?;
        Ok(seg
            .labels
            .iter()
            .map(|&l| if l < 0 { NO_LABEL } else { l as u16 })
            .collect())
    }

    /// Re-fuses with a new occlusion ratio (negative disables the depth test)
    /// and pooling (`average`, `median`, or `random`).
    pub fn refuse(&mut self, sigma: f64, pool: &str) -> Result<()> {
        let occ = if sigma < 0.0 {
            OcclusionConfig::disabled()
        } else {
            OcclusionConfig::new(sigma)?
        };
        let pool = match pool {
            "average" => Pooling::Average,
            "median" => Pooling::Median,
            "random" => Pooling::Random { seed: self.seed },
            other => {
                return Err(fieldfuse::Error::InvalidConfig(format!(
                    "unknown pooling {other:?}"
                )))
            }
        };
        self.fused = fuse(&self.scene, &occ, pool)?;
        Ok(())
    }

    /// Fraction of points whose segmentation against the room's own class
    /// names matches the ground truth.
    pub fn accuracy(&self) -> Result<f64> {
        let labels = self.segment(&self.class_names.join(","), false)?;
        let gt = self.scene.cloud.gt_label().unwrap_or_default();
        let hits = labels
            .iter()
            .zip(gt)
            .filter(|(l, g)| **l as i64 == **g)
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

pub fn split_labels(s: &str) -> Vec<String> {
    s.split([',', '\n'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Blue (0) through green (mid) to yellow (255).
pub fn colormap(score: u8) -> [u8; 3] {
    let t = score as f32 / 255.0;
    let (a, b, f) = if t < 0.5 {
        ([0.0, 0.0, 255.0], [0.0, 200.0, 0.0], t * 2.0)
    } else {
        ([0.0, 200.0, 0.0], [255.0, 255.0, 0.0], t * 2.0 - 1.0)
    };
    std::array::from_fn(|k| (a[k] + (b[k] - a[k]) * f).round() as u8)
}

/// Fixed categorical palette indexed by label; grey for [`NO_LABEL`].
pub fn label_color(label: u16) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 10] = [
        [228, 26, 28],
        [55, 126, 184],
        [77, 175, 74],
        [152, 78, 163],
        [255, 127, 0],
        [166, 86, 40],
        [247, 129, 191],
        [0, 170, 170],
        [190, 190, 0],
        [30, 30, 30],
    ];
    if label == NO_LABEL {
        [160, 160, 160]
    } else {
        PALETTE[label as usize % PALETTE.len()]
    }
}
