//! Scene-level domain types: point clouds, posed feature images, prompt sets,
//! and the JSON manifest that ties a scene's files together.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{load_camera, Camera};
use crate::error::{Error, Result};
use crate::features::{is_zero_row, FeatureMatrix};
use crate::ply;
use crate::tensor::{load_feat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    region_id: Option<Vec<i64>>,
    gt_label: Option<Vec<i64>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_attributes(positions, None, None)
    }

    pub fn with_attributes(
        positions: Vec<[f64; 3]>,
        region_id: Option<Vec<i64>>,
        gt_label: Option<Vec<i64>>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidPointCloud("cloud has no points".into()));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidPointCloud(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        let m = positions.len();
        for (name, attr) in [("region_id", &region_id), ("gt_label", &gt_label)] {
            if let Some(a) = attr {
                if a.len() != m {
                    return Err(Error::InvalidPointCloud(format!(
                        "{name} has {} entries for {m} points",
                        a.len()
                    )));
                }
            }
        }
        if let Some(l) = gt_label.as_ref().and_then(|g| g.iter().find(|&&l| l < -1)) {
            return Err(Error::InvalidPointCloud(format!(
                "gt_label {l} is negative and not the -1 sentinel"
            )));
        }
        Ok(Self {
            positions,
            region_id,
            gt_label,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn region_id(&self) -> Option<&[i64]> {
        self.region_id.as_deref()
    }

    pub fn gt_label(&self) -> Option<&[i64]> {
        self.gt_label.as_deref()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

/// Invalid-depth sentinel. NaN is treated the same way.
pub const DEPTH_INVALID: f32 = 0.0;

pub fn depth_is_valid(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// Per-pixel embeddings from one posed view.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    features: Tensor,
    camera: Camera,
    depth: Option<Tensor>,
}

impl FeatureImage {
    /// `features` must be `[H, W, C]` and `depth` (if any) `[H, W]`, matching
    /// the camera's size.
    pub fn new(features: Tensor, camera: Camera, depth: Option<Tensor>) -> Result<Self> {
        let (h, w) = (camera.height() as usize, camera.width() as usize);
        match *features.dims() {
            [fh, fw, c] if fh == h && fw == w && c >= 1 => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "feature image dims {:?} do not match camera {h}x{w} with C >= 1",
                    features.dims()
                )))
            }
        }
        if let Some(d) = &depth {
            if d.dims() != [h, w] {
                return Err(Error::ShapeMismatch(format!(
                    "depth dims {:?} do not match camera {h}x{w}",
                    d.dims()
                )));
            }
            if let Some(bad) = d.data().iter().find(|v| v.is_infinite() || **v < 0.0) {
                return Err(Error::InvalidDepth {
                    image: 0,
                    detail: format!("depth value {bad} is neither valid nor the invalid sentinel"),
                });
            }
        }
        Ok(Self {
            features,
            camera,
            depth,
        })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn depth(&self) -> Option<&Tensor> {
        self.depth.as_ref()
    }

    pub fn width(&self) -> usize {
        self.camera.width() as usize
    }

    pub fn height(&self) -> usize {
        self.camera.height() as usize
    }

    pub fn dim(&self) -> usize {
        self.features.dims()[2]
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let c = self.dim();
        let at = (v * self.width() + u) * c;
        &self.features.data()[at..at + c]
    }

    pub fn depth_at(&self, u: usize, v: usize) -> Option<f32> {
        self.depth.as_ref().map(|d| d.data()[v * self.width() + u])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub images: Vec<FeatureImage>,
}

impl Scene {
    pub fn new(cloud: PointCloud, images: Vec<FeatureImage>) -> Result<Self> {
        if let Some(first) = images.first() {
            let c = first.dim();
            for (i, img) in images.iter().enumerate() {
                if img.dim() != c {
                    return Err(Error::InconsistentFeatureDim {
                        image: i,
                        expected: c,
                        found: img.dim(),
                    });
                }
            }
        }
        Ok(Self { cloud, images })
    }

    /// Feature dimension, if the scene has any images.
    pub fn dim(&self) -> Option<usize> {
        self.images.first().map(FeatureImage::dim)
    }
}

/// Ordered text prompts with one embedding row each.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    prompts: Vec<String>,
    embeddings: FeatureMatrix,
}

impl PromptSet {
    pub fn new(prompts: Vec<String>, embeddings: FeatureMatrix) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidPromptSet("no prompts".into()));
        }
        if prompts.len() != embeddings.rows() {
            return Err(Error::InvalidPromptSet(format!(
                "{} prompts but {} embedding rows",
                prompts.len(),
                embeddings.rows()
            )));
        }
        if let Some(p) = prompts.iter().find(|p| p.is_empty()) {
            return Err(Error::InvalidPromptSet(format!(
                "empty prompt string {p:?}"
            )));
        }
        if let Some(i) = embeddings.iter_rows().position(is_zero_row) {
            return Err(Error::InvalidPromptSet(format!(
                "embedding for {:?} is the zero vector",
                prompts[i]
            )));
        }
        if let Some(i) = embeddings.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPromptSet(format!(
                "embedding for {:?} is not finite",
                prompts[i / embeddings.dim()]
            )));
        }
        Ok(Self {
            prompts,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn embeddings(&self) -> &FeatureMatrix {
        &self.embeddings
    }

    pub fn embedding(&self, n: usize) -> &[f32] {
        self.embeddings.row(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetMode {
    WithDepth,
    NoDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub feature_path: PathBuf,
    pub camera_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<PathBuf>,
}

/// JSON scene description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub cloud_path: PathBuf,
    pub images: Vec<ImageEntry>,
    pub dataset_mode: DatasetMode,
    pub occlusion_sigma_ratio: f64,
}

impl SceneManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SceneManifest = serde_json::from_str(&text)
            .map_err(|e| Error::malformed("scene manifest", e.to_string()))?;
        if let Some(dir) = path.parent() {
            m.resolve_relative_to(dir);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.cloud_path);
        for img in &mut self.images {
            fix(&mut img.feature_path);
            fix(&mut img.camera_path);
            if let Some(d) = &mut img.depth_path {
                fix(d);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.occlusion_sigma_ratio >= 0.0 && self.occlusion_sigma_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "occlusion_sigma_ratio must be finite and non-negative, got {}",
                self.occlusion_sigma_ratio
            )));
        }
        if self.dataset_mode == DatasetMode::WithDepth {
            if let Some(i) = self.images.iter().position(|e| e.depth_path.is_none()) {
                return Err(Error::MissingDepth { image: i });
            }
        }
        Ok(())
    }
}

/// Loads and validates every file a manifest references.
pub fn load_scene(manifest: &SceneManifest) -> Result<Scene> {
    manifest.validate()?;
    let cloud = ply::read_ply(&manifest.cloud_path)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut dim = None;
    for (i, entry) in manifest.images.iter().enumerate() {
        let camera = load_camera(&entry.camera_path)?;
        let features = load_feat(&entry.feature_path)?;
        let depth = match (&entry.depth_path, manifest.dataset_mode) {
            (Some(p), DatasetMode::WithDepth) => Some(load_feat(p)?),
            (None, DatasetMode::WithDepth) => return Err(Error::MissingDepth { image: i }),
            (_, DatasetMode::NoDepth) => None,
        };
        let image = FeatureImage::new(features, camera, depth).map_err(|e| match e {
            Error::InvalidDepth { detail, .. } => Error::InvalidDepth { image: i, detail },
            other => other,
        })?;
        match dim {
            None => dim = Some(image.dim()),
            Some(c) if c != image.dim() => {
                return Err(Error::InconsistentFeatureDim {
                    image: i,
                    expected: c,
                    found: image.dim(),
                })
            }
            _ => {}
        }
        images.push(image);
    }
    Scene::new(cloud, images)
}
