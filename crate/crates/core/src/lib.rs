//! Open-vocabulary 3D scene understanding over point clouds.
//!
//! Per-pixel features from posed images are fused onto 3D points, distilled
//! into a sparse multi-resolution voxel field, ensembled per point against a
//! prompt set, and queried with text embeddings for segmentation, heatmaps,
//! and region retrieval.

pub mod camera;
pub mod distill;
pub mod embed;
pub mod error;
pub mod features;
pub mod field;
pub mod fusion;
pub mod metrics;
pub mod ply;
pub mod projection;
pub mod query;
pub mod scene;
pub mod synth;
pub mod tensor;

pub use camera::Camera;
pub use distill::{train, TrainConfig, TrainReport};
pub use embed::{Embedder, EmbedderSpec};
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use field::DistilledField;
pub use fusion::{fuse, FusedFeatureCloud, Pooling};
pub use metrics::{confusion, miou_macc, Confusion, Metrics};
pub use projection::OcclusionConfig;
pub use query::{ensemble, heatmap, retrieve, segment, FeatureSource, Segmentation};
pub use scene::{FeatureImage, PointCloud, PromptSet, Scene, SceneManifest};
pub use tensor::Tensor;
