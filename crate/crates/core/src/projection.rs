//! 2D-3D pairing: pinhole projection of cloud points into posed images with
//! an optional depth-consistency (occlusion) test.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::scene::{depth_is_valid, FeatureImage, PointCloud, Scene};

/// Continuous image-plane projection of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Depth along the optical axis, camera frame.
    pub z: f64,
}

/// Projects `p` through `camera`. `None` when the point is on or behind the
/// image plane (`z <= 0`). Out-of-bounds pixels are still returned.
pub fn project_point(p: [f64; 3], camera: &Camera) -> Option<Projection> {
    let e = camera.extrinsics();
    let xc = e[(0, 0)] * p[0] + e[(0, 1)] * p[1] + e[(0, 2)] * p[2] + e[(0, 3)];
    let yc = e[(1, 0)] * p[0] + e[(1, 1)] * p[1] + e[(1, 2)] * p[2] + e[(1, 3)];
    let zc = e[(2, 0)] * p[0] + e[(2, 1)] * p[1] + e[(2, 2)] * p[2] + e[(2, 3)];
    if zc.is_nan() || zc <= 0.0 {
        return None;
    }
    Some(Projection {
        u: camera.fx() * xc / zc + camera.cx(),
        v: camera.fy() * yc / zc + camera.cy(),
        z: zc,
    })
}

/// Round-half-up to the nearest pixel. Coordinates at or beyond `-0.5` and
/// `size - 0.5` fall outside.
pub fn pixel_index(coord: f64, size: u32) -> Option<u32> {
    if coord > -0.5 && coord < size as f64 - 0.5 {
        Some((coord + 0.5).floor() as u32)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub image_index: usize,
    pub u: u32,
    pub v: u32,
    pub cam_distance: f64,
}

/// Depth-consistency test. A pair is kept when `|z - D| <= sigma_ratio * D`
/// for the pixel's measured depth `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    sigma_ratio: f64,
    enabled: bool,
}

impl OcclusionConfig {
    pub fn new(sigma_ratio: f64) -> Result<Self> {
        if !(sigma_ratio >= 0.0 && sigma_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_ratio must be finite and >= 0, got {sigma_ratio}"
            )));
        }
        Ok(Self {
            sigma_ratio,
            enabled: true,
        })
    }

    /// Every in-bounds, front-facing projection pairs.
    pub fn disabled() -> Self {
        Self {
            sigma_ratio: 0.0,
            enabled: false,
        }
    }

    pub fn sigma_ratio(&self) -> f64 {
        self.sigma_ratio
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// Whether a point at camera depth `z` is consistent with measured depth `d`.
    pub fn accepts(&self, z: f64, d: f32) -> bool {
        if !self.enabled {
            return true;
        }
        if !depth_is_valid(d) {
            return false;
        }
        let d = d as f64;
        (z - d).abs() <= self.sigma_ratio * d
    }
}

/// Pairs of `(point_index, hit)` for one image, sorted by point index.
pub fn visible_pairs(
    cloud: &PointCloud,
    image: &FeatureImage,
    image_index: usize,
    occ: &OcclusionConfig,
) -> Result<Vec<(usize, PixelHit)>> {
    if occ.enabled() && image.depth().is_none() {
        return Err(Error::MissingDepth { image: image_index });
    }
    let cam = image.camera();
    let (w, h) = (cam.width(), cam.height());
    let mut out = Vec::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        let Some(proj) = project_point(*p, cam) else {
            continue;
        };
        let (Some(u), Some(v)) = (pixel_index(proj.u, w), pixel_index(proj.v, h)) else {
            continue;
        };
        if occ.enabled() {
            let d = image
                .depth_at(u as usize, v as usize)
                .expect("depth presence checked above");
            if !occ.accepts(proj.z, d) {
                continue;
            }
        }
        out.push((
            i,
            PixelHit {
                image_index,
                u,
                v,
                cam_distance: proj.z,
            },
        ));
    }
    Ok(out)
}

/// All pairs of a scene, sorted by `(point_index, image_index)`.
pub fn scene_pairs(scene: &Scene, occ: &OcclusionConfig) -> Result<Vec<(usize, PixelHit)>> {
    let per_image = |(i, img): (usize, &FeatureImage)| visible_pairs(&scene.cloud, img, i, occ);
    #[cfg(feature = "parallel")]
    let lists: Vec<_> = scene
        .images
        .par_iter()
        .enumerate()
        .map(per_image)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let lists: Vec<_> = scene
        .images
        .iter()
        .enumerate()
        .map(per_image)
        .collect::<Result<_>>()?;
    let mut all: Vec<_> = lists.into_iter().flatten().collect();
    // stable: images were concatenated in index order
    all.sort_by_key(|(p, _)| *p);
    Ok(all)
}
