//! Pinhole cameras.
//!
//! Camera frame convention: +x right, +y down, +z forward (the optical axis).
//! Extrinsics map world coordinates to the camera frame.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max deviation of `R * R^T` from identity accepted for the rotation block.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    extrinsics: Matrix4<f64>,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        extrinsics: Matrix4<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            intrinsics,
            extrinsics,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`. `up` only needs to be roughly
    /// perpendicular to the viewing direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        // image y points down
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut ext = Matrix4::identity();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Camera::new(k, ext, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &Matrix4<f64> {
        &self.extrinsics
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsics.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.extrinsics.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Same camera after the world is moved by `world_motion` (a rigid
    /// transform applied to every world point). Only the top 3x4 block of the
    /// motion is read.
    pub fn transformed(&self, world_motion: &Matrix4<f64>) -> Result<Self> {
        let rm = world_motion.fixed_view::<3, 3>(0, 0).into_owned();
        let tm = world_motion.fixed_view::<3, 1>(0, 3).into_owned();
        // E' = E * M^-1 with M^-1 = [R^T | -R^T t]
        let r = self.rotation() * rm.transpose();
        let t = self.translation() - r * tm;
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        e.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Camera::new(self.intrinsics, e, self.width, self.height)
    }

    fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let e = &self.extrinsics;
        if k.iter().chain(e.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite matrix entry".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(
                "width and height must be positive".into(),
            ));
        }
        if !(self.fx() > 0.0 && self.fy() > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx(),
                self.fy()
            )));
        }
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera(
                "intrinsics must have zero skew".into(),
            ));
        }
        if k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera("intrinsics[2][2] must be 1".into()));
        }
        if e[(3, 0)] != 0.0 || e[(3, 1)] != 0.0 || e[(3, 2)] != 0.0 || e[(3, 3)] != 1.0 {
            return Err(Error::InvalidCamera(
                "extrinsics bottom row must be (0,0,0,1)".into(),
            ));
        }
        let r = self.rotation();
        let dev = (r * r.transpose() - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation block not orthonormal (max |R*R^T - I| = {dev:e})"
            )));
        }
        if r.determinant() <= 0.0 {
            return Err(Error::InvalidCamera(
                "rotation block is a reflection".into(),
            ));
        }
        Ok(())
    }
}

/// On-disk camera: row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraFile {
    pub width: u32,
    pub height: u32,
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 4],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let mut intrinsics = [[0.0; 3]; 3];
        let mut extrinsics = [[0.0; 4]; 4];
        for (r, row) in intrinsics.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                *v = c.intrinsics[(r, col)];
            }
        }
        for (r, row) in extrinsics.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                *v = c.extrinsics[(r, col)];
            }
        }
        CameraFile {
            width: c.width,
            height: c.height,
            intrinsics,
            extrinsics,
        }
    }
}

impl TryFrom<CameraFile> for Camera {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        let k = Matrix3::from_fn(|r, c| f.intrinsics[r][c]);
        let e = Matrix4::from_fn(|r, c| f.extrinsics[r][c]);
        Camera::new(k, e, f.width, f.height)
    }
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile =
        serde_json::from_str(&text).map_err(|e| Error::malformed("camera json", e.to_string()))?;
    Camera::try_from(file)
}

pub fn save_camera(path: impl AsRef<Path>, camera: &Camera) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&CameraFile::from(camera)).expect("camera serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(f: f64) -> Matrix3<f64> {
        Matrix3::new(f, 0.0, 32.0, 0.0, f, 32.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn rejects_bad_focal_and_rotation() {
        assert!(matches!(
            Camera::new(k(0.0), Matrix4::identity(), 64, 64),
            Err(Error::InvalidCamera(_))
        ));
        let mut e = Matrix4::identity();
        e[(0, 0)] = 1.1;
        assert!(matches!(
            Camera::new(k(50.0), e, 64, 64),
            Err(Error::InvalidCamera(_))
        ));
        let mut flip = Matrix4::identity();
        flip[(0, 0)] = -1.0;
        assert!(Camera::new(k(50.0), flip, 64, 64).is_err());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let cam = Camera::look_at(
            Vector3::new(3.0, 1.0, 2.0),
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::z(),
            60.0,
            64,
            48,
        )
        .unwrap();
        let target = cam.rotation() * Vector3::new(0.0, 0.0, 0.5) + cam.translation();
        assert!(target.x.abs() < 1e-12 && target.y.abs() < 1e-12 && target.z > 0.0);
    }

    #[test]
    fn json_round_trip() {
        let cam = Camera::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::zeros(),
            Vector3::z(),
            40.0,
            32,
            24,
        )
        .unwrap();
        let text = serde_json::to_string(&CameraFile::from(&cam)).unwrap();
        let back = Camera::try_from(serde_json::from_str::<CameraFile>(&text).unwrap()).unwrap();
        assert_eq!(back, cam);
    }
}
