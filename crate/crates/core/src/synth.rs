//! Synthetic posed scenes with known labels.
//!
//! A scene is a handful of analytic surfaces (rectangles, boxes, spheres),
//! each tagged with a class. Points are sampled on the visible surfaces;
//! every view is ray-cast to produce a depth map and a feature image whose
//! pixels carry the hit object's class embedding, rotated by a bounded random
//! angle. Used for end-to-end tests and demos.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{save_camera, Camera};
use crate::embed::toy_embedding;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::ply::{write_ply, PlyFormat};
use crate::projection::{pixel_index, project_point};
use crate::scene::{
    DatasetMode, FeatureImage, ImageEntry, PointCloud, PromptSet, Scene, SceneManifest,
};
use crate::tensor::{save_feat, Tensor};

type V3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `origin + s * edge_u + t * edge_v` for `s, t` in `[0, 1]`;
    /// the edges must be orthogonal.
    Rect {
        origin: V3,
        edge_u: V3,
        edge_v: V3,
    },
    Cuboid {
        min: V3,
        max: V3,
    },
    Sphere {
        center: V3,
        radius: f64,
    },
}

const RAY_EPS: f64 = 1e-9;
/// Relative depth agreement for a sample to count as observed.
const VISIBILITY_TOL: f64 = 0.01;

impl Shape {
    /// Nearest ray parameter `t > 0` of `origin + t * dir`.
    fn intersect(&self, o: &V3, d: &V3) -> Option<f64> {
        match self {
            Shape::Rect {
                origin,
                edge_u,
                edge_v,
            } => {
                let n = edge_u.cross(edge_v);
                let denom = d.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (origin - o).dot(&n) / denom;
                if t <= RAY_EPS {
                    return None;
                }
                let rel = o + d * t - origin;
                let s = rel.dot(edge_u) / edge_u.norm_squared();
                let r = rel.dot(edge_v) / edge_v.norm_squared();
                ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)).then_some(t)
            }
            Shape::Cuboid { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - o[k]) / d[k];
                    let b = (max[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > RAY_EPS {
                    Some(t0)
                } else if t1 > RAY_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = (-b - sq) / a;
                if t > RAY_EPS {
                    return Some(t);
                }
                let t = (-b + sq) / a;
                (t > RAY_EPS).then_some(t)
            }
        }
    }

    /// Strictly inside a solid, by at least `margin`.
    fn contains(&self, p: &V3, margin: f64) -> bool {
        match self {
            Shape::Rect { .. } => false,
            Shape::Cuboid { min, max } => {
                (0..3).all(|k| p[k] > min[k] + margin && p[k] < max[k] - margin)
            }
            Shape::Sphere { center, radius } => (p - center).norm() < radius - margin,
        }
    }

    /// Sampling patches `(area, sampler)`; box faces resting on `floor_z` are
    /// skipped.
    fn patches(&self, floor_z: f64) -> Vec<Patch> {
        match self {
            Shape::Rect {
                origin,
                edge_u,
                edge_v,
            } => vec![Patch::Rect(*origin, *edge_u, *edge_v)],
            Shape::Cuboid { min, max } => {
                let e = max - min;
                let (ex, ey, ez) = (V3::x() * e.x, V3::y() * e.y, V3::z() * e.z);
                let mut faces = vec![
                    Patch::Rect(*min, ey, ez),
                    Patch::Rect(min + ex, ey, ez),
                    Patch::Rect(*min, ex, ez),
                    Patch::Rect(min + ey, ex, ez),
                    Patch::Rect(min + ez, ex, ey),
                ];
                if (min.z - floor_z).abs() > 1e-9 {
                    faces.push(Patch::Rect(*min, ex, ey));
                }
                faces
            }
            Shape::Sphere { center, radius } => vec![Patch::Sphere(*center, *radius)],
        }
    }
}

enum Patch {
    Rect(V3, V3, V3),
    Sphere(V3, f64),
}

impl Patch {
    fn area(&self) -> f64 {
        match self {
            Patch::Rect(_, u, v) => u.cross(v).norm(),
            Patch::Sphere(_, r) => 4.0 * std::f64::consts::PI * r * r,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> V3 {
        match self {
            Patch::Rect(o, u, v) => o + u * rng.random::<f64>() + v * rng.random::<f64>(),
            Patch::Sphere(c, r) => {
                let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let s = (1.0 - z * z).sqrt();
                c + V3::new(s * phi.cos(), s * phi.sin(), z) * *r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub shape: Shape,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub points: usize,
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Max angular deviation of a pixel feature from its class embedding.
    pub noise_deg: f64,
    pub dim: usize,
    pub embed_seed: u64,
    pub seed: u64,
    /// Fraction of depth pixels replaced by the invalid sentinel.
    pub depth_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            points: 6000,
            views: 60,
            width: 80,
            height: 60,
            focal: 60.0,
            noise_deg: 10.0,
            dim: 32,
            embed_seed: 0,
            seed: 0,
            depth_dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub objects: Vec<Object>,
    pub class_names: Vec<String>,
    pub floor_z: f64,
}

impl SyntheticScene {
    /// A 4 m x 4 m room with two walls, two boxes, and two balls (five
    /// classes; the balls and boxes occlude each other and the floor).
    pub fn room() -> Self {
        let v = V3::new;
        let objects = vec![
            Object {
                shape: Shape::Rect {
                    origin: v(0.0, 0.0, 0.0),
                    edge_u: v(4.0, 0.0, 0.0),
                    edge_v: v(0.0, 4.0, 0.0),
                },
                class: 0,
            },
            Object {
                shape: Shape::Rect {
                    origin: v(0.0, 0.0, 0.0),
                    edge_u: v(0.0, 4.0, 0.0),
                    edge_v: v(0.0, 0.0, 2.5),
                },
                class: 1,
            },
            Object {
                shape: Shape::Rect {
                    origin: v(0.0, 0.0, 0.0),
                    edge_u: v(4.0, 0.0, 0.0),
                    edge_v: v(0.0, 0.0, 2.5),
                },
                class: 1,
            },
            Object {
                shape: Shape::Cuboid {
                    min: v(0.9, 0.9, 0.0),
                    max: v(1.6, 1.5, 1.1),
                },
                class: 2,
            },
            Object {
                shape: Shape::Cuboid {
                    min: v(2.1, 1.9, 0.0),
                    max: v(3.2, 2.7, 0.7),
                },
                class: 3,
            },
            Object {
                shape: Shape::Sphere {
                    center: v(1.3, 2.7, 0.4),
                    radius: 0.4,
                },
                class: 4,
            },
            Object {
                shape: Shape::Sphere {
                    center: v(2.6, 2.3, 0.9),
                    radius: 0.2,
                },
                class: 4,
            },
        ];
        Self {
            objects,
            class_names: ["floor", "wall", "cabinet", "table", "ball"]
                .map(String::from)
                .to_vec(),
            floor_z: 0.0,
        }
    }

    pub fn class_embeddings(&self, dim: usize, seed: u64) -> Result<PromptSet> {
        let rows: Vec<Vec<f32>> = self
            .class_names
            .iter()
            .map(|c| toy_embedding(c, dim, seed))
            .collect();
        PromptSet::new(self.class_names.clone(), FeatureMatrix::from_rows(&rows)?)
    }

    /// Nearest hit `(object, t)` along a ray.
    pub fn cast(&self, o: &V3, d: &V3) -> Option<(usize, f64)> {
        self.objects
            .iter()
            .enumerate()
            .filter_map(|(i, ob)| ob.shape.intersect(o, d).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Surface samples with class labels and object index as region id.
    pub fn sample_cloud(&self, n: usize, seed: u64) -> Result<PointCloud> {
        self.sample_filtered(n, seed, |_| true)
    }

    /// Like [`Self::sample_cloud`] but keeps only points that `keep` accepts.
    fn sample_filtered(
        &self,
        n: usize,
        seed: u64,
        keep: impl Fn(&V3) -> bool,
    ) -> Result<PointCloud> {
        let mut patches = Vec::new();
        for (i, ob) in self.objects.iter().enumerate() {
            for p in ob.shape.patches(self.floor_z) {
                patches.push((i, p));
            }
        }
        let total: f64 = patches.iter().map(|(_, p)| p.area()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::with_capacity(n);
        let mut regions = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while positions.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::InvalidConfig(
                    "could not sample enough visible surface points".into(),
                ));
            }
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = patches.len() - 1;
            for (k, (_, p)) in patches.iter().enumerate() {
                if pick < p.area() {
                    chosen = k;
                    break;
                }
                pick -= p.area();
            }
            let (obj, patch) = &patches[chosen];
            let p = patch.sample(&mut rng);
            if p.z < self.floor_z - 1e-9 {
                continue;
            }
            let buried = self
                .objects
                .iter()
                .enumerate()
                .any(|(j, o)| j != *obj && o.shape.contains(&p, 1e-6));
            let under_box = self.objects.iter().any(|o| match &o.shape {
                Shape::Cuboid { min, max } => {
                    (p.z - self.floor_z).abs() < 1e-9
                        && p.x > min.x
                        && p.x < max.x
                        && p.y > min.y
                        && p.y < max.y
                }
                _ => false,
            });
            if buried || under_box || !keep(&p) {
                continue;
            }
            positions.push([p.x, p.y, p.z]);
            regions.push(*obj as i64);
            labels.push(self.objects[*obj].class as i64);
        }
        PointCloud::with_attributes(positions, Some(regions), Some(labels))
    }

    /// Cameras at random free positions inside the room, each aimed at a
    /// random point at least 1 m away.
    pub fn cameras(&self, cfg: &SynthConfig) -> Result<Vec<Camera>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_CA3E);
        let mut cams = Vec::with_capacity(cfg.views);
        while cams.len() < cfg.views {
            let eye = V3::new(
                0.25 + 3.7 * rng.random::<f64>(),
                0.25 + 3.7 * rng.random::<f64>(),
                0.4 + 1.9 * rng.random::<f64>(),
            );
            let target = V3::new(
                4.0 * rng.random::<f64>(),
                4.0 * rng.random::<f64>(),
                1.5 * rng.random::<f64>(),
            );
            let blocked = self.objects.iter().any(|o| o.shape.contains(&eye, -0.15));
            if blocked || (target - eye).norm() < 1.0 {
                continue;
            }
            cams.push(Camera::look_at(
                eye,
                target,
                V3::z(),
                cfg.focal,
                cfg.width,
                cfg.height,
            )?);
        }
        Ok(cams)
    }

    /// Ray-casts one view: `[H, W, C]` features and `[H, W]` depth.
    pub fn render(
        &self,
        camera: &Camera,
        prompts: &PromptSet,
        noise_deg: f64,
        depth_dropout: f64,
        seed: u64,
    ) -> Result<FeatureImage> {
        let (w, h) = (camera.width() as usize, camera.height() as usize);
        let dim = prompts.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = vec![0.0f32; h * w * dim];
        let mut depth = vec![0.0f32; h * w];
        let max_angle = noise_deg.to_radians();
        for v in 0..h {
            for u in 0..w {
                let (eye, dir) = pixel_ray(camera, u, v);
                let Some((obj, t)) = self.cast(&eye, &dir) else {
                    continue;
                };
                let px = v * w + u;
                if rng.random::<f64>() >= depth_dropout {
                    depth[px] = t as f32;
                }
                let class = self.objects[obj].class;
                let out = &mut feats[px * dim..(px + 1) * dim];
                perturb(
                    prompts.embedding(class),
                    rng.random::<f64>() * max_angle,
                    &mut rng,
                    out,
                );
            }
        }
        FeatureImage::new(
            Tensor::new(vec![h, w, dim], feats)?,
            camera.clone(),
            Some(Tensor::new(vec![h, w], depth)?),
        )
    }

    /// Per-pixel z-depth (0 where the ray escapes), row-major.
    pub fn depth_map(&self, camera: &Camera) -> Vec<f64> {
        let (w, h) = (camera.width() as usize, camera.height() as usize);
        let mut out = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let (eye, dir) = pixel_ray(camera, u, v);
                if let Some((_, t)) = self.cast(&eye, &dir) {
                    out[v * w + u] = t;
                }
            }
        }
        out
    }

    /// Builds the scene. Like a scanned reconstruction, the cloud only holds
    /// surface points that at least one camera observes.
    pub fn build(&self, cfg: &SynthConfig) -> Result<SynthOutput> {
        let prompts = self.class_embeddings(cfg.dim, cfg.embed_seed)?;
        let cameras = self.cameras(cfg)?;
        let depths: Vec<Vec<f64>> = cameras.iter().map(|c| self.depth_map(c)).collect();
        let seen = |p: &V3| {
            cameras.iter().zip(&depths).any(|(cam, depth)| {
                let Some(pr) = project_point([p.x, p.y, p.z], cam) else {
                    return false;
                };
                match (
                    pixel_index(pr.u, cam.width()),
                    pixel_index(pr.v, cam.height()),
                ) {
                    (Some(u), Some(v)) => {
                        let d = depth[v as usize * cam.width() as usize + u as usize];
                        d > 0.0 && (pr.z - d).abs() <= VISIBILITY_TOL * d
                    }
                    _ => false,
                }
            })
        };
        let cloud = self.sample_filtered(cfg.points, cfg.seed, seen)?;
        let images = cameras
            .iter()
            .enumerate()
            .map(|(k, cam)| {
                self.render(
                    cam,
                    &prompts,
                    cfg.noise_deg,
                    cfg.depth_dropout,
                    cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SynthOutput {
            scene: Scene::new(cloud, images)?,
            prompts,
        })
    }
}

/// World-space ray through a pixel centre. The direction has unit camera
/// z, so the hit parameter is the z-depth.
fn pixel_ray(camera: &Camera, u: usize, v: usize) -> (V3, V3) {
    let rot_t = camera.rotation().transpose();
    let eye = -(rot_t * camera.translation());
    let dc = V3::new(
        (u as f64 - camera.cx()) / camera.fx(),
        (v as f64 - camera.cy()) / camera.fy(),
        1.0,
    );
    (eye, rot_t * dc)
}

/// Rotates unit-ish `base` by `angle` toward a random orthogonal direction.
fn perturb(base: &[f32], angle: f64, rng: &mut ChaCha8Rng, out: &mut [f32]) {
    let b: Vec<f64> = base.iter().map(|&v| v as f64).collect();
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e: Vec<f64> = b.iter().map(|v| v / bn).collect();
    loop {
        let r: Vec<f64> = (0..e.len())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let proj: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
        let o: Vec<f64> = r.iter().zip(&e).map(|(a, b)| a - proj * b).collect();
        let on = o.iter().map(|v| v * v).sum::<f64>().sqrt();
        if on > 1e-6 {
            for ((dst, ei), oi) in out.iter_mut().zip(&e).zip(&o) {
                *dst = (angle.cos() * ei + angle.sin() * oi / on) as f32;
            }
            return;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: Scene,
    pub prompts: PromptSet,
}

impl SynthOutput {
    /// Writes the cloud, per-view features, depths, cameras, and a manifest
    /// into `dir`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>, occlusion_sigma_ratio: f64) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ply(
            dir.join("cloud.ply"),
            &self.scene.cloud,
            PlyFormat::BinaryLittleEndian,
        )?;
        let mut images = Vec::new();
        for (k, img) in self.scene.images.iter().enumerate() {
            let feature_path = PathBuf::from(format!("view_{k:03}.feat"));
            let camera_path = PathBuf::from(format!("view_{k:03}.json"));
            let depth_path = PathBuf::from(format!("view_{k:03}.depth.feat"));
            save_feat(dir.join(&feature_path), img.features())?;
            save_camera(dir.join(&camera_path), img.camera())?;
            if let Some(d) = img.depth() {
                save_feat(dir.join(&depth_path), d)?;
            }
            images.push(ImageEntry {
                feature_path,
                camera_path,
                depth_path: img.depth().map(|_| depth_path),
            });
        }
        let manifest = SceneManifest {
            cloud_path: "cloud.ply".into(),
            images,
            dataset_mode: DatasetMode::WithDepth,
            occlusion_sigma_ratio,
        };
        let path = dir.join("scene.json");
        manifest.save(&path)?;
        let labels: String = self
            .prompts
            .prompts()
            .iter()
            .map(|p| format!("{p}\n"))
            .collect();
        let labels_path = dir.join("labels.txt");
        fs::write(&labels_path, labels).map_err(|e| Error::io(labels_path, e))?;
        Ok(path)
    }
}

/// Unstructured random scene for projection and fusion checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneConfig {
    pub points: usize,
    pub images: usize,
    pub max_size: u32,
    pub dim: usize,
    /// Fraction of depth pixels set to 0 or NaN.
    pub invalid_depth: f64,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            points: 500,
            images: 4,
            max_size: 64,
            dim: 8,
            invalid_depth: 0.1,
        }
    }
}

/// Random valid camera looking roughly at the origin, with unequal focal
/// lengths and an off-centre principal point.
pub fn random_camera(rng: &mut ChaCha8Rng, max_size: u32) -> Result<Camera> {
    let w = rng.random_range(8..=max_size.max(8));
    let h = rng.random_range(8..=max_size.max(8));
    loop {
        let dir = V3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        if dir.norm() < 0.1 {
            continue;
        }
        let eye = dir.normalize() * rng.random_range(2.0..4.0);
        let target = V3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ) * 0.5;
        let up = if dir.normalize().z.abs() > 0.9 {
            V3::x()
        } else {
            V3::z()
        };
        let base = Camera::look_at(eye, target, up, 1.0, w, h)?;
        let f = w as f64 * rng.random_range(0.6..1.4);
        let k = nalgebra::Matrix3::new(
            f,
            0.0,
            w as f64 * rng.random_range(0.35..0.65),
            0.0,
            f * rng.random_range(0.8..1.25),
            h as f64 * rng.random_range(0.35..0.65),
            0.0,
            0.0,
            1.0,
        );
        return Camera::new(k, *base.extrinsics(), w, h);
    }
}

/// Points in `[-1, 1]^3`; each image gets random features and a depth map
/// from the cloud's own z-buffer, jittered by up to 5%, with empty pixels at
/// random depths and a fraction of invalid pixels.
pub fn random_scene(cfg: &RandomSceneConfig, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 3]> = (0..cfg.points)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let cloud = PointCloud::new(positions)?;
    let mut images = Vec::with_capacity(cfg.images);
    for _ in 0..cfg.images {
        let cam = random_camera(&mut rng, cfg.max_size)?;
        let (w, h) = (cam.width() as usize, cam.height() as usize);
        let mut zbuf = vec![f64::INFINITY; w * h];
        for p in cloud.positions() {
            if let Some(pr) = project_point(*p, &cam) {
                if let (Some(u), Some(v)) = (
                    pixel_index(pr.u, cam.width()),
                    pixel_index(pr.v, cam.height()),
                ) {
                    let k = v as usize * w + u as usize;
                    zbuf[k] = zbuf[k].min(pr.z);
                }
            }
        }
        let depth: Vec<f32> = zbuf
            .iter()
            .map(|&z| {
                if rng.random::<f64>() < cfg.invalid_depth {
                    if rng.random::<bool>() {
                        0.0
                    } else {
                        f32::NAN
                    }
                } else if z.is_finite() {
                    (z * (1.0 + rng.random_range(-0.05..0.05))) as f32
                } else {
                    rng.random_range(0.5..6.0) as f32
                }
            })
            .collect();
        let feats: Vec<f32> = (0..w * h * cfg.dim)
            .map(|_| rng.random_range(-1.0..1.0) as f32)
            .collect();
        images.push(FeatureImage::new(
            Tensor::new(vec![h, w, cfg.dim], feats)?,
            cam,
            Some(Tensor::new(vec![h, w], depth)?),
        )?);
    }
    Scene::new(cloud, images)
}
