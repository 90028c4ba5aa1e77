use fieldfuse::fusion::{majority_vote_labels, medoid};
use fieldfuse::projection::{scene_pairs, OcclusionConfig};
use fieldfuse::synth::{random_scene, RandomSceneConfig};
use fieldfuse::{fuse, FeatureMatrix, FusedFeatureCloud, Pooling, Scene};
use proptest::prelude::*;

fn cfg(images: usize) -> RandomSceneConfig {
    RandomSceneConfig {
        points: 200,
        images,
        max_size: 32,
        dim: 6,
        invalid_depth: 0.05,
    }
}

/// Members of each point in pair order.
fn members(scene: &Scene, occ: &OcclusionConfig) -> Vec<Vec<Vec<f32>>> {
    let mut out = vec![Vec::new(); scene.cloud.len()];
    for (p, h) in scene_pairs(scene, occ).unwrap() {
        out[p].push(
            scene.images[h.image_index]
                .pixel(h.u as usize, h.v as usize)
                .to_vec(),
        );
    }
    out
}

fn reversed(scene: &Scene) -> Scene {
    let mut images = scene.images.clone();
    images.reverse();
    Scene::new(scene.cloud.clone(), images).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn average_matches_f64_reference(seed in 0u64..1_000_000) {
        let scene = random_scene(&cfg(4), seed).unwrap();
        let occ = OcclusionConfig::new(0.2).unwrap();
        let fused = fuse(&scene, &occ, Pooling::Average).unwrap();
        for (i, m) in members(&scene, &occ).iter().enumerate() {
            prop_assert_eq!(fused.view_count()[i] as usize, m.len());
            let row = fused.features().row(i);
            if m.is_empty() {
                prop_assert!(row.iter().all(|&v| v == 0.0));
                continue;
            }
            for c in 0..row.len() {
                let mean = m.iter().map(|r| r[c] as f64).sum::<f64>() / m.len() as f64;
                prop_assert!((row[c] as f64 - mean).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn image_order_does_not_change_average_or_median(seed in 0u64..1_000_000) {
        let scene = random_scene(&cfg(5), seed).unwrap();
        let flipped = reversed(&scene);
        let occ = OcclusionConfig::new(0.1).unwrap();
        for pool in [Pooling::Average, Pooling::Median] {
            let a = fuse(&scene, &occ, pool).unwrap();
            let b = fuse(&flipped, &occ, pool).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn median_is_exhaustive_medoid(seed in 0u64..1_000_000) {
        let scene = random_scene(&cfg(5), seed).unwrap();
        let occ = OcclusionConfig::disabled();
        let fused = fuse(&scene, &occ, Pooling::Median).unwrap();
        for (i, m) in members(&scene, &occ).iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let cost = |a: &Vec<f32>| -> f64 {
                m.iter()
                    .map(|b| {
                        a.iter()
                            .zip(b)
                            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum()
            };
            let best = m.iter().map(cost).fold(f64::INFINITY, f64::min);
            let mut tied: Vec<&Vec<f32>> = m.iter().filter(|r| cost(r) <= best * (1.0 + 1e-12)).collect();
            tied.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(fused.features().row(i), &tied[0][..]);
        }
    }

    #[test]
    fn random_pool_is_seeded_and_picks_a_member(seed in 0u64..1_000_000, pool_seed in any::<u64>()) {
        let scene = random_scene(&cfg(4), seed).unwrap();
        let occ = OcclusionConfig::disabled();
        let a = fuse(&scene, &occ, Pooling::Random { seed: pool_seed }).unwrap();
        let b = fuse(&scene, &occ, Pooling::Random { seed: pool_seed }).unwrap();
        prop_assert_eq!(&a, &b);
        for (i, m) in members(&scene, &occ).iter().enumerate() {
            if !m.is_empty() {
                prop_assert!(m.iter().any(|r| r[..] == *a.features().row(i)));
            }
        }
    }
}

#[test]
fn single_image_without_occlusion_copies_the_nearest_pixel() {
    let scene = random_scene(&cfg(1), 11).unwrap();
    let img = &scene.images[0];
    let cam = img.camera();
    let fused = fuse(&scene, &OcclusionConfig::disabled(), Pooling::Average).unwrap();
    let mut seen = 0;
    for (i, p) in scene.cloud.positions().iter().enumerate() {
        let x = cam.extrinsics() * nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
        let u = cam.fx() * x.x / x.z + cam.cx();
        let v = cam.fy() * x.y / x.z + cam.cy();
        let inside = x.z > 0.0
            && u > -0.5
            && v > -0.5
            && u < cam.width() as f64 - 0.5
            && v < cam.height() as f64 - 0.5;
        if inside {
            seen += 1;
            let px = img.pixel((u + 0.5).floor() as usize, (v + 0.5).floor() as usize);
            assert_eq!(fused.features().row(i), px);
            assert_eq!(fused.view_count()[i], 1);
        } else {
            assert_eq!(fused.view_count()[i], 0);
        }
    }
    assert!(seen > 0);
}

#[test]
fn different_random_seeds_pick_differently() {
    let scene = random_scene(&cfg(6), 3).unwrap();
    let occ = OcclusionConfig::disabled();
    let a = fuse(&scene, &occ, Pooling::Random { seed: 1 }).unwrap();
    let b = fuse(&scene, &occ, Pooling::Random { seed: 2 }).unwrap();
    assert_ne!(a.features(), b.features());
}

#[test]
fn medoid_examples() {
    let rows: Vec<&[f32]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[10.0, 0.0]];
    assert_eq!(medoid(&rows), 1);
    let tie: Vec<&[f32]> = vec![&[0.0], &[1.0]];
    assert_eq!(medoid(&tie), 0);
}

#[test]
fn majority_vote() {
    let views = vec![vec![(0, 3), (1, 2)], vec![(0, 3), (1, 5)], vec![(0, 1)]];
    assert_eq!(majority_vote_labels(3, &views), vec![3, 2, -1]);
}

#[test]
fn fused_cloud_round_trips_through_files() {
    let scene = random_scene(&cfg(3), 5).unwrap();
    let fused = fuse(
        &scene,
        &OcclusionConfig::new(0.2).unwrap(),
        Pooling::Average,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (f, v) = (dir.path().join("f.feat"), dir.path().join("v.feat"));
    fused.save(&f, &v).unwrap();
    assert_eq!(FusedFeatureCloud::load(&f, &v).unwrap(), fused);
}

#[test]
fn unseen_point_with_nonzero_feature_is_rejected() {
    let f = FeatureMatrix::from_rows(&[vec![1.0f32, 0.0]]).unwrap();
    assert!(FusedFeatureCloud::new(f, vec![0]).is_err());
}
