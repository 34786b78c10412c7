use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix4, Rotation3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Random valid rig of arbitrary size for oracle comparisons.
fn random_rig(rng: &mut ChaCha8Rng, nv: usize, nj: usize, nb: usize, nk: usize) -> HandRig {
    let template: Vec<f64> = (0..nv * 3).map(|_| rng.random_range(-50.0..50.0)).collect();
    let blend: Vec<f64> = (0..nb * nv * 3).map(|_| rng.random_range(-3.0..3.0)).collect();
    let convex = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            out.extend(raw.iter().map(|v| v / s));
        }
        out
    };
    let jreg = convex(rng, nj, nv);
    let skin = convex(rng, nv, nj);
    let kreg = convex(rng, nk, nv);
    let mut parents = vec![None];
    for j in 1..nj {
        parents.push(Some(rng.random_range(0..j)));
    }
    HandRig::new(template, blend, jreg, parents, skin, kreg).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, nj: usize, nb: usize) -> HandParams {
    HandParams {
        theta: (0..nj * 3).map(|_| rng.random_range(-1.5..1.5)).collect(),
        beta: (0..nb).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// Explicit per-vertex linear blend skinning with 4×4 transforms.
fn lbs_oracle(rig: &HandRig, params: &HandParams) -> Vec<[f64; 3]> {
    let (nv, nj, nb) = (rig.num_vertices(), rig.num_joints(), rig.num_betas());
    let mut shaped = vec![[0.0; 3]; nv];
    for v in 0..nv {
        for c in 0..3 {
            let mut x = rig.template()[v * 3 + c];
            for k in 0..nb {
                x += params.beta[k] * rig.blendshapes()[(k * nv + v) * 3 + c];
            }
            shaped[v][c] = x;
        }
    }
    let mut joints = vec![Vector3::zeros(); nj];
    for j in 0..nj {
        for v in 0..nv {
            let w = rig.joint_regressor()[j * nv + v];
            joints[j] += w * Vector3::from(shaped[v]);
        }
    }
    let mut world: Vec<Matrix4<f64>> = Vec::new();
    for j in 0..nj {
        let r = Rotation3::from_scaled_axis(Vector3::new(
            params.theta[3 * j],
            params.theta[3 * j + 1],
            params.theta[3 * j + 2],
        ));
        let offset = match rig.parents()[j] {
            None => joints[j],
            Some(p) => joints[j] - joints[p],
        };
        let mut local = Matrix4::identity();
        local.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        local.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
        let g = match rig.parents()[j] {
            None => local,
            Some(p) => world[p] * local,
        };
        world.push(g);
    }
    (0..nv)
        .map(|v| {
            let rest = Vector4::new(shaped[v][0], shaped[v][1], shaped[v][2], 1.0);
            let mut acc = Vector4::zeros();
            for j in 0..nj {
                let mut unrest = Matrix4::identity();
                unrest.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-joints[j]));
                acc += rig.skinning_weights()[v * nj + j] * (world[j] * unrest * rest);
            }
            [acc[0], acc[1], acc[2]]
        })
        .collect()
}

#[test]
fn lbs_matches_brute_force_oracle_on_tiny_rigs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..100 {
        let nv = 3 + trial % 8;
        let nj = 1 + trial % 4;
        let rig = random_rig(&mut rng, nv, nj, 2, 2);
        let params = random_params(&mut rng, nj, 2);
        let out = rig.forward(&params).unwrap();
        let oracle = lbs_oracle(&rig, &params);
        for v in 0..nv {
            for c in 0..3 {
                let d = (out.vertices.at2(v, c) - oracle[v][c]).abs();
                assert!(d <= 1e-12, "trial {trial} vertex {v}: {d}");
            }
        }
    }
}

#[test]
fn five_vertex_three_joint_rig_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rig = random_rig(&mut rng, 5, 3, 10, 4);
    let params = random_params(&mut rng, 3, 10);
    let out = rig.forward(&params).unwrap();
    let oracle = lbs_oracle(&rig, &params);
    for v in 0..5 {
        for c in 0..3 {
            assert!((out.vertices.at2(v, c) - oracle[v][c]).abs() <= 1e-12);
        }
    }
}

#[test]
fn rest_pose_returns_template() {
    let rig = make_synthetic_rig(7, DEFAULT_VERTICES).unwrap();
    let out = rig.forward(&HandParams::zeros()).unwrap();
    assert_eq!(out.vertices.data(), rig.template());
}

#[test]
fn global_rotation_is_rigid_about_the_root() {
    let rig = make_synthetic_rig(3, DEFAULT_VERTICES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut params = random_params(&mut rng, NUM_JOINTS, NUM_BETAS);
        let base = rig.forward(&params).unwrap();
        let g = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let extra = Rotation3::from_scaled_axis(g);
        let old = Rotation3::from_scaled_axis(Vector3::new(params.theta[0], params.theta[1], params.theta[2]));
        let composed = (extra * old).scaled_axis();
        params.theta[..3].copy_from_slice(composed.as_slice());
        let rotated = rig.forward(&params).unwrap();

        // Root rest position depends only on β, which is unchanged.
        let nv = rig.num_vertices();
        let mut root = Vector3::zeros();
        let shaped = rig.forward(&HandParams { theta: vec![0.0; POSE_DIM], beta: params.beta.clone() }).unwrap();
        for v in 0..nv {
            root += rig.joint_regressor()[v] * Vector3::new(shaped.vertices.at2(v, 0), shaped.vertices.at2(v, 1), shaped.vertices.at2(v, 2));
        }
        for (src, dst) in [(&base.vertices, &rotated.vertices), (&base.joints3d, &rotated.joints3d)] {
            for i in 0..src.shape()[0] {
                let p = Vector3::new(src.at2(i, 0), src.at2(i, 1), src.at2(i, 2));
                let expect = extra * (p - root) + root;
                for c in 0..3 {
                    assert!((dst.at2(i, c) - expect[c]).abs() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn rest_pose_global_rotation_rotates_template() {
    let rig = make_synthetic_rig(5, 40).unwrap();
    let g = [0.4, -0.9, 0.2];
    let mut params = HandParams::zeros();
    params.theta[..3].copy_from_slice(&g);
    let out = rig.forward(&params).unwrap();
    let r = Rotation3::from_scaled_axis(Vector3::new(g[0], g[1], g[2]));
    let nv = rig.num_vertices();
    let mut root = Vector3::zeros();
    for v in 0..nv {
        root += rig.joint_regressor()[v] * Vector3::new(rig.template()[3 * v], rig.template()[3 * v + 1], rig.template()[3 * v + 2]);
    }
    for v in 0..nv {
        let p = Vector3::new(rig.template()[3 * v], rig.template()[3 * v + 1], rig.template()[3 * v + 2]);
        let e = r * (p - root) + root;
        for c in 0..3 {
            assert!((out.vertices.at2(v, c) - e[c]).abs() <= 1e-10);
        }
    }
}

#[test]
fn one_hot_beta_adds_its_blendshape() {
    let rig = make_synthetic_rig(7, DEFAULT_VERTICES).unwrap();
    let nv = rig.num_vertices();
    for k in 0..NUM_BETAS {
        let mut params = HandParams::zeros();
        params.beta[k] = 1.0;
        let out = rig.forward(&params).unwrap();
        for i in 0..nv * 3 {
            let expect = rig.template()[i] + rig.blendshapes()[k * nv * 3 + i];
            assert!((out.vertices.data()[i] - expect).abs() <= 1e-10);
        }
    }
}

#[test]
fn rest_pose_is_affine_in_beta() {
    let rig = make_synthetic_rig(11, 50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b1: Vec<f64> = (0..NUM_BETAS).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b2: Vec<f64> = (0..NUM_BETAS).map(|_| rng.random_range(-2.0..2.0)).collect();
    let a = 0.3;
    let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
    let f = |b: &[f64]| rig.forward(&HandParams { theta: vec![0.0; POSE_DIM], beta: b.to_vec() }).unwrap().vertices;
    let (v1, v2, vm) = (f(&b1), f(&b2), f(&mix));
    for i in 0..vm.numel() {
        let expect = a * v1.data()[i] + (1.0 - a) * v2.data()[i];
        assert!((vm.data()[i] - expect).abs() <= 1e-10);
    }
}

#[test]
fn keypoints_are_regressed_from_posed_vertices() {
    let rig = make_synthetic_rig(9, DEFAULT_VERTICES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = random_params(&mut rng, NUM_JOINTS, NUM_BETAS);
    let out = rig.forward(&params).unwrap();
    let nv = rig.num_vertices();
    assert_eq!(out.joints3d.shape(), &[NUM_KEYPOINTS, 3]);
    for k in 0..NUM_KEYPOINTS {
        for c in 0..3 {
            let e: f64 = (0..nv).map(|v| rig.keypoint_regressor()[k * nv + v] * out.vertices.at2(v, c)).sum();
            assert!((out.joints3d.at2(k, c) - e).abs() <= 1e-12);
        }
    }
}

#[test]
fn synthetic_rig_is_deterministic_and_seed_dependent() {
    let a = make_synthetic_rig(7, 97).unwrap();
    let b = make_synthetic_rig(7, 97).unwrap();
    assert_eq!(a, b);
    let c = make_synthetic_rig(8, 97).unwrap();
    assert_ne!(a.template(), c.template());
}

#[test]
fn synthetic_rig_satisfies_invariants() {
    for (seed, nv) in [(0, 97), (1, 16), (2, 10), (3, 300)] {
        let rig = make_synthetic_rig(seed, nv).unwrap();
        assert_eq!(rig.num_joints(), NUM_JOINTS);
        assert_eq!(rig.num_keypoints(), NUM_KEYPOINTS);
        assert_eq!(rig.num_betas(), NUM_BETAS);
        // Re-validating through the checked constructor proves every invariant.
        HandRig::new(
            rig.template().to_vec(),
            rig.blendshapes().to_vec(),
            rig.joint_regressor().to_vec(),
            rig.parents().to_vec(),
            rig.skinning_weights().to_vec(),
            rig.keypoint_regressor().to_vec(),
        )
        .unwrap();
    }
}

#[test]
fn synthetic_rig_rejects_too_few_vertices() {
    assert!(matches!(make_synthetic_rig(0, 3), Err(HandError::InvalidRig(_))));
}

#[test]
fn rig_constructor_rejects_broken_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rig = random_rig(&mut rng, 4, 2, 1, 1);
    let parts = || {
        (
            rig.template().to_vec(),
            rig.blendshapes().to_vec(),
            rig.joint_regressor().to_vec(),
            rig.parents().to_vec(),
            rig.skinning_weights().to_vec(),
            rig.keypoint_regressor().to_vec(),
        )
    };
    let (t, b, j, _, s, k) = parts();
    assert!(HandRig::new(t, b, j, vec![None, Some(1)], s, k).is_err());
    let (t, b, j, p, mut s, k) = parts();
    s[0] += 0.1;
    assert!(HandRig::new(t, b, j, p, s, k).is_err());
    let (t, b, mut j, p, s, k) = parts();
    j[0] = -j[0] - 0.5;
    assert!(HandRig::new(t, b, j, p, s, k).is_err());
}

#[test]
fn forward_rejects_bad_parameters() {
    let rig = make_synthetic_rig(1, 20).unwrap();
    let mut p = HandParams::zeros();
    p.theta[5] = f64::NAN;
    assert!(matches!(rig.forward(&p), Err(HandError::InvalidParams(_))));
    let short = HandParams { theta: vec![0.0; 45], beta: vec![0.0; 10] };
    assert!(rig.forward(&short).is_err());
}

#[test]
fn hand_forward_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rig = random_rig(&mut rng, 6, 4, 3, 3);
    let params = random_params(&mut rng, 4, 3);
    let probe: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut x = params.theta.clone();
    x.extend(&params.beta);
    let report = crate::ad::finite_diff_check(
        |g, x| {
            let theta = g.narrow(x, 0, 0, 12)?;
            let beta = g.narrow(x, 0, 12, 3)?;
            let out = rig.forward_graph(g, theta, beta).map_err(|e| match e {
                HandError::Ad(a) => a,
                other => panic!("{other}"),
            })?;
            let p = g.constant(crate::ad::Tensor::matrix(3, 3, probe.clone()));
            let m = g.mul(out.joints3d, p)?;
            Ok(g.sum(m))
        },
        &crate::ad::Tensor::vector(x),
        &crate::ad::GradCheck { step: 1e-5, tol: 1e-6, floor: 1e-6, scale_floor: 0.0 },
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}
