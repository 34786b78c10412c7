use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn tight() -> GradCheck {
    GradCheck {
        step: 1e-5,
        tol: 1e-6,
        floor: 1e-6,
        scale_floor: 0.0,
    }
}

fn assert_passes(report: &GradCheckReport) {
    assert!(report.passed(), "max rel err {} at {:?}: {:?}", report.max_rel_err, report.worst_index, report.failures.first());
}

#[test]
fn add_two_vectors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn mul_by_zero_annihilates_value_and_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.5, -2.0, 3.0]));
    let zero = g.constant(Tensor::scalar(0.0));
    let y = g.mul(x, zero).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn sub_self_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.param(random(&mut rng, &[4, 3]));
    let d = g.sub(x, x).unwrap();
    assert!(g.value(d).data().iter().all(|&v| v == 0.0));
}

#[test]
fn elementwise_rejects_mismatched_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(AdError::ShapeMismatch { .. })));
    // Rank-1 length-1 is not a scalar; only rank 0 broadcasts.
    let c = g.constant(Tensor::vector(vec![1.0]));
    assert!(g.mul(a, c).is_err());
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let i3 = g.constant(Tensor::eye(3));
    let x = g.constant(random(&mut rng, &[3, 4]));
    let y = g.matmul(i3, x).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    assert_eq!(g.value(c).shape(), &[2, 1]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[4, 5]);
    let b = random(&mut rng, &[5, 3]);
    let mut oracle = vec![0.0; 12];
    for i in 0..4 {
        for j in 0..3 {
            for k in 0..5 {
                oracle[i * 3 + j] += a.at2(i, k) * b.at2(k, j);
            }
        }
    }
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a), g.constant(b));
    let c = g.matmul(va, vb).unwrap();
    for (x, y) in g.value(c).data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(AdError::ShapeMismatch { .. })));
}

#[test]
fn sq_l2_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, &[7]));
    let s = g.sq_l2(x, x).unwrap();
    assert_eq!(g.value(s).item(), 0.0);

    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let s = g.sq_l2(a, z).unwrap();
    assert_eq!(g.value(s).item(), 5.0);

    let p = random(&mut rng, &[3, 4]);
    let q = random(&mut rng, &[3, 4]);
    let mut oracle = 0.0;
    for i in 0..12 {
        let d = p.data()[i] - q.data()[i];
        oracle += d * d;
    }
    let (vp, vq) = (g.constant(p), g.constant(q));
    let s = g.sq_l2(vp, vq).unwrap();
    assert!((g.value(s).item() - oracle).abs() < 1e-12);

    let bad = g.constant(Tensor::zeros(&[4, 3]));
    assert!(g.sq_l2(vp, bad).is_err());
}

#[test]
fn conv_1x1_identity_and_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random(&mut rng, &[3, 4, 5]);
    let mut g = Graph::new();
    let vf = g.constant(f.clone());
    let w = g.constant(Tensor::eye(3));
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.conv_1x1(vf, w, b).unwrap();
    assert_eq!(g.value(y), &f);

    let f2 = random(&mut rng, &[2, 3, 3]);
    let vf2 = g.constant(f2.clone());
    let w = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv_1x1(vf2, w, b).unwrap();
    for p in 0..9 {
        let expect = f2.data()[p] + f2.data()[9 + p];
        assert!((g.value(y).data()[p] - expect).abs() < 1e-15);
    }
}

#[test]
fn conv_1x1_matches_reshape_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random(&mut rng, &[4, 3, 5]);
    let w = random(&mut rng, &[6, 4]);
    let bias = random(&mut rng, &[6]);
    // Oracle: explicit (C_out×C_in)·(C_in×HW) product plus per-row bias.
    let mut oracle = vec![0.0; 6 * 15];
    for o in 0..6 {
        for p in 0..15 {
            let mut acc = bias.data()[o];
            for c in 0..4 {
                acc += w.at2(o, c) * f.data()[c * 15 + p];
            }
            oracle[o * 15 + p] = acc;
        }
    }
    let mut g = Graph::new();
    let (vf, vw, vb) = (g.constant(f), g.constant(w), g.constant(bias));
    let y = g.conv_1x1(vf, vw, vb).unwrap();
    assert_eq!(g.value(y).shape(), &[6, 3, 5]);
    for (x, y) in g.value(y).data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn conv_1x1_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let f = g.constant(Tensor::zeros(&[3, 2, 2]));
    let w = g.constant(Tensor::zeros(&[2, 4]));
    let b = g.constant(Tensor::zeros(&[2]));
    assert!(g.conv_1x1(f, w, b).is_err());
}

#[test]
fn bilinear_resize_identity_constant_and_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = random(&mut rng, &[2, 4, 5]);
    let mut g = Graph::new();
    let vf = g.constant(f.clone());
    let same = g.bilinear_resize(vf, 4, 5).unwrap();
    assert_eq!(g.value(same), &f);

    let c = g.constant(Tensor::full(&[1, 3, 3], 2.5));
    for (h, w) in [(1, 1), (5, 7), (2, 9)] {
        let r = g.bilinear_resize(c, h, w).unwrap();
        assert!(g.value(r).data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    // Align-corners maps output (1,1) of a 3×3 grid onto source (0.5, 0.5):
    // the direct interpolation formula gives the mean of the four corners.
    let corners = [1.0, 4.0, -2.0, 7.0];
    let sq = g.constant(Tensor::new(&[1, 2, 2], corners.to_vec()).unwrap());
    let r = g.bilinear_resize(sq, 3, 3).unwrap();
    let direct = 0.25 * corners.iter().sum::<f64>();
    assert!((g.value(r).data()[4] - direct).abs() < 1e-15);
    // Corners are reproduced exactly.
    assert_eq!(g.value(r).data()[0], 1.0);
    assert_eq!(g.value(r).data()[8], 7.0);

    assert!(g.bilinear_resize(vf, 0, 3).is_err());
}

#[test]
fn bilinear_resize_to_single_pixel_takes_center() {
    let mut g = Graph::new();
    let f = g.constant(Tensor::new(&[1, 1, 3], vec![1.0, 5.0, 9.0]).unwrap());
    let r = g.bilinear_resize(f, 1, 1).unwrap();
    assert_eq!(g.value(r).data(), &[5.0]);
}

/// Rotation matrix of an axis-angle vector through unit-quaternion composition.
fn quaternion_oracle(r: [f64; 3]) -> [f64; 9] {
    let q = nalgebra::UnitQuaternion::from_scaled_axis(nalgebra::Vector3::new(r[0], r[1], r[2]));
    let m = q.to_rotation_matrix();
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = m[(i, j)];
        }
    }
    out
}

#[test]
fn rodrigues_zero_and_quarter_turn() {
    let mut g = Graph::new();
    let z = g.param(Tensor::vector(vec![0.0; 3]));
    let r = g.rodrigues(z).unwrap();
    assert_eq!(g.value(r), &Tensor::eye(3));

    let q = g.constant(Tensor::vector(vec![core::f64::consts::FRAC_PI_2, 0.0, 0.0]));
    let r = g.rodrigues(q).unwrap();
    let y = g.constant(Tensor::matrix(3, 1, vec![0.0, 1.0, 0.0]));
    let out = g.matmul(r, y).unwrap();
    let d = g.value(out).data();
    assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);
}

#[test]
fn rodrigues_matches_quaternion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let r = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(r.to_vec()));
        let m = g.rodrigues(v).unwrap();
        let oracle = quaternion_oracle(r);
        for (x, y) in g.value(m).data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn rodrigues_gradient_is_finite_at_identity() {
    let mut g = Graph::new();
    let z = g.param(Tensor::vector(vec![0.0; 3]));
    let r = g.rodrigues(z).unwrap();
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert!(g.grad(z).unwrap().is_finite());
}

#[test]
fn backward_simple_square() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![3.0]));
    let z = g.constant(Tensor::vector(vec![0.0]));
    let l = g.sq_l2(x, z).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_constant_loss_leaves_zero_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let c = g.constant(Tensor::scalar(4.0));
    let zero = g.mul_scalar(x, 0.0);
    let s = g.sum(zero);
    let l = g.add(s, c).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.tanh(x);
    assert!(matches!(g.backward(y), Err(AdError::NonScalarRoot(_))));
}

#[test]
fn backward_twice_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let a = g.param(random(&mut rng, &[3, 4]));
    let b = g.param(random(&mut rng, &[4, 2]));
    let c = g.matmul(a, b).unwrap();
    let t = g.tanh(c);
    let target = g.constant(random(&mut rng, &[3, 2]));
    let l = g.sq_l2(t, target).unwrap();
    g.backward(l).unwrap();
    let first = (g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone());
    g.zero_grad();
    g.backward(l).unwrap();
    assert_eq!(g.grad(a).unwrap(), &first.0);
    assert_eq!(g.grad(b).unwrap(), &first.1);
}

#[test]
fn composed_matmul_sq_l2_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let b = random(&mut rng, &[4, 3]);
    let target = random(&mut rng, &[2, 3]);
    let x = random(&mut rng, &[2, 4]);
    let report = finite_diff_check(
        |g, x| {
            let vb = g.constant(b.clone());
            let vt = g.constant(target.clone());
            let y = g.matmul(x, vb)?;
            g.sq_l2(y, vt)
        },
        &x,
        &tight(),
    )
    .unwrap();
    assert_passes(&report);
}

#[test]
fn gradcheck_linear_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[5]);
    let w = random(&mut rng, &[5]);
    let linear = finite_diff_check(
        |g, x| {
            let vw = g.constant(w.clone());
            let p = g.mul(x, vw)?;
            Ok(g.sum(p))
        },
        &x,
        &GradCheck { tol: 1e-10, ..tight() },
    )
    .unwrap();
    assert_passes(&linear);

    let quad = finite_diff_check(
        |g, x| {
            let z = g.constant(Tensor::zeros(&[5]));
            g.sq_l2(x, z)
        },
        &x,
        &GradCheck { tol: 1e-8, ..tight() },
    )
    .unwrap();
    assert_passes(&quad);
    for (a, xi) in quad.analytic.iter().zip(x.data()) {
        assert_eq!(*a, 2.0 * xi);
    }
}

#[test]
fn gradcheck_catches_corrupted_rule() {
    // x ⊙ detach(x) has the value of x² but a gradient of x, not 2x.
    let x = Tensor::vector(vec![0.5, -1.2, 1.7]);
    let report = finite_diff_check(
        |g, x| {
            let d = g.detach(x);
            let p = g.mul(x, d)?;
            Ok(g.sum(p))
        },
        &x,
        &tight(),
    )
    .unwrap();
    assert!(!report.passed());
    assert!(report.max_rel_err > 0.4);
}

#[test]
fn gradcheck_reports_non_finite_loss() {
    let x = Tensor::vector(vec![1.0]);
    let report = finite_diff_check(
        |g, x| {
            let big = g.mul_scalar(x, f64::INFINITY);
            Ok(g.sum(big))
        },
        &x,
        &tight(),
    )
    .unwrap();
    assert!(matches!(report.failures[0], GradCheckFailure::NonFinite { index: None, .. }));
}

/// Applies `op` to a random input and reduces against a random target so
/// every output coordinate carries a distinct weight.
fn check_unary(seed: u64, shape: &[usize], op: impl Fn(&mut Graph, Var) -> Result<Var, AdError>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, shape);
    let probe = {
        let mut g = Graph::no_grad();
        let v = g.constant(x.clone());
        let y = op(&mut g, v).unwrap();
        random(&mut rng, g.value(y).shape())
    };
    let report = finite_diff_check(
        |g, x| {
            let y = op(g, x)?;
            let p = g.constant(probe.clone());
            g.sq_l2(y, p)
        },
        &x,
        &tight(),
    )
    .unwrap();
    assert_passes(&report);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let other = random(&mut rng, &[3, 4]);
    let rhs = random(&mut rng, &[4, 2]);
    let scal = Tensor::scalar(rng.random_range(-2.0..2.0));
    let o = other.clone();
    check_unary(20, &[3, 4], move |g, x| {
        let c = g.constant(o.clone());
        g.add(x, c)
    });
    let o = other.clone();
    check_unary(21, &[3, 4], move |g, x| {
        let c = g.constant(o.clone());
        g.sub(c, x)
    });
    let o = other.clone();
    check_unary(22, &[3, 4], move |g, x| {
        let c = g.constant(o.clone());
        g.mul(x, c)
    });
    let s = scal.clone();
    check_unary(23, &[3, 4], move |g, x| {
        let c = g.constant(s.clone());
        g.mul(c, x)
    });
    // Scalar operand receives the summed gradient.
    let o = other.clone();
    check_unary(24, &[], move |g, x| {
        let c = g.constant(o.clone());
        g.mul(c, x)
    });
    check_unary(25, &[3, 4], |g, x| Ok(g.add_scalar(x, 1.5)));
    check_unary(26, &[3, 4], |g, x| Ok(g.mul_scalar(x, -0.7)));
    let r = rhs.clone();
    check_unary(27, &[3, 4], move |g, x| {
        let c = g.constant(r.clone());
        g.matmul(x, c)
    });
    let o = other.clone();
    check_unary(28, &[4, 2], move |g, x| {
        let c = g.constant(o.clone());
        g.matmul(c, x)
    });
    check_unary(29, &[3, 4], |g, x| g.transpose(x));
    check_unary(30, &[3, 4], |g, x| g.reshape(x, &[2, 6]));
    check_unary(31, &[3, 4, 2], |g, x| g.narrow(x, 1, 1, 2));
    check_unary(32, &[3, 4], |g, x| {
        let a = g.narrow(x, 0, 0, 1)?;
        let b = g.tanh(x);
        g.concat(&[b, a, x], 0)
    });
    check_unary(33, &[3, 4], |g, x| {
        let y = g.mul_scalar(x, 2.0);
        g.concat(&[x, y], 1)
    });
    check_unary(34, &[3, 4], |g, x| Ok(g.tanh(x)));
    check_unary(35, &[3, 4], |g, x| g.softmax_rows(x));
    check_unary(36, &[3, 4], |g, x| Ok(g.sum(x)));
    let o = other.clone();
    check_unary(37, &[3, 4], move |g, x| {
        let c = g.constant(o.clone());
        g.sq_l2(c, x)
    });
    check_unary(38, &[3], |g, x| g.rodrigues(x));
    check_unary(39, &[2, 5, 4], |g, x| g.bilinear_resize(x, 3, 7));
    check_unary(40, &[2, 5, 4], |g, x| g.bilinear_resize(x, 1, 2));
}

#[test]
fn rodrigues_gradient_near_identity() {
    for scale in [1e-8, 1e-4, 5e-3, 2e-2] {
        let x = Tensor::vector(vec![0.3 * scale, -0.5 * scale, 0.8 * scale]);
        let probe = Tensor::matrix(3, 3, vec![0.3, -0.1, 0.7, 0.2, 0.9, -0.4, -0.6, 0.5, 0.1]);
        let report = finite_diff_check(
            |g, x| {
                let r = g.rodrigues(x)?;
                let p = g.constant(probe.clone());
                let m = g.mul(r, p)?;
                Ok(g.sum(m))
            },
            &x,
            &tight(),
        )
        .unwrap();
        assert_passes(&report);
    }
}

#[test]
fn conv_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, &[2, 5, 6]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let b = random(&mut rng, &[3]);
    let probe = random(&mut rng, &[3, 3, 3]);
    let conv = |g: &mut Graph, x: Var, w: Var, b: Var| -> Result<Var, AdError> {
        let y = g.conv2d(x, w, b, 2, 1)?;
        let p = g.constant(probe.clone());
        g.sq_l2(y, p)
    };
    for which in 0..3 {
        let report = finite_diff_check(
            |g, v| {
                let (cx, cw, cb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
                match which {
                    0 => conv(g, v, cw, cb),
                    1 => conv(g, cx, v, cb),
                    _ => conv(g, cx, cw, v),
                }
            },
            [&x, &w, &b][which],
            &tight(),
        )
        .unwrap();
        assert_passes(&report);
    }

    let w1 = random(&mut rng, &[4, 2]);
    let b1 = random(&mut rng, &[4]);
    let probe1 = random(&mut rng, &[4, 5, 6]);
    for which in 0..3 {
        let report = finite_diff_check(
            |g, v| {
                let (cx, cw, cb) = (g.constant(x.clone()), g.constant(w1.clone()), g.constant(b1.clone()));
                let y = match which {
                    0 => g.conv_1x1(v, cw, cb)?,
                    1 => g.conv_1x1(cx, v, cb)?,
                    _ => g.conv_1x1(cx, cw, v)?,
                };
                let p = g.constant(probe1.clone());
                g.sq_l2(y, p)
            },
            [&x, &w1, &b1][which],
            &tight(),
        )
        .unwrap();
        assert_passes(&report);
    }
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, &[2, 5, 6]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let b = random(&mut rng, &[3]);
    let mut g = Graph::new();
    let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(vx, vw, vb, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[3, 3, 3]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = b.data()[o];
                for c in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let iy = (oy * 2 + ki) as isize - 1;
                            let ix = (ox * 2 + kj) as isize - 1;
                            if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                acc += w.data()[((o * 2 + c) * 3 + ki) * 3 + kj] * x.data()[(c * 5 + iy as usize) * 6 + ix as usize];
                            }
                        }
                    }
                }
                let got = g.value(y).data()[(o * 3 + oy) * 3 + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn project_matches_finite_differences() {
    let pts = Tensor::matrix(3, 3, vec![10.0, -5.0, 20.0, -30.0, 12.0, -40.0, 3.0, 4.0, 0.0]);
    let t = Tensor::vector(vec![5.0, -3.0, 500.0]);
    let probe = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.2]);
    for which in 0..2 {
        let report = finite_diff_check(
            |g, v| {
                let y = if which == 0 {
                    let ct = g.constant(t.clone());
                    g.project(v, ct, 500.0)?
                } else {
                    let cp = g.constant(pts.clone());
                    g.project(cp, v, 500.0)?
                };
                let p = g.constant(probe.clone());
                let m = g.mul(y, p)?;
                Ok(g.sum(m))
            },
            if which == 0 { &pts } else { &t },
            &tight(),
        )
        .unwrap();
        assert_passes(&report);
    }
}

#[test]
fn resize_and_channel_projection_commute() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let f = random(&mut rng, &[5, 4, 6]);
        let w = random(&mut rng, &[3, 5]);
        let b = random(&mut rng, &[3]);
        let (oh, ow) = (rng.random_range(1..9), rng.random_range(1..9));
        let mut g = Graph::new();
        let (vf, vw, vb) = (g.constant(f), g.constant(w), g.constant(b));
        let p = g.conv_1x1(vf, vw, vb).unwrap();
        let pr = g.bilinear_resize(p, oh, ow).unwrap();
        let r = g.bilinear_resize(vf, oh, ow).unwrap();
        let rp = g.conv_1x1(r, vw, vb).unwrap();
        for (x, y) in g.value(pr).data().iter().zip(g.value(rp).data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn rodrigues_is_a_proper_rotation(
        dir in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..(2.0 * core::f64::consts::PI),
    ) {
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        prop_assume!(norm > 1e-3);
        let r: Vec<f64> = dir.iter().map(|d| d / norm * angle).collect();
        let m = kernels::rodrigues_matrix([r[0], r[1], r[2]]);
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| m[k * 3 + i] * m[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((rtr - expect).abs() <= 1e-12);
            }
        }
        let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6]);
        prop_assert!((det - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn binary_ops_match_finite_differences(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 3]);
        let report = finite_diff_check(
            |g, x| {
                let vb = g.constant(b.clone());
                let p = g.mul(x, vb)?;
                let s = g.sub(p, x)?;
                let t = g.tanh(s);
                g.sq_l2(t, vb)
            },
            &a,
            // Saturated tanh can shrink the whole gradient to ~1e-5, where the
            // O(h^2) truncation error of the difference quotient dominates.
            &GradCheck { floor: 1e-4, ..tight() },
        ).unwrap();
        prop_assert!(report.passed(), "{:?}", report.failures);
    }
}
