use super::*;
use crate::ad::{finite_diff_check, GradCheck};
use crate::hand::{make_synthetic_rig, HandParams};
use crate::losses::{loss_gt, GroundTruth, GtWeights};

fn tiny_cfg(seed: u64) -> NetConfig {
    NetConfig {
        widths: vec![3, 4],
        head_dim: 6,
        input_channels: 2,
        input_size: (8, 8),
        seed,
    }
}

fn random_image(cfg: &NetConfig, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, 99, 0);
    let (h, w) = cfg.input_size;
    let n = cfg.input_channels * h * w;
    Tensor::new(&[cfg.input_channels, h, w], (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn init_is_deterministic() {
    let cfg = StudentSize::Small.config(5);
    assert_eq!(init_model(&cfg).unwrap().checksum(), init_model(&cfg).unwrap().checksum());
    let other = StudentSize::Small.config(6);
    assert_ne!(init_model(&cfg).unwrap().checksum(), init_model(&other).unwrap().checksum());
}

#[test]
fn widening_by_four_scales_inner_layers_by_sixteen() {
    let small = NetConfig::new(vec![8, 16, 32], 32, 0);
    let wide = NetConfig::new(vec![32, 64, 128], 128, 0);
    let count = |cfg: &NetConfig, name: &str| -> usize {
        cfg.param_specs()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.iter().product())
            .unwrap()
    };
    for name in ["backbone.1.weight", "backbone.2.weight", "head.embed", "head.key", "head.value", "head.hidden.weight"] {
        assert_eq!(count(&wide, name), 16 * count(&small, name), "{name}");
    }
}

#[test]
fn rejects_bad_configs() {
    let mut cfg = tiny_cfg(0);
    cfg.head_dim = 0;
    assert!(matches!(init_model(&cfg), Err(Error::InvalidConfig(_))));
    let mut cfg = tiny_cfg(0);
    cfg.widths = vec![];
    assert!(init_model(&cfg).is_err());
    let mut cfg = tiny_cfg(0);
    cfg.widths = vec![4, 0];
    assert!(init_model(&cfg).is_err());
}

#[test]
fn single_conv_count() {
    let cfg = NetConfig {
        widths: vec![4],
        head_dim: 1,
        input_channels: 2,
        input_size: (4, 4),
        seed: 0,
    };
    let specs = cfg.param_specs();
    let conv: usize = specs[..2].iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    assert_eq!(conv, 2 * 4 * 9 + 4);
}

#[test]
fn freeze_moves_count_and_blocks_mutation() {
    let mut m = init_model(&tiny_cfg(1)).unwrap();
    let before = m.param_count();
    assert_eq!(before.frozen, 0);
    m.freeze();
    let after = m.param_count();
    assert_eq!(after.trainable, 0);
    assert_eq!(after.total(), before.total());
    assert_eq!(m.params_mut().unwrap_err(), Error::Frozen);
}

#[test]
fn zero_image_gives_zero_features() {
    let cfg = tiny_cfg(2);
    let m = init_model(&cfg).unwrap();
    let mut g = Graph::no_grad();
    let b = m.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[2, 8, 8]));
    let f = b.forward_backbone(&mut g, x).unwrap();
    assert!(g.value(f).data().iter().all(|&v| v == 0.0));
}

#[test]
fn stride_arithmetic() {
    let cfg = NetConfig::new(vec![8, 16], 16, 0);
    assert_eq!(cfg.feature_shape(), (16, 16, 16));
    let m = init_model(&cfg).unwrap();
    let mut g = Graph::no_grad();
    let b = m.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[21, 64, 64]));
    let f = b.forward_backbone(&mut g, x).unwrap();
    assert_eq!(g.value(f).shape(), &[16, 16, 16]);
    assert_eq!(NetConfig::teacher(0).feature_shape(), (128, 8, 8));
}

#[test]
fn backbone_rejects_wrong_image() {
    let m = init_model(&tiny_cfg(0)).unwrap();
    let mut g = Graph::no_grad();
    let b = m.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[3, 8, 8]));
    assert!(matches!(b.forward_backbone(&mut g, x), Err(Error::InvalidInput(_))));
}

#[test]
fn forward_is_deterministic_and_consistent_with_hand_model() {
    let cfg = tiny_cfg(3);
    let m = init_model(&cfg).unwrap();
    let rig = make_synthetic_rig(4, 10).unwrap();
    let intr = Intrinsics::default();
    let img = random_image(&cfg, 1);
    let (p1, f1) = m.predict(&img, &rig, &intr).unwrap();
    let (p2, f2) = m.predict(&img, &rig, &intr).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(f1, f2);
    let out = rig
        .forward(&HandParams {
            theta: p1.theta.clone(),
            beta: p1.beta.clone(),
        })
        .unwrap();
    for (a, b) in out.joints3d.data().iter().zip(p1.k3d.data()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    let cam = crate::camera::CameraParams {
        translation: p1.translation,
        intrinsics: intr,
    };
    let k2d = crate::camera::project(&out.joints3d, &cam).unwrap();
    for (a, b) in k2d.data().iter().zip(p1.k2d.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn zero_query_attends_uniformly() {
    let cfg = tiny_cfg(7);
    let mut m = init_model(&cfg).unwrap();
    let q = 2 * cfg.stages() + slot::QUERY;
    m.params_mut().unwrap()[q] = Tensor::zeros(&[1, cfg.head_dim]);
    let rig = make_synthetic_rig(1, 10).unwrap();
    let mut g = Graph::no_grad();
    let b = m.bind(&mut g);
    let x = g.constant(random_image(&cfg, 2));
    let f = b.forward_backbone(&mut g, x).unwrap();
    let head = b.forward_head(&mut g, f, &rig, &Intrinsics::default()).unwrap();
    let t = cfg.tokens();
    for &a in g.value(head.attention).data() {
        assert!((a - 1.0 / t as f64).abs() < 1e-15);
    }
    // Recompute the value tokens and their mean by hand.
    let (c, _, _) = cfg.feature_shape();
    let fv = g.value(f).data();
    let embed = &m.params()[2 * cfg.stages() + slot::EMBED];
    let pos = &m.params()[2 * cfg.stages() + slot::POS];
    let wv = &m.params()[2 * cfg.stages() + slot::VALUE];
    let d = cfg.head_dim;
    let mut mean = vec![0.0; d];
    for tok in 0..t {
        let e: Vec<f64> = (0..d)
            .map(|k| libm::tanh((0..c).map(|ch| fv[ch * t + tok] * embed.at2(ch, k)).sum::<f64>() + pos.at2(tok, k)))
            .collect();
        for (j, m) in mean.iter_mut().enumerate() {
            *m += (0..d).map(|k| e[k] * wv.at2(k, j)).sum::<f64>() / t as f64;
        }
    }
    for (a, b) in g.value(head.attended).data().iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_is_a_distribution() {
    let cfg = tiny_cfg(8);
    let m = init_model(&cfg).unwrap();
    let rig = make_synthetic_rig(1, 10).unwrap();
    let mut g = Graph::no_grad();
    let b = m.bind(&mut g);
    let x = g.constant(random_image(&cfg, 3));
    let f = b.forward_backbone(&mut g, x).unwrap();
    let head = b.forward_head(&mut g, f, &rig, &Intrinsics::default()).unwrap();
    let a = g.value(head.attention).data();
    assert!(a.iter().all(|&v| v >= 0.0));
    assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn head_gradients_match_finite_differences() {
    let cfg = tiny_cfg(9);
    let m = init_model(&cfg).unwrap();
    let rig = make_synthetic_rig(2, 10).unwrap();
    let intr = Intrinsics::default();
    let img = random_image(&cfg, 4);
    let target = rig.forward(&HandParams::zeros()).unwrap();
    let cam = crate::camera::CameraParams {
        translation: [5.0, -3.0, 550.0],
        intrinsics: intr,
    };
    let k2d = crate::camera::project(&target.joints3d, &cam).unwrap();
    let gt = GroundTruth::full(k2d, target.joints3d.clone(), vec![0.05; 58]).unwrap();
    let flat = Tensor::vector(m.flat_params());
    let report = finite_diff_check(
        |g, p| {
            let b = m.bind_flat(g, p, 0).map_err(|e| match e {
                Error::Ad(a) => a,
                other => panic!("{other}"),
            })?;
            let x = g.constant(img.clone());
            let f = b.forward_backbone(g, x).unwrap();
            let head = b.forward_head(g, f, &rig, &intr).unwrap();
            Ok(loss_gt(g, &head.prediction, &gt, &GtWeights::default()).unwrap().total)
        },
        &flat,
        &GradCheck {
            tol: 1e-5,
            scale_floor: 1e-6,
            ..GradCheck::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "max rel err {} at {:?}", report.max_rel_err, report.worst_index);
}
