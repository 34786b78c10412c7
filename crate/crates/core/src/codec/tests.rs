use super::*;
use crate::data::make_dataset;
use crate::hand::make_synthetic_rig;
use crate::nets::init_model;

fn tiny_net() -> NetConfig {
    NetConfig {
        widths: vec![2, 3],
        head_dim: 4,
        input_channels: 21,
        input_size: (8, 8),
        seed: 1,
    }
}

fn tiny_dataset() -> (HandRig, Dataset) {
    let rig = make_synthetic_rig(5, 12).unwrap();
    let cfg = DataConfig {
        n_train: 3,
        n_eval: 2,
        seed: 1,
        frac_2d_only: 0.5,
        intrinsics: Intrinsics {
            focal: 100.0,
            image_h: 8,
            image_w: 8,
        },
        ..DataConfig::default()
    };
    let ds = make_dataset(&cfg, &rig).unwrap();
    (rig, ds)
}

#[test]
fn rig_round_trip() {
    let rig = make_synthetic_rig(3, 40).unwrap();
    let bytes = encode_rig(&rig);
    let back = decode_rig(&bytes).unwrap();
    assert_eq!(back, rig);
    assert_eq!(encode_rig(&back), bytes);
    assert_eq!(rig_digest(&back), rig_digest(&rig));
}

#[test]
fn rig_truncation_names_section() {
    let bytes = encode_rig(&make_synthetic_rig(3, 10).unwrap());
    // Header is 16 bytes; template section is 2 + 8 + 8 + 240 bytes.
    let cut = 16 + 2 + 8 + 8 + 240 + 20;
    match decode_rig(&bytes[..cut]) {
        Err(FormatError::Truncated { section }) => assert_eq!(section, "blendshapes"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_rig(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { section }) if section == "keypoint_regressor"));
}

#[test]
fn rig_bad_magic_and_version() {
    let mut bytes = encode_rig(&make_synthetic_rig(3, 10).unwrap());
    bytes[4] = 2;
    assert!(matches!(decode_rig(&bytes), Err(FormatError::Version { found: 2, .. })));
    bytes[0] = b'X';
    assert!(matches!(decode_rig(&bytes), Err(FormatError::BadMagic { .. })));
}

#[test]
fn rig_trailing_bytes_rejected() {
    let mut bytes = encode_rig(&make_synthetic_rig(3, 10).unwrap());
    bytes.push(0);
    assert!(matches!(decode_rig(&bytes), Err(FormatError::Invalid { section, .. }) if section == "end"));
}

#[test]
fn model_round_trip_is_byte_identical() {
    let mut m = init_model(&tiny_net()).unwrap();
    m.freeze();
    let bytes = encode_model(&m, None);
    let (back, opt) = decode_model(&bytes).unwrap();
    assert!(opt.is_none());
    assert_eq!(back, m);
    assert_eq!(encode_model(&back, None), bytes);
}

#[test]
fn checkpoint_keeps_optimizer_state() {
    let m = init_model(&tiny_net()).unwrap();
    let mut state = AdamState::for_model(&m).unwrap();
    state.step = 7;
    state.m[0].data_mut()[0] = 0.25;
    state.v.push(Tensor::matrix(2, 3, vec![1.0; 6]));
    state.m.push(Tensor::matrix(2, 3, vec![-1.0; 6]));
    let snap = OptimizerSnapshot {
        config: AdamConfig::default(),
        state,
    };
    let bytes = encode_model(&m, Some(&snap));
    let (back, opt) = decode_model(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(opt.as_ref(), Some(&snap));
    assert_eq!(encode_model(&back, opt.as_ref()), bytes);
}

#[test]
fn model_corruption_detected() {
    let m = init_model(&tiny_net()).unwrap();
    let bytes = encode_model(&m, None);
    assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
    // Shrink the element count of the first parameter section.
    let mut bad = bytes.clone();
    let header = 4 + 4 + 4 + 2 * 4 + 4 * 4 + 8;
    let name_len = "backbone.0.weight".len();
    let at = header + 2 + name_len;
    bad[at] -= 1;
    match decode_model(&bad) {
        Err(FormatError::SectionLength { section, .. }) => assert_eq!(section, "backbone.0.weight"),
        other => panic!("{other:?}"),
    }
    let mut bad = bytes;
    bad[0..4].copy_from_slice(b"HKDR");
    assert!(matches!(decode_model(&bad), Err(FormatError::BadMagic { .. })));
}

#[test]
fn dataset_round_trip() {
    let (_, ds) = tiny_dataset();
    let bytes = encode_dataset(&ds);
    let back = decode_dataset(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(encode_dataset(&back), bytes);
    assert_eq!(back.checksum(), ds.checksum());
}

#[test]
fn dataset_version_and_truncation() {
    let (_, ds) = tiny_dataset();
    let bytes = encode_dataset(&ds);
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
    let err = decode_dataset(&bumped).unwrap_err();
    assert!(matches!(err, FormatError::Version { kind: "dataset", found: 2, expected: 1 }));
    assert!(alloc::format!("{err}").contains("version 2"));

    match decode_dataset(&bytes[..bytes.len() - 4]) {
        Err(FormatError::Truncated { section }) => assert_eq!(section, "trailer"),
        other => panic!("{other:?}"),
    }
    match decode_dataset(&bytes[..bytes.len() / 2]) {
        Err(FormatError::Truncated { section }) => assert!(section.starts_with("sample "), "{section}"),
        other => panic!("{other:?}"),
    }
    let mut wrong = bytes.clone();
    let n = wrong.len();
    wrong[n - 8..].copy_from_slice(&((n as u64) + 5).to_le_bytes());
    assert!(matches!(decode_dataset(&wrong), Err(FormatError::TrailingLength { .. })));
}

#[test]
fn fnv_matches_reference_vectors() {
    let mut h = Fnv1a::default();
    h.put(b"");
    assert_eq!(h.finish(), 0xcbf29ce484222325);
    let mut h = Fnv1a::default();
    h.put(b"a");
    assert_eq!(h.finish(), 0xaf63dc4c8601ec8c);
    let mut h = Fnv1a::default();
    h.put(b"foobar");
    assert_eq!(h.finish(), 0x85944171f73967e8);
}
