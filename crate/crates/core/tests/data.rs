use dynaconv::data::{
    apply_probe, load_cifar10, load_idx, parse_idx, CifarSplit, Dataset, ProbeTransform, SyntheticSpec, BACKGROUND_MAX,
    OBJECT_MIN,
};
use dynaconv::Error;
use proptest::prelude::*;

fn cifar_record(label: u8, seed: u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072u32).map(|i| (i as u8).wrapping_mul(seed).wrapping_add(label)));
    r
}

#[test]
fn cifar_fixture_with_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = Vec::new();
    for (l, s) in [(3u8, 1u8), (9, 7), (0, 13)] {
        train.extend(cifar_record(l, s));
    }
    std::fs::write(dir.path().join("data_batch_1.bin"), &train).unwrap();
    std::fs::write(dir.path().join("test_batch.bin"), cifar_record(5, 2)).unwrap();

    let ds = load_cifar10(dir.path(), CifarSplit::Train).unwrap();
    assert_eq!(ds.images.dims(), [3, 3, 32, 32]);
    assert_eq!(ds.labels, vec![3, 9, 0]);
    assert_eq!(ds.class_count, 10);
    // Record layout is label then 1024 red, 1024 green, 1024 blue bytes, row-major.
    for (n, (l, s)) in [(3u8, 1u8), (9, 7), (0, 13)].into_iter().enumerate() {
        for (c, y, x) in [(0, 0, 0), (1, 5, 17), (2, 31, 31)] {
            let i = (c * 1024 + y * 32 + x) as u32;
            let byte = (i as u8).wrapping_mul(s).wrapping_add(l);
            assert_eq!(ds.images.at(n, c, y, x), byte as f32 / 255.0);
        }
    }
    let test = load_cifar10(dir.path(), CifarSplit::Test).unwrap();
    assert_eq!(test.labels, vec![5]);

    let empty = tempfile::tempdir().unwrap();
    match load_cifar10(empty.path(), CifarSplit::Train) {
        Err(Error::Io { source, .. }) => assert_eq!(source.kind(), std::io::ErrorKind::NotFound),
        other => panic!("{other:?}"),
    }
}

fn idx_files(images: &[Vec<u8>], labels: &[u8], h: u32, w: u32) -> (Vec<u8>, Vec<u8>) {
    let mut im = 0x0803u32.to_be_bytes().to_vec();
    for v in [images.len() as u32, h, w] {
        im.extend(v.to_be_bytes());
    }
    for img in images {
        im.extend(img);
    }
    let mut lb = 0x0801u32.to_be_bytes().to_vec();
    lb.extend((labels.len() as u32).to_be_bytes());
    lb.extend(labels);
    (im, lb)
}

/// A second reading of the IDX layout, straight from the byte offsets.
fn decode_idx(images: &[u8], labels: &[u8]) -> (Vec<[usize; 3]>, Vec<Vec<f32>>, Vec<usize>) {
    let be = |b: &[u8], at: usize| u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize;
    let (n, h, w) = (be(images, 4), be(images, 8), be(images, 12));
    let pix = (0..n).map(|k| images[16 + k * h * w..16 + (k + 1) * h * w].iter().map(|&b| b as f32 / 255.0).collect()).collect();
    (vec![[n, h, w]], pix, labels[8..].iter().map(|&b| b as usize).collect())
}

#[test]
fn idx_matches_an_independent_decoder() {
    let imgs: Vec<Vec<u8>> = (0..4u8).map(|k| (0..35u8).map(|i| i.wrapping_mul(k + 3)).collect()).collect();
    let (im, lb) = idx_files(&imgs, &[2, 0, 4, 1], 5, 7);
    let ds = parse_idx(&im, &lb, "t").unwrap();
    let (shape, pix, labels) = decode_idx(&im, &lb);
    assert_eq!(ds.images.dims(), [shape[0][0], 3, shape[0][1], shape[0][2]]);
    assert_eq!(ds.labels, labels);
    assert_eq!(ds.class_count, 5);
    for n in 0..4 {
        for c in 0..3 {
            for i in 0..5 {
                for j in 0..7 {
                    assert_eq!(ds.images.at(n, c, i, j), pix[n][i * 7 + j]);
                }
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i"), &im).unwrap();
    std::fs::write(dir.path().join("l"), &lb).unwrap();
    assert_eq!(load_idx(dir.path().join("i"), dir.path().join("l")).unwrap().labels, labels);

    let (short, _) = idx_files(&imgs[..3], &[0, 0, 0], 5, 7);
    assert!(matches!(parse_idx(&short, &lb, "t"), Err(Error::Format(_))));
    assert!(matches!(parse_idx(&lb, &lb, "t"), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn object_extent_matches_recorded_scale(seed in any::<u64>(), lo in 4usize..16, span in 0usize..12) {
        let hi = (lo + span).min(32);
        let ds = SyntheticSpec { n: 24, class_count: 8, scale_range: (lo, hi), canvas: 32, seed }.generate().unwrap();
        let scales = ds.scales.clone().unwrap();
        for n in 0..ds.len() {
            let (mut top, mut bottom, mut left, mut right) = (usize::MAX, 0, usize::MAX, 0);
            for i in 0..32 {
                for j in 0..32 {
                    let px: Vec<f32> = (0..3).map(|c| ds.images.at(n, c, i, j)).collect();
                    prop_assert!(px.iter().all(|&v| v <= BACKGROUND_MAX) || px.iter().all(|&v| v >= OBJECT_MIN));
                    if px[0] >= OBJECT_MIN {
                        top = top.min(i);
                        bottom = bottom.max(i);
                        left = left.min(j);
                        right = right.max(j);
                    }
                }
            }
            let s = scales[n] as usize;
            prop_assert!((lo..=hi).contains(&s));
            let (eh, ew) = (bottom + 1 - top, right + 1 - left);
            prop_assert!(eh.abs_diff(s) <= 1 && ew.abs_diff(s) <= 1, "scale {} extent {}×{}", s, eh, ew);
        }
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let spec = SyntheticSpec { n: 40, class_count: 6, scale_range: (6, 20), canvas: 32, seed: 3 };
    assert_eq!(spec.generate().unwrap().images, spec.generate().unwrap().images);
    let other = SyntheticSpec { seed: 4, ..spec.clone() };
    assert_ne!(spec.generate().unwrap().images, other.generate().unwrap().images);
    assert!(matches!(SyntheticSpec { scale_range: (20, 40), ..spec.clone() }.generate(), Err(Error::Parameter(_))));
    assert!(matches!(SyntheticSpec { scale_range: (2, 8), ..spec }.generate(), Err(Error::Parameter(_))));
}

#[test]
fn probes_resize_and_crop() {
    let ds = SyntheticSpec { n: 6, class_count: 3, scale_range: (8, 16), canvas: 32, seed: 1 }.generate().unwrap();
    for (f, e) in [(0.25, 8), (0.5, 16), (1.0, 32), (2.0, 64), (4.0, 128)] {
        let p = apply_probe(&ds, ProbeTransform::Scale(f)).unwrap();
        assert_eq!(p.extent(), (e, e));
        assert_eq!(p.labels, ds.labels);
    }
    assert!(apply_probe(&ds, ProbeTransform::Scale(3.0)).is_err());
    let full = apply_probe(&ds, ProbeTransform::context(40)).unwrap();
    let crop = apply_probe(&ds, ProbeTransform::context(20)).unwrap();
    assert_eq!(crop.extent(), (20, 20));
    assert_eq!(crop.images.at(2, 1, 0, 0), full.images.at(2, 1, 10, 10));
    assert!(apply_probe(&ds, ProbeTransform::context(44)).is_err());
}

#[test]
fn dataset_container_round_trip() {
    let ds = SyntheticSpec { n: 10, class_count: 4, scale_range: (8, 12), canvas: 16, seed: 5 }.generate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.dynw");
    ds.save(&p).unwrap();
    let back = Dataset::load(&p).unwrap();
    assert_eq!(back.images, ds.images);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.scales, ds.scales);
    assert_eq!(back.fingerprint(), ds.fingerprint());
}
