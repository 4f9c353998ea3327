use imago::agent::Scene;
use imago::datasets::{
    binarize, downsample_2x, generate_glyphs, load_idx, load_idx_images, read_idx, render_glyph, scenes_from_idx,
    write_idx, write_idx_file, GlyphSpec, IdxTensor, NUM_CLASSES,
};
use imago::Error;
use proptest::prelude::*;

#[test]
fn glyphs_are_deterministic_and_binary() {
    let a = generate_glyphs(7, 53, 16, 16).unwrap();
    let b = generate_glyphs(7, 53, 16, 16).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_glyphs(8, 53, 16, 16).unwrap());
    assert!(a.iter().all(|s| s.pixels.data().iter().all(|&v| v == 0.0 || v == 1.0)));
    assert!(a.iter().all(|s| s.pixels.data().contains(&1.0)));
}

#[test]
fn classes_are_balanced() {
    for count in [10, 37, 100, 3001] {
        let scenes = generate_glyphs(1, count, 12, 12).unwrap();
        let mut hist = [0usize; NUM_CLASSES];
        for s in &scenes {
            hist[s.label.unwrap() as usize] += 1;
        }
        let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(hi - lo <= 1, "{hist:?}");
    }
}

#[test]
fn filled_glyph_covers_the_box() {
    let s = render_glyph(&GlyphSpec {
        class_id: 8,
        height: 16,
        width: 16,
        jitter: (1, -1),
        stroke: 2,
    })
    .unwrap();
    assert_eq!(s.pixels.data().iter().sum::<f64>(), 100.0);
    assert_eq!(s.at(4, 2), 1.0);
    assert_eq!(s.at(3, 2), 0.0);
    assert!(render_glyph(&GlyphSpec {
        class_id: 8,
        height: 11,
        width: 16,
        jitter: (0, 0),
        stroke: 2,
    })
    .is_err());
}

#[test]
fn idx_header_examples() {
    let t = IdxTensor {
        dims: vec![2, 3, 4],
        data: (0..24).collect(),
    };
    let bytes = write_idx(&t).unwrap();
    assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4]);
    assert_eq!(bytes.len(), 16 + 24);
    let labels = write_idx(&IdxTensor {
        dims: vec![3],
        data: vec![7, 0, 9],
    })
    .unwrap();
    assert_eq!(labels, vec![0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9]);

    let mut bad = bytes.clone();
    bad[2] = 9;
    match read_idx(&bad) {
        Err(Error::Format(msg)) => assert!(msg.contains("00 00 09 03"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_idx(&bytes[..30]), Err(Error::Length { .. })));
}

#[test]
fn images_scale_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img-idx3-ubyte");
    write_idx_file(
        &path,
        &IdxTensor {
            dims: vec![1, 2, 2],
            data: vec![0, 255, 51, 102],
        },
    )
    .unwrap();
    let t = load_idx_images(&path).unwrap();
    assert_eq!(t.shape(), &[1, 2, 2]);
    assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn idx_round_trip(n in 1usize..5, h in 1usize..9, w in 1usize..9, seed in any::<u64>(), gz in any::<bool>()) {
        let mut x = seed;
        let data: Vec<u8> = (0..n * h * w).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1); (x >> 56) as u8 }).collect();
        let t = IdxTensor { dims: vec![n, h, w], data };
        let (header, back) = read_idx(&write_idx(&t).unwrap()).unwrap();
        prop_assert_eq!(header.dims, vec![n, h, w]);
        prop_assert_eq!(&back, &t);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "x-idx3-ubyte.gz" } else { "x-idx3-ubyte" });
        write_idx_file(&path, &t).unwrap();
        prop_assert_eq!(load_idx(&path).unwrap(), t);
    }

    #[test]
    fn downsample_preserves_block_sums(v in prop::collection::vec(0.0f64..=1.0, 64)) {
        let s = Scene::new(8, 8, v, None).unwrap();
        let d = downsample_2x(&s).unwrap();
        prop_assert_eq!((d.height, d.width), (4, 4));
        let total: f64 = s.pixels.data().iter().sum();
        let pooled: f64 = d.pixels.data().iter().sum();
        prop_assert!((pooled * 4.0 - total).abs() < 1e-12);
    }
}

#[test]
fn binarize_and_downsample_examples() {
    let s = Scene::new(2, 2, vec![0.49, 0.5, 0.51, 0.0], Some(3)).unwrap();
    let b = binarize(&s, 0.5);
    assert_eq!(b.pixels.data(), &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(b.label, Some(3));
    let d = downsample_2x(&b).unwrap();
    assert_eq!(d.pixels.data(), &[0.5]);
    assert!(downsample_2x(&Scene::new(3, 2, vec![0.0; 6], None).unwrap()).is_err());
}

#[test]
fn scenes_from_idx_carries_labels() {
    let images = IdxTensor {
        dims: vec![2, 1, 2],
        data: vec![255, 0, 0, 255],
    };
    let labels = IdxTensor {
        dims: vec![2],
        data: vec![4, 9],
    };
    let scenes = scenes_from_idx(&images, Some(&labels)).unwrap();
    assert_eq!(scenes[1].label, Some(9));
    assert_eq!(scenes[1].pixels.data(), &[0.0, 1.0]);
    let short = IdxTensor {
        dims: vec![1],
        data: vec![4],
    };
    assert!(scenes_from_idx(&images, Some(&short)).is_err());
}
