//! Raster and index round trips, and properties of the generated scenes.

mod support;

use laneforge::data::{
    decode_pnm, encode_pgm, encode_ppm, load_index, read_image, read_label, synthetic_sample, write_image, write_index,
    write_label, DatasetIndex, Record, ScenePreset, SEQ, MAX_LANE_FRACTION, MIN_LANE_FRACTION,
};
use laneforge::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;
use support::{random_map, rng};

fn quantized_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut r = rng(seed);
    let data: Vec<f32> = (0..3 * h * w).map(|_| r.random_range(0..=255u8) as f32 / 255.0).collect();
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = quantized_image(1, 17, 23);
    write_image(dir.path().join("a.ppm"), &img).unwrap();
    assert_eq!(read_image(dir.path().join("a.ppm")).unwrap(), img);
    let map = random_map(&mut rng(2), 17, 23, 0.1);
    write_label(dir.path().join("a.pgm"), &map).unwrap();
    assert_eq!(read_label(dir.path().join("a.pgm")).unwrap(), map);

    let sample = synthetic_sample(ScenePreset::Curve, 0, 32, 64, SEQ, 3).unwrap();
    let mut records = Vec::new();
    for k in 0..2 {
        let inputs = std::array::from_fn(|t| {
            let p = std::path::PathBuf::from(format!("s{k}_f{t}.ppm"));
            write_image(dir.path().join(&p), &sample.frames[t]).unwrap();
            p
        });
        let label = std::path::PathBuf::from(format!("s{k}.pgm"));
        write_label(dir.path().join(&label), sample.label.as_ref().unwrap()).unwrap();
        records.push(Record { inputs, label });
    }
    let index = DatasetIndex { records, split: Some("train".into()), stride: Some(2), root: dir.path().to_path_buf() };
    let path = dir.path().join("train.txt");
    write_index(&path, &index).unwrap();
    let back = load_index(&path).unwrap();
    assert_eq!(back, index);
    let loaded = back.load_sample(1).unwrap();
    assert_eq!(loaded.label, sample.label);
    for (a, b) in loaded.frames.iter().zip(&sample.frames) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
    }

    std::fs::remove_file(dir.path().join("s0.pgm")).unwrap();
    assert!(load_index(&path).is_err());
}

#[test]
fn malformed_rasters_are_rejected() {
    assert!(decode_pnm(b"P3\n1 1\n255\n000").is_err());
    assert!(decode_pnm(b"P6\n2 2\n255\n\x00\x00").is_err());
    assert!(encode_ppm(&Tensor::<f32>::zeros(&[1, 2, 2])).is_err());
    assert!(encode_ppm(&Tensor::<f32>::full(&[3, 2, 2], 1.5)).is_err());
}

#[test]
fn lane_fraction_over_100_seeds() {
    for preset in ScenePreset::ALL {
        for seed in 0..100 {
            let s = synthetic_sample(preset, seed as usize, 64, 128, SEQ, seed).unwrap();
            s.validate().unwrap();
            let f = s.label.as_ref().unwrap().fraction();
            assert!((MIN_LANE_FRACTION..=MAX_LANE_FRACTION).contains(&f), "{preset} seed {seed}: {f}");
            assert!((0.01..=0.08).contains(&f));
        }
    }
}

#[test]
fn scenes_are_pure_functions_of_their_seed() {
    let a = synthetic_sample(ScenePreset::Shadow, 4, 64, 128, SEQ, 10).unwrap();
    assert_eq!(a, synthetic_sample(ScenePreset::Shadow, 4, 64, 128, SEQ, 10).unwrap());
    assert_ne!(a, synthetic_sample(ScenePreset::Shadow, 5, 64, 128, SEQ, 10).unwrap());
    assert_eq!(a.frames.len(), SEQ);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn encoded_rasters_decode(seed: u64, h in 1usize..20, w in 1usize..20) {
        let img = quantized_image(seed, h, w);
        let bytes = encode_ppm(&img).unwrap();
        let (kind, dw, dh, payload) = decode_pnm(&bytes).unwrap();
        prop_assert_eq!((kind, dw, dh, payload.len()), ("P6", w, h, 3 * h * w));
        let map = random_map(&mut rng(seed), h, w, 0.5);
        let bytes = encode_pgm(&map);
        let (kind, _, _, payload) = decode_pnm(&bytes).unwrap();
        prop_assert_eq!(kind, "P5");
        prop_assert!(payload.iter().zip(map.data()).all(|(&p, &m)| (p == 255) == (m != 0)));
    }
}
