use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steerkit::depth::{DepthMap, RgbImage};
use steerkit::eval::{sample_sparse, synth_scene, Scene, SceneSpec};
use steerkit::io::{
    load_dataset, read_config, read_depth, read_rgb, read_sparse, write_depth, write_rgb,
    write_scene, write_sparse, DepthFormat,
};
use steerkit::Error;

fn random_depth(h: usize, w: usize, seed: u64) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DepthMap::from_fn(h, w, true, |_, _| rng.gen_range(0.3..12.0))
}

#[test]
fn pfm_is_bit_exact_for_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    let mut d = random_depth(17, 23, 1);
    for v in &mut d.values {
        *v = f64::from(*v as f32);
    }
    d.values[5] = 0.0;
    write_depth(&d, &path).unwrap();
    let back = read_depth(&path).unwrap();
    assert_eq!(back.dims(), (17, 23));
    assert!(back.metric);
    for (a, b) in d.values.iter().zip(&back.values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn pfm_rows_are_stored_bottom_up() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    let d = DepthMap::new(2, 1, vec![1.0, 2.0], true).unwrap();
    write_depth(&d, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let body = &bytes[bytes.len() - 8..];
    assert_eq!(&body[..4], &2.0f32.to_le_bytes());
    assert_eq!(&body[4..], &1.0f32.to_le_bytes());
    assert!(bytes.starts_with(b"Pf\n1 2\n-1.0\n"));
}

#[test]
fn png16_stores_millimetres() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    let d = DepthMap::new(1, 3, vec![2.0, 3.1415, 0.0], true).unwrap();
    write_depth(&d, &path).unwrap();
    let back = read_depth(&path).unwrap();
    assert_eq!(back.values[0], 2.0);
    assert!((back.values[1] - 3.1415).abs() <= 1e-3);
    assert_eq!(back.values[2], 0.0);
}

#[test]
fn png16_rejects_out_of_range_depth() {
    let dir = tempfile::tempdir().unwrap();
    let d = DepthMap::new(1, 1, vec![70.0], true).unwrap();
    assert!(matches!(
        write_depth(&d, &dir.path().join("d.png")),
        Err(Error::Data(_))
    ));
}

#[test]
fn unknown_extension_is_unsupported() {
    let d = DepthMap::filled(2, 2, 1.0, true);
    assert!(matches!(
        write_depth(&d, std::path::Path::new("x.exr")),
        Err(Error::UnsupportedFormat(_))
    ));
}

#[test]
fn malformed_pfm_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[u8]; 4] = [
        b"Pf\n4 4\n-1.0\n\0\0\0\0",
        b"P5\n1 1\n-1.0\n\0\0\0\0",
        b"Pf\n1 x\n-1.0\n\0\0\0\0",
        b"Pf\n1 1\n",
    ];
    for (i, bytes) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.pfm"));
        fs::write(&path, bytes).unwrap();
        assert!(
            matches!(read_depth(&path), Err(Error::Format { .. })),
            "case {i}"
        );
    }
    let color = dir.path().join("color.pfm");
    fs::write(&color, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(
        read_depth(&color),
        Err(Error::UnsupportedFormat(_))
    ));
}

#[test]
fn missing_file_is_io() {
    assert!(matches!(
        read_depth(std::path::Path::new("/nonexistent/d.pfm")),
        Err(Error::Io(_))
    ));
}

#[test]
fn rgb_round_trip_at_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.png");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f32> = (0..5 * 7 * 3)
        .map(|_| f32::from(rng.gen::<u8>()) / 255.0)
        .collect();
    let img = RgbImage::new(5, 7, data).unwrap();
    write_rgb(&img, &path).unwrap();
    assert_eq!(read_rgb(&path).unwrap(), img);
}

#[test]
fn sparse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let gt = random_depth(448, 608, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = sample_sparse(&gt, 13620, &mut rng).unwrap();
    write_sparse(&c, &path).unwrap();
    let back = read_sparse(&path, 448, 608).unwrap();
    assert_eq!(back, c);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("row,col,depth_m\n"));
}

#[test]
fn sparse_validation_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let dup = write("dup.csv", "row,col,depth_m\n1,1,2.0\n1,1,3.0\n");
    assert!(matches!(
        read_sparse(&dup, 4, 4),
        Err(Error::DuplicatePosition { row: 1, col: 1 })
    ));
    let oob = write("oob.csv", "row,col,depth_m\n4,0,2.0\n");
    assert!(matches!(
        read_sparse(&oob, 4, 4),
        Err(Error::OutOfBounds { .. })
    ));
    let neg = write("neg.csv", "row,col,depth_m\n0,0,-1.0\n");
    assert!(matches!(
        read_sparse(&neg, 4, 4),
        Err(Error::NonPositiveDepth { .. })
    ));
    let header = write("hdr.csv", "r,c,d\n0,0,1.0\n");
    assert!(matches!(
        read_sparse(&header, 4, 4),
        Err(Error::Format { .. })
    ));
    let junk = write("junk.csv", "row,col,depth_m\n0,zero,1.0\n");
    assert!(matches!(
        read_sparse(&junk, 4, 4),
        Err(Error::Format { .. })
    ));
}

#[test]
fn empty_sparse_file_keeps_its_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    let c = steerkit::depth::SparseDepth::empty(3, 3);
    write_sparse(&c, &path).unwrap();
    assert_eq!(read_sparse(&path, 3, 3).unwrap(), c);
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut written = Vec::new();
    for (i, fmt) in [DepthFormat::Pfm, DepthFormat::Png16]
        .into_iter()
        .enumerate()
    {
        let spec = SceneSpec::random_room(24, 32, &mut rng);
        let (rgb, gt) = synth_scene(&spec).unwrap();
        let scene = Scene {
            id: format!("s{i}"),
            rgb,
            gt,
        };
        write_scene(dir.path(), &scene, fmt).unwrap();
        written.push(scene);
    }
    // A stray image without depth is skipped.
    write_rgb(&written[0].rgb, &dir.path().join("orphan_rgb.png")).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[0].id, "s0");
    for (a, b) in loaded[0].gt.values.iter().zip(&written[0].gt.values) {
        assert_eq!(*a, f64::from(*b as f32));
    }
    for (a, b) in loaded[1].gt.values.iter().zip(&written[1].gt.values) {
        assert!((a - b).abs() <= 5e-4 + 1e-12);
    }
}

#[test]
fn config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    fs::write(&path, "k = 0.3\n# comment\nzeta=5\n").unwrap();
    let m = read_config(&path).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m["zeta"], "5");
    fs::write(&path, "k = 0.3\nk = 0.4\n").unwrap();
    assert!(matches!(read_config(&path), Err(Error::Format { .. })));
}
