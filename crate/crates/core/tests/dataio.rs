use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};

use salnet_core::dataio::*;
use salnet_core::metrics;
use salnet_core::{DensityMap, Error};

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthetic_is_seed_determined_on_disk() {
    let params = SyntheticParams::new(5, 64, 48, 3, 9);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_synthetic(a.path(), &generate_synthetic(&params).unwrap(), "train").unwrap();
    write_synthetic(b.path(), &generate_synthetic(&params).unwrap(), "train").unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    let other = SyntheticParams { seed: 10, ..params };
    assert_ne!(
        generate_synthetic(&other).unwrap().samples[0].image,
        generate_synthetic(&SyntheticParams::new(5, 64, 48, 3, 9))
            .unwrap()
            .samples[0]
            .image
    );
}

#[test]
fn samples_do_not_depend_on_dataset_size() {
    let small = generate_synthetic(&SyntheticParams::new(3, 32, 24, 2, 4)).unwrap();
    let large = generate_synthetic(&SyntheticParams::new(7, 32, 24, 2, 4)).unwrap();
    assert_eq!(small.samples[..], large.samples[..3]);
}

#[test]
fn ground_truth_peaks_at_a_blob() {
    let params = SyntheticParams::new(50, 64, 48, 3, 1);
    let data = generate_synthetic(&params).unwrap();
    for (s, centers) in data.samples.iter().zip(&data.blob_centers) {
        let (ax, ay) = s.density.argmax();
        let near = centers.iter().any(|&(cx, cy)| {
            let dx = ax as f64 - cx as f64;
            let dy = ay as f64 - cy as f64;
            (dx * dx + dy * dy).sqrt() <= params.blob_sigma
        });
        assert!(near, "{}: argmax {:?} vs {:?}", s.id, (ax, ay), centers);
    }
}

#[test]
fn brightness_baseline_beats_chance() {
    let params = SyntheticParams::new(50, 64, 48, 3, 2);
    let data = generate_synthetic(&params).unwrap();
    let mut total = 0.0;
    for s in &data.samples {
        let n = s.image.plane_len();
        let lum: Vec<f64> = (0..n)
            .map(|i| (s.image.data[i] + s.image.data[n + i] + s.image.data[2 * n + i]) / 3.0)
            .collect();
        let blurred = gaussian_blur(&lum, 64, 48, params.blob_sigma);
        let pred = DensityMap::new(64, 48, blurred).unwrap();
        total += metrics::auc_judd(&pred, &s.fixations).unwrap();
    }
    let mean = total / data.samples.len() as f64;
    assert!(mean > 0.9, "mean AUC-Judd {mean}");
}

#[test]
fn manifest_round_trip_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SyntheticParams::new(4, 32, 24, 2, 3)).unwrap();
    write_synthetic(dir.path(), &data, "val").unwrap();
    let m = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.split, "val");
    assert_eq!(m.entries.len(), 4);
    assert_eq!(m.sigma, data.params.sigma);
    let loaded = m.load_samples().unwrap();
    for (a, b) in loaded.iter().zip(&data.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.image, b.image);
        assert_eq!(a.fixations, b.fixations);
        assert!(metrics::cc(&a.density, &b.density).unwrap() > 0.9999);
    }
}

#[test]
fn manifest_rejects_missing_and_mismatched_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SyntheticParams::new(2, 32, 24, 2, 3)).unwrap();
    let mut m = write_synthetic(dir.path(), &data, "train").unwrap();
    fs::remove_file(dir.path().join("fixations/synth_00001.txt")).unwrap();
    assert!(matches!(m.load_samples(), Err(Error::Io { .. })));

    let small = DensityMap::new(8, 6, vec![0.5; 48]).unwrap();
    save_map_image(&small, &dir.path().join("small.png"), BitDepth::Eight).unwrap();
    m.entries.truncate(1);
    m.entries[0].density = Some("small.png".into());
    assert!(matches!(m.load_samples(), Err(Error::ShapeMismatch(_))));
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

#[test]
fn sixteen_bit_maps_keep_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
    let noise = DensityMap::new(
        64,
        48,
        (0..64 * 48).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    for map in [noise, metrics::center_prior(64, 48).unwrap()] {
        save_map_image(&map, &path, BitDepth::Sixteen).unwrap();
        let back = load_map_image(&path).unwrap();
        assert_eq!(back.argmax(), map.argmax());
        let rho = spearman(map.values(), back.values());
        assert!(rho > 0.999, "rho {rho}");
    }
    let data = generate_synthetic(&SyntheticParams::new(1, 64, 48, 3, 5)).unwrap();
    let density = &data.samples[0].density;
    save_map_image(density, &path, BitDepth::Sixteen).unwrap();
    assert_eq!(load_map_image(&path).unwrap().argmax(), density.argmax());
}

#[test]
fn upscaling_keeps_the_peak_within_one_coarse_pixel() {
    let map = DensityMap::from_fn(64, 48, |x, y| {
        let dx = x as f64 - 40.0;
        let dy = y as f64 - 13.0;
        (-(dx * dx + dy * dy) / 8.0).exp()
    })
    .unwrap();
    let big = resize_map(&map, 1920, 1080).unwrap();
    let (bx, by) = big.argmax();
    let (sx, sy) = (1920.0 / 64.0, 1080.0 / 48.0);
    let cx = (40.0 + 0.5) * sx;
    let cy = (13.0 + 0.5) * sy;
    assert!((bx as f64 - cx).abs() <= sx);
    assert!((by as f64 - cy).abs() <= sy);
}
