#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use salnet_core::checkpoint::ModelCheckpoint;
use salnet_core::model::{BackboneConfig, EncoderModel, MultiLevelDecoder};
use salnet_core::pipeline::{
    decoder_checkpoint, encoder_checkpoint, system_tap_channels, TrainConfig,
};

pub fn salnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salnet"))
        .args(args)
        .output()
        .expect("salnet runs")
}

/// Runs `salnet` with `dir` as the working directory.
pub fn salnet_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("salnet runs")
}

/// Runs `salnet` and panics with its stderr unless it exits 0.
pub fn salnet_ok(args: &[&str]) -> Output {
    let out = salnet(args);
    assert!(
        out.status.success(),
        "salnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Relative path and bytes of every file under `dir`, sorted by path.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

pub fn tree_digest(dir: &Path) -> String {
    let mut h = Sha256::new();
    for (rel, bytes) in tree(dir) {
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Untrained encoder and decoder checkpoints for the given input size.
pub fn untrained_system(
    dir: &Path,
    width: usize,
    height: usize,
    encoders: usize,
) -> (Vec<PathBuf>, PathBuf) {
    let enc_cfg = TrainConfig {
        input_width: width,
        input_height: height,
        ..TrainConfig::encoder_default()
    };
    let mut cks: Vec<ModelCheckpoint> = Vec::new();
    let mut paths = Vec::new();
    for seed in 0..encoders as u64 {
        let m = EncoderModel::new(BackboneConfig::default(), false, seed + 1).unwrap();
        let ck = encoder_checkpoint(&m, &enc_cfg, Vec::new());
        let path = dir.join(format!("enc{seed}.emlk"));
        ck.save(&path).unwrap();
        paths.push(path);
        cks.push(ck);
    }
    let backbones: Vec<_> = cks
        .iter()
        .map(|ck| salnet_core::pipeline::load_backbone(ck).unwrap())
        .collect();
    let digests: Vec<String> = cks.iter().map(ModelCheckpoint::weights_digest).collect();
    let dec = MultiLevelDecoder::new(system_tap_channels(&backbones), false, 0).unwrap();
    let dec_cfg = TrainConfig {
        input_width: width,
        input_height: height,
        ..TrainConfig::decoder_default()
    };
    let dck = decoder_checkpoint(&dec, &backbones, &digests, &dec_cfg, Vec::new());
    let dpath = dir.join("dec.emlk");
    dck.save(&dpath).unwrap();
    (paths, dpath)
}

/// Writes an RGB noise PNG.
pub fn noise_png(path: &Path, width: usize, height: usize, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * width * height)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let img = salnet_core::micronet::FeatureStack::new(3, width, height, data).unwrap();
    salnet_core::dataio::save_rgb_image(&img, path).unwrap();
}

/// Image size of a PNG on disk.
pub fn png_size(path: &Path) -> (usize, usize) {
    let m = salnet_core::dataio::load_map_image(path).unwrap();
    (m.width(), m.height())
}
