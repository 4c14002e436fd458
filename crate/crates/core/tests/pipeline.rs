use salnet_core::checkpoint::ModelCheckpoint;
use salnet_core::dataio::{generate_synthetic, Sample, SyntheticParams};
use salnet_core::micronet::{FeatureStack, SgdConfig};
use salnet_core::model::{
    alignment_size, decoder_param_count, extract_multilevel, BackboneConfig, EncoderModel,
    MultiLevelDecoder, TinyBackbone,
};
use salnet_core::pipeline::{
    finetune, load_encoder, mean_loss, system_tap_channels, train_decoder, train_encoder, System,
    TrainConfig,
};

const W: usize = 32;
const H: usize = 24;

fn data(n: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic(&SyntheticParams::new(n, W, H, 2, seed))
        .unwrap()
        .samples
}

fn enc_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        input_width: W,
        input_height: H,
        epochs,
        sgd: SgdConfig {
            learning_rate: 0.001,
            schedule: vec![(5, 0.1)],
            ..SgdConfig::default()
        },
        ..TrainConfig::encoder_default()
    }
}

fn dec_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        input_width: W,
        input_height: H,
        epochs,
        ..TrainConfig::decoder_default()
    }
}

fn encoder(seed: u64, train: &[Sample], epochs: usize) -> ModelCheckpoint {
    let m = EncoderModel::new(BackboneConfig::default(), false, seed).unwrap();
    train_encoder(m, train, &enc_cfg(epochs)).unwrap()
}

#[test]
fn seven_tap_decoder_accounting() {
    let taps = [2208, 2112, 768, 384, 4032, 2688, 1344];
    assert_eq!(taps.iter().sum::<usize>(), 13_536);
    assert_eq!(decoder_param_count(&taps, false), 13_543);
    let dec = MultiLevelDecoder::new(taps.to_vec(), false, 0).unwrap();
    assert_eq!(dec.param_count(), 13_543);
}

#[test]
fn two_default_backbones_give_230_parameters() {
    let a = TinyBackbone::new(BackboneConfig::default(), 1).unwrap();
    let b = TinyBackbone::new(BackboneConfig::default(), 2).unwrap();
    let channels = system_tap_channels(&[a, b]);
    assert_eq!(channels, vec![16, 32, 64, 16, 32, 64]);
    let dec = MultiLevelDecoder::new(channels.clone(), false, 0).unwrap();
    assert_eq!(dec.param_count(), 230);
    assert_eq!(decoder_param_count(&channels, false), 230);
}

#[test]
fn fused_maps_align_to_the_largest_tap() {
    let a = TinyBackbone::new(BackboneConfig::default(), 1).unwrap();
    let b = TinyBackbone::new(BackboneConfig::default(), 2).unwrap();
    let img = FeatureStack::new(3, 64, 48, vec![0.5; 3 * 64 * 48]).unwrap();
    let mut taps = extract_multilevel(&a, &img).unwrap();
    taps.extend(extract_multilevel(&b, &img).unwrap());
    assert_eq!(alignment_size(&taps), (32, 24));
    let dec = MultiLevelDecoder::new(system_tap_channels(&[a, b]), false, 0).unwrap();
    let (map, trace) = dec.forward(&taps, 64, 48).unwrap();
    assert_eq!((map.width(), map.height()), (64, 48));
    assert_eq!(trace.fused_input.channels, 6);
    assert_eq!(
        (trace.fused_input.width, trace.fused_input.height),
        (32, 24)
    );
    assert_eq!(trace.fused_input.data.len(), 6 * 32 * 24);
}

#[test]
fn decoder_training_freezes_encoders_and_is_reproducible() {
    let train = data(12, 1);
    let encs = vec![encoder(1, &train, 1), encoder(2, &train, 1)];
    let before: Vec<Vec<u8>> = encs.iter().map(ModelCheckpoint::to_bytes).collect();
    let run = || {
        let dec = MultiLevelDecoder::new(vec![16, 32, 64, 16, 32, 64], false, 5).unwrap();
        train_decoder(&encs, dec, &train, &dec_cfg(2)).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let after: Vec<Vec<u8>> = encs.iter().map(ModelCheckpoint::to_bytes).collect();
    assert_eq!(before, after);
    // The system reloads the same backbone weights the decoder recorded.
    let sys = System::from_checkpoints(&encs, &a).unwrap();
    for (b, ck) in sys.backbones.iter().zip(&encs) {
        assert_eq!(b, &load_encoder(ck).unwrap().backbone);
    }
}

#[test]
fn predictions_are_nonnegative_deterministic_and_full_size() {
    let train = data(6, 2);
    let encs = vec![encoder(3, &train, 1)];
    let dec = MultiLevelDecoder::new(vec![16, 32, 64], false, 0).unwrap();
    let dck = train_decoder(&encs, dec, &train, &dec_cfg(1)).unwrap();
    let sys = System::from_checkpoints(&encs, &dck).unwrap();
    let img = &train[0].image;
    let a = sys.predict(img).unwrap();
    assert_eq!((a.width(), a.height()), (W, H));
    assert!(a.values().iter().all(|v| *v >= 0.0));
    assert_eq!(a, sys.predict(img).unwrap());
}

#[test]
fn checkpoints_survive_disk_round_trip() {
    let train = data(4, 3);
    let ck = encoder(4, &train, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.emlk");
    ck.save(&path).unwrap();
    let back = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let m = load_encoder(&back).unwrap();
    assert_eq!(m.tensors(), ck.tensors);
    assert_eq!(ck.descriptor.training.loss_curve.len(), 1);
}

#[test]
fn divergence_returns_last_good_checkpoint() {
    let train = data(8, 4);
    let mut cfg = enc_cfg(3);
    cfg.sgd.learning_rate = 1e30;
    cfg.batch_size = 2;
    let m = EncoderModel::new(BackboneConfig::default(), false, 1).unwrap();
    let err = train_encoder(m, &train, &cfg).unwrap_err();
    assert!(err.error.is_numerical(), "{}", err.error);
    assert!(err.last_good.is_some());
}

#[test]
fn finetune_contracts() {
    let train = data(16, 5);
    let val = data(8, 6);
    let encs = vec![encoder(1, &train, 3), encoder(2, &train, 3)];
    let dec = MultiLevelDecoder::new(vec![16, 32, 64, 16, 32, 64], false, 0).unwrap();
    let dck = train_decoder(&encs, dec, &train, &dec_cfg(3)).unwrap();
    let sys = System::from_checkpoints(&encs, &dck).unwrap();
    let before = mean_loss(&val, 1e-7, |x| sys.predict(x)).unwrap();

    // Zero encoder epochs keeps the encoders.
    let out = finetune(&encs, false, &train, &enc_cfg(0), &dec_cfg(1)).unwrap();
    assert_eq!(out.encoders, encs);

    // Same distribution: held-out loss degrades by at most 5%.
    let out = finetune(&encs, false, &train, &enc_cfg(1), &dec_cfg(3)).unwrap();
    let sys2 = System::from_checkpoints(&out.encoders, &out.decoder).unwrap();
    let after = mean_loss(&val, 1e-7, |x| sys2.predict(x)).unwrap();
    assert!(after <= 1.05 * before, "{before} -> {after}");

    // A third backbone grows K by its tap count and re-initializes the decoder.
    let mut three = encs.clone();
    three.push(encoder(7, &train, 1));
    let out3 = finetune(&three, false, &train, &enc_cfg(0), &dec_cfg(1)).unwrap();
    let sys3 = System::from_checkpoints(&out3.encoders, &out3.decoder).unwrap();
    assert_eq!(sys3.tap_count(), sys.tap_count() + 3);
    assert_ne!(out3.decoder.weights_digest(), dck.weights_digest());
    // Old encoders were not retrained.
    assert_eq!(&out3.encoders[..2], &encs[..]);
}
