use std::fs;

use beatagg::io::checkpoint::{self, CheckpointMeta};
use beatagg::io::synth::beat_grid;
use beatagg::io::{
    generate_synthetic, load_checkpoint, npy, parse_annotations, read_annotations, read_features, save_checkpoint,
    write_beats, write_features, write_synthetic, Checkpoint, Manifest, SynthSpec,
};
use beatagg::train::Dataset;
use beatagg::{AblationMask, BeatSequence, Error, FeatureTensor, Model, ModelConfig, MsamConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(mask: AblationMask) -> Model {
    let cfg = ModelConfig {
        msam: MsamConfig {
            channel_dim: 3,
            ..MsamConfig::default()
        },
        hidden: 5,
    };
    Model::init(2, 4, &cfg, mask, 9).unwrap()
}

fn ckpt(mask: AblationMask) -> Checkpoint {
    Checkpoint {
        model: small_model(mask),
        meta: CheckpointMeta {
            model_config: ModelConfig::default(),
            train_config: TrainConfig::default(),
            best_val_loss: Some(0.25),
            best_epoch: Some(3),
            seed: 9,
            channels: 2,
            features: 4,
            frame_rate_hz: 100.0,
        },
    }
}

#[test]
fn features_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.npy");
    let h = FeatureTensor::from_fn(2, 3, 5, 50.0, |c, i, j| (c * 15 + i * 5 + j) as f64 * 0.25).unwrap();
    write_features(&path, &h).unwrap();
    assert!(npy::sidecar_path(&path).exists());
    assert_eq!(read_features(&path, None).unwrap(), h);
    // explicit rate overrides the sidecar
    assert_eq!(read_features(&path, Some(25.0)).unwrap().frame_rate_hz(), 25.0);

    let flat = dir.path().join("flat.npy");
    fs::write(&flat, npy::encode(&[3, 4], &[0.0; 12]).unwrap()).unwrap();
    assert!(matches!(read_features(&flat, Some(1.0)), Err(Error::Rank(2))));
    assert!(read_features(&dir.path().join("missing.npy"), Some(1.0)).unwrap_err().is_io());
}

#[test]
fn annotations_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.beats");
    let b = BeatSequence::with_positions(vec![0.5, 1.0, 1.5, 2.0], vec![3, 4, 1, 2]).unwrap();
    write_beats(&path, &b).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), b);
    let plain = BeatSequence::new(vec![0.25, 0.75]).unwrap();
    write_beats(&path, &plain).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), plain);
    match parse_annotations("0.5 1\n0.4 2\n", "x") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_and_disabled_heads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bfm");
    for mask in AblationMask::table_order() {
        let c = ckpt(mask);
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let bytes = fs::read(&path).unwrap();
        let has = |name: &str| bytes.windows(name.len()).any(|w| w == name.as_bytes());
        assert_eq!(has("msam.temporal."), mask.temporal);
        assert_eq!(has("msam.frequency."), mask.frequency);
        assert_eq!(has("msam.channel."), mask.channel);
    }
}

#[test]
fn checkpoint_corruption_is_detected() {
    let bytes = checkpoint::encode(&ckpt(AblationMask::FULL)).unwrap();
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(checkpoint::decode(&flipped, "x"), Err(Error::Checksum { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::decode(&magic, "x"), Err(Error::BadMagic(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(checkpoint::decode(&version, "x"), Err(Error::Version { found: 9, .. })));
    assert!(matches!(
        checkpoint::decode(&bytes[..bytes.len() - 1], "x"),
        Err(Error::Truncated { .. })
    ));
}

#[test]
fn readers_never_panic_on_garbage() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let valid_npy = npy::encode(&[1, 2, 3], &[1.0; 6]).unwrap();
    let valid_ckpt = checkpoint::encode(&ckpt(AblationMask::FULL)).unwrap();
    for _ in 0..3000 {
        let mut bytes = match rng.random_range(0..3) {
            0 => valid_npy.clone(),
            1 => valid_ckpt.clone(),
            _ => (0..rng.random_range(0..300)).map(|_| rng.random()).collect(),
        };
        if !bytes.is_empty() {
            for _ in 0..rng.random_range(1..5) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
            if rng.random_bool(0.3) {
                bytes.truncate(rng.random_range(0..bytes.len()));
            }
        }
        let _ = npy::decode(&bytes, "fuzz");
        let _ = checkpoint::decode(&bytes, "fuzz");
        let _ = parse_annotations(&String::from_utf8_lossy(&bytes), "fuzz");
        let _ = serde_json::from_slice::<Manifest>(&bytes);
    }
}

#[test]
fn synthetic_grids_have_expected_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let duration = rng.random_range(1.0..60.0);
        let bpm = rng.random_range(40.0..240.0);
        let period = 60.0 / bpm;
        let phase = rng.random_range(0.0..period);
        let grid = beat_grid(duration, bpm, phase, 0.0);
        let want = ((duration - phase) / period).ceil() as usize;
        assert!(grid.len().abs_diff(want) <= 1 && grid.len() >= want.saturating_sub(1));
        assert!(grid.iter().all(|&t| t < duration));
        assert!(grid.last().map_or(true, |&t| t + period >= duration));
    }
}

#[test]
fn synthetic_datasets_are_reproducible_on_disk() {
    let spec = SynthSpec {
        pieces: 10,
        min_duration_s: 5.0,
        max_duration_s: 8.0,
        ..SynthSpec::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_synthetic(&spec, a.path()).unwrap();
    write_synthetic(&spec, b.path()).unwrap();
    for rel in ["manifest.json", "features/synth_000.npy", "features/synth_009.json", "annotations/synth_004.beats"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    let manifest = Manifest::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 10);
    assert!(manifest.entries.iter().all(|e| !e.feature_path.starts_with('/')));
    let ds = Dataset::load(&manifest).unwrap();
    let gen = generate_synthetic(&spec).unwrap();
    for (p, g) in ds.pieces.iter().zip(&gen) {
        // stored as f32 and 6-decimal text
        for (x, y) in p.features.data().iter().zip(g.features.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(p.beats.positions(), g.beats.positions());
    }
    fs::remove_file(a.path().join("annotations/synth_001.beats")).unwrap();
    assert!(Manifest::load(&a.path().join("manifest.json")).is_err());
}

/// A logistic probe on channel-averaged frame features separates beat frames from the rest.
#[test]
fn synthetic_beats_are_linearly_learnable() {
    let spec = SynthSpec {
        pieces: 6,
        min_duration_s: 10.0,
        max_duration_s: 12.0,
        ..SynthSpec::default()
    };
    let mut rows = Vec::new();
    for p in generate_synthetic(&spec).unwrap() {
        let [n, f, t] = p.features.shape();
        let frames = p.beats.to_frames(spec.frame_rate_hz, t);
        for j in 0..t {
            let x: Vec<f64> = (0..f).map(|i| (0..n).map(|c| p.features.get(c, i, j)).sum::<f64>() / n as f64).collect();
            rows.push((x, frames.binary_search(&j).is_ok()));
        }
    }
    let f = rows[0].0.len();
    let (mut w, mut b) = (vec![0.0; f], 0.0);
    for _ in 0..300 {
        let mut gw = vec![0.0; f];
        let mut gb = 0.0;
        for (x, y) in &rows {
            let z: f64 = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - f64::from(u8::from(*y));
            gb += err;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
        }
        let scale = 5.0 / rows.len() as f64;
        b -= scale * gb * 10.0;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= scale * g * 10.0;
        }
    }
    let correct = rows
        .iter()
        .filter(|(x, y)| (b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() > 0.0) == *y)
        .count();
    let acc = correct as f64 / rows.len() as f64;
    assert!(acc >= 0.99, "{acc}");
}
