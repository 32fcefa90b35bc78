//! File-format contracts: bit-exact checkpoint round trips, WAV export,
//! and records.jsonl round trips.

use sptmod_cli::{checkpoint, records, wav};
use sptmod_core::dataset::AudioBuffer;
use sptmod_core::experiment::{CellKey, GridRunRecord};
use sptmod_core::model::{solve_lengths, Spn, SpnConfig, Sptmod, SptmodConfig};
use sptmod_core::rng::Rng;

fn mini_pair<S: checkpoint::ScalarBytes>(seed: u64) -> (Sptmod<S>, Spn<S>) {
    let config = SptmodConfig::mini(6);
    let spn_config = SpnConfig::mini();
    let model = Sptmod::new(config.clone(), seed).unwrap();
    let spn = Spn::new(spn_config, &config, seed + 1).unwrap();
    (model, spn)
}

#[test]
fn checkpoint_round_trip_is_bit_exact_f32() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("ckpt");
    let (model, spn) = mini_pair::<f32>(42);
    let plan = solve_lengths(model.config(), 256).unwrap();
    checkpoint::save(&base, &model, &spn, Some(&plan)).unwrap();
    let (loaded_model, loaded_spn, loaded_plan) = checkpoint::load::<f32>(&base).unwrap();
    assert_eq!(loaded_plan.as_ref(), Some(&plan));
    assert_eq!(loaded_model.config(), model.config());
    for (a, b) in model.params().iter().zip(loaded_model.params().iter()) {
        assert_eq!(a.name, b.name);
        let bits_a: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {} drifted", a.name);
    }
    for (a, b) in spn.params().iter().zip(loaded_spn.params().iter()) {
        assert_eq!(a.value.data(), b.value.data());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact_f64() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("ckpt");
    let (model, spn) = mini_pair::<f64>(7);
    checkpoint::save(&base, &model, &spn, None).unwrap();
    let (loaded_model, _, _) = checkpoint::load::<f64>(&base).unwrap();
    for (a, b) in model.params().iter().zip(loaded_model.params().iter()) {
        let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {} drifted", a.name);
    }
}

#[test]
fn checkpoint_rejects_wrong_precision() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("ckpt");
    let (model, spn) = mini_pair::<f32>(42);
    checkpoint::save(&base, &model, &spn, None).unwrap();
    assert!(checkpoint::load::<f64>(&base).is_err());
}

#[test]
fn wav_round_trip_preserves_f32_samples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.wav");
    let mut rng = Rng::seed_from(3);
    let samples: Vec<f64> = (0..4096).map(|_| rng.range(-1.0, 1.0)).collect();
    let buffer = AudioBuffer::from_samples(samples.clone());
    wav::write_wav(&path, &buffer).unwrap();
    let loaded = wav::read_wav(&path).unwrap();
    assert_eq!(loaded.sample_rate, 44_100);
    // storage quantizes to f32; the round trip is exact at f32 resolution
    for (orig, got) in samples.iter().zip(&loaded.samples) {
        assert_eq!(*orig as f32, *got as f32);
    }
}

#[test]
fn records_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let cell = CellKey { n: 2, b: 4, l: 64 };
    let written = vec![
        GridRunRecord {
            run_id: GridRunRecord::id_for(cell, 0),
            cell,
            split: 0,
            record: None,
            error: Some("boom".into()),
        },
        GridRunRecord {
            run_id: GridRunRecord::id_for(cell, 1),
            cell,
            split: 1,
            record: None,
            error: None,
        },
    ];
    records::write_records(&path, &written).unwrap();
    let read = records::read_records(&path).unwrap();
    assert_eq!(read.len(), 2);
    assert_eq!(read[0].run_id, written[0].run_id);
    assert_eq!(read[0].error.as_deref(), Some("boom"));
    assert_eq!(read[1].split, 1);
}
