use std::path::Path;

use nncommittee::data::{read_dataset, write_dataset};
use nncommittee::{
    encode_target, generate_synthetic, load_dataset, save_dataset, split_train_test, Dataset,
    Error, Normalizer, SyntheticSpec,
};
use proptest::prelude::*;

fn nearest_mean_accuracy(spread: f64, seed: u64) -> f64 {
    let ds = generate_synthetic::<f64>(&SyntheticSpec {
        people: 22,
        trials: 10,
        dims: 9,
        seed,
        spread,
    })
    .unwrap();
    let (train, test) = split_train_test(&ds, 5).unwrap();
    let means: Vec<Vec<f64>> = train
        .by_person()
        .iter()
        .map(|g| {
            let mut m = vec![0.0; 9];
            for s in g {
                for (a, b) in m.iter_mut().zip(&s.features) {
                    *a += b / g.len() as f64;
                }
            }
            m
        })
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let hits = test
        .samples()
        .iter()
        .filter(|s| {
            let best = (0..22)
                .min_by(|&i, &j| {
                    dist(&means[i], &s.features).total_cmp(&dist(&means[j], &s.features))
                })
                .unwrap();
            best == s.person_id
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn generator_difficulty_follows_spread() {
    assert!(nearest_mean_accuracy(10.0, 1) > 0.95);
    let chance: f64 = (0..5).map(|s| nearest_mean_accuracy(1e-3, s)).sum::<f64>() / 5.0;
    assert!(chance < 0.15, "near-zero spread gives {chance}");
}

#[test]
fn generator_is_seeded() {
    let spec = SyntheticSpec {
        people: 3,
        trials: 4,
        dims: 2,
        seed: 5,
        spread: 1.0,
    };
    let a = generate_synthetic::<f64>(&spec).unwrap();
    assert_eq!(a, generate_synthetic::<f64>(&spec).unwrap());
    assert_ne!(
        a,
        generate_synthetic::<f64>(&SyntheticSpec { seed: 6, ..spec }).unwrap()
    );
    assert_eq!((a.people_count(), a.len(), a.dims()), (3, 12, 2));
}

#[test]
fn file_round_trip() {
    let ds = generate_synthetic::<f64>(&SyntheticSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dataset(&ds, &path).unwrap();
    let back: Dataset = load_dataset(&path, Some(9)).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn bad_files_name_the_problem() {
    let missing = load_dataset::<f64>("/nonexistent/data.csv", None).unwrap_err();
    assert!(missing.to_string().contains("/nonexistent/data.csv"));

    let text = "person_id,trial_id,f1,f2\n0,0,1.0,2.0\n1,0,abc,2.0\n";
    let err = read_dataset::<f64, _>(text.as_bytes(), Path::new("mem"), None).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

    let ragged = "person_id,trial_id,f1,f2\n0,0,1.0,2.0\n1,0,1.0\n";
    assert!(read_dataset::<f64, _>(ragged.as_bytes(), Path::new("mem"), None).is_err());

    let gap = "person_id,trial_id,f1\n0,0,1.0\n2,0,1.0\n";
    assert!(read_dataset::<f64, _>(gap.as_bytes(), Path::new("mem"), None).is_err());

    let dims = "person_id,trial_id,f1\n0,0,1.0\n1,0,1.0\n";
    assert!(read_dataset::<f64, _>(dims.as_bytes(), Path::new("mem"), Some(9)).is_err());
}

#[test]
fn split_sizes() {
    let ds = generate_synthetic::<f64>(&SyntheticSpec::default()).unwrap();
    let (train, test) = split_train_test(&ds, 5).unwrap();
    assert_eq!((train.len(), test.len()), (110, 110));
    assert_eq!(test.uniform_trials(), Some(5));
    assert!(split_train_test(&ds, 10).is_err());
    assert!(split_train_test(&ds, 0).is_err());
}

#[test]
fn target_encoding() {
    let t = encode_target::<f64>(2, 4).unwrap();
    assert_eq!(t.as_slice(), &[-1.0, -1.0, 1.0, -1.0]);
    assert_eq!(t.owner(), 2);
    assert!(encode_target::<f64>(4, 4).is_err());
}

proptest! {
    #[test]
    fn normalized_train_is_standardized(seed in any::<u64>(), spread in 0.1f64..5.0) {
        let ds = generate_synthetic::<f64>(&SyntheticSpec { people: 4, trials: 6, dims: 3, seed, spread }).unwrap();
        let (train, _) = split_train_test(&ds, 3).unwrap();
        let norm = Normalizer::fit(&train);
        let z = norm.apply_dataset(&train).unwrap();
        let n = z.len() as f64;
        for d in 0..3 {
            let mean = z.samples().iter().map(|s| s.features[d]).sum::<f64>() / n;
            let var = z.samples().iter().map(|s| (s.features[d] - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
        for s in train.samples() {
            let back = norm.inverse_transform(&norm.transform(&s.features).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&s.features) {
                prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn refitting_normalized_data_is_the_identity(seed in any::<u64>()) {
        let ds = generate_synthetic::<f64>(&SyntheticSpec { people: 3, trials: 6, dims: 4, seed, spread: 2.0 }).unwrap();
        let z = Normalizer::fit(&ds).apply_dataset(&ds).unwrap();
        let again = Normalizer::fit(&z);
        for (m, s) in again.mean().iter().zip(again.std()) {
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>()) {
        let ds = generate_synthetic::<f64>(&SyntheticSpec { people: 2, trials: 3, dims: 4, seed, spread: 1.0 }).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back: Dataset = read_dataset(buf.as_slice(), Path::new("mem"), Some(4)).unwrap();
        prop_assert_eq!(back, ds);
    }
}
