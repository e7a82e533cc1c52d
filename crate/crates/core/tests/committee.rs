use nncommittee::committee::average_expert_mse;
use nncommittee::{
    bem_reduction_check, fit, generate_synthetic, init_weights, split_train_test, Committee,
    MlpTopology, Normalizer, StreamMode, SyntheticSpec, TrainConfig,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn order_of_members_does_not_matter(
        seeds in prop::collection::vec(any::<u64>(), 2..5),
        x in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let topo = MlpTopology::new(3, 4, 2).unwrap();
        let ms: Vec<_> = seeds.iter().map(|&s| init_weights::<f64>(topo, s)).collect();
        let mut rev = ms.clone();
        rev.reverse();
        let a = Committee::new(ms).unwrap().combine(&x).unwrap();
        let b = Committee::new(rev).unwrap().combine(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn shifting_every_output_bias_shifts_the_mean(
        seeds in prop::collection::vec(any::<u64>(), 1..4),
        x in prop::collection::vec(-2.0f64..2.0, 3),
        c in -3.0f64..3.0,
    ) {
        let topo = MlpTopology::new(3, 4, 2).unwrap();
        let ms: Vec<_> = seeds.iter().map(|&s| init_weights::<f64>(topo, s)).collect();
        let shifted: Vec<_> = ms
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.b2_mut().iter_mut().for_each(|b| *b += c);
                m
            })
            .collect();
        let a = Committee::new(ms).unwrap().combine(&x).unwrap();
        let b = Committee::new(shifted).unwrap().combine(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u + c - v).abs() < 1e-12);
        }
    }
}

#[test]
fn committee_never_worse_than_average_member() {
    let ds = generate_synthetic::<f64>(&SyntheticSpec {
        people: 4,
        trials: 10,
        dims: 4,
        seed: 8,
        spread: 1.5,
    })
    .unwrap();
    let (train, test) = split_train_test(&ds, 5).unwrap();
    let norm = Normalizer::fit(&train);
    let (train, test) = (
        norm.apply_dataset(&train).unwrap(),
        norm.apply_dataset(&test).unwrap(),
    );
    let topo = MlpTopology::new(4, 5, 4).unwrap();
    for triple in 0..5u64 {
        let members: Vec<_> = (0..3)
            .map(|m| {
                fit(topo, &train, &TrainConfig::mse().with_seed(triple * 3 + m))
                    .unwrap()
                    .0
            })
            .collect();
        let c = Committee::new(members.clone()).unwrap();
        for data in [&train, &test] {
            assert!(c.mse(data).unwrap() <= average_expert_mse(&members, data).unwrap() + 1e-12);
        }
    }
}

#[test]
fn error_averaging_ratio() {
    let r = bem_reduction_check(3, 200_000, 1, StreamMode::Independent).unwrap();
    assert!((r - 1.0 / 3.0).abs() < 0.01, "{r}");
    let r = bem_reduction_check(3, 200_000, 1, StreamMode::Duplicated).unwrap();
    assert!((r - 1.0).abs() < 1e-12, "{r}");
}
