use fairnet::fairness::{verify, VerificationOutcome};
use fairnet::milp::Limits;
use fairnet::network::NetworkSpec;
use fairnet::schema::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, RawValue};
use fairnet::synthetic::{biased_benchmark, biased_schema};
use fairnet::training::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_separable(n: usize, seed: u64) -> Dataset {
    let schema = FeatureSchema::new(
        vec![
            FeatureSpec { name: "a".into(), kind: FeatureKind::Real { lo: -1.0, hi: 1.0 }, sensitive: false },
            FeatureSpec { name: "b".into(), kind: FeatureKind::Real { lo: -1.0, hi: 1.0 }, sensitive: false },
            FeatureSpec { name: "g".into(), kind: FeatureKind::Categorical(vec!["p".into(), "q".into()]), sensitive: true },
        ],
        "y",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    while points.len() < n {
        let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        // Margin keeps the classes strictly separable.
        if (a + b).abs() < 0.1 {
            continue;
        }
        points.push(schema
            .encode_row(&[RawValue::Real(a), RawValue::Real(b), RawValue::Category(if rng.gen_bool(0.5) { "p" } else { "q" }.into())]).unwrap());
        labels.push(u8::from(a + b > 0.0));
    }
    Dataset::new(schema, points, labels).unwrap()
}

fn net_for(d: usize, seed: u64) -> NetworkSpec {
    NetworkSpec::random(&[d, 8, 8, 1], 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn pretraining_fits_a_separable_set() {
    let data = toy_separable(400, 1);
    let (val, train) = data.split(0.25, 2);
    let cfg = TrainConfig { epochs: 150, learning_rate: 1e-2, batch_size: 32, ..Default::default() };
    let (net, records) = pretrain(&net_for(4, 3), &train, &val, &cfg).unwrap();
    assert_eq!(records.len(), 151);
    let (_, acc) = evaluate(&net, &train).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let data = toy_separable(50, 1);
    let init = net_for(4, 3);
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let (net, records) = pretrain(&init, &data, &data, &cfg).unwrap();
    assert_eq!(net, init);
    assert_eq!(records.len(), 1);
}

#[test]
fn same_seed_same_result() {
    let data = biased_benchmark(200, 4).unwrap();
    let (val, train) = data.split(0.25, 2);
    let init = net_for(4, 5);
    let cfg = TrainConfig { epochs: 10, learning_rate: 1e-2, seed: 9, ..Default::default() };
    let (a, _) = pretrain(&init, &train, &val, &cfg).unwrap();
    let (b, _) = pretrain(&init, &train, &val, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let cfg = TrainConfig { epochs: 2, ..cfg };
    let (ra, sa) = ce_fair_train(&a, &train, &val, &cfg, |_, _| Ok(())).unwrap();
    let (rb, sb) = ce_fair_train(&a, &train, &val, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(ra.to_json(), rb.to_json());
    assert_eq!(sa.chosen_epoch, sb.chosen_epoch);
}

#[test]
fn blind_model_is_fair_everywhere() {
    let data = biased_benchmark(300, 6).unwrap();
    let (val, train) = data.split(0.25, 2);
    let cfg = TrainConfig { epochs: 20, learning_rate: 1e-2, ..Default::default() };
    let (net, _) = train_blind(&net_for(4, 7), &train, &val, &cfg).unwrap();
    for x in data.points.iter().take(50) {
        let out = verify(&net, &biased_schema(), None, x, Limits::none()).unwrap();
        assert!(matches!(out, VerificationOutcome::Fair));
    }
}

#[test]
fn ce_batch_epoch_lowers_violation() {
    let data = biased_benchmark(600, 8).unwrap();
    let (val, train) = data.split(0.25, 2);
    let cfg = TrainConfig { epochs: 60, learning_rate: 1e-2, ..Default::default() };
    let (pre, _) = pretrain(&net_for(4, 9), &train, &val, &cfg).unwrap();
    let cfg = TrainConfig { epochs: 1, learning_rate: 1e-2, batch_strategy: BatchStrategy::CeBatch, ..Default::default() };
    let mut net = pre.clone();
    let mut adam = Adam::new(&net, cfg.learning_rate, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = ce_fair_epoch(&mut net, &train, &cfg, &mut adam, &mut rng).unwrap();
    assert!(first.counterexamples > 0);
    let second = ce_fair_epoch(&mut net, &train, &cfg, &mut adam, &mut rng).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&second.violations) < mean(&first.violations));
}

#[test]
fn retraining_trend_on_biased_benchmark() {
    let data = biased_benchmark(1000, 7).unwrap();
    let (train, test) = data.split(0.8, 1);
    let (tr, val) = train.split(0.8, 2);
    let pre_cfg = TrainConfig { epochs: 60, learning_rate: 1e-2, ..Default::default() };
    let (pre, _) = pretrain(&net_for(4, 3), &tr, &val, &pre_cfg).unwrap();
    let cfg = TrainConfig { epochs: 8, learning_rate: 1e-3, ..Default::default() };
    let (fair, sel) = ce_fair_train(&pre, &tr, &val, &cfg, |_, _| Ok(())).unwrap();
    assert!(sel.chosen_epoch >= 1);
    let rate = |n: &NetworkSpec| ce_rate(n, &test.schema, &test.points, Limits::none()).unwrap().unwrap();
    let (before, after) = (rate(&pre), rate(&fair));
    assert!(after < before, "ce rate {before} -> {after}");
}
