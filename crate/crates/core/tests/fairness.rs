mod common;

use common::*;
use fairnet::fairness::{enumerate_predict, fair_predict, verify, verify_max_violation, VerificationOutcome, ENUMERATION_CAP};
use fairnet::milp::Limits;
use fairnet::network::sigmoid;
use fairnet::schema::{FeatureKind, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_majority(points: &[(Vec<usize>, fairnet::schema::EncodedPoint, f64)], t: f64) -> u8 {
    let ones = points.iter().filter(|p| p.2 >= t).count();
    u8::from(2 * ones >= points.len())
}

#[test]
fn verify_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut ces, mut fairs) = (0, 0);
    for _ in 0..150 {
        let schema = random_schema(&mut rng, 512);
        let net = random_small_net(&mut rng, schema.input_dim());
        let x = random_point(&schema, &mut rng);
        let t = net.logit_threshold();
        let y = net.decide(&x.0).unwrap();
        let all = brute_force(&net, &schema, &x);
        let exists = all.iter().any(|p| u8::from(p.2 >= t) != y);
        match verify(&net, &schema, None, &x, Limits::none()).unwrap() {
            VerificationOutcome::Counterexample(ce) => {
                assert!(exists);
                assert_ne!(net.decide(&ce.point.0).unwrap(), y);
                let k = schema.nonsensitive_dim();
                assert_eq!(ce.point.0[..k], x.0[..k]);
                ces += 1;
            }
            VerificationOutcome::Fair => {
                assert!(!exists);
                fairs += 1;
            }
            VerificationOutcome::Unknown => panic!("no limit was set"),
        }
    }
    assert!(ces > 10 && fairs > 10, "{ces} / {fairs}");
}

#[test]
fn max_violation_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..120 {
        let schema = random_schema(&mut rng, 512);
        let net = random_small_net(&mut rng, schema.input_dim());
        let x = random_point(&schema, &mut rng);
        let t = net.logit_threshold();
        let y = net.decide(&x.0).unwrap();
        let px = net.probability(&x.0);
        let best = brute_force(&net, &schema, &x)
            .iter()
            .filter(|p| u8::from(p.2 >= t) != y)
            .map(|p| (sigmoid(p.2) - px).abs())
            .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
        let got = verify_max_violation(&net, &schema, None, &x, Mode::Prediction, Limits::none()).unwrap();
        match (best, got) {
            (Some(b), VerificationOutcome::Counterexample(ce)) => assert!((b - ce.violation).abs() < 1e-6, "{b} vs {}", ce.violation),
            (None, VerificationOutcome::Fair) => {}
            (b, g) => panic!("oracle {b:?}, solver {g:?}"),
        }
    }
}

#[test]
fn fair_predict_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..150 {
        let schema = random_schema(&mut rng, 512);
        let net = random_small_net(&mut rng, schema.input_dim());
        let x = random_point(&schema, &mut rng);
        let all = brute_force(&net, &schema, &x);
        let want = oracle_majority(&all, net.logit_threshold());
        assert_eq!(enumerate_predict(&net, &schema, &x, ENUMERATION_CAP).unwrap(), want);
        assert_eq!(fair_predict(&net, &schema, None, &x, Limits::none()).unwrap(), want);
    }
}

#[test]
fn forced_ties_go_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut tested = 0;
    while tested < 30 {
        let schema = random_schema(&mut rng, 512);
        // A net reading one column of a two-category group splits A(x) in half.
        let pick = schema.sensitive_features().find(|&i| match &schema.features()[i].kind {
            FeatureKind::Categorical(c) => c.len() == 2,
            _ => false,
        });
        let Some(f) = pick else { continue };
        let col = schema.span(f).start;
        let scale = if rng.gen_bool(0.5) { 6.0 } else { -6.0 };
        let net = single_column_net(schema.input_dim(), col, scale);
        let x = random_point(&schema, &mut rng);
        assert_eq!(fair_predict(&net, &schema, None, &x, Limits::none()).unwrap(), 1);
        assert_eq!(enumerate_predict(&net, &schema, &x, ENUMERATION_CAP).unwrap(), 1);
        tested += 1;
    }
}

#[test]
fn fair_prediction_constant_over_assignments() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let schema = random_schema(&mut rng, 64);
        let net = random_small_net(&mut rng, schema.input_dim());
        let x = random_point(&schema, &mut rng);
        let labels: Vec<u8> = brute_force(&net, &schema, &x)
            .iter()
            .map(|p| fair_predict(&net, &schema, None, &p.1, Limits::none()).unwrap())
            .collect();
        assert!(labels.windows(2).all(|w| w[0] == w[1]));
    }
}
