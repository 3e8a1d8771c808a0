//! Seeded synthetic datasets with known sensitive-feature structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::schema::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, RawValue};

fn feature(name: &str, kind: FeatureKind, sensitive: bool) -> FeatureSpec {
    FeatureSpec {
        name: name.into(),
        kind,
        sensitive,
    }
}

/// Two nonsensitive reals in `[0, 1]` and one binary sensitive group.
pub fn biased_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            feature("x1", FeatureKind::Real { lo: 0.0, hi: 1.0 }, false),
            feature("x2", FeatureKind::Real { lo: 0.0, hi: 1.0 }, false),
            feature("group", FeatureKind::Categorical(vec!["a".into(), "b".into()]), true),
        ],
        "y",
    )
    .expect("valid schema")
}

/// `y = 1[x1 + x2 + 0.3 s + noise > 1]` with `s = 1` for group `b` and
/// Gaussian noise of standard deviation 0.1.
pub fn biased_benchmark(n: usize, seed: u64) -> Result<Dataset> {
    let schema = biased_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.gen();
        let x2: f64 = rng.gen();
        let s = rng.gen_bool(0.5);
        let score = x1 + x2 + if s { 0.3 } else { 0.0 } + noise.sample(&mut rng);
        let row = [
            RawValue::Real(x1),
            RawValue::Real(x2),
            RawValue::Category(if s { "b" } else { "a" }.into()),
        ];
        points.push(schema.encode_row(&row)?);
        labels.push(u8::from(score > 1.0));
    }
    Dataset::new(schema, points, labels)
}

/// Schema whose prediction-mode space has `64 * 8 * 2 * 4 * 16 * 8 = 524288`
/// points.
pub fn large_space_schema() -> FeatureSchema {
    let cats = |names: &[&str]| FeatureKind::Categorical(names.iter().map(|s| s.to_string()).collect());
    FeatureSchema::new(
        vec![
            feature("income", FeatureKind::Real { lo: 0.0, hi: 1.0 }, false),
            feature("debt", FeatureKind::Real { lo: 0.0, hi: 1.0 }, false),
            feature("tenure", FeatureKind::Real { lo: 0.0, hi: 1.0 }, false),
            feature("age", FeatureKind::Int { lo: 18, hi: 81 }, true),
            feature("race", cats(&["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7"]), true),
            feature("sex", cats(&["f", "m"]), true),
            feature("marital", cats(&["single", "married", "divorced", "widowed"]), true),
            feature("region", FeatureKind::Categorical((0..16).map(|i| format!("g{i}")).collect()), true),
            feature("religion", cats(&["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7"]), true),
        ],
        "y",
    )
    .expect("valid schema")
}

/// Rows over [`large_space_schema`] whose label mostly follows the
/// nonsensitive features, with a weak age effect.
pub fn large_space_corpus(n: usize, seed: u64) -> Result<Dataset> {
    let schema = large_space_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).expect("valid normal");
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let income: f64 = rng.gen();
        let debt: f64 = rng.gen();
        let tenure: f64 = rng.gen();
        let age: i64 = rng.gen_range(18..=81);
        let score = 1.2 * income - debt + 0.5 * tenure + 0.1 * ((age - 18) as f64 / 63.0) + noise.sample(&mut rng);
        let row = [
            RawValue::Real(income),
            RawValue::Real(debt),
            RawValue::Real(tenure),
            RawValue::Int(age),
            RawValue::Category(format!("r{}", rng.gen_range(0..8))),
            RawValue::Category(if rng.gen_bool(0.5) { "f" } else { "m" }.into()),
            RawValue::Category(["single", "married", "divorced", "widowed"][rng.gen_range(0..4)].into()),
            RawValue::Category(format!("g{}", rng.gen_range(0..16))),
            RawValue::Category(format!("c{}", rng.gen_range(0..8))),
        ];
        points.push(schema.encode_row(&row)?);
        labels.push(u8::from(score > 0.4));
    }
    Dataset::new(schema, points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Mode;

    #[test]
    fn biased_labels_follow_group() {
        let d = biased_benchmark(2000, 1).unwrap();
        assert_eq!(d.len(), 2000);
        let k = d.schema.nonsensitive_dim();
        let rate = |b: bool| {
            let ys: Vec<u8> = d
                .points
                .iter()
                .zip(&d.labels)
                .filter(|(p, _)| (p.0[k + 1] == 1.0) == b)
                .map(|(_, &y)| y)
                .collect();
            ys.iter().map(|&y| y as f64).sum::<f64>() / ys.len() as f64
        };
        assert!(rate(true) > rate(false) + 0.1);
    }

    #[test]
    fn large_space_size() {
        let s = large_space_schema();
        assert_eq!(s.assignment_space(Mode::Prediction).unwrap().size(), Some(524288));
        let d = large_space_corpus(10, 2).unwrap();
        assert_eq!(d, large_space_corpus(10, 2).unwrap());
    }
}
