#![allow(dead_code)]

use fairnet::lp::{Direction, LpProblem, Sense};
use fairnet::network::{Layer, NetworkSpec};
use fairnet::schema::{EncodedPoint, FeatureKind, FeatureSchema, FeatureSpec, Mode, RawValue};
use rand::Rng;

/// Random schema with 1-3 nonsensitive reals and 1-3 discrete sensitive
/// features whose assignment space has at most `max_space` points.
pub fn random_schema(rng: &mut impl Rng, max_space: u64) -> FeatureSchema {
    loop {
        let mut features = Vec::new();
        for i in 0..rng.gen_range(1..=3) {
            features.push(FeatureSpec {
                name: format!("n{i}"),
                kind: FeatureKind::Real {
                    lo: -1.0,
                    hi: rng.gen_range(0.5..3.0),
                },
                sensitive: false,
            });
        }
        for i in 0..rng.gen_range(1..=3) {
            let kind = if rng.gen_bool(0.5) {
                FeatureKind::Categorical((0..rng.gen_range(2..=4)).map(|c| format!("c{c}")).collect())
            } else {
                let lo = rng.gen_range(0..5);
                FeatureKind::Int {
                    lo,
                    hi: lo + rng.gen_range(1..=12),
                }
            };
            features.push(FeatureSpec {
                name: format!("s{i}"),
                kind,
                sensitive: true,
            });
        }
        // Interleave so the layout logic is exercised.
        let shift = rng.gen_range(0..features.len());
        features.rotate_left(shift);
        let schema = FeatureSchema::new(features, "y").unwrap();
        let size = schema.assignment_space(Mode::Prediction).unwrap().size().unwrap();
        if size <= max_space {
            return schema;
        }
    }
}

/// Random raw row for `schema`, encoded.
pub fn random_point(schema: &FeatureSchema, rng: &mut impl Rng) -> EncodedPoint {
    let raw: Vec<RawValue> = schema
        .features()
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Categorical(c) => RawValue::Category(c[rng.gen_range(0..c.len())].clone()),
            FeatureKind::Int { lo, hi } => RawValue::Int(rng.gen_range(*lo..=*hi)),
            FeatureKind::Real { lo, hi } => RawValue::Real(rng.gen_range(*lo..=*hi)),
        })
        .collect();
    schema.encode_row(&raw).unwrap()
}

/// Random ReLU net with random biases.
pub fn random_net(rng: &mut impl Rng, input: usize, hidden: &[usize]) -> NetworkSpec {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut net = NetworkSpec::random(&widths, 0.5, rng).unwrap();
    for l in &mut net.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    net
}

pub fn random_hidden(rng: &mut impl Rng) -> Vec<usize> {
    (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=16)).collect()
}

/// Net whose logit is `scale * (x[col] - 0.5)`.
pub fn single_column_net(d: usize, col: usize, scale: f64) -> NetworkSpec {
    let mut w = vec![0.0; d];
    w[col] = 1.0;
    NetworkSpec::new(
        vec![
            Layer::new(w, vec![0.0], d).unwrap(),
            Layer::new(vec![scale], vec![-0.5 * scale], 1).unwrap(),
        ],
        0.5,
    )
    .unwrap()
}

/// Every point of `A(x)` with its logit.
pub fn brute_force(net: &NetworkSpec, schema: &FeatureSchema, x: &EncodedPoint) -> Vec<(Vec<usize>, EncodedPoint, f64)> {
    let space = schema.assignment_space(Mode::Prediction).unwrap();
    space
        .iter()
        .map(|a| {
            let p = space.apply(x, &a);
            let z = net.logit(&p.0);
            (a, p, z)
        })
        .collect()
}

/// Optimum of a small LP by enumerating every basic solution: each choice
/// of `n` tight constraints among rows and bounds. `None` when infeasible.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    // Each candidate hyperplane as (a, b) meaning a.x = b.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        planes.push((a.clone(), p.lower[j]));
        planes.push((a, p.upper[j]));
    }
    for c in &p.constraints {
        let mut a = vec![0.0; n];
        for &(j, v) in &c.coeffs {
            a[j] += v;
        }
        planes.push((a, c.rhs));
    }
    let mut best: Option<f64> = None;
    let mut pick = Vec::new();
    choose(&planes, n, 0, &mut pick, &mut |rows| {
        let a: Vec<Vec<f64>> = rows.iter().map(|&r| planes[r].0.clone()).collect();
        let b: Vec<f64> = rows.iter().map(|&r| planes[r].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if p.max_violation(&x) <= 1e-9 {
                let v = p.objective_value(&x);
                best = Some(match (best, p.direction) {
                    (None, _) => v,
                    (Some(b), Direction::Minimize) => b.min(v),
                    (Some(b), Direction::Maximize) => b.max(v),
                });
            }
        }
    });
    best
}

fn choose(planes: &[(Vec<f64>, f64)], k: usize, from: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in from..planes.len() {
        pick.push(i);
        choose(planes, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Random feasible-or-not LP with `n` variables in small boxes.
pub fn random_lp(rng: &mut impl Rng, n: usize, m: usize) -> LpProblem {
    let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..3.0)).collect();
    let dir = if rng.gen_bool(0.5) {
        Direction::Minimize
    } else {
        Direction::Maximize
    };
    let mut p = LpProblem::new(lower, upper, dir);
    for j in 0..n {
        p.objective[j] = rng.gen_range(-1.0..1.0);
    }
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.7) {
                coeffs.push((j, rng.gen_range(-2.0..2.0)));
            }
        }
        let sense = match rng.gen_range(0..5) {
            0 => Sense::Eq,
            1 | 2 => Sense::Le,
            _ => Sense::Ge,
        };
        let rhs = rng.gen_range(-1.5..1.5);
        p.add(coeffs, sense, rhs);
    }
    p
}

/// Random net with 1-3 hidden layers of width 2-16.
pub fn random_small_net(rng: &mut impl Rng, input: usize) -> NetworkSpec {
    let hidden = random_hidden(rng);
    random_net(rng, input, &hidden)
}
