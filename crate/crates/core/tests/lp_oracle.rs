mod common;

use fairnet::lp::{lp_solve, LpStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut feasible, mut infeasible) = (0, 0);
    for trial in 0..400 {
        let n = 2 + trial % 5;
        let m = 1 + trial % 4;
        let p = common::random_lp(&mut rng, n, m);
        let sol = lp_solve(&p).unwrap();
        match common::vertex_enumeration(&p) {
            Some(best) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "trial {trial}: oracle found {best}");
                assert!((sol.objective - best).abs() <= 1e-6, "trial {trial}: {} vs {best}", sol.objective);
                assert!(p.max_violation(&sol.x) <= 1e-7);
            }
            None => {
                infeasible += 1;
                assert_eq!(sol.status, LpStatus::Infeasible, "trial {trial}");
            }
        }
    }
    assert!(feasible > 50 && infeasible > 20, "{feasible} feasible / {infeasible} infeasible");
}

#[test]
fn larger_lps_are_feasible_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let p = common::random_lp(&mut rng, 20, 12);
        let a = lp_solve(&p).unwrap();
        let b = lp_solve(&p).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if a.status == LpStatus::Optimal {
            assert!(p.max_violation(&a.x) <= 1e-7);
            assert!((p.objective_value(&a.x) - a.objective).abs() <= 1e-7);
        }
    }
}
