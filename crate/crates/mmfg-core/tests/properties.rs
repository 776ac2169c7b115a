//! Property tests for the metric machinery and the control/grid contracts.

use mmfg_core::control::{ControlBounds, FeedbackControl};
use mmfg_core::grid::TimeGrid;
use mmfg_core::measure::{
    brute_force_wasserstein_path, rho_path, wasserstein_path, wasserstein_path_prefix,
    PathMeasure,
};
use proptest::prelude::*;

fn small_path_measure(atoms: usize, nodes: usize) -> impl Strategy<Value = PathMeasure> {
    proptest::collection::vec(-2.0f64..2.0, atoms * nodes)
        .prop_map(move |paths| PathMeasure::uniform(paths, nodes, 1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rho_is_a_truncated_metric(
        a in proptest::collection::vec(-3.0f64..3.0, 6),
        b in proptest::collection::vec(-3.0f64..3.0, 6),
        c in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let dab = rho_path(&a, &b, 1).unwrap();
        let dba = rho_path(&b, &a, 1).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert!(dab <= 1.0 && dab >= 0.0);
        prop_assert_eq!(rho_path(&a, &a, 1).unwrap(), 0.0);
        // rho itself is a squared-sup metric truncated at one; its square
        // root satisfies the triangle inequality.
        let dac = rho_path(&a, &c, 1).unwrap();
        let dcb = rho_path(&c, &b, 1).unwrap();
        prop_assert!(dab.sqrt() <= dac.sqrt() + dcb.sqrt() + 1e-12);
    }

    #[test]
    fn wasserstein_metric_axioms_on_small_clouds(
        mu in small_path_measure(3, 4),
        nu in small_path_measure(3, 4),
        ka in small_path_measure(3, 4),
    ) {
        let dmn = wasserstein_path(&mu, &nu).unwrap();
        let dnm = wasserstein_path(&nu, &mu).unwrap();
        prop_assert_eq!(dmn, dnm);
        prop_assert!(dmn <= 1.0);
        prop_assert_eq!(wasserstein_path(&mu, &mu).unwrap(), 0.0);
        let dmk = wasserstein_path(&mu, &ka).unwrap();
        let dkn = wasserstein_path(&ka, &nu).unwrap();
        prop_assert!(dmn <= dmk + dkn + 1e-9);
    }

    #[test]
    fn assignment_equals_enumeration(
        mu in small_path_measure(4, 3),
        nu in small_path_measure(4, 3),
    ) {
        let exact = wasserstein_path(&mu, &nu).unwrap();
        let brute = brute_force_wasserstein_path(&mu, &nu).unwrap();
        prop_assert!((exact - brute).abs() < 1e-12);
    }

    #[test]
    fn prefix_distance_non_decreasing(
        mu in small_path_measure(3, 5),
        nu in small_path_measure(3, 5),
    ) {
        let mut last = 0.0f64;
        for upto in 0..5 {
            let d = wasserstein_path_prefix(&mu, &nu, upto).unwrap();
            prop_assert!(d + 1e-12 >= last);
            last = d;
        }
    }

    #[test]
    fn controls_never_exit_their_set(
        scale in -5.0f64..5.0,
        offset in -3.0f64..3.0,
        lo in -2.0f64..-0.1,
        hi in 0.1f64..2.0,
        xs in proptest::collection::vec(-10.0f64..10.0, 8),
    ) {
        let bounds = ControlBounds::new(vec![lo], vec![hi]).unwrap();
        let c = FeedbackControl::from_fn(1, 0.0, bounds, move |_, x, out| {
            out[0] = scale * x[0] + offset;
        });
        for x in xs {
            let u = c.eval1(0.3, x);
            prop_assert!(u >= lo && u <= hi);
        }
    }

    #[test]
    fn grid_lengths_follow_from_construction(
        horizon in 0.1f64..10.0,
        steps in 1usize..500,
    ) {
        let grid = TimeGrid::new(horizon, steps).unwrap();
        prop_assert_eq!(grid.len(), steps + 1);
        prop_assert_eq!(grid.node(0), 0.0);
        prop_assert_eq!(grid.node(steps), horizon);
        prop_assert!((grid.dt() - horizon / steps as f64).abs() < 1e-15);
    }
}
