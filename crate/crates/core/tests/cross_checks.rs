//! Checks that tie independent parts of the library together.

use tubelight::batch::{with_workers, RayBlock};
use tubelight::stats::{ks_critical_value, ks_distance, EmpiricalCdf};
use tubelight::strip2d::{simulate_2d, undershoot_ratio_law};
use tubelight::wienerhopf::{solve_min_iterative, Forcing, SolveOptions, WienerHopfProblem};

#[test]
fn solver_matches_monte_carlo_undershoot_law() {
    let t = 0.5;
    let problem = WienerHopfProblem::strip2d(Forcing::U2d { t }, 40.0, 0.25, 1e-6).unwrap();
    let sol = solve_min_iterative(&problem, &SolveOptions::default()).unwrap();
    for (i, s) in [5.0, 20.0].into_iter().enumerate() {
        let law = undershoot_ratio_law(s, &[t], 400 * (s * s) as u64, &RayBlock::new(31, i as u64 * 1_000_000, 40_000)).unwrap();
        let (mc, se) = (law.prob[0], law.std_error[0]);
        let w = sol.value_at(s);
        assert!((w - mc).abs() < 4.0 * se + 0.005, "s = {s}: solver {w}, Monte Carlo {mc} +- {se}");
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let block = RayBlock::new(5, 0, 3000);
    let one = with_workers(1, || simulate_2d(50.0, 1_000_000, &block)).unwrap().unwrap();
    let four = with_workers(4, || simulate_2d(50.0, 1_000_000, &block)).unwrap().unwrap();
    assert_eq!(one, four);
}

#[test]
fn exit_heights_spread_over_the_aperture() {
    let batch = simulate_2d(100.0, 3_000_000, &RayBlock::new(8, 0, 20_000)).unwrap();
    let heights = batch.exit_heights();
    assert!(heights.iter().all(|y| (0.0..=1.0).contains(y)));
    let n = heights.len();
    let d = ks_distance(&EmpiricalCdf::new(heights).unwrap(), |y| y.clamp(0.0, 1.0));
    // the exit height is only asymptotically uniform; allow a small finite-s gap
    assert!(d < ks_critical_value(n, 0.01) + 0.02, "KS = {d} over {n} exits");
}
