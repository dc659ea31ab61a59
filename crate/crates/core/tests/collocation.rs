use pathbench_core::collocation::{
    derivative_check, geometric_oracle, hessian_check, lgl_rule, solve_ocp, transcribe, CollocationSettings, Nlp, OcpDefinition,
    SpeedMode,
};
use pathbench_core::geom::Point2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario() -> OcpDefinition {
    OcpDefinition {
        start: Point2::new(400.0, 400.0),
        dest: Point2::new(-200.0, -400.0),
        zone_center: Point2::new(0.0, 0.0),
        zone_radius: 240.0,
        speed: 200.0,
        speed_mode: SpeedMode::Equality,
    }
}

fn mesh(intervals: usize, nodes: usize) -> CollocationSettings {
    CollocationSettings {
        intervals,
        nodes,
        ..CollocationSettings::default()
    }
}

#[test]
fn reference_instance_converges_inside_bracket() {
    let ocp = scenario();
    let (sol, oracle) = solve_ocp(&ocp, &CollocationSettings::default()).unwrap();
    assert!(sol.converged, "violation {} stationarity {}", sol.max_violation, sol.stationarity);
    assert!(sol.max_violation <= 1e-6);
    assert!((5.26..=5.60).contains(&sol.t_f), "t_f = {}", sol.t_f);
    assert!(sol.t_f >= oracle.t_min - 1e-3);
    let rule = lgl_rule::<f64>(8).unwrap();
    assert!(sol.zone_intrusion(&ocp, &rule, 10) <= 1e-3 * ocp.zone_radius);
    let first = sol.states.first().unwrap();
    let last = sol.states.last().unwrap();
    assert!(Point2::new(first[0], first[1]).dist(ocp.start) < 1e-3);
    assert!(Point2::new(last[0], last[1]).dist(ocp.dest) < 1e-3);
    for s in &sol.states {
        assert!((s[2].hypot(s[3]) - 200.0).abs() < 1e-3);
    }
}

#[test]
fn mesh_refinement_agrees() {
    let coarse = solve_ocp(&scenario(), &mesh(4, 8)).unwrap().0;
    let fine = solve_ocp(&scenario(), &mesh(8, 8)).unwrap().0;
    assert!(coarse.converged && fine.converged);
    assert!((coarse.t_f - fine.t_f).abs() <= 1e-3 * fine.t_f, "{} vs {}", coarse.t_f, fine.t_f);
}

#[test]
fn no_obstacle_solve_is_the_chord() {
    let ocp = OcpDefinition {
        zone_radius: 0.0,
        speed_mode: SpeedMode::Capped,
        ..scenario()
    };
    let (sol, oracle) = solve_ocp(&ocp, &CollocationSettings::default()).unwrap();
    assert!(sol.converged);
    let chord = ocp.start.dist(ocp.dest);
    assert!((sol.t_f - oracle.t_min).abs() <= 1e-4 * oracle.t_min);
    let dir = ocp.dest.sub(ocp.start).scale(1.0 / chord);
    for s in &sol.states {
        let off = Point2::new(s[0], s[1]).sub(ocp.start).cross(dir).abs();
        assert!(off <= 1e-4 * chord, "offset {off}");
    }
}

#[test]
fn clear_chord_with_zone_present() {
    let ocp = OcpDefinition {
        dest: Point2::new(-400.0, 400.0),
        ..scenario()
    };
    let (sol, oracle) = solve_ocp(&ocp, &mesh(4, 6)).unwrap();
    assert!(sol.converged);
    assert!((sol.t_f - oracle.t_min).abs() < 1e-3);
}

#[test]
fn transcription_derivatives_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (mode, radius) in [(SpeedMode::Equality, 240.0), (SpeedMode::Capped, 240.0), (SpeedMode::Capped, 0.0)] {
        let ocp = OcpDefinition {
            speed_mode: mode,
            zone_radius: radius,
            ..scenario()
        };
        let p = transcribe(&ocp, 3, 5).unwrap();
        for _ in 0..4 {
            let x: Vec<f64> = (0..p.num_vars()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let err = derivative_check(&p, &x, 1e-3);
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }
}

#[test]
fn guess_is_dimensionally_consistent() {
    let ocp = scenario();
    let p = transcribe(&ocp, 6, 8).unwrap();
    let oracle = geometric_oracle(ocp.start, ocp.dest, ocp.zone_center, ocp.zone_radius, ocp.speed).unwrap();
    let g = p.initial_guess(&oracle);
    assert_eq!(g.len(), p.num_vars());
    assert!((g[p.tf_index()] * p.scaling.time() - 1.05 * oracle.t_min).abs() < 1e-12);
    assert!(p.constraints(&g).max_violation().is_finite());
}

#[test]
fn solution_csv_has_one_row_per_node() {
    let (sol, _) = solve_ocp(&scenario(), &mesh(2, 5)).unwrap();
    let csv = sol.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,t,px,py,vx,vy,ux,uy"));
    assert_eq!(lines.count(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_bounds_chord_and_stays_outside(
        sx in -900.0f64..900.0, sy in -900.0f64..900.0,
        ex in -900.0f64..900.0, ey in -900.0f64..900.0,
        r in 10.0f64..300.0,
    ) {
        let s = Point2::new(sx, sy);
        let e = Point2::new(ex, ey);
        prop_assume!(s.norm() > r + 1.0 && e.norm() > r + 1.0 && s.dist(e) > 1.0);
        let o = geometric_oracle(s, e, Point2::new(0.0, 0.0), r, 200.0).unwrap();
        prop_assert!(o.length >= s.dist(e) - 1e-9);
        for k in 0..=200 {
            let (p, _) = o.sample(o.length * k as f64 / 200.0);
            prop_assert!(p.norm() >= r - 1e-7);
        }
    }
}

#[test]
fn transcription_hessian_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in [SpeedMode::Equality, SpeedMode::Capped] {
        let ocp = OcpDefinition {
            speed_mode: mode,
            ..scenario()
        };
        let p = transcribe(&ocp, 2, 4).unwrap();
        let x: Vec<f64> = (0..p.num_vars()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = p.constraints(&x);
        let we: Vec<f64> = (0..c.eq.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wi: Vec<f64> = (0..c.ineq.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let err = hessian_check(&p, &x, &we, &wi, 1e-3);
        assert!(err < 1e-6, "{mode:?}: {err}");
    }
}
