mod common;

use common::{base_solution, jacobian_fd_error, load_case};
use loadmargin::powerflow::{mismatch, solve_nr, BusInjections, PowerFlowOptions, VoltageState};

#[test]
fn converged_mismatch_is_below_tolerance() {
    for name in ["case2", "case9", "case57"] {
        let case = load_case(name);
        let sol = base_solution(&case);
        assert!(sol.converged, "{name}");
        let m = mismatch(&case, &sol.v_mag, &sol.v_ang, &BusInjections::from_case(&case)).unwrap();
        let worst = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 1e-8, "{name}: {worst:e}");
    }
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    for name in ["case2", "case9", "case57"] {
        let err = jacobian_fd_error(&load_case(name));
        assert!(err < 1e-6, "{name}: {err:e}");
    }
}

#[test]
fn warm_start_from_solution_needs_no_iterations() {
    let case = load_case("case57");
    let sol = base_solution(&case);
    let again = solve_nr(&case, &BusInjections::from_case(&case), &sol.state(), &PowerFlowOptions::default()).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 1);
    assert!(sol.iterations >= 2);
}

#[test]
fn active_power_balance_leaves_small_positive_losses() {
    for name in ["case9", "case57"] {
        let case = load_case(name);
        let sol = base_solution(&case);
        let inj = BusInjections::from_case(&case);
        let slack = case.buses().iter().position(|b| b.kind == loadmargin::case_model::BusKind::Slack).unwrap();
        let scheduled_gen: f64 = inj.p_gen.iter().enumerate().filter(|(i, _)| *i != slack).map(|(_, g)| g).sum();
        let load: f64 = inj.p_load.iter().sum();
        let losses = sol.p_slack / case.base_mva() + scheduled_gen - load;
        assert!(losses > 0.0 && losses < 0.05 * load, "{name}: losses {losses}");
    }
}

#[test]
fn flat_start_matches_file_start() {
    let case = load_case("case9");
    let a = base_solution(&case);
    let b = solve_nr(&case, &BusInjections::from_case(&case), &VoltageState::flat(&case), &PowerFlowOptions::default())
        .unwrap();
    assert!(b.converged);
    for (x, y) in a.v_mag.iter().zip(&b.v_mag) {
        assert!((x - y).abs() < 1e-8);
    }
}
