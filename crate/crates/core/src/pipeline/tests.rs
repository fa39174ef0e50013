use super::*;
use crate::case_model::tests::TWO_BUS;
use crate::gpe::BasisSpec;
use crate::uncertainty::{Marginal, PairCopula, VineEdge, VineKind, VineSpec};

fn input(name: &str, bus: InputTarget, marginal: Marginal) -> InputSpec {
    InputSpec { name: name.into(), bus, role: None, marginal, cap_mw: None, units: None }
}

fn load_factor(std: f64) -> InputSpec {
    input("load", InputTarget::Keyword("load-factor".into()), Marginal::Gaussian { mean: 1.0, std })
}

fn two_bus_config(inputs: Vec<InputSpec>, vine: Option<VineSpec>) -> ScenarioConfig {
    ScenarioConfig {
        case_path: "case2.m".into(),
        inputs,
        vine,
        growth: GrowthSettings::default(),
        target_bus: 2,
        n_train: 8,
        n_mc: 400,
        basis: BasisSpec::PureQuadratic,
        kernel: KernelFamily::SquaredExponential,
        seed: 7,
        output_dir: "results".into(),
        base_dir: Default::default(),
    }
}

fn two_bus() -> NetworkCase {
    parse_case(TWO_BUS).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
    assert_eq!(PipelineError::Numerical("x".into()).exit_code(), 3);
}

#[test]
fn apply_inputs_examples() {
    let case = two_bus();
    let wind = input("wind2", InputTarget::Bus(2), Marginal::Weibull { shape: 2.0, scale: 7.0 });
    let cfg = two_bus_config(vec![load_factor(0.05), wind], None);
    let base = BusInjections::from_case(&case);
    assert_eq!(apply_inputs(&case, &[1.0, 0.0], &cfg).unwrap(), base);

    let inj = apply_inputs(&case, &[1.0, 10.0], &cfg).unwrap();
    assert!((inj.p_load[1] - 0.9).abs() < 1e-15);
    assert_eq!(inj.q_load, base.q_load);

    let inj = apply_inputs(&case, &[1.1, 10.0], &cfg).unwrap();
    assert!((inj.p_load[1] - 1.0).abs() < 1e-14);

    let mut capped = cfg.clone();
    capped.inputs[1].cap_mw = Some(4.0);
    let inj = apply_inputs(&case, &[1.0, 10.0], &capped).unwrap();
    assert!((inj.p_load[1] - 0.96).abs() < 1e-15);

    let mut scale = cfg.clone();
    scale.inputs[1].role = Some(InputRole::LoadScale);
    let inj = apply_inputs(&case, &[1.0, 0.5], &scale).unwrap();
    assert!((inj.p_load[1] - 0.5).abs() < 1e-15);

    assert!(apply_inputs(&case, &[1.0], &cfg).is_err());
    let mut unknown = cfg.clone();
    unknown.inputs[1].bus = InputTarget::Bus(9);
    assert!(matches!(apply_inputs(&case, &[1.0, 1.0], &unknown), Err(PipelineError::Config(_))));
    assert!(unknown.validate_against(&case).is_err());
}

#[test]
fn config_validation() {
    let ok = two_bus_config(vec![load_factor(0.05)], None);
    ok.validate().unwrap();

    let mut c = ok.clone();
    c.n_mc = 99;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.n_train = 3;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.inputs.push(load_factor(0.1));
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.inputs[0].bus = InputTarget::Keyword("everything".into());
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.vine = Some(VineSpec::independence(VineKind::DVine, 2).unwrap());
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.target_bus = 5;
    assert!(c.validate_against(&two_bus()).is_err());
    assert!(matches!(Scenario::with_case(&c, two_bus()), Err(e) if e.exit_code() == 2));
}

#[test]
fn config_text_round_trip() {
    let wind = input("wind2", InputTarget::Bus(2), Marginal::Weibull { shape: 2.0, scale: 7.0 });
    let vine = VineSpec::new(
        VineKind::DVine,
        vec![1, 2],
        vec![VineEdge { tree: 1, index: 1, copula: PairCopula::Frank(5.736) }],
    )
    .unwrap();
    let cfg = two_bus_config(vec![load_factor(0.05), wind], Some(vine));
    let back = ScenarioConfig::from_str_with_format(&cfg.to_toml(), false).unwrap();
    assert_eq!(back, cfg);
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ScenarioConfig::from_str_with_format(&json, true).unwrap(), cfg);
    let typo = cfg.to_toml().replace("n_mc", "n_montecarlo");
    assert!(ScenarioConfig::from_str_with_format(&typo, false).is_err());
}

#[test]
fn two_bus_margin_matches_closed_form() {
    // Growth follows the nominal 100 MW load; the nose sits at 500 MW of
    // total load, so the margin is 500 - 100·f for load factor f.
    let s = Scenario::with_case(&two_bus_config(vec![load_factor(0.05)], None), two_bus()).unwrap();
    for f in [0.9, 1.0, 1.2] {
        let m = s.margin(&[f]).unwrap();
        let want = 500.0 - 100.0 * f;
        assert!((m - want).abs() < 1e-3 * want, "f = {f}: {m} vs {want}");
    }
}

#[test]
fn two_bus_surrogate_matches_direct_monte_carlo() {
    let s = Scenario::with_case(&two_bus_config(vec![load_factor(0.05)], None), two_bus()).unwrap();
    let gpe = s.run_assessment().unwrap();
    let mc = s.run_mc_benchmark().unwrap();
    assert_eq!(gpe.evaluation_digest, mc.evaluation_digest);
    assert!(mc.excluded_rows.is_empty());
    assert_eq!(gpe.margins.len(), 400);
    let rel = (gpe.stats.mean - mc.stats.mean).abs() / mc.stats.mean;
    assert!(rel < 0.005, "mean {} vs {}", gpe.stats.mean, mc.stats.mean);
    for r in [&gpe, &mc] {
        assert!(r.pdf_points.iter().all(|p| p.1 >= 0.0));
        assert!((trapezoid(&r.pdf_points) - 1.0).abs() < 1e-3);
    }
    let cmp = compare(&gpe, &mc).unwrap();
    assert!(cmp.same_evaluation_samples);
    let training = gpe.training.as_ref().unwrap();
    assert_eq!(training.n_used, 8);
    assert!(gpe.emulator.is_some());
    let names: Vec<&str> = gpe.designs.iter().map(|d| d.name.as_str()).collect();
    assert_eq!(names, ["training_uniform", "training_physical", "evaluation_uniform", "evaluation_physical"]);
}

#[test]
fn deterministic_inputs_collapse_to_a_spike() {
    let wind = input("wind2", InputTarget::Bus(2), Marginal::Gaussian { mean: 0.0, std: 1e-9 });
    let mut cfg = two_bus_config(
        vec![load_factor(1e-9), wind],
        Some(VineSpec::independence(VineKind::DVine, 2).unwrap()),
    );
    cfg.n_mc = 100;
    let s = Scenario::with_case(&cfg, two_bus()).unwrap();
    let base = s.margin(&[1.0, 0.0]).unwrap();
    let r = s.run_assessment().unwrap();
    assert!(r.stats.std < 1e-3 * r.stats.mean, "std {}", r.stats.std);
    assert!((r.stats.mean - base).abs() < 1e-3 * base);
    assert!((trapezoid(&r.pdf_points) - 1.0).abs() < 1e-3);
}

#[test]
fn zero_samples_is_an_error() {
    let mut cfg = two_bus_config(vec![load_factor(0.05)], None);
    let s = Scenario::with_case(&cfg, two_bus()).unwrap();
    cfg.n_mc = 0;
    let s0 = Scenario { config: cfg, ..s };
    assert!(matches!(s0.run_mc_benchmark(), Err(PipelineError::Config(_))));
}

#[test]
fn outputs_are_byte_deterministic() {
    let cfg = two_bus_config(vec![load_factor(0.05)], None);
    let s = Scenario::with_case(&cfg, two_bus()).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let r = s.run_assessment().unwrap();
        write_outputs(d.path(), "gpe", &r, &cfg).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for f in ["margins_gpe.csv", "pdf_gpe.csv", "summary_gpe.json", "emulator_gpe.json", "design_training_physical.csv"] {
        assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
    }
    for n in names.iter().filter(|n| n.ends_with(".csv")) {
        let a = std::fs::read(dirs[0].path().join(n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(n)).unwrap();
        assert_eq!(a, b, "{n} differs between runs");
    }
    let m = std::fs::read_to_string(dirs[0].path().join("margins_gpe.csv")).unwrap();
    assert_eq!(m.lines().count(), 401);
    assert!(m.starts_with("margin_mw\n"));
}
