use std::f64::consts::PI;

use dlk_core::catalog::{build_field, entry, ks3, ks3_prolonged, mixed_joint};
use dlk_core::coeffexpr::{parse, Expr};
use dlk_core::geometry::StatePoint;
use dlk_core::integrator::{integrate, Trajectory};
use dlk_core::invariants::{drift_report, named_invariant};
use dlk_core::superpose::{validate_rule, MixedRule, RiccatiRule, Scenario, SchwarzianRule};

fn exprs(src: &[&str]) -> Vec<Expr> {
    src.iter().map(|s| parse(s).unwrap()).collect()
}

fn pt(v: &[f64]) -> StatePoint {
    StatePoint::new(v.to_vec())
}

#[test]
fn coupled_riccati_casimir_is_conserved() {
    let e = entry("coupled_riccati").unwrap();
    let f = build_field(&e, &exprs(&["1", "sin(t)", "0.3"])).unwrap();
    let tr = integrate(&f, &pt(&[-2.0, -3.0, -4.0, -5.0]), 0.0, 5.0, 1e-3).unwrap();
    let rep = drift_report("C", e.function("C").unwrap(), &tr).unwrap();
    assert!(rep.max_rel_drift <= 1e-6, "{}", rep.max_rel_drift);
}

#[test]
fn coupled_riccati_always_blows_up_before_t_ten() {
    let e = entry("coupled_riccati").unwrap();
    let f = build_field(&e, &exprs(&["1", "sin(t)", "0.3"])).unwrap();
    let err = integrate(&f, &pt(&[-2.0, -3.0, -4.0, -5.0]), 0.0, 10.0, 1e-3).unwrap_err();
    assert!(err.partial().unwrap().len() > 5000);
}

#[test]
fn pair_invariants_along_prolonged_ks3() {
    let e = ks3_prolonged(0.0, 2).unwrap();
    let f = build_field(&e, &exprs(&["sin(t)", "0", "1"])).unwrap();
    let tr = integrate(&f, &pt(&[0.0, 1.0, 1.0, 1.0, 2.0, 1.0]), PI, PI + 5.0, 1e-3).unwrap();
    for name in ["I", "U2", "U3", "F2", "F3"] {
        let rep = drift_report(name, &named_invariant(name).unwrap(), &tr).unwrap();
        assert!(rep.max_rel_drift <= 1e-6, "{name}: {}", rep.max_rel_drift);
    }
}

#[test]
fn mixed_invariants_along_the_joint_system() {
    let e = mixed_joint().unwrap();
    let f = build_field(&e, &e.default_coeffs).unwrap();
    let tr = integrate(&f, &pt(&[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, -3.0]), 0.0, 3.0, 1e-3).unwrap();
    for name in ["F1mixed", "F2mixed", "F3mixed"] {
        let rep = drift_report(name, &named_invariant(name).unwrap(), &tr).unwrap();
        assert!(rep.max_rel_drift <= 1e-6, "{name}: {}", rep.max_rel_drift);
    }
}

#[test]
fn trajectory_csv_round_trip_keeps_the_drift() {
    let e = entry("coupled_riccati").unwrap();
    let f = build_field(&e, &e.default_coeffs).unwrap();
    let tr = integrate(&f, &pt(&[-2.0, -3.0, -4.0, -5.0]), 0.0, 1.0, 1e-2).unwrap();
    let back = Trajectory::read_csv(tr.to_csv_string().as_bytes(), &e.chart, &e.id).unwrap();
    assert_eq!(back.states, tr.states);
    let c = e.function("C").unwrap();
    assert_eq!(drift_report("C", c, &back).unwrap(), drift_report("C", c, &tr).unwrap());
}

#[test]
fn riccati_rule_round_trip() {
    let e = entry("riccati").unwrap();
    let f = build_field(&e, &exprs(&["1", "sin(t)", "0.3"])).unwrap();
    let s = Scenario {
        rule: Box::new(RiccatiRule),
        input_system: f.clone(),
        target_system: f,
        inputs: vec![pt(&[-2.0]), pt(&[-3.0]), pt(&[-4.0])],
        target: pt(&[-5.0]),
        t0: 0.0,
        t1: 5.0,
        dt: 1e-3,
        extract_index: 0,
    };
    let r = validate_rule(&s).unwrap();
    assert!(r.max_err <= 1e-5 && r.max_lambda_drift() <= 1e-6, "{} {}", r.max_err, r.max_lambda_drift());
}

#[test]
fn schwarzian_rule_round_trip() {
    let e = ks3(0.0).unwrap();
    let f = build_field(&e, &exprs(&["sin(t)", "0", "1"])).unwrap();
    let s = Scenario {
        rule: Box::new(SchwarzianRule),
        input_system: f.clone(),
        target_system: f,
        inputs: vec![pt(&[1.0, 2.0, 1.0])],
        target: pt(&[0.0, 1.0, 1.0]),
        t0: PI,
        t1: PI + 5.0,
        dt: 1e-3,
        extract_index: 0,
    };
    let r = validate_rule(&s).unwrap();
    assert!(r.max_err <= 1e-5 && r.max_lambda_drift() <= 1e-6, "{} {}", r.max_err, r.max_lambda_drift());
}

#[test]
fn mixed_rule_round_trip() {
    let coeffs = exprs(&["0.5+0.1*t", "0", "1"]);
    let s = Scenario {
        rule: Box::new(MixedRule),
        input_system: build_field(&entry("linear2d").unwrap(), &coeffs).unwrap(),
        target_system: build_field(&ks3(0.0).unwrap(), &coeffs).unwrap(),
        inputs: vec![pt(&[1.0, 2.0]), pt(&[0.0, 1.0])],
        target: pt(&[0.0, 1.0, -3.0]),
        t0: 0.0,
        t1: 3.0,
        dt: 1e-3,
        extract_index: 0,
    };
    let r = validate_rule(&s).unwrap();
    assert!(r.max_err <= 1e-4 && r.max_lambda_drift() <= 1e-5, "{} {}", r.max_err, r.max_lambda_drift());
    for (got, want) in r.lambda.iter().zip([0.25, 1.0, 2.0]) {
        assert!((got - want).abs() <= 1e-12);
    }
}
