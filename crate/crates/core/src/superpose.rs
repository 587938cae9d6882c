//! Superposition rules and their validation against direct integration.
//!
//! A rule expresses the general solution through `m` particular solutions and
//! a vector of constants `lambda`: `forward(inputs, lambda)` builds a
//! solution and `extract(inputs, target)` recovers the constants of a given
//! solution. Three rules are provided:
//!
//! * [`RiccatiRule`]: three scalar solutions of a Riccati equation, one constant
//!   (the cross-ratio).
//! * [`SchwarzianRule`]: one solution `(x, v, a)` of the Kummer-Schwarz system
//!   with `c0 = 0`, three constants given by the invariants `I`, `U2`, `U3`.
//! * [`MixedRule`]: two solutions `(x, v)` of the linear system
//!   `x' = v, v' = -b1 x`, three constants, output a Kummer-Schwarz solution.
//!   Only the branch where `2 v v_i + a x_i` has the sign of `v` for both inputs
//!   is supported; anything else is reported as [`SuperposeError::SignBranch`].

use std::io::Write;

use thiserror::Error;

use crate::geometry::StatePoint;
use crate::integrator::{integrate, IntegratorError, TDependentField, Trajectory};

/// Denominators below this magnitude are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SuperposeError {
    #[error("particular solutions coincide: {0}")]
    DegenerateInputs(String),
    #[error("singular denominator in {0}")]
    SingularDenominator(String),
    #[error("the Wronskian of the two linear solutions vanishes")]
    ZeroWronskian,
    #[error("data lies off the positive sign branch: {0}")]
    SignBranch(String),
    #[error("output leaves the chart domain: {0}")]
    GuardExit(String),
    #[error("expected {expected} values for {what}, got {found}")]
    Shape { what: String, expected: usize, found: usize },
    #[error("unknown rule '{0}'")]
    UnknownRule(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

pub type Result<T> = std::result::Result<T, SuperposeError>;

pub trait SuperpositionRule: Send + Sync {
    fn id(&self) -> &'static str;
    /// Number of particular solutions.
    fn arity(&self) -> usize;
    /// Dimension of each particular solution.
    fn input_dimension(&self) -> usize;
    /// Dimension of the reconstructed solution.
    fn output_dimension(&self) -> usize;
    fn constants(&self) -> usize;
    fn forward(&self, inputs: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>>;
    fn extract(&self, inputs: &[&[f64]], target: &[f64]) -> Result<Vec<f64>>;
}

fn check_shape(rule: &dyn SuperpositionRule, inputs: &[&[f64]], other: &[f64], other_len: usize, what: &str) -> Result<()> {
    if inputs.len() != rule.arity() {
        return Err(SuperposeError::Shape { what: "inputs".into(), expected: rule.arity(), found: inputs.len() });
    }
    if let Some(bad) = inputs.iter().find(|i| i.len() != rule.input_dimension()) {
        return Err(SuperposeError::Shape {
            what: "input solution".into(),
            expected: rule.input_dimension(),
            found: bad.len(),
        });
    }
    if other.len() != other_len {
        return Err(SuperposeError::Shape { what: what.into(), expected: other_len, found: other.len() });
    }
    if inputs.iter().flat_map(|i| i.iter()).chain(other).any(|x| !x.is_finite()) {
        return Err(SuperposeError::Scenario("non-finite data".into()));
    }
    Ok(())
}

fn nonsingular(d: f64, what: &str) -> Result<f64> {
    if d.abs() < SINGULAR_EPS {
        Err(SuperposeError::SingularDenominator(what.to_string()))
    } else {
        Ok(d)
    }
}

fn finite(out: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if out.iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        Err(SuperposeError::SingularDenominator(what.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RiccatiRule;

impl SuperpositionRule for RiccatiRule {
    fn id(&self) -> &'static str {
        "riccati"
    }
    fn arity(&self) -> usize {
        3
    }
    fn input_dimension(&self) -> usize {
        1
    }
    fn output_dimension(&self) -> usize {
        1
    }
    fn constants(&self) -> usize {
        1
    }

    fn forward(&self, inputs: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, lambda, 1, "constants")?;
        let (u1, u2, u3) = distinct3(inputs)?;
        let l = lambda[0];
        let den = nonsingular((u2 - u3) - l * (u3 - u1), "riccati forward map")?;
        finite(vec![(u1 * (u2 - u3) - l * u2 * (u3 - u1)) / den], "riccati forward map")
    }

    fn extract(&self, inputs: &[&[f64]], target: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, target, 1, "target")?;
        let (u1, u2, u3) = distinct3(inputs)?;
        let y = target[0];
        let den = nonsingular((u3 - u1) * (y - u2), "cross-ratio")?;
        finite(vec![(y - u1) * (u2 - u3) / den], "cross-ratio")
    }
}

fn distinct3(inputs: &[&[f64]]) -> Result<(f64, f64, f64)> {
    let (u1, u2, u3) = (inputs[0][0], inputs[1][0], inputs[2][0]);
    if (u1 - u2).abs() < SINGULAR_EPS || (u2 - u3).abs() < SINGULAR_EPS || (u3 - u1).abs() < SINGULAR_EPS {
        return Err(SuperposeError::DegenerateInputs(format!("{u1}, {u2}, {u3}")));
    }
    Ok((u1, u2, u3))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SchwarzianRule;

impl SuperpositionRule for SchwarzianRule {
    fn id(&self) -> &'static str {
        "schwarzian"
    }
    fn arity(&self) -> usize {
        1
    }
    fn input_dimension(&self) -> usize {
        3
    }
    fn output_dimension(&self) -> usize {
        3
    }
    fn constants(&self) -> usize {
        3
    }

    fn forward(&self, inputs: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, lambda, 3, "constants")?;
        let (x2, v2, a2) = (inputs[0][0], inputs[0][1], inputs[0][2]);
        if v2 == 0.0 {
            return Err(SuperposeError::GuardExit("input has v = 0".into()));
        }
        let l1 = nonsingular(lambda[0], "lambda_1")?;
        let r = nonsingular(lambda[2] - x2, "lambda_3 - x")?;
        let out = vec![
            4.0 / (l1 * r) + lambda[1],
            4.0 * v2 / (l1 * r * r),
            (8.0 * v2 * v2 + 4.0 * a2 * r) / (l1 * r * r * r),
        ];
        let out = finite(out, "schwarzian forward map")?;
        if out[1] == 0.0 {
            return Err(SuperposeError::GuardExit("output has v = 0".into()));
        }
        Ok(out)
    }

    fn extract(&self, inputs: &[&[f64]], target: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, target, 3, "target")?;
        let (x1, v1, a1) = (target[0], target[1], target[2]);
        let (x2, v2, a2) = (inputs[0][0], inputs[0][1], inputs[0][2]);
        if v1 == 0.0 || v2 == 0.0 {
            return Err(SuperposeError::GuardExit("v = 0".into()));
        }
        let d = nonsingular(a2 * v1 - a1 * v2, "a_2 v_1 - a_1 v_2")?;
        let out = vec![
            d * d / (v1.powi(3) * v2.powi(3)),
            x1 + 2.0 * v1 * v1 * v2 / d,
            x2 - 2.0 * v1 * v2 * v2 / d,
        ];
        finite(out, "schwarzian constants")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MixedRule;

impl MixedRule {
    fn wronskian(inputs: &[&[f64]]) -> Result<f64> {
        let (x1, v1, x2, v2) = (inputs[0][0], inputs[0][1], inputs[1][0], inputs[1][1]);
        let w = v2 * x1 - v1 * x2;
        if w.abs() < SINGULAR_EPS {
            Err(SuperposeError::ZeroWronskian)
        } else {
            Ok(w)
        }
    }
}

impl SuperpositionRule for MixedRule {
    fn id(&self) -> &'static str {
        "mixed"
    }
    fn arity(&self) -> usize {
        2
    }
    fn input_dimension(&self) -> usize {
        2
    }
    fn output_dimension(&self) -> usize {
        3
    }
    fn constants(&self) -> usize {
        3
    }

    fn forward(&self, inputs: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, lambda, 3, "constants")?;
        let w = Self::wronskian(inputs)?;
        let (x1, v1, x2, v2) = (inputs[0][0], inputs[0][1], inputs[1][0], inputs[1][1]);
        let (l1, l2, l3) = (lambda[0], lambda[1], lambda[2]);
        nonsingular(l1, "lambda_1")?;
        if l1 * l2 <= 0.0 {
            return Err(SuperposeError::SignBranch(format!("lambda_1 = {l1} and lambda_2 = {l2} must share a sign")));
        }
        let sg = l1.signum();
        let (s1, s2) = (l1.abs().sqrt(), l2.abs().sqrt());
        let den = nonsingular(x2 * s1 - x1 * s2, "x_(2) sqrt|lambda_1| - x_(1) sqrt|lambda_2|")?;
        if den.signum() == w.signum() {
            return Err(SuperposeError::SignBranch("the Wronskian and the denominator share a sign".into()));
        }
        let out = vec![
            -l3 + sg * (w / den).abs() * x1 / s1,
            sg * w * w / (den * den),
            -2.0 * sg * w * w * (v2 * s1 - v1 * s2) / den.powi(3),
        ];
        finite(out, "mixed forward map")
    }

    fn extract(&self, inputs: &[&[f64]], target: &[f64]) -> Result<Vec<f64>> {
        check_shape(self, inputs, target, 3, "target")?;
        Self::wronskian(inputs)?;
        let (x1, v1, x2, v2) = (inputs[0][0], inputs[0][1], inputs[1][0], inputs[1][1]);
        let (x, v, a) = (target[0], target[1], target[2]);
        if v == 0.0 {
            return Err(SuperposeError::GuardExit("target has v = 0".into()));
        }
        let e1 = 2.0 * v * v1 + a * x1;
        let e2 = 2.0 * v * v2 + a * x2;
        for (i, e) in [(1, e1), (2, e2)] {
            nonsingular(e, "2 v v_i + a x_i")?;
            if e.signum() != v.signum() {
                return Err(SuperposeError::SignBranch(format!("2 v v_{i} + a x_{i} = {e} has the wrong sign")));
            }
        }
        let out = vec![e1 * e1 / (4.0 * v.powi(3)), e2 * e2 / (4.0 * v.powi(3)), -x + 2.0 * x1 * v * v / e1];
        finite(out, "mixed constants")
    }
}

pub fn rule_by_id(id: &str) -> Result<Box<dyn SuperpositionRule>> {
    match id {
        "riccati" => Ok(Box::new(RiccatiRule)),
        "schwarzian" => Ok(Box::new(SchwarzianRule)),
        "mixed" => Ok(Box::new(MixedRule)),
        other => Err(SuperposeError::UnknownRule(other.to_string())),
    }
}

/// Everything needed to check a rule against direct integration: the system
/// feeding the particular solutions, the system of the target, their initial
/// data and the time grid. Both systems must be driven by the same coefficients.
pub struct Scenario {
    pub rule: Box<dyn SuperpositionRule>,
    pub input_system: TDependentField,
    pub target_system: TDependentField,
    pub inputs: Vec<StatePoint>,
    pub target: StatePoint,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    /// Grid index at which the constants are extracted.
    pub extract_index: usize,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rule: String,
    pub target_names: Vec<String>,
    pub times: Vec<f64>,
    pub target: Vec<Vec<f64>>,
    pub reconstructed: Vec<Vec<f64>>,
    pub errors: Vec<f64>,
    pub max_err: f64,
    pub lambda: Vec<f64>,
    /// Per constant: `max_t |lambda(t) - lambda| / max(1, |lambda|)`.
    pub lambda_drift: Vec<f64>,
}

impl ValidationReport {
    pub fn max_lambda_drift(&self) -> f64 {
        self.lambda_drift.iter().copied().fold(0.0, f64::max)
    }

    /// CSV `t,target_<c>...,rec_<c>...,err` with a `# max_err=...` summary line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names = &self.target_names;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(names.iter().map(|n| format!("target_{n}")))
            .chain(names.iter().map(|n| format!("rec_{n}")))
            .chain(std::iter::once("err".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            write!(w, "{:.16e}", self.times[i])?;
            for x in self.target[i].iter().chain(&self.reconstructed[i]) {
                write!(w, ",{x:.16e}")?;
            }
            writeln!(w, ",{:.16e}", self.errors[i])?;
        }
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(";");
        writeln!(
            w,
            "# rule={} max_err={:.6e} lambda={} lambda_drift={}",
            self.rule,
            self.max_err,
            fmt(&self.lambda),
            fmt(&self.lambda_drift)
        )
    }
}

fn integrate_all(system: &TDependentField, starts: &[StatePoint], t0: f64, t1: f64, dt: f64) -> Result<Vec<Trajectory>> {
    starts.iter().map(|x0| Ok(integrate(system, x0, t0, t1, dt)?)).collect()
}

/// Integrate inputs and target, extract the constants at `extract_index`,
/// reconstruct along the whole grid and compare with the integrated target.
pub fn validate_rule(s: &Scenario) -> Result<ValidationReport> {
    let rule = s.rule.as_ref();
    if s.inputs.len() != rule.arity() {
        return Err(SuperposeError::Shape { what: "initial inputs".into(), expected: rule.arity(), found: s.inputs.len() });
    }
    if s.input_system.coeffs != s.target_system.coeffs {
        return Err(SuperposeError::Scenario("input and target systems must share their coefficients".into()));
    }
    let inputs = integrate_all(&s.input_system, &s.inputs, s.t0, s.t1, s.dt)?;
    let target = integrate(&s.target_system, &s.target, s.t0, s.t1, s.dt)?;
    let n = target.len();
    if s.extract_index >= n {
        return Err(SuperposeError::Scenario(format!("extraction index {} beyond {} samples", s.extract_index, n)));
    }
    let at = |i: usize| -> Vec<&[f64]> { inputs.iter().map(|tr| tr.states[i].coords()).collect() };
    let lambda = rule.extract(&at(s.extract_index), target.states[s.extract_index].coords())?;
    let mut rep = ValidationReport {
        rule: rule.id().to_string(),
        target_names: target.chart.coordinate_names().to_vec(),
        times: target.times.clone(),
        target: Vec::with_capacity(n),
        reconstructed: Vec::with_capacity(n),
        errors: Vec::with_capacity(n),
        max_err: 0.0,
        lambda_drift: vec![0.0; lambda.len()],
        lambda: lambda.clone(),
    };
    for i in 0..n {
        let ins = at(i);
        let y = target.states[i].coords();
        let rec = rule.forward(&ins, &lambda)?;
        let err = rec.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let li = rule.extract(&ins, y)?;
        for (k, (a, b)) in li.iter().zip(&lambda).enumerate() {
            rep.lambda_drift[k] = rep.lambda_drift[k].max((a - b).abs() / b.abs().max(1.0));
        }
        rep.max_err = rep.max_err.max(err);
        rep.target.push(y.to_vec());
        rep.reconstructed.push(rec);
        rep.errors.push(err);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_field, entry, ks3};
    use crate::coeffexpr::parse;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exprs(src: &[&str]) -> Vec<crate::coeffexpr::Expr> {
        src.iter().map(|s| parse(s).unwrap()).collect()
    }

    fn round_trip(rule: &dyn SuperpositionRule, inputs: &[&[f64]], target: &[f64]) -> f64 {
        let l = rule.extract(inputs, target).unwrap();
        let back = rule.forward(inputs, &l).unwrap();
        back.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn riccati_lambda_zero_is_first_input() {
        let out = RiccatiRule.forward(&[&[0.3], &[1.0], &[-2.0]], &[0.0]).unwrap();
        assert_eq!(out, vec![0.3]);
        assert!(matches!(
            RiccatiRule.forward(&[&[1.0], &[1.0], &[2.0]], &[0.5]),
            Err(SuperposeError::DegenerateInputs(_))
        ));
    }

    #[test]
    fn riccati_reconstruction_solves_the_equation() {
        let lam = [0.37];
        let t0 = 0.1;
        let h = 1e-4;
        let x = |t: f64| {
            RiccatiRule.forward(&[&[t.tan()], &[(t + 0.3).tan()], &[(t + 0.7).tan()]], &lam).unwrap()[0]
        };
        for k in 0..5 {
            let t = t0 + 0.1 * k as f64;
            let dx = (x(t + h) - x(t - h)) / (2.0 * h);
            assert!((dx - 1.0 - x(t) * x(t)).abs() < 1e-6, "{t}");
        }
    }

    #[test]
    fn schwarzian_round_trip_example() {
        assert!(round_trip(&SchwarzianRule, &[&[0.0, 1.0, 1.0]], &[1.0, 2.0, 0.0]) < 1e-9);
    }

    #[test]
    fn schwarzian_x_depends_only_on_input_x() {
        let lam = [0.8, -0.3, 2.5];
        let a = SchwarzianRule.forward(&[&[0.4, 1.0, 0.2]], &lam).unwrap();
        let b = SchwarzianRule.forward(&[&[0.4, -3.0, 7.0]], &lam).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn mixed_round_trip_and_branch() {
        let ins: [&[f64]; 2] = [&[1.0, 2.0], &[0.0, 1.0]];
        let target = [0.0, 1.0, -3.0];
        let l = MixedRule.extract(&ins, &target).unwrap();
        assert_abs_diff_eq!(l[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[2], 2.0, epsilon = 1e-15);
        assert!(round_trip(&MixedRule, &ins, &target) < 1e-9);
        assert!(matches!(MixedRule.extract(&ins, &[0.0, 1.0, -5.0]), Err(SuperposeError::SignBranch(_))));
        assert!(matches!(MixedRule.extract(&[&[1.0, 2.0], &[2.0, 4.0]], &target), Err(SuperposeError::ZeroWronskian)));
        assert!(matches!(MixedRule.forward(&ins, &[0.25, -1.0, 2.0]), Err(SuperposeError::SignBranch(_))));
    }

    #[test]
    fn mixed_free_family_is_mobius() {
        let lam = [4.0, 0.01, 0.5];
        let h = 1e-4;
        let f = |t: f64| MixedRule.forward(&[&[t, 1.0], &[1.0, 0.0]], &lam).unwrap();
        for k in 0..6 {
            let t = 0.5 * k as f64;
            let dx = (f(t + h)[0] - f(t - h)[0]) / (2.0 * h);
            assert!((dx - f(t)[1]).abs() < 1e-6);
            let da = (f(t + h)[1] - f(t - h)[1]) / (2.0 * h);
            assert!((da - f(t)[2]).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(RiccatiRule.extract(&[&[1.0]], &[0.0]), Err(SuperposeError::Shape { .. })));
        assert!(matches!(SchwarzianRule.forward(&[&[1.0, 2.0]], &[1.0, 1.0, 1.0]), Err(SuperposeError::Shape { .. })));
        assert!(rule_by_id("nope").is_err());
    }

    #[test]
    fn riccati_validation() {
        let e = entry("riccati").unwrap();
        let f = build_field(&e, &exprs(&["1", "sin(t)", "0.3"])).unwrap();
        let s = Scenario {
            rule: Box::new(RiccatiRule),
            input_system: f.clone(),
            target_system: f,
            inputs: vec![StatePoint::new(vec![-2.0]), StatePoint::new(vec![-3.0]), StatePoint::new(vec![-4.0])],
            target: StatePoint::new(vec![-5.0]),
            t0: 0.0,
            t1: 5.0,
            dt: 1e-3,
            extract_index: 0,
        };
        let r = validate_rule(&s).unwrap();
        assert!(r.max_err <= 1e-5, "{}", r.max_err);
        assert!(r.max_lambda_drift() <= 1e-8, "{}", r.max_lambda_drift());
    }

    #[test]
    fn coefficient_mismatch_is_rejected() {
        let e = ks3(0.0).unwrap();
        let s = Scenario {
            rule: Box::new(SchwarzianRule),
            input_system: build_field(&e, &exprs(&["sin(t)", "0", "1"])).unwrap(),
            target_system: build_field(&e, &exprs(&["cos(t)", "0", "1"])).unwrap(),
            inputs: vec![StatePoint::new(vec![1.0, 2.0, 1.0])],
            target: StatePoint::new(vec![0.0, 1.0, 1.0]),
            t0: 0.0,
            t1: 1.0,
            dt: 1e-2,
            extract_index: 0,
        };
        assert!(matches!(validate_rule(&s), Err(SuperposeError::Scenario(_))));
    }

    proptest! {
        #[test]
        fn riccati_round_trip(u in prop::array::uniform3(-5.0f64..5.0), y in -5.0f64..5.0) {
            let sep = |a: f64, b: f64| (a - b).abs() > 0.2;
            prop_assume!(sep(u[0], u[1]) && sep(u[1], u[2]) && sep(u[0], u[2]) && sep(y, u[1]) && sep(y, u[0]));
            let ins: [&[f64]; 3] = [&[u[0]], &[u[1]], &[u[2]]];
            prop_assert!(round_trip(&RiccatiRule, &ins, &[y]) < 1e-9 * y.abs().max(1.0));
            let perm: [&[f64]; 3] = [&[u[2]], &[u[0]], &[u[1]]];
            prop_assert!(round_trip(&RiccatiRule, &perm, &[y]) < 1e-9 * y.abs().max(1.0));
        }

        #[test]
        fn schwarzian_round_trip(x in -2.0f64..2.0, v in 0.5f64..2.0, a in -2.0f64..2.0,
                                 x2 in -2.0f64..2.0, v2 in 0.5f64..2.0, a2 in -2.0f64..2.0,
                                 sv in prop::bool::ANY, sv2 in prop::bool::ANY) {
            let v = if sv { v } else { -v };
            let v2 = if sv2 { v2 } else { -v2 };
            prop_assume!((a2 * v - a * v2).abs() > 0.2);
            let err = round_trip(&SchwarzianRule, &[&[x2, v2, a2]], &[x, v, a]);
            prop_assert!(err < 1e-9 * (1.0 + x.abs() + v.abs() + a.abs()) * 10.0, "{}", err);
        }

        #[test]
        fn mixed_round_trip(x1 in -2.0f64..2.0, v1 in -2.0f64..2.0, x2 in -2.0f64..2.0, v2 in -2.0f64..2.0,
                            x in -2.0f64..2.0, v in 0.5f64..2.0, a in -2.0f64..2.0, neg in prop::bool::ANY) {
            let (v, a) = if neg { (-v, -a) } else { (v, a) };
            let w = v2 * x1 - v1 * x2;
            let e1 = 2.0 * v * v1 + a * x1;
            let e2 = 2.0 * v * v2 + a * x2;
            prop_assume!(w.abs() > 0.2 && e1 * v > 0.1 && e2 * v > 0.1);
            let ins: [&[f64]; 2] = [&[x1, v1], &[x2, v2]];
            let err = round_trip(&MixedRule, &ins, &[x, v, a]);
            prop_assert!(err < 1e-9 * 100.0, "{}", err);
        }

        #[test]
        fn outputs_are_finite_or_errors(l in prop::array::uniform3(-3.0f64..3.0), x in prop::array::uniform3(-3.0f64..3.0)) {
            let results = [
                SchwarzianRule.forward(&[&x], &l),
                MixedRule.forward(&[&x[..2], &x[1..]], &l),
                RiccatiRule.forward(&[&x[..1], &x[1..2], &x[2..]], &l[..1]),
            ];
            for r in results.into_iter().flatten() {
                prop_assert!(r.iter().all(|v| v.is_finite()));
            }
        }
    }
}
