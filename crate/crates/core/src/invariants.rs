//! Constants of motion: the pullback of the `sl(2)` Casimir `e1 e3 - e2^2`
//! through a triple of Hamiltonian functions, closed-form invariants of the
//! prolonged Kummer-Schwarz system and of the mixed linear/Kummer-Schwarz
//! system, and drift measurement along trajectories.

use std::io::Write;

use nalgebra::DVector;
use thiserror::Error;

use crate::catalog::{self, CatalogEntry, CatalogError};
use crate::geometry::{Chart, GeometryError, HamiltonianPair, ScalarField, StatePoint, VectorField};
use crate::integrator::Trajectory;
use crate::prolong::{self, ProlongError};

/// Ids accepted by [`named_invariant`].
pub const NAMED_INVARIANTS: [&str; 8] = ["I", "F2", "F3", "U2", "U3", "F1mixed", "F2mixed", "F3mixed"];

/// Smallest `|I|` at which `log|I|` is evaluated.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InvariantError {
    #[error("unknown invariant '{0}'")]
    Unknown(String),
    #[error("state {index} (t = {t}) is outside the domain of {name}")]
    GuardExit { name: String, index: usize, t: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Prolong(#[from] ProlongError),
}

pub type Result<T> = std::result::Result<T, InvariantError>;

/// Three Hamiltonian pairs on one chart, meant to satisfy
/// `{f1,f2} = f1`, `{f1,f3} = 2 f2`, `{f2,f3} = f3`.
#[derive(Debug, Clone)]
pub struct Sl2Triple {
    pub pairs: [HamiltonianPair; 3],
}

impl Sl2Triple {
    pub fn new(pairs: [HamiltonianPair; 3]) -> Result<Self> {
        let c = pairs[0].chart().clone();
        for p in &pairs[1..] {
            c.ensure_compatible(p.chart())?;
        }
        Ok(Self { pairs })
    }

    /// The triple of the Hamiltonian table of `form` on the first three basis fields.
    pub fn from_entry(entry: &CatalogEntry, form: &str) -> Result<Self> {
        Self::new([
            entry.hamiltonian_pair(form, 0)?,
            entry.hamiltonian_pair(form, 1)?,
            entry.hamiltonian_pair(form, 2)?,
        ])
    }

    pub fn function(&self, k: usize) -> &ScalarField {
        &self.pairs[k].hamiltonian
    }

    /// Largest deviation from the three bracket relations over `samples`.
    pub fn relation_residual(&self, samples: &[StatePoint]) -> Result<f64> {
        let f = |k: usize, p: &StatePoint| self.function(k).eval(p);
        let pb = |i: usize, j: usize, p: &StatePoint| crate::geometry::poisson_bracket(&self.pairs[i], self.function(j), p);
        samples.iter().try_fold(0.0_f64, |acc, p| {
            let r = [
                pb(0, 1, p)? - f(0, p)?,
                pb(0, 2, p)? - 2.0 * f(1, p)?,
                pb(1, 2, p)? - f(2, p)?,
            ];
            Ok(r.iter().fold(acc, |a, x| a.max(x.abs())))
        })
    }
}

/// `f1 f3 - f2^2` with its product-rule gradient.
pub fn sl2_casimir(tr: &Sl2Triple) -> ScalarField {
    let [f1, f2, f3] = [0, 1, 2].map(|k| tr.function(k).clone());
    let (g1, g2, g3) = (f1.clone(), f2.clone(), f3.clone());
    let (d1, d2, d3) = (f1.clone(), f2.clone(), f3.clone());
    let chart = f1.chart().clone();
    ScalarField::new(&chart, move |x| {
        let b = f2.eval_raw(x);
        f1.eval_raw(x) * f3.eval_raw(x) - b * b
    })
    .with_gradient(move |x| {
        g1.gradient_raw(x) * g3.eval_raw(x) + g3.gradient_raw(x) * g1.eval_raw(x)
            - g2.gradient_raw(x) * (2.0 * g2.eval_raw(x))
    })
    .with_domain(move |x| d1.in_domain(x) && d2.in_domain(x) && d3.in_domain(x))
}

/// Chart `(x_1, v_1, a_1, x_2, v_2, a_2)` of two Kummer-Schwarz copies.
pub fn ks3_pair_chart() -> Result<Chart> {
    Ok(prolong::prolong_chart(&catalog::ks3_chart(), 2)?)
}

/// Chart `(x_1, v_1, x_2, v_2, x, v, a)` of the mixed system.
pub fn mixed_chart() -> Result<Chart> {
    Ok(catalog::mixed_joint()?.chart)
}

/// `lin + N/E`, with `lin` a constant linear form and the gradient from the quotient rule.
fn affine_plus_ratio<N, DN, E, DE>(chart: &Chart, lin: Vec<(usize, f64)>, num: N, dnum: DN, den: E, dden: DE) -> ScalarField
where
    N: Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static,
    DN: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    E: Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static,
    DE: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
{
    let n = chart.dimension();
    let lin2 = lin.clone();
    let (num2, den2, den3) = (num.clone(), den.clone(), den.clone());
    ScalarField::new(chart, move |x| lin.iter().map(|(i, c)| c * x[*i]).sum::<f64>() + num(x) / den(x))
        .with_gradient(move |x| {
            let e = den2(x);
            let mut g = dnum(x) / e - dden(x) * (num2(x) / (e * e));
            for (i, c) in &lin2 {
                g[*i] += c;
            }
            debug_assert_eq!(g.len(), n);
            g
        })
        .with_domain(move |x| den3(x) != 0.0)
}

fn vec6(entries: &[(usize, f64)]) -> DVector<f64> {
    let mut g = DVector::zeros(6);
    for (i, v) in entries {
        g[*i] += v;
    }
    g
}

fn vec7(entries: &[(usize, f64)]) -> DVector<f64> {
    let mut g = DVector::zeros(7);
    for (i, v) in entries {
        g[*i] += v;
    }
    g
}

/// `a_2 v_1 - a_1 v_2`.
fn wr(x: &[f64]) -> f64 {
    x[5] * x[1] - x[2] * x[4]
}

fn dwr(x: &[f64]) -> DVector<f64> {
    vec6(&[(1, x[5]), (2, -x[4]), (4, -x[2]), (5, x[1])])
}

/// `2 v v_i + a x_i` for copy `i` of the mixed chart.
fn mixed_e(i: usize) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static {
    move |p: &[f64]| 2.0 * p[5] * p[2 * i + 1] + p[6] * p[2 * i]
}

fn mixed_de(i: usize) -> impl Fn(&[f64]) -> DVector<f64> + Send + Sync + Clone + 'static {
    move |p: &[f64]| vec7(&[(2 * i + 1, 2.0 * p[5]), (2 * i, p[6]), (5, 2.0 * p[2 * i + 1]), (6, p[2 * i])])
}

fn mixed_square(chart: &Chart, i: usize) -> ScalarField {
    let (e, de) = (mixed_e(i), mixed_de(i));
    let (e2, e3) = (e.clone(), e.clone());
    ScalarField::new(chart, move |p| {
        let q = e(p);
        q * q / (4.0 * p[5].powi(3))
    })
    .with_gradient(move |p| {
        let (q, v) = (e2(p), p[5]);
        let f = q * q / (4.0 * v.powi(3));
        let mut g = de(p) * (2.0 * q / (4.0 * v.powi(3)));
        g[5] -= 3.0 * f / v;
        g
    })
    .with_domain(move |p| e3(p) != 0.0)
}

/// A closed-form invariant with analytic gradient.
pub fn named_invariant(id: &str) -> Result<ScalarField> {
    let f = match id {
        "I" => {
            let c = ks3_pair_chart()?;
            ScalarField::new(&c, |x| {
                let d = wr(x);
                d * d / (x[1].powi(3) * x[4].powi(3))
            })
            .with_gradient(|x| {
                let d = wr(x);
                let den = x[1].powi(3) * x[4].powi(3);
                let i = d * d / den;
                let mut g = dwr(x) * (2.0 * d / den);
                g[1] -= 3.0 * i / x[1];
                g[4] -= 3.0 * i / x[4];
                g
            })
        }
        "F2" => affine_plus_ratio(
            &ks3_pair_chart()?,
            vec![(0, 1.0), (3, 1.0)],
            |x| 2.0 * x[1] * x[4] * (x[1] - x[4]),
            |x| vec6(&[(1, 4.0 * x[1] * x[4] - 2.0 * x[4] * x[4]), (4, 2.0 * x[1] * x[1] - 4.0 * x[1] * x[4])]),
            wr,
            dwr,
        ),
        "F3" => affine_plus_ratio(
            &ks3_pair_chart()?,
            vec![(0, 1.0), (3, -1.0)],
            |x| 2.0 * x[1] * x[4] * (x[1] + x[4]),
            |x| vec6(&[(1, 4.0 * x[1] * x[4] + 2.0 * x[4] * x[4]), (4, 2.0 * x[1] * x[1] + 4.0 * x[1] * x[4])]),
            wr,
            dwr,
        ),
        "U2" => affine_plus_ratio(
            &ks3_pair_chart()?,
            vec![(0, 1.0)],
            |x| 2.0 * x[1] * x[1] * x[4],
            |x| vec6(&[(1, 4.0 * x[1] * x[4]), (4, 2.0 * x[1] * x[1])]),
            wr,
            dwr,
        ),
        "U3" => affine_plus_ratio(
            &ks3_pair_chart()?,
            vec![(3, 1.0)],
            |x| -2.0 * x[1] * x[4] * x[4],
            |x| vec6(&[(1, -2.0 * x[4] * x[4]), (4, -4.0 * x[1] * x[4])]),
            wr,
            dwr,
        ),
        "F1mixed" => mixed_square(&mixed_chart()?, 0),
        "F2mixed" => mixed_square(&mixed_chart()?, 1),
        "F3mixed" => affine_plus_ratio(
            &mixed_chart()?,
            vec![(4, -1.0)],
            |p| 2.0 * p[0] * p[5] * p[5],
            |p| vec7(&[(0, 2.0 * p[5] * p[5]), (5, 4.0 * p[0] * p[5])]),
            mixed_e(0),
            mixed_de(0),
        ),
        other => return Err(InvariantError::Unknown(other.to_string())),
    };
    Ok(f)
}

/// `log|f|`, defined where `|f| > 1e-12`.
pub fn log_abs(f: &ScalarField) -> ScalarField {
    f.compose(|v| v.abs().ln(), |v| 1.0 / v, |v| v.abs() > LOG_GUARD)
}

/// The directional derivative `Z f`. Its own gradient is left to finite differences.
pub fn lie_symmetry_pushforward_invariant(z: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    z.chart().ensure_compatible(f.chart())?;
    let (z, f2, fd) = (z.clone(), f.clone(), f.clone());
    Ok(ScalarField::new(f.chart(), move |x| f2.gradient_raw(x).dot(&z.eval_raw(x))).with_domain(move |x| fd.in_domain(x)))
}

/// Values of an invariant along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max_abs_drift: f64,
    pub max_rel_drift: f64,
}

impl InvariantReport {
    pub fn from_values(name: &str, times: Vec<f64>, values: Vec<f64>) -> Self {
        let v0 = values.first().copied().unwrap_or(0.0);
        let max_abs_drift = values.iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
        Self { name: name.to_string(), times, values, max_abs_drift, max_rel_drift: max_abs_drift / v0.abs().max(1.0) }
    }

    /// CSV `t,value` with a trailing `# max_abs_drift=..., max_rel_drift=...` line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:.16e},{v:.16e}")?;
        }
        writeln!(w, "# max_abs_drift={:.6e}, max_rel_drift={:.6e}", self.max_abs_drift, self.max_rel_drift)
    }
}

/// Evaluate `f` at every state of `traj`.
pub fn drift_report(name: &str, f: &ScalarField, traj: &Trajectory) -> Result<InvariantReport> {
    f.chart().ensure_compatible(&traj.chart)?;
    let mut values = Vec::with_capacity(traj.len());
    for (index, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let v = if f.in_domain(s.coords()) { f.eval_raw(s.coords()) } else { f64::NAN };
        if !v.is_finite() {
            return Err(InvariantError::GuardExit { name: name.to_string(), index, t: *t });
        }
        values.push(v);
    }
    Ok(InvariantReport::from_values(name, traj.times.clone(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{entry, ks3_prolonged};
    use crate::geometry::{central_gradient, poisson_bracket};
    use approx::assert_abs_diff_eq;

    fn pt(v: &[f64]) -> StatePoint {
        StatePoint::new(v.to_vec())
    }

    fn ks3_pair_samples(n: usize, seed: u64) -> Vec<StatePoint> {
        ks3_prolonged(0.0, 2)
            .unwrap()
            .sample_domain
            .with_accept(|x| x[1].abs() >= 0.5 && x[4].abs() >= 0.5 && wr(x).abs() >= 0.3)
            .sample(n, seed)
            .unwrap()
    }

    #[test]
    fn example_values() {
        let p = pt(&[0.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(named_invariant("I").unwrap().eval(&p).unwrap(), 1.0);
        assert_eq!(named_invariant("F2").unwrap().eval(&p).unwrap(), 0.0);
        assert!(named_invariant("nope").is_err());
        assert!(named_invariant("F2").unwrap().eval(&pt(&[0.0, 1.0, 1.0, 0.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn i_is_symmetric_under_swap() {
        let i = named_invariant("I").unwrap();
        for p in ks3_pair_samples(20, 4) {
            let q = prolong::swap_copies(p.coords(), 3, 0, 1);
            assert_abs_diff_eq!(i.eval_raw(p.coords()), i.eval_raw(&q), epsilon = 1e-12 * i.eval_raw(&q).abs().max(1.0));
        }
    }

    #[test]
    fn upsilon_relations() {
        let f = |s| named_invariant(s).unwrap();
        let (f2, f3, u2, u3) = (f("F2"), f("F3"), f("U2"), f("U3"));
        for p in ks3_pair_samples(50, 5) {
            let x = p.coords();
            let scale = f2.eval_raw(x).abs().max(f3.eval_raw(x).abs()).max(1.0);
            assert!((u2.eval_raw(x) - (f2.eval_raw(x) + f3.eval_raw(x)) / 2.0).abs() <= 1e-12 * scale);
            assert!((u3.eval_raw(x) - (f2.eval_raw(x) - f3.eval_raw(x)) / 2.0).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn analytic_gradients_match_fd() {
        for id in NAMED_INVARIANTS {
            let f = named_invariant(id).unwrap();
            let pts = if id.ends_with("mixed") {
                catalog::mixed_joint()
                    .unwrap()
                    .sample_domain
                    .with_accept(|p| p[5].abs() >= 0.5 && mixed_e(0)(p).abs() > 0.3 && mixed_e(1)(p).abs() > 0.3)
                    .sample(30, 6)
                    .unwrap()
            } else {
                ks3_pair_samples(30, 6)
            };
            for p in pts {
                let exact = f.gradient_raw(p.coords());
                let fd = central_gradient(&|x: &[f64]| f.eval_raw(x), p.coords());
                let scale = exact.amax().max(1.0);
                assert!((exact - fd).amax() <= 1e-5 * scale, "{id} at {:?}", p.coords());
            }
        }
    }

    #[test]
    fn casimir_examples() {
        let cr = entry("coupled_riccati").unwrap();
        let cas = sl2_casimir(&Sl2Triple::from_entry(&cr, "omega_R").unwrap());
        let c = cr.function("C").unwrap();
        for p in cr.sample(30, 2).unwrap() {
            assert_abs_diff_eq!(cas.eval(&p).unwrap(), c.eval(&p).unwrap(), epsilon = 1e-9 * c.eval(&p).unwrap().abs().max(1.0));
        }
        let ks = entry("ks3").unwrap();
        let base = sl2_casimir(&Sl2Triple::from_entry(&ks, "omega_3KS").unwrap());
        for p in ks.sample(20, 2).unwrap() {
            assert_abs_diff_eq!(base.eval(&p).unwrap(), 0.0, epsilon = 1e-9);
        }
        let pk = ks3_prolonged(0.0, 2).unwrap();
        let tr = Sl2Triple::from_entry(&pk, "omega_3KS").unwrap();
        let cas = sl2_casimir(&tr);
        let i = named_invariant("I").unwrap();
        for p in pk.sample(30, 2).unwrap() {
            let v = i.eval(&p).unwrap();
            assert_abs_diff_eq!(cas.eval(&p).unwrap(), v, epsilon = 1e-9 * v.abs().max(1.0));
        }
        assert!(tr.relation_residual(&pk.sample(30, 3).unwrap()).unwrap() < 1e-6);
    }

    #[test]
    fn casimir_commutes_with_the_table() {
        for e in [entry("coupled_riccati").unwrap(), ks3_prolonged(0.0, 2).unwrap()] {
            let form = &e.forms[0].name;
            let tr = Sl2Triple::from_entry(&e, form).unwrap();
            let cas = sl2_casimir(&tr);
            for p in e.sample(50, 9).unwrap() {
                for pair in &tr.pairs {
                    let b = poisson_bracket(pair, &cas, &p).unwrap();
                    assert!(b.abs() <= 1e-6 * cas.eval(&p).unwrap().abs().max(1.0), "{} {b}", e.id);
                }
            }
        }
    }

    #[test]
    fn pushforward_of_log_i_is_twice_f2() {
        let pk = ks3_prolonged(0.0, 2).unwrap();
        let zp = pk.symmetry("Z_P").unwrap();
        let log_i = log_abs(&named_invariant("I").unwrap());
        let zf = lie_symmetry_pushforward_invariant(zp, &log_i).unwrap();
        let f2 = named_invariant("F2").unwrap();
        for p in ks3_pair_samples(40, 8) {
            let v = f2.eval(&p).unwrap();
            assert_abs_diff_eq!(-0.5 * zf.eval(&p).unwrap(), v, epsilon = 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn pushforward_trivial_cases() {
        let c = catalog::ks3_chart();
        let f = named_invariant("I").unwrap();
        let pc = f.chart().clone();
        let zero = lie_symmetry_pushforward_invariant(&VectorField::zero(&pc), &f).unwrap();
        assert_eq!(zero.eval_raw(&[0.0, 1.0, 0.0, 0.0, 1.0, 1.0]), 0.0);
        let k = ScalarField::constant(&c, 3.0);
        let z = catalog::ks3_symmetry(&c);
        assert_eq!(lie_symmetry_pushforward_invariant(&z, &k).unwrap().eval_raw(&[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn log_guard() {
        let f = log_abs(&named_invariant("I").unwrap());
        assert!(f.eval(&pt(&[0.0, 1.0, 1.0, 0.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn report_statistics() {
        let r = InvariantReport::from_values("c", vec![0.0, 1.0, 2.0], vec![4.0, 4.5, 3.0]);
        assert_eq!(r.max_abs_drift, 1.0);
        assert_eq!(r.max_rel_drift, 0.25);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,value\n"));
        assert!(s.trim_end().ends_with("max_rel_drift=2.500000e-1"));
    }
}
