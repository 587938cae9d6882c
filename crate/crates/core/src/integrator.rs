//! Fixed-step classical RK4 for `dx/dt = sum_k b_k(t) X_k(x)`.

use std::io::{Read, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::coeffexpr::{BinOp, Expr, ExprError};
use crate::geometry::{Chart, GeometryError, StatePoint, VectorField};

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("invalid integration request: {0}")]
    InvalidInput(String),
    #[error("trajectory left the chart domain at t = {t}")]
    GuardExit { t: f64, state: Vec<f64>, partial: Box<Trajectory> },
    #[error("non-finite state produced at t = {t}")]
    NonFinite { t: f64, partial: Box<Trajectory> },
    #[error(transparent)]
    Coefficient(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("trajectory file: {0}")]
    Format(String),
}

impl IntegratorError {
    /// The samples computed before a guard exit or overflow, if any.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegratorError::GuardExit { partial, .. } | IntegratorError::NonFinite { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// `X_t = sum_k b_k(t) X_k` with coefficients given as expressions in `t`.
#[derive(Debug, Clone)]
pub struct TDependentField {
    pub system_id: String,
    pub basis: Vec<VectorField>,
    pub coeffs: Vec<Expr>,
    pub chart: Chart,
}

impl TDependentField {
    pub fn new(system_id: impl Into<String>, basis: Vec<VectorField>, coeffs: Vec<Expr>) -> Result<Self, IntegratorError> {
        let first = basis
            .first()
            .ok_or_else(|| IntegratorError::InvalidInput("empty basis".into()))?;
        if basis.len() != coeffs.len() {
            return Err(IntegratorError::InvalidInput(format!(
                "{} basis fields but {} coefficients",
                basis.len(),
                coeffs.len()
            )));
        }
        let chart = first.chart().clone();
        for f in &basis {
            chart.ensure_compatible(f.chart())?;
        }
        Ok(Self { system_id: system_id.into(), basis, coeffs, chart })
    }

    /// The field `-X_{t_ref - t}`, whose integral curves are those of `self`
    /// traversed backwards: `y(s) = x(t_ref - s)`.
    pub fn reversed(&self, t_ref: f64) -> Self {
        let arg = Expr::bin(BinOp::Sub, Expr::Num(t_ref), Expr::T);
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| if c.is_zero_literal() { c.clone() } else { Expr::negate(c.substitute_t(&arg)) })
            .collect();
        Self { coeffs, ..self.clone() }
    }

    pub fn coefficient_values(&self, t: f64) -> Result<Vec<f64>, ExprError> {
        self.coeffs.iter().map(|c| c.eval(t)).collect()
    }

    /// `X_t(x)` without a guard check.
    pub fn eval_raw(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, ExprError> {
        let mut out = DVector::zeros(self.chart.dimension());
        for (c, f) in self.coeffs.iter().zip(&self.basis) {
            if c.is_zero_literal() {
                continue;
            }
            let b = c.eval(t)?;
            if b != 0.0 {
                out += f.eval_raw(x) * b;
            }
        }
        Ok(out)
    }

    pub fn eval(&self, t: f64, p: &StatePoint) -> Result<DVector<f64>, IntegratorError> {
        self.chart.check("time-dependent field", p.coords())?;
        Ok(self.eval_raw(t, p.coords())?)
    }
}

/// Sampled integral curve on a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub system_id: String,
    pub chart: Chart,
    pub times: Vec<f64>,
    pub states: Vec<StatePoint>,
    pub dt: f64,
    pub coeff_srcs: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&StatePoint> {
        self.states.last()
    }

    /// CSV: header `t,<coordinates>`, 17 significant digits, LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,{}", self.chart.coordinate_names().join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.16e}")?;
            for x in s.coords() {
                write!(w, ",{x:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    /// Read a CSV written by [`Trajectory::write_csv`]; `#` lines are ignored.
    /// The header must name the chart's coordinates in order.
    pub fn read_csv<R: Read>(r: R, chart: &Chart, system_id: &str) -> Result<Self, IntegratorError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
        let bad = |m: String| IntegratorError::Format(m);
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let names: Vec<&str> = header.iter().collect();
        let expected: Vec<&str> =
            std::iter::once("t").chain(chart.coordinate_names().iter().map(String::as_str)).collect();
        if names != expected {
            return Err(bad(format!("header {:?} does not match {:?}", names, expected)));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
            if vals.len() != expected.len() {
                return Err(bad(format!("row {} has {} fields", row + 1, vals.len())));
            }
            times.push(vals[0]);
            states.push(StatePoint::new(vals[1..].to_vec()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("times are not strictly increasing".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Self {
            system_id: system_id.to_string(),
            chart: chart.clone(),
            times,
            states,
            dt,
            coeff_srcs: Vec::new(),
        })
    }
}

/// Grid of step sizes from `t0` to `t1`: whole steps of `dt`, the last one
/// shortened to land on `t1` unless the span is an integer multiple of `dt`.
fn time_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let ratio = (t1 - t0) / dt;
    let whole = ratio.round();
    let n = if (ratio - whole).abs() <= 1e-9 * ratio.max(1.0) { whole as usize } else { ratio.floor() as usize };
    let mut grid: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * dt).collect();
    let last = grid.last_mut().expect("grid is non-empty");
    if (*last - t1).abs() <= 1e-9 * dt {
        *last = t1;
    } else {
        grid.push(t1);
    }
    grid
}

fn rk4_step(f: &TDependentField, t: f64, h: f64, x: &DVector<f64>) -> Result<DVector<f64>, ExprError> {
    let k1 = f.eval_raw(t, x.as_slice())?;
    let x2 = x + &k1 * (h / 2.0);
    let k2 = f.eval_raw(t + h / 2.0, x2.as_slice())?;
    let x3 = x + &k2 * (h / 2.0);
    let k3 = f.eval_raw(t + h / 2.0, x3.as_slice())?;
    let x4 = x + &k3 * h;
    let k4 = f.eval_raw(t + h, x4.as_slice())?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Integrate from `x0` at `t0` to `t1` with step `dt`.
pub fn integrate(f: &TDependentField, x0: &StatePoint, t0: f64, t1: f64, dt: f64) -> Result<Trajectory, IntegratorError> {
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(IntegratorError::InvalidInput(format!("need finite t0 < t1, got [{t0}, {t1}]")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(IntegratorError::InvalidInput(format!("need dt > 0, got {dt}")));
    }
    if x0.dimension() != f.chart.dimension() {
        return Err(GeometryError::DimensionMismatch { expected: f.chart.dimension(), found: x0.dimension() }.into());
    }
    if !f.chart.contains(x0.coords()) {
        return Err(IntegratorError::InvalidInput(format!(
            "initial point {:?} is outside the chart domain",
            x0.coords()
        )));
    }
    let grid = time_grid(t0, t1, dt);
    let mut traj = Trajectory {
        system_id: f.system_id.clone(),
        chart: f.chart.clone(),
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        dt,
        coeff_srcs: f.coeffs.iter().map(Expr::render).collect(),
    };
    traj.times.push(t0);
    traj.states.push(x0.clone());
    let mut x = DVector::from_column_slice(x0.coords());
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let next = rk4_step(f, t, t_next - t, &x)?;
        if next.iter().any(|c| !c.is_finite()) {
            return Err(IntegratorError::NonFinite { t: t_next, partial: Box::new(traj) });
        }
        if !f.chart.same_component(x.as_slice(), next.as_slice()) {
            return Err(IntegratorError::GuardExit {
                t: t_next,
                state: next.as_slice().to_vec(),
                partial: Box::new(traj),
            });
        }
        x = next;
        traj.times.push(t_next);
        traj.states.push(StatePoint::new(x.as_slice().to_vec()));
    }
    Ok(traj)
}

/// `|| x_dt(t1) - x_{dt/2}(t1) ||_inf`.
pub fn richardson_error_estimate(
    f: &TDependentField,
    x0: &StatePoint,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<f64, IntegratorError> {
    let coarse = integrate(f, x0, t0, t1, dt)?;
    let fine = integrate(f, x0, t0, t1, dt / 2.0)?;
    let a = coarse.last_state().expect("trajectory is non-empty").coords();
    let b = fine.last_state().expect("trajectory is non-empty").coords();
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}
