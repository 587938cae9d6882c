//! Schwarzian derivatives, traveling waves of the Schwarzian KdV equation
//! `{Phi, x} Phi_x = Phi_t` and finite-difference residuals of the KdV
//! equation `u_t = u_xxx + 3 u u_x`.
//!
//! A traveling wave `Phi(t, x) = g(x - v0 t - f0)` solves SKdV exactly when the
//! profile satisfies `g''' - (3/2) g''^2 / g' + v0 g' = 0`, i.e. `{g, z} = -v0`.
//! Profiles carry analytic derivatives up to third order and the equation is
//! preserved by Möbius transformations `g -> (alpha g + beta)/(gamma g + delta)`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

/// Grid points closer than this to a pole are rejected.
pub const POLE_MARGIN: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkdvError {
    #[error("first derivative vanishes at z = {0}")]
    ZeroFirstDerivative(f64),
    #[error("profile parameters: {0}")]
    Parameter(String),
    #[error("Möbius map is degenerate (alpha delta - beta gamma = 0)")]
    DegenerateMobius,
    #[error("pole at z = {0} on the evaluation set")]
    PoleOnGrid(f64),
    #[error("grid needs at least 5 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error("grid axis is not strictly increasing and uniform: {0}")]
    BadAxis(String),
}

pub type Result<T> = std::result::Result<T, SkdvError>;

/// A function of one variable with derivatives up to order three.
pub trait Profile: Send + Sync {
    /// `[g, g', g'', g''']` at `z`.
    fn derivatives(&self, z: f64) -> Result<[f64; 4]>;
    /// Points where the profile (or a quantity it is built from) blows up.
    fn poles(&self) -> Vec<f64>;
    /// Real solutions of `g(z) = value`.
    fn preimages(&self, value: f64) -> Vec<f64>;
}

/// `tanh(a z)` with `a = sqrt(v0 / 2)`.
#[derive(Debug, Clone, Copy)]
pub struct TanhProfile {
    pub a: f64,
}

impl Profile for TanhProfile {
    fn derivatives(&self, z: f64) -> Result<[f64; 4]> {
        let a = self.a;
        let g = (a * z).tanh();
        let s = 1.0 - g * g;
        Ok([g, a * s, -2.0 * a * a * g * s, -2.0 * a.powi(3) * s * (1.0 - 3.0 * g * g)])
    }

    fn poles(&self) -> Vec<f64> {
        Vec::new()
    }

    fn preimages(&self, value: f64) -> Vec<f64> {
        if value.abs() < 1.0 {
            vec![value.atanh() / self.a]
        } else {
            Vec::new()
        }
    }
}

/// `1 / (z + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct RationalProfile;

impl Profile for RationalProfile {
    fn derivatives(&self, z: f64) -> Result<[f64; 4]> {
        let w = z + 1.0;
        if w == 0.0 {
            return Err(SkdvError::PoleOnGrid(z));
        }
        Ok([1.0 / w, -1.0 / (w * w), 2.0 / w.powi(3), -6.0 / w.powi(4)])
    }

    fn poles(&self) -> Vec<f64> {
        vec![-1.0]
    }

    fn preimages(&self, value: f64) -> Vec<f64> {
        if value == 0.0 {
            Vec::new()
        } else {
            vec![1.0 / value - 1.0]
        }
    }
}

/// `x -> (alpha x + beta) / (gamma x + delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Mobius {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let det = alpha * delta - beta * gamma;
        if det == 0.0 || !det.is_finite() {
            return Err(SkdvError::DegenerateMobius);
        }
        Ok(Self { alpha, beta, gamma, delta })
    }

    pub fn identity() -> Self {
        Self { alpha: 1.0, beta: 0.0, gamma: 0.0, delta: 1.0 }
    }

    pub fn determinant(&self) -> f64 {
        self.alpha * self.delta - self.beta * self.gamma
    }

    pub fn apply(&self, x: f64) -> f64 {
        (self.alpha * x + self.beta) / (self.gamma * x + self.delta)
    }

    /// `self` after `first`, i.e. the matrix product `self * first`.
    pub fn after(&self, first: &Mobius) -> Mobius {
        Mobius {
            alpha: self.alpha * first.alpha + self.beta * first.gamma,
            beta: self.alpha * first.beta + self.beta * first.delta,
            gamma: self.gamma * first.alpha + self.delta * first.gamma,
            delta: self.gamma * first.beta + self.delta * first.delta,
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius { alpha: self.delta, beta: -self.beta, gamma: -self.gamma, delta: self.alpha }
    }
}

/// `M o g` with chain-rule derivatives.
#[derive(Clone)]
pub struct MobiusImage {
    pub inner: Arc<dyn Profile>,
    pub map: Mobius,
}

impl Profile for MobiusImage {
    fn derivatives(&self, z: f64) -> Result<[f64; 4]> {
        let [g, g1, g2, g3] = self.inner.derivatives(z)?;
        let Mobius { gamma, delta, .. } = self.map;
        let q = gamma * g + delta;
        if q.abs() < 1e-12 {
            return Err(SkdvError::PoleOnGrid(z));
        }
        let d = self.map.determinant();
        let h = self.map.apply(g);
        let h1 = d * g1 / (q * q);
        let h2 = d * (g2 / (q * q) - 2.0 * gamma * g1 * g1 / q.powi(3));
        let h3 = d * (g3 / (q * q) - 6.0 * gamma * g1 * g2 / q.powi(3) + 6.0 * gamma * gamma * g1.powi(3) / q.powi(4));
        Ok([h, h1, h2, h3])
    }

    fn poles(&self) -> Vec<f64> {
        let mut out = self.inner.poles();
        if self.map.gamma != 0.0 {
            out.extend(self.inner.preimages(-self.map.delta / self.map.gamma));
        }
        out
    }

    fn preimages(&self, value: f64) -> Vec<f64> {
        let inv = self.map.inverse();
        let den = inv.gamma * value + inv.delta;
        if den == 0.0 {
            self.inner.poles()
        } else {
            self.inner.preimages(inv.apply(value))
        }
    }
}

/// `{g, z} = g'''/g' - (3/2) (g''/g')^2`.
pub fn schwarzian_of_profile(d: [f64; 4], z: f64) -> Result<f64> {
    let [_, g1, g2, g3] = d;
    if g1 == 0.0 {
        return Err(SkdvError::ZeroFirstDerivative(z));
    }
    let r = g2 / g1;
    Ok(g3 / g1 - 1.5 * r * r)
}

/// `g''' - (3/2) g''^2/g' + v0 g'`, which vanishes for traveling-wave profiles.
pub fn traveling_residual(d: [f64; 4], v0: f64, z: f64) -> Result<f64> {
    let [_, g1, g2, g3] = d;
    if g1 == 0.0 {
        return Err(SkdvError::ZeroFirstDerivative(z));
    }
    Ok(g3 - 1.5 * g2 * g2 / g1 + v0 * g1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Tanh,
    Rational,
}

impl std::str::FromStr for ProfileKind {
    type Err = SkdvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(ProfileKind::Tanh),
            "rational" => Ok(ProfileKind::Rational),
            other => Err(SkdvError::Parameter(format!("unknown profile kind '{other}'"))),
        }
    }
}

/// The particular solutions `tanh(sqrt(v0/2) z)` (v0 > 0) and `1/(z+1)` (v0 = 0).
pub fn traveling_profile(v0: f64, kind: ProfileKind) -> Result<Arc<dyn Profile>> {
    match kind {
        ProfileKind::Tanh if v0 > 0.0 && v0.is_finite() => Ok(Arc::new(TanhProfile { a: (v0 / 2.0).sqrt() })),
        ProfileKind::Tanh => Err(SkdvError::Parameter(format!("tanh profile needs v0 > 0, got {v0}"))),
        ProfileKind::Rational if v0 == 0.0 => Ok(Arc::new(RationalProfile)),
        ProfileKind::Rational => Err(SkdvError::Parameter(format!("rational profile needs v0 = 0, got {v0}"))),
    }
}

pub fn mobius_orbit(g: Arc<dyn Profile>, m: Mobius) -> Result<Arc<dyn Profile>> {
    Mobius::new(m.alpha, m.beta, m.gamma, m.delta)?;
    Ok(Arc::new(MobiusImage { inner: g, map: m }))
}

fn near_pole(profile: &dyn Profile, z: f64) -> Option<f64> {
    profile.poles().into_iter().find(|p| (z - p).abs() < POLE_MARGIN)
}

/// `Phi(t, x) = g(x - v0 t - f0)`.
#[derive(Clone)]
pub struct SkdvWave {
    pub v0: f64,
    pub f0: f64,
    pub profile: Arc<dyn Profile>,
}

impl SkdvWave {
    pub fn new(v0: f64, f0: f64, profile: Arc<dyn Profile>) -> Self {
        Self { v0, f0, profile }
    }

    pub fn phase(&self, t: f64, x: f64) -> f64 {
        x - self.v0 * t - self.f0
    }

    /// `[Phi, Phi_x, Phi_xx, Phi_xxx]` at `(t, x)`.
    pub fn derivatives(&self, t: f64, x: f64) -> Result<[f64; 4]> {
        let z = self.phase(t, x);
        if let Some(p) = near_pole(self.profile.as_ref(), z) {
            return Err(SkdvError::PoleOnGrid(p));
        }
        self.profile.derivatives(z)
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.derivatives(t, x)?[0])
    }

    /// `{Phi, x}` from the analytic x-derivatives.
    pub fn schwarzian_x(&self, t: f64, x: f64) -> Result<f64> {
        schwarzian_of_profile(self.derivatives(t, x)?, self.phase(t, x))
    }

    pub fn sample(&self, ts: &[f64], xs: &[f64]) -> Result<Grid2D> {
        Grid2D::from_fn(ts, xs, |t, x| self.value(t, x))
    }

    /// Max over interior time rows of `|{Phi,x} Phi_x - Phi_t|`, with `Phi_t`
    /// taken by central differences along the `ts` axis.
    pub fn skdv_residual(&self, ts: &[f64], xs: &[f64]) -> Result<f64> {
        if ts.len() < 3 {
            return Err(SkdvError::GridTooSmall(ts.len()));
        }
        check_axis(ts, "t")?;
        check_axis(xs, "x")?;
        let dt = ts[1] - ts[0];
        let mut worst: f64 = 0.0;
        for i in 1..ts.len() - 1 {
            for &x in xs {
                let d = self.derivatives(ts[i], x)?;
                let s = schwarzian_of_profile(d, self.phase(ts[i], x))?;
                let phi_t = (self.value(ts[i + 1], x)? - self.value(ts[i - 1], x)?) / (2.0 * dt);
                worst = worst.max((s * d[1] - phi_t).abs());
            }
        }
        Ok(worst)
    }
}

fn check_axis(a: &[f64], name: &str) -> Result<()> {
    if a.is_empty() {
        return Err(SkdvError::BadAxis(format!("{name} is empty")));
    }
    if a.len() == 1 {
        return if a[0].is_finite() { Ok(()) } else { Err(SkdvError::BadAxis(format!("{name} is not finite"))) };
    }
    let h = a[1] - a[0];
    if h.is_nan() || h <= 0.0 || a.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-12 * h.abs().max(1.0)) {
        return Err(SkdvError::BadAxis(format!("{name} spacing is not uniform")));
    }
    Ok(())
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + i as f64 * h }).collect()
}

/// Samples `u(t_i, x_j)` on a uniform rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    /// Rows are times, columns are positions.
    pub u: DMatrix<f64>,
}

impl Grid2D {
    pub fn new(ts: Vec<f64>, xs: Vec<f64>, u: DMatrix<f64>) -> Result<Self> {
        check_axis(&ts, "t")?;
        check_axis(&xs, "x")?;
        if u.nrows() != ts.len() || u.ncols() != xs.len() {
            return Err(SkdvError::BadAxis(format!(
                "samples are {}x{}, axes {}x{}",
                u.nrows(),
                u.ncols(),
                ts.len(),
                xs.len()
            )));
        }
        Ok(Self { ts, xs, u })
    }

    pub fn from_fn<F>(ts: &[f64], xs: &[f64], mut f: F) -> Result<Self>
    where
        F: FnMut(f64, f64) -> Result<f64>,
    {
        let mut u = DMatrix::zeros(ts.len(), xs.len());
        for (i, &t) in ts.iter().enumerate() {
            for (j, &x) in xs.iter().enumerate() {
                u[(i, j)] = f(t, x)?;
            }
        }
        Self::new(ts.to_vec(), xs.to_vec(), u)
    }

    pub fn dt(&self) -> f64 {
        self.ts[1] - self.ts[0]
    }

    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    /// CSV: header `t\x,<x values>`, then one row `t,u(t,x_1),...` per time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t\\x")?;
        for x in &self.xs {
            write!(w, ",{x:.16e}")?;
        }
        w.write_all(b"\n")?;
        for (i, t) in self.ts.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for j in 0..self.xs.len() {
                write!(w, ",{:.16e}", self.u[(i, j)])?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Pointwise `u_t - u_xxx - 3 u u_x` on the interior (two points away from
/// every edge), as a grid over the interior axes.
pub fn kdv_residual_grid(u: &Grid2D) -> Result<Grid2D> {
    let (nt, nx) = (u.ts.len(), u.xs.len());
    if nt < 5 || nx < 5 {
        return Err(SkdvError::GridTooSmall(nt.min(nx)));
    }
    let (dt, dx) = (u.dt(), u.dx());
    let m = &u.u;
    let r = DMatrix::from_fn(nt - 4, nx - 4, |a, b| {
        let (i, j) = (a + 2, b + 2);
        let ut = (m[(i + 1, j)] - m[(i - 1, j)]) / (2.0 * dt);
        let ux = (m[(i, j + 1)] - m[(i, j - 1)]) / (2.0 * dx);
        let uxxx = (m[(i, j + 2)] - 2.0 * m[(i, j + 1)] + 2.0 * m[(i, j - 1)] - m[(i, j - 2)]) / (2.0 * dx.powi(3));
        ut - uxxx - 3.0 * m[(i, j)] * ux
    });
    Grid2D::new(u.ts[2..nt - 2].to_vec(), u.xs[2..nx - 2].to_vec(), r)
}

/// Max of `|u_t - u_xxx - 3 u u_x|` over interior grid points.
pub fn kdv_residual(u: &Grid2D) -> Result<f64> {
    Ok(kdv_residual_grid(u)?.u.amax())
}
