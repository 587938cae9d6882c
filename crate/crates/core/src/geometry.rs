//! Coordinate-chart differential geometry: vector fields, scalar fields and
//! two-forms evaluated pointwise, together with Lie brackets, interior
//! products, exterior and Lie derivatives, Hamiltonian-pair residuals and
//! Poisson brackets of admissible functions.
//!
//! Every object carries the [`Chart`] it lives on. Charts describe an open
//! domain of `R^n` as the complement of the zero sets of finitely many
//! "singular functions" (for instance `v` for `{v != 0}`), which lets the
//! integrator detect when a trajectory crosses from one connected piece of
//! the domain into another.
//!
//! Derivatives are analytic whenever the object was built with them and fall
//! back to central finite differences with step `1e-6 * max(1, |x_a|)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub(crate) type VecFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub(crate) type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub(crate) type RealFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub(crate) type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type SingularFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Relative step of every central finite difference in the crate.
pub const FD_RELATIVE_STEP: f64 = 1e-6;

/// Default relative threshold for [`distribution_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("chart mismatch: [{expected}] vs [{found}]")]
    ChartMismatch { expected: String, found: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point {point:?} lies outside the domain of {what}")]
    OutsideDomain { what: String, point: Vec<f64> },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Central finite-difference step for a coordinate of magnitude `x`.
pub fn fd_step(x: f64) -> f64 {
    FD_RELATIVE_STEP * x.abs().max(1.0)
}

/// Central-difference jacobian `J[(a, b)] = d f^a / d x^b`.
pub fn central_jacobian(f: &dyn Fn(&[f64]) -> DVector<f64>, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for b in 0..n {
        let h = fd_step(x[b]);
        probe[b] = x[b] + h;
        let plus = f(&probe);
        let hp = probe[b] - x[b];
        probe[b] = x[b] - h;
        let minus = f(&probe);
        let hm = x[b] - probe[b];
        probe[b] = x[b];
        cols.push((plus - minus) / (hp + hm));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |a, b| cols[b][a])
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DVector<f64> {
    let mut probe = x.to_vec();
    DVector::from_fn(x.len(), |b, _| {
        let h = fd_step(x[b]);
        probe[b] = x[b] + h;
        let plus = f(&probe);
        let hp = probe[b] - x[b];
        probe[b] = x[b] - h;
        let minus = f(&probe);
        let hm = x[b] - probe[b];
        probe[b] = x[b];
        (plus - minus) / (hp + hm)
    })
}

/// Partial derivative `d M / d x^k` of a matrix-valued function.
fn central_matrix_partial(f: &dyn Fn(&[f64]) -> DMatrix<f64>, x: &[f64], k: usize) -> DMatrix<f64> {
    let mut probe = x.to_vec();
    let h = fd_step(x[k]);
    probe[k] = x[k] + h;
    let plus = f(&probe);
    let hp = probe[k] - x[k];
    probe[k] = x[k] - h;
    let minus = f(&probe);
    let hm = x[k] - probe[k];
    (plus - minus) / (hp + hm)
}

/// A point of a chart domain.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint(Vec<f64>);

impl StatePoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Self(coords.into())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for StatePoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for StatePoint {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for StatePoint {
    fn from(v: [f64; N]) -> Self {
        Self(v.to_vec())
    }
}

impl std::ops::Index<usize> for StatePoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

struct ChartInner {
    names: Vec<String>,
    singular: Option<SingularFn>,
}

/// An open domain of `R^n` with named coordinates.
///
/// The domain is `{x : s_i(x) != 0 for all i}` where `s_i` are the chart's
/// singular functions; a chart without singular functions is all of `R^n`.
#[derive(Clone)]
pub struct Chart(Arc<ChartInner>);

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart").field("coordinates", &self.0.names).finish()
    }
}

impl Chart {
    /// The whole of `R^n`.
    pub fn euclidean<S: AsRef<str>>(names: &[S]) -> Self {
        Self(Arc::new(ChartInner {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            singular: None,
        }))
    }

    /// The complement in `R^n` of the zero sets of `singular`.
    pub fn with_singular_set<S, F>(names: &[S], singular: F) -> Self
    where
        S: AsRef<str>,
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self(Arc::new(ChartInner {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            singular: Some(Arc::new(singular)),
        }))
    }

    /// Cartesian product of charts; `names` labels the concatenated coordinates.
    pub fn product(blocks: &[Chart], names: Vec<String>) -> Result<Self> {
        let dim: usize = blocks.iter().map(Chart::dimension).sum();
        if names.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, found: names.len() });
        }
        let mut parts = Vec::new();
        let mut offset = 0;
        for b in blocks {
            if let Some(s) = &b.0.singular {
                parts.push((offset, b.dimension(), s.clone()));
            }
            offset += b.dimension();
        }
        let singular: Option<SingularFn> = if parts.is_empty() {
            None
        } else {
            Some(Arc::new(move |x: &[f64]| {
                parts.iter().flat_map(|(off, n, s)| s(&x[*off..*off + *n])).collect()
            }))
        };
        Ok(Self(Arc::new(ChartInner { names, singular })))
    }

    pub fn dimension(&self) -> usize {
        self.0.names.len()
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.0.names
    }

    /// Values of the singular functions at `x` (empty for `R^n`).
    pub fn singular_values(&self, x: &[f64]) -> Vec<f64> {
        self.0.singular.as_ref().map_or_else(Vec::new, |s| s(x))
    }

    /// Guard predicate: finite coordinates of the right length off the singular set.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter().all(|c| c.is_finite())
            && self.singular_values(x).iter().all(|s| *s != 0.0 && s.is_finite())
    }

    /// True when `from` and `to` lie in the same sign pattern of the singular
    /// functions, i.e. the segment did not visibly cross the singular set.
    pub fn same_component(&self, from: &[f64], to: &[f64]) -> bool {
        if !self.contains(to) {
            return false;
        }
        let a = self.singular_values(from);
        let b = self.singular_values(to);
        a.iter().zip(&b).all(|(s, t)| s.signum() == t.signum())
    }

    /// Charts are compatible when they share coordinates.
    pub fn is_compatible(&self, other: &Chart) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.names == other.0.names
    }

    pub fn ensure_compatible(&self, other: &Chart) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(GeometryError::ChartMismatch {
                expected: self.0.names.join(","),
                found: other.0.names.join(","),
            })
        }
    }

    pub(crate) fn check(&self, what: &str, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(GeometryError::DimensionMismatch { expected: self.dimension(), found: x.len() });
        }
        if !self.contains(x) {
            return Err(GeometryError::OutsideDomain { what: what.to_string(), point: x.to_vec() });
        }
        Ok(())
    }
}

/// A smooth vector field on a chart, optionally with an analytic jacobian.
#[derive(Clone)]
pub struct VectorField {
    chart: Chart,
    eval: VecFn,
    jacobian: Option<MatFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("chart", &self.chart)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new<F>(chart: &Chart, eval: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { chart: chart.clone(), eval: Arc::new(eval), jacobian: None }
    }

    /// Attach an analytic jacobian `J[(a, b)] = d X^a / d x^b`.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Drop the analytic jacobian so that finite differences are used.
    pub fn without_jacobian(&self) -> Self {
        Self { jacobian: None, ..self.clone() }
    }

    pub fn zero(chart: &Chart) -> Self {
        let n = chart.dimension();
        Self::new(chart, move |_| DVector::zeros(n)).with_jacobian(move |_| DMatrix::zeros(n, n))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Components at a guarded point.
    pub fn eval(&self, p: &StatePoint) -> Result<DVector<f64>> {
        self.chart.check("vector field", p.coords())?;
        Ok((self.eval)(p.coords()))
    }

    /// Components without the guard check (used inside integrator stages and stencils).
    pub fn eval_raw(&self, x: &[f64]) -> DVector<f64> {
        (self.eval)(x)
    }

    /// Jacobian at a guarded point, analytic when available.
    pub fn jacobian(&self, p: &StatePoint) -> Result<DMatrix<f64>> {
        self.chart.check("vector field", p.coords())?;
        Ok(self.jacobian_raw(p.coords()))
    }

    pub fn jacobian_raw(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => self.fd_jacobian_raw(x),
        }
    }

    pub fn fd_jacobian_raw(&self, x: &[f64]) -> DMatrix<f64> {
        central_jacobian(&*self.eval, x)
    }

    pub fn scale(&self, c: f64) -> Self {
        let f = self.eval.clone();
        let mut out = Self::new(&self.chart, move |x| f(x) * c);
        if let Some(j) = self.jacobian.clone() {
            out = out.with_jacobian(move |x| j(x) * c);
        }
        out
    }

    pub fn add(&self, other: &VectorField) -> Result<Self> {
        self.chart.ensure_compatible(&other.chart)?;
        let (f, g) = (self.eval.clone(), other.eval.clone());
        let mut out = Self::new(&self.chart, move |x| f(x) + g(x));
        if let (Some(jf), Some(jg)) = (self.jacobian.clone(), other.jacobian.clone()) {
            out = out.with_jacobian(move |x| jf(x) + jg(x));
        }
        Ok(out)
    }

    /// `sum_k c_k X_k` with constant coefficients.
    pub fn linear_combination(terms: &[(f64, &VectorField)]) -> Result<Self> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| GeometryError::Contract("empty linear combination".into()))?;
        rest.iter().try_fold(first.1.scale(first.0), |acc, (c, f)| acc.add(&f.scale(*c)))
    }
}

/// A smooth function on a chart, optionally with an analytic gradient and an
/// extra domain predicate for denominators that the chart does not exclude.
#[derive(Clone)]
pub struct ScalarField {
    chart: Chart,
    eval: RealFn,
    gradient: Option<VecFn>,
    domain: Option<Predicate>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("chart", &self.chart)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(chart: &Chart, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { chart: chart.clone(), eval: Arc::new(eval), gradient: None, domain: None }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Restrict the field to the points where `domain` holds.
    pub fn with_domain<P>(mut self, domain: P) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    pub fn without_gradient(&self) -> Self {
        Self { gradient: None, ..self.clone() }
    }

    pub fn constant(chart: &Chart, c: f64) -> Self {
        let n = chart.dimension();
        Self::new(chart, move |_| c).with_gradient(move |_| DVector::zeros(n))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.chart.contains(x) && self.domain.as_ref().is_none_or(|d| d(x))
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        self.chart.check("scalar field", x)?;
        if !self.domain.as_ref().is_none_or(|d| d(x)) {
            return Err(GeometryError::OutsideDomain { what: "scalar field".into(), point: x.to_vec() });
        }
        Ok(())
    }

    pub fn eval(&self, p: &StatePoint) -> Result<f64> {
        self.check(p.coords())?;
        let v = (self.eval)(p.coords());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GeometryError::NonFinite("scalar field".into()))
        }
    }

    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn gradient(&self, p: &StatePoint) -> Result<DVector<f64>> {
        self.check(p.coords())?;
        Ok(self.gradient_raw(p.coords()))
    }

    pub fn gradient_raw(&self, x: &[f64]) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => central_gradient(&*self.eval, x),
        }
    }

    /// `g(f)` with the chain rule supplying the gradient; `domain` restricts
    /// the admissible values of `f`.
    pub fn compose<G, D, P>(&self, g: G, dg: D, domain: P) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        P: Fn(f64) -> bool + Send + Sync + 'static,
    {
        let inner = self.clone();
        let inner_g = self.clone();
        let inner_d = self.clone();
        let domain = Arc::new(domain);
        Self::new(&self.chart, move |x| g(inner.eval_raw(x)))
            .with_gradient(move |x| inner_g.gradient_raw(x) * dg(inner_g.eval_raw(x)))
            .with_domain(move |x| inner_d.in_domain(x) && domain(inner_d.eval_raw(x)))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.compose(move |v| c * v, move |_| c, |_| true)
    }
}

/// An antisymmetric covariant two-tensor `omega_{ab}` on a chart.
#[derive(Clone)]
pub struct TwoForm {
    chart: Chart,
    components: MatFn,
}

impl fmt::Debug for TwoForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoForm").field("chart", &self.chart).finish()
    }
}

impl TwoForm {
    pub fn new<F>(chart: &Chart, components: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { chart: chart.clone(), components: Arc::new(components) }
    }

    /// Build from the upper-triangular entries `(i, j, omega_ij)` with `i < j`.
    pub fn from_upper<F>(chart: &Chart, upper: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<(usize, usize, f64)> + Send + Sync + 'static,
    {
        let n = chart.dimension();
        Self::new(chart, move |x| {
            let mut m = DMatrix::zeros(n, n);
            for (i, j, w) in upper(x) {
                m[(i, j)] += w;
                m[(j, i)] -= w;
            }
            m
        })
    }

    pub fn zero(chart: &Chart) -> Self {
        let n = chart.dimension();
        Self::new(chart, move |_| DMatrix::zeros(n, n))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn eval(&self, p: &StatePoint) -> Result<DMatrix<f64>> {
        self.chart.check("two-form", p.coords())?;
        Ok((self.components)(p.coords()))
    }

    pub fn eval_raw(&self, x: &[f64]) -> DMatrix<f64> {
        (self.components)(x)
    }

    /// `d omega_{..} / d x^k` by central differences.
    pub fn partial_raw(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        central_matrix_partial(&*self.components, x, k)
    }

    /// Largest `|omega_ab + omega_ba|` at `p`.
    pub fn antisymmetry_defect(&self, p: &StatePoint) -> Result<f64> {
        let m = self.eval(p)?;
        Ok((&m + m.transpose()).amax())
    }

    pub fn add(&self, other: &TwoForm) -> Result<Self> {
        self.chart.ensure_compatible(&other.chart)?;
        let (f, g) = (self.components.clone(), other.components.clone());
        Ok(Self::new(&self.chart, move |x| f(x) + g(x)))
    }
}

/// A vector field, a function and a two-form expected to satisfy
/// `iota_X omega = -df`.
#[derive(Clone, Debug)]
pub struct HamiltonianPair {
    pub field: VectorField,
    pub hamiltonian: ScalarField,
    pub form: TwoForm,
}

impl HamiltonianPair {
    pub fn new(field: VectorField, hamiltonian: ScalarField, form: TwoForm) -> Result<Self> {
        field.chart().ensure_compatible(hamiltonian.chart())?;
        field.chart().ensure_compatible(form.chart())?;
        Ok(Self { field, hamiltonian, form })
    }

    pub fn chart(&self) -> &Chart {
        self.field.chart()
    }
}

/// The commutator `[X, Y]^a = X^b d_b Y^a - Y^b d_b X^a`.
///
/// Analytic jacobians are used where the operands carry them; the result
/// itself has no analytic jacobian.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    x.chart.ensure_compatible(&y.chart)?;
    let (x, y) = (x.clone(), y.clone());
    let chart = x.chart.clone();
    Ok(VectorField::new(&chart, move |p| {
        let xv = x.eval_raw(p);
        let yv = y.eval_raw(p);
        y.jacobian_raw(p) * xv - x.jacobian_raw(p) * yv
    }))
}

/// `(d omega)_{ijk} = d_i omega_jk + d_j omega_ki + d_k omega_ij` at `p`.
pub fn exterior_derivative_3form_component(
    omega: &TwoForm,
    p: &StatePoint,
    i: usize,
    j: usize,
    k: usize,
) -> Result<f64> {
    let n = omega.chart.dimension();
    if i == j || j == k || i == k {
        return Err(GeometryError::Contract(format!("repeated index in ({i}, {j}, {k})")));
    }
    if i >= n || j >= n || k >= n {
        return Err(GeometryError::Contract(format!("index out of range in ({i}, {j}, {k})")));
    }
    omega.chart.check("two-form", p.coords())?;
    let x = p.coords();
    Ok(omega.partial_raw(x, i)[(j, k)] + omega.partial_raw(x, j)[(k, i)] + omega.partial_raw(x, k)[(i, j)])
}

/// Largest `|(d omega)_{ijk}|` over all `i < j < k` at `p`.
pub fn exterior_derivative_max(omega: &TwoForm, p: &StatePoint) -> Result<f64> {
    let n = omega.chart.dimension();
    omega.chart.check("two-form", p.coords())?;
    let x = p.coords();
    let partials: Vec<DMatrix<f64>> = (0..n).map(|k| omega.partial_raw(x, k)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let c = partials[i][(j, k)] + partials[j][(k, i)] + partials[k][(i, j)];
                worst = worst.max(c.abs());
            }
        }
    }
    Ok(worst)
}

/// The covector `(iota_X omega)_b = X^a omega_ab`.
pub fn interior_product(x: &VectorField, omega: &TwoForm, p: &StatePoint) -> Result<DVector<f64>> {
    x.chart.ensure_compatible(&omega.chart)?;
    let xv = x.eval(p)?;
    let w = omega.eval(p)?;
    Ok(w.transpose() * xv)
}

/// Max over `samples` of `|| iota_X omega + df ||_inf`.
pub fn check_hamiltonian_pair(pair: &HamiltonianPair, samples: &[StatePoint]) -> Result<f64> {
    if samples.is_empty() {
        return Err(GeometryError::Contract("no sample points".into()));
    }
    samples.iter().try_fold(0.0_f64, |worst, p| {
        let r = interior_product(&pair.field, &pair.form, p)? + pair.hamiltonian.gradient(p)?;
        Ok(worst.max(r.amax()))
    })
}

/// `{f, g} = X_f g`, with `X_f` the stored Hamiltonian representative of `f`.
pub fn poisson_bracket(f_pair: &HamiltonianPair, g: &ScalarField, p: &StatePoint) -> Result<f64> {
    f_pair.chart().ensure_compatible(g.chart())?;
    let xf = f_pair.field.eval(p)?;
    Ok(g.gradient(p)?.dot(&xf))
}

/// The Lie derivative `(L_Z omega)_ij = Z^k d_k omega_ij + omega_kj d_i Z^k + omega_ik d_j Z^k`.
pub fn lie_derivative_two_form(z: &VectorField, omega: &TwoForm) -> Result<TwoForm> {
    z.chart.ensure_compatible(&omega.chart)?;
    let (z, omega) = (z.clone(), omega.clone());
    let chart = omega.chart.clone();
    Ok(TwoForm::new(&chart, move |x| {
        let zv = z.eval_raw(x);
        let jac = z.jacobian_raw(x);
        let w = omega.eval_raw(x);
        let mut out = jac.transpose() * &w + &w * &jac;
        for (k, zk) in zv.iter().enumerate() {
            if *zk != 0.0 {
                out += omega.partial_raw(x, k) * *zk;
            }
        }
        out
    }))
}

/// Numeric rank of the span of the field values at `p`, by column-pivoted QR
/// with threshold `tol * |R_00|`.
pub fn distribution_rank(fields: &[VectorField], p: &StatePoint, tol: f64) -> Result<usize> {
    if tol <= 0.0 {
        return Err(GeometryError::Contract("rank tolerance must be positive".into()));
    }
    let Some(first) = fields.first() else {
        return Ok(0);
    };
    let n = first.chart.dimension();
    let mut rows = Vec::with_capacity(fields.len());
    for f in fields {
        first.chart.ensure_compatible(&f.chart)?;
        rows.push(f.eval(p)?);
    }
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let r = m.col_piv_qr().r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0);
    }
    Ok(diag.iter().filter(|d| **d > tol * scale).count())
}

/// A box of coordinates with an acceptance predicate, sampled uniformly by
/// rejection from a seeded ChaCha8 stream.
#[derive(Clone)]
pub struct SampleDomain {
    ranges: Vec<(f64, f64)>,
    accept: Option<Predicate>,
}

impl fmt::Debug for SampleDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampleDomain").field("ranges", &self.ranges).finish()
    }
}

impl SampleDomain {
    pub fn new(ranges: Vec<(f64, f64)>) -> Self {
        Self { ranges, accept: None }
    }

    pub fn with_accept<P>(mut self, accept: P) -> Self
    where
        P: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.accept = Some(Arc::new(accept));
        self
    }

    pub fn dimension(&self) -> usize {
        self.ranges.len()
    }

    pub fn accepts(&self, x: &[f64]) -> bool {
        self.accept.as_ref().is_none_or(|a| a(x))
    }

    /// Cartesian product of domains.
    pub fn product(blocks: &[SampleDomain]) -> Self {
        let ranges = blocks.iter().flat_map(|b| b.ranges.clone()).collect();
        let parts: Vec<(usize, usize, SampleDomain)> = blocks
            .iter()
            .scan(0, |off, b| {
                let start = *off;
                *off += b.dimension();
                Some((start, b.dimension(), b.clone()))
            })
            .collect();
        Self::new(ranges).with_accept(move |x| parts.iter().all(|(o, n, b)| b.accepts(&x[*o..*o + *n])))
    }

    /// `n` points from the stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<StatePoint>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let budget = 10_000 * n.max(1);
        let mut tries = 0;
        while out.len() < n {
            tries += 1;
            if tries > budget {
                return Err(GeometryError::Contract("sample domain rejects almost every point".into()));
            }
            let x: Vec<f64> = self.ranges.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
            if self.accepts(&x) {
                out.push(StatePoint::new(x));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn r3() -> Chart {
        Chart::euclidean(&["x", "y", "z"])
    }

    fn line() -> Chart {
        Chart::euclidean(&["x"])
    }

    #[test]
    fn bracket_of_translation_and_dilation() {
        let c = line();
        let x1 = VectorField::new(&c, |_| DVector::from_element(1, 1.0));
        let x2 = VectorField::new(&c, |x| DVector::from_element(1, x[0]));
        let br = lie_bracket(&x1, &x2).unwrap();
        for x in [-2.0, 0.0, 0.3, 5.0] {
            let v = br.eval(&StatePoint::new(vec![x])).unwrap();
            assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-8);
        }
        let self_br = lie_bracket(&x2, &x2).unwrap();
        assert_abs_diff_eq!(self_br.eval(&StatePoint::new(vec![1.7])).unwrap()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bracket_rejects_foreign_chart() {
        let a = VectorField::zero(&line());
        let b = VectorField::zero(&r3());
        assert!(matches!(lie_bracket(&a, &b), Err(GeometryError::ChartMismatch { .. })));
    }

    #[test]
    fn exterior_derivative_of_x_dy_dz() {
        let c = r3();
        let w = TwoForm::from_upper(&c, |x| vec![(1, 2, x[0])]);
        let p = StatePoint::new(vec![0.4, -1.0, 2.0]);
        let d = exterior_derivative_3form_component(&w, &p, 0, 1, 2).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-7);
        let constant = TwoForm::from_upper(&c, |_| vec![(0, 1, 2.0), (1, 2, -3.0)]);
        assert_eq!(exterior_derivative_3form_component(&constant, &p, 2, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn exterior_derivative_repeated_index_is_contract_violation() {
        let w = TwoForm::zero(&r3());
        let p = StatePoint::new(vec![0.0; 3]);
        assert!(matches!(
            exterior_derivative_3form_component(&w, &p, 0, 0, 1),
            Err(GeometryError::Contract(_))
        ));
    }

    #[test]
    fn interior_product_annihilates_its_field() {
        let c = r3();
        let w = TwoForm::from_upper(&c, |x| vec![(0, 1, x[2]), (0, 2, 1.0 + x[0] * x[0]), (1, 2, x[1])]);
        let x = VectorField::new(&c, |p| DVector::from_row_slice(&[p[1], -p[0], p[2] * p[2]]));
        let p = StatePoint::new(vec![0.3, -1.2, 0.8]);
        let cov = interior_product(&x, &w, &p).unwrap();
        assert_abs_diff_eq!(cov.dot(&x.eval(&p).unwrap()), 0.0, epsilon = 1e-14);
        let zero = interior_product(&VectorField::zero(&c), &w, &p).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn hamiltonian_pair_needs_samples() {
        let c = r3();
        let pair = HamiltonianPair::new(VectorField::zero(&c), ScalarField::constant(&c, 4.0), TwoForm::zero(&c))
            .unwrap();
        assert!(check_hamiltonian_pair(&pair, &[]).is_err());
        let pts = [StatePoint::new(vec![1.0, 2.0, 3.0])];
        assert_eq!(check_hamiltonian_pair(&pair, &pts).unwrap(), 0.0);
    }

    #[test]
    fn lie_derivative_trivial_cases() {
        let c = r3();
        // x-independent components are invariant under d/dx.
        let w = TwoForm::from_upper(&c, |x| vec![(0, 1, x[1] * x[2]), (1, 2, x[2].sin())]);
        let dx = VectorField::new(&c, |_| DVector::from_row_slice(&[1.0, 0.0, 0.0]));
        let p = StatePoint::new(vec![0.2, 0.5, -0.7]);
        assert!(lie_derivative_two_form(&dx, &w).unwrap().eval(&p).unwrap().amax() < 1e-9);
        let zero = lie_derivative_two_form(&VectorField::zero(&c), &w).unwrap();
        assert_eq!(zero.eval(&p).unwrap().amax(), 0.0);
    }

    #[test]
    fn rank_of_duplicates_and_empty() {
        let c = r3();
        let a = VectorField::new(&c, |_| DVector::from_row_slice(&[1.0, 2.0, 0.0]));
        let b = VectorField::new(&c, |_| DVector::from_row_slice(&[0.0, 1.0, 1.0]));
        let p = StatePoint::new(vec![0.0; 3]);
        assert_eq!(distribution_rank(&[], &p, 1e-8).unwrap(), 0);
        assert_eq!(distribution_rank(&[a.clone(), b.clone()], &p, 1e-8).unwrap(), 2);
        assert_eq!(distribution_rank(&[a.clone(), b.clone(), a.clone()], &p, 1e-8).unwrap(), 2);
        assert_eq!(distribution_rank(&[VectorField::zero(&c)], &p, 1e-8).unwrap(), 0);
    }

    #[test]
    fn guard_and_component_tracking() {
        let c = Chart::with_singular_set(&["x", "v"], |x| vec![x[1]]);
        assert!(c.contains(&[0.0, 1.0]));
        assert!(!c.contains(&[0.0, 0.0]));
        assert!(!c.contains(&[f64::NAN, 1.0]));
        assert!(c.same_component(&[0.0, 1.0], &[5.0, 0.1]));
        assert!(!c.same_component(&[0.0, 1.0], &[0.0, -0.1]));
        let v = VectorField::zero(&c);
        assert!(matches!(v.eval(&StatePoint::new(vec![1.0, 0.0])), Err(GeometryError::OutsideDomain { .. })));
    }

    #[test]
    fn sampling_is_seeded_and_respects_acceptance() {
        let d = SampleDomain::new(vec![(-1.0, 1.0), (-2.0, 2.0)]).with_accept(|x| x[1].abs() > 0.5);
        let a = d.sample(50, 7).unwrap();
        let b = d.sample(50, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p[1].abs() > 0.5 && p[0].abs() < 1.0));
        assert_ne!(a, d.sample(50, 8).unwrap());
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        let c = r3();
        let f = ScalarField::new(&c, |x| x[0] * x[1].exp() + x[2].powi(3))
            .with_gradient(|x| DVector::from_row_slice(&[x[1].exp(), x[0] * x[1].exp(), 3.0 * x[2] * x[2]]));
        let p = StatePoint::new(vec![0.7, -0.3, 1.9]);
        let exact = f.gradient(&p).unwrap();
        let fd = f.without_gradient().gradient(&p).unwrap();
        assert!((exact - fd).amax() < 1e-5 * 11.0);
    }

    #[test]
    fn compose_restricts_domain() {
        let c = line();
        let f = ScalarField::new(&c, |x| x[0]).with_gradient(|_| DVector::from_element(1, 1.0));
        let log_abs = f.compose(|v| v.abs().ln(), |v| 1.0 / v, |v| v.abs() > 1e-12);
        assert_abs_diff_eq!(log_abs.eval(&StatePoint::new(vec![-2.0])).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_abs.gradient(&StatePoint::new(vec![-2.0])).unwrap()[0], -0.5, epsilon = 1e-15);
        assert!(log_abs.eval(&StatePoint::new(vec![0.0])).is_err());
    }
}
