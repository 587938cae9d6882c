//! Registry of worked Lie systems.
//!
//! Each entry bundles a chart, a basis of vector fields with analytic
//! jacobians, structure constants `[X_i, X_j] = sum_k c_ij^k X_k`, named
//! presymplectic forms with their Hamiltonian tables, symmetries, named
//! functions, default coefficients and a sampling box for verification.
//!
//! | id | coordinates | basis | forms |
//! |----|-------------|-------|-------|
//! | `coupled_riccati` | x1..x4 | sum d_i, sum x_i d_i, sum x_i^2 d_i | `omega_R`, `omega_bar` |
//! | `ks3` | x, v, a | Y1, Y2, Y3 | `omega_3KS`, `omega_ZP` (c0 = 0) |
//! | `linear2d` | x, v | -x d_v, (v d_v - x d_x)/2, v d_x | `omega_L` |
//! | `riccati` | x | d_x, x d_x, x^2 d_x | none |
//! | `riccati_system` | s, u, v, w, x, y, z | X1..X7 | `omega_RS` |
//! | `schwarz_traveling` | x, v, a | Y1, Y2, Y3 | as `ks3` |

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::coeffexpr::{parse, Expr};
use crate::geometry::{
    exterior_derivative_max, lie_bracket, Chart, GeometryError, HamiltonianPair, SampleDomain, ScalarField, StatePoint,
    TwoForm, VectorField,
};
use crate::integrator::{IntegratorError, TDependentField};
use crate::prolong::{self, ProlongError};

/// Entry ids in lexicographic order.
pub const IDS: [&str; 6] = ["coupled_riccati", "ks3", "linear2d", "riccati", "riccati_system", "schwarz_traveling"];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown system '{0}'")]
    NotFound(String),
    #[error("{system} expects {expected} coefficients, got {found}")]
    CoeffCount { system: String, expected: usize, found: usize },
    #[error("{system} has no form named '{form}'")]
    NoSuchForm { system: String, form: String },
    #[error("form '{0}' carries no Hamiltonian table")]
    NoTable(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Prolong(#[from] ProlongError),
}

pub type Result<T> = std::result::Result<T, CatalogError>;

/// A presymplectic form and, when known, Hamiltonians `h_i` with
/// `iota_{X_i} omega = -dh_i` for every basis field.
#[derive(Debug, Clone)]
pub struct NamedForm {
    pub name: String,
    pub form: TwoForm,
    pub hamiltonians: Option<Vec<ScalarField>>,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub id: String,
    pub chart: Chart,
    pub basis_names: Vec<String>,
    pub basis: Vec<VectorField>,
    /// Dense `c[i][j][k]`, antisymmetric in `(i, j)`.
    pub structure_constants: Vec<Vec<Vec<f64>>>,
    pub forms: Vec<NamedForm>,
    pub symmetries: Vec<(String, VectorField)>,
    pub functions: Vec<(String, ScalarField)>,
    pub default_coeffs: Vec<Expr>,
    pub params: Vec<(String, f64)>,
    pub sample_domain: SampleDomain,
}

impl CatalogEntry {
    pub fn dimension(&self) -> usize {
        self.chart.dimension()
    }

    pub fn algebra_dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn form(&self, name: &str) -> Result<&NamedForm> {
        self.forms
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| CatalogError::NoSuchForm { system: self.id.clone(), form: name.to_string() })
    }

    pub fn hamiltonians(&self, form: &str) -> Result<&[ScalarField]> {
        self.form(form)?
            .hamiltonians
            .as_deref()
            .ok_or_else(|| CatalogError::NoTable(form.to_string()))
    }

    pub fn hamiltonian_pair(&self, form: &str, i: usize) -> Result<HamiltonianPair> {
        let f = self.form(form)?;
        let hs = self.hamiltonians(form)?;
        Ok(HamiltonianPair::new(self.basis[i].clone(), hs[i].clone(), f.form.clone())?)
    }

    pub fn symmetry(&self, name: &str) -> Option<&VectorField> {
        self.symmetries.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn function(&self, name: &str) -> Option<&ScalarField> {
        self.functions.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// The nonzero terms `(k, c_ij^k)` of `[X_i, X_j]`.
    pub fn bracket_expansion(&self, i: usize, j: usize) -> Vec<(usize, f64)> {
        self.structure_constants[i][j]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| (k, *c))
            .collect()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<StatePoint>> {
        Ok(self.sample_domain.sample(n, seed)?)
    }

    pub fn metadata(&self) -> EntryMetadata {
        let mut constants = Vec::new();
        for i in 0..self.basis.len() {
            for j in i + 1..self.basis.len() {
                for (k, c) in self.bracket_expansion(i, j) {
                    constants.push(StructureConstant {
                        left: self.basis_names[i].clone(),
                        right: self.basis_names[j].clone(),
                        result: self.basis_names[k].clone(),
                        coefficient: c,
                    });
                }
            }
        }
        EntryMetadata {
            id: self.id.clone(),
            dimension: self.dimension(),
            coordinates: self.chart.coordinate_names().to_vec(),
            basis: self.basis_names.clone(),
            algebra_dimension: self.algebra_dimension(),
            structure_constants: constants,
            forms: self
                .forms
                .iter()
                .map(|f| FormMetadata { name: f.name.clone(), hamiltonian_table: f.hamiltonians.is_some() })
                .collect(),
            symmetries: self.symmetries.iter().map(|(n, _)| n.clone()).collect(),
            functions: self.functions.iter().map(|(n, _)| n.clone()).collect(),
            default_coeffs: self.default_coeffs.iter().map(Expr::render).collect(),
            params: self.params.iter().map(|(n, v)| Param { name: n.clone(), value: *v }).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureConstant {
    pub left: String,
    pub right: String,
    pub result: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormMetadata {
    pub name: String,
    pub hamiltonian_table: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
}

/// JSON-serializable description of an entry.
#[derive(Debug, Clone, Serialize)]
pub struct EntryMetadata {
    pub id: String,
    pub dimension: usize,
    pub coordinates: Vec<String>,
    pub basis: Vec<String>,
    pub algebra_dimension: usize,
    pub structure_constants: Vec<StructureConstant>,
    pub forms: Vec<FormMetadata>,
    pub symmetries: Vec<String>,
    pub functions: Vec<String>,
    pub default_coeffs: Vec<String>,
    pub params: Vec<Param>,
}

/// Metadata of every entry, in id order, as pretty JSON.
pub fn catalog_json() -> String {
    let all: Vec<EntryMetadata> = IDS.iter().map(|id| entry(id).expect("built-in id").metadata()).collect();
    serde_json::to_string_pretty(&all).expect("metadata is serializable")
}

pub fn entry(id: &str) -> Result<CatalogEntry> {
    match id {
        "riccati" => Ok(riccati()),
        "coupled_riccati" => Ok(coupled_riccati()),
        "ks3" => ks3(0.0),
        "riccati_system" => Ok(riccati_system()),
        "linear2d" => Ok(linear2d()),
        "schwarz_traveling" => schwarz_traveling(2.0),
        other => Err(CatalogError::NotFound(other.to_string())),
    }
}

/// `X_t = sum_k coeffs[k](t) X_k` on the entry's basis.
pub fn build_field(entry: &CatalogEntry, coeffs: &[Expr]) -> Result<TDependentField> {
    if coeffs.len() != entry.basis.len() {
        return Err(CatalogError::CoeffCount {
            system: entry.id.clone(),
            expected: entry.basis.len(),
            found: coeffs.len(),
        });
    }
    Ok(TDependentField::new(entry.id.clone(), entry.basis.clone(), coeffs.to_vec())?)
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn sparse(n: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, v) in entries {
        m[(i, j)] += v;
    }
    m
}

fn exprs(src: &[&str]) -> Vec<Expr> {
    src.iter().map(|s| parse(s).expect("built-in coefficient")).collect()
}

fn names(src: &[&str]) -> Vec<String> {
    src.iter().map(|s| s.to_string()).collect()
}

/// Dense structure constants from `(i, j, k, c)` with `i < j`.
fn constants(r: usize, terms: &[(usize, usize, usize, f64)]) -> Vec<Vec<Vec<f64>>> {
    let mut c = vec![vec![vec![0.0; r]; r]; r];
    for &(i, j, k, v) in terms {
        c[i][j][k] += v;
        c[j][i][k] -= v;
    }
    c
}

fn sl2_constants() -> Vec<Vec<Vec<f64>>> {
    constants(3, &[(0, 1, 0, 1.0), (0, 2, 1, 2.0), (1, 2, 2, 1.0)])
}

fn riccati() -> CatalogEntry {
    let c = Chart::euclidean(&["x"]);
    let basis = vec![
        VectorField::new(&c, |_| dv(&[1.0])).with_jacobian(|_| sparse(1, &[])),
        VectorField::new(&c, |x| dv(&[x[0]])).with_jacobian(|_| sparse(1, &[(0, 0, 1.0)])),
        VectorField::new(&c, |x| dv(&[x[0] * x[0]])).with_jacobian(|x| sparse(1, &[(0, 0, 2.0 * x[0])])),
    ];
    CatalogEntry {
        id: "riccati".into(),
        chart: c,
        basis_names: names(&["X1", "X2", "X3"]),
        basis,
        structure_constants: sl2_constants(),
        forms: Vec::new(),
        symmetries: Vec::new(),
        functions: Vec::new(),
        default_coeffs: exprs(&["1", "0", "1"]),
        params: Vec::new(),
        sample_domain: SampleDomain::new(vec![(-2.0, 2.0)]),
    }
}

fn coupled_riccati() -> CatalogEntry {
    let c = Chart::with_singular_set(&["x1", "x2", "x3", "x4"], |x| vec![x[0] - x[1], x[1] - x[2], x[2] - x[3]]);
    let basis = vec![
        VectorField::new(&c, |_| dv(&[1.0; 4])).with_jacobian(|_| DMatrix::zeros(4, 4)),
        VectorField::new(&c, dv).with_jacobian(|_| DMatrix::identity(4, 4)),
        VectorField::new(&c, |x| DVector::from_iterator(4, x.iter().map(|y| y * y)))
            .with_jacobian(|x| DMatrix::from_diagonal(&DVector::from_iterator(4, x.iter().map(|y| 2.0 * y)))),
    ];
    let omega_r = TwoForm::from_upper(&c, |x| {
        let (d12, d34) = (x[0] - x[1], x[2] - x[3]);
        vec![(0, 1, 1.0 / (d12 * d12)), (2, 3, 1.0 / (d34 * d34))]
    });
    let omega_bar = TwoForm::from_upper(&c, |x| {
        let mut out = Vec::with_capacity(6);
        for i in 0..4 {
            for j in i + 1..4 {
                let d = x[i] - x[j];
                out.push((i, j, 1.0 / (d * d)));
            }
        }
        out
    });
    let pair_domain = |x: &[f64]| x[0] != x[1] && x[2] != x[3];
    // h_k = -sum over the pairs (1,2), (3,4) of p_k(x_i, x_j) / (x_i - x_j).
    let h1 = ScalarField::new(&c, |x| -1.0 / (x[0] - x[1]) - 1.0 / (x[2] - x[3]))
        .with_gradient(|x| {
            let (a, b) = ((x[0] - x[1]).powi(-2), (x[2] - x[3]).powi(-2));
            dv(&[a, -a, b, -b])
        })
        .with_domain(pair_domain);
    let h2 = ScalarField::new(&c, |x| -0.5 * ((x[0] + x[1]) / (x[0] - x[1]) + (x[2] + x[3]) / (x[2] - x[3])))
        .with_gradient(|x| {
            let (a, b) = ((x[0] - x[1]).powi(-2), (x[2] - x[3]).powi(-2));
            dv(&[x[1] * a, -x[0] * a, x[3] * b, -x[2] * b])
        })
        .with_domain(pair_domain);
    let h3 = ScalarField::new(&c, |x| -x[0] * x[1] / (x[0] - x[1]) - x[2] * x[3] / (x[2] - x[3]))
        .with_gradient(|x| {
            let (a, b) = ((x[0] - x[1]).powi(-2), (x[2] - x[3]).powi(-2));
            dv(&[x[1] * x[1] * a, -x[0] * x[0] * a, x[3] * x[3] * b, -x[2] * x[2] * b])
        })
        .with_domain(pair_domain);
    let casimir = ScalarField::new(&c, |x| (x[1] - x[2]) * (x[0] - x[3]) / ((x[0] - x[1]) * (x[2] - x[3])))
        .with_gradient(|x| {
            let num = (x[1] - x[2]) * (x[0] - x[3]);
            let den = (x[0] - x[1]) * (x[2] - x[3]);
            let dn = [x[1] - x[2], x[0] - x[3], -(x[0] - x[3]), -(x[1] - x[2])];
            let dd = [x[2] - x[3], -(x[2] - x[3]), x[0] - x[1], -(x[0] - x[1])];
            DVector::from_fn(4, |i, _| (dn[i] * den - num * dd[i]) / (den * den))
        })
        .with_domain(pair_domain);
    let separated = |x: &[f64]| (0..4).all(|i| (i + 1..4).all(|j| (x[i] - x[j]).abs() >= 0.5));
    CatalogEntry {
        id: "coupled_riccati".into(),
        chart: c,
        basis_names: names(&["X1", "X2", "X3"]),
        basis,
        structure_constants: sl2_constants(),
        forms: vec![
            NamedForm { name: "omega_R".into(), form: omega_r, hamiltonians: Some(vec![h1, h2, h3]) },
            NamedForm { name: "omega_bar".into(), form: omega_bar, hamiltonians: None },
        ],
        symmetries: Vec::new(),
        functions: vec![("C".into(), casimir)],
        default_coeffs: exprs(&["1", "sin(t)", "0.3"]),
        params: Vec::new(),
        sample_domain: SampleDomain::new(vec![(-3.0, 3.0); 4]).with_accept(separated),
    }
}

/// The chart `{v != 0}` with coordinates `(x, v, a)`.
pub fn ks3_chart() -> Chart {
    Chart::with_singular_set(&["x", "v", "a"], |x| vec![x[1]])
}

fn ks3_basis(c: &Chart, c0: f64) -> Vec<VectorField> {
    vec![
        VectorField::new(c, |x| dv(&[0.0, 0.0, 2.0 * x[1]])).with_jacobian(|_| sparse(3, &[(2, 1, 2.0)])),
        VectorField::new(c, |x| dv(&[0.0, x[1], 2.0 * x[2]]))
            .with_jacobian(|_| sparse(3, &[(1, 1, 1.0), (2, 2, 2.0)])),
        VectorField::new(c, move |x| {
            let (v, a) = (x[1], x[2]);
            dv(&[v, a, 1.5 * a * a / v - 2.0 * c0 * v * v * v])
        })
        .with_jacobian(move |x| {
            let (v, a) = (x[1], x[2]);
            sparse(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 1, -1.5 * a * a / (v * v) - 6.0 * c0 * v * v), (2, 2, 3.0 * a / v)])
        }),
    ]
}

fn ks3_hamiltonians(c: &Chart, c0: f64) -> Vec<ScalarField> {
    vec![
        ScalarField::new(c, |x| -2.0 / x[1]).with_gradient(|x| dv(&[0.0, 2.0 / (x[1] * x[1]), 0.0])),
        ScalarField::new(c, |x| -x[2] / (x[1] * x[1]))
            .with_gradient(|x| dv(&[0.0, 2.0 * x[2] / x[1].powi(3), -1.0 / (x[1] * x[1])])),
        ScalarField::new(c, move |x| -x[2] * x[2] / (2.0 * x[1].powi(3)) - 2.0 * c0 * x[1]).with_gradient(move |x| {
            let (v, a) = (x[1], x[2]);
            dv(&[0.0, 1.5 * a * a / v.powi(4) - 2.0 * c0, -a / v.powi(3)])
        }),
    ]
}

/// The Lie symmetry `x^2 d_x + 2vx d_v + 2(ax + v^2) d_a` of the Schwarzian case.
pub fn ks3_symmetry(c: &Chart) -> VectorField {
    VectorField::new(c, |p| {
        let (x, v, a) = (p[0], p[1], p[2]);
        dv(&[x * x, 2.0 * v * x, 2.0 * (a * x + v * v)])
    })
    .with_jacobian(|p| {
        let (x, v, a) = (p[0], p[1], p[2]);
        DMatrix::from_row_slice(3, 3, &[2.0 * x, 0.0, 0.0, 2.0 * v, 2.0 * x, 0.0, 2.0 * a, 4.0 * v, 2.0 * x])
    })
}

/// `-(2/v^3)(x dv^da + v da^dx + a dx^dv)`.
fn omega_zp(c: &Chart) -> TwoForm {
    TwoForm::from_upper(c, |p| {
        let (x, v, a) = (p[0], p[1], p[2]);
        let f = -2.0 / v.powi(3);
        vec![(0, 1, f * a), (1, 2, f * x), (0, 2, -f * v)]
    })
}

fn omega_zp_hamiltonians(c: &Chart) -> Vec<ScalarField> {
    vec![
        ScalarField::new(c, |p| 4.0 * p[0] / p[1]).with_gradient(|p| dv(&[4.0 / p[1], -4.0 * p[0] / (p[1] * p[1]), 0.0])),
        ScalarField::new(c, |p| 2.0 * p[2] * p[0] / (p[1] * p[1]) - 2.0).with_gradient(|p| {
            let (x, v, a) = (p[0], p[1], p[2]);
            dv(&[2.0 * a / (v * v), -4.0 * a * x / v.powi(3), 2.0 * x / (v * v)])
        }),
        ScalarField::new(c, |p| {
            let (x, v, a) = (p[0], p[1], p[2]);
            a * a * x / v.powi(3) - 2.0 * a / v
        })
        .with_gradient(|p| {
            let (x, v, a) = (p[0], p[1], p[2]);
            dv(&[
                a * a / v.powi(3),
                -3.0 * a * a * x / v.powi(4) + 2.0 * a / (v * v),
                2.0 * a * x / v.powi(3) - 2.0 / v,
            ])
        }),
    ]
}

/// Sampling box of the `(x, v, a)` chart with `|v| >= 0.5`.
pub fn ks3_sample_domain() -> SampleDomain {
    SampleDomain::new(vec![(-2.0, 2.0); 3]).with_accept(|x| x[1].abs() >= 0.5)
}

/// The third-order Kummer-Schwarz system with parameter `c0`.
pub fn ks3(c0: f64) -> Result<CatalogEntry> {
    if !c0.is_finite() {
        return Err(CatalogError::Parameter(format!("c0 must be finite, got {c0}")));
    }
    let c = ks3_chart();
    let omega = TwoForm::from_upper(&c, |x| vec![(1, 2, 1.0 / x[1].powi(3))]);
    let mut forms = vec![NamedForm { name: "omega_3KS".into(), form: omega, hamiltonians: Some(ks3_hamiltonians(&c, c0)) }];
    let mut symmetries = Vec::new();
    if c0 == 0.0 {
        forms.push(NamedForm { name: "omega_ZP".into(), form: omega_zp(&c), hamiltonians: Some(omega_zp_hamiltonians(&c)) });
        symmetries.push(("Z_P".to_string(), ks3_symmetry(&c)));
    }
    Ok(CatalogEntry {
        id: "ks3".into(),
        basis: ks3_basis(&c, c0),
        chart: c,
        basis_names: names(&["Y1", "Y2", "Y3"]),
        structure_constants: sl2_constants(),
        forms,
        symmetries,
        functions: Vec::new(),
        default_coeffs: exprs(&["sin(t)", "0", "1"]),
        params: vec![("c0".into(), c0)],
        sample_domain: ks3_sample_domain(),
    })
}

/// `ks3` with `c0 = 0` driven by the constant `b1 = -v0/2`.
pub fn schwarz_traveling(v0: f64) -> Result<CatalogEntry> {
    if !v0.is_finite() {
        return Err(CatalogError::Parameter(format!("v0 must be finite, got {v0}")));
    }
    let mut e = ks3(0.0)?;
    e.id = "schwarz_traveling".into();
    e.default_coeffs = vec![Expr::Num(-v0 / 2.0), Expr::Num(0.0), Expr::Num(1.0)];
    e.params.push(("v0".into(), v0));
    Ok(e)
}

fn riccati_system() -> CatalogEntry {
    let c = Chart::with_singular_set(&["s", "u", "v", "w", "x", "y", "z"], |p| vec![p[2], p[0]]);
    let unit = |k: usize| {
        move |_: &[f64]| {
            let mut e = DVector::zeros(7);
            e[k] = 1.0;
            e
        }
    };
    let zero_jac = |_: &[f64]| DMatrix::zeros(7, 7);
    let basis = vec![
        VectorField::new(&c, |p| {
            let (s, u, v, x) = (p[0], p[1], p[2], p[4]);
            dv(&[-4.0 * u * s, 4.0 * u * u, 4.0 * u * v, v * v, 4.0 * u * x, 2.0 * x * v, x * x])
        })
        .with_jacobian(|p| {
            let (s, u, v, x) = (p[0], p[1], p[2], p[4]);
            sparse(
                7,
                &[
                    (0, 0, -4.0 * u),
                    (0, 1, -4.0 * s),
                    (1, 1, 8.0 * u),
                    (2, 1, 4.0 * v),
                    (2, 2, 4.0 * u),
                    (3, 2, 2.0 * v),
                    (4, 1, 4.0 * x),
                    (4, 4, 4.0 * u),
                    (5, 2, 2.0 * x),
                    (5, 4, 2.0 * v),
                    (6, 4, 2.0 * x),
                ],
            )
        }),
        VectorField::new(&c, unit(1)).with_jacobian(zero_jac),
        VectorField::new(&c, |p| dv(&[0.0, 2.0 * p[1], p[2], 0.0, p[4], 0.0, 0.0]))
            .with_jacobian(|_| sparse(7, &[(1, 1, 2.0), (2, 2, 1.0), (4, 4, 1.0)])),
        VectorField::new(&c, |p| dv(&[p[0], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).with_jacobian(|_| sparse(7, &[(0, 0, 1.0)])),
        VectorField::new(&c, unit(4)).with_jacobian(zero_jac),
        VectorField::new(&c, |p| dv(&[0.0, 0.0, 0.0, 0.0, -2.0 * p[1], -p[2], -p[4]]))
            .with_jacobian(|_| sparse(7, &[(4, 1, -2.0), (5, 2, -1.0), (6, 4, -1.0)])),
        VectorField::new(&c, unit(6)).with_jacobian(zero_jac),
    ];
    let omega = TwoForm::from_upper(&c, |p| {
        let (v, w) = (p[2], p[3]);
        vec![(1, 3, -4.0 * w / (v * v)), (2, 3, 1.0 / v), (1, 2, 4.0 * w * w / v.powi(3))]
    });
    let h1 = ScalarField::new(&c, |p| {
        let (u, v, w) = (p[1], p[2], p[3]);
        let q = v * v - 4.0 * u * w;
        q * q / (2.0 * v * v)
    })
    .with_gradient(|p| {
        let (u, v, w) = (p[1], p[2], p[3]);
        let q = v * v - 4.0 * u * w;
        let mut g = DVector::zeros(7);
        g[1] = -4.0 * w * q / (v * v);
        g[2] = 2.0 * q / v - q * q / v.powi(3);
        g[3] = -4.0 * u * q / (v * v);
        g
    });
    let h2 = ScalarField::new(&c, |p| 2.0 * p[3] * p[3] / (p[2] * p[2])).with_gradient(|p| {
        let (v, w) = (p[2], p[3]);
        let mut g = DVector::zeros(7);
        g[2] = -4.0 * w * w / v.powi(3);
        g[3] = 4.0 * w / (v * v);
        g
    });
    let h3 = ScalarField::new(&c, |p| {
        let (u, v, w) = (p[1], p[2], p[3]);
        4.0 * w * w * u / (v * v) - w
    })
    .with_gradient(|p| {
        let (u, v, w) = (p[1], p[2], p[3]);
        let mut g = DVector::zeros(7);
        g[1] = 4.0 * w * w / (v * v);
        g[2] = -8.0 * w * w * u / v.powi(3);
        g[3] = 8.0 * w * u / (v * v) - 1.0;
        g
    });
    let mut table = vec![h1, h2, h3];
    table.extend((0..4).map(|_| ScalarField::constant(&c, 0.0)));
    let structure = constants(
        7,
        &[
            (0, 1, 2, -4.0),
            (0, 1, 3, 4.0),
            (0, 2, 0, -2.0),
            (0, 4, 5, 2.0),
            (1, 2, 1, 2.0),
            (1, 5, 4, -2.0),
            (2, 4, 4, -1.0),
            (2, 5, 5, 1.0),
            (4, 5, 6, -1.0),
        ],
    );
    CatalogEntry {
        id: "riccati_system".into(),
        chart: c,
        basis_names: names(&["X1", "X2", "X3", "X4", "X5", "X6", "X7"]),
        basis,
        structure_constants: structure,
        forms: vec![NamedForm { name: "omega_RS".into(), form: omega, hamiltonians: Some(table) }],
        symmetries: Vec::new(),
        functions: Vec::new(),
        default_coeffs: exprs(&["0", "1", "0.2", "-0.1", "1", "0.5", "0"]),
        params: Vec::new(),
        sample_domain: SampleDomain::new(vec![(-2.0, 2.0); 7]).with_accept(|p| p[0].abs() >= 0.5 && p[2].abs() >= 0.5),
    }
}

/// The chart `R^2` with coordinates `(x, v)`.
pub fn linear_chart() -> Chart {
    Chart::euclidean(&["x", "v"])
}

fn linear_basis(c: &Chart) -> Vec<VectorField> {
    vec![
        VectorField::new(c, |p| dv(&[0.0, -p[0]])).with_jacobian(|_| sparse(2, &[(1, 0, -1.0)])),
        VectorField::new(c, |p| dv(&[-0.5 * p[0], 0.5 * p[1]])).with_jacobian(|_| sparse(2, &[(0, 0, -0.5), (1, 1, 0.5)])),
        VectorField::new(c, |p| dv(&[p[1], 0.0])).with_jacobian(|_| sparse(2, &[(0, 1, 1.0)])),
    ]
}

fn linear2d() -> CatalogEntry {
    let c = linear_chart();
    let hs = vec![
        ScalarField::new(&c, |p| -p[0] * p[0] / 2.0).with_gradient(|p| dv(&[-p[0], 0.0])),
        ScalarField::new(&c, |p| p[0] * p[1] / 2.0).with_gradient(|p| dv(&[p[1] / 2.0, p[0] / 2.0])),
        ScalarField::new(&c, |p| -p[1] * p[1] / 2.0).with_gradient(|p| dv(&[0.0, -p[1]])),
    ];
    let form = TwoForm::from_upper(&c, |_| vec![(0, 1, 1.0)]);
    let half_dilation = VectorField::new(&c, |p| dv(&[p[0] / 2.0, p[1] / 2.0])).with_jacobian(|_| DMatrix::identity(2, 2) * 0.5);
    CatalogEntry {
        id: "linear2d".into(),
        basis: linear_basis(&c),
        chart: c,
        basis_names: names(&["X1", "X2", "X3"]),
        structure_constants: sl2_constants(),
        forms: vec![NamedForm { name: "omega_L".into(), form, hamiltonians: Some(hs) }],
        symmetries: vec![("Z_L_half".into(), half_dilation)],
        functions: Vec::new(),
        default_coeffs: exprs(&["1", "0", "1"]),
        params: Vec::new(),
        sample_domain: SampleDomain::new(vec![(-2.0, 2.0); 2]),
    }
}

/// Two copies of `linear2d` next to one copy of `ks3` (c0 = 0), with joint
/// basis `M_k = (X_k, X_k, Y_k)`. Coordinates `(x_1, v_1, x_2, v_2, x, v, a)`.
/// Coefficients `(b1, 0, 1)` drive both factors with the same `b1`.
pub fn mixed_joint() -> Result<CatalogEntry> {
    let lin = linear_chart();
    let ks = ks3_chart();
    let chart = prolong::product_chart(&[&lin, &lin, &ks], names(&["x_1", "v_1", "x_2", "v_2", "x", "v", "a"]))?;
    let lb = linear_basis(&lin);
    let kb = ks3_basis(&ks, 0.0);
    let basis = (0..3)
        .map(|k| prolong::product_field(&[&lb[k], &lb[k], &kb[k]], &chart))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let lin_box = SampleDomain::new(vec![(-2.0, 2.0); 2]);
    Ok(CatalogEntry {
        id: "mixed".into(),
        chart,
        basis_names: names(&["M1", "M2", "M3"]),
        basis,
        structure_constants: sl2_constants(),
        forms: Vec::new(),
        symmetries: Vec::new(),
        functions: Vec::new(),
        default_coeffs: exprs(&["0.5+0.1*t", "0", "1"]),
        params: Vec::new(),
        sample_domain: SampleDomain::product(&[lin_box.clone(), lin_box, ks3_sample_domain()]),
    })
}

/// `m` diagonal copies of `ks3` (c0 given) with prolonged basis, forms and tables.
pub fn ks3_prolonged(c0: f64, m: usize) -> Result<CatalogEntry> {
    let base = ks3(c0)?;
    let chart = prolong::prolong_chart(&base.chart, m)?;
    let basis = base.basis.iter().map(|f| prolong::prolong_field(f, m)).collect::<std::result::Result<Vec<_>, _>>()?;
    let forms = base
        .forms
        .iter()
        .map(|nf| -> Result<NamedForm> {
            Ok(NamedForm {
                name: nf.name.clone(),
                form: prolong::prolong_form(&nf.form, m)?,
                hamiltonians: nf
                    .hamiltonians
                    .as_ref()
                    .map(|hs| hs.iter().map(|h| prolong::prolong_function(h, m)).collect::<std::result::Result<Vec<_>, _>>())
                    .transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let symmetries = base
        .symmetries
        .iter()
        .map(|(n, z)| Ok((n.clone(), prolong::prolong_field(z, m)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CatalogEntry {
        id: "ks3_prolonged".into(),
        chart,
        basis_names: base.basis_names.clone(),
        basis,
        structure_constants: base.structure_constants.clone(),
        forms,
        symmetries,
        functions: Vec::new(),
        default_coeffs: base.default_coeffs.clone(),
        params: vec![("c0".into(), c0), ("copies".into(), m as f64)],
        sample_domain: prolong::prolong_sample_domain(&base.sample_domain, m)?,
    })
}

/// One line of a structure report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub label: String,
    pub residual: f64,
}

/// Worst-case residuals of an entry's identities over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub system: String,
    pub points: usize,
    pub lines: Vec<ReportLine>,
}

impl StructureReport {
    pub fn max_residual(&self) -> f64 {
        self.lines.iter().map(|l| l.residual).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.lines.iter().all(|l| l.residual <= tol)
    }

    pub fn render(&self, tol: f64) -> String {
        let mut s = format!("system={} points={} tol={:e}\n", self.system, self.points, tol);
        for l in &self.lines {
            let mark = if l.residual <= tol { "ok" } else { "FAIL" };
            s.push_str(&format!("{:<48} {:.6e} {}\n", l.label, l.residual, mark));
        }
        s.push_str(&format!("max_residual={:.6e}\n", self.max_residual()));
        s
    }
}

fn worst<F>(samples: &[StatePoint], mut f: F) -> Result<f64>
where
    F: FnMut(&StatePoint) -> Result<f64>,
{
    samples.iter().try_fold(0.0_f64, |acc, p| Ok(acc.max(f(p)?)))
}

/// Residuals of the structure constants, closedness of every form, every
/// Hamiltonian pair and every Poisson bracket `{h_i, h_j} = sum_k c_ij^k h_k`.
pub fn verify_entry(entry: &CatalogEntry, samples: &[StatePoint]) -> Result<StructureReport> {
    let r = entry.basis.len();
    let mut lines = Vec::new();
    for i in 0..r {
        for j in i + 1..r {
            let br = lie_bracket(&entry.basis[i], &entry.basis[j])?;
            let terms = entry.bracket_expansion(i, j);
            let res = worst(samples, |p| {
                let mut d = br.eval(p)?;
                for (k, c) in &terms {
                    d -= entry.basis[*k].eval(p)? * *c;
                }
                Ok(d.amax())
            })?;
            lines.push(ReportLine {
                label: format!("bracket [{},{}]", entry.basis_names[i], entry.basis_names[j]),
                residual: res,
            });
        }
    }
    for nf in &entry.forms {
        let res = worst(samples, |p| Ok(exterior_derivative_max(&nf.form, p)?))?;
        lines.push(ReportLine { label: format!("closed d{}", nf.name), residual: res });
        let Some(hs) = &nf.hamiltonians else { continue };
        for (i, h) in hs.iter().enumerate() {
            let pair = HamiltonianPair::new(entry.basis[i].clone(), h.clone(), nf.form.clone())?;
            let res = crate::geometry::check_hamiltonian_pair(&pair, samples)?;
            lines.push(ReportLine {
                label: format!("hamiltonian iota_{} {} + dh{}", entry.basis_names[i], nf.name, i + 1),
                residual: res,
            });
        }
        for i in 0..r {
            for j in i + 1..r {
                let pair = HamiltonianPair::new(entry.basis[i].clone(), hs[i].clone(), nf.form.clone())?;
                let terms = entry.bracket_expansion(i, j);
                let res = worst(samples, |p| {
                    let mut d = crate::geometry::poisson_bracket(&pair, &hs[j], p)?;
                    for (k, c) in &terms {
                        d -= c * hs[*k].eval(p)?;
                    }
                    Ok(d.abs())
                })?;
                lines.push(ReportLine { label: format!("poisson {{h{},h{}}} {}", i + 1, j + 1, nf.name), residual: res });
            }
        }
    }
    Ok(StructureReport { system: entry.id.clone(), points: samples.len(), lines })
}
