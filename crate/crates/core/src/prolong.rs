//! Direct products and diagonal prolongations.
//!
//! A product of charts `N_1 x ... x N_m` has the concatenated coordinates;
//! fields act block by block, functions are summed over blocks and forms are
//! block-diagonal. The diagonal prolongation to `N^m` is the product of `m`
//! copies of the same object, with coordinate names suffixed `_1 .. _m`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Chart, GeometryError, HamiltonianPair, SampleDomain, ScalarField, TwoForm, VectorField};

pub const MAX_COPIES: usize = 8;
pub const MAX_DIMENSION: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProlongError {
    #[error("number of copies must be between 1 and {MAX_COPIES}, got {0}")]
    Copies(usize),
    #[error("prolonged dimension {0} exceeds {MAX_DIMENSION}")]
    TooLarge(usize),
    #[error("a product needs at least one factor")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, ProlongError>;

fn blocks(dims: &[usize]) -> Vec<(usize, usize)> {
    dims.iter()
        .scan(0, |off, n| {
            let start = *off;
            *off += n;
            Some((start, *n))
        })
        .collect()
}

fn check_dims(charts: &[&Chart]) -> Result<Vec<usize>> {
    if charts.is_empty() {
        return Err(ProlongError::Empty);
    }
    let dims: Vec<usize> = charts.iter().map(|c| c.dimension()).collect();
    let total: usize = dims.iter().sum();
    if total > MAX_DIMENSION {
        return Err(ProlongError::TooLarge(total));
    }
    Ok(dims)
}

fn check_copies(m: usize) -> Result<()> {
    if (1..=MAX_COPIES).contains(&m) {
        Ok(())
    } else {
        Err(ProlongError::Copies(m))
    }
}

/// Coordinate names of `N^m`: every base name suffixed by its copy index.
pub fn copy_names(base: &Chart, m: usize) -> Vec<String> {
    (1..=m)
        .flat_map(|i| base.coordinate_names().iter().map(move |n| format!("{n}_{i}")))
        .collect()
}

/// Product chart whose domain is the conjunction of the factor domains.
pub fn product_chart(charts: &[&Chart], names: Vec<String>) -> Result<Chart> {
    check_dims(charts)?;
    let owned: Vec<Chart> = charts.iter().map(|c| (*c).clone()).collect();
    Ok(Chart::product(&owned, names)?)
}

/// The field acting as `fields[i]` on the i-th block.
pub fn product_field(fields: &[&VectorField], chart: &Chart) -> Result<VectorField> {
    let charts: Vec<&Chart> = fields.iter().map(|f| f.chart()).collect();
    let dims = check_dims(&charts)?;
    let total: usize = dims.iter().sum();
    if chart.dimension() != total {
        return Err(GeometryError::DimensionMismatch { expected: total, found: chart.dimension() }.into());
    }
    let parts: Vec<((usize, usize), VectorField)> =
        blocks(&dims).into_iter().zip(fields.iter().map(|f| (*f).clone())).collect();
    let jac_parts = parts.clone();
    Ok(VectorField::new(chart, move |x| {
        let mut out = DVector::zeros(total);
        for ((o, n), f) in &parts {
            out.rows_mut(*o, *n).copy_from(&f.eval_raw(&x[*o..*o + *n]));
        }
        out
    })
    .with_jacobian(move |x| {
        let mut out = DMatrix::zeros(total, total);
        for ((o, n), f) in &jac_parts {
            out.view_mut((*o, *o), (*n, *n)).copy_from(&f.jacobian_raw(&x[*o..*o + *n]));
        }
        out
    }))
}

/// `f_1(x_(1)) + ... + f_m(x_(m))`.
pub fn product_function(fs: &[&ScalarField], chart: &Chart) -> Result<ScalarField> {
    let charts: Vec<&Chart> = fs.iter().map(|f| f.chart()).collect();
    let dims = check_dims(&charts)?;
    let total: usize = dims.iter().sum();
    if chart.dimension() != total {
        return Err(GeometryError::DimensionMismatch { expected: total, found: chart.dimension() }.into());
    }
    let parts: Vec<((usize, usize), ScalarField)> =
        blocks(&dims).into_iter().zip(fs.iter().map(|f| (*f).clone())).collect();
    let (gp, dp) = (parts.clone(), parts.clone());
    Ok(ScalarField::new(chart, move |x| parts.iter().map(|((o, n), f)| f.eval_raw(&x[*o..*o + *n])).sum())
        .with_gradient(move |x| {
            let mut g = DVector::zeros(total);
            for ((o, n), f) in &gp {
                g.rows_mut(*o, *n).copy_from(&f.gradient_raw(&x[*o..*o + *n]));
            }
            g
        })
        .with_domain(move |x| dp.iter().all(|((o, n), f)| f.in_domain(&x[*o..*o + *n]))))
}

/// Block-diagonal form with `forms[i]` on the i-th block.
pub fn product_form(forms: &[&TwoForm], chart: &Chart) -> Result<TwoForm> {
    let charts: Vec<&Chart> = forms.iter().map(|f| f.chart()).collect();
    let dims = check_dims(&charts)?;
    let total: usize = dims.iter().sum();
    if chart.dimension() != total {
        return Err(GeometryError::DimensionMismatch { expected: total, found: chart.dimension() }.into());
    }
    let parts: Vec<((usize, usize), TwoForm)> =
        blocks(&dims).into_iter().zip(forms.iter().map(|f| (*f).clone())).collect();
    Ok(TwoForm::new(chart, move |x| {
        let mut out = DMatrix::zeros(total, total);
        for ((o, n), w) in &parts {
            out.view_mut((*o, *o), (*n, *n)).copy_from(&w.eval_raw(&x[*o..*o + *n]));
        }
        out
    }))
}

/// The chart of `N^m`.
pub fn prolong_chart(base: &Chart, m: usize) -> Result<Chart> {
    check_copies(m)?;
    if m == 1 {
        return Ok(base.clone());
    }
    product_chart(&vec![base; m], copy_names(base, m))
}

pub fn prolong_field(x: &VectorField, m: usize) -> Result<VectorField> {
    check_copies(m)?;
    if m == 1 {
        return Ok(x.clone());
    }
    let chart = prolong_chart(x.chart(), m)?;
    product_field(&vec![x; m], &chart)
}

pub fn prolong_function(f: &ScalarField, m: usize) -> Result<ScalarField> {
    check_copies(m)?;
    if m == 1 {
        return Ok(f.clone());
    }
    let chart = prolong_chart(f.chart(), m)?;
    product_function(&vec![f; m], &chart)
}

pub fn prolong_form(w: &TwoForm, m: usize) -> Result<TwoForm> {
    check_copies(m)?;
    if m == 1 {
        return Ok(w.clone());
    }
    let chart = prolong_chart(w.chart(), m)?;
    product_form(&vec![w; m], &chart)
}

pub fn prolong_pair(p: &HamiltonianPair, m: usize) -> Result<HamiltonianPair> {
    Ok(HamiltonianPair::new(
        prolong_field(&p.field, m)?,
        prolong_function(&p.hamiltonian, m)?,
        prolong_form(&p.form, m)?,
    )?)
}

pub fn prolong_sample_domain(d: &SampleDomain, m: usize) -> Result<SampleDomain> {
    check_copies(m)?;
    Ok(SampleDomain::product(&vec![d.clone(); m]))
}

/// Exchange copy blocks `i` and `j` (zero-based) of a point of `N^m`.
pub fn swap_copies(x: &[f64], n: usize, i: usize, j: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for a in 0..n {
        out.swap(i * n + a, j * n + a);
    }
    out
}
