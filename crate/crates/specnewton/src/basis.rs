//! Orthonormal bases of the symmetric matrices and vectorization of the
//! cubic-regularized Newton subproblem.
//!
//! The standard basis of `S^{n×n}` under the trace inner product is the `n`
//! diagonal units `e_i e_iᵀ` followed by the `n(n−1)/2` normalized
//! off-diagonal pairs `(e_i e_jᵀ + e_j e_iᵀ)/√2`. Projecting the gradient and
//! Hessian of a [`MatrixObjective`] onto this basis yields the vector `b` and
//! dense matrix `A` of the subproblem `min bᵀz + ½zᵀAz + (M/6)‖z‖³`.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calculus::{inner, MatrixObjective};
use crate::error::{Error, Result};
use crate::matfunc::symmetrize;

/// A trace-orthonormal basis `E_1 … E_d` of a subspace of `S^{n×n}`.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    pub n: usize,
    pub elements: Vec<DMatrix<f64>>,
}

impl OrthoBasis {
    pub fn d(&self) -> usize {
        self.elements.len()
    }
}

/// The standard orthonormal basis of the full symmetric space: diagonal
/// units first, then off-diagonal pairs in lexicographic `(i, j)` order.
/// This ordering is fixed so that `b`/`A` dumps are reproducible.
pub fn sym_basis(n: usize) -> OrthoBasis {
    assert!(n >= 1, "basis needs n >= 1");
    let mut elements = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        let mut e = DMatrix::zeros(n, n);
        e[(i, i)] = 1.0;
        elements.push(e);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = s;
            e[(j, i)] = s;
            elements.push(e);
        }
    }
    OrthoBasis { n, elements }
}

/// `Σ z_i E_i`.
pub fn embed(z: &DVector<f64>, basis: &OrthoBasis) -> Result<DMatrix<f64>> {
    if z.len() != basis.d() {
        return Err(Error::Dimension(format!(
            "coefficient vector has length {}, basis dimension is {}",
            z.len(),
            basis.d()
        )));
    }
    let mut out = DMatrix::zeros(basis.n, basis.n);
    for (zi, e) in z.iter().zip(&basis.elements) {
        out += *zi * e;
    }
    Ok(out)
}

/// Coefficients `⟨H, E_i⟩` of a symmetric matrix in the basis.
pub fn project(h: &DMatrix<f64>, basis: &OrthoBasis) -> Result<DVector<f64>> {
    if h.nrows() != basis.n || h.ncols() != basis.n {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, basis is over {n}x{n} symmetric matrices",
            h.nrows(),
            h.ncols(),
            n = basis.n
        )));
    }
    let hs = symmetrize(h);
    Ok(DVector::from_iterator(
        basis.d(),
        basis.elements.iter().map(|e| inner(&hs, e)),
    ))
}

/// The vectorized cubic subproblem `min bᵀz + ½zᵀAz + (M/6)‖z‖³`.
#[derive(Debug, Clone)]
pub struct CubicSubproblem {
    pub b: DVector<f64>,
    pub a: DMatrix<f64>,
    pub m: f64,
}

/// Assemble `b_i = ⟨∇F(X), E_i⟩` and `A_ij = ⟨∇²F(X)[E_i], E_j⟩`.
///
/// The `d` Hessian-vector products are independent and evaluated in
/// parallel; the objective's oracles must tolerate concurrent calls (part of
/// the [`MatrixObjective`] contract).
pub fn build_subproblem(
    obj: &dyn MatrixObjective,
    x: &DMatrix<f64>,
    basis: &OrthoBasis,
    m: f64,
) -> Result<CubicSubproblem> {
    if m <= 0.0 || !m.is_finite() {
        return Err(Error::Parameter(format!("regularization weight must be positive, got {m}")));
    }
    let grad = obj.gradient(x)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("gradient is non-finite".into()));
    }
    let b = project(&grad, basis)?;
    let d = basis.d();

    let columns: Vec<DVector<f64>> = (0..d)
        .into_par_iter()
        .map(|i| -> Result<DVector<f64>> {
            let hv = obj.hess_vec(x, &basis.elements[i])?;
            if hv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "Hessian-vector product is non-finite at basis index {i}"
                )));
            }
            project(&hv, basis)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut a = DMatrix::zeros(d, d);
    for (i, col) in columns.iter().enumerate() {
        a.set_column(i, col);
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(CubicSubproblem { b, a, m })
}

/// Write `(b, A)` as a plain-text file: one line `d`, one whitespace-
/// separated line for `b`, then `d` row-major lines for `A`.
pub fn dump_subproblem(p: &CubicSubproblem, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = p.b.len();
    writeln!(f, "{d}")?;
    let brow: Vec<String> = p.b.iter().map(|v| format!("{v:.17e}")).collect();
    writeln!(f, "{}", brow.join(" "))?;
    for i in 0..d {
        let row: Vec<String> = (0..d).map(|j| format!("{:.17e}", p.a[(i, j)])).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    Ok(())
}
