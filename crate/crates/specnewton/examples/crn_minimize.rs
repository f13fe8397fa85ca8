//! Minimize a composed matrix objective with cubic-regularized Newton and
//! print the convergence trace.
//!
//! The problem is `min_X 0.5 * ||X^2 + I - C||_F^2` over symmetric `X`:
//! the transform `G3` pushes the spectrum of `X^2 + 1` above one, and the
//! quadratic outer pulls it toward `C`.

use std::sync::Arc;

use nalgebra::DMatrix;
use specnewton::basis::sym_basis;
use specnewton::calculus::{ComposedObjective, QuadraticDistance};
use specnewton::crn::{crn_minimize, CRNConfig};
use specnewton::matfunc::{make_transform, symmetrize, TransformKind};

fn main() -> specnewton::Result<()> {
    let n = 6;
    let raw = DMatrix::from_fn(n, n, |i, j| ((2 * i + 5 * j) as f64 * 0.43).sin());
    let c = symmetrize(&raw) + DMatrix::identity(n, n) * 3.0;

    let t = make_transform(TransformKind::G3, 1.0, 0.0)?;
    let obj = ComposedObjective::new(Arc::new(QuadraticDistance { c }), &t);

    let basis = sym_basis(n);
    let x0 = DMatrix::identity(n, n);
    let config = CRNConfig { eps: 1e-9, max_iter: 60, ..CRNConfig::default() };
    let res = crn_minimize(&obj, &x0, &basis, &config)?;

    println!("{:>4} {:>14} {:>12} {:>12} {:>8}", "iter", "f", "|grad|", "M", "|step|");
    for row in &res.trace.rows {
        println!(
            "{:>4} {:>14.8} {:>12.3e} {:>12.3e} {:>8.1e}",
            row.iter, row.f, row.grad_norm, row.m, row.step_norm
        );
    }
    println!(
        "\nstatus {:?} after {} accepted steps; grad norm {:.3e}, lambda_min {:.3e}, certified: {}",
        res.status, res.accepted_steps, res.report.grad_norm, res.report.lambda_min, res.report.pass
    );
    Ok(())
}
