//! Verify the gradient and Hessian-vector oracles of a composed objective
//! `F(G(X))` against finite differences, for every spectral transform.

use std::sync::Arc;

use nalgebra::DMatrix;
use specnewton::calculus::{fd_check_gradient, fd_check_hessian, ComposedObjective, LogDet, QuadraticDistance};
use specnewton::matfunc::{make_transform, symmetrize, TransformKind};

fn main() -> specnewton::Result<()> {
    let n = 5;
    let x = symmetrize(&DMatrix::from_fn(n, n, |i, j| ((3 * i + 7 * j + 1) as f64 * 0.137).sin()));

    // Outer: squared distance to a target in the transformed space.
    let target = DMatrix::identity(n, n) * 2.0;
    println!("outer = 0.5 * ||S - 2I||^2, S = G(X)\n");
    println!("{:<6} {:>12} {:>12}", "G", "grad err", "hess err");
    for kind in TransformKind::ALL {
        let t = make_transform(kind, 0.5, 3.0)?;
        let obj = ComposedObjective::new(
            Arc::new(QuadraticDistance { c: target.clone() }),
            &t,
        );
        let ge = fd_check_gradient(&obj, &x, 10)?;
        let he = fd_check_hessian(&obj, &x, 10)?;
        println!("{kind:<6?} {ge:>12.3e} {he:>12.3e}");
    }

    // A curved outer: log det over the SPD image of G1.
    let t = make_transform(TransformKind::G1, 0.0, 0.0)?;
    let obj = ComposedObjective::new(Arc::new(LogDet { n }), &t);
    println!(
        "\nlog det(e^X): grad err {:.3e}, hess err {:.3e}",
        fd_check_gradient(&obj, &x, 10)?,
        fd_check_hessian(&obj, &x, 10)?
    );
    Ok(())
}
