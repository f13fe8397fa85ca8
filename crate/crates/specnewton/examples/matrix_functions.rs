//! Apply a scalar function to a symmetric matrix through its spectrum and
//! differentiate the resulting matrix function in a direction.

use nalgebra::DMatrix;
use specnewton::matfunc::{apply_matfunc, dmatfunc, symmetrize, ScalarFunctionSpec};

fn main() -> specnewton::Result<()> {
    let x = symmetrize(&DMatrix::from_row_slice(3, 3, &[
        1.0, 0.4, -0.2, //
        0.4, 0.5, 0.3, //
        -0.2, 0.3, -0.8,
    ]));
    let h = symmetrize(&DMatrix::from_row_slice(3, 3, &[
        0.1, -0.3, 0.2, //
        -0.3, 0.0, 0.5, //
        0.2, 0.5, -0.1,
    ]));

    let exp = ScalarFunctionSpec::exp();
    let ex = apply_matfunc(&exp, &x)?;
    println!("exp(X) =\n{ex:.6}");

    // Fréchet derivative of X -> exp(X) in direction H (Daleckii–Krein).
    let dex = dmatfunc(&exp, &x, &h)?;
    println!("D exp(X)[H] =\n{dex:.6}");

    // Sanity: compare against a central finite difference.
    let t = 1e-6;
    let plus = apply_matfunc(&exp, &(&x + t * &h))?;
    let minus = apply_matfunc(&exp, &(&x - t * &h))?;
    let fd = (plus - minus) / (2.0 * t);
    println!("finite-difference deviation: {:.3e}", (&dex - fd).norm());

    // x^2 has the closed-form derivative XH + HX.
    let square = ScalarFunctionSpec::square();
    let dsq = dmatfunc(&square, &x, &h)?;
    let closed = &x * &h + &h * &x;
    println!("x^2 closed-form deviation:   {:.3e}", (dsq - closed).norm());
    Ok(())
}
