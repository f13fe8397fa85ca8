//! Solve the cubic-regularized model subproblem
//! `min_z bᵀz + ½ zᵀAz + (M/6)‖z‖³` to global optimality, including the
//! hard case, and verify the optimality certificate.

use nalgebra::{DMatrix, DVector};
use specnewton::basis::CubicSubproblem;
use specnewton::cubic::{cubic_objective, solve_cubic, verify_global};

fn main() -> specnewton::Result<()> {
    // Easy case: a known solution. A = I, M = 2, b = (2, 0) gives
    // z = (-1, 0) with step norm r = 1.
    let easy = CubicSubproblem {
        b: DVector::from_row_slice(&[2.0, 0.0]),
        a: DMatrix::identity(2, 2),
        m: 2.0,
    };
    let sol = solve_cubic(&easy)?;
    println!("easy case:  z = {:?}, r = {}, case = {:?}", sol.z.as_slice(), sol.r, sol.case);
    println!("            model value {:.6}, certificate residual {:.3e}",
        cubic_objective(&easy, &sol.z), verify_global(&easy, &sol.z)?);

    // Hard case: the gradient is orthogonal to the most negative
    // eigendirection of A, so a null-space component must be added.
    let hard = CubicSubproblem {
        b: DVector::from_row_slice(&[0.0, 0.5]),
        a: DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, 0.0])),
        m: 2.0,
    };
    let sol = solve_cubic(&hard)?;
    println!("hard case:  z = {:?}, r = {}, case = {:?}", sol.z.as_slice(), sol.r, sol.case);
    println!("            certificate residual {:.3e}", verify_global(&hard, &sol.z)?);

    // An indefinite random-ish instance in higher dimension.
    let d = 12;
    let raw = DMatrix::from_fn(d, d, |i, j| ((5 * i + 3 * j) as f64 * 0.61).cos());
    let a = (&raw + raw.transpose()) * 0.5;
    let p = CubicSubproblem {
        b: DVector::from_fn(d, |i, _| ((i * i) as f64 * 0.37).sin()),
        a,
        m: 0.8,
    };
    let sol = solve_cubic(&p)?;
    println!(
        "d = {d}:     r = {:.6}, case = {:?}, certificate residual {:.3e}",
        sol.r,
        sol.case,
        verify_global(&p, &sol.z)?
    );
    Ok(())
}
