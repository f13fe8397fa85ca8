//! Map arbitrary symmetric matrices onto a prescribed eigenvalue interval
//! with the seven spectral transforms, and invert the map on the interval
//! interior.

use nalgebra::DMatrix;
use specnewton::matfunc::{
    apply_matfunc, make_transform, spectral_decompose, symmetrize, TransformKind,
};

fn main() -> specnewton::Result<()> {
    // An indefinite matrix: eigenvalues of both signs.
    let x = symmetrize(&DMatrix::from_row_slice(4, 4, &[
        2.0, 1.5, -0.7, 0.3, //
        1.5, -3.0, 0.2, 1.1, //
        -0.7, 0.2, 0.4, -2.2, //
        0.3, 1.1, -2.2, 1.0,
    ]));
    let eig = spectral_decompose(&x)?;
    println!("eigenvalues of X:      {:?}", eig.lambda.as_slice());

    for kind in TransformKind::ALL {
        let t = make_transform(kind, 1.0, 4.0)?;
        let gx = apply_matfunc(&t.scalar, &x)?;
        let mapped = spectral_decompose(&gx)?;
        let inside = mapped.lambda.iter().all(|&l| t.interval.contains_with_slack(l, 1e-12));
        println!(
            "{kind:?} -> [{:>7.3}, {:>7.3}]  all in target interval: {inside}",
            mapped.lambda.min(),
            mapped.lambda.max()
        );

        // Right inverse on the interval interior: G(G^{-1}(Y)) = Y.
        let y = apply_matfunc(&t.inverse_scalar, &gx)?;
        let round_trip = apply_matfunc(&t.scalar, &y)?;
        println!("        round-trip deviation: {:.3e}", (&round_trip - &gx).norm());
    }
    Ok(())
}
