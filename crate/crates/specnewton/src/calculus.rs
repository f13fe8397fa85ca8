//! Objective oracles on the space of symmetric matrices and the second-order
//! chain rule for composed objectives `F(G(X))`.
//!
//! A [`MatrixObjective`] exposes value, gradient, and Hessian-vector product
//! under the trace inner product. [`ComposedObjective`] pulls an outer
//! objective back through a spectral transform: the gradient uses the
//! self-adjointness of the Daleckii–Krein operator, and the Hessian-vector
//! product combines the outer Hessian with the bilinear second derivative of
//! the matrix function. Finite-difference checkers validate any oracle.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matfunc::{
    apply_matfunc_eig, d2matfunc_bilinear_eig, dmatfunc_eig, spectral_decompose, symmetrize,
    ScalarFunctionSpec, SpectralTransform, SymEigen, TransformKind,
};

/// Trace inner product `<A, B> = tr(AᵀB)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// A twice-differentiable real function of a symmetric matrix, exposed
/// through derivative oracles.
///
/// Implementations must be pure with respect to the inputs: concurrent calls
/// from multiple threads are part of the contract (subproblem assembly fans
/// out Hessian-vector products).
pub trait MatrixObjective: Send + Sync {
    /// Matrix side length `n`; arguments are symmetric `n x n`.
    fn dim(&self) -> usize;

    fn value(&self, x: &DMatrix<f64>) -> Result<f64>;

    /// Gradient under the trace inner product: `<gradient(X), H> = DF(X)[H]`.
    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Hessian-vector product `∇²F(X)[H]`, linear in `H` with a symmetric
    /// induced bilinear form.
    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

fn check_dim(n: usize, x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {n}x{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// `F(X) = tr(X)`.
#[derive(Debug, Clone)]
pub struct TraceObjective {
    pub n: usize,
}

impl MatrixObjective for TraceObjective {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.n, x, "argument")?;
        Ok(x.trace())
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        Ok(DMatrix::identity(self.n, self.n))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        check_dim(self.n, h, "direction")?;
        Ok(DMatrix::zeros(self.n, self.n))
    }
}

/// `F(X) = <C, X>`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub c: DMatrix<f64>,
}

impl MatrixObjective for LinearObjective {
    fn dim(&self) -> usize {
        self.c.nrows()
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.dim(), x, "argument")?;
        Ok(inner(&self.c, x))
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x, "argument")?;
        Ok(symmetrize(&self.c))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x, "argument")?;
        check_dim(self.dim(), h, "direction")?;
        Ok(DMatrix::zeros(self.dim(), self.dim()))
    }
}

/// `F(X) = ½‖X − C‖²_F`.
#[derive(Debug, Clone)]
pub struct QuadraticDistance {
    pub c: DMatrix<f64>,
}

impl MatrixObjective for QuadraticDistance {
    fn dim(&self) -> usize {
        self.c.nrows()
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.dim(), x, "argument")?;
        Ok(0.5 * (x - &self.c).norm_squared())
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x, "argument")?;
        Ok(symmetrize(&(x - &self.c)))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x, "argument")?;
        check_dim(self.dim(), h, "direction")?;
        Ok(symmetrize(h))
    }
}

/// `F(X) = ½‖X‖²_F`.
#[derive(Debug, Clone)]
pub struct HalfFrobSq {
    pub n: usize,
}

impl MatrixObjective for HalfFrobSq {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.n, x, "argument")?;
        Ok(0.5 * x.norm_squared())
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        Ok(symmetrize(x))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        check_dim(self.n, h, "direction")?;
        Ok(symmetrize(h))
    }
}

/// `F(X) = log det X` on the SPD cone.
#[derive(Debug, Clone)]
pub struct LogDet {
    pub n: usize,
}

impl LogDet {
    fn inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let chol = nalgebra::Cholesky::new(symmetrize(x))
            .ok_or_else(|| Error::Domain("log det requires a positive definite argument".into()))?;
        Ok(chol.inverse())
    }
}

impl MatrixObjective for LogDet {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        check_dim(self.n, x, "argument")?;
        let chol = nalgebra::Cholesky::new(symmetrize(x))
            .ok_or_else(|| Error::Domain("log det requires a positive definite argument".into()))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        Ok(symmetrize(&self.inverse(x)?))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, x, "argument")?;
        check_dim(self.n, h, "direction")?;
        let inv = self.inverse(x)?;
        Ok(symmetrize(&(-(&inv * symmetrize(h) * &inv))))
    }
}

/// State shared between the gradient call and the subsequent fan-out of
/// Hessian-vector products at the same point.
struct ComposedCache {
    x: DMatrix<f64>,
    gx: DMatrix<f64>,
    /// Present only when the generic (eigendecomposition) path is in use.
    eig: Option<SymEigen>,
    outer_grad: OnceLock<DMatrix<f64>>,
}

/// The pullback `F ∘ G` of an outer objective through a spectral transform.
///
/// Transforms with a polynomial generator (`G3`/`G4`: `±x² + α`) take a
/// closed-form derivative path (`DG(X)[H] = ±(XH + HX)`); all others go
/// through the eigendecomposition of `X`, which is cached per evaluation
/// point because a subproblem assembly calls `hess_vec` many times at one
/// `X`.
pub struct ComposedObjective {
    outer: Arc<dyn MatrixObjective>,
    scalar: ScalarFunctionSpec,
    /// `Some(sign)` for the `sign·x² + alpha` fast path.
    fast_square: Option<f64>,
    alpha: f64,
    cache: Mutex<Option<Arc<ComposedCache>>>,
}

impl ComposedObjective {
    pub fn new(outer: Arc<dyn MatrixObjective>, transform: &SpectralTransform) -> Self {
        let fast_square = match transform.kind {
            TransformKind::G3 => Some(1.0),
            TransformKind::G4 => Some(-1.0),
            _ => None,
        };
        ComposedObjective {
            outer,
            scalar: transform.scalar.clone(),
            fast_square,
            alpha: transform.alpha,
            cache: Mutex::new(None),
        }
    }

    /// Compose with an arbitrary scalar generator (generic path only).
    pub fn with_scalar(outer: Arc<dyn MatrixObjective>, scalar: ScalarFunctionSpec) -> Self {
        ComposedObjective {
            outer,
            scalar,
            fast_square: None,
            alpha: 0.0,
            cache: Mutex::new(None),
        }
    }

    fn cache_for(&self, x: &DMatrix<f64>) -> Result<Arc<ComposedCache>> {
        let mut guard = self.cache.lock().unwrap();
        if let Some(c) = guard.as_ref() {
            if c.x == *x {
                return Ok(Arc::clone(c));
            }
        }
        let xs = symmetrize(x);
        let (gx, eig) = if let Some(sign) = self.fast_square {
            let n = xs.nrows();
            let mut gx = &xs * &xs * sign;
            for i in 0..n {
                gx[(i, i)] += self.alpha;
            }
            (gx, None)
        } else {
            let eig = spectral_decompose(&xs)?;
            let gx = apply_matfunc_eig(&self.scalar, &eig)?;
            (gx, Some(eig))
        };
        let built = Arc::new(ComposedCache {
            x: x.clone(),
            gx,
            eig,
            outer_grad: OnceLock::new(),
        });
        *guard = Some(Arc::clone(&built));
        Ok(built)
    }

    fn outer_grad<'c>(&self, cache: &'c ComposedCache) -> Result<&'c DMatrix<f64>> {
        if let Some(g) = cache.outer_grad.get() {
            return Ok(g);
        }
        let g = self.outer.gradient(&cache.gx)?;
        let _ = cache.outer_grad.set(g);
        Ok(cache.outer_grad.get().expect("just set"))
    }

    /// `DG(X)[H]`.
    fn dg(&self, cache: &ComposedCache, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(sign) = self.fast_square {
            let hs = symmetrize(h);
            Ok((x * &hs + &hs * x) * sign)
        } else {
            dmatfunc_eig(&self.scalar, cache.eig.as_ref().expect("generic path"), h)
        }
    }

    /// Bilinear second derivative `D²G(X)[H, W]`.
    fn d2g_bilinear(
        &self,
        cache: &ComposedCache,
        h: &DMatrix<f64>,
        w: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        if let Some(sign) = self.fast_square {
            let hs = symmetrize(h);
            let ws = symmetrize(w);
            Ok((&hs * &ws + &ws * &hs) * sign)
        } else {
            d2matfunc_bilinear_eig(&self.scalar, cache.eig.as_ref().expect("generic path"), h, w)
        }
    }
}

impl MatrixObjective for ComposedObjective {
    fn dim(&self) -> usize {
        self.outer.dim()
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        let cache = self.cache_for(x)?;
        self.outer.value(&cache.gx)
    }

    fn gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        // D(F∘G)(X)[H] = <∇F(G(X)), DG(X)[H]> and DG(X)[·] is self-adjoint
        // (real symmetric Hadamard multiplier in the eigenbasis of X), so
        // the gradient is DG(X)[∇F(G(X))].
        let cache = self.cache_for(x)?;
        let g = self.outer_grad(&cache)?;
        let xs = symmetrize(x);
        self.dg(&cache, &xs, g)
    }

    fn hess_vec(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cache = self.cache_for(x)?;
        let xs = symmetrize(x);
        let dgh = self.dg(&cache, &xs, h)?;
        let outer_hv = self.outer.hess_vec(&cache.gx, &dgh)?;
        let first = self.dg(&cache, &xs, &outer_hv)?;
        let g = self.outer_grad(&cache)?;
        let second = self.d2g_bilinear(&cache, h, g)?;
        Ok(first + second)
    }
}

/// Direct evaluation of the two-term second-order chain rule,
/// `D²F(G(X))[DG[H], DG[H]] + <∇F(G(X)), D²G(X)[H,H]>`.
///
/// This is an independent route to the quadratic form and must agree with
/// `<hess_vec(X, H), H>`.
pub fn quadform_composed(c: &ComposedObjective, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    let cache = c.cache_for(x)?;
    let xs = symmetrize(x);
    let dgh = c.dg(&cache, &xs, h)?;
    let outer_hv = c.outer.hess_vec(&cache.gx, &dgh)?;
    let d2ghh = c.d2g_bilinear(&cache, h, h)?;
    let g = c.outer_grad(&cache)?;
    Ok(inner(&outer_hv, &dgh) + inner(g, &d2ghh))
}

fn random_unit_direction(n: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
    let sym = symmetrize(&raw);
    let norm = sym.norm();
    sym / norm
}

/// Worst relative disagreement between `<∇F(X), H>` and a central finite
/// difference of the value along `trials` random unit directions.
pub fn fd_check_gradient(obj: &dyn MatrixObjective, x: &DMatrix<f64>, trials: usize) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_9a1d);
    let n = obj.dim();
    let grad = obj.gradient(x)?;
    let f0 = obj.value(x)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dir = random_unit_direction(n, &mut rng);
        let fp = obj.value(&(x + h * &dir))?;
        let fm = obj.value(&(x - h * &dir))?;
        let fd = (fp - fm) / (2.0 * h);
        let analytic = inner(&grad, &dir);
        let err = (analytic - fd).abs() / (1.0 + f0.abs() + fd.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Worst relative disagreement between `<∇²F(X)[H], H>` and a second-order
/// central finite difference of the value along random unit directions.
pub fn fd_check_hessian(obj: &dyn MatrixObjective, x: &DMatrix<f64>, trials: usize) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_9a2d);
    let n = obj.dim();
    let f0 = obj.value(x)?;
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let dir = random_unit_direction(n, &mut rng);
        let fp = obj.value(&(x + h * &dir))?;
        let fm = obj.value(&(x - h * &dir))?;
        let fd = (fp - 2.0 * f0 + fm) / (h * h);
        let analytic = inner(&obj.hess_vec(x, &dir)?, &dir);
        let err = (analytic - fd).abs() / (1.0 + f0.abs() + fd.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
