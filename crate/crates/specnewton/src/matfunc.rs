//! Matrix functions of symmetric matrices.
//!
//! A scalar function `f` extends to symmetric matrices through the spectral
//! decomposition: for `X = Q diag(λ) Qᵀ`, `f(X) = Q diag(f(λ)) Qᵀ`. The first
//! and second directional derivatives are Hadamard-type sums of first and
//! second divided differences of `f` over the eigenvalues (Daleckii–Krein).
//! This module also provides the seven interval transforms that map all of
//! `S^{n×n}` onto the symmetric matrices whose spectrum lies in a target
//! interval, which is what turns a spectrally constrained problem into an
//! unconstrained one.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which divided-difference arguments are treated
/// as confluent.
const CONFLUENT_TOL: f64 = 1e-7;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A real interval, possibly unbounded, with open or closed endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Interval { lo, hi, lo_closed, hi_closed }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    /// Membership with `slack` allowed beyond closed endpoints. Open
    /// endpoints stay strict: the transforms only approach them.
    pub fn contains_with_slack(&self, x: f64, slack: f64) -> bool {
        let lo = if self.lo_closed { self.lo - slack } else { self.lo };
        let hi = if self.hi_closed { self.hi + slack } else { self.hi };
        x >= lo && x <= hi && (self.lo_closed || x > self.lo - slack) && (self.hi_closed || x < self.hi + slack)
    }
}

/// A scalar function together with its first two derivatives; the generator
/// of a matrix function.
#[derive(Clone)]
pub struct ScalarFunctionSpec {
    name: String,
    eval: ScalarFn,
    deriv1: ScalarFn,
    deriv2: ScalarFn,
    pub domain: Interval,
}

impl fmt::Debug for ScalarFunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFunctionSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ScalarFunctionSpec {
    pub fn new<E, D1, D2>(name: &str, domain: Interval, eval: E, deriv1: D1, deriv2: D2) -> Self
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarFunctionSpec {
            name: name.to_string(),
            eval: Arc::new(eval),
            deriv1: Arc::new(deriv1),
            deriv2: Arc::new(deriv2),
            domain,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        (self.deriv1)(x)
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        (self.deriv2)(x)
    }

    pub fn exp() -> Self {
        Self::new("exp", Interval::ALL, f64::exp, f64::exp, f64::exp)
    }

    pub fn square() -> Self {
        Self::new("x^2", Interval::ALL, |x| x * x, |x| 2.0 * x, |_| 2.0)
    }

    pub fn cube() -> Self {
        Self::new("x^3", Interval::ALL, |x| x * x * x, |x| 3.0 * x * x, |x| 6.0 * x)
    }

    pub fn identity() -> Self {
        Self::new("x", Interval::ALL, |x| x, |_| 1.0, |_| 0.0)
    }

    /// `coeffs[i]` is the coefficient of `x^i`.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c: Vec<f64> = coeffs.to_vec();
        let d1: Vec<f64> = c.iter().enumerate().skip(1).map(|(i, a)| i as f64 * a).collect();
        let d2: Vec<f64> = d1.iter().enumerate().skip(1).map(|(i, a)| i as f64 * a).collect();
        let horner = |c: Vec<f64>| move |x: f64| c.iter().rev().fold(0.0, |acc, a| acc * x + a);
        Self::new("poly", Interval::ALL, horner(c), horner(d1), horner(d2))
    }
}

/// Spectral decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl SymEigen {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `Q diag(lambda) Qᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.q.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.lambda[j];
        }
        &scaled * self.q.transpose()
    }
}

fn check_finite(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

/// Symmetrize `(X + Xᵀ)/2`. Floating-point drift is repaired rather than
/// rejected.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Eigendecompose a symmetric matrix, eigenvalues sorted descending.
pub fn spectral_decompose(x: &DMatrix<f64>) -> Result<SymEigen> {
    check_finite(x, "matrix")?;
    if !x.is_square() {
        return Err(Error::Dimension(format!("expected square matrix, got {}x{}", x.nrows(), x.ncols())));
    }
    let sym = symmetrize(x);
    let eig = nalgebra::SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut q = eig.eigenvectors;
    let raw_lambda = jacobi_polish(&sym, &mut q);

    let n = raw_lambda.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw_lambda[b].partial_cmp(&raw_lambda[a]).unwrap());

    let mut sorted_q = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_q.set_column(dst, &q.column(src));
        lambda[dst] = raw_lambda[src];
    }
    Ok(SymEigen { q: sorted_q, lambda })
}

/// Refine an approximate eigenbasis `q` of the symmetric matrix `a` with
/// cyclic Jacobi sweeps on `B = QᵀAQ`, returning the polished eigenvalues.
///
/// The QL iteration can pair eigenvectors to clustered eigenvalues so poorly
/// that `Q diag(λ) Qᵀ` misses `A` by the cluster width, even though `Q` is
/// orthogonal. `B` is nearly diagonal on entry, so the sweeps converge in one
/// or two passes and the polished basis reconstructs `A` to roundoff.
fn jacobi_polish(a: &DMatrix<f64>, q: &mut DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut b = q.transpose() * a * &*q;
    let scale = a.norm();
    let tol = (n as f64) * f64::EPSILON * scale;
    for _ in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += b[(i, j)] * b[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = b[(p, r)];
                if apq.abs() <= f64::EPSILON * scale / (n as f64) {
                    continue;
                }
                let theta = (b[(r, r)] - b[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let bkp = b[(k, p)];
                    let bkr = b[(k, r)];
                    b[(k, p)] = c * bkp - s * bkr;
                    b[(k, r)] = s * bkp + c * bkr;
                }
                for k in 0..n {
                    let bpk = b[(p, k)];
                    let brk = b[(r, k)];
                    b[(p, k)] = c * bpk - s * brk;
                    b[(r, k)] = s * bpk + c * brk;
                }
                b[(p, r)] = 0.0;
                b[(r, p)] = 0.0;
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    DVector::from_fn(n, |i, _| b[(i, i)])
}

fn check_domain(f: &ScalarFunctionSpec, eig: &SymEigen) -> Result<()> {
    for (i, &l) in eig.lambda.iter().enumerate() {
        if !f.domain.contains(l) {
            return Err(Error::DomainEigenvalue {
                function: f.name.clone(),
                index: i,
                value: l,
            });
        }
    }
    Ok(())
}

/// `f(X) = Q f(Λ) Qᵀ` for a precomputed decomposition.
pub fn apply_matfunc_eig(f: &ScalarFunctionSpec, eig: &SymEigen) -> Result<DMatrix<f64>> {
    check_domain(f, eig)?;
    let mut scaled = eig.q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f.eval(eig.lambda[j]);
    }
    Ok(symmetrize(&(&scaled * eig.q.transpose())))
}

/// Evaluate the matrix function `f(X)` of a symmetric matrix.
pub fn apply_matfunc(f: &ScalarFunctionSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spectral_decompose(x)?;
    apply_matfunc_eig(f, &eig)
}

/// First divided difference `f[a, b]`, with the confluent limit `f'((a+b)/2)`
/// when the arguments coincide to relative precision.
pub fn divided_diff_1(f: &ScalarFunctionSpec, a: f64, b: f64) -> f64 {
    let tau = CONFLUENT_TOL * 1.0_f64.max(a.abs()).max(b.abs());
    if (a - b).abs() <= tau {
        f.deriv1(0.5 * (a + b))
    } else {
        (f.eval(a) - f.eval(b)) / (a - b)
    }
}

/// Second divided difference `f[a, b, c]`, fully symmetric, with confluent
/// fallbacks: `f''(mean)/2` for a triple cluster and first-derivative mixed
/// forms for partial clusters.
pub fn divided_diff_2(f: &ScalarFunctionSpec, a: f64, b: f64, c: f64) -> f64 {
    // Sorting makes the result exactly permutation invariant.
    let mut v = [a, b, c];
    v.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let [hi, mid, lo] = v;
    let tau = CONFLUENT_TOL * 1.0_f64.max(hi.abs()).max(lo.abs());
    if hi - lo <= tau {
        0.5 * f.deriv2((hi + mid + lo) / 3.0)
    } else {
        (divided_diff_1(f, hi, mid) - divided_diff_1(f, mid, lo)) / (hi - lo)
    }
}

/// First directional derivative `Df(X)[H]` of the matrix function.
///
/// In the eigenbasis of `X` this is the Hadamard product of the first
/// divided-difference table with `K = QᵀHQ`.
pub fn dmatfunc_eig(f: &ScalarFunctionSpec, eig: &SymEigen, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_domain(f, eig)?;
    check_finite(h, "direction")?;
    let n = eig.n();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::Dimension(format!("direction is {}x{}, expected {n}x{n}", h.nrows(), h.ncols())));
    }
    let hs = symmetrize(h);
    let k = eig.q.transpose() * hs * &eig.q;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = divided_diff_1(f, eig.lambda[i], eig.lambda[j]) * k[(i, j)];
        }
    }
    Ok(symmetrize(&(&eig.q * w * eig.q.transpose())))
}

pub fn dmatfunc(f: &ScalarFunctionSpec, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spectral_decompose(x)?;
    dmatfunc_eig(f, &eig, h)
}

/// Second directional derivative `D²f(X)[H1,H2]` (bilinear form, matrix
/// valued). `d2matfunc_bilinear_eig(f, eig, H, H)` equals `d2matfunc_eig`.
pub fn d2matfunc_bilinear_eig(
    f: &ScalarFunctionSpec,
    eig: &SymEigen,
    h1: &DMatrix<f64>,
    h2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_domain(f, eig)?;
    check_finite(h1, "direction 1")?;
    check_finite(h2, "direction 2")?;
    let n = eig.n();
    for (h, name) in [(h1, "direction 1"), (h2, "direction 2")] {
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::Dimension(format!("{name} is {}x{}, expected {n}x{n}", h.nrows(), h.ncols())));
        }
    }
    let k1 = eig.q.transpose() * symmetrize(h1) * &eig.q;
    let k2 = eig.q.transpose() * symmetrize(h2) * &eig.q;

    // Second divided differences over (λ_i, λ_j, λ_k). The leading constant
    // is pinned by the finite-difference and polynomial oracles: with
    // f = x^2 the result must be H1 H2 + H2 H1.
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let dd = divided_diff_2(f, eig.lambda[i], eig.lambda[j], eig.lambda[k]);
                acc += dd * (k1[(i, j)] * k2[(j, k)] + k2[(i, j)] * k1[(j, k)]);
            }
            w[(i, k)] = acc;
        }
    }
    Ok(symmetrize(&(&eig.q * w * eig.q.transpose())))
}

/// Second directional derivative along a single direction: `D²f(X)[H,H]`.
pub fn d2matfunc_eig(f: &ScalarFunctionSpec, eig: &SymEigen, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    d2matfunc_bilinear_eig(f, eig, h, h)
}

pub fn d2matfunc(f: &ScalarFunctionSpec, x: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spectral_decompose(x)?;
    d2matfunc_eig(f, &eig, h)
}

pub fn d2matfunc_bilinear(
    f: &ScalarFunctionSpec,
    x: &DMatrix<f64>,
    h1: &DMatrix<f64>,
    h2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let eig = spectral_decompose(x)?;
    d2matfunc_bilinear_eig(f, &eig, h1, h2)
}

fn matrix_powers(x: &DMatrix<f64>, degree: usize) -> Vec<DMatrix<f64>> {
    let n = x.nrows();
    let mut powers = Vec::with_capacity(degree + 1);
    powers.push(DMatrix::identity(n, n));
    for i in 1..=degree {
        let next = &powers[i - 1] * x;
        powers.push(next);
    }
    powers
}

/// Brute-force first derivative of a polynomial matrix function:
/// `sum_i a_i sum_{l1+l2=i-1} X^{l1} H X^{l2}`. Oracle only; degree <= 20.
pub fn poly_dmatfunc(coeffs: &[f64], x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(coeffs.len() <= 21, "oracle limited to degree 20");
    let deg = coeffs.len().saturating_sub(1);
    let pow = matrix_powers(x, deg);
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (i, &a) in coeffs.iter().enumerate().skip(1) {
        if a == 0.0 {
            continue;
        }
        for l1 in 0..i {
            let l2 = i - 1 - l1;
            out += a * &pow[l1] * h * &pow[l2];
        }
    }
    out
}

/// Brute-force full second derivative `D²G(X)[H,H]` of a polynomial matrix
/// function via the two-term power sums. Oracle only.
pub fn poly_d2matfunc(coeffs: &[f64], x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(coeffs.len() <= 21, "oracle limited to degree 20");
    let deg = coeffs.len().saturating_sub(1);
    let pow = matrix_powers(x, deg);
    let n = x.nrows();
    let h2 = h * h;
    let mut half = DMatrix::zeros(n, n);
    for (i, &a) in coeffs.iter().enumerate().skip(2) {
        if a == 0.0 {
            continue;
        }
        for l1 in 0..=(i - 2) {
            let l2 = i - 2 - l1;
            half += a * &pow[l1] * &h2 * &pow[l2];
        }
        if i >= 3 {
            for l1 in 0..=(i - 3) {
                for l2 in 0..=(i - 3 - l1) {
                    let l3 = i - 3 - l1 - l2;
                    half += a * &pow[l1] * h * &pow[l2 + 1] * h * &pow[l3];
                }
            }
        }
    }
    2.0 * half
}

/// The seven interval transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TransformKind {
    /// `(alpha, +inf)`: `e^x + alpha`
    G1,
    /// `(-inf, alpha)`: `-e^x + alpha`
    G2,
    /// `[alpha, +inf)`: `x^2 + alpha`
    G3,
    /// `(-inf, alpha]`: `-x^2 + alpha`
    G4,
    /// `(alpha, beta]`: `(beta-alpha)/(1+x^2) + alpha`
    G5,
    /// `[alpha, beta)`: `(alpha-beta)/(1+x^2) + beta`
    G6,
    /// `(alpha, beta)`: `(beta-alpha)/pi * arctan(x) + (beta+alpha)/2`
    G7,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::G1,
        TransformKind::G2,
        TransformKind::G3,
        TransformKind::G4,
        TransformKind::G5,
        TransformKind::G6,
        TransformKind::G7,
    ];

    pub fn needs_beta(self) -> bool {
        matches!(self, TransformKind::G5 | TransformKind::G6 | TransformKind::G7)
    }
}

/// A surjective smooth map from the reals onto an interval, bundled with a
/// right inverse of the interval interior.
#[derive(Debug, Clone)]
pub struct SpectralTransform {
    pub kind: TransformKind,
    pub alpha: f64,
    pub beta: f64,
    pub scalar: ScalarFunctionSpec,
    pub inverse_scalar: ScalarFunctionSpec,
    pub interval: Interval,
}

/// Build one of the seven transforms. `beta` is ignored for G1-G4.
pub fn make_transform(kind: TransformKind, alpha: f64, beta: f64) -> Result<SpectralTransform> {
    if !alpha.is_finite() || (kind.needs_beta() && !beta.is_finite()) {
        return Err(Error::Parameter("transform endpoints must be finite".into()));
    }
    if kind.needs_beta() && alpha >= beta {
        return Err(Error::Parameter(format!("need alpha < beta, got alpha={alpha}, beta={beta}")));
    }
    let (scalar, inverse_scalar, interval) = match kind {
        TransformKind::G1 => (
            ScalarFunctionSpec::new("exp+a", Interval::ALL, move |x| x.exp() + alpha, f64::exp, f64::exp),
            ScalarFunctionSpec::new(
                "ln(y-a)",
                Interval::new(alpha, f64::INFINITY, false, false),
                move |y| (y - alpha).ln(),
                move |y| 1.0 / (y - alpha),
                move |y| -1.0 / ((y - alpha) * (y - alpha)),
            ),
            Interval::new(alpha, f64::INFINITY, false, false),
        ),
        TransformKind::G2 => (
            ScalarFunctionSpec::new("-exp+a", Interval::ALL, move |x| -x.exp() + alpha, |x| -x.exp(), |x| -x.exp()),
            ScalarFunctionSpec::new(
                "ln(a-y)",
                Interval::new(f64::NEG_INFINITY, alpha, false, false),
                move |y| (alpha - y).ln(),
                move |y| -1.0 / (alpha - y),
                move |y| -1.0 / ((alpha - y) * (alpha - y)),
            ),
            Interval::new(f64::NEG_INFINITY, alpha, false, false),
        ),
        TransformKind::G3 => (
            ScalarFunctionSpec::new("x^2+a", Interval::ALL, move |x| x * x + alpha, |x| 2.0 * x, |_| 2.0),
            ScalarFunctionSpec::new(
                "sqrt(y-a)",
                Interval::new(alpha, f64::INFINITY, true, false),
                move |y| (y - alpha).sqrt(),
                move |y| 0.5 / (y - alpha).sqrt(),
                move |y| -0.25 / (y - alpha).powf(1.5),
            ),
            Interval::new(alpha, f64::INFINITY, true, false),
        ),
        TransformKind::G4 => (
            ScalarFunctionSpec::new("-x^2+a", Interval::ALL, move |x| -x * x + alpha, |x| -2.0 * x, |_| -2.0),
            ScalarFunctionSpec::new(
                "sqrt(a-y)",
                Interval::new(f64::NEG_INFINITY, alpha, false, true),
                move |y| (alpha - y).sqrt(),
                move |y| -0.5 / (alpha - y).sqrt(),
                move |y| -0.25 / (alpha - y).powf(1.5),
            ),
            Interval::new(f64::NEG_INFINITY, alpha, false, true),
        ),
        TransformKind::G5 => {
            let span = beta - alpha;
            (
                ScalarFunctionSpec::new(
                    "(b-a)/(1+x^2)+a",
                    Interval::ALL,
                    move |x| span / (1.0 + x * x) + alpha,
                    move |x| {
                        let u = 1.0 + x * x;
                        -span * 2.0 * x / (u * u)
                    },
                    move |x| {
                        let u = 1.0 + x * x;
                        span * (6.0 * x * x - 2.0) / (u * u * u)
                    },
                ),
                ScalarFunctionSpec::new(
                    "inv-g5",
                    Interval::new(alpha, beta, false, true),
                    move |y| (span / (y - alpha) - 1.0).sqrt(),
                    move |y| {
                        let w = span / (y - alpha) - 1.0;
                        let wp = -span / ((y - alpha) * (y - alpha));
                        wp / (2.0 * w.sqrt())
                    },
                    move |y| {
                        let d = y - alpha;
                        let w = span / d - 1.0;
                        let wp = -span / (d * d);
                        let wpp = 2.0 * span / (d * d * d);
                        wpp / (2.0 * w.sqrt()) - wp * wp / (4.0 * w.powf(1.5))
                    },
                ),
                Interval::new(alpha, beta, false, true),
            )
        }
        TransformKind::G6 => {
            let span = beta - alpha;
            (
                ScalarFunctionSpec::new(
                    "(a-b)/(1+x^2)+b",
                    Interval::ALL,
                    move |x| -span / (1.0 + x * x) + beta,
                    move |x| {
                        let u = 1.0 + x * x;
                        span * 2.0 * x / (u * u)
                    },
                    move |x| {
                        let u = 1.0 + x * x;
                        -span * (6.0 * x * x - 2.0) / (u * u * u)
                    },
                ),
                ScalarFunctionSpec::new(
                    "inv-g6",
                    Interval::new(alpha, beta, true, false),
                    move |y| (span / (beta - y) - 1.0).sqrt(),
                    move |y| {
                        let d = beta - y;
                        let w = span / d - 1.0;
                        let wp = span / (d * d);
                        wp / (2.0 * w.sqrt())
                    },
                    move |y| {
                        let d = beta - y;
                        let w = span / d - 1.0;
                        let wp = span / (d * d);
                        let wpp = 2.0 * span / (d * d * d);
                        wpp / (2.0 * w.sqrt()) - wp * wp / (4.0 * w.powf(1.5))
                    },
                ),
                Interval::new(alpha, beta, true, false),
            )
        }
        TransformKind::G7 => {
            let span = beta - alpha;
            let mid = 0.5 * (beta + alpha);
            let slope = std::f64::consts::PI / span;
            (
                ScalarFunctionSpec::new(
                    "arctan-affine",
                    Interval::ALL,
                    move |x| span / std::f64::consts::PI * x.atan() + mid,
                    move |x| span / (std::f64::consts::PI * (1.0 + x * x)),
                    move |x| {
                        let u = 1.0 + x * x;
                        -span * 2.0 * x / (std::f64::consts::PI * u * u)
                    },
                ),
                ScalarFunctionSpec::new(
                    "tan-affine",
                    Interval::new(alpha, beta, false, false),
                    move |y| (slope * (y - mid)).tan(),
                    move |y| {
                        let c = (slope * (y - mid)).cos();
                        slope / (c * c)
                    },
                    move |y| {
                        let u = slope * (y - mid);
                        let sec2 = 1.0 / (u.cos() * u.cos());
                        2.0 * slope * slope * sec2 * u.tan()
                    },
                ),
                Interval::new(alpha, beta, false, false),
            )
        }
    };
    Ok(SpectralTransform { kind, alpha, beta, scalar, inverse_scalar, interval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_symmetric(n: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        symmetrize(&raw)
    }

    fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / (1.0 + b.norm())
    }

    #[test]
    fn decompose_diagonal() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let eig = spectral_decompose(&x).unwrap();
        assert_relative_eq!(eig.lambda[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(eig.lambda[1], 1.0, epsilon = 1e-12);
        for j in 0..2 {
            assert!(eig.q.column(j).amax() > 0.999);
        }
    }

    #[test]
    fn decompose_off_diagonal_spectrum() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let eig = spectral_decompose(&x).unwrap();
        assert_relative_eq!(eig.lambda[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(eig.lambda[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn decompose_round_trip_and_orthogonality() {
        let mut rng = StdRng::seed_from_u64(7);
        for n in [1usize, 2, 5, 9] {
            let x = random_symmetric(n, &mut rng);
            let eig = spectral_decompose(&x).unwrap();
            assert!((eig.reconstruct() - &x).norm() <= 1e-10 * 1.0_f64.max(x.norm()));
            let qtq = eig.q.transpose() * &eig.q;
            assert!((qtq - DMatrix::identity(n, n)).norm() <= 1e-10 * n as f64);
            for i in 1..n {
                assert!(eig.lambda[i - 1] >= eig.lambda[i]);
            }
        }
    }

    #[test]
    fn decompose_rejects_nonfinite() {
        let x = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(spectral_decompose(&x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matfunc_diagonal_exp() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0_f64.ln()]));
        let y = apply_matfunc(&ScalarFunctionSpec::exp(), &x).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert!((y - expect).norm() < 1e-12);
    }

    #[test]
    fn matfunc_square_is_matrix_product() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = random_symmetric(6, &mut rng);
        let y = apply_matfunc(&ScalarFunctionSpec::square(), &x).unwrap();
        assert!((&y - &x * &x).norm() < 1e-12 * (1.0 + x.norm().powi(2)));
    }

    #[test]
    fn matfunc_g5_at_zero_is_identity() {
        let t = make_transform(TransformKind::G5, 0.0, 1.0).unwrap();
        let x = DMatrix::zeros(4, 4);
        let y = apply_matfunc(&t.scalar, &x).unwrap();
        assert!((y - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn matfunc_domain_error_names_eigenvalue() {
        let t = make_transform(TransformKind::G1, 0.0, 0.0).unwrap();
        // inverse of G1 needs spectrum > alpha = 0
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0]));
        let err = apply_matfunc(&t.inverse_scalar, &x).unwrap_err();
        match err {
            Error::DomainEigenvalue { index, value, .. } => {
                assert_eq!(index, 1);
                assert_relative_eq!(value, -1.0, epsilon = 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matfunc_independent_of_degenerate_rotation() {
        // X with a repeated eigenvalue: rotate the degenerate eigenvector
        // pair and check f(X) does not move.
        let f = ScalarFunctionSpec::exp();
        let q0 = {
            // a fixed orthogonal 3x3
            let mut rng = StdRng::seed_from_u64(3);
            let raw = random_symmetric(3, &mut rng);
            spectral_decompose(&raw).unwrap().q
        };
        let lambda = DVector::from_vec(vec![2.0, 2.0, -1.0]);
        let base = SymEigen { q: q0.clone(), lambda: lambda.clone() };
        let x = base.reconstruct();

        let theta: f64 = 0.83;
        let mut rot = DMatrix::identity(3, 3);
        rot[(0, 0)] = theta.cos();
        rot[(0, 1)] = -theta.sin();
        rot[(1, 0)] = theta.sin();
        rot[(1, 1)] = theta.cos();
        let rotated = SymEigen { q: &q0 * rot, lambda };
        assert!((rotated.reconstruct() - &x).norm() < 1e-12);

        let a = apply_matfunc_eig(&f, &base).unwrap();
        let b = apply_matfunc_eig(&f, &rotated).unwrap();
        assert!((a - b).norm() <= 1e-10);
    }

    #[test]
    fn divided_diff_1_examples() {
        let sq = ScalarFunctionSpec::square();
        assert_relative_eq!(divided_diff_1(&sq, 3.0, 1.0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(divided_diff_1(&sq, 2.0, 2.0), 4.0, epsilon = 1e-12);
        let e = ScalarFunctionSpec::exp();
        assert_relative_eq!(divided_diff_1(&e, 1.0, 0.0), std::f64::consts::E - 1.0, epsilon = 1e-12);
        // symmetry
        assert_relative_eq!(divided_diff_1(&e, 0.3, -1.2), divided_diff_1(&e, -1.2, 0.3), epsilon = 1e-15);
    }

    #[test]
    fn divided_diff_2_examples() {
        let sq = ScalarFunctionSpec::square();
        assert_relative_eq!(divided_diff_2(&sq, 0.4, -2.0, 7.0), 1.0, epsilon = 1e-10);
        assert_relative_eq!(divided_diff_2(&sq, 2.0, 2.0, 2.0), 1.0, epsilon = 1e-12);
        let cube = ScalarFunctionSpec::cube();
        assert_relative_eq!(divided_diff_2(&cube, 1.0, 2.0, 4.0), 7.0, epsilon = 1e-10);
        assert_relative_eq!(divided_diff_2(&cube, 1.5, 1.5, -0.5), 2.5, epsilon = 1e-7);
        let lin = ScalarFunctionSpec::polynomial(&[3.0, 2.0]);
        assert_relative_eq!(divided_diff_2(&lin, 0.0, 1.0, 5.0), 0.0, epsilon = 1e-12);
        // permutation symmetry, exactly
        let e = ScalarFunctionSpec::exp();
        let v = divided_diff_2(&e, 0.2, 1.1, -0.4);
        assert_eq!(v, divided_diff_2(&e, 1.1, -0.4, 0.2));
        assert_eq!(v, divided_diff_2(&e, -0.4, 0.2, 1.1));
    }

    #[test]
    fn dmatfunc_square_closed_form() {
        let mut rng = StdRng::seed_from_u64(11);
        let x = random_symmetric(5, &mut rng);
        let h = random_symmetric(5, &mut rng);
        let d = dmatfunc(&ScalarFunctionSpec::square(), &x, &h).unwrap();
        let expect = &x * &h + &h * &x;
        assert!(frob_rel(&d, &expect) < 1e-12);
    }

    #[test]
    fn dmatfunc_diagonal_hadamard() {
        let sq = ScalarFunctionSpec::exp();
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, -0.3]));
        let mut rng = StdRng::seed_from_u64(2);
        let h = random_symmetric(3, &mut rng);
        let d = dmatfunc(&sq, &x, &h).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = divided_diff_1(&sq, x[(i, i)], x[(j, j)]) * h[(i, j)];
                assert_relative_eq!(d[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn dmatfunc_zero_direction() {
        let x = DMatrix::identity(4, 4);
        let d = dmatfunc(&ScalarFunctionSpec::exp(), &x, &DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn dmatfunc_linearity() {
        let mut rng = StdRng::seed_from_u64(5);
        let f = ScalarFunctionSpec::exp();
        let x = random_symmetric(6, &mut rng);
        let h1 = random_symmetric(6, &mut rng);
        let h2 = random_symmetric(6, &mut rng);
        let (a, b) = (0.7, -2.3);
        let combo = dmatfunc(&f, &x, &(a * &h1 + b * &h2)).unwrap();
        let parts = a * dmatfunc(&f, &x, &h1).unwrap() + b * dmatfunc(&f, &x, &h2).unwrap();
        assert!((combo - parts).norm() <= 1e-10);
    }

    #[test]
    fn d2matfunc_square_and_cube_closed_forms() {
        let mut rng = StdRng::seed_from_u64(9);
        let x = random_symmetric(5, &mut rng);
        let h = random_symmetric(5, &mut rng);
        let d2 = d2matfunc(&ScalarFunctionSpec::square(), &x, &h).unwrap();
        assert!(frob_rel(&d2, &(2.0 * &h * &h)) < 1e-10);
        let d2c = d2matfunc(&ScalarFunctionSpec::cube(), &x, &h).unwrap();
        let h2 = &h * &h;
        let expect = 2.0 * (&h2 * &x + &h * &x * &h + &x * &h2);
        assert!(frob_rel(&d2c, &expect) < 1e-10);
        let lin = ScalarFunctionSpec::polynomial(&[1.0, -4.0]);
        let d2l = d2matfunc(&lin, &x, &h).unwrap();
        assert!(d2l.norm() < 1e-10);
    }

    #[test]
    fn bilinear_polarization_and_symmetry() {
        let mut rng = StdRng::seed_from_u64(13);
        let f = ScalarFunctionSpec::exp();
        let x = random_symmetric(5, &mut rng);
        let h1 = random_symmetric(5, &mut rng);
        let h2 = random_symmetric(5, &mut rng);

        let b12 = d2matfunc_bilinear(&f, &x, &h1, &h2).unwrap();
        let b21 = d2matfunc_bilinear(&f, &x, &h2, &h1).unwrap();
        assert!((&b12 - &b21).norm() < 1e-12);

        let sum = d2matfunc(&f, &x, &(&h1 + &h2)).unwrap();
        let p1 = d2matfunc(&f, &x, &h1).unwrap();
        let p2 = d2matfunc(&f, &x, &h2).unwrap();
        let polarized = (sum - p1 - p2) * 0.5;
        assert!(frob_rel(&b12, &polarized) < 1e-9);

        let diag = d2matfunc_bilinear(&f, &x, &h1, &h1).unwrap();
        let direct = d2matfunc(&f, &x, &h1).unwrap();
        assert!((diag - direct).norm() < 1e-12);

        let sq = ScalarFunctionSpec::square();
        let b = d2matfunc_bilinear(&sq, &x, &h1, &h2).unwrap();
        let expect = &h1 * &h2 + &h2 * &h1;
        assert!(frob_rel(&b, &expect) < 1e-10);

        let zero = d2matfunc_bilinear(&sq, &x, &h1, &DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn poly_oracles_base_cases() {
        let mut rng = StdRng::seed_from_u64(21);
        let x = random_symmetric(4, &mut rng);
        let h = random_symmetric(4, &mut rng);
        let d = poly_dmatfunc(&[0.0, 0.0, 1.0], &x, &h);
        assert!(frob_rel(&d, &(&x * &h + &h * &x)) < 1e-12);
        let d1 = poly_dmatfunc(&[0.0, 1.0], &x, &h);
        assert!((d1 - &h).norm() < 1e-14);
        assert!(poly_d2matfunc(&[0.0, 1.0], &x, &h).norm() == 0.0);
    }

    #[test]
    fn derivative_formulas_match_poly_oracle() {
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..5 {
            let deg = rng.gen_range(2..=8);
            let coeffs: Vec<f64> = (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = ScalarFunctionSpec::polynomial(&coeffs);
            let x = random_symmetric(6, &mut rng);
            let h = random_symmetric(6, &mut rng);
            let d = dmatfunc(&f, &x, &h).unwrap();
            let od = poly_dmatfunc(&coeffs, &x, &h);
            assert!(frob_rel(&d, &od) < 1e-10, "first derivative oracle mismatch deg {deg}");
            let d2 = d2matfunc(&f, &x, &h).unwrap();
            let od2 = poly_d2matfunc(&coeffs, &x, &h);
            assert!(frob_rel(&d2, &od2) < 1e-9, "second derivative oracle mismatch deg {deg}");
        }
    }

    #[test]
    fn transform_scalar_examples() {
        let g1 = make_transform(TransformKind::G1, 0.0, 0.0).unwrap();
        assert_relative_eq!(g1.scalar.eval(0.0), 1.0);
        assert!(g1.interval.contains(1.0));

        let g7 = make_transform(TransformKind::G7, -1.0, 1.0).unwrap();
        assert_relative_eq!(g7.scalar.eval(0.0), 0.0, epsilon = 1e-14);
        assert!(g7.scalar.eval(1e9) > 1.0 - 1e-6);
        assert!(g7.scalar.eval(-1e9) < -1.0 + 1e-6);

        let g3 = make_transform(TransformKind::G3, 2.0, 0.0).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        let x = random_symmetric(5, &mut rng);
        let y = apply_matfunc(&g3.scalar, &x).unwrap();
        let eig = spectral_decompose(&y).unwrap();
        assert!(eig.lambda.iter().all(|&l| l >= 2.0 - 1e-12));
    }

    #[test]
    fn transform_requires_valid_interval() {
        assert!(make_transform(TransformKind::G5, 1.0, 1.0).is_err());
        assert!(make_transform(TransformKind::G7, 2.0, -1.0).is_err());
        assert!(make_transform(TransformKind::G1, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn transform_scalar_derivatives_match_finite_differences() {
        for kind in TransformKind::ALL {
            let t = make_transform(kind, -0.5, 1.5).unwrap();
            for &x in &[-2.1, -0.3, 0.0, 0.7, 1.9] {
                let h = 1e-5;
                let fd1 = (t.scalar.eval(x + h) - t.scalar.eval(x - h)) / (2.0 * h);
                assert_relative_eq!(t.scalar.deriv1(x), fd1, epsilon = 1e-6, max_relative = 1e-6);
                let fd2 = (t.scalar.eval(x + h) - 2.0 * t.scalar.eval(x) + t.scalar.eval(x - h)) / (h * h);
                assert_relative_eq!(t.scalar.deriv2(x), fd2, epsilon = 1e-4, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn transform_right_inverse_round_trip() {
        for kind in TransformKind::ALL {
            let t = make_transform(kind, -0.5, 1.5).unwrap();
            // sample interior points of the target interval
            let (lo, hi) = (t.interval.lo.max(-10.0), t.interval.hi.min(10.0));
            for i in 1..20 {
                let y = lo + (hi - lo) * i as f64 / 20.0;
                if !t.interval.contains(y) || (y - t.interval.lo).abs() < 1e-9 || (y - t.interval.hi).abs() < 1e-9 {
                    continue;
                }
                let x = t.inverse_scalar.eval(y);
                let back = t.scalar.eval(x);
                assert!(
                    (back - y).abs() <= 1e-8 * (1.0 + y.abs()),
                    "{kind:?}: inverse round trip failed at y={y}: got {back}"
                );
            }
        }
    }
}
