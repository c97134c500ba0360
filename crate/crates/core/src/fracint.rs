//! Fractional integration matrices on the uniform grid `τ_i = i/n` of `[0, 1]`.
//!
//! Each matrix `W` maps node samples `y = [y(τ_0), …, y(τ_n)]` to approximations of
//! the left Riemann–Liouville integral `(I^α y)(τ_i)`:
//!
//! * Grünwald–Letnikov (`Gl`): first order, lower-triangular Toeplitz.
//! * Trapezoidal (`Tr`): exact for piecewise-linear `y`, second order.
//! * Simpson (`Si`): exact for piecewise-quadratic `y` on panels `[τ_2k, τ_2k+2]`,
//!   requires even `n` and carries one superdiagonal entry on odd rows.
//!
//! Row 0 of every matrix is zero because `(I^α y)(0) = 0`.

use crate::linalg::Matrix;
use crate::scalar::Real;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FracError {
    #[error("fractional order must lie in (0, 1], got {0}")]
    InvalidOrder(f64),
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("grid needs at least one interval, got n = {0}")]
    InvalidCount(usize),
    #[error("simpson requires even n, got n = {0}")]
    OddSimpson(usize),
    #[error("vector length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Gl,
    Tr,
    Si,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Gl, Scheme::Tr, Scheme::Si];

    /// Cost quadrature paired with this scheme in the direct methods.
    ///
    /// Grünwald–Letnikov has no quadrature of its own; it is paired with the
    /// trapezoid rule.
    pub fn quadrature_rule(self) -> QuadratureRule {
        match self {
            Scheme::Gl | Scheme::Tr => QuadratureRule::Trapezoid,
            Scheme::Si => QuadratureRule::Simpson,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gl => "gl",
            Scheme::Tr => "tr",
            Scheme::Si => "si",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gl" | "grunwald-letnikov" => Ok(Scheme::Gl),
            "tr" | "trapezoidal" => Ok(Scheme::Tr),
            "si" | "simpson" => Ok(Scheme::Si),
            other => Err(format!("unknown scheme `{other}` (expected gl, tr or si)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuadratureRule {
    Trapezoid,
    Simpson,
}

/// Composite quadrature weights over `[0, 1]` with `n + 1` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureWeights<T> {
    pub rule: QuadratureRule,
    pub n: usize,
    pub w: Vec<T>,
}

/// Dense `(n+1) × (n+1)` fractional integration matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FracIntegrationMatrix<T> {
    pub scheme: Scheme,
    pub alpha: T,
    pub n: usize,
    pub h: T,
    pub entries: Matrix<T>,
}

/// Coefficient families of the Simpson matrix, indexed by `k = 0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpsonCoeffs<T> {
    pub gamma: Vec<T>,
    pub theta: Vec<T>,
    pub mu: Vec<T>,
}

fn check_order<T: Real>(alpha: T) -> Result<(), FracError> {
    if alpha > T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(FracError::InvalidOrder(alpha.to_f64().unwrap_or(f64::NAN)))
    }
}

fn check_step<T: Real>(h: T) -> Result<(), FracError> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(FracError::InvalidStep(h.to_f64().unwrap_or(f64::NAN)))
    }
}

fn check_count(n: usize) -> Result<(), FracError> {
    if n >= 1 {
        Ok(())
    } else {
        Err(FracError::InvalidCount(n))
    }
}

fn check_even(n: usize) -> Result<(), FracError> {
    if n % 2 == 0 {
        Ok(())
    } else {
        Err(FracError::OddSimpson(n))
    }
}

fn grid_step<T: Real>(n: usize) -> T {
    T::one() / T::from_usize_lossy(n)
}

/// Grünwald–Letnikov weights `ω_k = (-1)^k C(-α, k) h^α`, `k = 0..=n`.
pub fn gl_weights<T: Real>(alpha: T, h: T, n: usize) -> Result<Vec<T>, FracError> {
    check_order(alpha)?;
    check_step(h)?;
    check_count(n)?;
    let mut w = Vec::with_capacity(n + 1);
    w.push(h.powf(alpha));
    for k in 1..=n {
        let kf = T::from_usize_lossy(k);
        let prev = w[k - 1];
        w.push(prev * (kf - T::one() + alpha) / kf);
    }
    Ok(w)
}

pub fn gl_matrix<T: Real>(alpha: T, n: usize) -> Result<FracIntegrationMatrix<T>, FracError> {
    check_count(n)?;
    let h = grid_step(n);
    let omega = gl_weights(alpha, h, n)?;
    let entries = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i == 0 || j > i {
            T::zero()
        } else {
            omega[i - j]
        }
    });
    Ok(FracIntegrationMatrix { scheme: Scheme::Gl, alpha, n, h, entries })
}

/// Index from which coefficient differences switch to their series form.
///
/// Starting early matters in single precision: the closed forms already lose
/// about `k^2` ulps by `k = 12`.
const SERIES_FROM: usize = 4;
/// Series length; the Simpson terms shrink like `(2/k)^m <= 2^-m`, so the
/// dropped tail is below `1e-19` relative.
const SERIES_TERMS: usize = 64;

/// Binomial coefficients `C(beta, m)` for `m = 0..len`.
fn binomials<T: Real>(beta: T, len: usize) -> Vec<T> {
    let mut c = Vec::with_capacity(len);
    c.push(T::one());
    for m in 1..len {
        let mf = T::from_usize_lossy(m);
        let prev = c[m - 1];
        c.push(prev * (beta - mf + T::one()) / mf);
    }
    c
}

/// Horner evaluation of `Σ c_m x^m`.
fn power_series<T: Real>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

/// Power series in `x = 1/k` of the bracketed differences in the trapezoid and
/// Simpson coefficients, after factoring out the dominant power of `k`.
///
/// The differences lose up to `O(k^3)` relative accuracy when evaluated term by
/// term; the leading series coefficients vanish identically and are dropped.
struct DifferenceSeries<T> {
    /// `(1-x)^{α+1} - 1 + (α+1)x`
    tr_a: Vec<T>,
    /// `(1+x)^{α+1} + (1-x)^{α+1} - 2`
    tr_b: Vec<T>,
    /// `λ_0 / k^{α+2}`, `λ_1 / k^{α+2}`, `λ_2 / k^{α+2}`
    si: [Vec<T>; 3],
}

impl<T: Real> DifferenceSeries<T> {
    fn new(alpha: T) -> Self {
        let len = SERIES_TERMS;
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        let c1 = binomials(alpha + T::one(), len);
        let c0 = binomials(alpha, len);
        let mut tr_a = vec![T::zero(); len];
        let mut tr_b = vec![T::zero(); len];
        for m in 2..len {
            let sign = if m % 2 == 0 { T::one() } else { -T::one() };
            tr_a[m] = sign * c1[m];
            if m % 2 == 0 {
                tr_b[m] = two * c1[m];
            }
        }
        // s_m = C(α+1, m)(-2)^m, t_m = C(α, m)(-2)^m
        let mut pow = T::one();
        let mut s = vec![T::zero(); len];
        let mut t = vec![T::zero(); len];
        for m in 0..len {
            s[m] = c1[m] * pow;
            t[m] = c0[m] * pow;
            pow = pow * -two;
        }
        let mut l0 = vec![T::zero(); len];
        let mut l1 = vec![T::zero(); len];
        let mut l2 = vec![T::zero(); len];
        for m in 3..len {
            l0[m] = -half * (two * s[m] + (alpha - two) * s[m - 1]);
            l1[m] = two * (s[m] + alpha * s[m - 1]);
            l2[m] = -half
                * (two * t[m]
                    + (T::lit(3.0) * alpha - two) * t[m - 1]
                    + two * alpha * alpha * t[m - 2]);
        }
        Self { tr_a, tr_b, si: [l0, l1, l2] }
    }
}

/// Trapezoidal coefficients `(ā_k, b̄_k)` for `k = 0..=n`.
pub fn tr_coeffs<T: Real>(alpha: T, h: T, n: usize) -> Result<(Vec<T>, Vec<T>), FracError> {
    check_order(alpha)?;
    check_step(h)?;
    check_count(n)?;
    let one = T::one();
    let two = T::lit(2.0);
    let ap1 = alpha + one;
    let scale = h.powf(alpha) / (alpha + two).gamma();
    let series = (n >= SERIES_FROM).then(|| DifferenceSeries::new(alpha));
    let mut a = vec![T::zero(); n + 1];
    let mut b = vec![T::zero(); n + 1];
    b[0] = scale;
    for k in 1..=n {
        let kf = T::from_usize_lossy(k);
        match &series {
            Some(ser) if k >= SERIES_FROM => {
                let x = one / kf;
                let lead = kf.powf(ap1);
                a[k] = scale * lead * power_series(&ser.tr_a, x);
                b[k] = scale * lead * power_series(&ser.tr_b, x);
            }
            _ => {
                a[k] = scale * ((kf - one).powf(ap1) - (kf - one - alpha) * kf.powf(alpha));
                b[k] = scale * ((kf + one).powf(ap1) + (kf - one).powf(ap1) - two * kf.powf(ap1));
            }
        }
    }
    Ok((a, b))
}

pub fn tr_matrix<T: Real>(alpha: T, n: usize) -> Result<FracIntegrationMatrix<T>, FracError> {
    check_count(n)?;
    let h = grid_step(n);
    let (a, b) = tr_coeffs(alpha, h, n)?;
    let entries = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i == 0 || j > i {
            T::zero()
        } else if j == 0 {
            a[i]
        } else {
            b[i - j]
        }
    });
    Ok(FracIntegrationMatrix { scheme: Scheme::Tr, alpha, n, h, entries })
}

fn lambda0<T: Real>(alpha: T, k: T) -> T {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    let four = T::lit(4.0);
    half * (two * alpha * alpha - (three * k - six) * alpha + two * k * k - six * k + four)
        * k.powf(alpha)
        - half * (two * k + alpha - two) * (k - two).powf(alpha + T::one())
}

fn lambda1<T: Real>(alpha: T, k: T) -> T {
    let two = T::lit(2.0);
    two * (k - two).powf(alpha + T::one()) * (k + alpha)
        - two * k.powf(alpha + T::one()) * (k - alpha - two)
}

fn lambda2<T: Real>(alpha: T, k: T) -> T {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    half * k.powf(alpha + T::one()) * (two * k - alpha - two)
        - half
            * (k - two).powf(alpha)
            * (two * k * k + (three * alpha - two) * k + two * alpha * alpha)
}

/// `(λ_0, λ_1, λ_2)` at index `k`.
fn lambdas<T: Real>(alpha: T, k: usize, series: Option<&DifferenceSeries<T>>) -> [T; 3] {
    let kf = T::from_usize_lossy(k);
    match series {
        Some(ser) if k >= SERIES_FROM => {
            let x = T::one() / kf;
            let lead = kf.powf(alpha + T::lit(2.0));
            [0, 1, 2].map(|r| lead * power_series(&ser.si[r], x))
        }
        _ => [lambda0(alpha, kf), lambda1(alpha, kf), lambda2(alpha, kf)],
    }
}

/// Simpson coefficients `γ_k, θ_k, μ_k` for `k = 0..=n` (all zero at `k = 0`).
pub fn si_coeffs<T: Real>(alpha: T, h: T, n: usize) -> Result<SimpsonCoeffs<T>, FracError> {
    check_order(alpha)?;
    check_step(h)?;
    check_count(n)?;
    check_even(n)?;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let scale = h.powf(alpha) / (alpha + three).gamma();
    let first = half * (two * alpha + three) * alpha;
    let series = (n >= SERIES_FROM).then(|| DifferenceSeries::new(alpha));
    let series = series.as_ref();

    let mut gamma = vec![T::zero(); n + 1];
    let mut theta = vec![T::zero(); n + 1];
    let mut mu = vec![T::zero(); n + 1];
    let mut l0_prev2 = T::zero();
    let mut l0_prev1 = T::zero();
    for k in 1..=n {
        let (g, t, m) = if k == 1 {
            (first, two * alpha + two, -half * alpha)
        } else {
            let [l0, l1, l2] = lambdas(alpha, k, series);
            let m = match k {
                2 => l2,
                3 => l2 + first,
                // λ_{0,k-2} was computed two steps ago
                _ => l2 + l0_prev2,
            };
            (l0, l1, m)
        };
        gamma[k] = scale * g;
        theta[k] = scale * t;
        mu[k] = scale * m;
        l0_prev2 = l0_prev1;
        l0_prev1 = g;
    }
    Ok(SimpsonCoeffs { gamma, theta, mu })
}

pub fn si_matrix<T: Real>(alpha: T, n: usize) -> Result<FracIntegrationMatrix<T>, FracError> {
    check_count(n)?;
    check_even(n)?;
    let h = grid_step(n);
    let c = si_coeffs(alpha, h, n)?;
    // (i, j) -> γ_i (j = 0), θ_{i-j+1} (j odd), μ_{i-j+2} (j even); k <= 0 gives zero.
    let pick = |v: &[T], k: isize| if k <= 0 { T::zero() } else { v[k as usize] };
    let entries = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i == 0 || j > i + 1 {
            return T::zero();
        }
        let (i, j) = (i as isize, j as isize);
        if j == 0 {
            pick(&c.gamma, i)
        } else if j % 2 == 1 {
            pick(&c.theta, i - j + 1)
        } else {
            pick(&c.mu, i - j + 2)
        }
    });
    Ok(FracIntegrationMatrix { scheme: Scheme::Si, alpha, n, h, entries })
}

impl<T: Real> FracIntegrationMatrix<T> {
    pub fn new(scheme: Scheme, alpha: T, n: usize) -> Result<Self, FracError> {
        match scheme {
            Scheme::Gl => gl_matrix(alpha, n),
            Scheme::Tr => tr_matrix(alpha, n),
            Scheme::Si => si_matrix(alpha, n),
        }
    }

    /// Number of grid nodes, `n + 1`.
    #[inline]
    pub fn size(&self) -> usize {
        self.n + 1
    }

    /// Node `τ_i = i h`.
    #[inline]
    pub fn node(&self, i: usize) -> T {
        T::from_usize_lossy(i) / T::from_usize_lossy(self.n)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// `W · y`, the approximate fractional integral of `y` at every node.
    pub fn apply(&self, y: &[T]) -> Result<Vec<T>, FracError> {
        if y.len() != self.size() {
            return Err(FracError::LengthMismatch { expected: self.size(), got: y.len() });
        }
        Ok(self.entries.mul_vec(y))
    }

    /// Largest node deviation of `W · 1` from the exact `τ^α / Γ(α+1)`.
    ///
    /// Exact (up to roundoff) for the trapezoidal and Simpson matrices, so this
    /// detects cancellation in the coefficient differences at large `n`.
    pub fn constant_defect(&self) -> T {
        let ones = vec![T::one(); self.size()];
        let got = self.entries.mul_vec(&ones);
        let g = (self.alpha + T::one()).gamma();
        got.iter()
            .enumerate()
            .fold(T::zero(), |m, (i, &v)| m.max((v - self.node(i).powf(self.alpha) / g).abs()))
    }

    /// Row-major dense CSV with 17 significant digits per entry, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.size() * self.size() * 24);
        for i in 0..self.size() {
            let row: Vec<String> =
                self.entries.row(i).iter().map(|v| format_sig17(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Formats a value with 17 significant digits.
pub fn format_sig17<T: Real>(v: T) -> String {
    format!("{v:.16e}")
}

impl<T: Real> QuadratureWeights<T> {
    pub fn new(rule: QuadratureRule, n: usize) -> Result<Self, FracError> {
        quad_weights(rule, n)
    }

    pub fn sum(&self) -> T {
        self.w.iter().copied().sum()
    }
}

/// Composite trapezoid or Simpson weights on `[0, 1]` with `h = 1/n`.
pub fn quad_weights<T: Real>(rule: QuadratureRule, n: usize) -> Result<QuadratureWeights<T>, FracError> {
    check_count(n)?;
    let h: T = grid_step(n);
    let w = match rule {
        QuadratureRule::Trapezoid => {
            let mut w = vec![h; n + 1];
            w[0] = h / T::lit(2.0);
            w[n] = h / T::lit(2.0);
            w
        }
        QuadratureRule::Simpson => {
            check_even(n)?;
            let third = h / T::lit(3.0);
            let mut w: Vec<T> = (0..=n)
                .map(|i| if i % 2 == 1 { T::lit(4.0) * third } else { T::lit(2.0) * third })
                .collect();
            w[0] = third;
            w[n] = third;
            w
        }
    };
    Ok(QuadratureWeights { rule, n, w })
}
