//! Fractional optimal control problems in Bolza form and their rescaling to `τ ∈ [0, 1]`.
//!
//! ```text
//! minimize   h(t_f, x(t_f)) + ∫₀^{t_f} g(x, u, t) dt
//! subject to ᶜD^α x = f(x, u, t),  x(0) = x₀,
//!            ψ(x(t_f), t_f) = 0,  φ(x, u, t) ≤ 0
//! ```
//!
//! With `t = τ t_f` the Caputo derivative scales as `D_t^α = t_f^{-α} D_τ^α`, so the
//! rescaled dynamics carry the factor `t_f^α` and the cost integrand the factor `t_f`.

use crate::linalg::Matrix;
use crate::scalar::Real;
use std::fmt;
use std::sync::Arc;

/// Partials of a scalar callback `s(x, u, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPartials<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub t: T,
}

/// Partials of a vector callback `v(x, u, t)` with `m` outputs: `x` is `m × p`,
/// `u` is `m × q`, `t` has length `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorPartials<T> {
    pub x: Matrix<T>,
    pub u: Matrix<T>,
    pub t: Vec<T>,
}

/// Partials of the Mayer term `h(t_f, x_f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MayerPartials<T> {
    pub x: Vec<T>,
    pub t: T,
}

/// Partials of the terminal constraint `ψ(x_f, t_f)`: `x` is `r1 × p`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalPartials<T> {
    pub x: Matrix<T>,
    pub t: Vec<T>,
}

impl<T: Real> ScalarPartials<T> {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self { x: vec![T::zero(); p], u: vec![T::zero(); q], t: T::zero() }
    }
}

impl<T: Real> VectorPartials<T> {
    pub fn zeros(m: usize, p: usize, q: usize) -> Self {
        Self { x: Matrix::zeros(m, p), u: Matrix::zeros(m, q), t: vec![T::zero(); m] }
    }
}

/// User callbacks of a fractional optimal control problem.
///
/// Absent terms keep their default (zero cost, no constraints). Every callback
/// must be a pure function of its arguments; implementations are shared across
/// threads.
pub trait FocpModel<T: Real>: Send + Sync {
    fn dynamics(&self, x: &[T], u: &[T], t: T) -> Vec<T>;

    fn dynamics_partials(&self, x: &[T], u: &[T], t: T) -> VectorPartials<T>;

    fn mayer(&self, _tf: T, _x: &[T]) -> T {
        T::zero()
    }

    fn mayer_partials(&self, _tf: T, x: &[T]) -> MayerPartials<T> {
        MayerPartials { x: vec![T::zero(); x.len()], t: T::zero() }
    }

    fn lagrangian(&self, _x: &[T], _u: &[T], _t: T) -> T {
        T::zero()
    }

    fn lagrangian_partials(&self, x: &[T], u: &[T], _t: T) -> ScalarPartials<T> {
        ScalarPartials::zeros(x.len(), u.len())
    }

    fn terminal(&self, _x: &[T], _tf: T) -> Vec<T> {
        Vec::new()
    }

    fn terminal_partials(&self, x: &[T], _tf: T) -> TerminalPartials<T> {
        TerminalPartials { x: Matrix::zeros(0, x.len()), t: Vec::new() }
    }

    fn path(&self, _x: &[T], _u: &[T], _t: T) -> Vec<T> {
        Vec::new()
    }

    fn path_partials(&self, x: &[T], u: &[T], _t: T) -> VectorPartials<T> {
        VectorPartials::zeros(0, x.len(), u.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FinalTime<T> {
    Fixed(T),
    /// Free horizon searched in `[lower, upper]`, starting from `guess`.
    Free { lower: T, upper: Option<T>, guess: T },
}

impl<T: Real> FinalTime<T> {
    /// Free final time with the default lower bound `1e-3` and initial guess `1`.
    pub fn free() -> Self {
        FinalTime::Free { lower: T::lit(1e-3), upper: None, guess: T::one() }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, FinalTime::Free { .. })
    }

    /// The fixed horizon, or the initial guess of a free one.
    pub fn nominal(&self) -> T {
        match *self {
            FinalTime::Fixed(tf) => tf,
            FinalTime::Free { guess, .. } => guess,
        }
    }
}

/// Box bounds on the control, applied at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Clone)]
pub struct FocpProblem<T: Real> {
    pub state_dim: usize,
    pub control_dim: usize,
    pub terminal_dim: usize,
    pub path_dim: usize,
    pub alpha: T,
    pub x0: Vec<T>,
    pub final_time: FinalTime<T>,
    pub control_bounds: Option<ControlBounds<T>>,
    pub model: Arc<dyn FocpModel<T>>,
}

impl<T: Real> fmt::Debug for FocpProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FocpProblem")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("terminal_dim", &self.terminal_dim)
            .field("path_dim", &self.path_dim)
            .field("alpha", &self.alpha)
            .field("x0", &self.x0)
            .field("final_time", &self.final_time)
            .field("control_bounds", &self.control_bounds)
            .finish_non_exhaustive()
    }
}

/// One problem found by [`FocpProblem::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    OrderOutOfRange(f64),
    NonPositiveFinalTime(f64),
    InvalidFreeTimeBounds,
    InitialStateLength { expected: usize, got: usize },
    TerminalDimExceedsControls { terminal: usize, controls: usize },
    InvalidControlBounds,
    ShapeMismatch { callback: &'static str, expected: (usize, usize), got: (usize, usize) },
    NonFinite { callback: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OrderOutOfRange(a) => write!(f, "order {a} outside (0, 1]"),
            Violation::NonPositiveFinalTime(t) => write!(f, "final time {t} is not positive"),
            Violation::InvalidFreeTimeBounds => {
                f.write_str("free final time needs 0 < lower <= guess <= upper")
            }
            Violation::InitialStateLength { expected, got } => {
                write!(f, "initial state has length {got}, expected {expected}")
            }
            Violation::TerminalDimExceedsControls { terminal, controls } => {
                write!(f, "{terminal} terminal conditions exceed {controls} controls")
            }
            Violation::InvalidControlBounds => {
                f.write_str("control bounds must have length q and lower <= upper")
            }
            Violation::ShapeMismatch { callback, expected, got } => {
                write!(f, "{callback} has shape {got:?}, expected {expected:?}")
            }
            Violation::NonFinite { callback } => write!(f, "{callback} is not finite at the probe point"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

struct Probe<'a> {
    report: &'a mut ValidationReport,
}

impl Probe<'_> {
    fn vector<T: Real>(&mut self, callback: &'static str, v: &[T], len: usize) {
        if v.len() != len {
            self.report.violations.push(Violation::ShapeMismatch {
                callback,
                expected: (len, 1),
                got: (v.len(), 1),
            });
        } else if v.iter().any(|x| !x.is_finite()) {
            self.report.violations.push(Violation::NonFinite { callback });
        }
    }

    fn scalar<T: Real>(&mut self, callback: &'static str, v: T) {
        if !v.is_finite() {
            self.report.violations.push(Violation::NonFinite { callback });
        }
    }

    fn matrix<T: Real>(&mut self, callback: &'static str, m: &Matrix<T>, shape: (usize, usize)) {
        if m.shape() != shape {
            self.report.violations.push(Violation::ShapeMismatch { callback, expected: shape, got: m.shape() });
        } else if !m.is_finite() {
            self.report.violations.push(Violation::NonFinite { callback });
        }
    }
}

impl<T: Real> FocpProblem<T> {
    /// Problem with dynamics only; add cost and constraints through the model and
    /// declare their dimensions with the `with_*` methods.
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        alpha: T,
        x0: Vec<T>,
        final_time: FinalTime<T>,
        model: Arc<dyn FocpModel<T>>,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            terminal_dim: 0,
            path_dim: 0,
            alpha,
            x0,
            final_time,
            control_bounds: None,
            model,
        }
    }

    pub fn with_terminal_dim(mut self, r1: usize) -> Self {
        self.terminal_dim = r1;
        self
    }

    pub fn with_path_dim(mut self, r2: usize) -> Self {
        self.path_dim = r2;
        self
    }

    pub fn with_control_bounds(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        self.control_bounds = Some(ControlBounds { lower, upper });
        self
    }

    /// Checks declared dimensions and callback outputs at the probe point
    /// `x = x₀, u = 0, t = 0` (terminal terms at the nominal final time).
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let (p, q, r1, r2) = (self.state_dim, self.control_dim, self.terminal_dim, self.path_dim);
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            report
                .violations
                .push(Violation::OrderOutOfRange(self.alpha.to_f64().unwrap_or(f64::NAN)));
        }
        match self.final_time {
            FinalTime::Fixed(tf) => {
                if !(tf > T::zero() && tf.is_finite()) {
                    report
                        .violations
                        .push(Violation::NonPositiveFinalTime(tf.to_f64().unwrap_or(f64::NAN)));
                }
            }
            FinalTime::Free { lower, upper, guess } => {
                let upper_ok = upper.is_none_or(|u| u >= guess);
                if !(lower > T::zero() && guess >= lower && upper_ok) {
                    report.violations.push(Violation::InvalidFreeTimeBounds);
                }
            }
        }
        if r1 > q {
            report
                .violations
                .push(Violation::TerminalDimExceedsControls { terminal: r1, controls: q });
        }
        if let Some(b) = &self.control_bounds {
            let ok = b.lower.len() == q
                && b.upper.len() == q
                && b.lower.iter().zip(&b.upper).all(|(l, u)| l <= u);
            if !ok {
                report.violations.push(Violation::InvalidControlBounds);
            }
        }
        if self.x0.len() != p {
            report
                .violations
                .push(Violation::InitialStateLength { expected: p, got: self.x0.len() });
            return report;
        }

        let x = &self.x0;
        let u = vec![T::zero(); q];
        let t = T::zero();
        let tf = self.final_time.nominal();
        let m = &self.model;
        let mut probe = Probe { report: &mut report };

        probe.vector("dynamics", &m.dynamics(x, &u, t), p);
        let fp = m.dynamics_partials(x, &u, t);
        probe.matrix("dynamics_partials.x", &fp.x, (p, p));
        probe.matrix("dynamics_partials.u", &fp.u, (p, q));
        probe.vector("dynamics_partials.t", &fp.t, p);

        probe.scalar("lagrangian", m.lagrangian(x, &u, t));
        let gp = m.lagrangian_partials(x, &u, t);
        probe.vector("lagrangian_partials.x", &gp.x, p);
        probe.vector("lagrangian_partials.u", &gp.u, q);
        probe.scalar("lagrangian_partials.t", gp.t);

        probe.scalar("mayer", m.mayer(tf, x));
        let hp = m.mayer_partials(tf, x);
        probe.vector("mayer_partials.x", &hp.x, p);
        probe.scalar("mayer_partials.t", hp.t);

        probe.vector("terminal", &m.terminal(x, tf), r1);
        let tp = m.terminal_partials(x, tf);
        probe.matrix("terminal_partials.x", &tp.x, (r1, p));
        probe.vector("terminal_partials.t", &tp.t, r1);

        probe.vector("path", &m.path(x, &u, t), r2);
        let pp = m.path_partials(x, &u, t);
        probe.matrix("path_partials.x", &pp.x, (r2, p));
        probe.matrix("path_partials.u", &pp.u, (r2, q));
        probe.vector("path_partials.t", &pp.t, r2);

        report
    }

    /// Maps the problem onto `τ ∈ [0, 1]`.
    pub fn rescale(&self) -> ScaledFocp<T> {
        ScaledFocp { problem: self.clone() }
    }
}

/// Partials of `t_f · g(x, u, t_f τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledCostPartials<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub tf: T,
}

/// Partials of a rescaled vector callback; `tf` is the derivative with respect to
/// the horizon at fixed `τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledVectorPartials<T> {
    pub x: Matrix<T>,
    pub u: Matrix<T>,
    pub tf: Vec<T>,
}

/// A problem expressed over `τ ∈ [0, 1]` with the horizon `t_f` as a parameter.
#[derive(Clone, Debug)]
pub struct ScaledFocp<T: Real> {
    problem: FocpProblem<T>,
}

impl<T: Real> ScaledFocp<T> {
    pub fn problem(&self) -> &FocpProblem<T> {
        &self.problem
    }

    /// Original time `t = τ t_f`.
    #[inline]
    pub fn time(&self, tau: T, tf: T) -> T {
        tau * tf
    }

    /// `t_f · g(x, u, t_f τ)`.
    pub fn cost_integrand(&self, x: &[T], u: &[T], tau: T, tf: T) -> T {
        tf * self.problem.model.lagrangian(x, u, tau * tf)
    }

    pub fn cost_integrand_partials(&self, x: &[T], u: &[T], tau: T, tf: T) -> ScaledCostPartials<T> {
        let t = tau * tf;
        let model = &self.problem.model;
        let g = model.lagrangian(x, u, t);
        let gp = model.lagrangian_partials(x, u, t);
        ScaledCostPartials {
            x: gp.x.iter().map(|&v| tf * v).collect(),
            u: gp.u.iter().map(|&v| tf * v).collect(),
            tf: g + tf * tau * gp.t,
        }
    }

    /// `t_f^α · f(x, u, t_f τ)`.
    pub fn dynamics(&self, x: &[T], u: &[T], tau: T, tf: T) -> Vec<T> {
        let s = tf.powf(self.problem.alpha);
        self.problem.model.dynamics(x, u, tau * tf).into_iter().map(|v| s * v).collect()
    }

    pub fn dynamics_partials(&self, x: &[T], u: &[T], tau: T, tf: T) -> ScaledVectorPartials<T> {
        let alpha = self.problem.alpha;
        let t = tau * tf;
        let s = tf.powf(alpha);
        let ds = alpha * tf.powf(alpha - T::one());
        let model = &self.problem.model;
        let f = model.dynamics(x, u, t);
        let fp = model.dynamics_partials(x, u, t);
        let scale = |m: &Matrix<T>| Matrix::from_fn(m.rows(), m.cols(), |i, j| s * m[(i, j)]);
        let tf_col = f
            .iter()
            .zip(fp.t.iter().chain(std::iter::repeat(&T::zero())))
            .map(|(&fi, &ft)| ds * fi + s * tau * ft)
            .collect();
        ScaledVectorPartials { x: scale(&fp.x), u: scale(&fp.u), tf: tf_col }
    }

    pub fn mayer(&self, tf: T, x: &[T]) -> T {
        self.problem.model.mayer(tf, x)
    }

    pub fn mayer_partials(&self, tf: T, x: &[T]) -> MayerPartials<T> {
        self.problem.model.mayer_partials(tf, x)
    }

    pub fn terminal(&self, x: &[T], tf: T) -> Vec<T> {
        self.problem.model.terminal(x, tf)
    }

    pub fn terminal_partials(&self, x: &[T], tf: T) -> TerminalPartials<T> {
        self.problem.model.terminal_partials(x, tf)
    }

    /// `φ(x, u, t_f τ)`.
    pub fn path(&self, x: &[T], u: &[T], tau: T, tf: T) -> Vec<T> {
        self.problem.model.path(x, u, tau * tf)
    }

    pub fn path_partials(&self, x: &[T], u: &[T], tau: T, tf: T) -> ScaledVectorPartials<T> {
        let pp = self.problem.model.path_partials(x, u, tau * tf);
        ScaledVectorPartials { x: pp.x, u: pp.u, tf: pp.t.iter().map(|&v| tau * v).collect() }
    }
}

/// Worst relative deviation between each supplied partial and a central
/// difference of its callback, at one probe point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartialsCheck {
    pub entries: Vec<(&'static str, f64)>,
}

impl PartialsCheck {
    pub fn worst(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.1))
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

impl FocpProblem<f64> {
    /// Compares every partial-derivative callback against central differences
    /// with step `1e-6 · (1 + |arg|)` at `(x, u, t)` (and `t_f`).
    pub fn check_partials(&self, x: &[f64], u: &[f64], t: f64, tf: f64) -> PartialsCheck {
        let m = &self.model;
        let step = |v: f64| 1e-6 * (1.0 + v.abs());
        let mut out = PartialsCheck::default();

        let vary = |k: usize, delta: f64| -> (Vec<f64>, Vec<f64>, f64, f64) {
            let (mut xx, mut uu, mut tt, mut ff) = (x.to_vec(), u.to_vec(), t, tf);
            let p = x.len();
            let q = u.len();
            if k < p {
                xx[k] += delta;
            } else if k < p + q {
                uu[k - p] += delta;
            } else if k == p + q {
                tt += delta;
            } else {
                ff += delta;
            }
            (xx, uu, tt, ff)
        };
        let arg = |k: usize| -> f64 {
            let p = x.len();
            let q = u.len();
            if k < p {
                x[k]
            } else if k < p + q {
                u[k - p]
            } else if k == p + q {
                t
            } else {
                tf
            }
        };
        let p = x.len();
        let q = u.len();
        let mut worst_for = |name: &'static str,
                             eval: &dyn Fn(&[f64], &[f64], f64, f64) -> Vec<f64>,
                             analytic: &dyn Fn(usize, usize) -> Option<f64>| {
            let mut worst: f64 = 0.0;
            for k in 0..p + q + 2 {
                let d = step(arg(k));
                let (xa, ua, ta, fa) = vary(k, d);
                let (xb, ub, tb, fb) = vary(k, -d);
                let plus = eval(&xa, &ua, ta, fa);
                let minus = eval(&xb, &ub, tb, fb);
                for (row, (a, b)) in plus.iter().zip(&minus).enumerate() {
                    if let Some(exact) = analytic(row, k) {
                        worst = worst.max(rel_dev(exact, (a - b) / (2.0 * d)));
                    }
                }
            }
            out.entries.push((name, worst));
        };

        let fp = m.dynamics_partials(x, u, t);
        worst_for(
            "dynamics",
            &|x, u, t, _| m.dynamics(x, u, t),
            &|r, k| {
                if k < p {
                    Some(fp.x[(r, k)])
                } else if k < p + q {
                    Some(fp.u[(r, k - p)])
                } else if k == p + q {
                    Some(fp.t[r])
                } else {
                    None
                }
            },
        );
        let gp = m.lagrangian_partials(x, u, t);
        worst_for(
            "lagrangian",
            &|x, u, t, _| vec![m.lagrangian(x, u, t)],
            &|_, k| {
                if k < p {
                    Some(gp.x[k])
                } else if k < p + q {
                    Some(gp.u[k - p])
                } else if k == p + q {
                    Some(gp.t)
                } else {
                    None
                }
            },
        );
        let hp = m.mayer_partials(tf, x);
        worst_for(
            "mayer",
            &|x, _, _, tf| vec![m.mayer(tf, x)],
            &|_, k| {
                if k < p {
                    Some(hp.x[k])
                } else if k == p + q + 1 {
                    Some(hp.t)
                } else {
                    Some(0.0)
                }
            },
        );
        let tp = m.terminal_partials(x, tf);
        worst_for(
            "terminal",
            &|x, _, _, tf| m.terminal(x, tf),
            &|r, k| {
                if k < p {
                    Some(tp.x[(r, k)])
                } else if k == p + q + 1 {
                    Some(tp.t[r])
                } else {
                    Some(0.0)
                }
            },
        );
        let pp = m.path_partials(x, u, t);
        worst_for(
            "path",
            &|x, u, t, _| m.path(x, u, t),
            &|r, k| {
                if k < p {
                    Some(pp.x[(r, k)])
                } else if k < p + q {
                    Some(pp.u[(r, k - p)])
                } else if k == p + q {
                    Some(pp.t[r])
                } else {
                    None
                }
            },
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `D^α x = a x + b u + c t`, cost `x² + u²`, terminal `x_f - t_f`, path `u - 1`.
    struct Linear {
        a: f64,
        b: f64,
        c: f64,
        extra_output: bool,
    }

    impl FocpModel<f64> for Linear {
        fn dynamics(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
            let mut v = vec![self.a * x[0] + self.b * u[0] + self.c * t];
            if self.extra_output {
                v.push(0.0);
            }
            v
        }
        fn dynamics_partials(&self, _x: &[f64], _u: &[f64], _t: f64) -> VectorPartials<f64> {
            VectorPartials {
                x: Matrix::from_row_major(1, 1, vec![self.a]),
                u: Matrix::from_row_major(1, 1, vec![self.b]),
                t: vec![self.c],
            }
        }
        fn lagrangian(&self, x: &[f64], u: &[f64], _t: f64) -> f64 {
            x[0] * x[0] + u[0] * u[0]
        }
        fn lagrangian_partials(&self, x: &[f64], u: &[f64], _t: f64) -> ScalarPartials<f64> {
            ScalarPartials { x: vec![2.0 * x[0]], u: vec![2.0 * u[0]], t: 0.0 }
        }
        fn terminal(&self, x: &[f64], tf: f64) -> Vec<f64> {
            vec![x[0] - tf]
        }
        fn terminal_partials(&self, _x: &[f64], _tf: f64) -> TerminalPartials<f64> {
            TerminalPartials { x: Matrix::from_row_major(1, 1, vec![1.0]), t: vec![-1.0] }
        }
    }

    fn linear(alpha: f64, tf: FinalTime<f64>, extra: bool) -> FocpProblem<f64> {
        let model = Arc::new(Linear { a: -1.0, b: 2.0, c: 0.5, extra_output: extra });
        FocpProblem::new(1, 1, alpha, vec![1.0], tf, model).with_terminal_dim(1)
    }

    #[test]
    fn validate_accepts_consistent_problem() {
        let prob = linear(0.5, FinalTime::Fixed(2.0), false);
        assert!(prob.validate().is_ok(), "{}", prob.validate());
    }

    #[test]
    fn validate_flags_shape_order_and_time() {
        let prob = linear(0.5, FinalTime::Fixed(2.0), true);
        let report = prob.validate();
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::ShapeMismatch { callback: "dynamics", expected: (1, 1), got: (2, 1) }
        )));

        let report = linear(1.3, FinalTime::Fixed(2.0), false).validate();
        assert_eq!(report.violations, vec![Violation::OrderOutOfRange(1.3)]);

        let report = linear(0.5, FinalTime::Fixed(-1.0), false).validate();
        assert_eq!(report.violations, vec![Violation::NonPositiveFinalTime(-1.0)]);

        let bad_free = FinalTime::Free { lower: 0.0, upper: None, guess: 1.0 };
        let report = linear(0.5, bad_free, false).validate();
        assert_eq!(report.violations, vec![Violation::InvalidFreeTimeBounds]);

        let report = linear(0.5, FinalTime::Fixed(1.0), false).with_terminal_dim(2).validate();
        assert!(report
            .violations
            .contains(&Violation::TerminalDimExceedsControls { terminal: 2, controls: 1 }));
    }

    #[test]
    fn free_time_defaults() {
        match FinalTime::<f64>::free() {
            FinalTime::Free { lower, upper, guess } => {
                assert_eq!(lower, 1e-3);
                assert_eq!(upper, None);
                assert_eq!(guess, 1.0);
            }
            FinalTime::Fixed(_) => unreachable!(),
        }
    }

    #[test]
    fn unit_horizon_rescaling_is_identity() {
        let prob = linear(0.7, FinalTime::Fixed(1.0), false);
        let scaled = prob.rescale();
        let (x, u) = ([0.3], [-0.4]);
        for tau in [0.0, 0.25, 1.0] {
            assert_eq!(scaled.dynamics(&x, &u, tau, 1.0), prob.model.dynamics(&x, &u, tau));
            assert_eq!(scaled.cost_integrand(&x, &u, tau, 1.0), prob.model.lagrangian(&x, &u, tau));
        }
    }

    #[test]
    fn dynamics_scale_with_horizon_power() {
        let prob = linear(0.5, FinalTime::Fixed(20.0), false);
        let scaled = prob.rescale();
        let (x, u, tau) = ([0.3], [-0.4], 0.6);
        let raw = prob.model.dynamics(&x, &u, 12.0)[0];
        let got = scaled.dynamics(&x, &u, tau, 20.0)[0];
        assert!((got / raw - 4.472_135_955).abs() < 1e-9);
    }

    #[test]
    fn horizon_partial_of_autonomous_dynamics() {
        let model = Arc::new(Linear { a: -1.0, b: 2.0, c: 0.0, extra_output: false });
        let prob = FocpProblem::new(1, 1, 0.6, vec![1.0], FinalTime::free(), model);
        let scaled = prob.rescale();
        let (x, u, tau, tf) = ([0.3], [0.1], 0.4, 1.7);
        let d = scaled.dynamics_partials(&x, &u, tau, tf);
        let f = prob.model.dynamics(&x, &u, tau * tf)[0];
        assert!((d.tf[0] - 0.6 * tf.powf(-0.4) * f).abs() < 1e-15);
    }

    #[test]
    fn scaled_partials_match_finite_differences() {
        let prob = linear(0.5, FinalTime::free(), false);
        let s = prob.rescale();
        let (x, u, tau, tf) = ([0.3], [0.1], 0.4, 1.7);
        let e = 1e-6;
        let fd = (s.dynamics(&x, &u, tau, tf + e)[0] - s.dynamics(&x, &u, tau, tf - e)[0]) / (2.0 * e);
        assert!((s.dynamics_partials(&x, &u, tau, tf).tf[0] - fd).abs() < 1e-8);
        let fd = (s.cost_integrand(&x, &u, tau, tf + e) - s.cost_integrand(&x, &u, tau, tf - e)) / (2.0 * e);
        assert!((s.cost_integrand_partials(&x, &u, tau, tf).tf - fd).abs() < 1e-8);
    }

    #[test]
    fn rescaled_cost_matches_change_of_variables() {
        // ∫₀^{t_f} (x² + u²) dt with x = t, u = 1 equals t_f³/3 + t_f.
        let prob = linear(0.5, FinalTime::Fixed(3.0), false);
        let s = prob.rescale();
        let n = 400;
        let tf = 3.0;
        let w = crate::fracint::quad_weights::<f64>(crate::fracint::QuadratureRule::Simpson, n).unwrap();
        let total: f64 = (0..=n)
            .map(|i| {
                let tau = i as f64 / n as f64;
                w.w[i] * s.cost_integrand(&[tau * tf], &[1.0], tau, tf)
            })
            .sum();
        assert!((total - (tf.powi(3) / 3.0 + tf)).abs() < 1e-10);
    }

    #[test]
    fn partial_check_detects_consistent_partials() {
        let prob = linear(0.5, FinalTime::Fixed(2.0), false);
        let chk = prob.check_partials(&[0.4], &[0.2], 0.3, 2.0);
        assert!(chk.worst() < 1e-8, "{chk:?}");
    }
}
