//! Bound-constrained augmented Lagrangian solver for
//!
//! ```text
//! minimize f(z)  subject to  c(z) = 0,  g(z) ≤ 0,  l ≤ z ≤ u
//! ```
//!
//! Inequalities are turned into `g(z) + s = 0, s ≥ 0`; the slacks are minimized
//! out in closed form, which leaves a smooth bound-constrained subproblem in `z`
//! solved by projected L-BFGS with backtracking.

use crate::error::EvalError;
use crate::linalg::{dot, norm_inf};
use crate::scalar::Real;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

/// A smooth constrained program with first derivatives supplied as
/// Jacobian-transpose products.
pub trait NlpProblem<T: Real> {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Variable bounds; infinite entries mean unbounded.
    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let n = self.num_vars();
        (vec![T::neg_infinity(); n], vec![T::infinity(); n])
    }

    fn objective(&self, z: &[T]) -> Result<T, EvalError>;
    fn gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError>;
    fn eq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError>;
    fn ineq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError>;
    /// `∇c(z)ᵀ v`.
    fn eq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError>;
    /// `∇g(z)ᵀ v`.
    fn ineq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError>;
}

impl<T: Real, P: NlpProblem<T> + ?Sized> NlpProblem<T> for &P {
    fn num_vars(&self) -> usize {
        (**self).num_vars()
    }
    fn num_eq(&self) -> usize {
        (**self).num_eq()
    }
    fn num_ineq(&self) -> usize {
        (**self).num_ineq()
    }
    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        (**self).bounds()
    }
    fn objective(&self, z: &[T]) -> Result<T, EvalError> {
        (**self).objective(z)
    }
    fn gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        (**self).gradient(z)
    }
    fn eq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        (**self).eq_constraints(z)
    }
    fn ineq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        (**self).ineq_constraints(z)
    }
    fn eq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        (**self).eq_jacobian_tr_mul(z, v)
    }
    fn ineq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        (**self).ineq_jacobian_tr_mul(z, v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions<T> {
    pub kkt_tol: T,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub initial_penalty: T,
    /// Must exceed 1.
    pub penalty_growth: T,
    pub max_penalty: T,
    /// Multipliers are clipped to `[-bound, bound]`.
    pub multiplier_bound: T,
    /// Sufficient-decrease constant.
    pub armijo: T,
    pub backtrack: T,
    /// Number of stored secant pairs.
    pub memory: usize,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            kkt_tol: T::lit(1e-10),
            max_outer_iters: 100,
            max_inner_iters: 500,
            initial_penalty: T::lit(10.0),
            penalty_growth: T::lit(10.0),
            max_penalty: T::lit(1e12),
            multiplier_bound: T::lit(1e12),
            armijo: T::lit(1e-4),
            backtrack: T::lit(0.5),
            memory: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    LineSearchFailure,
    Infeasible,
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub objective: T,
    pub eq_violation: T,
    pub ineq_violation: T,
    pub kkt: T,
    /// Infinity norm of the change in `z` over the iteration.
    pub step_length: T,
    pub inner_iters: usize,
    pub penalty: T,
}

#[derive(Clone, Debug)]
pub struct NlpSolution<T> {
    pub z: Vec<T>,
    pub eq_multipliers: Vec<T>,
    /// Nonnegative.
    pub ineq_multipliers: Vec<T>,
    pub kkt_residual: T,
    pub objective: T,
    /// Outer iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub status: Status,
    pub history: Vec<IterationRecord<T>>,
    /// Set when the solve stopped on a callback failure.
    pub error: Option<EvalError>,
}

/// Per-iteration log as CSV with a header row.
pub fn iteration_log_csv<T: Real>(history: &[IterationRecord<T>]) -> String {
    let mut out = String::from("iter,objective,eq_violation,ineq_violation,kkt,step_length\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.iter, r.objective, r.eq_violation, r.ineq_violation, r.kkt, r.step_length
        );
    }
    out
}

fn project<T: Real>(z: &mut [T], lo: &[T], hi: &[T]) {
    for ((v, &l), &u) in z.iter_mut().zip(lo).zip(hi) {
        *v = v.max(l).min(u);
    }
}

/// `‖P(z − g) − z‖∞`.
fn projected_gradient_norm<T: Real>(z: &[T], g: &[T], lo: &[T], hi: &[T]) -> T {
    z.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .fold(T::zero(), |m, ((&zi, &gi), (&l, &u))| m.max(((zi - gi).max(l).min(u) - zi).abs()))
}

fn check_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest of projected stationarity, equality and inequality violation, and
/// complementarity `|min(μ, −g)|`.
pub fn kkt_residual<T: Real, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &[T],
    eq_multipliers: &[T],
    ineq_multipliers: &[T],
) -> Result<T, EvalError> {
    let (lo, hi) = problem.bounds();
    let mut grad = problem.gradient(z)?;
    let ce = problem.eq_constraints(z)?;
    let ci = problem.ineq_constraints(z)?;
    if !ce.is_empty() {
        let je = problem.eq_jacobian_tr_mul(z, eq_multipliers)?;
        grad.iter_mut().zip(&je).for_each(|(g, j)| *g = *g + *j);
    }
    if !ci.is_empty() {
        let ji = problem.ineq_jacobian_tr_mul(z, ineq_multipliers)?;
        grad.iter_mut().zip(&ji).for_each(|(g, j)| *g = *g + *j);
    }
    let stationarity = projected_gradient_norm(z, &grad, &lo, &hi);
    let eq_viol = norm_inf(&ce);
    let ineq_viol = ci.iter().fold(T::zero(), |m, &g| m.max(g));
    let comp = ci
        .iter()
        .zip(ineq_multipliers)
        .fold(T::zero(), |m, (&g, &mu)| m.max(mu.min(-g).abs()));
    Ok(stationarity.max(eq_viol).max(ineq_viol).max(comp))
}

struct Merit<'a, T: Real, P: NlpProblem<T> + ?Sized> {
    problem: &'a P,
    lambda: Vec<T>,
    mu: Vec<T>,
    rho: T,
}

struct MeritEval<T> {
    value: T,
    objective: T,
    ce: Vec<T>,
    ci: Vec<T>,
}

impl<T: Real, P: NlpProblem<T> + ?Sized> Merit<'_, T, P> {
    fn eval(&self, z: &[T]) -> Result<MeritEval<T>, EvalError> {
        let f = self.problem.objective(z)?;
        let ce = self.problem.eq_constraints(z)?;
        let ci = self.problem.ineq_constraints(z)?;
        let half = T::lit(0.5);
        let mut value = f;
        for (&c, &l) in ce.iter().zip(&self.lambda) {
            value = value + l * c + half * self.rho * c * c;
        }
        for (&g, &m) in ci.iter().zip(&self.mu) {
            let shifted = (g + m / self.rho).max(T::zero());
            let base = m / self.rho;
            value = value + half * self.rho * (shifted * shifted - base * base);
        }
        Ok(MeritEval { value, objective: f, ce, ci })
    }

    fn value(&self, z: &[T]) -> Option<T> {
        match self.eval(z) {
            Ok(e) if e.value.is_finite() => Some(e.value),
            _ => None,
        }
    }

    fn value_grad(&self, z: &[T]) -> Result<(T, Vec<T>), EvalError> {
        let e = self.eval(z)?;
        let mut g = self.problem.gradient(z)?;
        if !e.ce.is_empty() {
            let y: Vec<T> = e.ce.iter().zip(&self.lambda).map(|(&c, &l)| l + self.rho * c).collect();
            let jy = self.problem.eq_jacobian_tr_mul(z, &y)?;
            g.iter_mut().zip(&jy).for_each(|(a, b)| *a = *a + *b);
        }
        if !e.ci.is_empty() {
            let y: Vec<T> = e
                .ci
                .iter()
                .zip(&self.mu)
                .map(|(&c, &m)| (m + self.rho * c).max(T::zero()))
                .collect();
            let jy = self.problem.ineq_jacobian_tr_mul(z, &y)?;
            g.iter_mut().zip(&jy).for_each(|(a, b)| *a = *a + *b);
        }
        Ok((e.value, g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InnerStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

struct Secant<T> {
    s: Vec<T>,
    y: Vec<T>,
    rho: T,
}

/// Two-loop recursion restricted to the free variables.
fn lbfgs_direction<T: Real>(memory: &VecDeque<Secant<T>>, g: &[T], free: &[bool]) -> Vec<T> {
    let mask = |v: &mut Vec<T>| {
        for (x, &f) in v.iter_mut().zip(free) {
            if !f {
                *x = T::zero();
            }
        }
    };
    let dot_free = |a: &[T], b: &[T]| {
        a.iter()
            .zip(b)
            .zip(free)
            .filter(|(_, &f)| f)
            .fold(T::zero(), |s, ((&x, &y), _)| s + x * y)
    };
    let mut q = g.to_vec();
    mask(&mut q);
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let a = pair.rho * dot_free(&pair.s, &q);
        q.iter_mut().zip(&pair.y).for_each(|(qi, &yi)| *qi = *qi - a * yi);
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let yy = dot_free(&last.y, &last.y);
        let sy = dot_free(&last.s, &last.y);
        if yy > T::zero() && sy > T::zero() {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v = *v * gamma);
        }
    }
    for (pair, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot_free(&pair.y, &q);
        q.iter_mut().zip(&pair.s).for_each(|(qi, &si)| *qi = *qi + (a - b) * si);
    }
    mask(&mut q);
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct InnerResult {
    status: InnerStatus,
    iterations: usize,
}

fn inner_solve<T: Real, P: NlpProblem<T> + ?Sized>(
    merit: &Merit<'_, T, P>,
    z: &mut Vec<T>,
    lo: &[T],
    hi: &[T],
    tol: T,
    opts: &SolverOptions<T>,
) -> Result<InnerResult, EvalError> {
    let (mut f, mut g) = merit.value_grad(z)?;
    let mut memory: VecDeque<Secant<T>> = VecDeque::with_capacity(opts.memory);
    let roundoff = T::lit(16.0) * T::epsilon();
    let mut fresh_restart = false;
    for it in 0..opts.max_inner_iters {
        if projected_gradient_norm(z, &g, lo, hi) <= tol {
            return Ok(InnerResult { status: InnerStatus::Converged, iterations: it });
        }
        let free: Vec<bool> = z
            .iter()
            .zip(&g)
            .zip(lo.iter().zip(hi))
            .map(|((&zi, &gi), (&l, &u))| !((zi <= l && gi > T::zero()) || (zi >= u && gi < T::zero())))
            .collect();
        let mut d = lbfgs_direction(&memory, &g, &free);
        if !(dot(&g, &d) < T::zero()) || !check_finite(&d) {
            memory.clear();
            d = g.iter().zip(&free).map(|(&gi, &fr)| if fr { -gi } else { T::zero() }).collect();
        }
        let mut t = if memory.is_empty() {
            let dn = norm_inf(&d);
            if dn > T::one() {
                T::one() / dn
            } else {
                T::one()
            }
        } else {
            T::one()
        };
        let noise = roundoff * f.abs() + T::lit(1e-10) * f.abs();
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<T> = z.iter().zip(&d).map(|(&zi, &di)| zi + t * di).collect();
            project(&mut trial, lo, hi);
            let dz: Vec<T> = trial.iter().zip(z.iter()).map(|(&a, &b)| a - b).collect();
            if dz.iter().all(|v| *v == T::zero()) {
                break;
            }
            if let Some(ft) = merit.value(&trial) {
                let predicted = dot(&g, &dz);
                if ft <= f + opts.armijo * predicted + roundoff * f.abs() {
                    accepted = Some((trial, dz, None));
                    break;
                }
                // Values drown in roundoff near a minimizer; the slope along the
                // step still carries the sign.
                if ft <= f + noise && predicted < T::zero() {
                    let (fg, gt) = merit.value_grad(&trial)?;
                    let slope_t = dot(&gt, &dz);
                    // approximate Wolfe: 0.9 φ'(0) ≤ φ'(t) ≤ −0.8 φ'(0)
                    if slope_t >= T::lit(0.9) * predicted && slope_t <= T::lit(-0.8) * predicted {
                        accepted = Some((trial, dz, Some((fg, gt))));
                        break;
                    }
                }
            }
            t = t * opts.backtrack;
        }
        let Some((trial, dz, evaluated)) = accepted else {
            if memory.is_empty() || fresh_restart {
                return Ok(InnerResult { status: InnerStatus::LineSearchFailure, iterations: it });
            }
            memory.clear();
            fresh_restart = true;
            continue;
        };
        fresh_restart = false;
        let (fn_, gn) = match evaluated {
            Some(e) => e,
            None => merit.value_grad(&trial)?,
        };
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&dz, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&dz, &dz).sqrt() && sy > T::zero() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back(Secant { s: dz.clone(), y, rho: T::one() / sy });
        }
        *z = trial;
        f = fn_;
        g = gn;
    }
    let status = if projected_gradient_norm(z, &g, lo, hi) <= tol {
        InnerStatus::Converged
    } else {
        InnerStatus::MaxIters
    };
    Ok(InnerResult { status, iterations: opts.max_inner_iters })
}

/// Solves the program from `z0` (projected onto the bounds).
///
/// The returned iterate is the one with the smallest KKT residual seen at the
/// end of an outer iteration.
pub fn solve<T: Real, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z0: &[T],
    opts: &SolverOptions<T>,
) -> NlpSolution<T> {
    let (lo, hi) = problem.bounds();
    let mut z = z0.to_vec();
    project(&mut z, &lo, &hi);
    let m_eq = problem.num_eq();
    let m_in = problem.num_ineq();
    let failed = |z: Vec<T>, status, error| NlpSolution {
        z,
        eq_multipliers: vec![T::zero(); m_eq],
        ineq_multipliers: vec![T::zero(); m_in],
        kkt_residual: T::infinity(),
        objective: T::nan(),
        iterations: 0,
        inner_iterations: 0,
        status,
        history: Vec::new(),
        error,
    };
    if z.len() != problem.num_vars() {
        let err = EvalError::Length { expected: problem.num_vars(), got: z.len() };
        return failed(z, Status::Infeasible, Some(err));
    }

    let mut merit = Merit { problem, lambda: vec![T::zero(); m_eq], mu: vec![T::zero(); m_in], rho: opts.initial_penalty };
    let start = match merit.eval(&z) {
        Ok(e) if e.objective.is_finite() && check_finite(&e.ce) && check_finite(&e.ci) => e,
        Ok(_) => return failed(z, Status::Infeasible, None),
        Err(err) => return failed(z, Status::Infeasible, Some(err)),
    };
    let violation = |ce: &[T], ci: &[T], mu: &[T], rho: T| {
        let e = norm_inf(ce);
        let i = ci.iter().zip(mu).fold(T::zero(), |m, (&g, &mu)| m.max(g.max(-mu / rho).abs()));
        e.max(i)
    };
    let mut prev_violation = violation(&start.ce, &start.ci, &merit.mu, merit.rho);
    let mut omega = T::lit(1e-3).max(opts.kkt_tol);
    let mut history = Vec::new();
    let mut best: Option<(T, Vec<T>, Vec<T>, Vec<T>, T)> = None;
    let mut inner_total = 0;
    let mut last_inner = InnerStatus::Converged;
    let mut error = None;
    let mut iterations = 0;

    for k in 0..opts.max_outer_iters {
        iterations = k + 1;
        let before = z.clone();
        let inner = match inner_solve(&merit, &mut z, &lo, &hi, omega, opts) {
            Ok(r) => r,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        inner_total += inner.iterations;
        last_inner = inner.status;
        let e = match merit.eval(&z) {
            Ok(e) => e,
            Err(err) => {
                error = Some(err);
                break;
            }
        };
        let clip = |v: T| v.max(-opts.multiplier_bound).min(opts.multiplier_bound);
        for (l, &c) in merit.lambda.iter_mut().zip(&e.ce) {
            *l = clip(*l + merit.rho * c);
        }
        for (m, &g) in merit.mu.iter_mut().zip(&e.ci) {
            *m = clip((*m + merit.rho * g).max(T::zero()));
        }
        let kkt = match kkt_residual(problem, &z, &merit.lambda, &merit.mu) {
            Ok(v) => v,
            Err(err) => {
                error = Some(err);
                break;
            }
        };
        let step = before.iter().zip(&z).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        history.push(IterationRecord {
            iter: k,
            objective: e.objective,
            eq_violation: norm_inf(&e.ce),
            ineq_violation: e.ci.iter().fold(T::zero(), |m, &g| m.max(g)),
            kkt,
            step_length: step,
            inner_iters: inner.iterations,
            penalty: merit.rho,
        });
        if best.as_ref().is_none_or(|b| kkt <= b.0) {
            best = Some((kkt, z.clone(), merit.lambda.clone(), merit.mu.clone(), e.objective));
        }
        if kkt <= opts.kkt_tol {
            break;
        }
        let v = violation(&e.ce, &e.ci, &merit.mu, merit.rho);
        let stalled = inner.status == InnerStatus::Converged && v > T::lit(0.25) * prev_violation;
        if stalled && v > opts.kkt_tol {
            merit.rho = (merit.rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_violation = v;
        omega = (omega * T::lit(0.1)).max(T::lit(0.5) * opts.kkt_tol);
        if inner.status == InnerStatus::LineSearchFailure && step == T::zero() && v == T::zero() {
            break;
        }
    }

    let Some((kkt, z_best, lambda, mu, objective)) = best else {
        return NlpSolution { error, history, ..failed(z, Status::Infeasible, None) };
    };
    let status = if kkt <= opts.kkt_tol {
        Status::Converged
    } else if last_inner == InnerStatus::LineSearchFailure {
        Status::LineSearchFailure
    } else {
        Status::MaxIters
    };
    NlpSolution {
        z: z_best,
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        kkt_residual: kkt,
        objective,
        iterations,
        inner_iterations: inner_total,
        status,
        history,
        error,
    }
}

/// Evaluation tallies of a [`CountingProblem`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub objective: usize,
    pub gradient: usize,
    pub eq: usize,
    pub ineq: usize,
    pub eq_jacobian: usize,
    pub ineq_jacobian: usize,
}

impl EvalCounts {
    /// Objective plus constraint function evaluations.
    pub fn function_evals(&self) -> usize {
        self.objective + self.eq + self.ineq
    }
}

/// Counts every call forwarded to the wrapped problem.
pub struct CountingProblem<P> {
    inner: P,
    counters: [AtomicUsize; 6],
}

impl<P> CountingProblem<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, counters: Default::default() }
    }

    pub fn counts(&self) -> EvalCounts {
        let c = |i: usize| self.counters[i].load(Ordering::Relaxed);
        EvalCounts { objective: c(0), gradient: c(1), eq: c(2), ineq: c(3), eq_jacobian: c(4), ineq_jacobian: c(5) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn bump(&self, i: usize) {
        self.counters[i].fetch_add(1, Ordering::Relaxed);
    }
}

impl<T: Real, P: NlpProblem<T>> NlpProblem<T> for CountingProblem<P> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }
    fn num_ineq(&self) -> usize {
        self.inner.num_ineq()
    }
    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        self.inner.bounds()
    }
    fn objective(&self, z: &[T]) -> Result<T, EvalError> {
        self.bump(0);
        self.inner.objective(z)
    }
    fn gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.bump(1);
        self.inner.gradient(z)
    }
    fn eq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.bump(2);
        self.inner.eq_constraints(z)
    }
    fn ineq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.bump(3);
        self.inner.ineq_constraints(z)
    }
    fn eq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.bump(4);
        self.inner.eq_jacobian_tr_mul(z, v)
    }
    fn ineq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.bump(5);
        self.inner.ineq_jacobian_tr_mul(z, v)
    }
}

/// Replaces all derivatives of the wrapped problem by central differences of
/// its function values, with step `step · (1 + |z_k|)`.
pub struct FiniteDifferenceProblem<P, T> {
    inner: P,
    step: T,
}

impl<P, T: Real> FiniteDifferenceProblem<P, T> {
    pub fn new(inner: P, step: T) -> Self {
        Self { inner, step }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<T: Real, P: NlpProblem<T>> FiniteDifferenceProblem<P, T> {
    fn columns(
        &self,
        z: &[T],
        mut eval: impl FnMut(&[T]) -> Result<Vec<T>, EvalError>,
        v: &[T],
    ) -> Result<Vec<T>, EvalError> {
        let mut zz = z.to_vec();
        let mut out = Vec::with_capacity(z.len());
        for k in 0..z.len() {
            let d = self.step * (T::one() + z[k].abs());
            zz[k] = z[k] + d;
            let plus = eval(&zz)?;
            zz[k] = z[k] - d;
            let minus = eval(&zz)?;
            zz[k] = z[k];
            let two_d = d + d;
            out.push(plus.iter().zip(&minus).zip(v).fold(T::zero(), |s, ((&a, &b), &w)| s + w * (a - b) / two_d));
        }
        Ok(out)
    }
}

impl<T: Real, P: NlpProblem<T>> NlpProblem<T> for FiniteDifferenceProblem<P, T> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }
    fn num_ineq(&self) -> usize {
        self.inner.num_ineq()
    }
    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        self.inner.bounds()
    }
    fn objective(&self, z: &[T]) -> Result<T, EvalError> {
        self.inner.objective(z)
    }
    fn gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.columns(z, |x| self.inner.objective(x).map(|f| vec![f]), &[T::one()])
    }
    fn eq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.inner.eq_constraints(z)
    }
    fn ineq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.inner.ineq_constraints(z)
    }
    fn eq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.columns(z, |x| self.inner.eq_constraints(x), v)
    }
    fn ineq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.columns(z, |x| self.inner.ineq_constraints(x), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min ½‖z − a‖²` with optional linear equality `Σz = b` and
    /// inequalities `z_k ≥ floor`.
    struct Quadratic {
        a: Vec<f64>,
        sum: Option<f64>,
        floor: Option<f64>,
        bounds: Option<(Vec<f64>, Vec<f64>)>,
    }

    impl Quadratic {
        fn plain(a: Vec<f64>) -> Self {
            Self { a, sum: None, floor: None, bounds: None }
        }
    }

    impl NlpProblem<f64> for Quadratic {
        fn num_vars(&self) -> usize {
            self.a.len()
        }
        fn num_eq(&self) -> usize {
            usize::from(self.sum.is_some())
        }
        fn num_ineq(&self) -> usize {
            if self.floor.is_some() {
                self.a.len()
            } else {
                0
            }
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            self.bounds.clone().unwrap_or_else(|| {
                (vec![f64::NEG_INFINITY; self.a.len()], vec![f64::INFINITY; self.a.len()])
            })
        }
        fn objective(&self, z: &[f64]) -> Result<f64, EvalError> {
            Ok(0.5 * z.iter().zip(&self.a).map(|(x, a)| (x - a).powi(2)).sum::<f64>())
        }
        fn gradient(&self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(z.iter().zip(&self.a).map(|(x, a)| x - a).collect())
        }
        fn eq_constraints(&self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(self.sum.map(|b| vec![z.iter().sum::<f64>() - b]).unwrap_or_default())
        }
        fn ineq_constraints(&self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(self.floor.map(|f| z.iter().map(|x| f - x).collect()).unwrap_or_default())
        }
        fn eq_jacobian_tr_mul(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(vec![v.first().copied().unwrap_or(0.0); z.len()])
        }
        fn ineq_jacobian_tr_mul(&self, _z: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(v.iter().map(|x| -x).collect())
        }
    }

    #[test]
    fn unconstrained_quadratic_in_one_outer_iteration() {
        let prob = Quadratic::plain(vec![1.0, -2.0, 3.5]);
        let sol = solve(&prob, &[0.0; 3], &SolverOptions::default());
        assert_eq!(sol.status, Status::Converged);
        assert_eq!(sol.iterations, 1);
        for (z, a) in sol.z.iter().zip(&prob.a) {
            assert!((z - a).abs() < 1e-10);
        }
    }

    #[test]
    fn equality_constrained_toy() {
        let prob = Quadratic { a: vec![0.0, 0.0], sum: Some(1.0), floor: None, bounds: None };
        let sol = solve(&prob, &[0.0, 0.0], &SolverOptions::default());
        assert_eq!(sol.status, Status::Converged);
        assert!((sol.z[0] - 0.5).abs() < 1e-9 && (sol.z[1] - 0.5).abs() < 1e-9, "{:?}", sol.z);
        assert!((sol.eq_multipliers[0] + 0.5).abs() < 1e-8);
        let kkt = kkt_residual(&prob, &sol.z, &sol.eq_multipliers, &sol.ineq_multipliers).unwrap();
        assert!(kkt <= 1e-10);
    }

    #[test]
    fn inequality_multipliers_nonnegative_and_complementary() {
        let prob = Quadratic { a: vec![-1.0, 2.0], sum: None, floor: Some(0.0), bounds: None };
        let sol = solve(&prob, &[5.0, 5.0], &SolverOptions::default());
        assert_eq!(sol.status, Status::Converged);
        assert!(sol.z[0].abs() < 1e-9 && (sol.z[1] - 2.0).abs() < 1e-9, "{:?}", sol.z);
        assert!(sol.ineq_multipliers.iter().all(|&m| m >= 0.0));
        assert!((sol.ineq_multipliers[0] - 1.0).abs() < 1e-8);
        assert!(sol.ineq_multipliers[1].abs() < 1e-12);
    }

    #[test]
    fn box_bounds_are_respected() {
        let prob = Quadratic {
            a: vec![2.0, -2.0],
            sum: None,
            floor: None,
            bounds: Some((vec![-1.0, -1.0], vec![1.0, 1.0])),
        };
        let sol = solve(&prob, &[0.0, 0.0], &SolverOptions::default());
        assert_eq!(sol.status, Status::Converged);
        assert_eq!(sol.z, vec![1.0, -1.0]);
    }

    #[test]
    fn kkt_residual_of_unconstrained_point_is_gradient_norm() {
        let prob = Quadratic::plain(vec![1.0, 1.0]);
        let r = kkt_residual(&prob, &[0.5, 3.0], &[], &[]).unwrap();
        assert_eq!(r, 2.0);
    }

    #[test]
    fn nonfinite_start_is_infeasible() {
        let prob = Quadratic::plain(vec![1.0]);
        let sol = solve(&prob, &[f64::NAN], &SolverOptions::default());
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn solves_are_deterministic() {
        let prob = Quadratic { a: vec![0.3, -0.7, 1.1], sum: Some(2.0), floor: Some(0.0), bounds: None };
        let a = solve(&prob, &[0.0; 3], &SolverOptions::default());
        let b = solve(&prob, &[0.0; 3], &SolverOptions::default());
        assert_eq!(a.z, b.z);
        assert_eq!(iteration_log_csv(&a.history), iteration_log_csv(&b.history));
    }

    #[test]
    fn finite_difference_adapter_costs_more_evaluations() {
        let prob = Quadratic { a: vec![0.3, -0.7, 1.1], sum: Some(2.0), floor: None, bounds: None };
        let exact = CountingProblem::new(&prob);
        let sol = solve(&exact, &[0.0; 3], &SolverOptions::default());
        assert_eq!(sol.status, Status::Converged);
        let fd = FiniteDifferenceProblem::new(CountingProblem::new(&prob), 1e-6);
        let opts = SolverOptions { kkt_tol: 1e-7, ..SolverOptions::default() };
        let sol_fd = solve(&fd, &[0.0; 3], &opts);
        assert_eq!(sol_fd.status, Status::Converged);
        assert!(exact.counts().function_evals() < fd.inner().counts().function_evals());
    }

    #[test]
    fn iteration_log_has_header_and_rows() {
        let prob = Quadratic { a: vec![0.0, 0.0], sum: Some(1.0), floor: None, bounds: None };
        let sol = solve(&prob, &[0.0, 0.0], &SolverOptions::default());
        let csv = iteration_log_csv(&sol.history);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,objective,eq_violation,ineq_violation,kkt,step_length");
        assert_eq!(lines.len(), sol.history.len() + 1);
    }
}
