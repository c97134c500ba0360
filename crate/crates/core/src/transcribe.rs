//! Direct transcription of a rescaled problem into a finite program.
//!
//! With nodes `τ_i = i/n` and `z = [x₀, u₀, …, x_n, u_n, (t_f)]`:
//!
//! ```text
//! J(z)  = h(t_f, x_n) + t_f Σ w_i g(x_i, u_i, t_f τ_i)
//! c(z)  = (I ⊗ R) z − x₀ ⊗ 1 − t_f^α (W ⊗ I_p) f̂(z)
//! ψ̂(z) = ψ(x_n, t_f)
//! φ̂(z) = [φ(x_i, u_i, t_f τ_i)]_i
//! ```
//!
//! `(W ⊗ I_p) f̂` is `vec(F Wᵀ)` with `F = [f₀ … f_n]`; every Jacobian is the exact
//! derivative of these residuals.

use crate::error::EvalError;
use crate::fracint::{format_sig17, FracIntegrationMatrix, QuadratureRule, QuadratureWeights, Scheme};
use crate::linalg::{kron_identity_mul, kron_identity_tr_mul, Matrix};
use crate::nlp::NlpProblem;
use crate::problem::{FinalTime, ScaledFocp, ValidationReport};
use crate::scalar::Real;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Position of each node's state and control, and of `t_f`, inside `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecisionLayout {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub free_tf: bool,
}

/// Node-wise view of a decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub controls: Vec<Vec<T>>,
    pub tf: Option<T>,
}

impl DecisionLayout {
    pub fn new(p: usize, q: usize, n: usize, free_tf: bool) -> Self {
        Self { p, q, n, free_tf }
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn len(&self) -> usize {
        self.nodes() * (self.p + self.q) + usize::from(self.free_tf)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_offset(&self, i: usize) -> usize {
        i * (self.p + self.q)
    }

    pub fn control_offset(&self, i: usize) -> usize {
        i * (self.p + self.q) + self.p
    }

    pub fn tf_index(&self) -> Option<usize> {
        self.free_tf.then(|| self.nodes() * (self.p + self.q))
    }

    pub fn state<'a, T>(&self, z: &'a [T], i: usize) -> &'a [T] {
        let o = self.state_offset(i);
        &z[o..o + self.p]
    }

    pub fn control<'a, T>(&self, z: &'a [T], i: usize) -> &'a [T] {
        let o = self.control_offset(i);
        &z[o..o + self.q]
    }

    /// # Panics
    /// When the trajectory does not have `n + 1` nodes of the right widths, or
    /// `tf` presence disagrees with `free_tf`.
    pub fn pack<T: Real>(&self, traj: &Trajectory<T>) -> Vec<T> {
        assert_eq!(traj.states.len(), self.nodes());
        assert_eq!(traj.controls.len(), self.nodes());
        assert_eq!(traj.tf.is_some(), self.free_tf);
        let mut z = Vec::with_capacity(self.len());
        for (x, u) in traj.states.iter().zip(&traj.controls) {
            assert_eq!(x.len(), self.p);
            assert_eq!(u.len(), self.q);
            z.extend_from_slice(x);
            z.extend_from_slice(u);
        }
        z.extend(traj.tf);
        z
    }

    /// # Panics
    /// When `z.len()` differs from [`DecisionLayout::len`].
    pub fn unpack<T: Real>(&self, z: &[T]) -> Trajectory<T> {
        assert_eq!(z.len(), self.len());
        Trajectory {
            states: (0..self.nodes()).map(|i| self.state(z, i).to_vec()).collect(),
            controls: (0..self.nodes()).map(|i| self.control(z, i).to_vec()).collect(),
            tf: self.tf_index().map(|k| z[k]),
        }
    }

    /// `I_{n+1} ⊗ R` with `R = [I_p | 0]`, extended by a zero column for `t_f`.
    pub fn state_selector<T: Real>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.nodes() * self.p, self.len());
        for i in 0..self.nodes() {
            for k in 0..self.p {
                m[(i * self.p + k, self.state_offset(i) + k)] = T::one();
            }
        }
        m
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscribeError {
    #[error("integration matrix has n = {matrix}, quadrature weights have n = {weights}")]
    NodeCountMismatch { matrix: usize, weights: usize },
    #[error("simpson requires even n, got n = {0}")]
    OddSimpson(usize),
    #[error("invalid problem: {0}")]
    Invalid(ValidationReport),
}

/// Worst central-difference deviation of one derivative evaluator.
#[derive(Clone, Debug, PartialEq)]
pub struct FdBlock {
    pub name: &'static str,
    /// `|a − d| / max(1, |a|, |d|)` for analytic `a` and difference `d`.
    pub max_deviation: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub blocks: Vec<FdBlock>,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_deviation))
    }

    pub fn block(&self, name: &str) -> Option<&FdBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct TranscribedNlp<T: Real> {
    scaled: ScaledFocp<T>,
    layout: DecisionLayout,
    matrix: FracIntegrationMatrix<T>,
    weights: QuadratureWeights<T>,
    tau: Vec<T>,
    r1: usize,
    r2: usize,
}

fn check_len<T: Real>(what: &'static str, node: usize, v: &[T], len: usize) -> Result<(), EvalError> {
    if v.len() != len {
        return Err(EvalError::Shape { what, node, expected: (len, 1), got: (v.len(), 1) });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite { what, node });
    }
    Ok(())
}

fn check_scalar<T: Real>(what: &'static str, node: usize, v: T) -> Result<(), EvalError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(EvalError::NonFinite { what, node })
    }
}

fn check_mat<T: Real>(what: &'static str, node: usize, m: &Matrix<T>, shape: (usize, usize)) -> Result<(), EvalError> {
    if m.shape() != shape {
        return Err(EvalError::Shape { what, node, expected: shape, got: m.shape() });
    }
    if !m.is_finite() {
        return Err(EvalError::NonFinite { what, node });
    }
    Ok(())
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

impl<T: Real> TranscribedNlp<T> {
    pub fn build(
        scaled: ScaledFocp<T>,
        matrix: FracIntegrationMatrix<T>,
        weights: QuadratureWeights<T>,
    ) -> Result<Self, TranscribeError> {
        if matrix.n != weights.n {
            return Err(TranscribeError::NodeCountMismatch { matrix: matrix.n, weights: weights.n });
        }
        let simpson = matrix.scheme == Scheme::Si || weights.rule == QuadratureRule::Simpson;
        if simpson && matrix.n % 2 == 1 {
            return Err(TranscribeError::OddSimpson(matrix.n));
        }
        let report = scaled.problem().validate();
        if !report.is_ok() {
            return Err(TranscribeError::Invalid(report));
        }
        let prob = scaled.problem();
        let layout = DecisionLayout::new(prob.state_dim, prob.control_dim, matrix.n, prob.final_time.is_free());
        let tau = (0..=matrix.n).map(|i| matrix.node(i)).collect();
        let (r1, r2) = (prob.terminal_dim, prob.path_dim);
        Ok(Self { scaled, layout, matrix, weights, tau, r1, r2 })
    }

    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &FracIntegrationMatrix<T> {
        &self.matrix
    }

    pub fn weights(&self) -> &QuadratureWeights<T> {
        &self.weights
    }

    pub fn scaled(&self) -> &ScaledFocp<T> {
        &self.scaled
    }

    pub fn nodes_tau(&self) -> &[T] {
        &self.tau
    }

    /// The horizon encoded in `z`, or the fixed one.
    pub fn final_time(&self, z: &[T]) -> T {
        match self.scaled.problem().final_time {
            FinalTime::Fixed(tf) => tf,
            FinalTime::Free { .. } => z[z.len() - 1],
        }
    }

    /// States held at `x₀`, controls at zero (projected onto their bounds), and
    /// `t_f` at its guess.
    pub fn default_guess(&self) -> Vec<T> {
        let prob = self.scaled.problem();
        let u: Vec<T> = match &prob.control_bounds {
            Some(b) => b.lower.iter().zip(&b.upper).map(|(&l, &h)| T::zero().max(l).min(h)).collect(),
            None => vec![T::zero(); self.layout.q],
        };
        let traj = Trajectory {
            states: vec![prob.x0.clone(); self.layout.nodes()],
            controls: vec![u; self.layout.nodes()],
            tf: self.layout.free_tf.then(|| prob.final_time.nominal()),
        };
        self.layout.pack(&traj)
    }

    fn check_z(&self, z: &[T]) -> Result<(), EvalError> {
        if z.len() != self.layout.len() {
            return Err(EvalError::Length { expected: self.layout.len(), got: z.len() });
        }
        Ok(())
    }

    pub fn objective(&self, z: &[T]) -> Result<T, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let n = l.n;
        let mayer = self.scaled.mayer(tf, l.state(z, n));
        check_scalar("mayer", n, mayer)?;
        let mut total = mayer;
        for i in 0..=n {
            let g = self.scaled.cost_integrand(l.state(z, i), l.control(z, i), self.tau[i], tf);
            check_scalar("lagrangian", i, g)?;
            total = total + self.weights.w[i] * g;
        }
        Ok(total)
    }

    pub fn objective_gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let (p, q, n) = (l.p, l.q, l.n);
        let mut grad = vec![T::zero(); l.len()];
        let mut d_tf = T::zero();
        for i in 0..=n {
            let gp = self.scaled.cost_integrand_partials(l.state(z, i), l.control(z, i), self.tau[i], tf);
            check_len("lagrangian_partials.x", i, &gp.x, p)?;
            check_len("lagrangian_partials.u", i, &gp.u, q)?;
            check_scalar("lagrangian_partials.t", i, gp.tf)?;
            let w = self.weights.w[i];
            for k in 0..p {
                grad[l.state_offset(i) + k] = w * gp.x[k];
            }
            for k in 0..q {
                grad[l.control_offset(i) + k] = w * gp.u[k];
            }
            d_tf = d_tf + w * gp.tf;
        }
        let hp = self.scaled.mayer_partials(tf, l.state(z, n));
        check_len("mayer_partials.x", n, &hp.x, p)?;
        check_scalar("mayer_partials.t", n, hp.t)?;
        for k in 0..p {
            let idx = l.state_offset(n) + k;
            grad[idx] = grad[idx] + hp.x[k];
        }
        if let Some(k) = l.tf_index() {
            grad[k] = d_tf + hp.t;
        }
        Ok(grad)
    }

    fn stacked_dynamics(&self, z: &[T], tf: T) -> Result<Vec<T>, EvalError> {
        let l = &self.layout;
        let mut f = Vec::with_capacity(l.nodes() * l.p);
        for i in 0..=l.n {
            let fi = self.scaled.dynamics(l.state(z, i), l.control(z, i), self.tau[i], tf);
            check_len("dynamics", i, &fi, l.p)?;
            f.extend(fi);
        }
        Ok(f)
    }

    pub(crate) fn dynamics_node_partials(
        &self,
        z: &[T],
        tf: T,
    ) -> Result<Vec<crate::problem::ScaledVectorPartials<T>>, EvalError> {
        let l = &self.layout;
        (0..=l.n)
            .map(|i| {
                let d = self.scaled.dynamics_partials(l.state(z, i), l.control(z, i), self.tau[i], tf);
                check_mat("dynamics_partials.x", i, &d.x, (l.p, l.p))?;
                check_mat("dynamics_partials.u", i, &d.u, (l.p, l.q))?;
                check_len("dynamics_partials.t", i, &d.tf, l.p)?;
                Ok(d)
            })
            .collect()
    }

    /// Collocated integral-form dynamics residual, length `(n+1)p`.
    pub fn dynamics_residual(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let f = self.stacked_dynamics(z, tf)?;
        let wf = kron_identity_mul(&self.matrix.entries, l.p, &f);
        let x0 = &self.scaled.problem().x0;
        let mut c = Vec::with_capacity(wf.len());
        for i in 0..=l.n {
            let x = l.state(z, i);
            for k in 0..l.p {
                c.push(x[k] - x0[k] - wf[i * l.p + k]);
            }
        }
        Ok(c)
    }

    /// Dense `(n+1)p × N` Jacobian of [`TranscribedNlp::dynamics_residual`].
    pub fn dynamics_jacobian(&self, z: &[T]) -> Result<Matrix<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let (p, q) = (l.p, l.q);
        let parts = self.dynamics_node_partials(z, tf)?;
        let mut jac = l.state_selector::<T>();
        let w = &self.matrix.entries;
        for i in 0..=l.n {
            for (j, d) in parts.iter().enumerate() {
                let wij = w[(i, j)];
                if wij == T::zero() {
                    continue;
                }
                for r in 0..p {
                    let row = i * p + r;
                    for c in 0..p {
                        let col = l.state_offset(j) + c;
                        jac[(row, col)] = jac[(row, col)] - wij * d.x[(r, c)];
                    }
                    for c in 0..q {
                        let col = l.control_offset(j) + c;
                        jac[(row, col)] = jac[(row, col)] - wij * d.u[(r, c)];
                    }
                }
            }
        }
        if let Some(k) = l.tf_index() {
            let ftf: Vec<T> = parts.iter().flat_map(|d| d.tf.iter().copied()).collect();
            let col = kron_identity_mul(w, p, &ftf);
            for (row, v) in col.into_iter().enumerate() {
                jac[(row, k)] = -v;
            }
        }
        Ok(jac)
    }

    /// `∇c(z)ᵀ v` without forming the Jacobian.
    pub fn dynamics_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let (p, q) = (l.p, l.q);
        let parts = self.dynamics_node_partials(z, tf)?;
        let y = kron_identity_tr_mul(&self.matrix.entries, p, v);
        let mut out = vec![T::zero(); l.len()];
        let mut d_tf = T::zero();
        for (j, d) in parts.iter().enumerate() {
            let yj = &y[j * p..(j + 1) * p];
            let vj = &v[j * p..(j + 1) * p];
            for c in 0..p {
                let s = (0..p).fold(T::zero(), |s, r| s + d.x[(r, c)] * yj[r]);
                out[l.state_offset(j) + c] = vj[c] - s;
            }
            for c in 0..q {
                let s = (0..p).fold(T::zero(), |s, r| s + d.u[(r, c)] * yj[r]);
                out[l.control_offset(j) + c] = -s;
            }
            d_tf = d_tf + (0..p).fold(T::zero(), |s, r| s + d.tf[r] * yj[r]);
        }
        if let Some(k) = l.tf_index() {
            out[k] = -d_tf;
        }
        Ok(out)
    }

    pub fn terminal_residual(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let n = self.layout.n;
        let psi = self.scaled.terminal(self.layout.state(z, n), tf);
        check_len("terminal", n, &psi, self.r1)?;
        Ok(psi)
    }

    /// Dense `r1 × N` Jacobian of [`TranscribedNlp::terminal_residual`].
    pub fn terminal_jacobian(&self, z: &[T]) -> Result<Matrix<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let tp = self.scaled.terminal_partials(l.state(z, l.n), tf);
        check_mat("terminal_partials.x", l.n, &tp.x, (self.r1, l.p))?;
        check_len("terminal_partials.t", l.n, &tp.t, self.r1)?;
        let mut jac = Matrix::zeros(self.r1, l.len());
        for r in 0..self.r1 {
            for c in 0..l.p {
                jac[(r, l.state_offset(l.n) + c)] = tp.x[(r, c)];
            }
            if let Some(k) = l.tf_index() {
                jac[(r, k)] = tp.t[r];
            }
        }
        Ok(jac)
    }

    pub fn terminal_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        Ok(self.terminal_jacobian(z)?.tr_mul_vec(v))
    }

    /// Stacked path constraints, length `(n+1) r2`.
    pub fn path_residual(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let tf = self.final_time(z);
        let l = &self.layout;
        let mut out = Vec::with_capacity(l.nodes() * self.r2);
        if self.r2 == 0 {
            return Ok(out);
        }
        for i in 0..=l.n {
            let phi = self.scaled.path(l.state(z, i), l.control(z, i), self.tau[i], tf);
            check_len("path", i, &phi, self.r2)?;
            out.extend(phi);
        }
        Ok(out)
    }

    fn path_node_partials(
        &self,
        z: &[T],
        tf: T,
    ) -> Result<Vec<crate::problem::ScaledVectorPartials<T>>, EvalError> {
        let l = &self.layout;
        (0..=l.n)
            .map(|i| {
                let d = self.scaled.path_partials(l.state(z, i), l.control(z, i), self.tau[i], tf);
                check_mat("path_partials.x", i, &d.x, (self.r2, l.p))?;
                check_mat("path_partials.u", i, &d.u, (self.r2, l.q))?;
                check_len("path_partials.t", i, &d.tf, self.r2)?;
                Ok(d)
            })
            .collect()
    }

    /// Dense block-diagonal `(n+1) r2 × N` Jacobian of the path constraints.
    pub fn path_jacobian(&self, z: &[T]) -> Result<Matrix<T>, EvalError> {
        self.check_z(z)?;
        let l = &self.layout;
        let r2 = self.r2;
        let mut jac = Matrix::zeros(l.nodes() * r2, l.len());
        if r2 == 0 {
            return Ok(jac);
        }
        let parts = self.path_node_partials(z, self.final_time(z))?;
        for (i, d) in parts.iter().enumerate() {
            for r in 0..r2 {
                let row = i * r2 + r;
                for c in 0..l.p {
                    jac[(row, l.state_offset(i) + c)] = d.x[(r, c)];
                }
                for c in 0..l.q {
                    jac[(row, l.control_offset(i) + c)] = d.u[(r, c)];
                }
                if let Some(k) = l.tf_index() {
                    jac[(row, k)] = d.tf[r];
                }
            }
        }
        Ok(jac)
    }

    pub fn path_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.check_z(z)?;
        let l = &self.layout;
        let r2 = self.r2;
        let mut out = vec![T::zero(); l.len()];
        if r2 == 0 {
            return Ok(out);
        }
        let parts = self.path_node_partials(z, self.final_time(z))?;
        let mut d_tf = T::zero();
        for (i, d) in parts.iter().enumerate() {
            let vi = &v[i * r2..(i + 1) * r2];
            for c in 0..l.p {
                out[l.state_offset(i) + c] = (0..r2).fold(T::zero(), |s, r| s + d.x[(r, c)] * vi[r]);
            }
            for c in 0..l.q {
                out[l.control_offset(i) + c] = (0..r2).fold(T::zero(), |s, r| s + d.u[(r, c)] * vi[r]);
            }
            d_tf = d_tf + (0..r2).fold(T::zero(), |s, r| s + d.tf[r] * vi[r]);
        }
        if let Some(k) = l.tf_index() {
            out[k] = d_tf;
        }
        Ok(out)
    }

    /// Central-difference check of the gradient and every Jacobian, with step
    /// `step · (1 + |z_k|)` per column.
    pub fn fd_check(&self, z: &[T], step: f64) -> Result<FdReport, EvalError> {
        self.check_z(z)?;
        let grad = self.objective_gradient(z)?;
        let grad = Matrix::from_row_major(1, grad.len(), grad);
        let blocks = [
            ("gradient", grad),
            ("dynamics", self.dynamics_jacobian(z)?),
            ("terminal", self.terminal_jacobian(z)?),
            ("path", self.path_jacobian(z)?),
        ];
        type Eval<'a, T> = Box<dyn Fn(&[T]) -> Result<Vec<T>, EvalError> + 'a>;
        let evals: [Eval<'_, T>; 4] = [
            Box::new(|x| self.objective(x).map(|v| vec![v])),
            Box::new(|x| self.dynamics_residual(x)),
            Box::new(|x| self.terminal_residual(x)),
            Box::new(|x| self.path_residual(x)),
        ];
        let mut report = FdReport { blocks: Vec::new() };
        for ((name, analytic), eval) in blocks.into_iter().zip(evals.iter()) {
            let mut worst = FdBlock { name, max_deviation: 0.0, row: 0, col: 0 };
            let mut zz = z.to_vec();
            for k in 0..z.len() {
                if analytic.rows() == 0 {
                    break;
                }
                let zk = z[k].to_f64().unwrap_or(f64::NAN);
                let d = T::lit(step * (1.0 + zk.abs()));
                zz[k] = z[k] + d;
                let plus = eval(&zz)?;
                zz[k] = z[k] - d;
                let minus = eval(&zz)?;
                zz[k] = z[k];
                let two_d = (d + d).to_f64().unwrap_or(f64::NAN);
                for r in 0..analytic.rows() {
                    let fd = (plus[r] - minus[r]).to_f64().unwrap_or(f64::NAN) / two_d;
                    let a = analytic[(r, k)].to_f64().unwrap_or(f64::NAN);
                    let dev = rel_dev(a, fd);
                    if !(dev <= worst.max_deviation) {
                        worst = FdBlock { name, max_deviation: dev, row: r, col: k };
                    }
                }
            }
            report.blocks.push(worst);
        }
        Ok(report)
    }

    /// Writes `dynamics_residual.csv`, `dynamics_jacobian.csv` and
    /// `objective_gradient.csv` into `dir`.
    pub fn write_debug_csv(&self, z: &[T], dir: &Path) -> std::io::Result<()> {
        let to_io = std::io::Error::other;
        let column = |v: &[T]| {
            let mut s = String::new();
            for &x in v {
                let _ = writeln!(s, "{}", format_sig17(x));
            }
            s
        };
        let c = self.dynamics_residual(z).map_err(to_io)?;
        let g = self.objective_gradient(z).map_err(to_io)?;
        let j = self.dynamics_jacobian(z).map_err(to_io)?;
        let mut jac = String::new();
        for r in 0..j.rows() {
            let row: Vec<String> = j.row(r).iter().map(|&x| format_sig17(x)).collect();
            let _ = writeln!(jac, "{}", row.join(","));
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("dynamics_residual.csv"), column(&c))?;
        std::fs::write(dir.join("objective_gradient.csv"), column(&g))?;
        std::fs::write(dir.join("dynamics_jacobian.csv"), jac)
    }
}

impl<T: Real> NlpProblem<T> for TranscribedNlp<T> {
    fn num_vars(&self) -> usize {
        self.layout.len()
    }

    /// Dynamics residual followed by terminal conditions.
    fn num_eq(&self) -> usize {
        self.layout.nodes() * self.layout.p + self.r1
    }

    fn num_ineq(&self) -> usize {
        self.layout.nodes() * self.r2
    }

    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let l = &self.layout;
        let mut lo = vec![T::neg_infinity(); l.len()];
        let mut hi = vec![T::infinity(); l.len()];
        let prob = self.scaled.problem();
        if let Some(b) = &prob.control_bounds {
            for i in 0..l.nodes() {
                for k in 0..l.q {
                    lo[l.control_offset(i) + k] = b.lower[k];
                    hi[l.control_offset(i) + k] = b.upper[k];
                }
            }
        }
        if let (Some(k), FinalTime::Free { lower, upper, .. }) = (l.tf_index(), &prob.final_time) {
            lo[k] = *lower;
            hi[k] = upper.unwrap_or(T::infinity());
        }
        (lo, hi)
    }

    fn objective(&self, z: &[T]) -> Result<T, EvalError> {
        TranscribedNlp::objective(self, z)
    }

    fn gradient(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.objective_gradient(z)
    }

    fn eq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        let mut c = self.dynamics_residual(z)?;
        c.extend(self.terminal_residual(z)?);
        Ok(c)
    }

    fn ineq_constraints(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        self.path_residual(z)
    }

    fn eq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        let m = self.layout.nodes() * self.layout.p;
        let mut out = self.dynamics_jacobian_tr_mul(z, &v[..m])?;
        if self.r1 > 0 {
            let t = self.terminal_jacobian_tr_mul(z, &v[m..])?;
            out.iter_mut().zip(&t).for_each(|(a, b)| *a = *a + *b);
        }
        Ok(out)
    }

    fn ineq_jacobian_tr_mul(&self, z: &[T], v: &[T]) -> Result<Vec<T>, EvalError> {
        self.path_jacobian_tr_mul(z, v)
    }
}
