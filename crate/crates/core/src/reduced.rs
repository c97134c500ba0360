//! State elimination for a transcribed program.
//!
//! `W` is lower triangular, so row `i` of `c(z) = 0` reads
//!
//! ```text
//! x_i − W_ii f̃(x_i, u_i) = x₀ + Σ_{j<i} W_ij f̃(x_j, u_j)
//! ```
//!
//! and the states follow from the controls (and `t_f`) by one small implicit
//! solve per node. What remains is a program in `v = [u₀, …, u_n, (t_f)]` with
//! the terminal conditions as equalities and the path constraints as
//! inequalities. Derivatives use one adjoint back-substitution per product:
//! if `c_xᵀ λ = w_x` then the reduced gradient of `w` is `w_v − c_vᵀ λ`.

use crate::error::EvalError;
use crate::linalg::{norm_inf, solve_dense, Matrix};
use crate::nlp::{kkt_residual, NlpProblem, NlpSolution};
use crate::problem::FinalTime;
use crate::scalar::Real;
use crate::transcribe::TranscribedNlp;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("integration matrix couples node 0 to later nodes")]
pub struct NotLowerTriangular;

/// A [`TranscribedNlp`] with the collocated dynamics solved for the states.
pub struct ReducedNlp<T: Real> {
    full: TranscribedNlp<T>,
    /// Consecutive node ranges `[a, b]` whose rows reference no node after `b`;
    /// singletons for GL and TR, pairs `{2k+1, 2k+2}` for SI.
    groups: Vec<(usize, usize)>,
    /// Last `(v, z)` pair; most evaluations at one point share the state solve.
    cache: Mutex<Option<(Vec<T>, Vec<T>)>>,
}

fn identity_minus<T: Real>(size: usize, f: impl Fn(usize, usize) -> T) -> Matrix<T> {
    Matrix::from_fn(size, size, |r, c| if r == c { T::one() } else { T::zero() } - f(r, c))
}

impl<T: Real> ReducedNlp<T> {
    /// Fails when row 0 of `W` is not zero, i.e. `x_0` is not pinned to `x₀`.
    pub fn new(full: TranscribedNlp<T>) -> Result<Self, NotLowerTriangular> {
        let w = &full.matrix().entries;
        if w.row(0).iter().any(|&v| v != T::zero()) {
            return Err(NotLowerTriangular);
        }
        let last_col = |i: usize| w.row(i).iter().rposition(|&v| v != T::zero()).unwrap_or(0);
        let n = w.rows() - 1;
        let mut groups = Vec::new();
        let mut a = 1;
        while a <= n {
            let mut b = a;
            let mut i = a;
            while i <= b {
                b = b.max(last_col(i));
                i += 1;
            }
            groups.push((a, b));
            a = b + 1;
        }
        Ok(Self { full, groups, cache: Mutex::new(None) })
    }

    pub fn full(&self) -> &TranscribedNlp<T> {
        &self.full
    }

    pub fn into_full(self) -> TranscribedNlp<T> {
        self.full
    }

    /// Controls and `t_f` of a full decision vector.
    pub fn restrict(&self, z: &[T]) -> Vec<T> {
        let l = self.full.layout();
        let mut v = Vec::with_capacity(self.num_vars());
        for i in 0..l.nodes() {
            v.extend_from_slice(l.control(z, i));
        }
        if let Some(k) = l.tf_index() {
            v.push(z[k]);
        }
        v
    }

    /// The full decision vector whose states satisfy the collocated dynamics.
    pub fn expand(&self, v: &[T]) -> Result<Vec<T>, EvalError> {
        if v.len() != self.num_vars() {
            return Err(EvalError::Length { expected: self.num_vars(), got: v.len() });
        }
        if let Some((cv, cz)) = self.cache.lock().expect("cache lock").as_ref() {
            if cv.as_slice() == v {
                return Ok(cz.clone());
            }
        }
        let z = self.solve_states(v)?;
        *self.cache.lock().expect("cache lock") = Some((v.to_vec(), z.clone()));
        Ok(z)
    }

    fn final_time(&self, v: &[T]) -> T {
        match self.full.scaled().problem().final_time {
            FinalTime::Fixed(tf) => tf,
            FinalTime::Free { .. } => v[v.len() - 1],
        }
    }

    fn node_dynamics(&self, z: &[T], x: &[T], i: usize, tf: T) -> Result<Vec<T>, EvalError> {
        let l = self.full.layout();
        let f = self.full.scaled().dynamics(x, l.control(z, i), self.full.nodes_tau()[i], tf);
        if f.len() != l.p {
            return Err(EvalError::Shape { what: "dynamics", node: i, expected: (l.p, 1), got: (f.len(), 1) });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite { what: "dynamics", node: i });
        }
        Ok(f)
    }

    fn solve_states(&self, v: &[T]) -> Result<Vec<T>, EvalError> {
        let l = *self.full.layout();
        let (p, q) = (l.p, l.q);
        let tf = self.final_time(v);
        let w = &self.full.matrix().entries;
        let x0 = self.full.scaled().problem().x0.clone();
        let mut z = vec![T::zero(); l.len()];
        for i in 0..l.nodes() {
            z[l.control_offset(i)..l.control_offset(i) + q].copy_from_slice(&v[i * q..(i + 1) * q]);
        }
        if let Some(k) = l.tf_index() {
            z[k] = tf;
        }
        z[l.state_offset(0)..l.state_offset(0) + p].copy_from_slice(&x0);
        let mut fs: Vec<T> = Vec::with_capacity(l.nodes() * p);
        fs.extend(self.node_dynamics(&z, &x0, 0, tf)?);
        for &(a, b) in &self.groups {
            let mut hist = Vec::with_capacity((b - a + 1) * p);
            for i in a..=b {
                let mut h = x0.clone();
                for j in 0..a {
                    let wij = w[(i, j)];
                    if wij != T::zero() {
                        h.iter_mut().zip(&fs[j * p..(j + 1) * p]).for_each(|(h, &f)| *h = *h + wij * f);
                    }
                }
                hist.extend(h);
            }
            let prev = z[l.state_offset(a - 1)..l.state_offset(a - 1) + p].to_vec();
            let guess: Vec<T> = (a..=b).flat_map(|_| prev.iter().copied()).collect();
            let xs = self.newton(a, b, guess, &hist, tf, &z)?;
            for (k, i) in (a..=b).enumerate() {
                let x = &xs[k * p..(k + 1) * p];
                z[l.state_offset(i)..l.state_offset(i) + p].copy_from_slice(x);
            }
            for i in a..=b {
                let x = z[l.state_offset(i)..l.state_offset(i) + p].to_vec();
                fs.extend(self.node_dynamics(&z, &x, i, tf)?);
            }
        }
        Ok(z)
    }

    /// Damped Newton on `x_i − hist_i − Σ_{j∈[a,b]} W_ij f̃(x_j) = 0`, `i ∈ [a, b]`.
    fn newton(&self, a: usize, b: usize, mut x: Vec<T>, hist: &[T], tf: T, z: &[T]) -> Result<Vec<T>, EvalError> {
        let l = *self.full.layout();
        let p = l.p;
        let m = (b - a + 1) * p;
        let w = &self.full.matrix().entries;
        let scaled = self.full.scaled();
        let tau = self.full.nodes_tau();
        let tol = T::lit(4.0) * T::epsilon();
        let fail = EvalError::StateSolve { node: a };
        let residual = |x: &[T], z: &[T]| -> Option<(Vec<T>, T)> {
            let mut fs = Vec::with_capacity(m);
            for (k, j) in (a..=b).enumerate() {
                let f = scaled.dynamics(&x[k * p..(k + 1) * p], l.control(z, j), tau[j], tf);
                if f.len() != p || f.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                fs.extend(f);
            }
            // magnitude of the terms, for a roundoff floor on |g|
            let mut size = norm_inf(x).max(norm_inf(hist));
            let mut g = Vec::with_capacity(m);
            for (ki, i) in (a..=b).enumerate() {
                for r in 0..p {
                    let mut s = T::zero();
                    for (kj, j) in (a..=b).enumerate() {
                        s = s + w[(i, j)] * fs[kj * p + r];
                    }
                    size = size.max(s.abs());
                    g.push(x[ki * p + r] - hist[ki * p + r] - s);
                }
            }
            Some((g, size))
        };
        let (mut g, mut size) = residual(&x, z).ok_or(fail.clone())?;
        for _ in 0..100 {
            let gn = norm_inf(&g);
            if gn <= tol * size {
                return Ok(x);
            }
            let parts: Vec<Matrix<T>> = (a..=b)
                .enumerate()
                .map(|(k, j)| scaled.dynamics_partials(&x[k * p..(k + 1) * p], l.control(z, j), tau[j], tf).x)
                .collect();
            let jac = identity_minus(m, |row, col| {
                let (i, r) = (a + row / p, row % p);
                let (kj, c) = (col / p, col % p);
                w[(i, a + kj)] * parts[kj][(r, c)]
            });
            let dx = solve_dense(jac, g.iter().map(|&v| -v).collect()).ok_or(fail.clone())?;
            let small = norm_inf(&dx) <= tol * (T::one() + norm_inf(&x));
            let mut t = T::one();
            let mut next = None;
            for _ in 0..40 {
                let xt: Vec<T> = x.iter().zip(&dx).map(|(&a, &b)| a + t * b).collect();
                if let Some((gt, st)) = residual(&xt, z) {
                    if small || norm_inf(&gt) < gn {
                        next = Some((xt, gt, st));
                        break;
                    }
                }
                t = t * T::lit(0.5);
            }
            let Some((xt, gt, st)) = next else {
                // no decrease left: accept only a residual at the roundoff level
                return if gn <= T::lit(64.0) * tol * size { Ok(x) } else { Err(fail) };
            };
            x = xt;
            g = gt;
            size = st;
            if small {
                return Ok(x);
            }
        }
        Err(fail)
    }

    /// Solves `c_xᵀ λ = w_x` by block back-substitution over the node groups.
    fn adjoint(&self, z: &[T], w_full: &[T]) -> Result<Vec<T>, EvalError> {
        let l = *self.full.layout();
        let p = l.p;
        let tf = self.full.final_time(z);
        let parts = self.full.dynamics_node_partials(z, tf)?;
        let w = &self.full.matrix().entries;
        let mut lambda = vec![T::zero(); l.nodes() * p];
        // acc_j = Σ_i W_ij λ_i over the groups already solved
        let mut acc = vec![T::zero(); l.nodes() * p];
        let solve_group = |a: usize, b: usize, lambda: &mut Vec<T>, acc: &mut Vec<T>| -> Result<(), EvalError> {
            let m = (b - a + 1) * p;
            let rhs: Vec<T> = (0..m)
                .map(|row| {
                    let (j, c) = (a + row / p, row % p);
                    let aj = &parts[j].x;
                    let back = (0..p).fold(T::zero(), |s, r| s + aj[(r, c)] * acc[j * p + r]);
                    w_full[l.state_offset(j) + c] + back
                })
                .collect();
            // row (j, c), column (i, r): W_ij A_j[r, c]
            let mat = identity_minus(m, |row, col| {
                let (j, c) = (a + row / p, row % p);
                let (i, r) = (a + col / p, col % p);
                w[(i, j)] * parts[j].x[(r, c)]
            });
            let lg = solve_dense(mat, rhs).ok_or(EvalError::StateSolve { node: a })?;
            lambda[a * p..(b + 1) * p].copy_from_slice(&lg);
            for (k, i) in (a..=b).enumerate() {
                let li = &lg[k * p..(k + 1) * p];
                for jj in 0..a {
                    let wij = w[(i, jj)];
                    if wij != T::zero() {
                        acc[jj * p..(jj + 1) * p].iter_mut().zip(li).for_each(|(s, &v)| *s = *s + wij * v);
                    }
                }
            }
            Ok(())
        };
        for &(a, b) in self.groups.iter().rev() {
            solve_group(a, b, &mut lambda, &mut acc)?;
        }
        solve_group(0, 0, &mut lambda, &mut acc)?;
        Ok(lambda)
    }

    /// Total derivative, with respect to `v`, of a function whose full-space
    /// gradient at `z` is `w_full`.
    fn reduce(&self, z: &[T], w_full: &[T]) -> Result<Vec<T>, EvalError> {
        let lambda = self.adjoint(z, w_full)?;
        let jt = self.full.dynamics_jacobian_tr_mul(z, &lambda)?;
        let diff: Vec<T> = w_full.iter().zip(&jt).map(|(&a, &b)| a - b).collect();
        Ok(self.restrict(&diff))
    }

    /// Maps a solution of the reduced program to the full one.
    ///
    /// Dynamics multipliers come from the adjoint of the Lagrangian and the KKT
    /// residual is re-evaluated on the full program.
    pub fn lift(&self, sol: &NlpSolution<T>) -> Result<NlpSolution<T>, EvalError> {
        let z = self.expand(&sol.z)?;
        let mut w = self.full.objective_gradient(&z)?;
        if !sol.eq_multipliers.is_empty() {
            let t = self.full.terminal_jacobian_tr_mul(&z, &sol.eq_multipliers)?;
            w.iter_mut().zip(&t).for_each(|(a, b)| *a = *a + *b);
        }
        if !sol.ineq_multipliers.is_empty() {
            let t = self.full.path_jacobian_tr_mul(&z, &sol.ineq_multipliers)?;
            w.iter_mut().zip(&t).for_each(|(a, b)| *a = *a + *b);
        }
        let mut eq: Vec<T> = self.adjoint(&z, &w)?.into_iter().map(|v| -v).collect();
        eq.extend_from_slice(&sol.eq_multipliers);
        let kkt = kkt_residual(&self.full, &z, &eq, &sol.ineq_multipliers)?;
        Ok(NlpSolution {
            z,
            eq_multipliers: eq,
            ineq_multipliers: sol.ineq_multipliers.clone(),
            kkt_residual: kkt,
            objective: sol.objective,
            iterations: sol.iterations,
            inner_iterations: sol.inner_iterations,
            status: sol.status,
            history: sol.history.clone(),
            error: sol.error.clone(),
        })
    }
}

impl<T: Real> NlpProblem<T> for ReducedNlp<T> {
    fn num_vars(&self) -> usize {
        let l = self.full.layout();
        l.nodes() * l.q + usize::from(l.free_tf)
    }

    fn num_eq(&self) -> usize {
        self.full.scaled().problem().terminal_dim
    }

    fn num_ineq(&self) -> usize {
        self.full.layout().nodes() * self.full.scaled().problem().path_dim
    }

    fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let (lo, hi) = self.full.bounds();
        (self.restrict(&lo), self.restrict(&hi))
    }

    fn objective(&self, v: &[T]) -> Result<T, EvalError> {
        self.full.objective(&self.expand(v)?)
    }

    fn gradient(&self, v: &[T]) -> Result<Vec<T>, EvalError> {
        let z = self.expand(v)?;
        let w = self.full.objective_gradient(&z)?;
        self.reduce(&z, &w)
    }

    fn eq_constraints(&self, v: &[T]) -> Result<Vec<T>, EvalError> {
        self.full.terminal_residual(&self.expand(v)?)
    }

    fn ineq_constraints(&self, v: &[T]) -> Result<Vec<T>, EvalError> {
        self.full.path_residual(&self.expand(v)?)
    }

    fn eq_jacobian_tr_mul(&self, v: &[T], y: &[T]) -> Result<Vec<T>, EvalError> {
        if self.num_eq() == 0 {
            return Ok(vec![T::zero(); self.num_vars()]);
        }
        let z = self.expand(v)?;
        let w = self.full.terminal_jacobian_tr_mul(&z, y)?;
        self.reduce(&z, &w)
    }

    fn ineq_jacobian_tr_mul(&self, v: &[T], y: &[T]) -> Result<Vec<T>, EvalError> {
        if self.num_ineq() == 0 {
            return Ok(vec![T::zero(); self.num_vars()]);
        }
        let z = self.expand(v)?;
        let w = self.full.path_jacobian_tr_mul(&z, y)?;
        self.reduce(&z, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_example, ExampleId};
    use crate::fracint::{quad_weights, FracIntegrationMatrix, Scheme};

    fn reduced(id: ExampleId, scheme: Scheme, alpha: f64, n: usize) -> (ReducedNlp<f64>, Vec<f64>) {
        let ex = make_example(id, alpha);
        let m = FracIntegrationMatrix::new(scheme, alpha, n).unwrap();
        let w = quad_weights(scheme.quadrature_rule(), n).unwrap();
        let full = TranscribedNlp::build(ex.problem.rescale(), m, w).unwrap();
        let z0 = ex.initial_guess(&full);
        let r = ReducedNlp::new(full).unwrap();
        let v0 = r.restrict(&z0);
        (r, v0)
    }

    fn perturbed(v: &[f64], seed: u64) -> Vec<f64> {
        let mut s = seed;
        v.iter()
            .map(|&x| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                x + 0.05 * (((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5)
            })
            .collect()
    }

    #[test]
    fn expanded_states_satisfy_dynamics() {
        for id in ExampleId::ALL {
            for scheme in Scheme::ALL {
                let (r, v0) = reduced(id, scheme, 0.7, 16);
                let v = perturbed(&v0, 3);
                let z = r.expand(&v).unwrap();
                let c = r.full().dynamics_residual(&z).unwrap();
                let scale: f64 = 1.0 + norm_inf(&z);
                assert!(norm_inf(&c) <= 1e-13 * scale, "{id} {scheme:?}: {}", norm_inf(&c));
                assert_eq!(r.restrict(&z), v);
            }
        }
    }

    #[test]
    fn reduced_derivatives_match_finite_differences() {
        for id in ExampleId::ALL {
            for scheme in Scheme::ALL {
                let (r, v0) = reduced(id, scheme, 0.6, 12);
                let v = perturbed(&v0, 11);
                let g = r.gradient(&v).unwrap();
                let ye: Vec<f64> = (0..r.num_eq()).map(|k| 0.3 + k as f64).collect();
                let yi: Vec<f64> = (0..r.num_ineq()).map(|k| ((k as f64) * 0.7).sin()).collect();
                let je = r.eq_jacobian_tr_mul(&v, &ye).unwrap();
                let ji = r.ineq_jacobian_tr_mul(&v, &yi).unwrap();
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                for k in 0..v.len() {
                    let h = 1e-6 * (1.0 + v[k].abs());
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[k] += h;
                    vm[k] -= h;
                    let fd = (r.objective(&vp).unwrap() - r.objective(&vm).unwrap()) / (2.0 * h);
                    let tol = 1e-6 * (1.0 + g[k].abs().max(fd.abs()));
                    assert!((fd - g[k]).abs() <= tol * 10.0, "{id} {scheme:?} grad[{k}]: {fd} vs {}", g[k]);
                    let fde = (dot(&r.eq_constraints(&vp).unwrap(), &ye) - dot(&r.eq_constraints(&vm).unwrap(), &ye)) / (2.0 * h);
                    assert!((fde - je[k]).abs() <= 1e-5 * (1.0 + fde.abs()), "{id} {scheme:?} eq[{k}]: {fde} vs {}", je[k]);
                    let fdi = (dot(&r.ineq_constraints(&vp).unwrap(), &yi) - dot(&r.ineq_constraints(&vm).unwrap(), &yi)) / (2.0 * h);
                    assert!((fdi - ji[k]).abs() <= 1e-5 * (1.0 + fdi.abs()), "{id} {scheme:?} ineq[{k}]: {fdi} vs {}", ji[k]);
                }
            }
        }
    }
}
