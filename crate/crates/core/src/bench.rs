//! Benchmark problems, error norms and convergence studies.
//!
//! | id | problem | horizon |
//! |----|---------|---------|
//! | 1 | nonlinear problem with a Bessel-type exact solution (α = 1/2) | `t_f = 20` |
//! | 2 | free final time, control floor, circle avoidance, terminal circle | free |
//! | 3 | bang-bang double integrator, `0 ≤ u ≤ 1` | `t_f = 2` |
//! | 4 | HIV-immune system with drug efficacy `0 ≤ u ≤ 1` | `t_f = 500` |

use crate::error::EvalError;
use crate::fracint::{format_sig17, quad_weights, FracError, FracIntegrationMatrix, Scheme};
use crate::linalg::Matrix;
use crate::nlp::{
    solve, CountingProblem, EvalCounts, FiniteDifferenceProblem, NlpProblem, NlpSolution, SolverOptions, Status,
};
use crate::problem::{
    FinalTime, FocpModel, FocpProblem, MayerPartials, ScalarPartials, TerminalPartials, VectorPartials,
};
use crate::scalar::Real;
use crate::reduced::{NotLowerTriangular, ReducedNlp};
use crate::transcribe::{TranscribeError, TranscribedNlp, Trajectory};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub use crate::special::{bessel_j0, bessel_j1};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExampleId {
    Ex1Exact,
    Ex2FreeTime,
    Ex3BangBang,
    Ex4Hiv,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] =
        [ExampleId::Ex1Exact, ExampleId::Ex2FreeTime, ExampleId::Ex3BangBang, ExampleId::Ex4Hiv];

    pub fn number(self) -> u8 {
        match self {
            ExampleId::Ex1Exact => 1,
            ExampleId::Ex2FreeTime => 2,
            ExampleId::Ex3BangBang => 3,
            ExampleId::Ex4Hiv => 4,
        }
    }

    /// Program handed to the solver by default. The HIV model spans states of
    /// order 1e-3 to 1e3 with fast coupling, which stalls the full program.
    pub fn formulation(self) -> Formulation {
        match self {
            ExampleId::Ex4Hiv => Formulation::Reduced,
            _ => Formulation::Full,
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown example {0:?}, expected 1, 2, 3 or 4")]
pub struct UnknownExample(pub String);

impl FromStr for ExampleId {
    type Err = UnknownExample;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "ex1" | "exact" => Ok(ExampleId::Ex1Exact),
            "2" | "ex2" | "free-time" => Ok(ExampleId::Ex2FreeTime),
            "3" | "ex3" | "bang-bang" => Ok(ExampleId::Ex3BangBang),
            "4" | "ex4" | "hiv" => Ok(ExampleId::Ex4Hiv),
            _ => Err(UnknownExample(s.to_string())),
        }
    }
}

/// Closed-form state and control in original time.
pub trait ExactSolution: Send + Sync {
    fn state(&self, t: f64) -> Vec<f64>;
    fn control(&self, t: f64) -> Vec<f64>;
}

/// A benchmark problem together with its initial guess and, where known, its
/// exact solution.
#[derive(Clone)]
pub struct Example {
    pub id: ExampleId,
    pub problem: FocpProblem<f64>,
    pub exact: Option<Arc<dyn ExactSolution>>,
    guess: Guess,
}

#[derive(Clone, Debug)]
enum Guess {
    /// States interpolate linearly from `x₀` to the target; controls constant.
    Linear { target: Vec<f64>, control: Vec<f64> },
    /// States held at `x₀`; controls constant.
    Constant { state: Vec<f64>, control: Vec<f64>, tf: Option<f64> },
}

impl fmt::Debug for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Example")
            .field("id", &self.id)
            .field("problem", &self.problem)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl Example {
    /// Initial decision vector for a transcription of this example.
    pub fn initial_guess(&self, nlp: &TranscribedNlp<f64>) -> Vec<f64> {
        let layout = nlp.layout();
        let tau = nlp.nodes_tau();
        let traj = match &self.guess {
            Guess::Linear { target, control } => {
                let x0 = &self.problem.x0;
                Trajectory {
                    states: tau
                        .iter()
                        .map(|&s| x0.iter().zip(target).map(|(&a, &b)| a + s * (b - a)).collect())
                        .collect(),
                    controls: vec![control.clone(); layout.nodes()],
                    tf: None,
                }
            }
            Guess::Constant { state, control, tf } => Trajectory {
                states: vec![state.clone(); layout.nodes()],
                controls: vec![control.clone(); layout.nodes()],
                tf: *tf,
            },
        };
        layout.pack(&traj)
    }
}

/// Builds the benchmark problem `id` with fractional order `alpha`.
///
/// The exact solutions of examples 1 and 3 are optimal for `alpha = 0.5`.
pub fn make_example(id: ExampleId, alpha: f64) -> Example {
    match id {
        ExampleId::Ex1Exact => {
            let target = ex1_terminal();
            let problem = FocpProblem::new(1, 1, alpha, vec![1.0], FinalTime::Fixed(20.0), Arc::new(Ex1))
                .with_terminal_dim(1);
            Example {
                id,
                problem,
                exact: Some(Arc::new(Ex1Exact)),
                guess: Guess::Linear { target: vec![target], control: vec![0.0] },
            }
        }
        ExampleId::Ex2FreeTime => {
            let tf = FinalTime::Free { lower: 1e-3, upper: None, guess: 2.0 };
            let problem = FocpProblem::new(1, 1, alpha, vec![1.0], tf, Arc::new(Ex2))
                .with_terminal_dim(1)
                .with_path_dim(2);
            Example {
                id,
                problem,
                exact: None,
                guess: Guess::Constant { state: vec![1.0], control: vec![0.3], tf: Some(2.0) },
            }
        }
        ExampleId::Ex3BangBang => {
            let problem = FocpProblem::new(2, 1, alpha, vec![0.0, 1.0], FinalTime::Fixed(2.0), Arc::new(Ex3))
                .with_control_bounds(vec![0.0], vec![1.0]);
            Example {
                id,
                problem,
                exact: Some(Arc::new(Ex3Exact { alpha })),
                guess: Guess::Constant { state: vec![0.0, 1.0], control: vec![0.5], tf: None },
            }
        }
        ExampleId::Ex4Hiv => {
            let problem =
                FocpProblem::new(4, 1, alpha, HIV_X0.to_vec(), FinalTime::Fixed(HIV_FINAL_TIME), Arc::new(Hiv))
                    .with_control_bounds(vec![0.0], vec![1.0]);
            Example {
                id,
                problem,
                exact: None,
                guess: Guess::Constant { state: HIV_X0.to_vec(), control: vec![0.5], tf: None },
            }
        }
    }
}

fn m11(v: f64) -> Matrix<f64> {
    Matrix::from_row_major(1, 1, vec![v])
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `x(20) = 5 + sin(8√5)`.
pub fn ex1_terminal() -> f64 {
    5.0 + (8.0 * 5f64.sqrt()).sin()
}

/// `J₁(y)/y`, finite at the origin.
fn j1_over_x(y: f64) -> f64 {
    if y < 1.0 {
        let q = -0.25 * y * y;
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 1..20 {
            let kf = k as f64;
            term *= q / (kf * (kf + 1.0));
            sum += term;
        }
        sum
    } else {
        bessel_j1(y) / y
    }
}

struct Ex1;

impl Ex1 {
    /// `1 − e² + u − 2√π J₀(4√t)` with `e = x − 0.01t² − 1`.
    fn residual(x: f64, u: f64, t: f64) -> (f64, f64) {
        let e = x - 0.01 * t * t - 1.0;
        (1.0 - e * e + u - 2.0 * SQRT_PI * bessel_j0(4.0 * t.max(0.0).sqrt()), e)
    }
}

impl FocpModel<f64> for Ex1 {
    fn dynamics(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let e = x[0] - 0.01 * t * t - 1.0;
        vec![-e * e + u[0] + 1.0 + 2.0 * t.max(0.0).powf(1.5) / (75.0 * SQRT_PI)]
    }

    fn dynamics_partials(&self, x: &[f64], _u: &[f64], t: f64) -> VectorPartials<f64> {
        let e = x[0] - 0.01 * t * t - 1.0;
        VectorPartials {
            x: m11(-2.0 * e),
            u: m11(1.0),
            t: vec![0.04 * t * e + t.max(0.0).sqrt() / (25.0 * SQRT_PI)],
        }
    }

    fn lagrangian(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        let (r, _) = Ex1::residual(x[0], u[0], t);
        r * r
    }

    fn lagrangian_partials(&self, x: &[f64], u: &[f64], t: f64) -> ScalarPartials<f64> {
        let (r, e) = Ex1::residual(x[0], u[0], t);
        // d/dt J₀(4√t) = −8 J₁(y)/y with y = 4√t
        let dj0 = -8.0 * j1_over_x(4.0 * t.max(0.0).sqrt());
        let rt = 0.04 * t * e - 2.0 * SQRT_PI * dj0;
        ScalarPartials { x: vec![-4.0 * r * e], u: vec![2.0 * r], t: 2.0 * r * rt }
    }

    fn terminal(&self, x: &[f64], _tf: f64) -> Vec<f64> {
        vec![x[0] - ex1_terminal()]
    }

    fn terminal_partials(&self, _x: &[f64], _tf: f64) -> TerminalPartials<f64> {
        TerminalPartials { x: m11(1.0), t: vec![0.0] }
    }
}

struct Ex1Exact;

impl ExactSolution for Ex1Exact {
    fn state(&self, t: f64) -> Vec<f64> {
        vec![(4.0 * t.sqrt()).sin() + 0.01 * t * t + 1.0]
    }

    fn control(&self, t: f64) -> Vec<f64> {
        let y = 4.0 * t.sqrt();
        vec![-y.cos().powi(2) + 2.0 * SQRT_PI * bessel_j0(y)]
    }
}

struct Ex2;

impl FocpModel<f64> for Ex2 {
    fn dynamics(&self, x: &[f64], u: &[f64], _t: f64) -> Vec<f64> {
        vec![-x[0] + u[0]]
    }

    fn dynamics_partials(&self, _x: &[f64], _u: &[f64], _t: f64) -> VectorPartials<f64> {
        VectorPartials { x: m11(-1.0), u: m11(1.0), t: vec![0.0] }
    }

    fn lagrangian(&self, x: &[f64], u: &[f64], _t: f64) -> f64 {
        0.5 * (x[0] * x[0] + u[0] * u[0])
    }

    fn lagrangian_partials(&self, x: &[f64], u: &[f64], _t: f64) -> ScalarPartials<f64> {
        ScalarPartials { x: vec![x[0]], u: vec![u[0]], t: 0.0 }
    }

    fn terminal(&self, x: &[f64], tf: f64) -> Vec<f64> {
        vec![(x[0] - 0.2).powi(2) + (tf - 2.0).powi(2) - 0.04]
    }

    fn terminal_partials(&self, x: &[f64], tf: f64) -> TerminalPartials<f64> {
        TerminalPartials { x: m11(2.0 * (x[0] - 0.2)), t: vec![2.0 * (tf - 2.0)] }
    }

    /// `0.2 − u ≤ 0` and `0.25 − (x − 0.2)² − (t − 0.5)² ≤ 0`.
    fn path(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        vec![0.2 - u[0], 0.25 - (x[0] - 0.2).powi(2) - (t - 0.5).powi(2)]
    }

    fn path_partials(&self, x: &[f64], _u: &[f64], t: f64) -> VectorPartials<f64> {
        VectorPartials {
            x: Matrix::from_row_major(2, 1, vec![0.0, -2.0 * (x[0] - 0.2)]),
            u: Matrix::from_row_major(2, 1, vec![-1.0, 0.0]),
            t: vec![0.0, -2.0 * (t - 0.5)],
        }
    }
}

struct Ex3;

impl FocpModel<f64> for Ex3 {
    fn dynamics(&self, x: &[f64], u: &[f64], _t: f64) -> Vec<f64> {
        vec![x[1] - u[0], -u[0]]
    }

    fn dynamics_partials(&self, _x: &[f64], _u: &[f64], _t: f64) -> VectorPartials<f64> {
        VectorPartials {
            x: Matrix::from_row_major(2, 2, vec![0.0, 1.0, 0.0, 0.0]),
            u: Matrix::from_row_major(2, 1, vec![-1.0, -1.0]),
            t: vec![0.0, 0.0],
        }
    }

    fn lagrangian(&self, x: &[f64], u: &[f64], _t: f64) -> f64 {
        x[0] - x[1] + u[0]
    }

    fn lagrangian_partials(&self, _x: &[f64], _u: &[f64], _t: f64) -> ScalarPartials<f64> {
        ScalarPartials { x: vec![1.0, -1.0], u: vec![1.0], t: 0.0 }
    }
}

/// Response to `u = 1` on `[0, 1)` and `u = 0` afterwards.
struct Ex3Exact {
    alpha: f64,
}

impl ExactSolution for Ex3Exact {
    fn state(&self, t: f64) -> Vec<f64> {
        let a = self.alpha;
        let g1 = Real::gamma(a + 1.0);
        let g2 = Real::gamma(2.0 * a + 1.0);
        let s = (t - 1.0).max(0.0);
        let step = if t >= 1.0 { 1.0 } else { 0.0 };
        let x2 = 1.0 - (t.powf(a) - s.powf(a)) / g1;
        let x1 = step * s.powf(a) / g1 - t.powf(2.0 * a) / g2 + s.powf(2.0 * a) / g2;
        vec![x1, x2]
    }

    fn control(&self, t: f64) -> Vec<f64> {
        vec![if t < 1.0 { 1.0 } else { 0.0 }]
    }
}

/// `a₁ … a₉`.
pub const HIV_PARAMS: [f64; 9] = [2.4, 2.4e-5, 1200.0, 0.24, 10.0, 0.02, 0.03, 1500.0, 3e-3];
pub const HIV_X0: [f64; 4] = [0.049, 904.0, 0.034, 0.0042];
pub const HIV_FINAL_TIME: f64 = 500.0;

struct Hiv;

impl FocpModel<f64> for Hiv {
    fn dynamics(&self, x: &[f64], u: &[f64], _t: f64) -> Vec<f64> {
        let [a1, a2, a3, a4, a5, a6, a7, a8, a9] = HIV_PARAMS;
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        vec![
            -a1 * x1 - a2 * x1 * x2 + a3 * a4 * x4 * (1.0 - u[0]),
            a5 / (1.0 + x1) - a2 * x1 * x2 - a6 * x2 + a7 * (1.0 - (x2 + x3 + x4) / a8) * x2,
            a2 * x1 * x2 - a9 * x3 - a6 * x3,
            a9 * x3 - a4 * x4,
        ]
    }

    fn dynamics_partials(&self, x: &[f64], u: &[f64], _t: f64) -> VectorPartials<f64> {
        let [a1, a2, a3, a4, a5, a6, a7, a8, a9] = HIV_PARAMS;
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        let fx = vec![
            -a1 - a2 * x2,
            -a2 * x1,
            0.0,
            a3 * a4 * (1.0 - u[0]),
            -a5 / (1.0 + x1).powi(2) - a2 * x2,
            -a2 * x1 - a6 + a7 * (1.0 - (2.0 * x2 + x3 + x4) / a8),
            -a7 * x2 / a8,
            -a7 * x2 / a8,
            a2 * x2,
            a2 * x1,
            -a9 - a6,
            0.0,
            0.0,
            0.0,
            a9,
            -a4,
        ];
        VectorPartials {
            x: Matrix::from_row_major(4, 4, fx),
            u: Matrix::from_row_major(4, 1, vec![-a3 * a4 * x4, 0.0, 0.0, 0.0]),
            t: vec![0.0; 4],
        }
    }

    fn mayer(&self, _tf: f64, x: &[f64]) -> f64 {
        500.0 * (x[0] * x[0] + x[2] * x[2] + x[3] * x[3])
    }

    fn mayer_partials(&self, _tf: f64, x: &[f64]) -> MayerPartials<f64> {
        MayerPartials { x: vec![1000.0 * x[0], 0.0, 1000.0 * x[2], 1000.0 * x[3]], t: 0.0 }
    }

    fn lagrangian(&self, x: &[f64], u: &[f64], _t: f64) -> f64 {
        500.0 * (x[0] * x[0] + x[2] * x[2] + x[3] * x[3]) + 0.005 * u[0] * u[0]
    }

    fn lagrangian_partials(&self, x: &[f64], u: &[f64], _t: f64) -> ScalarPartials<f64> {
        ScalarPartials {
            x: vec![1000.0 * x[0], 0.0, 1000.0 * x[2], 1000.0 * x[3]],
            u: vec![0.01 * u[0]],
            t: 0.0,
        }
    }
}

/// Root-mean-square node errors over `i = 1..n`, Euclidean across components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    pub e_u: f64,
    pub e_x: f64,
}

/// Errors of node samples at original times `t_i` against an exact solution.
/// Node 0 is excluded.
pub fn error_norms(times: &[f64], states: &[Vec<f64>], controls: &[Vec<f64>], exact: &dyn ExactSolution) -> ErrorNorms {
    let n = times.len().saturating_sub(1);
    if n == 0 {
        return ErrorNorms { e_u: 0.0, e_x: 0.0 };
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let (mut su, mut sx) = (0.0, 0.0);
    for i in 1..=n {
        su += sq(&controls[i], &exact.control(times[i]));
        sx += sq(&states[i], &exact.state(times[i]));
    }
    ErrorNorms { e_u: (su / n as f64).sqrt(), e_x: (sx / n as f64).sqrt() }
}

/// Least-squares slope of `−log e` against `log n`, the observed order.
pub fn regression_order(ns: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

/// First crossing of `u` through `threshold`, linearly interpolated, in
/// original time. `None` when `u` never crosses.
pub fn switch_time(u: &[f64], times: &[f64], threshold: f64) -> Option<f64> {
    for i in 0..u.len().saturating_sub(1) {
        let (a, b) = (u[i] - threshold, u[i + 1] - threshold);
        if a == 0.0 && b != 0.0 && i > 0 {
            return Some(times[i]);
        }
        if a * b < 0.0 {
            let s = a / (a - b);
            return Some(times[i] + s * (times[i + 1] - times[i]));
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Transcribe(#[from] TranscribeError),
    #[error("example {0} has no exact solution")]
    NoExactSolution(ExampleId),
    #[error("mesh list is empty")]
    EmptyMesh,
    #[error("mesh sizes must be strictly increasing")]
    UnsortedMesh,
    #[error("solver failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Reduce(#[from] NotLowerTriangular),
}

/// How first derivatives reach the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivatives {
    Analytic,
    /// Central differences with relative step `1e-6`.
    FiniteDifference,
}

/// Which program the solver sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// States and controls, with the collocated dynamics as equalities.
    Full,
    /// Controls only; the states are solved node by node from the dynamics.
    Reduced,
}

impl FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Formulation::Full),
            "reduced" => Ok(Formulation::Reduced),
            _ => Err(format!("unknown formulation {s:?}, expected full or reduced")),
        }
    }
}

/// Outcome of one transcribed solve.
#[derive(Clone, Debug)]
pub struct ExampleRun {
    pub example: ExampleId,
    pub scheme: Scheme,
    pub alpha: f64,
    pub n: usize,
    pub solution: NlpSolution<f64>,
    pub trajectory: Trajectory<f64>,
    pub tau: Vec<f64>,
    pub final_time: f64,
    pub objective: f64,
    pub errors: Option<ErrorNorms>,
    pub evaluations: EvalCounts,
}

impl ExampleRun {
    pub fn times(&self) -> Vec<f64> {
        self.tau.iter().map(|&s| s * self.final_time).collect()
    }

    /// `tau, t, x_1..x_p, u_1..u_q` with a header row.
    pub fn solution_csv(&self) -> String {
        let p = self.trajectory.states[0].len();
        let q = self.trajectory.controls[0].len();
        let mut header = vec!["tau".to_string(), "t".to_string()];
        header.extend((1..=p).map(|k| format!("x_{k}")));
        header.extend((1..=q).map(|k| format!("u_{k}")));
        let mut out = header.join(",");
        out.push('\n');
        for (i, &s) in self.tau.iter().enumerate() {
            let mut row = vec![format_sig17(s), format_sig17(s * self.final_time)];
            row.extend(self.trajectory.states[i].iter().map(|&v| format_sig17(v)));
            row.extend(self.trajectory.controls[i].iter().map(|&v| format_sig17(v)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn counted_solve<P: NlpProblem<f64>>(
    problem: &P,
    z0: &[f64],
    opts: &SolverOptions<f64>,
    derivatives: Derivatives,
) -> (NlpSolution<f64>, EvalCounts) {
    let counting = CountingProblem::new(problem);
    let solution = match derivatives {
        Derivatives::Analytic => solve(&counting, z0, opts),
        Derivatives::FiniteDifference => solve(&FiniteDifferenceProblem::new(&counting, 1e-6), z0, opts),
    };
    (solution, counting.counts())
}

/// Transcribes example `id` with `scheme` on `n` intervals and solves it.
///
/// The scheme's own quadrature is used for the cost (trapezoid for GL and TR,
/// Simpson for SI).
pub fn run_example(
    id: ExampleId,
    scheme: Scheme,
    alpha: f64,
    n: usize,
    opts: &SolverOptions<f64>,
    derivatives: Derivatives,
    formulation: Formulation,
) -> Result<ExampleRun, BenchError> {
    let example = make_example(id, alpha);
    let matrix = FracIntegrationMatrix::new(scheme, alpha, n)?;
    let weights = quad_weights(scheme.quadrature_rule(), n)?;
    let nlp = TranscribedNlp::build(example.problem.rescale(), matrix, weights)?;
    let z0 = example.initial_guess(&nlp);
    let (solution, evaluations, nlp) = match formulation {
        Formulation::Full => {
            let (solution, counts) = counted_solve(&nlp, &z0, opts, derivatives);
            (solution, counts, nlp)
        }
        Formulation::Reduced => {
            let reduced = ReducedNlp::new(nlp)?;
            let v0 = reduced.restrict(&z0);
            let (solution, counts) = counted_solve(&reduced, &v0, opts, derivatives);
            let lifted = reduced.lift(&solution)?;
            (lifted, counts, reduced.into_full())
        }
    };
    let trajectory = nlp.layout().unpack(&solution.z);
    let final_time = nlp.final_time(&solution.z);
    let tau = nlp.nodes_tau().to_vec();
    let objective = nlp.objective(&solution.z).unwrap_or(f64::NAN);
    let errors = example.exact.as_ref().map(|ex| {
        let times: Vec<f64> = tau.iter().map(|&s| s * final_time).collect();
        error_norms(&times, &trajectory.states, &trajectory.controls, ex.as_ref())
    });
    Ok(ExampleRun {
        example: id,
        scheme,
        alpha,
        n,
        evaluations,
        solution,
        trajectory,
        tau,
        final_time,
        objective,
        errors,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub errors: ErrorNorms,
    pub status: Status,
    pub kkt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub scheme: Scheme,
    pub alpha: f64,
    /// Completed meshes in increasing order.
    pub rows: Vec<StudyRow>,
    /// First mesh whose solve did not converge; rows stop before it.
    pub failed_at: Option<usize>,
    pub slope_u: f64,
    pub slope_x: f64,
}

impl ConvergenceStudy {
    pub fn is_complete(&self) -> bool {
        self.failed_at.is_none()
    }

    pub fn ns(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.n).collect()
    }

    /// `n,E_u,E_x` rows followed by a `slope` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,E_u,E_x\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.n, format_sig17(r.errors.e_u), format_sig17(r.errors.e_x));
        }
        let _ = writeln!(out, "slope,{},{}", format_sig17(self.slope_u), format_sig17(self.slope_x));
        out
    }
}

/// Solves example 1 on every mesh in `ns` with up to `workers` concurrent
/// solves and regresses the error norms against `n`.
pub fn convergence_study(
    id: ExampleId,
    scheme: Scheme,
    alpha: f64,
    ns: &[usize],
    opts: &SolverOptions<f64>,
    workers: usize,
) -> Result<ConvergenceStudy, BenchError> {
    if make_example(id, alpha).exact.is_none() {
        return Err(BenchError::NoExactSolution(id));
    }
    if ns.is_empty() {
        return Err(BenchError::EmptyMesh);
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::UnsortedMesh);
    }
    for &n in ns {
        FracIntegrationMatrix::<f64>::new(scheme, alpha, n)?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExampleRun, BenchError>>>> =
        Mutex::new((0..ns.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, ns.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= ns.len() {
                    break;
                }
                let run = run_example(id, scheme, alpha, ns[k], opts, Derivatives::Analytic, id.formulation());
                results.lock().unwrap_or_else(|e| e.into_inner())[k] = Some(run);
            });
        }
    });
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    let mut rows = Vec::new();
    let mut failed_at = None;
    for (k, r) in results.into_iter().enumerate() {
        let run = r.expect("every mesh is visited")?;
        if run.solution.status != Status::Converged {
            failed_at = Some(ns[k]);
            break;
        }
        rows.push(StudyRow {
            n: run.n,
            errors: run.errors.expect("example has an exact solution"),
            status: run.solution.status,
            kkt: run.solution.kkt_residual,
        });
    }
    let ns_done: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let (slope_u, slope_x) = if rows.len() >= 2 {
        let eu: Vec<f64> = rows.iter().map(|r| r.errors.e_u).collect();
        let ex: Vec<f64> = rows.iter().map(|r| r.errors.e_x).collect();
        (regression_order(&ns_done, &eu), regression_order(&ns_done, &ex))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergenceStudy { scheme, alpha, rows, failed_at, slope_u, slope_x })
}

/// Forward solution of `x = x₀ + t_f^α W f(x, u(t), t)` node by node, for a
/// lower-triangular `W`, using fixed-point sweeps on the diagonal term.
///
/// Returns `None` for a matrix with entries above the diagonal or when a
/// sweep fails to settle.
pub fn simulate(
    problem: &FocpProblem<f64>,
    matrix: &FracIntegrationMatrix<f64>,
    tf: f64,
    control: &dyn Fn(f64) -> Vec<f64>,
) -> Option<Vec<Vec<f64>>> {
    let n = matrix.n;
    let p = problem.state_dim;
    let scale = tf.powf(problem.alpha);
    if (0..n).any(|i| matrix.get(i, i + 1) != 0.0) {
        return None;
    }
    let model = &problem.model;
    let mut xs: Vec<Vec<f64>> = vec![problem.x0.clone()];
    let mut fs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let t0 = 0.0;
    fs.push(model.dynamics(&problem.x0, &control(t0), t0));
    for i in 1..=n {
        let t = tf * matrix.node(i);
        let u = control(t);
        let mut history = problem.x0.clone();
        for (j, fj) in fs.iter().enumerate() {
            let w = scale * matrix.get(i, j);
            history.iter_mut().zip(fj).for_each(|(h, f)| *h += w * f);
        }
        let wii = scale * matrix.get(i, i);
        let mut x = xs[i - 1].clone();
        let mut settled = false;
        for _ in 0..200 {
            let f = model.dynamics(&x, &u, t);
            let next: Vec<f64> = (0..p).map(|k| history[k] + wii * f[k]).collect();
            let delta = next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            x = next;
            if delta <= 1e-13 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                settled = true;
                break;
            }
        }
        if !settled || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        fs.push(model.dynamics(&x, &u, t));
        xs.push(x);
    }
    Some(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_validate() {
        for id in ExampleId::ALL {
            for alpha in [0.5, 0.9, 1.0] {
                let ex = make_example(id, alpha);
                assert!(ex.problem.validate().is_ok(), "{id}: {}", ex.problem.validate());
            }
        }
    }

    #[test]
    fn example_parameters() {
        let ex1 = Ex1Exact;
        assert!((ex1.state(20.0)[0] - (5.0 + (8.0 * 5f64.sqrt()).sin())).abs() < 1e-12);
        assert_eq!(ex1.state(0.0)[0], 1.0);

        let ex3 = make_example(ExampleId::Ex3BangBang, 0.5);
        assert_eq!(ex3.problem.x0, vec![0.0, 1.0]);
        let exact = ex3.exact.unwrap();
        assert_eq!(exact.control(0.5), vec![1.0]);
        assert_eq!(exact.control(1.5), vec![0.0]);

        assert_eq!(HIV_PARAMS[2], 1200.0);
        assert_eq!(HIV_PARAMS[7], 1500.0);
        assert_eq!(HIV_X0[1], 904.0);
    }

    #[test]
    fn ex3_exact_states_at_half_order() {
        let ex = Ex3Exact { alpha: 0.5 };
        assert_eq!(ex.state(0.0), vec![0.0, 1.0]);
        let g15 = Real::gamma(1.5f64);
        let x = ex.state(1.0);
        assert!((x[1] - (1.0 - 1.0 / g15)).abs() < 1e-15);
        for t in [0.3, 0.9, 1.4, 2.0] {
            let x = ex.state(t);
            let (e1, e2) = if t <= 1.0 {
                (-t, 1.0 - t.sqrt() / g15)
            } else {
                ((t - 1.0).sqrt() / g15 - 1.0, 1.0 - (t.sqrt() - (t - 1.0).sqrt()) / g15)
            };
            assert!((x[0] - e1).abs() < 1e-14 && (x[1] - e2).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn ex1_exact_solution_zeroes_the_cost_integrand() {
        let ex = make_example(ExampleId::Ex1Exact, 0.5);
        let exact = ex.exact.unwrap();
        for k in 0..50 {
            let t = 0.4 * k as f64;
            let g = ex.problem.model.lagrangian(&exact.state(t), &exact.control(t), t);
            assert!(g < 1e-24, "t={t}: {g}");
        }
    }

    #[test]
    fn example_partials_match_finite_differences() {
        let probes: [(ExampleId, Vec<f64>, Vec<f64>, f64, f64); 4] = [
            (ExampleId::Ex1Exact, vec![1.7], vec![0.4], 3.3, 20.0),
            (ExampleId::Ex2FreeTime, vec![0.6], vec![0.3], 0.7, 1.9),
            (ExampleId::Ex3BangBang, vec![-0.3, 0.6], vec![0.5], 1.2, 2.0),
            (ExampleId::Ex4Hiv, vec![0.05, 900.0, 0.03, 0.004], vec![0.4], 5.0, HIV_FINAL_TIME),
        ];
        for (id, x, u, t, tf) in probes {
            let ex = make_example(id, 0.7);
            let chk = ex.problem.check_partials(&x, &u, t, tf);
            assert!(chk.worst() < 1e-6, "{id}: {chk:?}");
        }
    }

    #[test]
    fn ex1_lagrangian_time_partial_near_origin() {
        let ex = make_example(ExampleId::Ex1Exact, 0.5);
        let m = &ex.problem.model;
        let (x, u) = ([1.2], [0.1]);
        let g0 = m.lagrangian_partials(&x, &u, 0.0).t;
        assert!(g0.is_finite());
        let t = 1e-4;
        let d = 1e-8;
        let fd = (m.lagrangian(&x, &u, t + d) - m.lagrangian(&x, &u, t - d)) / (2.0 * d);
        assert!((m.lagrangian_partials(&x, &u, t).t - fd).abs() < 1e-5);
    }

    #[test]
    fn error_norms_contract() {
        let ex = Ex1Exact;
        let times: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64).collect();
        let xs: Vec<Vec<f64>> = times.iter().map(|&t| ex.state(t)).collect();
        let us: Vec<Vec<f64>> = times.iter().map(|&t| ex.control(t)).collect();
        assert_eq!(error_norms(&times, &xs, &us, &ex), ErrorNorms { e_u: 0.0, e_x: 0.0 });
        let shifted: Vec<Vec<f64>> = us.iter().map(|u| vec![u[0] + 0.25]).collect();
        let e = error_norms(&times, &xs, &shifted, &ex);
        assert!((e.e_u - 0.25).abs() < 1e-15 && e.e_x == 0.0);
        let doubled: Vec<Vec<f64>> = us.iter().map(|u| vec![u[0] + 0.5]).collect();
        assert!((error_norms(&times, &xs, &doubled, &ex).e_u - 2.0 * e.e_u).abs() < 1e-15);
    }

    #[test]
    fn regression_recovers_power_law() {
        let ns = [100, 200, 400, 800];
        let errs: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-2.5)).collect();
        assert!((regression_order(&ns, &errs) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn switch_time_detection() {
        let n = 100;
        let times: Vec<f64> = (0..=n).map(|i| 2.0 * i as f64 / n as f64).collect();
        let ex = Ex3Exact { alpha: 0.5 };
        let u: Vec<f64> = times.iter().map(|&t| ex.control(t)[0]).collect();
        let s = switch_time(&u, &times, 0.5).unwrap();
        assert!((s - 1.0).abs() <= 2.0 / n as f64);
        let mono: Vec<f64> = times.iter().map(|t| 0.1 * t).collect();
        assert_eq!(switch_time(&mono, &times, 0.5), None);
    }

    #[test]
    fn hiv_uncontrolled_positivity() {
        let ex = make_example(ExampleId::Ex4Hiv, 0.9);
        let w = FracIntegrationMatrix::new(Scheme::Gl, 0.9, 200).unwrap();
        let xs = simulate(&ex.problem, &w, 2.0, &|_| vec![0.0]).unwrap();
        assert!(xs.iter().all(|x| x[1] > 0.0));
    }

    #[test]
    fn simulate_matches_linear_relaxation() {
        // D^α x = −x has x(t) = E_α(−t^α); at α = 1 that is e^{−t}.
        struct Decay;
        impl FocpModel<f64> for Decay {
            fn dynamics(&self, x: &[f64], _u: &[f64], _t: f64) -> Vec<f64> {
                vec![-x[0]]
            }
            fn dynamics_partials(&self, _x: &[f64], _u: &[f64], _t: f64) -> VectorPartials<f64> {
                VectorPartials { x: m11(-1.0), u: Matrix::zeros(1, 0), t: vec![0.0] }
            }
        }
        let prob = FocpProblem::new(1, 0, 1.0, vec![1.0], FinalTime::Fixed(1.0), Arc::new(Decay));
        let w = FracIntegrationMatrix::new(Scheme::Tr, 1.0, 400).unwrap();
        let xs = simulate(&prob, &w, 1.0, &|_| vec![]).unwrap();
        assert!((xs[400][0] - (-1f64).exp()).abs() < 1e-5);
        let si = FracIntegrationMatrix::new(Scheme::Si, 1.0, 4).unwrap();
        assert!(simulate(&prob, &si, 1.0, &|_| vec![]).is_none());
    }

    #[test]
    fn example_ids_parse() {
        assert_eq!("3".parse::<ExampleId>().unwrap(), ExampleId::Ex3BangBang);
        assert_eq!("hiv".parse::<ExampleId>().unwrap(), ExampleId::Ex4Hiv);
        assert!("5".parse::<ExampleId>().is_err());
    }

    #[test]
    fn study_rejects_bad_meshes() {
        let opts = SolverOptions::default();
        assert!(matches!(
            convergence_study(ExampleId::Ex1Exact, Scheme::Tr, 0.5, &[], &opts, 1),
            Err(BenchError::EmptyMesh)
        ));
        assert!(matches!(
            convergence_study(ExampleId::Ex2FreeTime, Scheme::Tr, 0.5, &[10], &opts, 1),
            Err(BenchError::NoExactSolution(ExampleId::Ex2FreeTime))
        ));
        assert!(matches!(
            convergence_study(ExampleId::Ex1Exact, Scheme::Si, 0.5, &[10, 11], &opts, 1),
            Err(BenchError::Frac(FracError::OddSimpson(11)))
        ));
    }
}
