//! Direct transcription of fractional optimal control problems.
//!
//! A problem with Caputo dynamics of order `α ∈ (0, 1]` is rewritten in
//! integral form on `[0, 1]`, the fractional integral is replaced by one of
//! three integration matrices (Grünwald–Letnikov, trapezoidal, Simpson) and the
//! resulting finite program is solved by an augmented Lagrangian method.
//!
//! The numerical core is generic over [`scalar::Real`]; the aliases below fix
//! it to `f64`, which is what the benchmark problems use.

pub mod fracint;
pub mod linalg;
pub mod scalar;
pub mod special;
pub mod error;
pub mod problem;
pub mod nlp;
pub mod transcribe;
pub mod reduced;
pub mod bench;

pub use bench::ExampleId;
pub use fracint::Scheme;
pub use nlp::Status;

pub type FracMatrix = fracint::FracIntegrationMatrix<f64>;
pub type FracMatrix32 = fracint::FracIntegrationMatrix<f32>;
pub type Weights = fracint::QuadratureWeights<f64>;
pub type Problem = problem::FocpProblem<f64>;
pub type Program = transcribe::TranscribedNlp<f64>;
pub type ReducedProgram = reduced::ReducedNlp<f64>;
pub type Options = nlp::SolverOptions<f64>;
pub type Solution = nlp::NlpSolution<f64>;
