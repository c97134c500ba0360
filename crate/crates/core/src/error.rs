use thiserror::Error;

/// Failure while evaluating a user callback or an assembled NLP function.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{what} returned a non-finite value at node {node}")]
    NonFinite { what: &'static str, node: usize },
    #[error("{what} at node {node} has shape {got:?}, expected {expected:?}")]
    Shape { what: &'static str, node: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("implicit state equation did not converge at node {node}")]
    StateSolve { node: usize },
    #[error("decision vector has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
}
