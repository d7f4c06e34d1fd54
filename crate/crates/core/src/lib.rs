//! Worst-case loss certification and distributionally robust training for
//! representation-space classifiers under Wasserstein distribution shift.
//!
//! The crate is a small pipeline over plain `f64` vectors:
//!
//! * [`domains`] — synthetic multi-domain tasks (rotated 2-D blobs/arcs,
//!   severity-parameterized corruptions), stratified splits, CSV persistence.
//! * [`netcore`] — a dense feedforward representation network `g` plus a
//!   linear classification head `h`, with analytic forward/backward passes
//!   and the three loss families used throughout (cross-entropy, modified
//!   hinge, 0/1).
//! * [`transport`] — optimal-transport machinery: an exact small-instance
//!   solver, entropic (Sinkhorn) approximation, the class-constrained cost
//!   that makes OT equal squared type-2 Wasserstein distance, and the joint
//!   feature+label cost used by Wasserstein matching.
//! * [`adversarial`] — the closed-form closest-misclassified-point attack on
//!   linear heads, the adversarial reference distribution it induces, the
//!   radius unit `rho_adv`, and PGD attacks in input and representation space.
//! * [`certify`] — dual ascent over a quadratic transport penalty producing
//!   worst-case loss certificates over Wasserstein balls, including the exact
//!   closed-form certificate for the 0/1 loss and an input-space variant.
//! * [`dgtrain`] — domain-generalization objectives (Wasserstein matching,
//!   domain discriminators, risk-variance regularization) and the
//!   distributionally robust training loop that augments them with
//!   worst-case-distribution training.
//!
//! All operations are deterministic given their seeds; parallel sections map
//! over independent points and reduce in a fixed order, so results do not
//! depend on thread count.

pub mod adversarial;
pub mod certify;
pub mod dgtrain;
pub mod domains;
pub mod netcore;
pub mod transport;
pub mod util;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested operation is undefined for this loss family
    /// (e.g. gradients of the 0/1 loss).
    #[error("loss family `{family}` does not support {what}")]
    UnsupportedLoss {
        family: &'static str,
        what: &'static str,
    },

    /// The transport program has no feasible coupling (mismatched class
    /// masses, or all-infinite rows/columns).
    #[error("infeasible transport problem: {0}")]
    InfeasibleTransport(String),

    /// Every class pair of the head is identical; no decision boundary exists.
    #[error("degenerate head: no usable decision boundary")]
    DegenerateHead,

    /// Surrogate maximization exceeded the distortion cap, signalling that
    /// the penalty weight is below the concavity threshold.
    #[error(
        "surrogate maximization diverged: squared distortion {distortion_sq:.3e} exceeded cap {cap:.3e}"
    )]
    UnboundedSurrogate { distortion_sq: f64, cap: f64 },

    /// The exact transport solver failed to make progress (anti-cycling
    /// guard); practically unreachable on float costs.
    #[error("transport solver stalled after {0} pivots")]
    SolverStalled(usize),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
