//! Domain-generalization training: method objectives and the shared engine.
//!
//! [`methods`] holds the per-method machinery — the transport-based alignment
//! cost with its envelope gradients, the one-vs-rest domain discriminators,
//! and the risk-variance penalty. [`engine`] runs the actual loop: quota
//! batching across domains, the optional robust inner ascent, the method
//! term on clean representations, and resumable, bit-reproducible state.

pub mod engine;
pub mod methods;

pub use engine::{
    accuracy, dr_dg_train, dr_dg_train_with, mean_loss, vanilla_train, DRDGConfig, EpochRecord,
    TrainOutcome, TrainState, TrainingLog, TRAIN_STATE_VERSION,
};
pub use methods::{
    disc_label, g2dm_losses, make_discriminators, vrex_loss, wm_loss, DGMethod, G2dmEval, WmTerm,
};
