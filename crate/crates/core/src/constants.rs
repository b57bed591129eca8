//! Pinned protocol constants. Every value here is echoed into run metadata.

use serde::{Deserialize, Serialize};

pub const PATIENCE: usize = 16;
pub const CLIP_THRESHOLD: f64 = 1.0;
pub const MAX_EPOCHS: usize = 1000;
pub const N_SEEDS: usize = 10;
pub const WELCH_ALPHA: f64 = 0.05;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const SGD_MOMENTUM: f64 = 0.9;
pub const SGD_DAMPENING: f64 = 0.9;

pub const ADOPT_BETA2: f64 = 0.9999;
pub const ADOPT_EPS: f64 = 1e-6;

pub const ADAN_BETAS: (f64, f64, f64) = (0.98, 0.92, 0.99);

pub const ADEMAMIX_BETA3: f64 = 0.9999;
pub const ADEMAMIX_ALPHA: f64 = 5.0;

pub const LION_BETAS: (f64, f64) = (0.9, 0.99);
pub const SIGNUM_MOMENTUM: f64 = 0.9;

pub const MUON_MOMENTUM: f64 = 0.95;
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);
pub const NS_ITERS: usize = 5;
/// Convergent quintic (15/8, -10/8, 3/8) run after the fixed-coefficient
/// iterations so singular values settle at 1.
pub const NS_POLISH_COEFFS: (f64, f64, f64) = (1.875, -1.25, 0.375);
pub const NS_POLISH_ITERS: usize = 2;

pub const SOAP_REFRESH: u64 = 10;
pub const JACOBI_MAX_SWEEPS: usize = 50;

pub const CAUTIOUS_MIN_MEAN: f64 = 1e-3;

pub const QUANTILE_JITTER: f64 = 1e-3;
pub const QUANTILE_MAX_REFERENCES: usize = 1000;

pub const TPE_STARTUP: usize = 10;
pub const TPE_GAMMA: f64 = 0.25;
pub const TPE_CANDIDATES: usize = 24;
/// Kernel bandwidth never drops below `range / min(n + 1, this)`.
pub const TPE_MAX_FLOOR_DIVISOR: usize = 100;
pub const ZERO_OR_PRIOR: f64 = 0.5;

pub const DEFAULT_BUDGET: usize = 100;
pub const LARGE_DATASET_BUDGET: usize = 50;

/// Serializable snapshot of the constants above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedConstants {
    pub patience: usize,
    pub clip_threshold: f64,
    pub max_epochs: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub sgd_momentum: f64,
    pub sgd_dampening: f64,
    pub adopt_beta2: f64,
    pub adopt_eps: f64,
    pub adan_betas: (f64, f64, f64),
    pub ademamix_beta3: f64,
    pub lion_betas: (f64, f64),
    pub signum_momentum: f64,
    pub muon_momentum: f64,
    pub ns_coeffs: (f64, f64, f64),
    pub ns_iters: usize,
    pub ns_polish_iters: usize,
    pub soap_refresh: u64,
    pub quantile_jitter: f64,
    pub ema_bias_correction: bool,
    pub ema_drives_early_stopping: bool,
    pub welch_alpha: f64,
}

pub fn pinned() -> PinnedConstants {
    PinnedConstants {
        patience: PATIENCE,
        clip_threshold: CLIP_THRESHOLD,
        max_epochs: MAX_EPOCHS,
        adam_betas: (ADAM_BETA1, ADAM_BETA2),
        adam_eps: ADAM_EPS,
        sgd_momentum: SGD_MOMENTUM,
        sgd_dampening: SGD_DAMPENING,
        adopt_beta2: ADOPT_BETA2,
        adopt_eps: ADOPT_EPS,
        adan_betas: ADAN_BETAS,
        ademamix_beta3: ADEMAMIX_BETA3,
        lion_betas: LION_BETAS,
        signum_momentum: SIGNUM_MOMENTUM,
        muon_momentum: MUON_MOMENTUM,
        ns_coeffs: NS_COEFFS,
        ns_iters: NS_ITERS,
        ns_polish_iters: NS_POLISH_ITERS,
        soap_refresh: SOAP_REFRESH,
        quantile_jitter: QUANTILE_JITTER,
        ema_bias_correction: false,
        ema_drives_early_stopping: true,
        welch_alpha: WELCH_ALPHA,
    }
}
