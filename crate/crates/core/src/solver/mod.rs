//! Penalized least-squares fit of the coefficient tensor by accelerated ADMM.

mod admm;
mod cv;
mod precompute;
mod prox;
mod rank;

pub use admm::{
    admm_fit, fit_precomputed, objective, one_way_nuclear, CovarianceFit, EtaScaling, FitConfig,
    FitDiagnostics, FitState, Solver,
};
pub use cv::{cv_select, CvGrid, CvResult, CvScore};
pub use precompute::{precompute, GramSet, PairLoss, Precomputed};
pub use prox::{prox_psd, prox_trace_mode_k};
pub use rank::{rank_report, RankReport};
