//! Dense multiway-array algebra.
//!
//! Modes are zero-based throughout the Rust API.

mod dense;
mod grouping;
mod products;
mod unfold;

pub use dense::{DenseTensor, MultiIndexIter, Shape};
pub use grouping::{round_robin_grouping, PairGrouping};
pub use products::{
    khatri_rao, kron_vectors, kronecker, kronecker_chain, n_mode_product, tucker_compose,
    unvec_columns, vec_columns,
};
pub use unfold::{
    fold, matricize, matricize_index_map, one_way_unfold, square_fold, square_index_map,
    square_unfold,
};
