pub mod quad;
pub mod sum;

pub use sum::{log_add_exp, neumaier_sum, NeumaierSum};
