mod dropout;
mod elementwise;
mod linalg;
mod loss;
mod reduce;
mod shape;
mod signal;

pub use dropout::DropoutKey;
pub use linalg::matmul_arrays;
pub use loss::LOG_FLOOR;
