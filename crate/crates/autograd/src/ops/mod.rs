pub(crate) mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resample;
mod shape_ops;
mod spike;
