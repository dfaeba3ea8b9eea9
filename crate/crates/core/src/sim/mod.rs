pub mod engine;
pub mod medium;
