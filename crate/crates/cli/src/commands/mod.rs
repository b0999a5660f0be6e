pub mod classify;
pub mod linear;
pub mod noise;
pub mod spectrum;
