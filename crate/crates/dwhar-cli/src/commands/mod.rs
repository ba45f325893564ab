pub mod bench;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod synth;
pub mod train;
