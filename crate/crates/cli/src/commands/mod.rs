pub mod corr;
pub mod eval;
pub mod gen_data;
pub mod infer;
pub mod optimize;
pub mod postprocess;
pub mod train;
