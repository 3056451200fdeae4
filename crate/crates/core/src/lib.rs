pub mod audio;
pub mod augment;
pub mod autodiff;
pub mod diagnostics;
pub mod dsp;
pub mod eval;
pub mod features;
pub mod losses;
pub mod models;
pub mod training;
pub mod util;
