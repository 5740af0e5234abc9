pub mod error;
pub mod estep_sources;
pub mod eval;
pub mod mixsim;
pub mod mstep;
pub mod nmf;
pub mod numerics;
pub mod seeding;
pub mod smoother;
pub mod stft;
pub mod vem;

pub use error::{Error, Result};
