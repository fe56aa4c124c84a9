pub mod error;
pub mod objective;
pub mod prox;

pub use error::{Error, Result};
pub mod schedules;
pub mod optimizers;
pub mod lyapunov;
pub mod harness;
