//! Interactive multi-label segmentation as a feedback-controlled level-set
//! system. Every numeric type is generic over `f32`/`f64`; the aliases below
//! fix the usual `f64` choice.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod distance;
pub mod error;
pub mod grid;
pub mod heaviside;
pub mod input;
pub mod io;
pub mod levelset;
pub mod protocol;
pub mod region;
pub mod replay;
pub mod scalar;
pub mod server;
pub mod session;
pub mod synth;

pub use error::{Result, SegError};
pub use grid::{Dims, GridIndex, Label, LabelMap};

pub type Field = grid::Field<f64>;
pub type Image = grid::ImageVolume<f64>;
pub type LevelSet = levelset::LevelSetField<f64>;
pub type Loop = control::LoopState<f64>;
pub type Params = control::ControlParams<f64>;
pub type Heaviside = heaviside::HeavisideParams<f64>;
pub type Session = session::Session<f64>;
pub type Config = session::SessionConfig<f64>;
