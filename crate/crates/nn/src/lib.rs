//! Neural building blocks for bias generation: a reverse-mode tape, Adam,
//! the transformer GAN and the conditional diffusion refiner.

pub mod adam;
pub mod error;
pub mod diffusion;
pub mod gan;
pub mod edge;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{NnError, Result};
pub use diffusion::{generate_two_stage, DiffConfig, DiffModel, DiffusionSchedule, ScheduleConfig};
pub use edge::{EdgeConfig, EdgeModel, EdgeRegistry, EdgeReport};
pub use gan::{GanFormerConfig, GanModel};
pub use params::{ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
pub type TapeF32 = Tape<f32>;
pub type TapeF64 = Tape<f64>;
