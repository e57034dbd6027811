pub mod complex;
pub mod error;
pub mod io;
pub mod kspace;
pub mod network;
pub mod run;
pub mod tensor;
pub mod training;

pub use complex::ComplexTensor;
pub use error::{Error, Result};
pub use kspace::{Constraint, KSpace, SamplingMask};
pub use network::{CascadeModel, Mode, NetworkSpec};
pub use run::RunManifest;
pub use tensor::Tensor;
pub use training::{MaskFamily, PhantomSet, TrainConfig};
