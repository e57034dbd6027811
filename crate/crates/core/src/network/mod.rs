//! Dense dilated ensemble denoisers and their cascade.

mod blocks;
mod cascade;
pub mod layers;
mod rf;
mod spec;
mod weights;

pub use blocks::{DenoiserOutput, DilatedDenseBlock, EnsembleDenoiser, Refinement};
pub use cascade::{
    count_parameters, parameter_breakdown, CascadeModel, CascadeOutput, ParameterCount, Stage,
};
pub use layers::{for_each_param, Conv, ConvUnit, Feature, Module, Norm, ParamKind, Visitor};
pub use rf::{branch_rf_empirical, default_probe_size, rf_empirical};
pub use spec::{
    make_ablation, rf_closed_form, rf_recurrence, BranchSpec, LayerSpec, Mode, NetworkSpec, PRESETS,
};
pub use weights::{
    architecture_tag, load_weights, save_weights, EntryKind, StateDict, WeightEntry,
    WeightManifest, WEIGHTS_FORMAT,
};
