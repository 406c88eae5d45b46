//! The network: encoder, attention, decoder, and output heads.

mod net;
mod params;

pub use net::{
    CoreModel, EncodedSource, EncodedValues, GruBind, ParamBind, SourceMeta, StepOutput,
    StepValues, UnionEntry, UnionSupport,
};
pub use params::{GruParams, ModelDims, ModelParams};
