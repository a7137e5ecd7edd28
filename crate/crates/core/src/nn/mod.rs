//! Network building blocks and the full classifier.

pub mod attention;
pub mod block;
pub mod config;
pub mod mbconv;
pub mod model;
pub mod params;

pub use attention::{Attention, AttentionSpec, ForcedGates, FusionWeights};
pub use block::{FastBoostBlock, FastBoostBlockSpec};
pub use config::{channel_progression, ArchConfig, FusionMode, Variant};
pub use mbconv::{MBConv, MBConvSpec};
pub use model::{Forward, Model};
pub use params::{Bindings, Ctx, Param, ParamId, ParamStore};
