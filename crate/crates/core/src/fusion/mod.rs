//! Cross-modal fusion: the bottleneck-map block over SCNN features and the
//! token-based variant built on a spiking transformer.

mod mbf;
mod spikeformer;
mod transformer;

pub use mbf::{bottleneck_init_bound, bottleneck_to_token, Mbf, MbfConfig, MbfOutput};
pub use spikeformer::{
    spiking_attention, SpikeTokenConfig, SpikeTokenizer, SpikingAttentionBlock, SpikingAttentionState, SpikingAttentionTrace, TokenFusion,
    TokenFusionOutput,
};
pub use transformer::TransformerBlock;
