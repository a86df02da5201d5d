//! 3-D shifted-window transformer machinery.

pub mod attention;
pub mod block;
pub mod rel_pos;
pub mod window;

pub use attention::{AttentionOutput, RelPosBias, WindowAttention};
pub use block::{StBlock, StPath, MLP_RATIO};
pub use rel_pos::{build_rel_pos_index, table_len};
pub use window::{
    build_attention_mask, cyclic_shift, sequence_to_volume, volume_to_sequence, WindowSpec, MASK_VALUE,
};
