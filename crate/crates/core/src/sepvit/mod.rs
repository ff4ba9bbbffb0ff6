//! Window bookkeeping and the separable attention block family.

mod block;
mod layout;

pub use block::{
    dwa, gsa_block, mlp, pwa, pwa_with_attention, sepvit_block, BlockParams, TokenMode, WindowTokens,
};
pub use layout::{concat_window_tokens, slice_tokens, window_partition, window_reverse, WindowLayout};
