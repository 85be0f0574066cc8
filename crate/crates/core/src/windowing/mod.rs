//! Window partitioning, cyclic shifts, shift masks and windowed attention.

mod attention;
mod flops;
mod layout;
mod mask;

pub use attention::{
    attention_inference, shifted_window_attention, window_attention, window_attention_with_probs,
    AttentionOutput, AttentionWeights,
};
pub use flops::{flops_msa, flops_report, flops_wmsa, FlopsReport};
pub use layout::{
    crop_top_left, cyclic_shift, pad_bottom_right, window_partition, window_reverse, WindowGrid,
};
pub use mask::{shift_attention_mask, AttentionMask, MASK_NEG};
