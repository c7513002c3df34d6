//! Capsule layers: squashing, primary capsules, votes, routing by
//! agreement, margin and reconstruction losses, and the decoder branch.

mod decoder;
mod loss;
mod routing;
mod squash;
mod votes;

pub use decoder::{argmax_norm_mask, decoder_forward, DecoderVars};
pub use loss::{margin_loss, margin_loss_values, reconstruction_loss, total_loss, CapsLossConfig};
pub use routing::{agreement, dynamic_routing, weighted_sum, Routing, DEFAULT_ROUTING_ITERATIONS};
pub use squash::{squash, squash_values, SQUASH_EPS};
pub use votes::{capsule_votes, primary_caps};
