//! The two-path segmentation network.
//!
//! ```text
//!            ┌─ F_l[:C/2] ─┐
//! image ─ backbone ─ F ─ LM ─ context head ─ P1 ─┐      ┌─ CM ─ P1' ─┐
//!            │                                   ├──────┤            ├─ concat ─ reorder ─ upsample ─ P_final
//!            │     F ─ LM ─ context head ─ P2 ───┘      └─ CM ─ P2' ─┘
//!            └─ F_l[C/2:] ─┘
//!   aux feature ─ aux head ─ P_aux
//! ```

mod aquanet;
mod backbone;
mod context_head;

pub use aquanet::{cross_path, AquaNet, AquaNetConfig, AquaNetVars, Paths};
pub use backbone::{Backbone, BackboneOutput, BackboneSpec};
pub use context_head::{ContextHead, ContextHeadSpec};
