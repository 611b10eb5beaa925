//! Static analysis and desk-scale performance modeling for GPU machine code.
//!
//! The crate parses SASS disassembly listings into a typed program form,
//! decodes and encodes per-instruction scheduling control words across five
//! GPU generations, finds and repairs register-bank conflicts, predicts
//! per-warp issue timelines, and simulates the cache/TLB/shared-memory
//! hierarchy from per-board parameter profiles.

pub mod banks;
pub mod control;
pub mod issue;
pub mod lint;
pub mod memhier;
pub mod profile;
pub mod reassign;
pub mod sass;

pub use profile::{builtin_profiles, load_profile, validate_profile, Generation, GpuArchProfile};
