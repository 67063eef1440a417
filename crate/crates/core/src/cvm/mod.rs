//! Contextual masks, overlapping segment plans and the autoregressive
//! scheduler that drives an inpainting backend segment by segment.

mod backend;
mod mask;
mod plan;
mod schedule;
pub mod wire;

pub use backend::{
    ConstantFillBackend, FailFromBackend, FlakyBackend, IdentityBackend, InpaintBackend, InpaintRequest,
    InpaintResponse, ScribbleBackend, GRAY_PREFILL,
};
pub use mask::{dilate_disk, grow_mask, make_contextual_masks, ContextualMask};
pub use plan::{plan_segments, SegmentPlan};
pub use schedule::{gray_prefill, run_schedule, ScheduleCheckpoint, ScheduleReport, Scheduler, CHECKPOINT_VERSION};
pub use wire::ProcessBackend;
