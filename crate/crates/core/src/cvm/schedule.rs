use serde::{Deserialize, Serialize};

use crate::cvm::{ContextualMask, InpaintBackend, InpaintRequest, InpaintResponse, SegmentPlan, GRAY_PREFILL};
use crate::error::{Error, Result};
use crate::geometry::RgbImage;
use crate::io::image_digest;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable record of a partially completed schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleCheckpoint {
    pub version: u32,
    pub frame_count: usize,
    pub segment_length: usize,
    pub overlap: usize,
    pub completed_segments: usize,
    /// Digest of each committed output frame, `None` if not yet committed.
    pub frame_sha256: Vec<Option<String>>,
}

/// Contract violations the scheduler repaired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub segments_run: usize,
    pub retries: usize,
    /// Pixels outside the dilated mask restored to the input.
    pub clamped_pixels: usize,
    /// Anchor frames the backend changed and that were restored.
    pub anchor_repairs: usize,
}

pub fn gray_prefill(frame: &RgbImage, mask: &ContextualMask) -> RgbImage {
    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if mask.dilated.get(x, y) {
                out.set(x, y, GRAY_PREFILL);
            }
        }
    }
    out
}

/// Sequential segment-by-segment editing with anchor inheritance and
/// output contract enforcement.
pub struct Scheduler<'a> {
    frames: &'a [RgbImage],
    masks: &'a [ContextualMask],
    plan: &'a SegmentPlan,
    prompt: String,
    retries: usize,
    committed: Vec<Option<RgbImage>>,
    completed: usize,
    report: ScheduleReport,
}

impl<'a> Scheduler<'a> {
    pub fn new(
        frames: &'a [RgbImage],
        masks: &'a [ContextualMask],
        plan: &'a SegmentPlan,
        prompt: impl Into<String>,
        retries: usize,
    ) -> Result<Self> {
        plan.validate()?;
        if frames.len() != plan.frame_count || masks.len() != plan.frame_count {
            return Err(Error::InvalidArgument(format!(
                "plan covers {} frames but got {} frames and {} masks",
                plan.frame_count,
                frames.len(),
                masks.len()
            )));
        }
        let (w, h) = frames[0].dims();
        for (i, (f, m)) in frames.iter().zip(masks).enumerate() {
            for got in [f.dims(), m.base.dims(), m.dilated.dims()] {
                crate::geometry::ensure_dims((w, h), got)?;
            }
            if m.frame != i {
                return Err(Error::InvalidArgument(format!("mask at position {i} is labelled frame {}", m.frame)));
            }
        }
        Ok(Self {
            frames,
            masks,
            plan,
            prompt: prompt.into(),
            retries,
            committed: vec![None; frames.len()],
            completed: 0,
            report: ScheduleReport::default(),
        })
    }

    /// Restores state from earlier committed outputs; every frame of the
    /// first `completed` segments must be present.
    pub fn resume(&mut self, committed: Vec<Option<RgbImage>>, completed: usize) -> Result<()> {
        if committed.len() != self.frames.len() || completed > self.plan.len() {
            return Err(Error::InvalidArgument("checkpoint does not match the plan".into()));
        }
        let (w, h) = self.frames[0].dims();
        for c in committed.iter().flatten() {
            crate::geometry::ensure_dims((w, h), c.dims())?;
        }
        for seg in &self.plan.segments[..completed] {
            if seg.clone().any(|f| committed[f].is_none()) {
                return Err(Error::InvalidArgument(format!("checkpoint misses frames of segment {seg:?}")));
            }
        }
        self.committed = committed;
        self.completed = completed;
        Ok(())
    }

    pub fn completed_segments(&self) -> usize {
        self.completed
    }

    pub fn committed(&self) -> &[Option<RgbImage>] {
        &self.committed
    }

    pub fn report(&self) -> ScheduleReport {
        self.report
    }

    pub fn checkpoint(&self) -> ScheduleCheckpoint {
        ScheduleCheckpoint {
            version: CHECKPOINT_VERSION,
            frame_count: self.plan.frame_count,
            segment_length: self.plan.segment_length,
            overlap: self.plan.overlap,
            completed_segments: self.completed,
            frame_sha256: self.committed.iter().map(|c| c.as_ref().map(image_digest)).collect(),
        }
    }

    /// Request for segment `j`. Its anchors are all committed outputs it
    /// shares with segment `j - 1`: the nominal `overlap` frames, or more
    /// for an end-aligned final segment.
    pub fn request(&self, j: usize) -> Result<InpaintRequest> {
        let seg = self.plan.segments.get(j).ok_or_else(|| Error::InvalidArgument(format!("no segment {j}")))?.clone();
        let anchors = if j == 0 {
            Vec::new()
        } else {
            (seg.start..seg.start + self.plan.overlap_with_previous(j))
                .map(|f| {
                    self.committed[f]
                        .clone()
                        .ok_or_else(|| Error::InvalidArgument(format!("anchor frame {f} not committed")))
                })
                .collect::<Result<_>>()?
        };
        Ok(InpaintRequest {
            segment: j,
            first_frame: seg.start,
            frames: self.frames[seg.clone()].to_vec(),
            masks: self.masks[seg.clone()].to_vec(),
            gray: seg.clone().map(|f| gray_prefill(&self.frames[f], &self.masks[f])).collect(),
            anchors,
            prompt: self.prompt.clone(),
        })
    }

    fn check_shape(&self, req: &InpaintRequest, resp: &InpaintResponse) -> Result<()> {
        let bad = |message: String| Err(Error::Backend { segment: req.segment, message });
        if resp.segment != req.segment {
            return bad(format!("response is for segment {}", resp.segment));
        }
        if resp.frames.len() != req.frames.len() {
            return bad(format!("expected {} frames, got {}", req.frames.len(), resp.frames.len()));
        }
        if let Some(f) = resp.frames.iter().find(|f| f.dims() != req.frames[0].dims()) {
            return bad(format!("frame size {:?} differs from {:?}", f.dims(), req.frames[0].dims()));
        }
        Ok(())
    }

    /// Commits one response, clamping contract violations.
    fn commit(&mut self, req: &InpaintRequest, resp: InpaintResponse) {
        for (i, mut out) in resp.frames.into_iter().enumerate() {
            let f = req.first_frame + i;
            if let Some(anchor) = req.anchors.get(i) {
                if out != *anchor {
                    log::warn!("segment {}: backend altered anchor frame {f}; restored", req.segment);
                    self.report.anchor_repairs += 1;
                    out = anchor.clone();
                }
            }
            let (input, mask) = (&self.frames[f], &self.masks[f].dilated);
            let mut clamped = 0;
            for y in 0..input.height() {
                for x in 0..input.width() {
                    if !mask.get(x, y) && out.get(x, y) != input.get(x, y) {
                        out.set(x, y, input.get(x, y));
                        clamped += 1;
                    }
                }
            }
            if clamped > 0 {
                log::warn!("segment {}: {clamped} pixels outside the mask of frame {f} restored", req.segment);
                self.report.clamped_pixels += clamped;
            }
            if self.committed[f].is_none() {
                self.committed[f] = Some(out);
            }
        }
    }

    /// Runs the next pending segment, retrying failed backend calls.
    pub fn step<B: InpaintBackend + ?Sized>(&mut self, backend: &mut B) -> Result<()> {
        let j = self.completed;
        let req = self.request(j)?;
        let mut attempt = 0;
        let resp = loop {
            match backend.inpaint(&req).and_then(|r| self.check_shape(&req, &r).map(|_| r)) {
                Ok(r) => break r,
                Err(e) if attempt < self.retries => {
                    attempt += 1;
                    self.report.retries += 1;
                    log::warn!("segment {j} attempt {attempt} failed: {e}; retrying");
                }
                Err(e) => {
                    return Err(match e {
                        Error::Backend { .. } => e,
                        other => Error::Backend { segment: j, message: other.to_string() },
                    })
                }
            }
        };
        self.commit(&req, resp);
        self.completed += 1;
        self.report.segments_run += 1;
        Ok(())
    }

    /// Runs every remaining segment in order. `on_commit` sees the state
    /// after each segment, e.g. to persist a checkpoint.
    pub fn run<B: InpaintBackend + ?Sized>(
        &mut self,
        backend: &mut B,
        mut on_commit: impl FnMut(&Self, usize) -> Result<()>,
    ) -> Result<Vec<RgbImage>> {
        while self.completed < self.plan.len() {
            self.step(backend)?;
            on_commit(self, self.completed - 1)?;
        }
        self.committed
            .iter()
            .enumerate()
            .map(|(i, c)| c.clone().ok_or_else(|| Error::InvalidArgument(format!("frame {i} never committed"))))
            .collect()
    }
}

/// Runs a whole schedule in memory.
pub fn run_schedule<B: InpaintBackend + ?Sized>(
    frames: &[RgbImage],
    masks: &[ContextualMask],
    plan: &SegmentPlan,
    prompt: &str,
    backend: &mut B,
    retries: usize,
) -> Result<Vec<RgbImage>> {
    Scheduler::new(frames, masks, plan, prompt, retries)?.run(backend, |_, _| Ok(()))
}
