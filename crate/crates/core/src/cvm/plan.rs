use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlapping frame windows processed in order. Every segment has length
/// `segment_length`; consecutive segments share `overlap` frames except the
/// last, which is aligned to the final frame and may share more.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub frame_count: usize,
    pub segment_length: usize,
    pub overlap: usize,
    pub segments: Vec<Range<usize>>,
}

impl SegmentPlan {
    /// Frames shared by segment `j` and its predecessor.
    pub fn overlap_with_previous(&self, j: usize) -> usize {
        if j == 0 {
            return 0;
        }
        self.segments[j - 1].end.saturating_sub(self.segments[j].start)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = plan_segments(self.frame_count, self.segment_length, self.overlap)?;
        if fresh.segments != self.segments {
            return Err(Error::InvalidArgument("segment list does not match (n, L, k)".into()));
        }
        Ok(())
    }
}

pub fn plan_segments(n: usize, segment_length: usize, overlap: usize) -> Result<SegmentPlan> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot plan zero frames".into()));
    }
    if segment_length == 0 || segment_length > n {
        return Err(Error::InvalidArgument(format!("segment length {segment_length} must be in 1..={n}")));
    }
    if overlap >= segment_length {
        return Err(Error::InvalidArgument(format!("overlap {overlap} must be < segment length {segment_length}")));
    }
    let stride = segment_length - overlap;
    let mut segments = Vec::new();
    let mut start = 0;
    while start + segment_length < n {
        segments.push(start..start + segment_length);
        start += stride;
    }
    segments.push(n - segment_length..n);
    let plan = SegmentPlan { frame_count: n, segment_length, overlap, segments };
    for j in 1..plan.len() {
        let o = plan.overlap_with_previous(j);
        if o != overlap {
            log::debug!("segment {j} overlaps its predecessor by {o} frames (nominal {overlap})");
        }
    }
    Ok(plan)
}
