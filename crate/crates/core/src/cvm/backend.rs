use crate::cvm::ContextualMask;
use crate::error::{Error, Result};
use crate::geometry::RgbImage;

/// Mid-gray written into masked pixels before a segment is sent out.
pub const GRAY_PREFILL: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub segment: usize,
    /// Absolute index of the segment's first frame.
    pub first_frame: usize,
    pub frames: Vec<RgbImage>,
    pub masks: Vec<ContextualMask>,
    /// `frames` with every dilated-mask pixel set to [`GRAY_PREFILL`].
    pub gray: Vec<RgbImage>,
    /// Already committed outputs the first `anchors.len()` frames must keep.
    pub anchors: Vec<RgbImage>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResponse {
    pub segment: usize,
    pub frames: Vec<RgbImage>,
}

/// The inpainting model. Implementations may be stateful; the scheduler
/// owns the backend exclusively for a run.
pub trait InpaintBackend {
    fn inpaint(&mut self, request: &InpaintRequest) -> Result<InpaintResponse>;
}

impl<B: InpaintBackend + ?Sized> InpaintBackend for Box<B> {
    fn inpaint(&mut self, request: &InpaintRequest) -> Result<InpaintResponse> {
        (**self).inpaint(request)
    }
}

fn with_anchors(req: &InpaintRequest, mut frames: Vec<RgbImage>) -> Vec<RgbImage> {
    for (f, a) in frames.iter_mut().zip(&req.anchors) {
        *f = a.clone();
    }
    frames
}

/// Returns the gray-prefilled frames untouched apart from the anchors.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityBackend;

impl InpaintBackend for IdentityBackend {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        Ok(InpaintResponse { segment: req.segment, frames: with_anchors(req, req.gray.clone()) })
    }
}

/// Paints every dilated-mask pixel with one color per segment, so seams
/// between segments are visible byte-for-byte.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFillBackend {
    pub colors: [[u8; 3]; 4],
}

impl Default for ConstantFillBackend {
    fn default() -> Self {
        Self { colors: [[220, 40, 40], [40, 200, 60], [50, 70, 230], [230, 210, 30]] }
    }
}

impl InpaintBackend for ConstantFillBackend {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        let color = self.colors[req.segment % self.colors.len()];
        let frames = req
            .frames
            .iter()
            .zip(&req.masks)
            .map(|(f, m)| {
                let mut out = f.clone();
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        if m.dilated.get(x, y) {
                            out.set(x, y, color);
                        }
                    }
                }
                out
            })
            .collect();
        Ok(InpaintResponse { segment: req.segment, frames: with_anchors(req, frames) })
    }
}

/// Ignores every contract: repaints whole frames, anchors included.
#[derive(Debug, Clone, Copy)]
pub struct ScribbleBackend {
    pub seed: u8,
}

impl InpaintBackend for ScribbleBackend {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        let frames = req
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut out = f.clone();
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        let v = (x * 7 + y * 13 + i * 31 + req.segment * 17) as u8 ^ self.seed;
                        out.set(x, y, [v, v.wrapping_mul(3), v.wrapping_add(91)]);
                    }
                }
                out
            })
            .collect();
        Ok(InpaintResponse { segment: req.segment, frames })
    }
}

/// Fails its first `failures` calls, then delegates.
#[derive(Debug, Clone)]
pub struct FlakyBackend<B> {
    pub inner: B,
    pub failures: usize,
    pub calls: usize,
}

impl<B> FlakyBackend<B> {
    pub fn new(inner: B, failures: usize) -> Self {
        Self { inner, failures, calls: 0 }
    }
}

impl<B: InpaintBackend> InpaintBackend for FlakyBackend<B> {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        self.calls += 1;
        if self.calls <= self.failures {
            return Err(Error::Backend { segment: req.segment, message: format!("injected failure {}", self.calls) });
        }
        self.inner.inpaint(req)
    }
}

/// Succeeds for segments before `fail_from`, fails for the rest.
#[derive(Debug, Clone)]
pub struct FailFromBackend<B> {
    pub inner: B,
    pub fail_from: usize,
}

impl<B: InpaintBackend> InpaintBackend for FailFromBackend<B> {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        if req.segment >= self.fail_from {
            return Err(Error::Backend { segment: req.segment, message: "backend unavailable".into() });
        }
        self.inner.inpaint(req)
    }
}
