use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eventdata::EventStream;

/// Per-bin event counts `[T, 2, H, W]` (polarity-major within a bin).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor<f64>,
    pub bin_ms: f64,
}

impl FrameSequence {
    pub fn steps(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn total_count(&self) -> f64 {
        self.frames.data().iter().sum()
    }
}

/// Sums events into `bin_ms` wide frames. `T = ceil(duration / bin)`.
/// With `binarize` each pixel of a bin is 1 if any event landed there.
pub fn rasterize(s: &EventStream, bin_ms: f64, binarize: bool) -> Result<FrameSequence> {
    if !(bin_ms > 0.0 && bin_ms.is_finite()) {
        return Err(Error::structural(format!("bin width must be positive, got {bin_ms}")));
    }
    let bin_us = bin_ms * 1000.0;
    let steps = (s.duration as f64 / bin_us).ceil() as usize;
    let (h, w) = (s.height as usize, s.width as usize);
    let mut data = vec![0.0; steps * 2 * h * w];
    for e in &s.events {
        if e.p > 1 || e.x as usize >= w || e.y as usize >= h || e.t >= s.duration {
            return Err(Error::structural(format!("event {e:?} outside the stream bounds")));
        }
        let k = ((e.t as f64 / bin_us).floor() as usize).min(steps - 1);
        let cell = &mut data[((k * 2 + e.p as usize) * h + e.y as usize) * w + e.x as usize];
        *cell = if binarize { 1.0 } else { *cell + 1.0 };
    }
    Ok(FrameSequence { frames: Tensor::new(vec![steps, 2, h, w], data)?, bin_ms })
}
