use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::eventdata::{Event, EventStream};
use crate::rng;

/// `pi (3 - sqrt 5)` radians, about 137.5 degrees.
pub const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Geometry and noise of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub width: u16,
    pub height: u16,
    pub duration_us: u32,
    /// Background events per pixel per 100 ms.
    pub noise_rate: f64,
    /// Dot radius in pixels.
    pub radius: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { width: 16, height: 16, duration_us: 100_000, noise_rate: 0.1, radius: 1.5 }
    }
}

const TICK_US: u32 = 250;

fn covered(cx: f64, cy: f64, r: f64, w: u16, h: u16) -> Vec<(u16, u16)> {
    let mut out = Vec::new();
    let (y0, y1) = ((cy - r).floor().max(0.0) as i64, (cy + r).ceil().min(h as f64 - 1.0) as i64);
    let (x0, x1) = ((cx - r).floor().max(0.0) as i64, (cx + r).ceil().min(w as f64 - 1.0) as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                out.push((x as u16, y as u16));
            }
        }
    }
    out
}

/// A dot leaving the sensor centre along the ray at angle
/// `class_id * GOLDEN_ANGLE`. Pixels it enters emit ON events, pixels it
/// leaves emit OFF events. Each sample jitters the start offset and the
/// speed (up to 10%) and adds uniform Poisson background noise.
pub fn synth_class(class_id: u32, sample_seed: u64, params: &SynthParams) -> Result<EventStream> {
    let SynthParams { width, height, duration_us, noise_rate, radius } = *params;
    if width < 8 || height < 8 || duration_us < 50_000 {
        return Err(Error::structural("synthetic streams need at least 8x8 pixels and 50 ms"));
    }
    if !(noise_rate >= 0.0 && noise_rate.is_finite()) || !(radius > 0.0) {
        return Err(Error::structural("noise rate must be non-negative and radius positive"));
    }
    let mut rng = rng::stream(sample_seed, &[0x5917, class_id as u64]);
    let angle = class_id as f64 * GOLDEN_ANGLE;
    let (dx, dy) = (angle.cos(), angle.sin());
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let reach = cx.min(cy) - radius;
    let start = rng.gen_range(0.0..0.15) * reach;
    let speed = reach / duration_us as f64 * rng.gen_range(0.9..1.1);

    let mut events = Vec::new();
    let mut prev: Vec<(u16, u16)> = Vec::new();
    let mut t = 0;
    while t < duration_us {
        let s = start + speed * t as f64;
        let now = covered(cx + s * dx, cy + s * dy, radius, width, height);
        for &(x, y) in &prev {
            if !now.contains(&(x, y)) {
                events.push(Event { t, x, y, p: 0 });
            }
        }
        for &(x, y) in &now {
            if !prev.contains(&(x, y)) {
                events.push(Event { t, x, y, p: 1 });
            }
        }
        prev = now;
        t += TICK_US;
    }

    let mean = noise_rate * width as f64 * height as f64 * duration_us as f64 / 100_000.0;
    if mean > 0.0 {
        let n = Poisson::new(mean).map_err(|e| Error::structural(e.to_string()))?.sample(&mut rng) as usize;
        for _ in 0..n {
            events.push(Event {
                t: rng.gen_range(0..duration_us),
                x: rng.gen_range(0..width),
                y: rng.gen_range(0..height),
                p: rng.gen_range(0..2),
            });
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(EventStream { width, height, duration: duration_us, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams::default();
        assert_eq!(synth_class(3, 9, &p).unwrap(), synth_class(3, 9, &p).unwrap());
        assert_ne!(synth_class(3, 9, &p).unwrap(), synth_class(3, 10, &p).unwrap());
        assert!(synth_class(0, 0, &SynthParams { width: 4, ..p }).is_err());
    }

    #[test]
    fn noiseless_events_stay_on_the_ray() {
        let p = SynthParams { noise_rate: 0.0, ..SynthParams::default() };
        for class in 0..6 {
            let s = synth_class(class, 1, &p).unwrap();
            assert!(!s.events.is_empty());
            s.validate().unwrap();
            let a = class as f64 * GOLDEN_ANGLE;
            for e in &s.events {
                let (rx, ry) = (e.x as f64 + 0.5 - 8.0, e.y as f64 + 0.5 - 8.0);
                let across = (-a.sin() * rx + a.cos() * ry).abs();
                let along = a.cos() * rx + a.sin() * ry;
                assert!(across <= p.radius + 1e-9, "class {class} event {e:?}");
                assert!(along >= -p.radius - 1e-9);
            }
        }
    }
}
