use crate::error::{Error, Result};

/// One DVS event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub p: u8,
}

/// Time-ordered events of a `width x height` sensor over `duration` µs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub duration: u32,
    pub events: Vec<Event>,
}

const MAGIC: &[u8; 4] = b"EVS1";
const HEADER: usize = 16;
const RECORD: usize = 9;

impl EventStream {
    pub fn empty(width: u16, height: u16, duration: u32) -> Self {
        EventStream { width, height, duration, events: Vec::new() }
    }

    /// Checks ordering, polarity and bounds.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.t < last {
                return Err(Error::structural(format!("event {i} at t={} precedes t={last}", e.t)));
            }
            if e.p > 1 || e.x >= self.width || e.y >= self.height || e.t >= self.duration {
                return Err(Error::structural(format!("event {i} {e:?} out of range")));
            }
            last = e.t;
        }
        Ok(())
    }
}

pub fn write_events(s: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + RECORD * s.events.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&s.width.to_le_bytes());
    out.extend_from_slice(&s.height.to_le_bytes());
    out.extend_from_slice(&s.duration.to_le_bytes());
    out.extend_from_slice(&(s.events.len() as u32).to_le_bytes());
    for e in &s.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
    }
    out
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

pub fn read_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER {
        return Err(Error::format(bytes.len(), format!("header needs {HEADER} bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected EVS1"));
    }
    let (width, height, duration) = (u16_at(bytes, 4), u16_at(bytes, 6), u32_at(bytes, 8));
    let count = u32_at(bytes, 12) as usize;
    let need = HEADER + count * RECORD;
    if bytes.len() < need {
        let complete = (bytes.len() - HEADER) / RECORD;
        return Err(Error::format(
            HEADER + complete * RECORD,
            format!("truncated: header declares {count} events, {complete} complete records present"),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(need, format!("{} trailing bytes after the last record", bytes.len() - need)));
    }
    let mut events = Vec::with_capacity(count);
    let mut last = 0;
    for i in 0..count {
        let o = HEADER + i * RECORD;
        let e = Event { t: u32_at(bytes, o), x: u16_at(bytes, o + 4), y: u16_at(bytes, o + 6), p: bytes[o + 8] };
        if e.t < last {
            return Err(Error::format(o, format!("timestamp {} precedes {last}", e.t)));
        }
        if e.p > 1 {
            return Err(Error::format(o + 8, format!("polarity {} is not 0 or 1", e.p)));
        }
        if e.x >= width || e.y >= height {
            return Err(Error::format(o + 4, format!("pixel ({}, {}) outside {width}x{height}", e.x, e.y)));
        }
        if e.t >= duration {
            return Err(Error::format(o, format!("timestamp {} beyond duration {duration}", e.t)));
        }
        last = e.t;
        events.push(e);
    }
    Ok(EventStream { width, height, duration, events })
}

/// Places `b` to the right of `a`. At equal timestamps events of `a` come
/// first.
pub fn compose_double(a: &EventStream, b: &EventStream) -> Result<EventStream> {
    if a.height != b.height || a.duration != b.duration {
        return Err(Error::structural(format!(
            "cannot compose {}x{} over {}us with {}x{} over {}us",
            a.width, a.height, a.duration, b.width, b.height, b.duration
        )));
    }
    let width = a
        .width
        .checked_add(b.width)
        .ok_or_else(|| Error::structural("composed width overflows 16 bits"))?;
    let mut events = Vec::with_capacity(a.events.len() + b.events.len());
    let (mut i, mut j) = (0, 0);
    while i < a.events.len() || j < b.events.len() {
        let take_a = j == b.events.len() || (i < a.events.len() && a.events[i].t <= b.events[j].t);
        if take_a {
            events.push(a.events[i]);
            i += 1;
        } else {
            let e = b.events[j];
            events.push(Event { x: e.x + a.width, ..e });
            j += 1;
        }
    }
    Ok(EventStream { width, height: a.height, duration: a.duration, events })
}

/// Pools pixels by `fx` columns and `fy` rows.
pub fn downsample_spatial(s: &EventStream, fx: u16, fy: u16) -> Result<EventStream> {
    if fx == 0 || fy == 0 {
        return Err(Error::structural("downsample factors must be at least 1"));
    }
    Ok(EventStream {
        width: s.width.div_ceil(fx),
        height: s.height.div_ceil(fy),
        duration: s.duration,
        events: s.events.iter().map(|e| Event { x: e.x / fx, y: e.y / fy, ..*e }).collect(),
    })
}

/// Keeps `[t0, t1)` and shifts it to start at zero.
pub fn crop_temporal(s: &EventStream, t0: u32, t1: u32) -> Result<EventStream> {
    if t0 >= t1 || t1 > s.duration {
        return Err(Error::structural(format!("crop [{t0}, {t1}) invalid for duration {}", s.duration)));
    }
    Ok(EventStream {
        width: s.width,
        height: s.height,
        duration: t1 - t0,
        events: s
            .events
            .iter()
            .filter(|e| e.t >= t0 && e.t < t1)
            .map(|e| Event { t: e.t - t0, ..*e })
            .collect(),
    })
}
