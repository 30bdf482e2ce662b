use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Magnitudes `|after - before|` of a set of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MagnitudeStats {
    /// Mean over the nonzero updates.
    pub avg: f64,
    pub sum: f64,
    pub max: f64,
    pub nonzero: usize,
    /// Parameters inspected, zero updates included.
    pub count: usize,
}

impl MagnitudeStats {
    fn push(&mut self, d: f64) {
        self.count += 1;
        if d != 0.0 {
            self.nonzero += 1;
            self.sum += d;
            self.max = self.max.max(d);
        }
    }

    fn finish(mut self) -> Self {
        self.avg = if self.nonzero > 0 { self.sum / self.nonzero as f64 } else { 0.0 };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateStats {
    pub per_layer: Vec<(String, MagnitudeStats)>,
    pub overall: MagnitudeStats,
    /// Every nonzero magnitude, in parameter order, for histograms.
    pub magnitudes: Vec<f64>,
}

impl UpdateStats {
    pub fn layer(&self, name: &str) -> Option<&MagnitudeStats> {
        self.per_layer.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

/// Compares two parameter lists; `groups[i]` names the layer owning
/// tensor `i`.
pub fn update_stats<F: Real>(before: &[Tensor<F>], after: &[Tensor<F>], groups: &[String]) -> Result<UpdateStats> {
    if before.len() != after.len() || before.len() != groups.len() {
        return Err(Error::structural("update statistics need matching parameter lists and groups"));
    }
    let mut out = UpdateStats::default();
    let mut overall = MagnitudeStats::default();
    for ((b, a), name) in before.iter().zip(after).zip(groups) {
        if b.shape() != a.shape() {
            return Err(Error::structural(format!("parameter shapes {:?} and {:?} differ", b.shape(), a.shape())));
        }
        let idx = match out.per_layer.iter().position(|(n, _)| n == name) {
            Some(i) => i,
            None => {
                out.per_layer.push((name.clone(), MagnitudeStats::default()));
                out.per_layer.len() - 1
            }
        };
        for (x, y) in b.data().iter().zip(a.data()) {
            let d = (y.f64() - x.f64()).abs();
            out.per_layer[idx].1.push(d);
            overall.push(d);
            if d != 0.0 {
                out.magnitudes.push(d);
            }
        }
    }
    for (_, s) in &mut out.per_layer {
        *s = s.finish();
    }
    out.overall = overall.finish();
    Ok(out)
}
