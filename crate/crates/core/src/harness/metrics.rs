use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::meta::MagnitudeStats;

/// Results of one command. Written as long-format CSV rows
/// `section,key,index,value`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    /// Query accuracy of each trial, in trial order.
    pub trial_accuracy: Vec<f64>,
    /// Outer loss of each meta-iteration (or training iteration).
    pub losses: Vec<f64>,
    /// Named series such as validation accuracy over training.
    pub series: Vec<(String, Vec<f64>)>,
    /// Named scalars such as ratios or shots-to-parity.
    pub scalars: Vec<(String, f64)>,
    pub update_stats: Vec<(String, MagnitudeStats)>,
    pub wall_clock_s: f64,
}

/// Mean and population standard deviation; `(0, 0)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsRecord {
    pub fn mean(&self) -> f64 {
        mean_std(&self.trial_accuracy).0
    }

    pub fn std(&self) -> f64 {
        mean_std(&self.trial_accuracy).1
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn series(&self, key: &str) -> Option<&[f64]> {
        self.series.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    pub fn stats(&self, key: &str) -> Option<&MagnitudeStats> {
        self.update_stats.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Equality of everything except wall-clock time.
    pub fn same_results(&self, other: &MetricsRecord) -> bool {
        MetricsRecord { wall_clock_s: 0.0, ..self.clone() } == MetricsRecord { wall_clock_s: 0.0, ..other.clone() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["section", "key", "index", "value"]).map_err(|e| Error::Io(e.into()))?;
        let mut row = |section: &str, key: &str, index: usize, value: f64| {
            out.write_record([section, key, &index.to_string(), &value.to_string()])
        };
        let io = |e: csv::Error| Error::Io(e.into());
        for (i, a) in self.trial_accuracy.iter().enumerate() {
            row("trial", "accuracy", i, *a).map_err(io)?;
        }
        let (mean, std) = mean_std(&self.trial_accuracy);
        row("summary", "mean", 0, mean).map_err(io)?;
        row("summary", "std", 0, std).map_err(io)?;
        for (i, l) in self.losses.iter().enumerate() {
            row("loss", "outer", i, *l).map_err(io)?;
        }
        for (k, vs) in &self.series {
            for (i, v) in vs.iter().enumerate() {
                row("series", k, i, *v).map_err(io)?;
            }
        }
        for (k, v) in &self.scalars {
            row("scalar", k, 0, *v).map_err(io)?;
        }
        for (k, s) in &self.update_stats {
            for (field, v) in [
                ("avg", s.avg),
                ("sum", s.sum),
                ("max", s.max),
                ("nonzero", s.nonzero as f64),
                ("count", s.count as f64),
            ] {
                row("stats", &format!("{k}.{field}"), 0, v).map_err(io)?;
            }
        }
        row("timing", "wall_clock_s", 0, self.wall_clock_s).map_err(io)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rec = MetricsRecord::default();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        for (line, row) in reader.records().enumerate() {
            let bad = |msg: &str| Error::config(format!("metrics line {}: {msg}", line + 2));
            let row = row.map_err(|e| bad(&e.to_string()))?;
            if row.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let value: f64 = row[3].parse().map_err(|_| bad("value is not a number"))?;
            let (section, key) = (&row[0], &row[1]);
            match section {
                "summary" => {}
                "trial" => rec.trial_accuracy.push(value),
                "loss" => rec.losses.push(value),
                "series" => match rec.series.iter_mut().find(|(k, _)| k == key) {
                    Some((_, v)) => v.push(value),
                    None => rec.series.push((key.to_string(), vec![value])),
                },
                "scalar" => rec.scalars.push((key.to_string(), value)),
                "stats" => {
                    let (name, field) = key.rsplit_once('.').ok_or_else(|| bad("stats key needs a field"))?;
                    if !rec.update_stats.iter().any(|(k, _)| k == name) {
                        rec.update_stats.push((name.to_string(), MagnitudeStats::default()));
                    }
                    let s = &mut rec.update_stats.iter_mut().find(|(k, _)| k == name).expect("inserted").1;
                    match field {
                        "avg" => s.avg = value,
                        "sum" => s.sum = value,
                        "max" => s.max = value,
                        "nonzero" => s.nonzero = value as usize,
                        "count" => s.count = value as usize,
                        _ => return Err(bad("unknown stats field")),
                    }
                }
                "timing" => rec.wall_clock_s = value,
                _ => return Err(bad("unknown section")),
            }
        }
        Ok(rec)
    }
}

/// Writes a plain table with a header row.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record(header).map_err(io)?;
    for r in rows {
        out.write_record(r.iter().map(|v| v.to_string())).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Counts of `values` in `bins` logarithmic bins spanning `[lo, hi)`;
/// values outside the span are clamped into the end bins. Returns
/// `(lower edge, upper edge, count)` per bin.
pub fn log_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let (llo, lhi) = (lo.log10(), hi.log10());
    let width = (lhi - llo) / bins as f64;
    let mut counts = vec![0; bins];
    for &v in values {
        if v <= 0.0 {
            continue;
        }
        let k = ((v.log10() - llo) / width).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (10f64.powf(llo + i as f64 * width), 10f64.powf(llo + (i + 1) as f64 * width), c))
        .collect()
}
