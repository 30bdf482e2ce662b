use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eventdata::{
    compose_double, crop_temporal, downsample_spatial, rasterize, read_events, synth_class, ClassPair, EventStream,
    FrameSequence, SynthParams,
};
use crate::rng;

/// Produces the frames of sample `index` of a class pair.
pub trait SampleSource {
    /// Number of distinct samples available for every class pair.
    fn samples_per_class(&self) -> usize;
    fn load(&self, class: ClassPair, index: usize) -> Result<FrameSequence>;
}

/// Side-by-side composition, optional temporal crop, spatial pooling and
/// binning.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPipeline {
    /// `[t0, t1)` window in microseconds.
    pub crop_us: Option<(u32, u32)>,
    pub downsample: (u16, u16),
    pub bin_ms: f64,
    pub binarize: bool,
}

impl StreamPipeline {
    pub fn apply(&self, left: &EventStream, right: &EventStream) -> Result<FrameSequence> {
        let mut s = compose_double(left, right)?;
        if let Some((t0, t1)) = self.crop_us {
            s = crop_temporal(&s, t0, t1)?;
        }
        if self.downsample != (1, 1) {
            s = downsample_spatial(&s, self.downsample.0, self.downsample.1)?;
        }
        rasterize(&s, self.bin_ms, self.binarize)
    }
}

/// Generated double streams: the left half shows base class `a`, the right
/// half base class `b`.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub params: SynthParams,
    pub pipeline: StreamPipeline,
    pub seed: u64,
    pub samples: usize,
}

impl SampleSource for SyntheticSource {
    fn samples_per_class(&self) -> usize {
        self.samples
    }

    fn load(&self, (a, b): ClassPair, index: usize) -> Result<FrameSequence> {
        if index >= self.samples {
            return Err(Error::structural(format!("sample {index} out of {}", self.samples)));
        }
        let left = synth_class(a, rng::derive(self.seed, &[index as u64, 0]), &self.params)?;
        let right = synth_class(b, rng::derive(self.seed, &[index as u64, 1]), &self.params)?;
        self.pipeline.apply(&left, &right)
    }
}

/// EVS1 recordings laid out as `<root>/<class>/<name>.evs`, class
/// directories named by their integer label. Sample `i` of pair `(a, b)`
/// composes the `i`-th file of `a` (by name) with file `i + 1` of `b`, so
/// `(a, a)` never pairs a recording with itself.
#[derive(Debug, Clone)]
pub struct Evs1DirSource {
    files: BTreeMap<u32, Vec<PathBuf>>,
    pub pipeline: StreamPipeline,
}

impl Evs1DirSource {
    pub fn open(root: &Path, pipeline: StreamPipeline) -> Result<Self> {
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(label) = entry.file_name().to_str().and_then(|n| n.parse::<u32>().ok()) else {
                continue;
            };
            let mut list: Vec<PathBuf> = fs::read_dir(entry.path())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "evs"))
                .collect();
            list.sort();
            if list.len() < 2 {
                return Err(Error::config(format!("class directory {} needs at least 2 recordings", label)));
            }
            files.insert(label, list);
        }
        if files.is_empty() {
            return Err(Error::config(format!("no class directories under {}", root.display())));
        }
        Ok(Evs1DirSource { files, pipeline })
    }

    pub fn classes(&self) -> Vec<u32> {
        self.files.keys().copied().collect()
    }

    fn read(&self, class: u32, index: usize) -> Result<EventStream> {
        let list = self.files.get(&class).ok_or_else(|| Error::structural(format!("unknown class {class}")))?;
        let path = &list[index % list.len()];
        read_events(&fs::read(path)?)
    }
}

impl SampleSource for Evs1DirSource {
    fn samples_per_class(&self) -> usize {
        self.files.values().map(Vec::len).min().unwrap_or(0)
    }

    fn load(&self, (a, b): ClassPair, index: usize) -> Result<FrameSequence> {
        if index >= self.samples_per_class() {
            return Err(Error::structural(format!("sample {index} out of {}", self.samples_per_class())));
        }
        self.pipeline.apply(&self.read(a, index)?, &self.read(b, index + 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventdata::{write_events, Event};

    fn pipeline() -> StreamPipeline {
        StreamPipeline { crop_us: Some((0, 100_000)), downsample: (2, 2), bin_ms: 5.0, binarize: false }
    }

    #[test]
    fn synthetic_pairs_have_double_width() {
        let src = SyntheticSource { params: SynthParams::default(), pipeline: pipeline(), seed: 4, samples: 10 };
        let f = src.load((1, 2), 3).unwrap();
        assert_eq!(f.frames.shape(), &[20, 2, 8, 16]);
        assert_eq!(f, src.load((1, 2), 3).unwrap());
        assert!(src.load((1, 2), 10).is_err());
    }

    #[test]
    fn evs1_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for class in [0u32, 1] {
            let sub = dir.path().join(class.to_string());
            fs::create_dir(&sub).unwrap();
            for i in 0..3u16 {
                let s = EventStream {
                    width: 4,
                    height: 4,
                    duration: 200_000,
                    events: vec![Event { t: 10, x: i, y: class as u16, p: 1 }],
                };
                fs::write(sub.join(format!("{i}.evs")), write_events(&s)).unwrap();
            }
        }
        let src = Evs1DirSource::open(dir.path(), pipeline()).unwrap();
        assert_eq!(src.classes(), vec![0, 1]);
        assert_eq!(src.samples_per_class(), 3);
        let f = src.load((0, 0), 2).unwrap();
        assert_eq!(f.frames.shape(), &[20, 2, 2, 4]);
        assert_eq!(f.total_count(), 2.0);
    }
}
