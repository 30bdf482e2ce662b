use crate::autodiff::{Real, Tensor};
use crate::error::Result;
use crate::eventdata::{
    make_meta_splits, sample_episode, Episode, Evs1DirSource, LabeledSample, MetaSplit, SampleSource, SplitPart,
    SyntheticSource,
};
use crate::harness::{DataSource, RunConfig};
use crate::meta::Task;
use crate::snn::LabeledBatch;

/// Sample source plus meta-split for one config.
pub struct Benchmark {
    source: Box<dyn SampleSource>,
    pub split: MetaSplit,
    gain: f64,
}

impl Benchmark {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let (source, classes): (Box<dyn SampleSource>, Vec<u32>) = match d.source {
            DataSource::Synthetic => (
                Box::new(SyntheticSource {
                    params: d.synth_params(),
                    pipeline: d.pipeline(),
                    seed: d.split_seed,
                    samples: d.samples_per_class,
                }),
                (0..d.base_classes).collect(),
            ),
            DataSource::Evs1 => {
                let src = Evs1DirSource::open(d.path.as_deref().expect("validated"), d.pipeline())?;
                let classes = src.classes();
                (Box::new(src), classes)
            }
        };
        let [a, b, c] = d.split;
        let split = make_meta_splits(&classes, (a, b, c), d.split_seed)?;
        Ok(Benchmark { source, split, gain: d.input_gain })
    }

    pub fn source(&self) -> &dyn SampleSource {
        self.source.as_ref()
    }

    pub fn episode(&self, part: SplitPart, ways: usize, shots: usize, query: usize, seed: u64) -> Result<Episode> {
        sample_episode(self.split.part(part), self.source.as_ref(), ways, shots, query, seed)
    }

    /// Stacks samples into a network batch, applying the input gain.
    pub fn batch<F: Real>(&self, samples: &[LabeledSample]) -> Result<LabeledBatch<F>> {
        let frames: Vec<Tensor<F>> = samples
            .iter()
            .map(|s| {
                let (shape, data) = s.frames.frames.clone().into_parts();
                Tensor::new(shape, data.into_iter().map(|v| F::of(v * self.gain)).collect())
            })
            .collect::<Result<_>>()?;
        let refs: Vec<(&Tensor<F>, usize)> = frames.iter().zip(samples).map(|(f, s)| (f, s.label)).collect();
        LabeledBatch::from_samples(&refs)
    }

    pub fn task<F: Real>(&self, cfg: &RunConfig, part: SplitPart, seed: u64) -> Result<Task<LabeledBatch<F>>> {
        let e = cfg.episode;
        let ep = self.episode(part, e.ways, e.shots, e.query, seed)?;
        Ok(Task { support: self.batch(&ep.support)?, query: self.batch(&ep.query)? })
    }
}
