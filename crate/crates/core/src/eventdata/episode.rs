use rand::seq::index;

use crate::error::{Error, Result};
use crate::eventdata::{ClassPair, FrameSequence, SampleSource};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub frames: FrameSequence,
    /// Position of the sample's class within the episode, `0..ways`.
    pub label: usize,
    /// Sample index within its class.
    pub index: usize,
}

/// One K-way few-shot task: support set for adaptation, disjoint query set
/// for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    /// The episode's classes; label `i` is `classes[i]`.
    pub classes: Vec<ClassPair>,
    pub support: Vec<LabeledSample>,
    pub query: Vec<LabeledSample>,
}

/// Draws `ways` classes from `tasks` and, per class, `shots` support and
/// `query` query samples without overlap. Samples are ordered class by
/// class.
pub fn sample_episode(
    tasks: &[ClassPair],
    source: &dyn SampleSource,
    ways: usize,
    shots: usize,
    query: usize,
    seed: u64,
) -> Result<Episode> {
    if ways == 0 || ways > tasks.len() {
        return Err(Error::structural(format!("{ways}-way episode from {} tasks", tasks.len())));
    }
    let per_class = source.samples_per_class();
    if shots + query > per_class {
        return Err(Error::structural(format!(
            "{shots} shots + {query} queries exceed the {per_class} samples per class"
        )));
    }
    let mut rng = rng::stream(seed, &[0xE915]);
    let picked = index::sample(&mut rng, tasks.len(), ways).into_vec();
    let classes: Vec<ClassPair> = picked.iter().map(|&i| tasks[i]).collect();
    let mut support = Vec::with_capacity(ways * shots);
    let mut queries = Vec::with_capacity(ways * query);
    for (label, &class) in classes.iter().enumerate() {
        let draw = index::sample(&mut rng, per_class, shots + query).into_vec();
        for (k, &i) in draw.iter().enumerate() {
            let s = LabeledSample { frames: source.load(class, i)?, label, index: i };
            if k < shots {
                support.push(s);
            } else {
                queries.push(s);
            }
        }
    }
    Ok(Episode { seed, classes, support, query: queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventdata::{StreamPipeline, SynthParams, SyntheticSource};

    fn source() -> SyntheticSource {
        SyntheticSource {
            params: SynthParams::default(),
            pipeline: StreamPipeline { crop_us: None, downsample: (2, 2), bin_ms: 10.0, binarize: false },
            seed: 0,
            samples: 12,
        }
    }

    #[test]
    fn one_shot_five_way_shape() {
        let tasks: Vec<ClassPair> = (0..8).map(|i| (i, i + 1)).collect();
        let e = sample_episode(&tasks, &source(), 5, 1, 5, 42).unwrap();
        assert_eq!(e.support.len(), 5);
        assert_eq!(e.query.len(), 25);
        for label in 0..5 {
            assert_eq!(e.support.iter().filter(|s| s.label == label).count(), 1);
            let sup: Vec<_> = e.support.iter().filter(|s| s.label == label).map(|s| s.index).collect();
            assert!(e.query.iter().filter(|q| q.label == label).all(|q| !sup.contains(&q.index)));
        }
        assert_eq!(e, sample_episode(&tasks, &source(), 5, 1, 5, 42).unwrap());
        assert!(sample_episode(&tasks[..4], &source(), 5, 1, 5, 42).is_err());
        assert!(sample_episode(&tasks, &source(), 5, 6, 7, 42).is_err());
    }
}
