//! Event streams, the EVS1 file format, composition and rasterization,
//! meta-splits over class pairs, episodic sampling and a synthetic event
//! generator.

mod episode;
mod frames;
mod source;
mod splits;
mod stream;
mod synth;

pub use episode::{sample_episode, Episode, LabeledSample};
pub use frames::{rasterize, FrameSequence};
pub use source::{Evs1DirSource, SampleSource, StreamPipeline, SyntheticSource};
pub use splits::{make_meta_splits, ClassPair, MetaSplit, SplitPart};
pub use stream::{compose_double, crop_temporal, downsample_spatial, read_events, write_events, Event, EventStream};
pub use synth::{synth_class, SynthParams, GOLDEN_ANGLE};
