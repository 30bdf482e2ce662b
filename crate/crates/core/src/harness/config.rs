use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eventdata::{SplitPart, StreamPipeline, SynthParams};
use crate::meta::{MetaHyper, MetaMode};
use crate::snn::{InputGeometry, LayerSpec, NetworkSpec, NeuronConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated trajectories, `base_classes` of them.
    Synthetic,
    /// EVS1 recordings under `path`, one directory per class.
    Evs1,
}

/// Where samples come from and how streams become frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub base_classes: u32,
    /// Geometry of one (single) synthetic stream.
    pub stream_width: u16,
    pub stream_height: u16,
    pub duration_ms: f64,
    /// Background events per pixel per 100 ms.
    pub noise_rate: f64,
    pub dot_radius: f64,
    pub samples_per_class: usize,
    /// `[t0, t1)` in ms applied after composition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop_ms: Option<[f64; 2]>,
    /// Column and row pooling factors.
    pub downsample: [u16; 2],
    pub bin_ms: f64,
    pub binarize: bool,
    /// Frames are multiplied by this before entering the network.
    pub input_gain: f64,
    /// Meta-train, meta-validation and meta-test task counts.
    pub split: [usize; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            base_classes: 6,
            stream_width: 16,
            stream_height: 16,
            duration_ms: 100.0,
            noise_rate: 0.1,
            dot_radius: 1.5,
            samples_per_class: 500,
            crop_ms: None,
            downsample: [2, 2],
            bin_ms: 5.0,
            binarize: false,
            input_gain: 1.0,
            split: [20, 8, 8],
            split_seed: 1,
        }
    }
}

impl DataConfig {
    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            width: self.stream_width,
            height: self.stream_height,
            duration_us: (self.duration_ms * 1000.0).round() as u32,
            noise_rate: self.noise_rate,
            radius: self.dot_radius,
        }
    }

    pub fn pipeline(&self) -> StreamPipeline {
        StreamPipeline {
            crop_us: self.crop_ms.map(|[a, b]| ((a * 1000.0).round() as u32, (b * 1000.0).round() as u32)),
            downsample: (self.downsample[0], self.downsample[1]),
            bin_ms: self.bin_ms,
            binarize: self.binarize,
        }
    }

    /// Length in ms of the streams that reach the rasterizer.
    pub fn effective_duration_ms(&self) -> f64 {
        match self.crop_ms {
            Some([a, b]) => b - a,
            None => self.duration_ms,
        }
    }

    /// Frame geometry after composition and pooling (synthetic source).
    pub fn frame_geometry(&self) -> InputGeometry {
        let w = 2 * self.stream_width;
        InputGeometry {
            width: w.div_ceil(self.downsample[0]) as usize,
            height: self.stream_height.div_ceil(self.downsample[1]) as usize,
            polarities: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.source == DataSource::Evs1 && self.path.is_none() {
            return Err(Error::config("data.source = \"evs1\" needs data.path"));
        }
        if self.source == DataSource::Synthetic {
            if self.base_classes == 0 {
                return Err(Error::config("data.base_classes must be positive"));
            }
            if self.stream_width < 8 || self.stream_height < 8 || self.duration_ms < 50.0 {
                return Err(Error::config("synthetic streams need at least 8x8 pixels and 50 ms"));
            }
            if !(self.noise_rate >= 0.0) || !(self.dot_radius > 0.0) {
                return Err(Error::config("noise_rate must be non-negative and dot_radius positive"));
            }
        }
        if self.downsample.contains(&0) {
            return Err(Error::config("downsample factors must be at least 1"));
        }
        if !(self.bin_ms > 0.0) || !(self.input_gain > 0.0 && self.input_gain.is_finite()) {
            return Err(Error::config("bin_ms and input_gain must be positive"));
        }
        if let Some([a, b]) = self.crop_ms {
            if !(a >= 0.0 && b > a && b <= self.duration_ms) {
                return Err(Error::config(format!("crop_ms [{a}, {b}) outside [0, {})", self.duration_ms)));
            }
        }
        Ok(())
    }
}

/// Ways, shots and queries per class of every episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub ways: usize,
    pub shots: usize,
    pub query: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { ways: 5, shots: 1, query: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub meta_iterations: usize,
    /// Validation accuracy is logged every this many iterations (0: never).
    pub eval_every: usize,
    /// Gradients flow through the last this many ms of each sequence.
    pub loss_window_ms: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { meta_iterations: 300, eval_every: 50, loss_window_ms: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub trials: usize,
    pub episodes_per_trial: usize,
    pub split: EvalSplit,
    /// Gate inner updates by magnitude during evaluation.
    pub thresholded: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 10, episodes_per_trial: 4, split: EvalSplit::Test, thresholded: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

impl From<EvalSplit> for SplitPart {
    fn from(s: EvalSplit) -> Self {
        match s {
            EvalSplit::Train => SplitPart::Train,
            EvalSplit::Val => SplitPart::Val,
            EvalSplit::Test => SplitPart::Test,
        }
    }
}

/// Non-meta comparison model for the update-magnitude study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Plain SGD iterations of the non-meta model.
    pub iterations: usize,
    /// Samples per class in each non-meta minibatch.
    pub samples_per_class: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { iterations: 100, samples_per_class: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub pretrain_max_iterations: usize,
    pub pretrain_target_accuracy: f64,
    /// Samples per class in each pre-training minibatch.
    pub pretrain_samples_per_class: usize,
    pub pretrain_lr: f64,
    /// Shots are presented one at a time, each followed by
    /// `readout_steps` SGD steps on the new readout.
    pub max_shots: usize,
    pub query_shots: usize,
    pub trials: usize,
    pub readout_steps: usize,
    /// `None` uses `meta.inner_lr`, the step size of MAML adaptation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_lr: Option<f64>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            pretrain_max_iterations: 300,
            pretrain_target_accuracy: 0.95,
            pretrain_samples_per_class: 1,
            pretrain_lr: 3e-3,
            max_shots: 10,
            query_shots: 20,
            trials: 10,
            readout_steps: 1,
            readout_lr: None,
        }
    }
}

/// Everything a command needs, loaded from one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub network: NetworkSpec,
    pub meta: MetaHyper,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// The synthetic desk-scale benchmark.
    pub fn desk() -> Self {
        let data = DataConfig::default();
        let neuron = NeuronConfig { dt: data.bin_ms, u_th: 0.1, ..NeuronConfig::default() };
        let conv = |name: &str, channels| LayerSpec::Conv {
            name: name.into(),
            channels,
            kernel: 5,
            stride: 1,
            padding: 2,
            neuron: None,
        };
        let network = NetworkSpec {
            input: data.frame_geometry(),
            neuron,
            layers: vec![
                conv("conv1", 8),
                LayerSpec::Pool { size: 2 },
                conv("conv2", 16),
                LayerSpec::Pool { size: 2 },
                LayerSpec::Dense { name: "out".into(), outputs: 5, neuron: None },
            ],
        };
        RunConfig {
            seed: 0,
            precision: Precision::F64,
            out_dir: PathBuf::from("runs"),
            data,
            network,
            meta: MetaHyper { inner_lr: 1.0, outer_lr: 3e-3, tasks_per_meta_batch: 4, ..MetaHyper::default() },
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            baseline: BaselineConfig::default(),
            transfer: TransferConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field and their consistency before any compute.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.network.validate()?;
        self.meta.validate()?;
        let ways = self.network.ways();
        let e = self.episode;
        if e.ways == 0 || e.shots == 0 || e.query == 0 {
            return Err(Error::config("episode ways, shots and query must be positive"));
        }
        if ways != e.ways {
            return Err(Error::config(format!("network readout has {ways} outputs for {}-way episodes", e.ways)));
        }
        if self.data.source == DataSource::Synthetic {
            let g = self.data.frame_geometry();
            if g != self.network.input {
                return Err(Error::config(format!(
                    "data produces {}x{}x{} frames but the network expects {}x{}x{}",
                    g.width, g.height, g.polarities, self.network.input.width, self.network.input.height,
                    self.network.input.polarities
                )));
            }
            let pairs = (self.data.base_classes as usize).pow(2);
            let [a, b, c] = self.data.split;
            if a + b + c > pairs {
                return Err(Error::config(format!("split {a}+{b}+{c} exceeds the {pairs} class pairs")));
            }
            if e.shots + e.query > self.data.samples_per_class {
                return Err(Error::config("shots + query exceed samples_per_class"));
            }
        }
        for (name, n) in [("train", self.data.split[0]), ("val", self.data.split[1]), ("test", self.data.split[2])] {
            if n < e.ways {
                return Err(Error::config(format!("{name} split has {n} tasks, fewer than {} ways", e.ways)));
            }
        }
        for layer in &self.network.layers {
            let n = self.network.neuron_for(layer);
            if (n.dt - self.data.bin_ms).abs() > 1e-12 {
                return Err(Error::config(format!("neuron dt {} differs from data.bin_ms {}", n.dt, self.data.bin_ms)));
            }
        }
        self.window()?;
        for f in &self.meta.freeze_set {
            if !self.network.layer_names().contains(f) {
                return Err(Error::config(format!("freeze_set names unknown layer '{f}'")));
            }
        }
        if self.eval.trials == 0 || self.eval.episodes_per_trial == 0 {
            return Err(Error::config("eval trials and episodes_per_trial must be positive"));
        }
        let t = &self.transfer;
        let readout_lr = t.readout_lr.unwrap_or(self.meta.inner_lr);
        if t.trials == 0 || t.query_shots == 0 || !(t.pretrain_lr > 0.0) || !(readout_lr > 0.0) {
            return Err(Error::config("transfer trials, query_shots and learning rates must be positive"));
        }
        if self.data.source == DataSource::Synthetic && t.max_shots + t.query_shots > self.data.samples_per_class {
            return Err(Error::config("transfer max_shots + query_shots exceed samples_per_class"));
        }
        Ok(())
    }

    /// `(total steps, burn-in steps, loss-window steps)`.
    pub fn window(&self) -> Result<(usize, usize, usize)> {
        crate::snn::window_split(self.data.effective_duration_ms(), self.data.bin_ms, self.train.loss_window_ms)
            .map_err(|e| Error::config(e.to_string()))
    }

    pub fn with_mode(mut self, mode: MetaMode) -> Self {
        self.meta.mode = mode;
        self
    }

    /// SHA-256 over the network description and the frame geometry. A
    /// checkpoint only loads under a config with the same hash.
    pub fn model_hash(&self) -> [u8; 32] {
        #[derive(Serialize)]
        struct Scope<'a> {
            network: &'a NetworkSpec,
            bin_ms: f64,
            duration_ms: f64,
            window_ms: f64,
        }
        let scope = Scope {
            network: &self.network,
            bin_ms: self.data.bin_ms,
            duration_ms: self.data.effective_duration_ms(),
            window_ms: self.train.loss_window_ms,
        };
        let text = toml::to_string(&scope).expect("hash scope serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}
