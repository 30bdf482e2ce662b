use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, stack, Node, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng;
use crate::snn::lif::{step, LifState, StepCtx, Synapse};
use crate::snn::{decay_constants, spike_op_for, NeuronConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputGeometry {
    pub width: usize,
    pub height: usize,
    #[serde(default = "two")]
    pub polarities: usize,
}

fn two() -> usize {
    2
}
fn one() -> usize {
    1
}
fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        name: String,
        channels: usize,
        #[serde(default = "five")]
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "two")]
        padding: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        neuron: Option<NeuronConfig>,
    },
    /// 2x2 max pooling of the previous layer's spikes; odd extents are
    /// cropped by one row/column first.
    Pool {
        #[serde(default = "two")]
        size: usize,
    },
    Dense {
        name: String,
        outputs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        neuron: Option<NeuronConfig>,
    },
}

/// Layer stack plus input geometry. The final layer is the dense readout
/// whose width is the number of ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: InputGeometry,
    #[serde(default)]
    pub neuron: NeuronConfig,
    pub layers: Vec<LayerSpec>,
}

/// Output extent of one layer, channels-first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LayerShape {
    /// `W x H x C`, the way architecture tables print it.
    pub fn whc(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }
}

impl NetworkSpec {
    fn conv(name: &str, channels: usize) -> LayerSpec {
        LayerSpec::Conv { name: name.into(), channels, kernel: 5, stride: 1, padding: 2, neuron: None }
    }

    /// Three 5x5 convolutions (32, 64, 128 channels), each followed by 2x2
    /// pooling, and a dense readout.
    pub fn three_conv(input: InputGeometry, channels: [usize; 3], ways: usize, neuron: NeuronConfig) -> Self {
        NetworkSpec {
            input,
            neuron,
            layers: vec![
                Self::conv("conv1", channels[0]),
                LayerSpec::Pool { size: 2 },
                Self::conv("conv2", channels[1]),
                LayerSpec::Pool { size: 2 },
                Self::conv("conv3", channels[2]),
                LayerSpec::Pool { size: 2 },
                LayerSpec::Dense { name: "out".into(), outputs: ways, neuron: None },
            ],
        }
    }

    /// Full-size network for 32x16 double-digit streams.
    pub fn nmnist(ways: usize) -> Self {
        Self::three_conv(InputGeometry { width: 32, height: 16, polarities: 2 }, [32, 64, 128], ways, NeuronConfig::default())
    }

    /// Full-size network for 80x30 double-letter streams.
    pub fn asl_dvs(ways: usize) -> Self {
        Self::three_conv(InputGeometry { width: 80, height: 30, polarities: 2 }, [32, 64, 128], ways, NeuronConfig::default())
    }

    pub fn ways(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) => *outputs,
            _ => 0,
        }
    }

    /// Names of the parameterized layers, in order.
    pub fn layer_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { name, .. } | LayerSpec::Dense { name, .. } => Some(name.clone()),
                LayerSpec::Pool { .. } => None,
            })
            .collect()
    }

    pub fn neuron_for(&self, layer: &LayerSpec) -> NeuronConfig {
        match layer {
            LayerSpec::Conv { neuron, .. } | LayerSpec::Dense { neuron, .. } => neuron.unwrap_or(self.neuron),
            LayerSpec::Pool { .. } => self.neuron,
        }
    }

    pub fn validate(&self) -> Result<()> {
        layer_shapes(self).map(|_| ())
    }

    /// Replaces the readout width.
    pub fn with_ways(&self, ways: usize) -> Self {
        let mut spec = self.clone();
        if let Some(LayerSpec::Dense { outputs, .. }) = spec.layers.last_mut() {
            *outputs = ways;
        }
        spec
    }
}

/// Output shape of every layer, checking that the stack chains.
pub fn layer_shapes(spec: &NetworkSpec) -> Result<Vec<LayerShape>> {
    let g = spec.input;
    if g.width == 0 || g.height == 0 || g.polarities == 0 {
        return Err(Error::config("input geometry must be non-empty"));
    }
    spec.neuron.validate()?;
    let (mut c, mut h, mut w) = (g.polarities, g.height, g.width);
    let mut flat = false;
    let mut names = Vec::new();
    let mut out = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if flat {
            return Err(Error::config("the dense readout must be the last layer"));
        }
        let shape = match layer {
            LayerSpec::Conv { name, channels, kernel, stride, padding, neuron } => {
                if let Some(n) = neuron {
                    n.validate()?;
                }
                if *channels == 0 || *kernel == 0 || *stride == 0 {
                    return Err(Error::config(format!("conv layer '{name}' has a zero dimension")));
                }
                if *kernel > h + 2 * padding || *kernel > w + 2 * padding {
                    return Err(Error::config(format!("conv layer '{name}' kernel exceeds its {h}x{w} input")));
                }
                names.push(name.clone());
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                c = *channels;
                LayerShape { name: name.clone(), channels: c, height: h, width: w }
            }
            LayerSpec::Pool { size } => {
                if *size != 2 {
                    return Err(Error::config(format!("only 2x2 pooling is supported, got {size}")));
                }
                if h < 2 || w < 2 {
                    return Err(Error::config(format!("cannot pool a {h}x{w} map")));
                }
                h /= 2;
                w /= 2;
                LayerShape { name: format!("pool{i}"), channels: c, height: h, width: w }
            }
            LayerSpec::Dense { name, outputs, neuron } => {
                if let Some(n) = neuron {
                    n.validate()?;
                }
                if *outputs == 0 {
                    return Err(Error::config(format!("dense layer '{name}' has no outputs")));
                }
                names.push(name.clone());
                flat = true;
                c = *outputs;
                h = 1;
                w = 1;
                LayerShape { name: name.clone(), channels: c, height: 1, width: 1 }
            }
        };
        out.push(shape);
    }
    if !flat {
        return Err(Error::config("the network must end with a dense readout"));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::config(format!("duplicate layer name '{n}'")));
        }
    }
    Ok(out)
}

/// Weights and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub name: String,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// Network parameters (`theta`), one entry per conv/dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Real> ParamSet<F> {
    /// Flat `[w0, b0, w1, b1, ...]`.
    pub fn tensors(&self) -> Vec<Tensor<F>> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    /// Owning layer name of each entry of [`tensors`](Self::tensors).
    pub fn groups(&self) -> Vec<String> {
        self.layers.iter().flat_map(|l| [l.name.clone(), l.name.clone()]).collect()
    }

    /// Rebuilds a set with this layout from flat tensors.
    pub fn with_tensors(&self, tensors: Vec<Tensor<F>>) -> Result<Self> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(Error::structural(format!(
                "expected {} tensors, got {}",
                2 * self.layers.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(Error::structural(format!("shape mismatch for layer '{}'", l.name)));
            }
            layers.push(LayerParams { name: l.name.clone(), weight: w, bias: b });
        }
        Ok(ParamSet { layers })
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams<F>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Fresh graph leaves for every tensor.
    pub fn to_nodes(&self, requires_grad: bool) -> Vec<Node<F>> {
        self.tensors().into_iter().map(|t| Node::leaf(t, requires_grad)).collect()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { name: l.name.clone(), weight: l.weight.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }
}

/// Uniform `+-sqrt(1/fan_in)` weights and zero biases.
pub fn build_network<F: Real>(spec: &NetworkSpec, seed: u64) -> Result<ParamSet<F>> {
    use rand::Rng;

    layer_shapes(spec)?;
    let (mut c, mut h, mut w) = (spec.input.polarities, spec.input.height, spec.input.width);
    let mut layers = Vec::new();
    for layer in &spec.layers {
        let (name, wshape, fan_in, outs) = match layer {
            LayerSpec::Conv { name, channels, kernel, stride, padding, .. } => {
                let shape = vec![*channels, c, *kernel, *kernel];
                let fan_in = c * kernel * kernel;
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                c = *channels;
                (name, shape, fan_in, *channels)
            }
            LayerSpec::Pool { .. } => {
                h /= 2;
                w /= 2;
                continue;
            }
            LayerSpec::Dense { name, outputs, .. } => {
                let fan_in = c * h * w;
                (name, vec![*outputs, fan_in], fan_in, *outputs)
            }
        };
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut r = rng::stream(seed, &[0x1A7E, layers.len() as u64]);
        let n: usize = wshape.iter().product();
        let vals: Vec<F> = (0..n).map(|_| F::of(r.gen_range(-bound..bound))).collect();
        layers.push(LayerParams {
            name: name.clone(),
            weight: Tensor::new(wshape, vals)?,
            bias: Tensor::zeros(&[outs]),
        });
    }
    Ok(ParamSet { layers })
}

/// A batch of rasterized samples: frames `[T,B,P,H,W]` and labels `[B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<F> {
    pub frames: Tensor<F>,
    pub labels: Vec<usize>,
}

impl<F: Real> LabeledBatch<F> {
    /// Interleaves per-sample `[T,P,H,W]` frame stacks into `[T,B,P,H,W]`.
    pub fn from_samples(samples: &[(&Tensor<F>, usize)]) -> Result<Self> {
        let (first, _) = samples.first().ok_or_else(|| Error::structural("empty batch"))?;
        let shape = first.shape().to_vec();
        let (&t, rest) = shape.split_first().ok_or_else(|| Error::structural("frames need a time axis"))?;
        let per: usize = rest.iter().product();
        let b = samples.len();
        let mut data = vec![F::zero(); t * b * per];
        for (j, (frames, _)) in samples.iter().enumerate() {
            if frames.shape() != shape.as_slice() {
                return Err(Error::structural(format!(
                    "sample frames {:?} differ from {:?}",
                    frames.shape(),
                    shape
                )));
            }
            for step in 0..t {
                let dst = (step * b + j) * per;
                data[dst..dst + per].copy_from_slice(&frames.data()[step * per..(step + 1) * per]);
            }
        }
        let mut full = vec![t, b];
        full.extend_from_slice(rest);
        Ok(LabeledBatch { frames: Tensor::new(full, data)?, labels: samples.iter().map(|(_, l)| *l).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.frames.shape().first().copied().unwrap_or(0)
    }
}

/// `(total steps, burn-in steps, loss-window steps)` for a sequence of
/// `duration_ms` simulated at `dt_ms` with gradients over the last
/// `window_ms`.
pub fn window_split(duration_ms: f64, dt_ms: f64, window_ms: f64) -> Result<(usize, usize, usize)> {
    if !(dt_ms > 0.0) {
        return Err(Error::structural("dt must be positive"));
    }
    let total = (duration_ms / dt_ms).round() as usize;
    let window = (window_ms / dt_ms).round() as usize;
    if window == 0 || window > total {
        return Err(Error::structural(format!("loss window of {window} steps does not fit {total} steps")));
    }
    Ok((total, total - window, window))
}

enum Stage {
    Lif { param: usize, synapse: Synapse, config: NeuronConfig, flatten: bool, pre: Vec<usize>, post: Vec<usize> },
    Pool { h: usize, w: usize },
    Flatten { n: usize },
}

/// Runs the network over `frames` (`[T,B,P,H,W]`) from zero state and
/// returns the readout membrane potentials of the last `window` steps,
/// `[window,B,K]`. The first `burn_in` steps run without recording.
///
/// `params` is the flat `[w0, b0, w1, b1, ...]` list from
/// [`ParamSet::to_nodes`] or an adapted copy of it.
pub fn snn_forward<F: Real>(
    spec: &NetworkSpec,
    params: &[Node<F>],
    frames: &Tensor<F>,
    burn_in: usize,
    window: usize,
) -> Result<Node<F>> {
    let t_total = frames.shape().first().copied().unwrap_or(0);
    if window == 0 || window > t_total || burn_in + window != t_total {
        return Err(Error::structural(format!(
            "burn-in {burn_in} + window {window} must equal the {t_total} frames"
        )));
    }
    let outs = run(spec, params, frames, burn_in, false)?;
    stack(&outs)
}

/// Spikes entering the readout layer at every step, `[T,B,N]`, computed
/// without recording. `params` may omit the readout's weight and bias.
pub fn snn_features<F: Real>(spec: &NetworkSpec, params: &[Node<F>], frames: &Tensor<F>) -> Result<Tensor<F>> {
    let _guard = no_grad();
    let outs = run(spec, params, frames, 0, true)?;
    let parts: Vec<Tensor<F>> = outs.iter().map(Node::to_tensor).collect();
    Tensor::stack(&parts)
}

/// The readout layer alone, as a network whose input is an `N`-channel
/// 1x1 map; feed it [`snn_features`] reshaped to `[T,B,N,1,1]`.
pub fn readout_spec(spec: &NetworkSpec) -> Result<NetworkSpec> {
    let shapes = layer_shapes(spec)?;
    let before = &shapes[shapes.len() - 2..shapes.len() - 1];
    let n = match before.first() {
        Some(s) => s.channels * s.height * s.width,
        None => spec.input.polarities * spec.input.height * spec.input.width,
    };
    let last = spec.layers.last().expect("validated").clone();
    Ok(NetworkSpec {
        input: InputGeometry { width: 1, height: 1, polarities: n },
        neuron: spec.neuron_for(&last),
        layers: vec![last],
    })
}

fn run<F: Real>(
    spec: &NetworkSpec,
    params: &[Node<F>],
    frames: &Tensor<F>,
    burn_in: usize,
    features: bool,
) -> Result<Vec<Node<F>>> {
    let shapes = layer_shapes(spec)?;
    let &[t_total, batch, pol, h, w] = frames.shape() else {
        return Err(Error::structural(format!("frames must be [T,B,P,H,W], got {:?}", frames.shape())));
    };
    if (pol, h, w) != (spec.input.polarities, spec.input.height, spec.input.width) {
        return Err(Error::structural(format!(
            "frames are {pol}x{h}x{w}, network expects {}x{}x{}",
            spec.input.polarities, spec.input.height, spec.input.width
        )));
    }

    let mut stages = Vec::new();
    let mut pre = vec![batch, pol, h, w];
    let mut param = 0;
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        match layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let post = vec![batch, shape.channels, shape.height, shape.width];
                stages.push(Stage::Lif {
                    param,
                    synapse: Synapse::Conv { stride: *stride, padding: *padding },
                    config: spec.neuron_for(layer),
                    flatten: false,
                    pre: pre.clone(),
                    post: post.clone(),
                });
                pre = post;
                param += 2;
            }
            LayerSpec::Pool { .. } => {
                let (ph, pw) = (pre[2] / 2 * 2, pre[3] / 2 * 2);
                stages.push(Stage::Pool { h: ph, w: pw });
                pre = vec![batch, pre[1], ph / 2, pw / 2];
            }
            LayerSpec::Dense { outputs, .. } => {
                let n: usize = pre[1..].iter().product();
                if features {
                    stages.push(Stage::Flatten { n });
                    break;
                }
                stages.push(Stage::Lif {
                    param,
                    synapse: Synapse::Dense,
                    config: spec.neuron_for(layer),
                    flatten: pre.len() > 2,
                    pre: vec![batch, n],
                    post: vec![batch, *outputs],
                });
                pre = vec![batch, n];
                param += 2;
            }
        }
    }
    let needed = if features { param..=param + 2 } else { param..=param };
    if !needed.contains(&params.len()) {
        return Err(Error::structural(format!("network needs {param} parameter tensors, got {}", params.len())));
    }

    let mut ctxs = Vec::new();
    let mut states = Vec::new();
    for stage in &stages {
        if let Stage::Lif { config, pre, post, .. } = stage {
            ctxs.push((decay_constants(config)?, spike_op_for(config)));
            states.push(LifState::<F>::zeros(pre, post));
        }
    }

    let mut outs = Vec::with_capacity(t_total - burn_in.min(t_total));
    for t in 0..t_total {
        let _guard = (t < burn_in).then(no_grad);
        let mut signal = Node::constant(frames.index0(t)?);
        let mut last_u = None;
        let mut li = 0;
        for stage in &stages {
            match stage {
                Stage::Lif { param, synapse, config, flatten, pre, .. } => {
                    if *flatten {
                        signal = signal.reshape(pre)?;
                    }
                    let (decay, spike) = &ctxs[li];
                    let ctx = StepCtx { config, decay: *decay, spike, synapse: *synapse };
                    let (next, s, u) = step(&states[li], &signal, &params[*param], &params[*param + 1], &ctx)?;
                    states[li] = next;
                    signal = s;
                    last_u = Some(u);
                    li += 1;
                }
                Stage::Pool { h, w } => {
                    signal = signal.crop2d(*h, *w)?.maxpool2()?;
                }
                Stage::Flatten { n } => {
                    signal = signal.reshape(&[batch, *n])?;
                    last_u = Some(signal.clone());
                }
            }
        }
        if t >= burn_in {
            outs.push(last_u.expect("network has a readout"));
        }
    }
    Ok(outs)
}
