use crate::autodiff::{Node, Real};
use crate::error::{Error, Result};
use crate::meta::Learner;
use crate::snn::{readout_and_loss, snn_forward, LabeledBatch, NetworkSpec, Readout};

/// The spiking network as a meta-learner: loss is the cross-entropy of the
/// max-over-window readout.
#[derive(Debug, Clone)]
pub struct SnnLearner {
    pub spec: NetworkSpec,
    pub burn_in: usize,
    pub window: usize,
}

impl SnnLearner {
    pub fn new(spec: NetworkSpec, burn_in: usize, window: usize) -> Result<Self> {
        spec.validate()?;
        if window == 0 {
            return Err(Error::config("loss window must cover at least one step"));
        }
        Ok(SnnLearner { spec, burn_in, window })
    }

    pub fn readout<F: Real>(&self, params: &[Node<F>], batch: &LabeledBatch<F>) -> Result<Readout<F>> {
        let membranes = snn_forward(&self.spec, params, &batch.frames, self.burn_in, self.window)?;
        readout_and_loss(&membranes, &batch.labels)
    }
}

impl<F: Real> Learner<F> for SnnLearner {
    type Batch = LabeledBatch<F>;

    fn loss(&self, params: &[Node<F>], batch: &LabeledBatch<F>) -> Result<Node<F>> {
        Ok(self.readout(params, batch)?.loss)
    }

    fn groups(&self) -> Vec<String> {
        self.spec.layer_names().into_iter().flat_map(|n| [n.clone(), n]).collect()
    }
}
