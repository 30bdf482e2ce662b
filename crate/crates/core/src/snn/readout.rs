use crate::autodiff::{softmax_cross_entropy, Node, Real};
use crate::error::{Error, Result};

/// Class scores, predictions and loss of one batch.
#[derive(Debug, Clone)]
pub struct Readout<F: Real> {
    /// `[B,K]`: maximum readout membrane potential over the loss window.
    pub logits: Node<F>,
    /// Arg-max class per sample; the lower index wins ties.
    pub predictions: Vec<usize>,
    /// Mean softmax cross-entropy of `logits` against the targets.
    pub loss: Node<F>,
}

impl<F: Real> Readout<F> {
    pub fn correct(&self, targets: &[usize]) -> usize {
        self.predictions.iter().zip(targets).filter(|(p, t)| p == t).count()
    }
}

/// Reduces window membranes `[T,B,K]` to logits by a max over time and
/// scores them with cross-entropy.
pub fn readout_and_loss<F: Real>(membranes: &Node<F>, targets: &[usize]) -> Result<Readout<F>> {
    let &[_, b, k] = membranes.shape() else {
        return Err(Error::structural(format!("readout expects [T,B,K], got {:?}", membranes.shape())));
    };
    if targets.len() != b {
        return Err(Error::structural(format!("{} targets for a batch of {b}", targets.len())));
    }
    let logits = membranes.max_axes(&[0])?;
    let predictions = logits
        .value()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let loss = softmax_cross_entropy(&logits, targets)?;
    Ok(Readout { logits, predictions, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::make_node;

    #[test]
    fn max_over_time_then_argmax() {
        // T=2, B=2, K=3
        let m = make_node::<f64>(&[2, 2, 3], vec![0.0, 2.0, 1.0, 5.0, 5.0, 0.0, 3.0, 0.0, 0.0, 1.0, 1.0, 1.0], false)
            .unwrap();
        let r = readout_and_loss(&m, &[0, 1]).unwrap();
        assert_eq!(r.logits.value(), &[3.0, 2.0, 1.0, 5.0, 5.0, 1.0]);
        assert_eq!(r.predictions, vec![0, 0]);
        assert_eq!(r.correct(&[0, 1]), 1);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let m = Node::<f64>::zeros(&[4, 3, 5]);
        let r = readout_and_loss(&m, &[0, 1, 4]).unwrap();
        assert!((r.loss.item() - 5f64.ln()).abs() < 1e-12);
        assert_eq!(r.predictions, vec![0, 0, 0]);
    }

    #[test]
    fn target_count_checked() {
        assert!(readout_and_loss(&Node::<f64>::zeros(&[1, 2, 3]), &[0]).is_err());
    }
}
