use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::snn::{surrogate_derivative, NeuronConfig};

/// Closed-form weight gradient of one dense layer at one timestep:
/// `dL/dW[i,j] = dL/ds[i] * sigma'(u[i] - u_th) * p[j]`.
///
/// `dl_ds` and `u` are `[K]`, `p` is `[N]`; the result is `[K,N]`.
pub fn three_factor_grad<F: Real>(
    dl_ds: &Tensor<F>,
    u: &Tensor<F>,
    p: &Tensor<F>,
    config: &NeuronConfig,
) -> Result<Tensor<F>> {
    if dl_ds.shape().len() != 1 || u.shape() != dl_ds.shape() || p.shape().len() != 1 {
        return Err(Error::structural(format!(
            "three-factor rule needs [K], [K], [N]; got {:?}, {:?}, {:?}",
            dl_ds.shape(),
            u.shape(),
            p.shape()
        )));
    }
    let (k, n) = (u.len(), p.len());
    let mut out = Vec::with_capacity(k * n);
    for (&g, &ui) in dl_ds.data().iter().zip(u.data()) {
        let post = g * F::of(surrogate_derivative(ui.f64() - config.u_th, config.surrogate_beta));
        out.extend(p.data().iter().map(|&pj| post * pj));
    }
    Tensor::new(vec![k, n], out)
}
