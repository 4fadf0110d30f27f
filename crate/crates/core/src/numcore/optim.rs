//! Adaptive-moment optimizer step.

use crate::error::{Error, Result};

use super::net::{Denoiser, Grads};

/// Adam state: first/second moment accumulators mirroring the network
/// parameter shapes, plus the usual hyperparameters.
#[derive(Debug, Clone)]
pub struct OptState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stabilizer: f64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(net: &Denoiser, learning_rate: f64) -> Self {
        let p = net.params();
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_stabilizer: 1e-8,
            m_w: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of the online parameters.
///
/// Rejects non-finite gradient entries, naming the offending parameter.
pub fn adam_step(net: &mut Denoiser, grads: &Grads, opt: &mut OptState) -> Result<()> {
    for (k, w) in grads.weights.iter().enumerate() {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient at layer {k} weight index {i}"
            )));
        }
    }
    for (k, b) in grads.biases.iter().enumerate() {
        if let Some(i) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient at layer {k} bias index {i}"
            )));
        }
    }

    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let lr = opt.learning_rate;
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps_stabilizer);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    let params = net.params_mut();
    for k in 0..params.weights.len() {
        for i in 0..params.weights[k].len() {
            update(
                &mut params.weights[k][i],
                grads.weights[k][i],
                &mut opt.m_w[k][i],
                &mut opt.v_w[k][i],
            );
        }
        for i in 0..params.biases[k].len() {
            update(
                &mut params.biases[k][i],
                grads.biases[k][i],
                &mut opt.m_b[k][i],
                &mut opt.v_b[k][i],
            );
        }
    }
    Ok(())
}
