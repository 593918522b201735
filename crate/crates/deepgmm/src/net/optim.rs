//! AdamW: Adam with bias correction and decoupled weight decay.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// One AdamW update of a single parameter vector. `step` is the 1-based
/// update counter shared by all parameters. Decay is decoupled: it scales
/// the pre-update value and never enters the moments.
pub fn adamw_update(
    values: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for i in 0..values.len() {
        let g = grad[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        values[i] -= lr * (m_hat / (v_hat.sqrt() + EPS) + weight_decay * values[i]);
    }
}
