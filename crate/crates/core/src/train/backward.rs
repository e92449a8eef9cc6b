//! Backpropagation through the closed-form spike times.
//!
//! Causal sets are taken as recorded in the forward trace; within a region
//! where they do not change, the gradients below are exact.

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model};
use crate::scalar::Scalar;

use super::loss::{loss, regularization, LossValue, FIRING_MARGIN};

/// Per-layer weight gradients, same layout as `Model::weights`.
pub type Gradients<T> = Vec<Vec<T>>;

pub fn zeros_like<T: Scalar>(model: &Model<T>) -> Gradients<T> {
    model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect()
}

/// Adds the data-term gradient of one sample into `grads` and returns the
/// cross-entropy part of the loss.
pub fn accumulate_data_gradient<T: Scalar>(
    trace: &ForwardTrace<T>,
    model: &Model<T>,
    label: usize,
    grads: &mut Gradients<T>,
) -> Result<LossValue<T>> {
    if trace.layers.len() != model.spec.layers.len() {
        return Err(Error::Contract("trace does not belong to this model".into()));
    }
    let (value, mut upstream) = loss(trace.outputs(), label)?;

    for l in (0..model.spec.layers.len()).rev() {
        let lt = &trace.layers[l];
        let fan_in = model.spec.layers[l].fan_in();
        let w = &model.weights[l];
        let gw = &mut grads[l];
        let input_len = if l == 0 { trace.input.len() } else { trace.activations[l - 1].len() };
        let mut down = if l > 0 { vec![T::zero(); input_len] } else { Vec::new() };

        for (n, fire) in lt.fires.iter().enumerate() {
            let Some(f) = fire else { continue };
            let g = upstream[n];
            if g == T::zero() {
                continue;
            }
            let group = &lt.groups[n / lt.units_per_group];
            let row = (n % lt.units_per_group) * fan_in;
            let scale = g / f.denom;
            let p = f.prefix as usize;
            let (gw_row, w_row) = (&mut gw[row..row + fan_in], &w[row..row + fan_in]);
            for (&t, &z) in group.taps[..p].iter().zip(&group.zs[..p]) {
                let t = t as usize;
                gw_row[t] = gw_row[t] + scale * (z - f.z_out);
            }
            if l > 0 {
                for (&t, &ch) in group.taps[..p].iter().zip(&group.channels[..p]) {
                    let ch = ch as usize;
                    down[ch] = down[ch] + scale * w_row[t as usize];
                }
            }
        }
        upstream = down;
    }
    Ok(value)
}

/// A silent output carries no data gradient, so a class whose output has
/// gone quiet for its own samples would never recover. When the label's
/// output is silent this adds `coeff * max(0, threshold + margin - s)`, with
/// `s` the summed weights from the inputs that did fire, and its gradient.
/// Returns the penalty.
pub fn silent_label_penalty<T: Scalar>(
    trace: &ForwardTrace<T>,
    model: &Model<T>,
    label: usize,
    coeff: f64,
    grads: &mut Gradients<T>,
) -> T {
    let last = model.spec.layers.len() - 1;
    let lt = &trace.layers[last];
    if coeff <= 0.0 || lt.fires.get(label).is_none_or(|f| f.is_some()) {
        return T::zero();
    }
    let group = &lt.groups[label / lt.units_per_group];
    let row = (label % lt.units_per_group) * model.spec.layers[last].fan_in();
    let w = &model.weights[last];
    let s: T = group.taps.iter().map(|&k| w[row + k as usize]).sum();
    let gap = model.threshold() + T::lit(FIRING_MARGIN) - s;
    if gap <= T::zero() {
        return T::zero();
    }
    let c = T::lit(coeff);
    for &k in &group.taps {
        let g = &mut grads[last][row + k as usize];
        *g = *g - c;
    }
    c * gap
}

/// Full per-sample gradient: data term, silent-label penalty, L2 and firing
/// penalty.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    model: &Model<T>,
    label: usize,
    l2_coeff: f64,
    penalty_coeff: f64,
) -> Result<(LossValue<T>, Gradients<T>)> {
    let mut grads = zeros_like(model);
    let data = accumulate_data_gradient(trace, model, label, &mut grads)?;
    let silent = silent_label_penalty(trace, model, label, penalty_coeff, &mut grads);
    let (l2, pen, reg) = regularization(model, l2_coeff, penalty_coeff);
    for (g, r) in grads.iter_mut().zip(&reg) {
        for (a, b) in g.iter_mut().zip(r) {
            *a = *a + *b;
        }
    }
    Ok((LossValue::new(data.cross_entropy, l2, pen + silent), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PulseFrame;
    use crate::model::{forward_model, ModelSpec};
    use crate::spike::{grad_causal, NeuronParams};

    #[test]
    fn single_link_chain_rule() {
        // 1 -> 2 dense: output gradient times dz_out/dw from the neuron math.
        let spec = ModelSpec::mlp(vec![1], &[2]);
        let model = Model::new(spec, vec![vec![2.0, 3.0]]).unwrap();
        let frame = PulseFrame::new(vec![1], vec![Some(0.2)]).unwrap();
        let trace = forward_model::<f64>(&frame, &model).unwrap();
        let (_, dl_dz) = loss(trace.outputs(), 1).unwrap();
        let (_, grads) = backward(&trace, &model, 1, 0.0, 0.0).unwrap();
        for u in 0..2 {
            let p = NeuronParams::canonical(vec![model.weights[0][u]]);
            let sol = trace.layers[0].solution(u);
            let (dw, _) = grad_causal(&trace.input, &p, &sol).unwrap();
            assert!((grads[0][u] - dl_dz[u] * dw[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn non_causal_weights_get_only_regularizer() {
        // Second input arrives long after the neuron fires.
        let spec = ModelSpec::mlp(vec![2], &[1]);
        let model = Model::new(spec, vec![vec![3.0, 0.5]]).unwrap();
        let frame = PulseFrame::new(vec![2], vec![Some(0.0), Some(5.0)]).unwrap();
        let trace = forward_model::<f64>(&frame, &model).unwrap();
        let (_, g) = backward(&trace, &model, 0, 0.01, 0.0).unwrap();
        assert_eq!(g[0][1], 2.0 * 0.01 * 0.5);
    }

    #[test]
    fn silent_label_pulls_up_fired_weights_only() {
        // Output 1 is silent: only input 0 fires and its weight is 0.4.
        let spec = ModelSpec::mlp(vec![2], &[2]);
        let model = Model::new(spec, vec![vec![2.0, 0.0, 0.4, 5.0]]).unwrap();
        let frame = PulseFrame::new(vec![2], vec![Some(0.0), None]).unwrap();
        let trace = forward_model::<f64>(&frame, &model).unwrap();
        assert!(trace.outputs().get(1).is_none());
        let mut g = zeros_like(&model);
        let p = silent_label_penalty(&trace, &model, 1, 2.0, &mut g);
        assert!((p - 2.0 * 0.7).abs() < 1e-12);
        assert_eq!(g[0], vec![0.0, 0.0, -2.0, 0.0]);
        // A firing label gets nothing.
        let mut g = zeros_like(&model);
        assert_eq!(silent_label_penalty(&trace, &model, 0, 2.0, &mut g), 0.0);
        assert!(g[0].iter().all(|&v| v == 0.0));
    }
}
