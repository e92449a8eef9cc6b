//! Classification loss on output spike times and weight regularizers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::spike::ZVector;

/// Silent outputs enter the softmax at `SILENT_FACTOR` times the latest
/// firing output ...
pub const SILENT_FACTOR: f64 = 10.0;
/// ... but never above this.
pub const SILENT_CEILING: f64 = 1e6;
/// Neurons whose incoming weights sum below `threshold + FIRING_MARGIN` are
/// penalized.
pub const FIRING_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossValue<T> {
    pub total: T,
    pub cross_entropy: T,
    pub l2: T,
    pub firing_penalty: T,
}

impl<T: Scalar> LossValue<T> {
    pub fn new(cross_entropy: T, l2: T, firing_penalty: T) -> Self {
        Self { total: cross_entropy + l2 + firing_penalty, cross_entropy, l2, firing_penalty }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.cross_entropy.is_finite()
            && self.l2.is_finite()
            && self.firing_penalty.is_finite()
    }

    pub fn to_f64(self) -> LossValue<f64> {
        LossValue {
            total: self.total.to_f64_lossy(),
            cross_entropy: self.cross_entropy.to_f64_lossy(),
            l2: self.l2.to_f64_lossy(),
            firing_penalty: self.firing_penalty.to_f64_lossy(),
        }
    }
}

/// z value a silent output takes inside the softmax.
pub fn silent_z<T: Scalar>(outputs: &ZVector<T>) -> T {
    let cap = T::lit(SILENT_CEILING);
    match outputs.values().iter().flatten().copied().reduce(T::max) {
        Some(latest) => (latest * T::lit(SILENT_FACTOR)).min(cap).max(latest),
        None => cap,
    }
}

/// Cross-entropy of `softmax(-z)` against `label`: earlier output spikes are
/// higher class scores. Returns the loss (regularizer fields zero) and
/// `dCE/dz` per output; silent outputs get zero gradient.
pub fn loss<T: Scalar>(outputs: &ZVector<T>, label: usize) -> Result<(LossValue<T>, Vec<T>)> {
    let k = outputs.len();
    if label >= k {
        return Err(Error::Contract(format!("label {label} outside {k} classes")));
    }
    let fill = silent_z(outputs);
    let z: Vec<T> = outputs.values().iter().map(|v| v.unwrap_or(fill)).collect();
    let zmin = z.iter().copied().fold(T::infinity(), T::min);
    let e: Vec<T> = z.iter().map(|&zk| (zmin - zk).exp()).collect();
    let sum: T = e.iter().copied().sum();
    let ce = sum.ln() - (zmin - z[label]);
    let grad = outputs
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            if v.is_none() {
                return T::zero();
            }
            let p = e[j] / sum;
            let y = if j == label { T::one() } else { T::zero() };
            y - p
        })
        .collect();
    Ok((LossValue::new(ce, T::zero(), T::zero()), grad))
}

/// `l2 = coeff * sum w^2` with gradient `2 coeff w`, and the firing penalty
/// `coeff * max(0, threshold + margin - sum_row w)` per weight row (dense
/// unit or conv filter). Returns `(l2, penalty, gradient)`.
pub fn regularization<T: Scalar>(model: &Model<T>, l2_coeff: f64, penalty_coeff: f64) -> (T, T, Vec<Vec<T>>) {
    let mut grads: Vec<Vec<T>> = model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
    let (l2, pen) = add_regularization(model, l2_coeff, penalty_coeff, &mut grads, T::one());
    (l2, pen, grads)
}

/// In place `g = g * scale + d(regularizer)/dw`; returns `(l2, penalty)`.
pub fn add_regularization<T: Scalar>(
    model: &Model<T>,
    l2_coeff: f64,
    penalty_coeff: f64,
    grads: &mut [Vec<T>],
    scale: T,
) -> (T, T) {
    let lam = T::lit(l2_coeff);
    let two_lam = T::lit(2.0) * lam;
    let pc = T::lit(penalty_coeff);
    let floor = model.threshold() + T::lit(FIRING_MARGIN);
    let mut l2 = T::zero();
    let mut pen = T::zero();
    for ((spec, w), g) in model.spec.layers.iter().zip(&model.weights).zip(grads.iter_mut()) {
        let fan_in = spec.fan_in();
        for (row, grow) in w.chunks(fan_in).zip(g.chunks_mut(fan_in)) {
            let s: T = row.iter().copied().sum();
            let active = penalty_coeff > 0.0 && s < floor;
            if active {
                pen = pen + pc * (floor - s);
            }
            for (&v, gv) in row.iter().zip(grow.iter_mut()) {
                l2 = l2 + lam * v * v;
                let mut r = two_lam * v;
                if active {
                    r = r - pc;
                }
                *gv = *gv * scale + r;
            }
        }
    }
    (l2, pen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn two_class_example() {
        let z = ZVector::new(vec![Some(1.0f64), Some(2.0)]);
        let (l, _) = loss(&z, 0).unwrap();
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p0 - 0.7311).abs() < 1e-4);
        assert!((l.cross_entropy - 0.3133).abs() < 1e-4);
        assert_eq!(l.total, l.cross_entropy);
    }

    #[test]
    fn equal_outputs_are_uniform() {
        let z = ZVector::new(vec![Some(3.0); 7]);
        let (l, _) = loss(&z, 4).unwrap();
        assert!((l.cross_entropy - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = [1.3, 2.0, 1.7, 4.1];
        let z = ZVector::new(base.iter().map(|&v| Some(v)).collect());
        let (_, g) = loss(&z, 2).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut p = base;
            p[k] += h;
            let mut m = base;
            m[k] -= h;
            let f = |v: [f64; 4]| loss(&ZVector::new(v.iter().map(|&x| Some(x)).collect()), 2).unwrap().0.cross_entropy;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn silent_outputs() {
        let z = ZVector::new(vec![Some(2.0), None]);
        assert_eq!(silent_z(&z), 20.0);
        let (l, g) = loss(&z, 1).unwrap();
        assert!(l.cross_entropy > 10.0);
        assert_eq!(g[1], 0.0);

        let all = ZVector::<f64>::new(vec![None; 4]);
        let (l, g) = loss(&all, 0).unwrap();
        assert!((l.cross_entropy - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_label() {
        assert!(loss(&ZVector::new(vec![Some(1.0f64)]), 1).is_err());
    }

    #[test]
    fn l2_gradient_is_two_lambda_w() {
        let spec = ModelSpec::mlp(vec![3], &[2]);
        let model = Model::new(spec, vec![vec![0.5f64, -1.0, 2.0, 0.1, 0.2, 0.3]]).unwrap();
        let (l2, pen, g) = regularization(&model, 0.01, 0.0);
        assert_eq!(pen, 0.0);
        assert!((l2 - 0.01 * (0.25 + 1.0 + 4.0 + 0.01 + 0.04 + 0.09)).abs() < 1e-15);
        for (gv, w) in g[0].iter().zip(&model.weights[0]) {
            assert_eq!(*gv, 2.0 * 0.01 * w);
        }
    }

    #[test]
    fn firing_penalty_only_on_weak_rows() {
        let spec = ModelSpec::mlp(vec![2], &[2]);
        // Row 0 sums to 2.0 (fine), row 1 to 0.6 (< 1.1).
        let model = Model::new(spec, vec![vec![1.0f64, 1.0, 0.3, 0.3]]).unwrap();
        let (_, pen, g) = regularization(&model, 0.0, 2.0);
        assert!((pen - 2.0 * 0.5).abs() < 1e-12);
        assert_eq!(g[0], vec![0.0, 0.0, -2.0, -2.0]);
    }
}
