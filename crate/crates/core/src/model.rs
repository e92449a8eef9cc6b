//! Network description, weights and the full forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PulseFrame;
use crate::layer::{forward_layer, LayerSpec, LayerTrace};
use crate::scalar::Scalar;
use crate::spike::ZVector;

fn one() -> f64 {
    1.0
}

/// Declarative network description. Dense layers implicitly flatten their
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "one")]
    pub threshold: f64,
    #[serde(default = "one")]
    pub tau_syn: f64,
    /// Frame times are multiplied by this before entering the network, so
    /// the encoding interval `[0, 1]` spans this many synaptic time
    /// constants.
    #[serde(default = "one")]
    pub input_time_scale: f64,
}

impl ModelSpec {
    /// 256-400-32 fully connected network for 16x16 Sim LiDAR frames.
    ///
    /// The output layer has one unit per class (32), see `simlidar::CLASSES`.
    pub fn simlidar() -> Self {
        Self { input_time_scale: 10.0, ..Self::mlp(vec![16, 16], &[400, 32]) }
    }

    /// 1024-2000-36 fully connected network for 32x32 DVS frames.
    pub fn dvs() -> Self {
        Self::mlp(vec![32, 32], &[2000, 36])
    }

    /// Spiking CNN for 50x118 KITTI front-view crops:
    /// conv 5x5/2 x48 -> conv 5x5/2 x24 -> dense 256 -> dense 8.
    pub fn kitti() -> Self {
        let c1 = LayerSpec::conv2d([50, 118, 1], [5, 5], 2, 48);
        let c2 = LayerSpec::conv2d([25, 59, 48], [5, 5], 2, 24);
        Self {
            input_shape: vec![50, 118, 1],
            layers: vec![c1, c2, LayerSpec::dense(13 * 30 * 24, 256), LayerSpec::dense(256, 8)],
            threshold: 1.0,
            tau_syn: 1.0,
            input_time_scale: 1.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "simlidar" => Some(Self::simlidar()),
            "dvs" => Some(Self::dvs()),
            "kitti" => Some(Self::kitti()),
            _ => None,
        }
    }

    /// Chain of dense layers over a flattened input.
    pub fn mlp(input_shape: Vec<usize>, units: &[usize]) -> Self {
        let mut inputs: usize = input_shape.iter().product();
        let layers = units
            .iter()
            .map(|&u| {
                let l = LayerSpec::dense(inputs, u);
                inputs = u;
                l
            })
            .collect();
        Self { input_shape, layers, threshold: 1.0, tau_syn: 1.0, input_time_scale: 1.0 }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_len())
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(LayerSpec::out_shape).collect()
    }

    /// Spiking neurons across all layers (inputs excluded).
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::out_len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold != 1.0 || self.tau_syn != 1.0 {
            return Err(Error::Config(format!(
                "closed-form neurons need threshold = 1 and tau_syn = 1, got {} and {}",
                self.threshold, self.tau_syn
            )));
        }
        if !(self.input_time_scale > 0.0 && self.input_time_scale.is_finite()) {
            return Err(Error::Config(format!("input_time_scale must be > 0, got {}", self.input_time_scale)));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {:?}", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            let n: usize = shape.iter().product();
            match layer {
                LayerSpec::SpikingDense { inputs, .. } => {
                    if *inputs != n {
                        return Err(Error::Config(format!(
                            "layer {i}: dense expects {inputs} inputs, previous output has {n}"
                        )));
                    }
                }
                LayerSpec::SpikingConv2d { in_shape, .. } => {
                    let ok = shape.as_slice() == in_shape.as_slice()
                        || (shape.len() == 2 && in_shape[2] == 1 && shape[..] == in_shape[..2]);
                    if !ok {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects {in_shape:?}, previous output is {shape:?}"
                        )));
                    }
                }
            }
            shape = layer.out_shape();
        }
        Ok(())
    }

    /// Whether a frame of this shape can be fed to the network. A trailing
    /// unit channel axis is optional.
    pub fn accepts(&self, shape: &[usize]) -> bool {
        fn trim(s: &[usize]) -> &[usize] {
            match s.split_last() {
                Some((1, rest)) if !rest.is_empty() => rest,
                _ => s,
            }
        }
        trim(shape) == trim(&self.input_shape)
    }
}

/// A network: spec plus one weight tensor per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub weights: Vec<Vec<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, weights: Vec<Vec<T>>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} weight tensors for {} layers",
                weights.len(),
                spec.layers.len()
            )));
        }
        for (i, (l, w)) in spec.layers.iter().zip(&weights).enumerate() {
            if w.len() != l.weight_count() {
                return Err(Error::Shape(format!(
                    "layer {i} needs {} weights, got {}",
                    l.weight_count(),
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("layer {i} has non-finite weights")));
            }
        }
        Ok(Self { spec, weights })
    }

    /// Random initialization with a positive mean, `N(3 / fan_in, 1 / sqrt(fan_in))`
    /// (threshold 1), so weight sums typically exceed the threshold and the
    /// untrained network already fires.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let fan_in = l.fan_in() as f64;
                let dist = Normal::new(3.0 * spec.threshold / fan_in, 1.0 / fan_in.sqrt())
                    .expect("positive std");
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9 * (i as u64 + 1)));
                (0..l.weight_count()).map(|_| T::lit(dist.sample(&mut rng))).collect()
            })
            .collect();
        Ok(Self { spec, weights })
    }

    pub fn threshold(&self) -> T {
        T::lit(self.spec.threshold)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().map(|&v| U::lit(v.to_f64_lossy())).collect())
                .collect(),
        }
    }
}

/// Record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: ZVector<T>,
    /// Output of every layer, in order.
    pub activations: Vec<ZVector<T>>,
    pub layers: Vec<LayerTrace<T>>,
    /// Input spikes strictly earlier than the first output spike (all input
    /// spikes when no output fires).
    pub consumed_input_count: usize,
    pub total_input_spikes: usize,
    pub first_output_time: Option<T>,
    /// Earliest firing output, lowest index on ties. `None` if no output fired.
    pub predicted_class: Option<usize>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn outputs(&self) -> &ZVector<T> {
        self.activations.last().expect("at least one layer")
    }

    /// Spikes emitted by hidden and output neurons.
    pub fn neuron_spikes(&self) -> usize {
        self.layers.iter().map(LayerTrace::fired_count).sum()
    }

    pub fn no_prediction(&self) -> bool {
        self.predicted_class.is_none()
    }
}

/// Runs a model on z-domain inputs.
pub fn forward_z<T: Scalar>(input: ZVector<T>, model: &Model<T>) -> Result<ForwardTrace<T>> {
    if input.len() != model.spec.input_len() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, got {}",
            model.spec.input_len(),
            input.len()
        )));
    }
    let threshold = model.threshold();
    let mut activations = Vec::with_capacity(model.spec.layers.len());
    let mut layers = Vec::with_capacity(model.spec.layers.len());
    for (spec, w) in model.spec.layers.iter().zip(&model.weights) {
        let prev = activations.last().unwrap_or(&input);
        let (z, trace) = forward_layer(prev, spec, w, threshold)?;
        activations.push(z);
        layers.push(trace);
    }

    let out = activations.last().expect("validated model has layers");
    let mut best: Option<(usize, T)> = None;
    for (k, z) in out.values().iter().enumerate() {
        if let Some(z) = *z {
            if best.is_none_or(|(_, b)| z < b) {
                best = Some((k, z));
            }
        }
    }
    let total_input_spikes = input.firing_count();
    let consumed_input_count = match best {
        Some((_, zmin)) => input.values().iter().flatten().filter(|&&z| z < zmin).count(),
        None => total_input_spikes,
    };
    Ok(ForwardTrace {
        input,
        activations,
        layers,
        consumed_input_count,
        total_input_spikes,
        first_output_time: best.map(|(_, z)| z.ln()),
        predicted_class: best.map(|(k, _)| k),
    })
}

/// Runs a model on a pulse frame.
pub fn forward_model<T: Scalar>(frame: &PulseFrame, model: &Model<T>) -> Result<ForwardTrace<T>> {
    if !model.spec.accepts(frame.shape()) {
        return Err(Error::Shape(format!(
            "frame shape {:?} does not match model input {:?}",
            frame.shape(),
            model.spec.input_shape
        )));
    }
    forward_z(frame.to_z_scaled(model.spec.input_time_scale), model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_shapes() {
        let s = ModelSpec::kitti();
        s.validate().unwrap();
        assert_eq!(
            s.shapes(),
            vec![vec![25, 59, 48], vec![13, 30, 24], vec![256], vec![8]]
        );
        assert_eq!(s.neuron_count(), 70_800 + 9_360 + 256 + 8);
    }

    #[test]
    fn presets_validate() {
        for name in ["simlidar", "dvs", "kitti"] {
            ModelSpec::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(ModelSpec::simlidar().classes(), 32);
        assert_eq!(ModelSpec::dvs().classes(), 36);
        assert!(ModelSpec::preset("vgg").is_none());
    }

    #[test]
    fn validate_catches_mismatch() {
        let mut s = ModelSpec::mlp(vec![4], &[3, 2]);
        s.layers[1] = LayerSpec::dense(4, 2);
        assert!(s.validate().is_err());
        let mut s = ModelSpec::mlp(vec![4], &[3]);
        s.threshold = 2.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn accepts_trailing_unit_axis() {
        let s = ModelSpec::kitti();
        assert!(s.accepts(&[50, 118]));
        assert!(s.accepts(&[50, 118, 1]));
        assert!(!s.accepts(&[118, 50]));
    }

    #[test]
    fn toy_model_predicts_strongest_pathway() {
        // 2 inputs -> 2 hidden -> 2 outputs, class 0 pathway has larger weights
        // so its denominators are larger and it fires first.
        let spec = ModelSpec::mlp(vec![2], &[2, 2]);
        let model = Model::new(spec, vec![vec![2.0, 2.0, 1.0, 0.8], vec![3.0, 0.0, 0.0, 1.5]]).unwrap();
        let frame = PulseFrame::new(vec![2], vec![Some(0.0), Some(0.2)]).unwrap();
        let trace = forward_model::<f64>(&frame, &model).unwrap();
        assert_eq!(trace.predicted_class, Some(0));
        let out = trace.outputs();
        assert!(out.get(0).unwrap() < out.get(1).unwrap_or(f64::INFINITY));
    }

    #[test]
    fn silent_outputs_consume_everything() {
        let spec = ModelSpec::mlp(vec![3], &[2]);
        let model = Model::new(spec, vec![vec![0.1; 6]]).unwrap();
        let frame = PulseFrame::new(vec![3], vec![Some(0.0), None, Some(0.4)]).unwrap();
        let trace = forward_model::<f64>(&frame, &model).unwrap();
        assert!(trace.no_prediction());
        assert_eq!(trace.consumed_input_count, 2);
        assert_eq!(trace.total_input_spikes, 2);
        assert_eq!(trace.first_output_time, None);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let model = Model::<f32>::init(ModelSpec::simlidar(), 1).unwrap();
        let frame = PulseFrame::silent(vec![8, 8]);
        assert!(matches!(forward_model(&frame, &model), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::<f32>::init(ModelSpec::simlidar(), 5).unwrap();
        let b = Model::<f32>::init(ModelSpec::simlidar(), 5).unwrap();
        let c = Model::<f32>::init(ModelSpec::simlidar(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
