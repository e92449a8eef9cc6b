//! Spiking dense and 2-D convolution layers.
//!
//! Every output neuron solves the first-spike relation over its own inputs.
//! Neurons that read the same inputs (all units of a dense layer, all filters
//! at one convolution position) share one sorted input list, a *group*.
//!
//! Weight layouts, both row-major:
//! - dense: `[units][inputs]`
//! - conv2d: `[filters][kernel_h][kernel_w][in_channels]`
//!
//! Activations of rank-3 layers are stored `H x W x C` row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spike::{scan_prefix, scan_rows, sorted_firing, CausalSolution, Fire, ZVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Output size `ceil(in / stride)`; padded taps are silent.
    #[default]
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    SpikingDense {
        inputs: usize,
        units: usize,
    },
    SpikingConv2d {
        /// `[height, width, channels]`
        in_shape: [usize; 3],
        /// `[height, width]`
        kernel: [usize; 2],
        stride: usize,
        filters: usize,
        #[serde(default)]
        padding: Padding,
    },
}

/// Output extent and leading pad for one spatial axis under same padding.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

impl LayerSpec {
    pub fn dense(inputs: usize, units: usize) -> Self {
        LayerSpec::SpikingDense { inputs, units }
    }

    pub fn conv2d(in_shape: [usize; 3], kernel: [usize; 2], stride: usize, filters: usize) -> Self {
        LayerSpec::SpikingConv2d { in_shape, kernel, stride, filters, padding: Padding::Same }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::SpikingDense { inputs, units } => {
                if inputs == 0 || units == 0 {
                    return Err(Error::Config(format!("dense layer {inputs}->{units} has an empty side")));
                }
            }
            LayerSpec::SpikingConv2d { in_shape, kernel, stride, filters, .. } => {
                if in_shape.contains(&0) || kernel.contains(&0) || stride == 0 || filters == 0 {
                    return Err(Error::Config(format!("degenerate conv layer {self:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn in_len(&self) -> usize {
        match *self {
            LayerSpec::SpikingDense { inputs, .. } => inputs,
            LayerSpec::SpikingConv2d { in_shape, .. } => in_shape.iter().product(),
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::SpikingDense { units, .. } => vec![units],
            LayerSpec::SpikingConv2d { in_shape, kernel, stride, filters, .. } => {
                let (h, _) = same_padding(in_shape[0], kernel[0], stride);
                let (w, _) = same_padding(in_shape[1], kernel[1], stride);
                vec![h, w, filters]
            }
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_shape().iter().product()
    }

    /// Weights owned by one unit (dense) or one filter (conv).
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::SpikingDense { inputs, .. } => inputs,
            LayerSpec::SpikingConv2d { in_shape, kernel, .. } => kernel[0] * kernel[1] * in_shape[2],
        }
    }

    /// Number of independent weight rows: units for dense, filters for conv.
    pub fn weight_rows(&self) -> usize {
        match *self {
            LayerSpec::SpikingDense { units, .. } => units,
            LayerSpec::SpikingConv2d { filters, .. } => filters,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_rows() * self.fan_in()
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::SpikingDense { .. } => "spiking-dense",
            LayerSpec::SpikingConv2d { .. } => "spiking-conv2d",
        }
    }
}

/// Inputs shared by a set of neurons, sorted by `(z, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<T> {
    pub(crate) channels: Vec<u32>,
    /// Offset into the owning neuron's weight row.
    pub(crate) taps: Vec<u32>,
    pub(crate) zs: Vec<T>,
}

/// Everything the backward pass needs from one layer's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    pub(crate) groups: Vec<Group<T>>,
    /// Neurons per group; neuron `n` belongs to group `n / units_per_group`
    /// and uses weight row `n % units_per_group`.
    pub(crate) units_per_group: usize,
    pub(crate) fires: Vec<Option<Fire<T>>>,
}

impl<T: Scalar> LayerTrace<T> {
    pub fn neurons(&self) -> usize {
        self.fires.len()
    }

    pub fn fired_count(&self) -> usize {
        self.fires.iter().filter(|f| f.is_some()).count()
    }

    /// Reconstructs the causal solution of neuron `n` (channel indices refer
    /// to this layer's input vector).
    pub fn solution(&self, n: usize) -> CausalSolution<T> {
        let g = &self.groups[n / self.units_per_group];
        match self.fires[n] {
            Some(f) => CausalSolution {
                causal_set: g.channels[..f.prefix as usize].iter().map(|&c| c as usize).collect(),
                z_out: Some(f.z_out),
                fired: true,
            },
            None => CausalSolution {
                causal_set: g.channels.iter().map(|&c| c as usize).collect(),
                z_out: None,
                fired: false,
            },
        }
    }

    /// `(fired, causal prefix length)` per neuron plus the input ordering of
    /// every group. Two traces with equal signatures differentiate through
    /// the same causal sets.
    pub fn signature(&self) -> (Vec<Option<u32>>, Vec<Vec<u32>>) {
        (
            self.fires.iter().map(|f| f.map(|f| f.prefix)).collect(),
            self.groups.iter().map(|g| g.channels.clone()).collect(),
        )
    }
}

fn solve_group<T: Scalar>(
    group: &Group<T>,
    weights: &[T],
    rows: usize,
    fan_in: usize,
    threshold: T,
    out: &mut Vec<Option<Fire<T>>>,
) {
    for r in 0..rows {
        let row = &weights[r * fan_in..(r + 1) * fan_in];
        out.push(scan_prefix(&group.zs, |k| row[group.taps[k] as usize], threshold));
    }
}

fn outputs<T: Scalar>(fires: &[Option<Fire<T>>]) -> ZVector<T> {
    ZVector::new(fires.iter().map(|f| f.map(|f| f.z_out)).collect())
}

/// Fully connected spiking layer. Silent inputs never enter a candidate set.
pub fn forward_dense<T: Scalar>(
    inputs: &ZVector<T>,
    weights: &[T],
    units: usize,
    threshold: T,
) -> Result<(ZVector<T>, LayerTrace<T>)> {
    let fan_in = inputs.len();
    if units == 0 || weights.len() != units * fan_in {
        return Err(Error::Shape(format!(
            "dense layer with {units} units over {fan_in} inputs needs {} weights, got {}",
            units * fan_in,
            weights.len()
        )));
    }
    let (channels, zs) = sorted_firing(inputs);
    let group = Group { taps: channels.clone(), channels, zs };
    let mut fires = Vec::with_capacity(units);
    solve_group(&group, weights, units, fan_in, threshold, &mut fires);
    let z = outputs(&fires);
    Ok((z, LayerTrace { groups: vec![group], units_per_group: units, fires }))
}

/// Spiking 2-D convolution with same padding. Each output position and
/// filter is one neuron over its receptive field; padded taps are silent.
pub fn forward_conv2d<T: Scalar>(
    inputs: &ZVector<T>,
    spec: &LayerSpec,
    weights: &[T],
    threshold: T,
) -> Result<(ZVector<T>, LayerTrace<T>)> {
    let LayerSpec::SpikingConv2d { in_shape, kernel, stride, filters, .. } = *spec else {
        return Err(Error::Config(format!("expected a conv layer, got {}", spec.name())));
    };
    spec.validate()?;
    let [h, w, c] = in_shape;
    if inputs.len() != h * w * c {
        return Err(Error::Shape(format!(
            "conv input {h}x{w}x{c} needs {} channels, got {}",
            h * w * c,
            inputs.len()
        )));
    }
    if weights.len() != spec.weight_count() {
        return Err(Error::Shape(format!(
            "conv layer needs {} weights, got {}",
            spec.weight_count(),
            weights.len()
        )));
    }
    let [kh, kw] = kernel;
    let (oh, pad_top) = same_padding(h, kh, stride);
    let (ow, pad_left) = same_padding(w, kw, stride);
    let fan_in = spec.fan_in();
    // Tap-major copy so all filters scan one receptive field together.
    let mut wt = vec![T::zero(); weights.len()];
    for f in 0..filters {
        for t in 0..fan_in {
            wt[t * filters + f] = weights[f * fan_in + t];
        }
    }

    // One global (z, channel) sort; each input is then appended to every
    // receptive field that contains it, which leaves each field sorted too.
    let (order, zs) = sorted_firing(inputs);
    let mut groups: Vec<Group<T>> =
        (0..oh * ow).map(|_| Group { channels: Vec::new(), taps: Vec::new(), zs: Vec::new() }).collect();
    for (&ch, &zv) in order.iter().zip(&zs) {
        let (pix, ci) = (ch as usize / c, ch as usize % c);
        let (iy, ix) = (pix / w + pad_top, pix % w + pad_left);
        for ky in 0..kh.min(iy + 1) {
            if (iy - ky) % stride != 0 || (iy - ky) / stride >= oh {
                continue;
            }
            let oy = (iy - ky) / stride;
            for kx in 0..kw.min(ix + 1) {
                if (ix - kx) % stride != 0 || (ix - kx) / stride >= ow {
                    continue;
                }
                let g = &mut groups[oy * ow + (ix - kx) / stride];
                g.channels.push(ch);
                g.taps.push(((ky * kw + kx) * c + ci) as u32);
                g.zs.push(zv);
            }
        }
    }
    let mut fires = Vec::with_capacity(oh * ow * filters);
    for g in &groups {
        scan_rows(&g.zs, &g.taps, &wt, filters, threshold, &mut fires);
    }
    let z = outputs(&fires);
    Ok((z, LayerTrace { groups, units_per_group: filters, fires }))
}

/// Runs any layer kind.
pub fn forward_layer<T: Scalar>(
    inputs: &ZVector<T>,
    spec: &LayerSpec,
    weights: &[T],
    threshold: T,
) -> Result<(ZVector<T>, LayerTrace<T>)> {
    match *spec {
        LayerSpec::SpikingDense { inputs: n, units } => {
            if inputs.len() != n {
                return Err(Error::Shape(format!("dense layer expects {n} inputs, got {}", inputs.len())));
            }
            forward_dense(inputs, weights, units, threshold)
        }
        LayerSpec::SpikingConv2d { .. } => forward_conv2d(inputs, spec, weights, threshold),
    }
}

/// A z-domain activation with an explicit `H x W x C` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTensor<T> {
    pub shape: [usize; 3],
    pub z: ZVector<T>,
}

impl<T: Scalar> ZTensor<T> {
    pub fn unflatten(z: ZVector<T>, shape: [usize; 3]) -> Result<Self> {
        if z.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values do not fill {shape:?}", z.len())));
        }
        Ok(Self { shape, z })
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> Option<T> {
        let [_, w, ch] = self.shape;
        self.z.get((y * w + x) * ch + c)
    }
}

/// Row-major flatten (H outer, then W, then C). The storage is already in
/// that order, so this only drops the shape.
pub fn flatten<T: Scalar>(t: ZTensor<T>) -> ZVector<T> {
    t.z
}
