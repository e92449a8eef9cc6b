//! Single-spike neuron math in the z-domain.
//!
//! A non-leaky integrate-and-fire neuron with exponentially decaying synaptic
//! current (unit time constant) and unit threshold fires at
//!
//! ```text
//! z_out = sum_{i in C} w_i z_i / (sum_{i in C} w_i - threshold),   z = exp(t)
//! ```
//!
//! where `C` is the set of inputs that arrived strictly before the output
//! spike. Everything here works on `z = exp(t)` so the relation stays
//! linear-fractional; times only appear at the boundaries.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spike times of a group of channels, at most one spike per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeVector<T> {
    channels: usize,
    spikes: Vec<(usize, T)>,
}

impl<T: Scalar> SpikeVector<T> {
    /// Builds a spike vector over `channels` channels. Spikes are sorted by
    /// channel; duplicate channels, negative or non-finite times are rejected.
    pub fn new(channels: usize, mut spikes: Vec<(usize, T)>) -> Result<Self> {
        spikes.sort_by_key(|&(c, _)| c);
        for w in spikes.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidSpikes(format!("channel {} spikes twice", w[0].0)));
            }
        }
        for &(c, t) in &spikes {
            if c >= channels {
                return Err(Error::InvalidSpikes(format!("channel {c} out of range {channels}")));
            }
            if !t.is_finite() || t < T::zero() {
                return Err(Error::InvalidSpikes(format!("channel {c} has time {t}")));
            }
        }
        Ok(Self { channels, spikes })
    }

    /// Builds a spike vector from a dense per-channel list (`None` = silent).
    pub fn from_dense(times: &[Option<T>]) -> Result<Self> {
        let spikes = times
            .iter()
            .enumerate()
            .filter_map(|(c, t)| t.map(|t| (c, t)))
            .collect();
        Self::new(times.len(), spikes)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(channel, time)` pairs ordered by channel.
    pub fn spikes(&self) -> &[(usize, T)] {
        &self.spikes
    }

    pub fn time(&self, channel: usize) -> Option<T> {
        self.spikes
            .binary_search_by_key(&channel, |&(c, _)| c)
            .ok()
            .map(|i| self.spikes[i].1)
    }

    pub fn to_dense(&self) -> Vec<Option<T>> {
        let mut out = vec![None; self.channels];
        for &(c, t) in &self.spikes {
            out[c] = Some(t);
        }
        out
    }

    /// Delays every spike by `delta >= 0`.
    pub fn shifted(&self, delta: T) -> Result<Self> {
        Self::new(self.channels, self.spikes.iter().map(|&(c, t)| (c, t + delta)).collect())
    }
}

/// Per-channel `z = exp(t)`, `None` for silent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ZVector<T> {
    values: Vec<Option<T>>,
}

impl<T: Scalar> ZVector<T> {
    pub fn new(values: Vec<Option<T>>) -> Self {
        Self { values }
    }

    pub fn silent(len: usize) -> Self {
        Self { values: vec![None; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, channel: usize) -> Option<T> {
        self.values[channel]
    }

    pub fn values(&self) -> &[Option<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Option<T>> {
        self.values
    }

    pub fn firing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Spike times `t = ln z`.
    pub fn times(&self) -> Vec<Option<T>> {
        self.values.iter().map(|v| v.map(|z| z.ln())).collect()
    }
}

/// Weights and constants of one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams<T> {
    pub weights: Vec<T>,
    pub threshold: T,
    pub tau_syn: T,
}

impl<T: Scalar> NeuronParams<T> {
    pub fn new(weights: Vec<T>, threshold: T, tau_syn: T) -> Result<Self> {
        if !(threshold > T::zero()) || !threshold.is_finite() {
            return Err(Error::InvalidParams(format!("threshold must be positive, got {threshold}")));
        }
        if !(tau_syn > T::zero()) || !tau_syn.is_finite() {
            return Err(Error::InvalidParams(format!("tau_syn must be positive, got {tau_syn}")));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite weight {w}")));
        }
        Ok(Self { weights, threshold, tau_syn })
    }

    /// Unit threshold and unit synaptic time constant.
    pub fn canonical(weights: Vec<T>) -> Self {
        Self { weights, threshold: T::one(), tau_syn: T::one() }
    }

    /// The closed form is only valid for unit threshold and time constant.
    pub fn is_canonical(&self) -> bool {
        self.threshold == T::one() && self.tau_syn == T::one()
    }
}

/// Result of solving the first-spike relation for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalSolution<T> {
    /// Channels in arrival order (ties by channel index). When the neuron
    /// does not fire this holds every input spike.
    pub causal_set: Vec<usize>,
    pub z_out: Option<T>,
    pub fired: bool,
}

impl<T: Scalar> CausalSolution<T> {
    pub fn t_out(&self) -> Option<T> {
        self.z_out.map(|z| z.ln())
    }
}

/// Compact firing record used by the layer kernels: the causal set is the
/// first `prefix` entries of the sorted input list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Fire<T> {
    pub prefix: u32,
    pub z_out: T,
    /// `sum_C w - threshold`, strictly positive.
    pub denom: T,
}

/// `z_out = sum_wz / denom` if it lies in `[zk, next)`. The division is
/// skipped when a product with a 1e-4 relative margin already rules the
/// window out; otherwise the quotient decides, exactly as without the guard.
#[inline]
fn accept<T: Scalar>(sum_wz: T, denom: T, zk: T, next: Option<T>) -> Option<T> {
    let margin = T::lit(1e-4);
    if sum_wz < zk * denom * (T::one() - margin) {
        return None;
    }
    if next.is_some_and(|zn| sum_wz > zn * denom * (T::one() + margin)) {
        return None;
    }
    let z_out = sum_wz / denom;
    (z_out >= zk && next.is_none_or(|zn| z_out < zn)).then_some(z_out)
}

/// Sorted-prefix search for the causal set.
///
/// `zs` must be sorted ascending; `weight(k)` is the weight of the k-th
/// entry. Equal `z` values join the prefix together before the acceptance
/// test runs.
#[inline]
pub(crate) fn scan_prefix<T: Scalar>(
    zs: &[T],
    weight: impl Fn(usize) -> T,
    threshold: T,
) -> Option<Fire<T>> {
    let n = zs.len();
    let mut sum_w = T::zero();
    let mut sum_wz = T::zero();
    let mut i = 0;
    while i < n {
        let zk = zs[i];
        let mut j = i;
        while j < n && zs[j] == zk {
            let w = weight(j);
            sum_w = sum_w + w;
            sum_wz = sum_wz + w * zs[j];
            j += 1;
        }
        if sum_w > threshold {
            let denom = sum_w - threshold;
            if let Some(z_out) = accept(sum_wz, denom, zk, zs.get(j).copied()) {
                return Some(Fire { prefix: j as u32, z_out, denom });
            }
        }
        i = j;
    }
    None
}

/// [`scan_prefix`] for `rows` neurons sharing one sorted input list.
/// `wt[tap * rows + r]` is row `r`'s weight for `tap`. Per row the sums are
/// accumulated in the same order as the single-row scan, so the results
/// match it bit for bit.
pub(crate) fn scan_rows<T: Scalar>(
    zs: &[T],
    taps: &[u32],
    wt: &[T],
    rows: usize,
    threshold: T,
    out: &mut Vec<Option<Fire<T>>>,
) {
    let start = out.len();
    out.resize(start + rows, None);
    let fires = &mut out[start..];
    let mut sum_w = vec![T::zero(); rows];
    let mut sum_wz = vec![T::zero(); rows];
    let mut done = vec![false; rows];
    let mut open = rows;
    let margin = T::lit(1e-4);
    let n = zs.len();
    let mut i = 0;
    while i < n && open > 0 {
        let zk = zs[i];
        let mut j = i;
        while j < n && zs[j] == zk {
            let w = &wt[taps[j] as usize * rows..][..rows];
            for ((sw, swz), &wr) in sum_w.iter_mut().zip(sum_wz.iter_mut()).zip(w) {
                *sw = *sw + wr;
                *swz = *swz + wr * zk;
            }
            j += 1;
        }
        let next = zs.get(j).copied();
        // Branch-free pre-screen of every row; `accept` decides exactly.
        let lo = zk * (T::one() - margin);
        let hi = next.map_or(T::infinity(), |zn| zn * (T::one() + margin));
        let mut any = false;
        for ((&sw, &swz), &d) in sum_w.iter().zip(&sum_wz).zip(&done) {
            let denom = sw - threshold;
            any |= !d & (denom > T::zero()) & (swz >= lo * denom) & (swz <= hi * denom);
        }
        if any {
            for r in 0..rows {
                if !done[r] && sum_w[r] > threshold {
                    let denom = sum_w[r] - threshold;
                    if let Some(z_out) = accept(sum_wz[r], denom, zk, next) {
                        fires[r] = Some(Fire { prefix: j as u32, z_out, denom });
                        done[r] = true;
                        open -= 1;
                    }
                }
            }
        }
        i = j;
    }
}

/// Orders firing channels by `(z, channel)`.
pub(crate) fn sorted_firing<T: Scalar>(inputs: &ZVector<T>) -> (Vec<u32>, Vec<T>) {
    let mut idx: Vec<(T, u32)> = inputs
        .values()
        .iter()
        .enumerate()
        .filter_map(|(c, z)| z.map(|z| (z, c as u32)))
        .collect();
    idx.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite z").then(a.1.cmp(&b.1)));
    idx.into_iter().map(|(z, c)| (c, z)).unzip()
}

/// Maps normalized values in `[0, 1]` to spike times (identity on the
/// normalized scale). `None` marks a missing value, which stays silent.
pub fn encode_times<T: Scalar>(values: &[Option<T>]) -> Result<SpikeVector<T>> {
    for (channel, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Range { channel, value: v.to_f64_lossy() });
            }
        }
    }
    SpikeVector::from_dense(values)
}

pub fn z_of<T: Scalar>(spikes: &SpikeVector<T>) -> ZVector<T> {
    let mut values = vec![None; spikes.channels()];
    for &(c, t) in spikes.spikes() {
        values[c] = Some(t.exp());
    }
    ZVector::new(values)
}

/// Solves the first-spike relation for one neuron.
pub fn solve_causal<T: Scalar>(inputs: &ZVector<T>, params: &NeuronParams<T>) -> Result<CausalSolution<T>> {
    if !params.is_canonical() {
        return Err(Error::InvalidParams(
            "closed form requires threshold = 1 and tau_syn = 1".into(),
        ));
    }
    if inputs.len() != params.weights.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} weights",
            inputs.len(),
            params.weights.len()
        )));
    }
    let (order, zs) = sorted_firing(inputs);
    let fire = scan_prefix(&zs, |k| params.weights[order[k] as usize], params.threshold);
    let sol = match fire {
        Some(f) => CausalSolution {
            causal_set: order[..f.prefix as usize].iter().map(|&c| c as usize).collect(),
            z_out: Some(f.z_out),
            fired: true,
        },
        None => CausalSolution {
            causal_set: order.iter().map(|&c| c as usize).collect(),
            z_out: None,
            fired: false,
        },
    };
    Ok(sol)
}

/// Partial derivatives of `z_out` with respect to every weight and every
/// input `z`, with the causal set held fixed. Non-causal channels get zero.
pub fn grad_causal<T: Scalar>(
    inputs: &ZVector<T>,
    params: &NeuronParams<T>,
    sol: &CausalSolution<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let z_out = match (sol.fired, sol.z_out) {
        (true, Some(z)) => z,
        _ => return Err(Error::Contract("gradient requested for a neuron that did not fire".into())),
    };
    let n = params.weights.len();
    let sum_w: T = sol.causal_set.iter().map(|&c| params.weights[c]).sum();
    let denom = sum_w - params.threshold;
    let mut dw = vec![T::zero(); n];
    let mut dz = vec![T::zero(); n];
    for &c in &sol.causal_set {
        let zc = inputs
            .get(c)
            .ok_or_else(|| Error::Contract(format!("causal channel {c} is silent")))?;
        dw[c] = (zc - z_out) / denom;
        dz[c] = params.weights[c] / denom;
    }
    Ok((dw, dz))
}
