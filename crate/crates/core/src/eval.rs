//! Evaluation: accuracy, spikes consumed before the decision, recognition
//! latency under an emitter-rate model and per-spike energy.
//!
//! A sample's *consumed* spikes are the input spikes that arrived strictly
//! before the first output spike. Latency is `consumed / points_per_second`
//! and energy is `alpha * (consumed + spikes emitted by the network)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{forward_model, Model, ModelSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateModel {
    pub points_per_second: f64,
}

impl RateModel {
    pub fn new(points_per_second: f64) -> Result<Self> {
        if !(points_per_second > 0.0 && points_per_second.is_finite()) {
            return Err(Error::Config(format!("emitter rate must be > 0, got {points_per_second}")));
        }
        Ok(Self { points_per_second })
    }

    pub fn latency(&self, spikes: usize) -> f64 {
        spikes as f64 / self.points_per_second
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    /// Joules per spike.
    pub alpha: f64,
}

impl EnergyModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

pub fn energy_for_spikes(spikes: u64, energy: &EnergyModel) -> f64 {
    spikes as f64 * energy.alpha
}

/// Energy if every neuron in the model fired once and every input spike was
/// consumed.
pub fn energy_upper_bound(spec: &ModelSpec, input_total: u64, energy: &EnergyModel) -> f64 {
    energy_for_spikes(spec.neuron_count() as u64 + input_total, energy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub predicted: Option<usize>,
    pub correct: bool,
    pub consumed_spikes: usize,
    pub total_input_spikes: usize,
    /// Hidden and output spikes emitted.
    pub neuron_spikes: usize,
    pub r_data: f64,
    pub t_rec_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub no_prediction: usize,
    pub mean_r_data: f64,
    pub mean_consumed_spikes: f64,
    pub median_consumed_spikes: f64,
    pub min_consumed_spikes: usize,
    pub max_consumed_spikes: usize,
    pub mean_total_input_spikes: f64,
    pub mean_t_rec_s: f64,
    pub median_t_rec_s: f64,
    pub mean_energy_j: f64,
    pub neuron_count: usize,
    /// Every neuron firing plus every input spike, at the largest input
    /// total seen.
    pub energy_upper_bound_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rate: RateModel,
    pub energy: EnergyModel,
    pub summary: Summary,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn evaluate<T: Scalar>(
    samples: &[Sample],
    model: &Model<T>,
    rate: &RateModel,
    energy: &EnergyModel,
) -> Result<MetricsReport> {
    let classes = model.spec.classes();
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::Config(format!("label {} but the model has {classes} outputs", s.label)));
    }
    let records = samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let trace = forward_model(&s.frame, model)?;
            let predicted = trace.predicted_class;
            let total = trace.total_input_spikes;
            // Nothing fired: the whole input was read without a decision.
            let consumed = if predicted.is_some() { trace.consumed_input_count } else { total };
            let neuron_spikes = trace.neuron_spikes();
            Ok(SampleRecord {
                index,
                label: s.label,
                predicted,
                correct: predicted == Some(s.label),
                consumed_spikes: consumed,
                total_input_spikes: total,
                neuron_spikes,
                r_data: if total > 0 { consumed as f64 / total as f64 } else { 1.0 },
                t_rec_s: rate.latency(consumed),
                energy_j: energy_for_spikes((consumed + neuron_spikes) as u64, energy),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(records, &model.spec, *rate, *energy))
}

pub fn summarize(records: Vec<SampleRecord>, spec: &ModelSpec, rate: RateModel, energy: EnergyModel) -> MetricsReport {
    let n = records.len();
    let mean = |f: &dyn Fn(&SampleRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let correct = records.iter().filter(|r| r.correct).count();
    let max_total = records.iter().map(|r| r.total_input_spikes).max().unwrap_or(0);
    let summary = Summary {
        samples: n,
        correct,
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        no_prediction: records.iter().filter(|r| r.predicted.is_none()).count(),
        mean_r_data: mean(&|r| r.r_data),
        mean_consumed_spikes: mean(&|r| r.consumed_spikes as f64),
        median_consumed_spikes: median(records.iter().map(|r| r.consumed_spikes as f64).collect()),
        min_consumed_spikes: records.iter().map(|r| r.consumed_spikes).min().unwrap_or(0),
        max_consumed_spikes: records.iter().map(|r| r.consumed_spikes).max().unwrap_or(0),
        mean_total_input_spikes: mean(&|r| r.total_input_spikes as f64),
        mean_t_rec_s: mean(&|r| r.t_rec_s),
        median_t_rec_s: median(records.iter().map(|r| r.t_rec_s).collect()),
        mean_energy_j: mean(&|r| r.energy_j),
        neuron_count: spec.neuron_count(),
        energy_upper_bound_j: energy_upper_bound(spec, max_total as u64, &energy),
    };
    MetricsReport { rate, energy, summary, records }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from(
            "index,label,predicted,correct,consumed_spikes,total_input_spikes,neuron_spikes,r_data,t_rec_s,energy_j\n",
        );
        for r in &self.records {
            let pred = r.predicted.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.label,
                pred,
                r.correct as u8,
                r.consumed_spikes,
                r.total_input_spikes,
                r.neuron_spikes,
                r.r_data,
                r.t_rec_s,
                r.energy_j
            )
            .unwrap();
        }
        out
    }

    /// One-line human summary.
    pub fn headline(&self) -> String {
        let s = &self.summary;
        format!(
            "accuracy {:.2}% ({}/{}), R_data {:.1}%, consumed {:.1} spikes, T_rec {:.4} ms, energy {:.4e} J",
            100.0 * s.accuracy,
            s.correct,
            s.samples,
            100.0 * s.mean_r_data,
            s.mean_consumed_spikes,
            1e3 * s.mean_t_rec_s,
            s.mean_energy_j
        )
    }

    /// Writes `report.json`, `samples.csv`, `hist_consumed.csv` and
    /// `hist_t_rec.csv` into `dir`.
    pub fn write(&self, dir: &Path, bins: usize) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (consumed, t_rec) = histogram_report(self, bins)?;
        let files = [
            ("report.json", self.to_json()),
            ("samples.csv", self.samples_csv()),
            ("hist_consumed.csv", consumed.to_csv()),
            ("hist_t_rec.csv", t_rec.to_csv()),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub quantity: String,
    pub unit: String,
    pub bins: Vec<Bin>,
}

impl Histogram {
    /// `bins` equal-width bins spanning `[min, max]`; the last bin is closed.
    /// All-equal values give a single bin.
    pub fn fixed_width(quantity: &str, unit: &str, values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("histogram of an empty report".into()));
        }
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = if hi > lo { bins } else { 1 };
        let width = (hi - lo) / bins as f64;
        let mut out: Vec<Bin> = (0..bins)
            .map(|i| Bin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
                count: 0,
            })
            .collect();
        for &v in values {
            let i = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            out[i].count += 1;
        }
        Ok(Self { quantity: quantity.into(), unit: unit.into(), bins: out })
    }

    /// The most populated bin (the first on ties).
    pub fn modal(&self) -> &Bin {
        self.bins.iter().rev().max_by_key(|b| b.count).unwrap()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let u = &self.unit;
        let mut out = format!("{q}_lo_{u},{q}_hi_{u},count\n", q = self.quantity);
        for b in &self.bins {
            writeln!(out, "{},{},{}", b.lo, b.hi, b.count).unwrap();
        }
        out
    }
}

/// Distributions of consumed spikes and recognition time.
pub fn histogram_report(report: &MetricsReport, bins: usize) -> Result<(Histogram, Histogram)> {
    let consumed: Vec<f64> = report.records.iter().map(|r| r.consumed_spikes as f64).collect();
    let t_rec: Vec<f64> = report.records.iter().map(|r| r.t_rec_s).collect();
    Ok((
        Histogram::fixed_width("consumed", "spikes", &consumed, bins)?,
        Histogram::fixed_width("t_rec", "s", &t_rec, bins)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PulseFrame;

    #[test]
    fn reference_energy_figures() {
        let low = EnergyModel::new(0.37e-12).unwrap();
        let high = EnergyModel::new(45e-12).unwrap();
        assert!((energy_for_spikes(80_628, &low) / 29.83e-9 - 1.0).abs() < 5e-3);
        assert!((energy_for_spikes(80_628, &high) / 3.63e-6 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn upper_bound_counts_neurons_and_inputs() {
        let e = EnergyModel::new(1.0).unwrap();
        assert_eq!(ModelSpec::kitti().neuron_count(), 80_424);
        assert_eq!(energy_upper_bound(&ModelSpec::kitti(), 204, &e), 80_628.0);
        let empty = ModelSpec { input_shape: vec![0], layers: vec![], threshold: 1.0, tau_syn: 1.0, input_time_scale: 1.0 };
        assert_eq!(energy_upper_bound(&empty, 0, &e), 0.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(RateModel::new(0.0).is_err());
        assert!(EnergyModel::new(-1.0).is_err());
    }

    fn toy() -> (Model<f64>, Vec<Sample>) {
        // Output 0 fires from input 0 alone; output 1 never fires.
        let spec = ModelSpec::mlp(vec![3], &[2]);
        let model = Model::new(spec, vec![vec![2.0, 0.0, 0.0, 0.1, 0.1, 0.1]]).unwrap();
        let f = |t: [Option<f32>; 3]| PulseFrame::new(vec![3], t.to_vec()).unwrap();
        let samples = vec![
            Sample::new(f([Some(0.0), Some(0.5), Some(2.0)]), 0),
            Sample::new(f([None, Some(0.5), Some(2.0)]), 1),
        ];
        (model, samples)
    }

    #[test]
    fn evaluate_toy() {
        let (model, samples) = toy();
        let rate = RateModel::new(1e6).unwrap();
        let energy = EnergyModel::new(1e-12).unwrap();
        let r = evaluate(&samples, &model, &rate, &energy).unwrap();
        // z_out = 2/(2-1) = 2, t = ln 2 ~ 0.69: input at 0.5 is consumed, 2.0 is not.
        let a = &r.records[0];
        assert_eq!((a.predicted, a.consumed_spikes, a.total_input_spikes), (Some(0), 2, 3));
        assert_eq!(a.neuron_spikes, 1);
        assert!((a.t_rec_s - 2e-6).abs() < 1e-18);
        assert!((a.energy_j - 3e-12).abs() < 1e-24);
        // No prediction: incorrect, everything consumed.
        let b = &r.records[1];
        assert_eq!((b.predicted, b.correct, b.consumed_spikes, b.r_data), (None, false, 2, 1.0));
        assert_eq!(r.summary.accuracy, 0.5);
        assert_eq!(r.summary.no_prediction, 1);
    }

    #[test]
    fn energy_linear_and_latency_inverse() {
        let (model, samples) = toy();
        let run = |pps, a| evaluate(&samples, &model, &RateModel::new(pps).unwrap(), &EnergyModel::new(a).unwrap()).unwrap();
        let base = run(1e6, 1e-12);
        let other = run(2e6, 2e-12);
        for (x, y) in base.records.iter().zip(&other.records) {
            assert_eq!(y.energy_j, 2.0 * x.energy_j);
            assert_eq!(y.t_rec_s, x.t_rec_s / 2.0);
        }
    }

    #[test]
    fn label_out_of_range_is_config_error() {
        let (model, mut samples) = toy();
        samples[0].label = 5;
        let r = evaluate(&samples, &model, &RateModel::new(1.0).unwrap(), &EnergyModel::new(1.0).unwrap());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::fixed_width("x", "u", &[0.0, 1.0, 2.0, 10.0], 5).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 1, 0, 0, 1]);
        assert_eq!(h.total(), 4);
        assert_eq!(h.modal().lo, 0.0);
        let one = Histogram::fixed_width("x", "u", &[7.0], 10).unwrap();
        assert_eq!(one.bins.len(), 1);
        assert_eq!(one.bins[0].count, 1);
        assert!(Histogram::fixed_width("x", "u", &[], 3).is_err());
        assert!(h.to_csv().starts_with("x_lo_u,x_hi_u,count\n"));
    }

    #[test]
    fn r_data_and_latency_arithmetic() {
        let rate = RateModel::new(2.233e6).unwrap();
        let r = 4512.0 / 5900.0;
        assert_eq!((100.0f64 * r).floor(), 76.0);
        assert!((rate.latency(4512) * 1e3 - 2.02).abs() < 5e-3);
    }
}
