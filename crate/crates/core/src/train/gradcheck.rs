//! Built-in gradient self-test: analytic gradients against central finite
//! differences on small random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::model::{forward_z, Model, ModelSpec};
use crate::spike::ZVector;

use super::backward::backward;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-3;
/// Gradients smaller than this on both sides count as agreeing.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub models: usize,
    pub checked: usize,
    /// Coordinates skipped because a causal set or a penalty kink moved
    /// within the step.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// A random three-layer model (conv, dense, dense) with every output firing
/// on its random input.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Model<f64>, ZVector<f64>, usize) {
    let spec = ModelSpec {
        input_shape: vec![5, 5, 1],
        layers: vec![
            LayerSpec::conv2d([5, 5, 1], [3, 3], 2, 2),
            LayerSpec::dense(18, 5),
            LayerSpec::dense(5, 3),
        ],
        threshold: 1.0,
        tau_syn: 1.0,
        input_time_scale: 1.0,
    };
    loop {
        let model = Model::<f64>::init(spec.clone(), rng.random()).expect("valid spec");
        let input = ZVector::new(
            (0..25)
                .map(|_| rng.random_bool(0.85).then(|| rng.random_range(0.0..1.0f64).exp()))
                .collect(),
        );
        let trace = forward_z(input.clone(), &model).expect("shapes match");
        if trace.outputs().firing_count() == 3 {
            return (model, input, rng.random_range(0..3));
        }
    }
}

type Signature = Vec<(Vec<Option<u32>>, Vec<Vec<u32>>)>;

fn total_loss(model: &Model<f64>, input: &ZVector<f64>, label: usize, l2: f64, pen: f64) -> (f64, Signature) {
    let trace = forward_z(input.clone(), model).expect("shapes match");
    let (value, _) = backward(&trace, model, label, l2, pen).expect("valid trace");
    let sig = trace.layers.iter().map(|l| l.signature()).collect();
    (value.total, sig)
}

/// Compares every weight gradient of one model against central differences.
pub fn check_model(
    model: &Model<f64>,
    input: &ZVector<f64>,
    label: usize,
    l2: f64,
    pen: f64,
    report: &mut GradCheckReport,
) -> std::result::Result<(), String> {
    let trace = forward_z(input.clone(), model).map_err(|e| e.to_string())?;
    let (_, analytic) = backward(&trace, model, label, l2, pen).map_err(|e| e.to_string())?;
    check_gradients(model, input, label, l2, pen, &analytic, report)
}

/// Compares supplied gradients against central differences of the total loss.
pub fn check_gradients(
    model: &Model<f64>,
    input: &ZVector<f64>,
    label: usize,
    l2: f64,
    pen: f64,
    analytic: &[Vec<f64>],
    report: &mut GradCheckReport,
) -> std::result::Result<(), String> {
    let (_, base_sig) = total_loss(model, input, label, l2, pen);
    let floor = model.spec.threshold + super::loss::FIRING_MARGIN;

    let mut probe = model.clone();
    for l in 0..model.weights.len() {
        let fan_in = model.spec.layers[l].fan_in();
        for i in 0..model.weights[l].len() {
            let row = i / fan_in;
            let row_sum: f64 = model.weights[l][row * fan_in..(row + 1) * fan_in].iter().sum();
            if pen > 0.0 && (row_sum - floor).abs() < 10.0 * FD_STEP {
                report.skipped += 1;
                continue;
            }
            let w0 = model.weights[l][i];
            probe.weights[l][i] = w0 + FD_STEP;
            let (fp, sp) = total_loss(&probe, input, label, l2, pen);
            probe.weights[l][i] = w0 - FD_STEP;
            let (fm, sm) = total_loss(&probe, input, label, l2, pen);
            probe.weights[l][i] = w0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[l][i];
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;
            if scale < ABS_FLOOR {
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= REL_TOL && (a - numeric).abs() > ABS_FLOOR {
                return Err(format!(
                    "layer {l} weight {i}: analytic {a:.6e} vs numeric {numeric:.6e} (rel {rel:.2e})"
                ));
            }
        }
    }
    report.models += 1;
    Ok(())
}

/// Runs the check on `models` random models. Fails on the first mismatch.
pub fn self_test(seed: u64, models: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for m in 0..models {
        let (model, input, label) = random_case(&mut rng);
        check_model(&model, &input, label, 1e-3, 0.5, &mut report)
            .map_err(|e| Error::GradCheck(format!("model {m}: {e}")))?;
    }
    if report.checked == 0 {
        return Err(Error::GradCheck("no coordinate had a stable causal set".into()));
    }
    Ok(report)
}
