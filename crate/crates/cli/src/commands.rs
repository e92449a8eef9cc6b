use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pulsenet::eval::{evaluate, EnergyModel, RateModel};
use pulsenet::ingest::{self, synth, DvsIngestConfig, KittiIngestConfig};
use pulsenet::simlidar;
use pulsenet::train::{self, gradcheck};
use pulsenet::{checkpoint, forward_model, Dataset, Error, Model, ModelSpec, PulseFrame, Result, Sample, Split};
use serde_json::json;

use crate::config::{RunConfig, Task};
use crate::{EvalArgs, GenDvsArgs, GenKittiArgs, GenSimArgs, IngestArgs, IngestSource, MetricArgs, PredictArgs};
use crate::{RenderArgs, TrainArgs};

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config file)")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn balance_line(ds: &Dataset, split: Split) -> String {
    let counts = ds.class_counts(split);
    let (lo, hi) = (counts.iter().min().copied().unwrap_or(0), counts.iter().max().copied().unwrap_or(0));
    format!("{}: {} samples, {lo}..{hi} per class", split.as_str(), ds.samples(split).len())
}

pub fn gen_sim(cfg: &RunConfig, a: GenSimArgs) -> Result<()> {
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let mut sim = cfg.simlidar.clone().unwrap_or_default();
    sim.seed = a.seed.or(cfg.seed).unwrap_or(sim.seed);
    sim.noise_max = a.noise.unwrap_or(sim.noise_max);
    sim.train = a.train.unwrap_or(sim.train);
    sim.test = a.test.unwrap_or(sim.test);
    sim.validate()?;
    let ds = simlidar::build_dataset(&sim)?;
    ds.save(&out)?;
    println!("wrote {}", out.join(pulsenet::dataset::MANIFEST_FILE).display());
    println!("{}", balance_line(&ds, Split::Train));
    println!("{}", balance_line(&ds, Split::Test));
    Ok(())
}

pub fn gen_kitti(cfg: &RunConfig, a: GenKittiArgs) -> Result<()> {
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let view = cfg.kitti.clone().unwrap_or_default().view;
    synth::write_scenes(&out, a.scans, a.seed.or(cfg.seed).unwrap_or(0), &view)?;
    println!("wrote {} scans under {}", a.scans, out.display());
    Ok(())
}

pub fn gen_dvs(cfg: &RunConfig, a: GenDvsArgs) -> Result<()> {
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    if !(0.0..0.5).contains(&a.jitter) {
        return Err(Error::Config(format!("jitter must be in [0, 0.5), got {}", a.jitter)));
    }
    let events = cfg.dvs.clone().unwrap_or_default().events;
    ingest::write_dvs_motifs(&out, a.windows, a.jitter, a.seed.or(cfg.seed).unwrap_or(0), &events)?;
    println!("wrote {} classes x {} windows under {}", ingest::dvs::MOTIF_CLASSES, a.windows, out.display());
    Ok(())
}

pub fn ingest(cfg: &RunConfig, a: IngestArgs) -> Result<()> {
    let input = required(a.input, &cfg.paths.data, "input directory")?;
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let patch = |mut s: ingest::SplitConfig| {
        s.test = a.test.unwrap_or(s.test);
        s.train = a.train.or(s.train);
        s.seed = a.seed.or(cfg.seed).unwrap_or(s.seed);
        s
    };
    let ds = match a.source {
        IngestSource::Kitti => {
            let k = cfg.kitti.clone().unwrap_or_default();
            let (ds, report) = ingest::build_kitti(&input, &KittiIngestConfig { view: k.view, split: patch(k.split) })?;
            println!(
                "scans {} (skipped {}), crops {}, behind sensor {}, DontCare {}",
                report.scans, report.skipped_scans, report.samples, report.behind_sensor, report.dont_care
            );
            ds
        }
        IngestSource::Dvs => {
            let d = cfg.dvs.clone().unwrap_or_default();
            let mut events = d.events;
            events.window_us = a.window_us.unwrap_or(events.window_us);
            ingest::build_dvs(&input, &DvsIngestConfig { dvs: events, split: patch(d.split) })?
        }
    };
    ds.save(&out)?;
    let train = ds.class_counts(Split::Train);
    let test = ds.class_counts(Split::Test);
    for (i, name) in ds.class_names.iter().enumerate() {
        println!("{name}: train {} test {}", train[i], test[i]);
    }
    println!("wrote {}", out.join(pulsenet::dataset::MANIFEST_FILE).display());
    Ok(())
}

fn check_fit(spec: &ModelSpec, ds: &Dataset) -> Result<()> {
    if let Some(s) = ds.train.iter().chain(&ds.test).find(|s| !spec.accepts(s.frame.shape())) {
        return Err(Error::Shape(format!(
            "frames of shape {:?} do not fit the model input {:?}",
            s.frame.shape(),
            spec.input_shape
        )));
    }
    if ds.classes() > spec.classes() {
        return Err(Error::Shape(format!("dataset has {} classes, model {} outputs", ds.classes(), spec.classes())));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let data = required(a.data, &cfg.paths.data, "dataset directory")?;
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let ds = Dataset::load(&data)?;
    let task = a.task.or(cfg.task).or_else(|| Task::from_name(&ds.task)).unwrap_or(Task::Simlidar);
    let spec = match &a.model {
        Some(name) => ModelSpec::preset(name).ok_or_else(|| Error::Config(format!("unknown model preset {name:?}")))?,
        None => cfg.model_spec(task)?,
    };
    check_fit(&spec, &ds)?;

    let mut tc = cfg.train_config(task);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.batch_size = a.batch.unwrap_or(tc.batch_size);
    tc.seed = a.seed.or(cfg.seed).unwrap_or(tc.seed);
    tc.target_train_accuracy = a.target_accuracy.or(tc.target_train_accuracy);
    tc.validate()?;

    let samples: Vec<Sample> = match a.per_class {
        Some(n) => ingest::balanced(&ds.train, ds.classes(), n)?,
        None => ds.train.clone(),
    };

    if !a.skip_self_test {
        let r = gradcheck::self_test(tc.seed, 10)?;
        println!("gradient self-test: {} models, {} coordinates, max rel err {:.2e}", r.models, r.checked, r.max_rel_err);
    }

    create_dir(&out)?;
    let resolved = json!({ "task": task.name(), "model": spec, "train": tc });
    write_file(&out.join("run.json"), format!("{}\n", serde_json::to_string_pretty(&resolved)?).as_bytes())?;
    let log_path = out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let ckpt = out.join("checkpoint.snnm");
    let tmp = out.join("checkpoint.snnm.tmp");

    let mut model = Model::init(spec, tc.seed)?;
    let validation = (!ds.test.is_empty()).then_some(ds.test.as_slice());
    let records = train::train(&mut model, &samples, validation, &tc, |m, r| {
        writeln!(log, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&log_path, e))?;
        checkpoint::save(m, &tmp)?;
        fs::rename(&tmp, &ckpt).map_err(|e| Error::io(&ckpt, e))?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}{}  ({:.1}s)",
            r.epoch,
            r.loss.total,
            r.train_accuracy,
            r.validation_accuracy.map(|v| format!("  test {v:.4}")).unwrap_or_default(),
            r.wall_time_s
        );
        Ok(())
    })?;
    let final_path = out.join("model.snnm");
    checkpoint::save(&model, &final_path)?;
    let last = records.last().expect("at least one epoch");
    println!(
        "trained {} epochs: train accuracy {:.4}{}; wrote {}",
        records.len(),
        last.train_accuracy,
        last.validation_accuracy.map(|v| format!(", test accuracy {v:.4}")).unwrap_or_default(),
        final_path.display()
    );
    Ok(())
}

fn metric_models(cfg: &RunConfig, m: &MetricArgs) -> Result<(RateModel, EnergyModel)> {
    let e = cfg.eval.clone().unwrap_or_default();
    Ok((RateModel::new(m.rate.unwrap_or(e.points_per_second))?, EnergyModel::new(m.alpha.unwrap_or(e.alpha))?))
}

fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path)
}

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let data = required(a.data, &cfg.paths.data, "dataset directory")?;
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = required(a.out, &cfg.paths.reports.clone().or(cfg.paths.out.clone()), "report directory")?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        s => return Err(Error::Config(format!("unknown split {s:?}"))),
    };
    let (rate, energy) = metric_models(cfg, &a.metrics)?;
    let bins = a.bins.or(cfg.eval.as_ref().map(|e| e.bins)).unwrap_or(20);
    let ds = Dataset::load(&data)?;
    let model = load_model(&ckpt)?;
    check_fit(&model.spec, &ds)?;
    let report = evaluate(ds.samples(split), &model, &rate, &energy)?;
    report.write(&out, bins)?;
    println!("{}", report.headline());
    println!(
        "rate {:.4e} points/s, alpha {:.4e} J, energy upper bound {:.4e} J; wrote {}",
        rate.points_per_second,
        energy.alpha,
        report.summary.energy_upper_bound_j,
        out.display()
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig, a: PredictArgs) -> Result<()> {
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let (rate, _) = metric_models(cfg, &a.metrics)?;
    let model = load_model(&ckpt)?;
    let frame = PulseFrame::read(&a.frame)?;
    if !model.spec.accepts(frame.shape()) {
        return Err(Error::Shape(format!("frame {:?} vs model input {:?}", frame.shape(), model.spec.input_shape)));
    }
    let trace = forward_model(&frame, &model)?;
    let consumed = if trace.no_prediction() { trace.total_input_spikes } else { trace.consumed_input_count };
    let line = json!({
        "predicted": trace.predicted_class,
        "first_output_time": trace.first_output_time,
        "consumed_spikes": consumed,
        "total_input_spikes": trace.total_input_spikes,
        "t_rec_s": rate.latency(consumed),
    });
    println!("{line}");
    Ok(())
}

pub fn render(a: RenderArgs) -> Result<()> {
    let frame = PulseFrame::read(&a.frame)?;
    write_file(&a.out, &frame.to_pgm())
}
