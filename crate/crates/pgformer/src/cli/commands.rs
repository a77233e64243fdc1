use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::{EvalArgs, GradcheckArgs, PredictArgs, RunConfig, SynthArgs, TrainArgs};
use crate::data::{
    self, load_motion_file_from_path, make_windows, save_motion_file, MotionFile, SceneRecord,
    SceneWindow,
};
use crate::error::{Error, Result};
use crate::metrics::{self, horizon_frames, MetricReport};
use crate::model::PGformer;
use crate::numerics::Tensor;
use crate::pose::{PoseSequence, Scene, Skeleton};
use crate::training::{self, gradcheck_model, TrainConfig};

pub(crate) fn load_data_file(path: &Path) -> Result<MotionFile> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "data path does not exist: {}",
            path.display()
        )));
    }
    load_motion_file_from_path(path)
}

pub(crate) fn windows_of(
    file: &MotionFile,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SceneWindow>> {
    let mut out = Vec::new();
    for rec in &file.sequences {
        out.extend(make_windows(&rec.scene, history, horizon, stride)?);
    }
    Ok(out)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg.model)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.run.out = out.clone();
    }
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("config is missing data.train".into()))?;
    let file = load_data_file(train_path)?;
    if file.skeleton.joint_count() != cfg.model.joints {
        return Err(Error::Config(format!(
            "data has J={} joints but the model config has J={}",
            file.skeleton.joint_count(),
            cfg.model.joints
        )));
    }
    let windows = windows_of(&file, cfg.model.history, cfg.model.horizon, cfg.data.stride)?;
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no training windows: sequences shorter than history+horizon = {}",
            cfg.model.history + cfg.model.horizon
        )));
    }

    fs::create_dir_all(&cfg.run.out)?;
    let mut model = PGformer::new(cfg.model.clone(), cfg.run.seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.run.seed;

    println!(
        "training on {} windows from {} sequences ({} parameters)",
        windows.len(),
        file.sequences.len(),
        model.params().scalar_count()
    );
    let mut best: Option<(f64, Vec<u8>)> = None;
    let log = training::train_with(&windows, &mut model, &tc, |record, model| {
        if best.as_ref().is_none_or(|(t, _)| record.total < *t) {
            let mut bytes = Vec::new();
            model.save(&mut bytes)?;
            best = Some((record.total, bytes));
        }
        Ok(())
    })?;

    let out = &cfg.run.out;
    model.save_to_path(&out.join("checkpoint_final.pgck"))?;
    if let Some((_, bytes)) = best {
        fs::write(out.join("checkpoint_best.pgck"), bytes)?;
    }
    let mut table = Vec::new();
    log.write_table(&mut table)?;
    fs::write(out.join("loss_log.txt"), &table)?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    fs::write(out.join("loss_log.csv"), &csv)?;
    print!("{}", String::from_utf8_lossy(&table));
    println!("checkpoints and loss log written to {}", out.display());
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = PGformer::load_from_path(&args.checkpoint)?;
    let file = load_data_file(&args.data)?;
    check_skeleton(&model, &file)?;
    let horizon = args.horizon_frames.unwrap_or(model.config().horizon);
    if horizon == 0 {
        return Err(Error::Config("horizon_frames must be positive".into()));
    }
    let mut sequences = Vec::new();
    for rec in &file.sequences {
        if rec.scene.len() < model.config().history {
            continue;
        }
        let pred = if horizon <= model.config().horizon {
            model.predict(&rec.scene)?.segment(0, horizon)
        } else {
            model.predict_recursive(&rec.scene, horizon)?
        };
        sequences.push(SceneRecord {
            name: rec.name.clone(),
            scene: pred,
            action: rec.action.clone(),
        });
    }
    let out_file = MotionFile {
        fps: file.fps,
        skeleton: file.skeleton.clone(),
        sequences,
    };
    let mut bytes = Vec::new();
    save_motion_file(&out_file, &mut bytes)?;
    fs::write(&args.out, bytes)?;
    println!(
        "wrote {} predicted sequences ({horizon} frames each) to {}",
        out_file.sequences.len(),
        args.out.display()
    );
    Ok(())
}

fn check_skeleton(model: &PGformer, file: &MotionFile) -> Result<()> {
    if file.skeleton.joint_count() != model.config().joints {
        return Err(Error::Config(format!(
            "skeleton mismatch: data has J={} joints, checkpoint expects J={}",
            file.skeleton.joint_count(),
            model.config().joints
        )));
    }
    Ok(())
}

/// Per-action accumulation of metric reports.
#[derive(Default)]
struct EvalAccumulator {
    reports: Vec<MetricReport>,
}

impl EvalAccumulator {
    fn mean(&self, horizons: &[f64]) -> MetricReport {
        let n = self.reports.len().max(1) as f64;
        let mut mean = MetricReport {
            horizons: horizons.to_vec(),
            jme: vec![0.0; horizons.len()],
            ame: vec![0.0; horizons.len()],
            mpjpe: vec![0.0; horizons.len()],
            per_joint: Vec::new(),
        };
        for r in &self.reports {
            for h in 0..horizons.len() {
                mean.jme[h] += r.jme[h] / n;
                mean.ame[h] += r.ame[h] / n;
                mean.mpjpe[h] += r.mpjpe[h] / n;
            }
            if mean.per_joint.is_empty() {
                mean.per_joint = vec![vec![0.0; r.per_joint[0].len()]; r.per_joint.len()];
            }
            for (p, row) in r.per_joint.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    mean.per_joint[p][j] += v / n;
                }
            }
        }
        mean
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if !matches!(args.metric.as_str(), "jme" | "ame" | "both") {
        return Err(Error::Config(format!(
            "unknown metric '{}' (expected jme, ame or both)",
            args.metric
        )));
    }
    for &h in &args.horizons {
        if h > args.max_horizon {
            return Err(Error::Config(format!(
                "horizon {h}s exceeds max_horizon {}s",
                args.max_horizon
            )));
        }
    }
    if args.eval_stride == 0 {
        return Err(Error::Config("eval_stride must be positive".into()));
    }
    let model = PGformer::load_from_path(&args.checkpoint)?;
    let file = load_data_file(&args.data)?;
    check_skeleton(&model, &file)?;
    let frames = horizon_frames(&args.horizons, file.fps)?;
    let needed = *frames.iter().max().unwrap();
    let cfg = model.config();

    let mut per_action: BTreeMap<String, EvalAccumulator> = BTreeMap::new();
    let mut overall = EvalAccumulator::default();
    let mut windows_evaluated = 0usize;
    for rec in &file.sequences {
        let windows = make_windows(&rec.scene, cfg.history, needed, args.eval_stride)?;
        for w in windows {
            let pred = if needed <= cfg.horizon {
                model.predict(&w.history)?.segment(0, needed)
            } else {
                model.predict_recursive(&w.history, needed)?
            };
            let report = metrics::evaluate(&pred, &w.future, &file.skeleton, &args.horizons)?;
            per_action
                .entry(rec.action.clone().unwrap_or_else(|| "unlabeled".into()))
                .or_default()
                .reports
                .push(report.clone());
            overall.reports.push(report);
            windows_evaluated += 1;
        }
    }
    if windows_evaluated == 0 {
        return Err(Error::Config(format!(
            "no evaluation windows: sequences need at least {} frames",
            cfg.history + needed
        )));
    }

    let avg = overall.mean(&args.horizons);
    let mut table = Vec::new();
    {
        use std::io::Write;
        for (action, acc) in &per_action {
            let mean = acc.mean(&args.horizons);
            write_filtered_table(&mut table, &mean, action, &args.metric)?;
        }
        write_filtered_table(&mut table, &avg, "AVG", &args.metric)?;
        writeln!(&mut table, "windows evaluated: {windows_evaluated}")?;
    }
    print!("{}", String::from_utf8_lossy(&table));

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.txt"), &table)?;
        let mut csv = Vec::new();
        {
            use std::io::Write;
            writeln!(&mut csv, "action,metric,horizon_s,value_mm")?;
            for (action, acc) in &per_action {
                acc.mean(&args.horizons).write_csv_rows(&mut csv, action)?;
            }
            avg.write_csv_rows(&mut csv, "AVG")?;
        }
        fs::write(out.join("metrics.csv"), &csv)?;
        let mut pj = Vec::new();
        {
            use std::io::Write;
            writeln!(&mut pj, "person,joint,joint_name,mean_error_mm")?;
            for (p, row) in avg.per_joint.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    writeln!(&mut pj, "{p},{j},{},{v}", file.skeleton.joint_names[j])?;
                }
            }
        }
        fs::write(out.join("per_joint.csv"), &pj)?;
        println!("reports written to {}", out.display());
    }
    Ok(())
}

fn write_filtered_table(
    w: &mut Vec<u8>,
    report: &MetricReport,
    label: &str,
    metric: &str,
) -> Result<()> {
    use std::io::Write;
    let mut filtered = report.clone();
    match metric {
        "jme" => {
            filtered.ame = Vec::new();
            filtered.mpjpe = Vec::new();
        }
        "ame" => {
            filtered.jme = Vec::new();
            filtered.mpjpe = Vec::new();
        }
        _ => {}
    }
    filtered.write_table(w, label)?;
    writeln!(w)?;
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    if args.size != "tiny" {
        return Err(Error::Config(format!(
            "unknown gradcheck size '{}' (only 'tiny' is defined)",
            args.size
        )));
    }
    let cfg = crate::model::PGformerConfig::tiny();
    let mut model = PGformer::new(cfg.clone(), args.seed)?;
    // Small-magnitude probe data keeps finite-difference roundoff below
    // the tolerance.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let mk = |rng: &mut ChaCha8Rng, len: usize| -> Result<PoseSequence> {
        let data = (0..len * cfg.joints * 3)
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        PoseSequence::new(Tensor::new(vec![len, cfg.joints, 3], data)?, cfg.fps)
    };
    let window = SceneWindow {
        history: Scene::new(vec![mk(&mut rng, cfg.history)?, mk(&mut rng, cfg.history)?])?,
        future: Scene::new(vec![mk(&mut rng, cfg.horizon)?, mk(&mut rng, cfg.horizon)?])?,
    };
    let tc = TrainConfig::default();
    let report = gradcheck_model(&mut model, &window, &tc, args.corrupt)?;
    println!(
        "{:<28} {:>12} {:>10}",
        "parameter group", "max rel err", "components"
    );
    for g in &report.groups {
        println!("{:<28} {:>12.3e} {:>10}", g.name, g.max_rel_error, g.components);
    }
    println!(
        "max relative error: {:.3e} (tolerance {:.1e})",
        report.max_rel_error(),
        report.tolerance
    );
    if report.passed() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "gradcheck FAIL: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error(),
            report.tolerance
        )))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let scenes = data::synth_coupled(&cfg.synth)?;
    let skeleton = Skeleton::generic(cfg.synth.joints);
    let sequences: Vec<SceneRecord> = scenes
        .into_iter()
        .enumerate()
        .map(|(i, scene)| SceneRecord {
            name: format!("synth{i:03}"),
            scene,
            action: Some("synthetic".into()),
        })
        .collect();
    let file = MotionFile {
        fps: cfg.synth.fps,
        skeleton,
        sequences,
    };
    let mut bytes = Vec::new();
    save_motion_file(&file, &mut bytes)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&args.out, bytes)?;
    let total_frames: usize = file.sequences.iter().map(|s| s.scene.len()).sum();
    println!(
        "wrote {} sequences, {} frames total, to {}",
        file.sequences.len(),
        total_frames,
        args.out.display()
    );
    Ok(())
}
