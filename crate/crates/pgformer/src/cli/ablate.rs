//! Ablation harness: trains architecture variants under identical data and
//! seeds and reports per-horizon JME as mean ± std over the seed list.

use std::fs;
use std::io::Write;

use crate::cli::commands::{load_data_file, windows_of};
use crate::cli::{AblateArgs, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{horizon_frames, jme};
use crate::model::{PGformer, PGformerConfig};
use crate::training::{self, TrainConfig};
use crate::xqa::ProxyMode;

/// The comparable architecture variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Baseline transformer: no cross-talk, no proxy, no gravity loss.
    Bt,
    /// Baseline plus the gravity loss.
    BtG,
    /// Cross-query attention without the proxy.
    Xqa,
    /// XQA with the bilinear proxy.
    XqaP,
    /// XQA, proxy and gravity loss (the full model).
    XqaPG,
    /// Full model without the temporal DCT stages.
    NoDct,
    /// Proxy combined multiplicatively on the score map.
    GateMul,
    /// Proxy added to the score map.
    GateAdd,
}

pub const VARIANT_NAMES: [&str; 8] = [
    "bt", "bt+g", "xqa", "xqa+p", "xqa+p+g", "no_dct", "gate_mul", "gate_add",
];

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bt" => Ok(Self::Bt),
            "bt+g" => Ok(Self::BtG),
            "xqa" => Ok(Self::Xqa),
            "xqa+p" => Ok(Self::XqaP),
            "xqa+p+g" => Ok(Self::XqaPG),
            "no_dct" => Ok(Self::NoDct),
            "gate_mul" => Ok(Self::GateMul),
            "gate_add" => Ok(Self::GateAdd),
            other => Err(Error::Config(format!(
                "unknown variant '{other}'; valid names: {}",
                VARIANT_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bt => "bt",
            Self::BtG => "bt+g",
            Self::Xqa => "xqa",
            Self::XqaP => "xqa+p",
            Self::XqaPG => "xqa+p+g",
            Self::NoDct => "no_dct",
            Self::GateMul => "gate_mul",
            Self::GateAdd => "gate_add",
        }
    }

    pub fn apply(&self, cfg: &mut PGformerConfig) {
        cfg.use_dct = true;
        cfg.use_xqa = true;
        cfg.use_proxy = true;
        cfg.proxy_mode = ProxyMode::Bilinear;
        cfg.use_gravity_loss = true;
        match self {
            Self::Bt => {
                cfg.use_xqa = false;
                cfg.use_proxy = false;
                cfg.use_gravity_loss = false;
            }
            Self::BtG => {
                cfg.use_xqa = false;
                cfg.use_proxy = false;
            }
            Self::Xqa => {
                cfg.use_proxy = false;
                cfg.use_gravity_loss = false;
            }
            Self::XqaP => {
                cfg.use_gravity_loss = false;
            }
            Self::XqaPG => {}
            Self::NoDct => {
                cfg.use_dct = false;
            }
            Self::GateMul => {
                cfg.proxy_mode = ProxyMode::GateMultiply;
            }
            Self::GateAdd => {
                cfg.proxy_mode = ProxyMode::GateAdd;
            }
        }
    }
}

struct RunResult {
    variant: &'static str,
    seed: u64,
    /// Mean JME per horizon over the evaluation windows.
    jme: Vec<f64>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let variants = args
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>>>()?;
    if args.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("config is missing data.train".into()))?;
    let train_file = load_data_file(train_path)?;
    let test_file = match &cfg.data.test {
        Some(p) => load_data_file(p)?,
        None => train_file.clone(),
    };
    let frames = horizon_frames(&cfg.run.horizons, test_file.fps)?;
    let needed = *frames.iter().max().unwrap();
    let train_windows = windows_of(
        &train_file,
        cfg.model.history,
        cfg.model.horizon,
        cfg.data.stride,
    )?;
    let eval_windows = windows_of(&test_file, cfg.model.history, needed, cfg.run.eval_stride)?;
    if train_windows.is_empty() || eval_windows.is_empty() {
        return Err(Error::Config(
            "not enough frames for training or evaluation windows".into(),
        ));
    }

    let mut results: Vec<RunResult> = Vec::new();
    let mut runs_logged = 0usize;
    for &variant in &variants {
        for &seed in &args.seeds {
            let mut model_cfg = cfg.model.clone();
            variant.apply(&mut model_cfg);
            let mut model = PGformer::new(model_cfg.clone(), seed)?;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            training::train(&train_windows, &mut model, &tc)?;
            if !model_cfg.use_xqa {
                verify_isolation(&model, &eval_windows[0])?;
            }
            let mut sums = vec![0.0; cfg.run.horizons.len()];
            for w in &eval_windows {
                let pred = if needed <= model_cfg.horizon {
                    model.predict(&w.history)?.segment(0, needed)
                } else {
                    model.predict_recursive(&w.history, needed)?
                };
                let vals = jme(&pred, &w.future, &test_file.skeleton, &cfg.run.horizons)?;
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
            }
            for s in sums.iter_mut() {
                *s /= eval_windows.len() as f64;
            }
            runs_logged += 1;
            println!(
                "[{}/{}] {} seed {}: jme {:?}",
                runs_logged,
                variants.len() * args.seeds.len(),
                variant.name(),
                seed,
                sums.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
            );
            results.push(RunResult {
                variant: variant.name(),
                seed,
                jme: sums,
            });
        }
    }

    let table = render_table(&variants, &args.seeds, &results, &cfg.run.horizons)?;
    print!("{table}");
    let out = args.out.clone().unwrap_or_else(|| cfg.run.out.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("ablation.txt"), &table)?;
    let mut csv = Vec::new();
    writeln!(&mut csv, "horizon_s,metric,variant,seed,value_mm")
        .map_err(Error::from)?;
    for r in &results {
        for (h, v) in cfg.run.horizons.iter().zip(&r.jme) {
            writeln!(&mut csv, "{h},jme,{},{},{v}", r.variant, r.seed).map_err(Error::from)?;
        }
    }
    fs::write(out.join("ablation.csv"), &csv)?;
    println!("{} runs logged; tables written to {}", runs_logged, out.display());
    Ok(())
}

/// Variants without XQA must have an exactly zero cross-person Jacobian:
/// perturbing one person's history cannot change the other's prediction.
fn verify_isolation(model: &PGformer, window: &crate::data::SceneWindow) -> Result<()> {
    let base = model.predict(&window.history)?;
    let mut perturbed = window.history.clone();
    let mut p = perturbed.persons[1].joint(0, 0);
    p[0] += 50.0;
    perturbed.persons[1].set_joint(0, 0, p);
    let moved = model.predict(&perturbed)?;
    if base.persons[0].frames().data() != moved.persons[0].frames().data() {
        return Err(Error::Contract(
            "isolation violated: no-XQA variant leaked cross-person influence".into(),
        ));
    }
    Ok(())
}

fn render_table(
    variants: &[Variant],
    seeds: &[u64],
    results: &[RunResult],
    horizons: &[f64],
) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("{:<10} {:>6}", "variant", "seeds"));
    for h in horizons {
        out.push_str(&format!(" {h:>16.2}s"));
    }
    out.push('\n');
    for variant in variants {
        let rows: Vec<&RunResult> = results
            .iter()
            .filter(|r| r.variant == variant.name())
            .collect();
        out.push_str(&format!("{:<10} {:>6}", variant.name(), rows.len()));
        for h in 0..horizons.len() {
            let vals: Vec<f64> = rows.iter().map(|r| r.jme[h]).collect();
            let (mean, std) = mean_and_std(&vals);
            if seeds.len() >= 2 {
                out.push_str(&format!(" {mean:>9.1} ±{std:>6.1}"));
            } else {
                out.push_str(&format!(" {mean:>17.1}"));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub(crate) fn mean_and_std(vals: &[f64]) -> (f64, f64) {
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    (mean, var.sqrt())
}
