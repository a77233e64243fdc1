//! Losses (per-person MPJPE, the gravity term, the epoch-weighted total),
//! the learning-rate schedule, the training loop, and the
//! finite-difference gradient checker.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SceneWindow;
use crate::error::{Error, Result};
use crate::model::PGformer;
use crate::numerics::{Adam, NodeId, ParamId, ParamStore, Tape, Tensor};

/// How the per-frame gravity offsets reduce to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GravityMode {
    /// `Σ_t ‖g_{t+1} − g_t‖₂` over consecutive frames (default).
    PerStepNorm,
    /// `‖g_last − g_first‖₂`: the literal vector sum telescopes, so only the
    /// endpoints survive.
    Telescoping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Weight of the leader gravity term (λ_l).
    pub lambda_leader: f64,
    /// Weight of the follower gravity term (λ_f).
    pub lambda_follower: f64,
    pub seed: u64,
    pub gravity_mode: GravityMode,
    /// Overrides the `10^{-epoch}` leader-loss weight when set.
    pub fixed_leader_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr0: 0.005,
            lambda_leader: 0.01,
            lambda_follower: 0.0001,
            seed: 0,
            gravity_mode: GravityMode::PerStepNorm,
            fixed_leader_weight: None,
        }
    }
}

/// Learning rate during zero-based `epoch`: `lr0 · 0.1^(epoch/total)`.
pub fn lr_at_epoch(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    lr0 * 0.1f64.powf(epoch as f64 / total_epochs as f64)
}

/// Mean per-joint Euclidean distance between `[K, 3J]` prediction tokens
/// and ground-truth frames, in millimeters.
pub fn mpjpe_loss(tape: &mut Tape, pred: NodeId, gt: &Tensor) -> Result<NodeId> {
    let (k, c) = tape.value(pred).mat_dims();
    let gt_mat = gt.reshape(vec![k, c]).map_err(|_| Error::Dim {
        op: "mpjpe_loss",
        lhs: tape.value(pred).shape().to_vec(),
        rhs: gt.shape().to_vec(),
    })?;
    let gt_node = tape.input(gt_mat);
    let diff = tape.sub(pred, gt_node)?;
    let per_joint = tape.reshape(diff, vec![k * c / 3, 3])?;
    let sq = tape.mul(per_joint, per_joint)?;
    let sums = tape.sum_axis1(sq);
    let dists = tape.sqrt(sums)?;
    Ok(tape.mean_all(dists))
}

/// Per-axis softmax of the `[J, 3]` logits: each axis's weights are
/// non-negative and sum to 1 over the joints.
pub fn gravity_weights(tape: &mut Tape, ps: &ParamStore, logits: ParamId) -> NodeId {
    let w = tape.param(ps, logits);
    let wt = tape.transpose(w);
    let sm = tape.softmax_rows(wt);
    tape.transpose(sm)
}

/// Weighted joint centers `g_t`, one `[1, 3]` node per frame of a `[K, 3J]`
/// prediction.
pub fn gravity_centers(
    tape: &mut Tape,
    ps: &ParamStore,
    pred: NodeId,
    logits: ParamId,
) -> Result<Vec<NodeId>> {
    let (k, c) = tape.value(pred).mat_dims();
    let joints = c / 3;
    let weights = gravity_weights(tape, ps, logits);
    let mut centers = Vec::with_capacity(k);
    for t in 0..k {
        let row = tape.slice_rows(pred, t, t + 1)?;
        let frame = tape.reshape(row, vec![joints, 3])?;
        let weighted = tape.mul(weights, frame)?;
        centers.push(tape.sum_axis0(weighted));
    }
    Ok(centers)
}

/// Scalar gravity penalty for one person's `[K, 3J]` prediction.
pub fn gravity_loss(
    tape: &mut Tape,
    ps: &ParamStore,
    pred: NodeId,
    logits: ParamId,
    mode: GravityMode,
) -> Result<NodeId> {
    let centers = gravity_centers(tape, ps, pred, logits)?;
    if centers.len() < 2 {
        return Ok(tape.scalar(0.0));
    }
    let norm_of = |tape: &mut Tape, a: NodeId, b: NodeId| -> Result<NodeId> {
        let d = tape.sub(b, a)?;
        let sq = tape.mul(d, d)?;
        let sum = tape.sum_axis1(sq);
        let root = tape.sqrt(sum)?;
        Ok(tape.sum_all(root))
    };
    match mode {
        GravityMode::PerStepNorm => {
            let mut total = norm_of(tape, centers[0], centers[1])?;
            for t in 1..centers.len() - 1 {
                let step = norm_of(tape, centers[t], centers[t + 1])?;
                total = tape.add(total, step)?;
            }
            Ok(total)
        }
        GravityMode::Telescoping => norm_of(tape, centers[0], centers[centers.len() - 1]),
    }
}

/// The loss components of one scene, as tape nodes.
pub struct SceneLoss {
    pub total: NodeId,
    pub leader: NodeId,
    pub follower: NodeId,
    pub gravity_leader: Option<NodeId>,
    pub gravity_follower: Option<NodeId>,
}

/// `L = L_f + w_l·L_l + λ_l·L_gl + λ_f·L_gf` with `w_l = 10^{-epoch}`
/// (zero-based) unless overridden. With more than two persons, the follower
/// terms average over persons 1..n.
pub fn total_loss(
    tape: &mut Tape,
    model: &PGformer,
    preds: &[NodeId],
    futures: &[Tensor],
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<SceneLoss> {
    if preds.len() != futures.len() || preds.len() < 2 {
        return Err(Error::Contract(format!(
            "total_loss needs matching predictions and futures for >= 2 persons, got {} and {}",
            preds.len(),
            futures.len()
        )));
    }
    let leader = mpjpe_loss(tape, preds[0], &futures[0])?;
    let mut follower = mpjpe_loss(tape, preds[1], &futures[1])?;
    for i in 2..preds.len() {
        let li = mpjpe_loss(tape, preds[i], &futures[i])?;
        follower = tape.add(follower, li)?;
    }
    if preds.len() > 2 {
        follower = tape.scale(follower, 1.0 / (preds.len() - 1) as f64);
    }
    let leader_weight = cfg
        .fixed_leader_weight
        .unwrap_or_else(|| 10f64.powi(-(epoch as i32)));

    let weighted_leader = tape.scale(leader, leader_weight);
    let mut total = tape.add(follower, weighted_leader)?;

    let (mut g_l, mut g_f) = (None, None);
    if model.config().use_gravity_loss {
        let ps = model.params();
        let gl = gravity_loss(tape, ps, preds[0], model.gravity_logits(0), cfg.gravity_mode)?;
        let mut gf = gravity_loss(tape, ps, preds[1], model.gravity_logits(1), cfg.gravity_mode)?;
        for i in 2..preds.len() {
            let gi = gravity_loss(tape, ps, preds[i], model.gravity_logits(i), cfg.gravity_mode)?;
            gf = tape.add(gf, gi)?;
        }
        if preds.len() > 2 {
            gf = tape.scale(gf, 1.0 / (preds.len() - 1) as f64);
        }
        let wl = tape.scale(gl, cfg.lambda_leader);
        let wf = tape.scale(gf, cfg.lambda_follower);
        total = tape.add(total, wl)?;
        total = tape.add(total, wf)?;
        g_l = Some(gl);
        g_f = Some(gf);
    }
    Ok(SceneLoss {
        total,
        leader,
        follower,
        gravity_leader: g_l,
        gravity_follower: g_f,
    })
}

/// Per-epoch record of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_follower: f64,
    pub loss_leader: f64,
    pub gravity_leader: f64,
    pub gravity_follower: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
}

impl TrainLog {
    /// Human-readable table.
    pub fn write_table<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "epoch", "lr", "L_f", "L_l", "L_gl", "L_gf", "total"
        )?;
        for r in &self.epochs {
            writeln!(
                w,
                "{:>5} {:>12.6} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                r.epoch,
                r.lr,
                r.loss_follower,
                r.loss_leader,
                r.gravity_leader,
                r.gravity_follower,
                r.total
            )?;
        }
        Ok(())
    }

    /// Machine-readable records.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "epoch,lr,loss_follower,loss_leader,gravity_leader,gravity_follower,total"
        )?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.loss_follower,
                r.loss_leader,
                r.gravity_leader,
                r.gravity_follower,
                r.total
            )?;
        }
        Ok(())
    }
}

/// Train on `(history, future)` windows with shuffled mini-batches and the
/// per-epoch multiplicative decay. Deterministic per seed.
pub fn train(windows: &[SceneWindow], model: &mut PGformer, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(windows, model, cfg, |_, _| Ok(()))
}

/// [`train`] with an observer invoked after every epoch (checkpoint
/// snapshots, progress reporting). The observer cannot influence the run.
pub fn train_with(
    windows: &[SceneWindow],
    model: &mut PGformer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &PGformer) -> Result<()>,
) -> Result<TrainLog> {
    if windows.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.lr0);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.lr0, epoch, cfg.epochs);
        adam.set_lr(lr);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grads();
            for &i in batch {
                let window = &windows[i];
                let (mut tape, preds) = model.forward_scene(&window.history)?;
                let futures: Vec<Tensor> = window
                    .future
                    .persons
                    .iter()
                    .map(|p| p.as_matrix())
                    .collect();
                let loss = total_loss(&mut tape, model, &preds, &futures, epoch, cfg)?;
                let scaled = tape.scale(loss.total, 1.0 / batch.len() as f64);
                sums[0] += tape.value(loss.follower).data()[0];
                sums[1] += tape.value(loss.leader).data()[0];
                sums[2] += loss.gravity_leader.map_or(0.0, |n| tape.value(n).data()[0]);
                sums[3] += loss.gravity_follower.map_or(0.0, |n| tape.value(n).data()[0]);
                sums[4] += tape.value(loss.total).data()[0];
                tape.backward(scaled, model.params_mut())?;
            }
            adam.step(model.params_mut());
        }
        log.optimizer_steps = adam.step_count();
        let n = windows.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            loss_follower: sums[0] / n,
            loss_leader: sums[1] / n,
            gravity_leader: sums[2] / n,
            gravity_follower: sums[3] / n,
            total: sums[4] / n,
        };
        on_epoch(&record, model)?;
        log.epochs.push(record);
    }
    Ok(log)
}

/// One parameter group's gradient-check outcome.
#[derive(Clone, Debug)]
pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_error: f64,
    pub components: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .fold(0.0, |acc, g| acc.max(g.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Central-difference check of the full forward loss against the recorded
/// backward pass, over every component of every parameter group.
///
/// The relative error is `|fd - ad| / max(|fd|, |ad|, 1e-3)`: components
/// whose gradients fall below 1e-3 mm/unit are compared absolutely at the
/// matching scale. `corrupt` perturbs one recorded gradient to prove the
/// check can fail.
pub fn gradcheck_model(
    model: &mut PGformer,
    window: &SceneWindow,
    cfg: &TrainConfig,
    corrupt: bool,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let futures: Vec<Tensor> = window.future.persons.iter().map(|p| p.as_matrix()).collect();

    let eval = |model: &PGformer| -> Result<f64> {
        let (mut tape, preds) = model.forward_scene(&window.history)?;
        let loss = total_loss(&mut tape, model, &preds, &futures, 0, cfg)?;
        Ok(tape.value(loss.total).data()[0])
    };

    model.params_mut().zero_grads();
    {
        let (mut tape, preds) = model.forward_scene(&window.history)?;
        let loss = total_loss(&mut tape, model, &preds, &futures, 0, cfg)?;
        let total = loss.total;
        tape.backward(total, model.params_mut())?;
    }
    let mut recorded: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|(name, p)| (name.to_string(), p.grad.data().to_vec()))
        .collect();
    if corrupt && !recorded.is_empty() {
        recorded[0].1[0] += 1.0;
    }

    let ids: Vec<ParamId> = model.params().ids().collect();
    let mut groups = Vec::with_capacity(ids.len());
    for (gi, id) in ids.into_iter().enumerate() {
        let numel = model.params().get(id).value.numel();
        let mut max_rel = 0.0f64;
        for k in 0..numel {
            let orig = model.params().get(id).value.data()[k];
            model.params_mut().get_mut(id).value.data_mut()[k] = orig + H;
            let fp = eval(model)?;
            model.params_mut().get_mut(id).value.data_mut()[k] = orig - H;
            let fm = eval(model)?;
            model.params_mut().get_mut(id).value.data_mut()[k] = orig;
            let fd = (fp - fm) / (2.0 * H);
            let ad = recorded[gi].1[k];
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        groups.push(GradCheckGroup {
            name: recorded[gi].0.clone(),
            max_rel_error: max_rel,
            components: numel,
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance: TOL,
    })
}
