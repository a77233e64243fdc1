//! Evaluation metrics: MPJPE, JME (joint mean error after leader-anchored
//! canonicalization), AME (aligned mean error after per-person
//! root-centering and rigid Procrustes alignment), and per-joint error
//! export.

use std::io::Write;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pose::{leader_normalize, Scene, Skeleton};

/// Per-horizon metric values plus per-joint errors.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    /// Evaluation horizons in seconds, strictly increasing.
    pub horizons: Vec<f64>,
    pub jme: Vec<f64>,
    pub ame: Vec<f64>,
    pub mpjpe: Vec<f64>,
    /// Mean error per person and joint over the evaluated frames, after the
    /// JME canonicalization.
    pub per_joint: Vec<Vec<f64>>,
}

impl MetricReport {
    /// Human-readable table mirroring the usual horizon-column layout.
    pub fn write_table<W: Write>(&self, w: &mut W, label: &str) -> Result<()> {
        write!(w, "{:<20}", "horizon (s)")?;
        for h in &self.horizons {
            write!(w, " {h:>10.2}")?;
        }
        writeln!(w)?;
        for (name, row) in [("jme", &self.jme), ("ame", &self.ame), ("mpjpe", &self.mpjpe)] {
            if row.is_empty() {
                continue;
            }
            write!(w, "{:<20}", format!("{label} {name} (mm)"))?;
            for v in row {
                write!(w, " {v:>10.2}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Machine-readable rows: `label,metric,horizon_s,value`.
    pub fn write_csv_rows<W: Write>(&self, w: &mut W, label: &str) -> Result<()> {
        for (name, row) in [("jme", &self.jme), ("ame", &self.ame), ("mpjpe", &self.mpjpe)] {
            for (h, v) in self.horizons.iter().zip(row) {
                writeln!(w, "{label},{name},{h},{v}")?;
            }
        }
        Ok(())
    }
}

/// Map horizons in seconds to 1-based frame indices: `round(h · fps)`.
pub fn horizon_frames(horizons: &[f64], fps: f64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(horizons.len());
    let mut prev = 0.0;
    for (i, &h) in horizons.iter().enumerate() {
        if h <= 0.0 || (i > 0 && h <= prev) {
            return Err(Error::Config(format!(
                "horizons must be positive and strictly increasing, got {horizons:?}"
            )));
        }
        prev = h;
        let frame = (h * fps).round() as usize;
        if frame == 0 {
            return Err(Error::Config(format!(
                "horizon {h}s is below one frame at {fps} fps"
            )));
        }
        out.push(frame);
    }
    Ok(out)
}

fn check_scene_pair(pred: &Scene, gt: &Scene) -> Result<()> {
    if pred.person_count() != gt.person_count()
        || pred.joint_count() != gt.joint_count()
        || pred.len() != gt.len()
    {
        return Err(Error::Dim {
            op: "metrics",
            lhs: vec![pred.person_count(), pred.len(), pred.joint_count()],
            rhs: vec![gt.person_count(), gt.len(), gt.joint_count()],
        });
    }
    Ok(())
}

/// Plain MPJPE over all persons at one frame.
fn frame_mpjpe(pred: &Scene, gt: &Scene, frame: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for (pp, gp) in pred.persons.iter().zip(&gt.persons) {
        for j in 0..pred.joint_count() {
            let a = pp.joint(frame, j);
            let b = gp.joint(frame, j);
            sum += dist(a, b);
            count += 1;
        }
    }
    sum / count as f64
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// MPJPE without any normalization, per horizon.
pub fn mpjpe(pred: &Scene, gt: &Scene, horizons: &[f64]) -> Result<Vec<f64>> {
    check_scene_pair(pred, gt)?;
    let frames = horizon_frames(horizons, gt.fps())?;
    frames
        .iter()
        .map(|&f| {
            if f > pred.len() {
                return Err(Error::Config(format!(
                    "horizon frame {f} beyond prediction length {}",
                    pred.len()
                )));
            }
            Ok(frame_mpjpe(pred, gt, f - 1))
        })
        .collect()
}

/// Joint mean error: both scenes are canonicalized by the same anchor (the
/// leader), then MPJPE runs over all persons jointly, so relative-position
/// errors count.
pub fn jme(pred: &Scene, gt: &Scene, skeleton: &Skeleton, horizons: &[f64]) -> Result<Vec<f64>> {
    check_scene_pair(pred, gt)?;
    let pred_n = leader_normalize(pred, 0, skeleton)?;
    let gt_n = leader_normalize(gt, 0, skeleton)?;
    mpjpe(&pred_n, &gt_n, horizons)
}

/// Optimal rigid alignment (rotation + translation, no scaling) of `pred`
/// onto `gt`, both `[J, 3]`.
pub fn procrustes_align(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let (j, c) = pred.mat_dims();
    if c != 3 || gt.shape() != pred.shape() {
        return Err(Error::Dim {
            op: "procrustes_align",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    if j < 3 {
        return Err(Error::Alignment(format!(
            "need at least 3 points for a unique rotation, got {j}"
        )));
    }
    let centroid = |t: &Tensor| -> [f64; 3] {
        let mut c = [0.0; 3];
        for r in 0..j {
            for a in 0..3 {
                c[a] += t.get2(r, a);
            }
        }
        c.map(|v| v / j as f64)
    };
    let cp = centroid(pred);
    let cg = centroid(gt);
    // Cross-covariance H = Σ (p - cp)(g - cg)ᵀ.
    let mut h = Matrix3::<f64>::zeros();
    for r in 0..j {
        for a in 0..3 {
            for b in 0..3 {
                h[(a, b)] += (pred.get2(r, a) - cp[a]) * (gt.get2(r, b) - cg[b]);
            }
        }
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Alignment("svd failed".into())),
    };
    // Rank check: a degenerate (collinear) point set has no unique rotation.
    let s = svd.singular_values;
    if s[1] < 1e-9 * s[0].max(1.0) {
        return Err(Error::Alignment(
            "degenerate point set: rank < 2 cross-covariance".into(),
        ));
    }
    let v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        // Flip the direction of least variance to stay in SO(3).
        let mut v_fixed = v;
        for a in 0..3 {
            v_fixed[(a, 2)] = -v_fixed[(a, 2)];
        }
        r = v_fixed * u.transpose();
    }
    let mut out = Tensor::zeros(vec![j, 3]);
    for row in 0..j {
        let p = [
            pred.get2(row, 0) - cp[0],
            pred.get2(row, 1) - cp[1],
            pred.get2(row, 2) - cp[2],
        ];
        for a in 0..3 {
            let v = r[(a, 0)] * p[0] + r[(a, 1)] * p[1] + r[(a, 2)] * p[2] + cg[a];
            out.set2(row, a, v);
        }
    }
    Ok(out)
}

fn root_centered(scene: &Scene, skeleton: &Skeleton) -> Scene {
    let mut out = scene.clone();
    for person in &mut out.persons {
        for t in 0..person.len() {
            let mut c = [0.0; 3];
            for &r in &skeleton.root_joints {
                let p = person.joint(t, r);
                for a in 0..3 {
                    c[a] += p[a];
                }
            }
            for a in c.iter_mut() {
                *a /= skeleton.root_joints.len() as f64;
            }
            for jn in 0..person.joint_count() {
                let mut p = person.joint(t, jn);
                for a in 0..3 {
                    p[a] -= c[a];
                }
                person.set_joint(t, jn, p);
            }
        }
    }
    out
}

/// Aligned mean error: persons are independently root-centered, each
/// predicted frame is rigidly aligned to its ground truth, then MPJPE —
/// only pose-shape errors remain.
pub fn ame(pred: &Scene, gt: &Scene, skeleton: &Skeleton, horizons: &[f64]) -> Result<Vec<f64>> {
    check_scene_pair(pred, gt)?;
    let frames = horizon_frames(horizons, gt.fps())?;
    let pred_c = root_centered(pred, skeleton);
    let gt_c = root_centered(gt, skeleton);
    let mut out = Vec::with_capacity(frames.len());
    for &f in &frames {
        if f > pred.len() {
            return Err(Error::Config(format!(
                "horizon frame {f} beyond prediction length {}",
                pred.len()
            )));
        }
        let t = f - 1;
        let mut sum = 0.0;
        let mut count = 0;
        for (pp, gp) in pred_c.persons.iter().zip(&gt_c.persons) {
            let aligned = procrustes_align(&pp.frame(t), &gp.frame(t))?;
            let gt_frame = gp.frame(t);
            for j in 0..pred.joint_count() {
                let a = [aligned.get2(j, 0), aligned.get2(j, 1), aligned.get2(j, 2)];
                let b = [gt_frame.get2(j, 0), gt_frame.get2(j, 1), gt_frame.get2(j, 2)];
                sum += dist(a, b);
                count += 1;
            }
        }
        out.push(sum / count as f64);
    }
    Ok(out)
}

/// Mean error per person and joint over the given frames, after the JME
/// canonicalization: `[n][J]`.
pub fn per_joint_errors(
    pred: &Scene,
    gt: &Scene,
    skeleton: &Skeleton,
    frames: &[usize],
) -> Result<Vec<Vec<f64>>> {
    check_scene_pair(pred, gt)?;
    let pred_n = leader_normalize(pred, 0, skeleton)?;
    let gt_n = leader_normalize(gt, 0, skeleton)?;
    let mut out = vec![vec![0.0; pred.joint_count()]; pred.person_count()];
    for &f in frames {
        if f > pred.len() {
            return Err(Error::Config(format!(
                "frame {f} beyond prediction length {}",
                pred.len()
            )));
        }
        for (p, (pp, gp)) in pred_n.persons.iter().zip(&gt_n.persons).enumerate() {
            for j in 0..pred.joint_count() {
                out[p][j] += dist(pp.joint(f - 1, j), gp.joint(f - 1, j));
            }
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= frames.len() as f64;
        }
    }
    Ok(out)
}

/// Full report over the standard horizons.
pub fn evaluate(
    pred: &Scene,
    gt: &Scene,
    skeleton: &Skeleton,
    horizons: &[f64],
) -> Result<MetricReport> {
    let frames = horizon_frames(horizons, gt.fps())?;
    Ok(MetricReport {
        horizons: horizons.to_vec(),
        jme: jme(pred, gt, skeleton, horizons)?,
        ame: ame(pred, gt, skeleton, horizons)?,
        mpjpe: mpjpe(pred, gt, horizons)?,
        per_joint: per_joint_errors(pred, gt, skeleton, &frames)?,
    })
}
