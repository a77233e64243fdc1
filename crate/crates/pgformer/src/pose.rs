//! Skeleton data model, scene container, temporal DCT/IDCT coding, and the
//! leader-anchored canonicalization used by the metrics.
//!
//! Coordinates are millimeters throughout. The vertical axis is z, so the
//! yaw alignment in [`leader_normalize`] rotates about z only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Joint topology plus the root joints that define the body coordinate
/// (for ExPI-style skeletons: the two hips and the back).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub root_joints: Vec<usize>,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        root_joints: Vec<usize>,
    ) -> Result<Self> {
        let j = joint_names.len();
        for &(p, c) in &edges {
            if p >= j || c >= j {
                return Err(Error::Contract(format!(
                    "edge ({p}, {c}) out of range for {j} joints"
                )));
            }
            if p == c {
                return Err(Error::Contract(format!("self-loop edge at joint {p}")));
            }
        }
        if root_joints.is_empty() {
            return Err(Error::Contract("root_joints must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &r in &root_joints {
            if r >= j {
                return Err(Error::Contract(format!(
                    "root joint {r} out of range for {j} joints"
                )));
            }
            if !seen.insert(r) {
                return Err(Error::Contract(format!("duplicate root joint {r}")));
            }
        }
        Ok(Self {
            joint_names,
            edges,
            root_joints,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// Generic J-joint chain skeleton with the first three joints as roots
    /// (or fewer when J < 3).
    pub fn generic(j: usize) -> Self {
        let joint_names = (0..j).map(|i| format!("j{i}")).collect();
        let edges = (1..j).map(|i| (i - 1, i)).collect();
        let root_joints = (0..j.min(3)).collect();
        Self {
            joint_names,
            edges,
            root_joints,
        }
    }
}

/// One person's pose track: `[T, J, 3]` millimeter coordinates at `fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    frames: Tensor,
    fps: f64,
}

impl PoseSequence {
    pub fn new(frames: Tensor, fps: f64) -> Result<Self> {
        let shape = frames.shape();
        if shape.len() != 3 || shape[2] != 3 || shape[0] == 0 {
            return Err(Error::Contract(format!(
                "pose sequence must be [T, J, 3] with T >= 1, got {shape:?}"
            )));
        }
        if fps <= 0.0 {
            return Err(Error::Contract(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let jc = self.joint_count();
        let base = (t * jc + j) * 3;
        let d = self.frames.data();
        [d[base], d[base + 1], d[base + 2]]
    }

    pub fn set_joint(&mut self, t: usize, j: usize, p: [f64; 3]) {
        let jc = self.joint_count();
        let base = (t * jc + j) * 3;
        let d = self.frames.data_mut();
        d[base] = p[0];
        d[base + 1] = p[1];
        d[base + 2] = p[2];
    }

    /// One frame as a `[J, 3]` matrix.
    pub fn frame(&self, t: usize) -> Tensor {
        let jc = self.joint_count();
        let data = self.frames.data()[t * jc * 3..(t + 1) * jc * 3].to_vec();
        Tensor::new(vec![jc, 3], data).unwrap()
    }

    /// Frames `start..end` as a new sequence.
    pub fn segment(&self, start: usize, end: usize) -> PoseSequence {
        let jc = self.joint_count();
        let data = self.frames.data()[start * jc * 3..end * jc * 3].to_vec();
        PoseSequence {
            frames: Tensor::new(vec![end - start, jc, 3], data).unwrap(),
            fps: self.fps,
        }
    }

    /// The whole track flattened to `[T, 3J]`, joint-major per frame.
    pub fn as_matrix(&self) -> Tensor {
        let t = self.len();
        let jc = self.joint_count();
        self.frames.reshape(vec![t, jc * 3]).unwrap()
    }

    pub fn from_matrix(mat: &Tensor, joints: usize, fps: f64) -> Result<PoseSequence> {
        let (t, c) = mat.mat_dims();
        if c != joints * 3 {
            return Err(Error::Dim {
                op: "from_matrix",
                lhs: mat.shape().to_vec(),
                rhs: vec![t, joints * 3],
            });
        }
        PoseSequence::new(mat.reshape(vec![t, joints, 3])?, fps)
    }
}

/// An n-person scene of time-aligned pose sequences. Person 0 is the leader
/// and person 1 the follower for pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub persons: Vec<PoseSequence>,
    pub roles: Vec<String>,
}

impl Scene {
    pub fn new(persons: Vec<PoseSequence>) -> Result<Self> {
        if persons.len() < 2 {
            return Err(Error::Contract(format!(
                "a scene needs at least 2 persons, got {}",
                persons.len()
            )));
        }
        let (t, j, fps) = (persons[0].len(), persons[0].joint_count(), persons[0].fps());
        for p in &persons[1..] {
            if p.len() != t || p.joint_count() != j || p.fps() != fps {
                return Err(Error::Contract(
                    "persons in a scene must share T, J and fps".into(),
                ));
            }
        }
        let roles = (0..persons.len())
            .map(|i| match i {
                0 => "leader".to_string(),
                1 => "follower".to_string(),
                k => format!("person{k}"),
            })
            .collect();
        Ok(Self { persons, roles })
    }

    pub fn person_count(&self) -> usize {
        self.persons.len()
    }

    pub fn len(&self) -> usize {
        self.persons[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.persons[0].joint_count()
    }

    pub fn fps(&self) -> f64 {
        self.persons[0].fps()
    }

    pub fn segment(&self, start: usize, end: usize) -> Scene {
        let persons = self.persons.iter().map(|p| p.segment(start, end)).collect();
        Scene {
            persons,
            roles: self.roles.clone(),
        }
    }
}

/// Orthonormal DCT-II matrix of size `t`; its transpose is the inverse.
pub fn dct_matrix(t: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![t, t]);
    let tf = t as f64;
    for k in 0..t {
        let s = if k == 0 {
            (1.0 / tf).sqrt()
        } else {
            (2.0 / tf).sqrt()
        };
        for n in 0..t {
            let v =
                s * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * tf)).cos();
            m.set2(k, n, v);
        }
    }
    m
}

/// Orthonormal DCT-II along time, independently per channel: `[T, C] -> [T, C]`.
pub fn dct_time(seq: &Tensor) -> Result<Tensor> {
    let (t, _) = seq.mat_dims();
    dct_matrix(t).matmul(seq)
}

/// Exact inverse of [`dct_time`].
pub fn idct_time(coeffs: &Tensor) -> Result<Tensor> {
    let (t, _) = coeffs.mat_dims();
    dct_matrix(t).transpose().matmul(coeffs)
}

/// `[J, 3] -> [3J]` joint-major flattening.
pub fn flatten_pose(frame: &Tensor) -> Result<Tensor> {
    let shape = frame.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Contract(format!(
            "expected a [J, 3] frame, got {shape:?}"
        )));
    }
    frame.reshape(vec![shape[0] * 3])
}

/// Inverse of [`flatten_pose`].
pub fn unflatten_pose(flat: &Tensor) -> Result<Tensor> {
    let n = flat.numel();
    if n % 3 != 0 {
        return Err(Error::Parse(format!(
            "flat pose length {n} is not divisible by 3"
        )));
    }
    flat.reshape(vec![n / 3, 3])
}

/// The rigid transform produced by [`leader_normalize`]: `p ↦ R (p - c)`.
#[derive(Clone, Copy, Debug)]
pub struct CanonicalTransform {
    pub center: [f64; 3],
    pub yaw: f64,
}

impl CanonicalTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let x = p[0] - self.center[0];
        let y = p[1] - self.center[1];
        let z = p[2] - self.center[2];
        let (s, c) = self.yaw.sin_cos();
        [c * x - s * y, s * x + c * y, z]
    }
}

/// Compute the canonicalizing transform from the anchor person's first frame:
/// the root-joint centroid moves to the origin and the hip axis (root 0 to
/// root 1, projected to the horizontal plane) aligns with +x.
pub fn canonical_transform(
    scene: &Scene,
    anchor_person: usize,
    skeleton: &Skeleton,
) -> Result<CanonicalTransform> {
    if anchor_person >= scene.person_count() {
        return Err(Error::Contract(format!(
            "anchor person {anchor_person} out of range for {} persons",
            scene.person_count()
        )));
    }
    if skeleton.root_joints.len() < 2 {
        return Err(Error::Normalization(
            "need at least 2 root joints to define a hip axis".into(),
        ));
    }
    let anchor = &scene.persons[anchor_person];
    let mut center = [0.0; 3];
    for &r in &skeleton.root_joints {
        let p = anchor.joint(0, r);
        for a in 0..3 {
            center[a] += p[a];
        }
    }
    for a in center.iter_mut() {
        *a /= skeleton.root_joints.len() as f64;
    }
    let h0 = anchor.joint(0, skeleton.root_joints[0]);
    let h1 = anchor.joint(0, skeleton.root_joints[1]);
    let ax = h1[0] - h0[0];
    let ay = h1[1] - h0[1];
    let norm = (ax * ax + ay * ay).sqrt();
    if norm < 1e-9 {
        return Err(Error::Normalization(
            "degenerate hip axis: zero horizontal length".into(),
        ));
    }
    // Rotate by -atan2 so the hip axis lands on +x.
    Ok(CanonicalTransform {
        center,
        yaw: -ay.atan2(ax),
    })
}

/// Apply one rigid transform (from the anchor person's first frame) to every
/// person and frame, preserving all relative positions.
pub fn leader_normalize(scene: &Scene, anchor_person: usize, skeleton: &Skeleton) -> Result<Scene> {
    let tf = canonical_transform(scene, anchor_person, skeleton)?;
    let mut out = scene.clone();
    for person in &mut out.persons {
        for t in 0..person.len() {
            for j in 0..person.joint_count() {
                let p = tf.apply(person.joint(t, j));
                person.set_joint(t, j, p);
            }
        }
    }
    Ok(out)
}
