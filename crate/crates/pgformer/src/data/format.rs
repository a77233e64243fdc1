//! The motion file format: a text header describing fps, skeleton and
//! sequences, then one binary block of little-endian f64 millimeters.
//!
//! ```text
//! PGMOTION 1
//! fps 25
//! joints 3
//! names hip_l hip_r back
//! edges 0:1 1:2
//! roots 0 1 2
//! sequences 2
//! sequence walk01 2 120 walk
//! sequence danceA 2 300 dance
//! data
//! <binary block>
//! ```
//!
//! Header lines are UTF-8, LF-terminated, whitespace-separated. Each
//! `sequence` line carries: name, person count, frame count, and an
//! optional action label. The binary block concatenates all sequences in
//! header order; within a sequence values are ordered frame-major, then
//! person, joint, axis — `f64le[frames][persons][joints][3]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pose::{PoseSequence, Scene, Skeleton};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "PGMOTION";

/// One named scene with an optional action label.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub name: String,
    pub scene: Scene,
    pub action: Option<String>,
}

/// The in-memory contents of a motion file.
#[derive(Clone, Debug)]
pub struct MotionFile {
    pub fps: f64,
    pub skeleton: Skeleton,
    pub sequences: Vec<SceneRecord>,
}

fn bad_token(what: &str, line: &str) -> Error {
    Error::Parse(format!("invalid {what} in header line '{line}'"))
}

pub fn save_motion_file<W: Write>(file: &MotionFile, w: &mut W) -> Result<()> {
    for name in &file.skeleton.joint_names {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(Error::Parse(format!(
                "joint name '{name}' must be non-empty and whitespace-free"
            )));
        }
    }
    let mut header = String::new();
    header.push_str(&format!("{MAGIC} {FORMAT_VERSION}\n"));
    header.push_str(&format!("fps {}\n", file.fps));
    header.push_str(&format!("joints {}\n", file.skeleton.joint_count()));
    header.push_str(&format!("names {}\n", file.skeleton.joint_names.join(" ")));
    let edges: Vec<String> = file
        .skeleton
        .edges
        .iter()
        .map(|(p, c)| format!("{p}:{c}"))
        .collect();
    header.push_str(&format!("edges {}\n", edges.join(" ")));
    let roots: Vec<String> = file
        .skeleton
        .root_joints
        .iter()
        .map(usize::to_string)
        .collect();
    header.push_str(&format!("roots {}\n", roots.join(" ")));
    header.push_str(&format!("sequences {}\n", file.sequences.len()));
    for rec in &file.sequences {
        if rec.name.contains(char::is_whitespace) || rec.name.is_empty() {
            return Err(Error::Parse(format!(
                "sequence name '{}' must be non-empty and whitespace-free",
                rec.name
            )));
        }
        if rec.scene.joint_count() != file.skeleton.joint_count() {
            return Err(Error::Parse(format!(
                "sequence '{}' has {} joints, skeleton has {}",
                rec.name,
                rec.scene.joint_count(),
                file.skeleton.joint_count()
            )));
        }
        match &rec.action {
            Some(a) => header.push_str(&format!(
                "sequence {} {} {} {}\n",
                rec.name,
                rec.scene.person_count(),
                rec.scene.len(),
                a
            )),
            None => header.push_str(&format!(
                "sequence {} {} {}\n",
                rec.name,
                rec.scene.person_count(),
                rec.scene.len()
            )),
        }
    }
    header.push_str("data\n");
    w.write_all(header.as_bytes())?;
    for rec in &file.sequences {
        let scene = &rec.scene;
        for t in 0..scene.len() {
            for person in &scene.persons {
                for j in 0..scene.joint_count() {
                    for v in person.joint(t, j) {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn save_motion_file_to_path(file: &MotionFile, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    save_motion_file(file, &mut f)
}

pub fn load_motion_file<R: Read>(r: &mut R) -> Result<MotionFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_motion_file(&bytes)
}

pub fn load_motion_file_from_path(path: &Path) -> Result<MotionFile> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_motion_file(&bytes)
}

fn parse_motion_file(bytes: &[u8]) -> Result<MotionFile> {
    // The header is everything up to and including the "data\n" line.
    let marker = b"\ndata\n";
    let data_start = match find_subslice(bytes, marker) {
        Some(pos) => pos + marker.len(),
        None => {
            return Err(Error::Parse(
                "missing 'data' marker line before binary block".into(),
            ))
        }
    };
    let header = std::str::from_utf8(&bytes[..data_start])
        .map_err(|_| Error::Parse("header is not valid utf-8".into()))?;
    let mut lines = header.lines();

    let first = lines.next().unwrap_or_default();
    let mut parts = first.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Parse(format!(
            "bad magic: expected '{MAGIC} <version>', got '{first}'"
        )));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad_token("version", first))?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }

    let mut fps = None;
    let mut joints = None;
    let mut names: Option<Vec<String>> = None;
    let mut edges: Option<Vec<(usize, usize)>> = None;
    let mut roots: Option<Vec<usize>> = None;
    let mut seq_decls: Vec<(String, usize, usize, Option<String>)> = Vec::new();
    let mut declared_count = None;

    for line in lines {
        let line = line.trim_end();
        if line == "data" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("fps") => {
                fps = Some(
                    tok.next()
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| bad_token("fps", line))?,
                )
            }
            Some("joints") => {
                joints = Some(
                    tok.next()
                        .and_then(|v| v.parse::<usize>().ok())
                        .ok_or_else(|| bad_token("joint count", line))?,
                )
            }
            Some("names") => names = Some(tok.map(String::from).collect()),
            Some("edges") => {
                let mut list = Vec::new();
                for pair in tok {
                    let (p, c) = pair
                        .split_once(':')
                        .ok_or_else(|| bad_token("edge", line))?;
                    let p = p.parse().map_err(|_| bad_token("edge index", line))?;
                    let c = c.parse().map_err(|_| bad_token("edge index", line))?;
                    list.push((p, c));
                }
                edges = Some(list);
            }
            Some("roots") => {
                let mut list = Vec::new();
                for v in tok {
                    list.push(v.parse().map_err(|_| bad_token("root index", line))?);
                }
                roots = Some(list);
            }
            Some("sequences") => {
                declared_count = Some(
                    tok.next()
                        .and_then(|v| v.parse::<usize>().ok())
                        .ok_or_else(|| bad_token("sequence count", line))?,
                )
            }
            Some("sequence") => {
                let name = tok.next().ok_or_else(|| bad_token("sequence name", line))?;
                let persons: usize = tok
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad_token("person count", line))?;
                let frames: usize = tok
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad_token("frame count", line))?;
                let action = tok.next().map(String::from);
                seq_decls.push((name.to_string(), persons, frames, action));
            }
            Some(other) => {
                return Err(Error::Parse(format!("unknown header key '{other}'")));
            }
            None => {}
        }
    }

    let fps = fps.ok_or_else(|| Error::Parse("missing fps line".into()))?;
    let joints = joints.ok_or_else(|| Error::Parse("missing joints line".into()))?;
    let names = names.ok_or_else(|| Error::Parse("missing names line".into()))?;
    if names.len() != joints {
        return Err(Error::Parse(format!(
            "names count {} does not match joints {joints}",
            names.len()
        )));
    }
    let skeleton = Skeleton::new(
        names,
        edges.unwrap_or_default(),
        roots.ok_or_else(|| Error::Parse("missing roots line".into()))?,
    )
    .map_err(|e| Error::Parse(format!("invalid skeleton: {e}")))?;
    if let Some(count) = declared_count {
        if count != seq_decls.len() {
            return Err(Error::Parse(format!(
                "header declares {count} sequences but lists {}",
                seq_decls.len()
            )));
        }
    }

    let body = &bytes[data_start..];
    let mut offset = 0usize;
    let mut sequences = Vec::with_capacity(seq_decls.len());
    for (name, persons, frames, action) in seq_decls {
        let scalars = frames * persons * joints * 3;
        let bytes_needed = scalars * 8;
        if offset + bytes_needed > body.len() {
            return Err(Error::Parse(format!(
                "truncated file: sequence '{name}' needs {bytes_needed} bytes at byte offset {} but only {} remain",
                data_start + offset,
                body.len() - offset
            )));
        }
        // Values arrive frame-major [frames][persons][joints][3]; regroup
        // into per-person [frames][joints][3] tracks.
        let mut per_person = vec![Vec::with_capacity(frames * joints * 3); persons];
        let mut cursor = offset;
        for t in 0..frames {
            for (p, track) in per_person.iter_mut().enumerate() {
                for j in 0..joints {
                    for axis in 0..3 {
                        let b: [u8; 8] = body[cursor..cursor + 8].try_into().unwrap();
                        let v = f64::from_le_bytes(b);
                        if !v.is_finite() {
                            return Err(Error::Parse(format!(
                                "non-finite coordinate in sequence '{name}' at frame {t}, person {p}, joint {j}, axis {axis}"
                            )));
                        }
                        track.push(v);
                        cursor += 8;
                    }
                }
            }
        }
        offset = cursor;
        let persons_vec = per_person
            .into_iter()
            .map(|track| {
                PoseSequence::new(Tensor::new(vec![frames, joints, 3], track)?, fps)
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene::new(persons_vec)
            .map_err(|e| Error::Parse(format!("sequence '{name}': {e}")))?;
        sequences.push(SceneRecord {
            name,
            scene,
            action,
        });
    }
    if offset != body.len() {
        return Err(Error::Parse(format!(
            "trailing {} unexpected bytes after byte offset {}",
            body.len() - offset,
            data_start + offset
        )));
    }
    Ok(MotionFile {
        fps,
        skeleton,
        sequences,
    })
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}
