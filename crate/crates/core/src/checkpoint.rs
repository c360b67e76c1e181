//! Checkpoint file format: an 8-byte little-endian header length, a UTF-8
//! JSON header mapping tensor names to `{dtype, shape, byte_offset}` plus a
//! `__meta__` block, then the raw little-endian f32 payload. Saving is
//! deterministic, so save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::optim::Adam;
use crate::param::Parameterized;
use crate::system::StudentTeacher;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint header: {0}")]
    BadHeader(String),
    #[error("unsupported checkpoint version {got} (expected {FORMAT_VERSION})")]
    Version { got: u32 },
    #[error("checkpoint payload truncated: tensor {name} needs bytes {offset}..{end} of {have}")]
    Truncated { name: String, offset: usize, end: usize, have: usize },
    #[error("tensor {name}: stored shape {stored:?} does not match expected {expected:?}")]
    ShapeMismatch { name: String, stored: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint is missing tensor {name}")]
    Missing { name: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<V, E = CheckpointError> = std::result::Result<V, E>;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

/// Header metadata stored alongside the tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    /// "teacher" for a pre-trained teacher, "system" for the full model.
    pub kind: String,
    pub config: RunConfig,
    pub adam_step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "__meta__")]
    meta: CheckpointMeta,
    tensors: BTreeMap<String, TensorEntry>,
}

/// A named tensor to persist.
pub type NamedTensor = (String, Vec<usize>, Vec<f32>);

/// Write named tensors plus metadata to one file.
pub fn save(path: &Path, meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Result<()> {
    let mut entries = BTreeMap::new();
    // payload laid out in sorted-name order for determinism
    let mut sorted: Vec<&NamedTensor> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut offset = 0usize;
    for (name, shape, data) in &sorted {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CheckpointError::Invalid(format!(
                "tensor {name} has {} values for shape {shape:?}",
                data.len()
            )));
        }
        let prev = entries.insert(
            name.clone(),
            TensorEntry { dtype: "f32".into(), shape: shape.clone(), byte_offset: offset },
        );
        if prev.is_some() {
            return Err(CheckpointError::Invalid(format!("duplicate tensor name {name}")));
        }
        offset += 4 * data.len();
    }
    let header = Header { meta: meta.clone(), tensors: entries };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::Invalid(format!("header serialization: {e}")))?;

    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    file.write_all(&header_json).map_err(io_err)?;
    for (_, _, data) in &sorted {
        let mut bytes = Vec::with_capacity(4 * data.len());
        for v in data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(io_err)?;
    }
    Ok(())
}

/// A loaded checkpoint with random access to tensors by name.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut file = std::fs::File::open(path).map_err(io_err)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| CheckpointError::BadHeader("file shorter than the length prefix".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(io_err)?;
    if rest.len() < header_len {
        return Err(CheckpointError::BadHeader(format!(
            "declared header length {header_len} exceeds file size"
        )));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if header.meta.version != FORMAT_VERSION {
        return Err(CheckpointError::Version { got: header.meta.version });
    }
    let payload = &rest[header_len..];
    let mut tensors = BTreeMap::new();
    for (name, entry) in header.tensors {
        if entry.dtype != "f32" {
            return Err(CheckpointError::BadHeader(format!(
                "tensor {name} has unsupported dtype {}",
                entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry.byte_offset.checked_add(4 * numel).ok_or_else(|| {
            CheckpointError::BadHeader(format!("tensor {name} offset overflows"))
        })?;
        if entry.byte_offset % 4 != 0 {
            return Err(CheckpointError::BadHeader(format!(
                "tensor {name} offset {} is not 4-byte aligned",
                entry.byte_offset
            )));
        }
        if end > payload.len() {
            return Err(CheckpointError::Truncated {
                name,
                offset: entry.byte_offset,
                end,
                have: payload.len(),
            });
        }
        let data: Vec<f32> = payload[entry.byte_offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.insert(name, (entry.shape, data));
    }
    Ok(Checkpoint { meta: header.meta, tensors })
}

impl Checkpoint {
    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .get(name)
            .map(|(shape, data)| (shape.as_slice(), data.as_slice()))
    }

    /// Copy one tensor into a destination of a known shape.
    pub fn read_into(&self, name: &str, shape: &[usize], dst: &mut [f32]) -> Result<()> {
        let (stored_shape, data) = self
            .tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Missing { name: name.to_string() })?;
        if stored_shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                stored: stored_shape.clone(),
                expected: shape.to_vec(),
            });
        }
        dst.copy_from_slice(data);
        Ok(())
    }
}

/// Tensor names used for SEMA buffers and Adam moments.
fn sema_names(owner: &str) -> [String; 2] {
    [format!("{owner}::sema_in"), format!("{owner}::sema_out")]
}

/// Collect everything worth persisting from the system: parameters, SEMA
/// buffers, and (optionally) Adam moments. `scope` limits the export to
/// `"teacher"`, or takes everything when `"system"`.
pub fn system_tensors(
    system: &mut StudentTeacher<f32>,
    scope: &str,
    adam: Option<&Adam<f32>>,
) -> Vec<NamedTensor> {
    let mut out: Vec<NamedTensor> = Vec::new();
    let teacher_only = scope == "teacher";
    {
        let mut push = |name: String, p: &mut crate::param::Param<f32>| {
            out.push((name, p.shape.clone(), p.data.clone()));
        };
        if teacher_only {
            system.teacher.visit_params("teacher", &mut push);
        } else {
            system.visit_params("", &mut push);
        }
    }
    out.extend(collect_sema("teacher", &system.teacher.net.sema_in, &system.teacher.net.sema_out));
    if !teacher_only {
        out.extend(collect_sema("student", &system.student.net.sema_in, &system.student.net.sema_out));
        out.extend(collect_sema("inter", &system.sema_inter_in, &system.sema_inter_out));
    }
    if let Some(adam) = adam {
        for (name, (m, v)) in adam.sorted_moments() {
            if teacher_only && !name.starts_with("teacher") {
                continue;
            }
            out.push((format!("adam::m::{name}"), vec![m.len()], m.clone()));
            out.push((format!("adam::v::{name}"), vec![v.len()], v.clone()));
        }
    }
    out
}

fn collect_sema(
    owner: &str,
    sema_in: &crate::network::SemaState<f32>,
    sema_out: &crate::network::SemaState<f32>,
) -> Vec<NamedTensor> {
    let [in_name, out_name] = sema_names(owner);
    let mut out = Vec::new();
    if let Some(v) = &sema_in.smoothed {
        out.push((in_name, sema_in.shape.clone(), v.clone()));
    }
    if let Some(v) = &sema_out.smoothed {
        out.push((out_name, sema_out.shape.clone(), v.clone()));
    }
    out
}

fn restore_sema(ckpt: &Checkpoint, owner: &str, sema_in: &mut crate::network::SemaState<f32>, sema_out: &mut crate::network::SemaState<f32>) {
    let [in_name, out_name] = sema_names(owner);
    if let Some((shape, data)) = ckpt.get(&in_name) {
        sema_in.shape = shape.to_vec();
        sema_in.smoothed = Some(data.to_vec());
    }
    if let Some((shape, data)) = ckpt.get(&out_name) {
        sema_out.shape = shape.to_vec();
        sema_out.smoothed = Some(data.to_vec());
    }
}

/// Load parameters (and SEMA buffers / Adam moments if stored) into the
/// system. With scope `"teacher"` only teacher-side state is touched.
pub fn apply_to_system(
    ckpt: &Checkpoint,
    system: &mut StudentTeacher<f32>,
    scope: &str,
    adam: Option<&mut Adam<f32>>,
) -> Result<()> {
    let teacher_only = scope == "teacher";
    let mut err: Result<()> = Ok(());
    {
        let mut pull = |name: String, p: &mut crate::param::Param<f32>| {
            if err.is_err() {
                return;
            }
            err = ckpt.read_into(&name, &p.shape, &mut p.data);
        };
        if teacher_only {
            system.teacher.visit_params("teacher", &mut pull);
        } else {
            system.visit_params("", &mut pull);
        }
    }
    err?;
    restore_sema(ckpt, "teacher", &mut system.teacher.net.sema_in, &mut system.teacher.net.sema_out);
    if !teacher_only {
        restore_sema(ckpt, "student", &mut system.student.net.sema_in, &mut system.student.net.sema_out);
        restore_sema(ckpt, "inter", &mut system.sema_inter_in, &mut system.sema_inter_out);
    }
    if let Some(adam) = adam {
        adam.step = ckpt.meta.adam_step;
        let moment_names: Vec<String> = ckpt
            .names()
            .filter(|n| n.starts_with("adam::m::"))
            .cloned()
            .collect();
        for m_name in moment_names {
            let base = m_name.trim_start_matches("adam::m::").to_string();
            let v_name = format!("adam::v::{base}");
            if let (Some((_, m)), Some((_, v))) = (ckpt.get(&m_name), ckpt.get(&v_name)) {
                adam.restore_moment(base, m.to_vec(), v.to_vec());
            }
        }
    }
    Ok(())
}

/// Convenience wrapper: persist the system under the given scope.
pub fn save_system(
    path: &Path,
    system: &mut StudentTeacher<f32>,
    config: &RunConfig,
    scope: &str,
    adam: Option<&Adam<f32>>,
) -> Result<()> {
    let meta = CheckpointMeta {
        version: FORMAT_VERSION,
        kind: scope.to_string(),
        config: config.clone(),
        adam_step: adam.map_or(0, |a| a.step),
    };
    let tensors = system_tensors(system, scope, adam);
    save(path, &meta, &tensors)
}
