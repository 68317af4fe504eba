//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header,
//! then a flat payload of little-endian f64 tensors in a fixed order
//! (student net, student domain classifier, each teacher pair, then
//! optimizer velocity slabs). Save -> load -> save is bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_backbone, ClassifierNetwork, DomainClassifier, NetworkSpec};
use crate::optim::SgdMomentum;
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::run::{EpochSnapshot, RunState, StepCounters, StudentUnit, TeacherUnit};

const MAGIC: &[u8; 8] = b"MTDACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetEntry {
    spec: NetworkSpec,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct DclfEntry {
    feature_dim: usize,
    lambda: f64,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct OptSlabs {
    student_net: Vec<usize>,
    student_dclf: Vec<usize>,
    teachers: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: TrainConfig,
    next_epoch: u32,
    step: u64,
    counters: StepCounters,
    history: Vec<EpochSnapshot>,
    student: NetEntry,
    student_dclf: DclfEntry,
    teachers: Vec<(NetEntry, DclfEntry)>,
    opt_slabs: OptSlabs,
}

fn push_values<S: Scalar>(payload: &mut Vec<u8>, values: &[S]) {
    for v in values {
        payload.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
    }
}

fn dump_net<S: Scalar>(net: &ClassifierNetwork<S>, payload: &mut Vec<u8>) -> NetEntry {
    let mut tensors = Vec::new();
    net.visit_params(&mut |name, shape, values| {
        tensors.push(TensorMeta { name: name.to_string(), shape: shape.to_vec() });
        push_values(payload, values);
    });
    let (norm_mean, norm_std) = net.normalizer_constants();
    NetEntry { spec: net.spec().clone(), norm_mean, norm_std, tensors }
}

fn dump_dclf<S: Scalar>(dclf: &DomainClassifier<S>, payload: &mut Vec<u8>) -> DclfEntry {
    let mut tensors = Vec::new();
    dclf.visit_params(&mut |name, shape, values| {
        tensors.push(TensorMeta { name: name.to_string(), shape: shape.to_vec() });
        push_values(payload, values);
    });
    DclfEntry {
        feature_dim: dclf.feature_dim(),
        lambda: dclf.grl().lambda().to_f64().unwrap(),
        tensors,
    }
}

fn dump_velocities<S: Scalar>(opt: &SgdMomentum<S>, payload: &mut Vec<u8>) -> Vec<usize> {
    opt.velocities()
        .iter()
        .map(|slab| {
            push_values(payload, slab);
            slab.len()
        })
        .collect()
}

/// Write the full run state to `path`.
pub fn save_checkpoint<S: Scalar>(state: &RunState<S>, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let student = dump_net(&state.student.net, &mut payload);
    let student_dclf = dump_dclf(&state.student.dclf, &mut payload);
    let teachers: Vec<(NetEntry, DclfEntry)> = state
        .teachers
        .iter()
        .map(|t| (dump_net(&t.net, &mut payload), dump_dclf(&t.dclf, &mut payload)))
        .collect();
    let opt_slabs = OptSlabs {
        student_net: dump_velocities(&state.student.opt_net, &mut payload),
        student_dclf: dump_velocities(&state.student.opt_dclf, &mut payload),
        teachers: state
            .teachers
            .iter()
            .map(|t| dump_velocities(&t.opt, &mut payload))
            .collect(),
    };

    let header = Header {
        version: CHECKPOINT_VERSION,
        dtype: S::DTYPE.to_string(),
        config: state.config.clone(),
        next_epoch: state.next_epoch,
        step: state.step,
        counters: state.counters,
        history: state.history.clone(),
        student,
        student_dclf,
        teachers,
        opt_slabs,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    out.write_all(&payload)?;
    Ok(())
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    cursor: usize,
}

impl<'a> PayloadReader<'a> {
    fn take<S: Scalar>(&mut self, count: usize) -> Result<Vec<S>> {
        let need = count * 8;
        if self.cursor + need > self.bytes.len() {
            return Err(Error::Incompatible("checkpoint payload truncated".into()));
        }
        let out = self.bytes[self.cursor..self.cursor + need]
            .chunks_exact(8)
            .map(|b| S::from_f64c(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        self.cursor += need;
        Ok(out)
    }
}

fn restore_net<S: Scalar>(entry: &NetEntry, reader: &mut PayloadReader<'_>) -> Result<ClassifierNetwork<S>> {
    let spec = &entry.spec;
    let mut net =
        build_backbone::<S>(spec.preset, spec.input_shape, spec.num_classes, spec.seed)?;
    net.set_normalizer(&entry.norm_mean, &entry.norm_std)?;
    let mut idx = 0usize;
    let mut failure: Option<Error> = None;
    let mut loaded: Vec<Vec<S>> = Vec::with_capacity(entry.tensors.len());
    for meta in &entry.tensors {
        loaded.push(reader.take(meta.shape.iter().product())?);
    }
    net.visit_params_mut(&mut |name, shape, values, _| {
        if failure.is_some() {
            return;
        }
        let Some(meta) = entry.tensors.get(idx) else {
            failure = Some(Error::Incompatible(format!("missing tensor entry for {name}")));
            return;
        };
        if meta.name != name || meta.shape != shape {
            failure = Some(Error::Incompatible(format!(
                "tensor mismatch: checkpoint has {} {:?}, network expects {name} {shape:?}",
                meta.name, meta.shape
            )));
            return;
        }
        values.copy_from_slice(&loaded[idx]);
        idx += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(net)
}

fn restore_dclf<S: Scalar>(entry: &DclfEntry, reader: &mut PayloadReader<'_>) -> Result<DomainClassifier<S>> {
    let mut dclf =
        DomainClassifier::<S>::new(entry.feature_dim, S::from_f64c(entry.lambda), 0)?;
    let mut loaded: Vec<Vec<S>> = Vec::with_capacity(entry.tensors.len());
    for meta in &entry.tensors {
        loaded.push(reader.take(meta.shape.iter().product())?);
    }
    let mut idx = 0usize;
    let mut failure: Option<Error> = None;
    dclf.visit_params_mut(&mut |name, shape, values, _| {
        if failure.is_some() {
            return;
        }
        let meta = &entry.tensors[idx];
        if meta.name != name || meta.shape != shape {
            failure = Some(Error::Incompatible(format!(
                "tensor mismatch: checkpoint has {} {:?}, head expects {name} {shape:?}",
                meta.name, meta.shape
            )));
            return;
        }
        values.copy_from_slice(&loaded[idx]);
        idx += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(dclf)
}

fn restore_opt<S: Scalar>(
    lr: f64,
    config: &TrainConfig,
    slabs: &[usize],
    reader: &mut PayloadReader<'_>,
) -> Result<SgdMomentum<S>> {
    let mut opt = SgdMomentum::new(lr, config.momentum, config.weight_decay)?;
    let mut velocities = Vec::with_capacity(slabs.len());
    for &len in slabs {
        velocities.push(reader.take(len)?);
    }
    opt.restore_velocities(velocities);
    Ok(opt)
}

/// Read a checkpoint written by [`save_checkpoint`] with the same scalar lane.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<RunState<S>> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..8] != MAGIC {
        return Err(Error::Incompatible(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > bytes.len() {
        return Err(Error::Incompatible("checkpoint header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::Incompatible(format!("checkpoint header unreadable: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    if header.dtype != S::DTYPE {
        return Err(Error::Incompatible(format!(
            "checkpoint dtype {} does not match the {} lane",
            header.dtype,
            S::DTYPE
        )));
    }
    let mut reader = PayloadReader { bytes: &bytes[16 + header_len..], cursor: 0 };

    let student_net = restore_net::<S>(&header.student, &mut reader)?;
    let student_dclf = restore_dclf::<S>(&header.student_dclf, &mut reader)?;
    let mut teachers = Vec::with_capacity(header.teachers.len());
    for (net_entry, dclf_entry) in &header.teachers {
        let net = restore_net::<S>(net_entry, &mut reader)?;
        let dclf = restore_dclf::<S>(dclf_entry, &mut reader)?;
        teachers.push((net, dclf));
    }
    let config = header.config.clone();
    let opt_net = restore_opt::<S>(
        config.kd_learning_rate,
        &config,
        &header.opt_slabs.student_net,
        &mut reader,
    )?;
    let opt_dclf = restore_opt::<S>(
        config.kd_learning_rate,
        &config,
        &header.opt_slabs.student_dclf,
        &mut reader,
    )?;
    if header.opt_slabs.teachers.len() != teachers.len() {
        return Err(Error::Incompatible("optimizer/teacher count mismatch".into()));
    }
    let mut teacher_units = Vec::with_capacity(teachers.len());
    for ((net, dclf), slabs) in teachers.into_iter().zip(&header.opt_slabs.teachers) {
        let opt = restore_opt::<S>(config.uda_learning_rate, &config, slabs, &mut reader)?;
        teacher_units.push(TeacherUnit { net, dclf, opt });
    }
    if reader.cursor != reader.bytes.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint payload has {} trailing bytes",
            reader.bytes.len() - reader.cursor
        )));
    }

    Ok(RunState {
        config,
        teachers: teacher_units,
        student: StudentUnit { net: student_net, dclf: student_dclf, opt_net, opt_dclf },
        next_epoch: header.next_epoch,
        step: header.step,
        counters: header.counters,
        history: header.history,
    })
}
