//! Checkpoint I/O: a binary weight blob (magic, tensor table, f32 LE data)
//! plus a sidecar `<path>.meta` text header carrying kind, num_classes,
//! stage, epoch, and seed.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::reference::ReferenceCnn;
use super::{BackboneHandle, BackboneKind, BackboneNet, Stage, TrainError};
use crate::dataset::NUM_SPECIES;

const MAGIC: &[u8; 8] = b"BCNET001";

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes the weight blob and its sidecar header.
pub fn save_checkpoint(handle: &BackboneHandle, path: &Path) -> Result<(), TrainError> {
    let net = match &handle.net {
        BackboneNet::Reference(net) => net,
    };
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    let names = ReferenceCnn::param_names();
    let slices = net.param_slices();
    blob.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, slice) in names.iter().zip(&slices) {
        blob.extend_from_slice(&(name.len() as u32).to_le_bytes());
        blob.extend_from_slice(name.as_bytes());
        blob.extend_from_slice(&(slice.len() as u32).to_le_bytes());
        for v in *slice {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&blob).map_err(|e| io_err(path, e))?;

    let stage = match handle.last_stage {
        Some(Stage::Originals) => "originals",
        Some(Stage::Crops) => "crops",
        None => "none",
    };
    let meta = format!(
        "kind {}\nnum_classes {}\nstage {}\nepoch {}\nseed {}\n",
        handle.kind.name(),
        handle.num_classes,
        stage,
        handle.epochs_completed,
        handle.seed,
    );
    fs::write(meta_path(path), meta).map_err(|e| io_err(&meta_path(path), e))
}

/// Reads a checkpoint pair back into a handle. The handle's model id is the
/// checkpoint's file stem.
pub fn load_checkpoint(path: &Path) -> Result<BackboneHandle, TrainError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let mut offset = 8usize;
    let read_u32 = |bytes: &[u8], offset: &mut usize| -> Result<u32, TrainError> {
        if *offset + 4 > bytes.len() {
            return Err(corrupt(path, "truncated"));
        }
        let v = u32::from_le_bytes(bytes[*offset..*offset + 4].try_into().unwrap());
        *offset += 4;
        Ok(v)
    };
    let count = read_u32(&bytes, &mut offset)? as usize;
    let expected_names = ReferenceCnn::param_names();
    if count != expected_names.len() {
        return Err(corrupt(path, format!("expected {} tensors, found {count}", expected_names.len())));
    }
    let mut net = ReferenceCnn::init(0);
    {
        let mut params = net.param_slices_mut();
        for (ti, expected_name) in expected_names.iter().enumerate() {
            let name_len = read_u32(&bytes, &mut offset)? as usize;
            if offset + name_len > bytes.len() {
                return Err(corrupt(path, "truncated name"));
            }
            let name = String::from_utf8_lossy(&bytes[offset..offset + name_len]).into_owned();
            offset += name_len;
            if &name != expected_name {
                return Err(corrupt(path, format!("tensor {ti} named {name:?}, expected {expected_name:?}")));
            }
            let len = read_u32(&bytes, &mut offset)? as usize;
            if len != params[ti].len() {
                return Err(corrupt(path, format!("tensor {name} has {len} values, expected {}", params[ti].len())));
            }
            if offset + len * 4 > bytes.len() {
                return Err(corrupt(path, "truncated data"));
            }
            for i in 0..len {
                params[ti][i] =
                    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
                offset += 4;
            }
        }
    }
    if offset != bytes.len() {
        return Err(corrupt(path, "trailing bytes"));
    }

    let meta_file = meta_path(path);
    let meta = fs::read_to_string(&meta_file).map_err(|e| io_err(&meta_file, e))?;
    let mut kind = None;
    let mut num_classes = None;
    let mut stage = None;
    let mut epoch = None;
    let mut seed = None;
    for line in meta.lines() {
        let Some((key, value)) = line.split_once(' ') else {
            continue;
        };
        match key {
            "kind" => kind = BackboneKind::parse(value),
            "num_classes" => num_classes = value.parse::<usize>().ok(),
            "stage" => {
                stage = Some(match value {
                    "originals" => Some(Stage::Originals),
                    "crops" => Some(Stage::Crops),
                    _ => None,
                })
            }
            "epoch" => epoch = value.parse::<usize>().ok(),
            "seed" => seed = value.parse::<u64>().ok(),
            _ => {}
        }
    }
    let kind = kind.ok_or_else(|| corrupt(&meta_file, "missing or unknown kind"))?;
    if kind != BackboneKind::ReferenceCnn {
        return Err(corrupt(
            &meta_file,
            format!("{} checkpoints hold external-runtime weights this build cannot execute", kind.name()),
        ));
    }
    let num_classes = num_classes.ok_or_else(|| corrupt(&meta_file, "missing num_classes"))?;
    if num_classes != NUM_SPECIES {
        return Err(corrupt(&meta_file, format!("num_classes {num_classes} != {NUM_SPECIES}")));
    }
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "reference_cnn".to_string());
    Ok(BackboneHandle {
        kind,
        num_classes,
        net: BackboneNet::Reference(net),
        history: Vec::new(),
        epochs_completed: epoch.unwrap_or(0),
        last_stage: stage.flatten(),
        seed: seed.unwrap_or(0),
        model_id,
    })
}
