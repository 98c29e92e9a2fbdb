//! Named tensor archives: a text manifest next to one raw float blob.
//!
//! `manifest.txt` starts with a header line and then lists one tensor per
//! line as `name<TAB>f32<TAB>d0xd1x..<TAB>byte_offset`. `tensors.bin` holds
//! the little-endian `f32` data of every tensor back to back.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const HEADER: &str = "idswap-tensors 1";

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(format!("manifest: {}", msg.into()))
}

pub fn write_tensors(dir: &Path, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{HEADER}\n");
    let mut blob = Vec::with_capacity(tensors.iter().map(|(_, t)| t.len() * 4).sum());
    for (name, t) in tensors {
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let shape = if shape.is_empty() {
            "scalar".to_string()
        } else {
            shape.join("x")
        };
        manifest.push_str(&format!("{name}\tf32\t{shape}\t{}\n", blob.len()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob_path = dir.join(BLOB_FILE);
    let mut f = fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    f.write_all(&blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_tensors(dir: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(corrupt("missing or unknown header"));
    }
    let mut out = Vec::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in lines.enumerate().map(|(i, l)| (i + 2, l)) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dtype, shape, offset] = fields[..] else {
            return Err(corrupt(format!(
                "line {lineno}: expected 4 tab-separated fields"
            )));
        };
        if dtype != "f32" {
            return Err(corrupt(format!(
                "line {lineno}: unsupported dtype {dtype:?}"
            )));
        }
        let shape: Vec<usize> = if shape == "scalar" {
            Vec::new()
        } else {
            shape
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| corrupt(format!("line {lineno}: bad shape {shape:?}")))
                })
                .collect::<Result<_>>()?
        };
        let offset: usize = offset
            .parse()
            .map_err(|_| corrupt(format!("line {lineno}: bad offset {offset:?}")))?;
        if offset != expected_offset {
            return Err(corrupt(format!(
                "line {lineno}: offset {offset}, expected {expected_offset}"
            )));
        }
        let bytes = shape.iter().product::<usize>() * 4;
        let end = offset.checked_add(bytes).filter(|&e| e <= blob.len());
        let Some(end) = end else {
            return Err(corrupt(format!(
                "line {lineno}: tensor {name} runs past the end of {BLOB_FILE}"
            )));
        };
        let data = blob[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name.to_string(), Tensor::from_vec(&shape, data)));
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(corrupt(format!(
            "{BLOB_FILE} has {} trailing bytes",
            blob.len() - expected_offset
        )));
    }
    Ok(out)
}

/// Copies archive entries `prefix/<name>` into a store laid out like `like`.
pub fn restore_store(
    entries: &[(String, Tensor<f32>)],
    prefix: &str,
    like: &ParamStore<f32>,
) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for (name, want) in like.iter() {
        let key = format!("{prefix}/{name}");
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if t.shape() != want.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {key} has shape {:?}, expected {:?}",
                t.shape(),
                want.shape()
            )));
        }
        store.add(name, t.clone());
    }
    Ok(store)
}

pub fn store_entries<'a>(
    prefix: &str,
    store: &'a ParamStore<f32>,
) -> Vec<(String, &'a Tensor<f32>)> {
    store
        .iter()
        .map(|(n, t)| (format!("{prefix}/{n}"), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::from_vec(
            &[2, 3],
            vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25],
        );
        let b = Tensor::scalar(42.0f32);
        write_tensors(dir.path(), &[("a".into(), &a), ("b.c".into(), &b)]).unwrap();
        let back = read_tensors(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back[0].1), bits(&a));
        assert_eq!(back[1].1, b);
    }

    #[test]
    fn truncated_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::from_vec(&[4], vec![1.0f32; 4]);
        write_tensors(dir.path(), &[("a".into(), &a)]).unwrap();
        fs::write(dir.path().join(BLOB_FILE), [0u8; 7]).unwrap();
        let err = read_tensors(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest"), "{err}");
    }

    #[test]
    fn garbage_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "hello").unwrap();
        fs::write(dir.path().join(BLOB_FILE), []).unwrap();
        assert!(read_tensors(dir.path())
            .unwrap_err()
            .to_string()
            .contains("manifest"));
    }
}
