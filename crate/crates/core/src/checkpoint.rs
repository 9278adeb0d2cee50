//! Checkpoint blob: a little-endian u32 header length, a JSON header naming
//! each array and its shape, then the concatenated float32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Header {
    arrays: Vec<ArrayDesc>,
}

#[derive(Serialize, Deserialize)]
struct ArrayDesc {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let header = Header {
        arrays: store
            .iter()
            .map(|(name, t)| ArrayDesc {
                name: name.to_string(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in store.iter() {
        for &x in &t.data {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?,
    );
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let mut store = ParamStore::new();
    for desc in &header.arrays {
        let n = desc.rows * desc.cols;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::CheckpointFormat(format!("truncated array {}", desc.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        store.insert(&desc.name, Tensor::from_vec(desc.rows, desc.cols, data));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_vec(2, 2, vec![1.5, -2.25, 0.0, 3.0]));
        store.insert("b", Tensor::row(vec![0.125]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.get("a.w"), store.get("a.w"));
        assert_eq!(loaded.get("b"), store.get("b"));
        assert_eq!(loaded.names().collect::<Vec<_>>(), vec!["a.w", "b"]);
    }
}
