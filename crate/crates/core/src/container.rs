//! Named-array parameter container.
//!
//! A container is a directory with two files:
//!
//! * `manifest.json`: `{"format": "trialnli-params", "version": 1,
//!   "arrays": [{"name", "shape": [rows, cols], "dtype": "f64", "offset", "len"}]}`
//! * `data.bin`: the arrays back to back as little-endian IEEE-754 doubles in
//!   row-major order. `offset` and `len` count elements, not bytes.
//!
//! Arrays are written in lexicographic name order, so the same parameters
//! always produce the same bytes.

use std::path::Path;

use autodiff::{Matrix, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const DATA: &str = "data.bin";
const FORMAT: &str = "trialnli-params";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    arrays: Vec<Entry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: usize,
    len: usize,
}

pub fn save_container(dir: &Path, params: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut data = Vec::with_capacity(params.num_scalars() * 8);
    let mut arrays = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, a) in params.iter() {
        arrays.push(Entry {
            name: name.clone(),
            shape: [a.nrows(), a.ncols()],
            dtype: "f64".into(),
            offset,
            len: a.len(),
        });
        for x in a.iter() {
            data.extend_from_slice(&x.to_le_bytes());
        }
        offset += a.len();
    }
    let manifest = Manifest { format: FORMAT.into(), version: 1, arrays };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(DATA);
    std::fs::write(&path, data).map_err(|e| Error::io(&path, e))
}

pub fn load_container(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::Import {
            array: MANIFEST.into(),
            reason: format!("unsupported container {} v{}", manifest.format, manifest.version),
        });
    }
    let path = dir.join(DATA);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Import { array: DATA.into(), reason: "length is not a multiple of 8".into() });
    }
    let total = bytes.len() / 8;
    let mut store = ParamStore::new();
    for e in manifest.arrays {
        let bad = |reason: String| Error::Import { array: e.name.clone(), reason };
        if e.dtype != "f64" {
            return Err(bad(format!("dtype {} is not supported", e.dtype)));
        }
        if e.shape[0] * e.shape[1] != e.len {
            return Err(bad(format!("shape {:?} does not match length {}", e.shape, e.len)));
        }
        if e.offset + e.len > total {
            return Err(bad(format!("data range {}..{} exceeds {total} elements", e.offset, e.offset + e.len)));
        }
        let values: Vec<f64> = bytes[e.offset * 8..(e.offset + e.len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let a = Matrix::from_shape_vec((e.shape[0], e.shape[1]), values).map_err(|x| bad(x.to_string()))?;
        if store.insert(e.name.clone(), a).is_some() {
            return Err(bad("duplicate array name".into()));
        }
    }
    Ok(store)
}

/// Checks that `store` holds exactly the arrays in `expected` with matching
/// shapes; errors name the first offending array.
pub fn check_layout(store: &ParamStore, expected: &[(String, (usize, usize))]) -> Result<()> {
    for (name, shape) in expected {
        match store.get(name) {
            None => return Err(Error::Import { array: name.clone(), reason: "missing".into() }),
            Some(a) if a.dim() != *shape => {
                return Err(Error::Import {
                    array: name.clone(),
                    reason: format!("expected shape {shape:?}, found {:?}", a.dim()),
                })
            }
            Some(a) if !a.iter().all(|x| x.is_finite()) => {
                return Err(Error::Import { array: name.clone(), reason: "non-finite values".into() })
            }
            _ => {}
        }
    }
    if let Some(extra) = store.names().find(|n| !expected.iter().any(|(e, _)| e == *n)) {
        return Err(Error::Import { array: extra.clone(), reason: "unexpected array".into() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bitwise() {
        let mut p = ParamStore::new();
        p.insert("b", array![[1.5, -0.0, f64::MIN_POSITIVE]]);
        p.insert("a", array![[1.0], [2.0]]);
        let dir = tempfile::tempdir().unwrap();
        save_container(dir.path(), &p).unwrap();
        let q = load_container(dir.path()).unwrap();
        for (name, a) in p.iter() {
            let b = q.get(name).unwrap();
            assert_eq!(a.dim(), b.dim());
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn layout_check_names_missing_array() {
        let mut p = ParamStore::new();
        p.insert("x", array![[1.0]]);
        let expected = vec![("x".to_string(), (1, 1)), ("y".to_string(), (2, 2))];
        let err = check_layout(&p, &expected).unwrap_err();
        assert!(err.to_string().contains("`y`"), "{err}");
        p.insert("y", Matrix::zeros((2, 3)));
        assert!(check_layout(&p, &expected).unwrap_err().to_string().contains("shape"));
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::ones((3, 3)));
        let dir = tempfile::tempdir().unwrap();
        save_container(dir.path(), &p).unwrap();
        std::fs::write(dir.path().join(DATA), [0u8; 16]).unwrap();
        let err = load_container(dir.path()).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
    }
}
