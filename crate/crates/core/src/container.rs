//! Binary container for auditable experiment artifacts.
//!
//! Layout:
//! ```text
//! b"TVPC1\n"            magic
//! u64 (LE)              header length in bytes
//! header                UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}...]}
//! f64 (LE) * total      array payloads, concatenated in header order
//! ```
//! Matrices are stored row-major with shape `[rows, cols]`; vectors use `[len]`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"TVPC1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Container {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &DVector<f64>) {
        self.arrays.push(Array {
            name: name.into(),
            shape: vec![v.len()],
            data: v.as_slice().to_vec(),
        });
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        self.arrays.push(Array {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("container has no array `{name}`"),
            })
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let a = self.get(name)?;
        if a.shape.len() != 1 {
            return Err(Error::ShapeMismatch(format!("`{name}` is not a vector")));
        }
        Ok(DVector::from_vec(a.data.clone()))
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let a = self.get(name)?;
        match a.shape[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &a.data)),
            _ => Err(Error::ShapeMismatch(format!("`{name}` is not a matrix"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayHeader {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for a in &self.arrays {
            for x in &a.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad container magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| bad(&format!("header: {e}")))?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for h in header.arrays {
            let count: usize = h.shape.iter().product();
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push(Array {
                name: h.name,
                shape: h.shape,
                data,
            });
        }
        Ok(Container {
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Container::read_from(std::io::BufReader::new(f))
    }
}
