//! Tensor literal files and graph documents.
//!
//! A tensor file is one JSON object `{shape, dtype, layout, data}`; a tensor
//! map file is a JSON object from names to such records. `f32` data is
//! written in shortest round-trip form and parsed with correct rounding, so a
//! write/read cycle is bit-exact. Non-finite values are the strings `"NaN"`,
//! `"inf"` and `"-inf"`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use edgegraph_core::graph::{load_graph, Graph, GraphDoc};
use edgegraph_core::{LayoutTag, Tensor, TensorData};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

impl FileError {
    pub(crate) fn io(path: &Path, cause: std::io::Error) -> Self {
        FileError::Io { path: path.to_path_buf(), cause }
    }

    pub(crate) fn json(path: &Path, e: serde_json::Error) -> Self {
        FileError::Parse { path: path.to_path_buf(), line: e.line(), column: e.column(), message: e.to_string() }
    }

    pub(crate) fn invalid(path: &Path, message: impl Into<String>) -> Self {
        FileError::Invalid { path: path.to_path_buf(), message: message.into() }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|e| FileError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    fs::write(path, text).map_err(|e| FileError::io(path, e))
}

fn default_dtype() -> String {
    "f32".into()
}

fn default_layout() -> LayoutTag {
    LayoutTag::Nchw
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorDoc {
    pub shape: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_layout")]
    pub layout: LayoutTag,
    pub data: Vec<Box<RawValue>>,
}

fn raw(text: String) -> Box<RawValue> {
    RawValue::from_string(text).expect("scalar literal is valid JSON")
}

fn f32_literal(v: f32) -> String {
    if v.is_nan() {
        "\"NaN\"".into()
    } else if v.is_infinite() {
        if v > 0.0 { "\"inf\"" } else { "\"-inf\"" }.into()
    } else {
        serde_json::to_string(&v).expect("finite f32 serializes")
    }
}

fn parse_f32(text: &str) -> Option<f32> {
    match text {
        "\"NaN\"" => Some(f32::NAN),
        "\"inf\"" => Some(f32::INFINITY),
        "\"-inf\"" => Some(f32::NEG_INFINITY),
        t if t.starts_with('"') => None,
        t => t.parse().ok(),
    }
}

impl TensorDoc {
    pub fn from_tensor(t: &Tensor) -> Self {
        let data = match t.data() {
            TensorData::F32(v) => v.iter().map(|&x| raw(f32_literal(x))).collect(),
            TensorData::I32(v) => v.iter().map(|x| raw(x.to_string())).collect(),
            TensorData::Bool(v) => v.iter().map(|x| raw(x.to_string())).collect(),
        };
        TensorDoc { shape: t.shape().to_vec(), dtype: t.dtype().to_string(), layout: t.layout(), data }
    }

    pub fn to_tensor(&self) -> Result<Tensor, String> {
        let bad = |i: usize, what: &str| format!("data[{i}] = {} is not {what}", self.data[i].get());
        let data = match self.dtype.as_str() {
            "f32" | "float32" => TensorData::F32(
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, v)| parse_f32(v.get()).ok_or_else(|| bad(i, "an f32")))
                    .collect::<Result<_, _>>()?,
            ),
            "i32" | "int32" => TensorData::I32(
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.get().parse().map_err(|_| bad(i, "an i32")))
                    .collect::<Result<_, _>>()?,
            ),
            "bool" => TensorData::Bool(
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.get().parse().map_err(|_| bad(i, "a bool")))
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(format!("unsupported dtype `{other}`")),
        };
        Tensor::new(self.shape.clone(), self.layout, data).map_err(|e| e.to_string())
    }
}

pub fn tensor_to_json(t: &Tensor) -> String {
    serde_json::to_string(&TensorDoc::from_tensor(t)).expect("tensor document serializes")
}

pub fn tensor_from_json(path: &Path, text: &str) -> Result<Tensor, FileError> {
    let doc: TensorDoc = serde_json::from_str(text).map_err(|e| FileError::json(path, e))?;
    doc.to_tensor().map_err(|m| FileError::invalid(path, m))
}

pub fn read_tensor(path: &Path) -> Result<Tensor, FileError> {
    tensor_from_json(path, &read_text(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), FileError> {
    write_text(path, &(tensor_to_json(t) + "\n"))
}

/// Reads `{name: tensor}`.
pub fn read_tensor_map(path: &Path) -> Result<BTreeMap<String, Tensor>, FileError> {
    let text = read_text(path)?;
    let docs: BTreeMap<String, TensorDoc> = serde_json::from_str(&text).map_err(|e| FileError::json(path, e))?;
    docs.into_iter()
        .map(|(k, d)| {
            let t = d.to_tensor().map_err(|m| FileError::invalid(path, format!("tensor `{k}`: {m}")))?;
            Ok((k, t))
        })
        .collect()
}

pub fn tensor_map_to_json(tensors: &BTreeMap<String, Tensor>) -> String {
    let docs: BTreeMap<&String, TensorDoc> = tensors.iter().map(|(k, t)| (k, TensorDoc::from_tensor(t))).collect();
    serde_json::to_string(&docs).expect("tensor map serializes")
}

pub fn write_tensor_map(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<(), FileError> {
    write_text(path, &(tensor_map_to_json(tensors) + "\n"))
}

/// Loads and validates a graph document.
pub fn read_graph(path: &Path) -> Result<Graph, FileError> {
    let text = read_text(path)?;
    let doc: GraphDoc = serde_json::from_str(&text).map_err(|e| FileError::json(path, e))?;
    load_graph(&doc).map_err(|e| FileError::invalid(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let vals = vec![0.1f32, -3.4028235e38, 1.0e-45, f32::NAN, f32::INFINITY, -0.0, 16777217.0];
        let t = Tensor::from_f32(&[7], vals.clone()).unwrap();
        let back = tensor_from_json(Path::new("t.json"), &tensor_to_json(&t)).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.as_f32().unwrap()), bits(&vals));
    }

    #[test]
    fn packed_layout_and_int_data() {
        let t = Tensor::from_i32(&[1, 4, 1, 1], vec![1, -2, 3, 4]).unwrap();
        let text = tensor_to_json(&t);
        assert_eq!(text, r#"{"shape":[1,4,1,1],"dtype":"i32","layout":"NCHW","data":[1,-2,3,4]}"#);
        let back = tensor_from_json(Path::new("t.json"), &text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = tensor_from_json(Path::new("x.json"), "{\n\"shape\": [2],\n\"data\": [1, }").unwrap_err();
        match e {
            FileError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
        let e = tensor_from_json(Path::new("x.json"), r#"{"shape":[3],"data":[1,2]}"#).unwrap_err();
        assert!(matches!(e, FileError::Invalid { .. }));
    }
}
