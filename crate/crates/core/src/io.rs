//! File formats.
//!
//! Models, baselines and patch sets are single files: a text header of
//! `key=value` lines closed by an `end_header` line, followed by a
//! little-endian binary payload. A hyperspectral cube is a text header file
//! plus two raw blobs next to it:
//!
//! ```text
//! height=610
//! width=340
//! bands=103
//! classes=9
//! element_type=f32
//! byte_order=little
//! values_file=pavia.hdr.values
//! labels_file=pavia.hdr.labels
//! ```
//!
//! The values blob holds `height * width * bands` little-endian `f32` with
//! the band index fastest, then column, then row. The labels blob holds
//! `height * width` little-endian `u32` in row-major order, 0 meaning
//! unlabelled. Any public dataset converted offline into these three files
//! can be loaded directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::data::{DataError, HsiCube, LabeledPatchSet};
use crate::equivalence::{EquivalenceError, Fcfnn};
use crate::model::{Activation, Family, ModelConfig, ModelError, RankRModel};
use crate::tensor::{CpFactors, DenseTensor, TensorError};

pub const HEADER_END: &str = "end_header";
pub const MODEL_FORMAT: &str = "rankr-model";
pub const PATCHES_FORMAT: &str = "rankr-patches";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing `{HEADER_END}` line")]
    UnterminatedHeader,
    #[error("malformed header line `{0}`")]
    MalformedLine(String),
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("header key `{key}` has invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("unsupported element type `{0}`")]
    UnknownElementType(String),
    #[error("unsupported byte order `{0}`")]
    UnknownByteOrder(String),
    #[error("unexpected format `{found}`, expected `{expected}`")]
    WrongFormat { expected: String, found: String },
    #[error("payload has {actual} bytes, header implies {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Equivalence(#[from] EquivalenceError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: BTreeMap<String, String>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Result<&str, FormatError> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::MissingKey(key.to_string()))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let raw = self.get(key)?;
        raw.trim().parse().map_err(|_| FormatError::InvalidValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn parse_list(&self, key: &str) -> Result<Vec<usize>, FormatError> {
        let raw = self.get(key)?;
        raw.split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| FormatError::InvalidValue {
                key: key.to_string(),
                value: raw.to_string(),
            })
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut header = Header::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == HEADER_END {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FormatError::MalformedLine(line.to_string()))?;
            header.set(k.trim(), v.trim());
        }
        Ok(header)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn expect(&self, key: &str, expected: &str) -> Result<(), FormatError> {
        let found = self.get(key)?;
        if found != expected {
            return Err(FormatError::WrongFormat {
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    fn check_encoding(&self, element_type: &str) -> Result<(), FormatError> {
        let et = self.get("element_type")?;
        if et != element_type {
            return Err(FormatError::UnknownElementType(et.to_string()));
        }
        let bo = self.get("byte_order")?;
        if bo != "little" {
            return Err(FormatError::UnknownByteOrder(bo.to_string()));
        }
        Ok(())
    }
}

/// Header text, `end_header` line, payload.
fn assemble(header: &Header, payload: Vec<u8>) -> Vec<u8> {
    let mut out = header.to_text().into_bytes();
    out.extend_from_slice(HEADER_END.as_bytes());
    out.push(b'\n');
    out.extend(payload);
    out
}

fn split_header(bytes: &[u8]) -> Result<(Header, &[u8]), FormatError> {
    let marker = format!("\n{HEADER_END}\n");
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or(FormatError::UnterminatedHeader)?;
    let text = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| FormatError::MalformedLine("<non-utf8 header>".into()))?;
    Ok((Header::from_text(text)?, &bytes[pos + marker.len()..]))
}

fn push_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn check_size(expected: usize, actual: usize) -> Result<(), FormatError> {
    if expected != actual {
        return Err(FormatError::SizeMismatch { expected, actual });
    }
    Ok(())
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_activation(header: &Header) -> Result<Activation, FormatError> {
    let raw = header.get("activation")?;
    raw.parse().map_err(|_| FormatError::InvalidValue {
        key: "activation".into(),
        value: raw.to_string(),
    })
}

/// Serialises a Rank-R model. Payload: for each neuron in order, each
/// factor matrix in mode order, row-major; then the output matrix
/// row-major; all little-endian `f64`.
pub fn model_to_bytes(model: &RankRModel) -> Vec<u8> {
    let cfg = model.config();
    let mut header = Header::new();
    header
        .set("format", MODEL_FORMAT)
        .set("version", FORMAT_VERSION)
        .set("family", Family::RankR)
        .set("input_shape", join(&cfg.input_shape))
        .set("rank", cfg.rank)
        .set("hidden", cfg.hidden)
        .set("classes", cfg.classes)
        .set("activation", cfg.activation)
        .set("seed", cfg.seed)
        .set("element_type", "f64")
        .set("byte_order", "little");
    let mut payload = Vec::new();
    for w in model.hidden_weights() {
        for f in w.factors() {
            push_f64s(&mut payload, f.iter());
        }
    }
    push_f64s(&mut payload, model.output_weights().iter());
    assemble(&header, payload)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<RankRModel, FormatError> {
    let (header, payload) = split_header(bytes)?;
    header.expect("format", MODEL_FORMAT)?;
    header.expect("family", "rank_r")?;
    header.check_encoding("f64")?;
    let cfg = ModelConfig {
        input_shape: header.parse_list("input_shape")?,
        rank: header.parse("rank")?,
        hidden: header.parse("hidden")?,
        classes: header.parse("classes")?,
        activation: parse_activation(&header)?,
        seed: header.parse("seed")?,
    };
    cfg.validate()?;
    let per_neuron = cfg.rank * cfg.input_shape.iter().sum::<usize>();
    let expected = (cfg.hidden * per_neuron + cfg.hidden * cfg.classes) * 8;
    check_size(expected, payload.len())?;
    let values = read_f64s(payload);
    let mut cursor = 0;
    let mut take = |rows: usize, cols: usize| {
        let m = Array2::from_shape_vec((rows, cols), values[cursor..cursor + rows * cols].to_vec())
            .expect("extent checked against payload size");
        cursor += rows * cols;
        m
    };
    let mut hidden = Vec::with_capacity(cfg.hidden);
    for _ in 0..cfg.hidden {
        let factors = cfg.input_shape.iter().map(|&p| take(p, cfg.rank)).collect();
        hidden.push(CpFactors::new(factors)?);
    }
    let output = take(cfg.hidden, cfg.classes);
    Ok(RankRModel::new(cfg, hidden, output)?)
}

/// Serialises a fully connected baseline with the same header scheme
/// (`family=fcfnn`). Payload: hidden matrix row-major, then output matrix
/// row-major.
pub fn fcfnn_to_bytes(f: &Fcfnn) -> Vec<u8> {
    let mut header = Header::new();
    header
        .set("format", MODEL_FORMAT)
        .set("version", FORMAT_VERSION)
        .set("family", Family::Fcfnn)
        .set("input_dim", f.input_dim())
        .set("hidden", f.hidden_count())
        .set("classes", f.classes())
        .set("activation", f.activation())
        .set("element_type", "f64")
        .set("byte_order", "little");
    let mut payload = Vec::new();
    push_f64s(&mut payload, f.hidden_weights().iter());
    push_f64s(&mut payload, f.output_weights().iter());
    assemble(&header, payload)
}

pub fn fcfnn_from_bytes(bytes: &[u8]) -> Result<Fcfnn, FormatError> {
    let (header, payload) = split_header(bytes)?;
    header.expect("format", MODEL_FORMAT)?;
    header.expect("family", "fcfnn")?;
    header.check_encoding("f64")?;
    let input_dim: usize = header.parse("input_dim")?;
    let hidden: usize = header.parse("hidden")?;
    let classes: usize = header.parse("classes")?;
    check_size((hidden * input_dim + hidden * classes) * 8, payload.len())?;
    let values = read_f64s(payload);
    let split = hidden * input_dim;
    let w = Array2::from_shape_vec((hidden, input_dim), values[..split].to_vec())
        .map_err(|_| FormatError::SizeMismatch {
            expected: split,
            actual: values.len(),
        })?;
    let v = Array2::from_shape_vec((hidden, classes), values[split..].to_vec()).map_err(|_| {
        FormatError::SizeMismatch {
            expected: hidden * classes,
            actual: values.len() - split,
        }
    })?;
    Ok(Fcfnn::new(w, v, parse_activation(&header)?)?)
}

/// Serialises a patch set. Payload: `count` little-endian `u32` labels
/// (0-based), then every patch's values as little-endian `f64` in storage
/// order.
pub fn patches_to_bytes(set: &LabeledPatchSet) -> Vec<u8> {
    let mut header = Header::new();
    header
        .set("format", PATCHES_FORMAT)
        .set("version", FORMAT_VERSION)
        .set("classes", set.classes())
        .set("count", set.len())
        .set("patch_shape", join(set.patch_shape().unwrap_or(&[])))
        .set("element_type", "f64")
        .set("byte_order", "little");
    let mut payload = Vec::new();
    for &l in set.labels() {
        payload.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for p in set.patches() {
        push_f64s(&mut payload, p.data());
    }
    assemble(&header, payload)
}

pub fn patches_from_bytes(bytes: &[u8]) -> Result<LabeledPatchSet, FormatError> {
    let (header, payload) = split_header(bytes)?;
    header.expect("format", PATCHES_FORMAT)?;
    header.check_encoding("f64")?;
    let classes: usize = header.parse("classes")?;
    let count: usize = header.parse("count")?;
    if count == 0 {
        check_size(0, payload.len())?;
        return Ok(LabeledPatchSet::empty(classes));
    }
    let shape = header.parse_list("patch_shape")?;
    let size: usize = shape.iter().product();
    check_size(count * 4 + count * size * 8, payload.len())?;
    let (label_bytes, value_bytes) = payload.split_at(count * 4);
    let labels = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let values = read_f64s(value_bytes);
    let patches = values
        .chunks_exact(size)
        .map(|c| DenseTensor::new(shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledPatchSet::new(patches, labels, classes)?)
}

fn blob_path(header_path: &Path, header: &Header, key: &str, suffix: &str) -> PathBuf {
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    match header.get_opt(key) {
        Some(name) => dir.join(name),
        None => {
            let mut name = header_path
                .file_name()
                .map(|n| n.to_os_string())
                .unwrap_or_default();
            name.push(suffix);
            dir.join(name)
        }
    }
}

/// Writes the header to `path` and the two blobs beside it.
pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<(), FormatError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".into());
    let mut header = Header::new();
    header
        .set("height", cube.height())
        .set("width", cube.width())
        .set("bands", cube.bands())
        .set("classes", cube.classes())
        .set("element_type", "f32")
        .set("byte_order", "little")
        .set("values_file", format!("{name}.values"))
        .set("labels_file", format!("{name}.labels"));
    let values: Vec<u8> = cube
        .values()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    let labels: Vec<u8> = cube.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, header.to_text()).map_err(io_err(path))?;
    let vp = blob_path(path, &header, "values_file", ".values");
    fs::write(&vp, values).map_err(io_err(&vp))?;
    let lp = blob_path(path, &header, "labels_file", ".labels");
    fs::write(&lp, labels).map_err(io_err(&lp))?;
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header = Header::from_text(&text)?;
    header.check_encoding("f32")?;
    let height: usize = header.parse("height")?;
    let width: usize = header.parse("width")?;
    let bands: usize = header.parse("bands")?;
    let classes: usize = header.parse("classes")?;
    if height == 0 || width == 0 || bands == 0 {
        return Err(DataError::InvalidCube(format!(
            "extents must be positive, got {height}x{width}x{bands}"
        ))
        .into());
    }
    let vp = blob_path(path, &header, "values_file", ".values");
    let raw = fs::read(&vp).map_err(io_err(&vp))?;
    check_size(height * width * bands * 4, raw.len())?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let lp = blob_path(path, &header, "labels_file", ".labels");
    let raw = fs::read(&lp).map_err(io_err(&lp))?;
    check_size(height * width * 4, raw.len())?;
    let labels = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(HsiCube::new(height, width, bands, classes, values, labels)?)
}

pub fn save_model(model: &RankRModel, path: &Path) -> Result<(), FormatError> {
    fs::write(path, model_to_bytes(model)).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<RankRModel, FormatError> {
    model_from_bytes(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_fcfnn(f: &Fcfnn, path: &Path) -> Result<(), FormatError> {
    fs::write(path, fcfnn_to_bytes(f)).map_err(io_err(path))
}

pub fn load_fcfnn(path: &Path) -> Result<Fcfnn, FormatError> {
    fcfnn_from_bytes(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_patches(set: &LabeledPatchSet, path: &Path) -> Result<(), FormatError> {
    fs::write(path, patches_to_bytes(set)).map_err(io_err(path))
}

pub fn load_patches(path: &Path) -> Result<LabeledPatchSet, FormatError> {
    patches_from_bytes(&fs::read(path).map_err(io_err(path))?)
}
