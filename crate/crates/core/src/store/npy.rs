//! Reading and writing tensors in the numpy `.npy` format, version 1.0.
//!
//! Only little-endian `f4`/`f8` payloads in C order are accepted. `f8` data is
//! narrowed to `f4` on read; files are always written as `<f4`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::map::ActivationMap;
use crate::tensor::{EmbeddingVector, FeatureMap};
use crate::{Error, Result, Scalar};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// A tensor loaded from or destined for an `.npy` file.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor<T> {
    /// Rank 3: `(channels, height, width)`.
    Features(FeatureMap<T>),
    /// Rank 1.
    Embedding(EmbeddingVector<T>),
    /// Rank 2: `(height, width)`. Written by the CLI; [`read_tensor`] rejects it.
    Map(ActivationMap<T>),
}

impl<T: Scalar> Tensor<T> {
    fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::Features(f) => vec![f.channels(), f.height(), f.width()],
            Tensor::Embedding(e) => vec![e.len()],
            Tensor::Map(m) => vec![m.height(), m.width()],
        }
    }

    fn values(&self) -> &[T] {
        match self {
            Tensor::Features(f) => f.values(),
            Tensor::Embedding(e) => e.values(),
            Tensor::Map(m) => m.values(),
        }
    }
}

impl<T> From<FeatureMap<T>> for Tensor<T> {
    fn from(f: FeatureMap<T>) -> Self {
        Tensor::Features(f)
    }
}

impl<T> From<EmbeddingVector<T>> for Tensor<T> {
    fn from(e: EmbeddingVector<T>) -> Self {
        Tensor::Embedding(e)
    }
}

impl<T> From<ActivationMap<T>> for Tensor<T> {
    fn from(m: ActivationMap<T>) -> Self {
        Tensor::Map(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

#[derive(Debug, PartialEq)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

/// Parsed payload: shape and values already narrowed to `f32`.
#[derive(Debug, PartialEq)]
pub struct RawArray {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Parse an `.npy` byte stream.
pub fn decode<R: Read>(reader: &mut R) -> std::result::Result<RawArray, String> {
    let header = read_header(reader)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or("shape: element count overflows")?;
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| format!("payload: {e}"))?;
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(format!(
            "payload: expected {expected} bytes for shape {:?}, found {}",
            header.shape,
            payload.len()
        ));
    }
    let values = match header.dtype {
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| {
                let mut b = [0u8; 8];
                b.copy_from_slice(c);
                f64::from_le_bytes(b) as f32
            })
            .collect(),
    };
    Ok(RawArray {
        shape: header.shape,
        values,
    })
}

fn read_header<R: Read>(reader: &mut R) -> std::result::Result<Header, String> {
    let mut preamble = [0u8; 10];
    reader
        .read_exact(&mut preamble)
        .map_err(|_| "magic: file shorter than the npy preamble".to_string())?;
    if &preamble[..6] != MAGIC {
        return Err("magic: not an npy file (expected \\x93NUMPY)".into());
    }
    if preamble[6..8] != [1, 0] {
        return Err(format!(
            "version: {}.{} is not supported, expected 1.0",
            preamble[6], preamble[7]
        ));
    }
    let len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut raw = vec![0u8; len];
    reader
        .read_exact(&mut raw)
        .map_err(|_| "header: truncated".to_string())?;
    let text = std::str::from_utf8(&raw).map_err(|_| "header: not ASCII".to_string())?;
    parse_dict(text)
}

fn parse_dict(text: &str) -> std::result::Result<Header, String> {
    let body = text.trim_end_matches(['\n', ' ', '\0']).trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or("header: expected a python dict literal")?;

    let descr = dict_value(body, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => {
            return Err(format!(
                "descr: dtype '{other}' unsupported, expected '<f4' or '<f8'"
            ))
        }
    };

    match dict_value(body, "fortran_order")? {
        "False" => {}
        "True" => return Err("fortran_order: requires C-contiguous data".into()),
        other => {
            return Err(format!(
                "fortran_order: expected True or False, found {other}"
            ))
        }
    }

    let shape = dict_value(body, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("shape: expected a tuple, found {shape}"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| format!("shape: bad dimension {s:?}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Header { dtype, shape })
}

/// Raw text of `key`'s value inside a flat python dict literal.
fn dict_value<'a>(body: &'a str, key: &str) -> std::result::Result<&'a str, String> {
    let single = format!("'{key}'");
    let double = format!("\"{key}\"");
    let start = body
        .find(&single)
        .map(|i| i + single.len())
        .or_else(|| body.find(&double).map(|i| i + double.len()))
        .ok_or_else(|| format!("{key}: missing from header"))?;
    let rest = body[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| format!("{key}: malformed entry"))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find(',').or(Some(rest.len()))
    }
    .ok_or_else(|| format!("{key}: unterminated value"))?;
    Ok(rest[..end].trim())
}

/// Serialize `values` with `shape` as `<f4`, C order.
pub fn encode<W: Write>(writer: &mut W, shape: &[usize], values: &[f32]) -> io::Result<()> {
    let dims = match shape {
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    dict.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    dict.push('\n');

    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(dict.len() as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    let mut payload = Vec::with_capacity(values.len() * 4);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&payload)
}

fn load(path: &Path) -> Result<RawArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&mut bytes.as_slice()).map_err(|msg| Error::Npy {
        path: path.to_path_buf(),
        msg,
    })
}

fn shape_error(path: &Path, e: Error) -> Error {
    Error::Npy {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Load a rank-3 feature map or a rank-1 embedding.
pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let raw = load(path)?;
    let values: Vec<T> = raw
        .values
        .iter()
        .map(|v| T::from_acc(f64::from(*v)))
        .collect();
    match raw.shape[..] {
        [c, h, w] => FeatureMap::new(c, h, w, values)
            .map(Tensor::Features)
            .map_err(|e| shape_error(path, e)),
        [_] => EmbeddingVector::new(values)
            .map(Tensor::Embedding)
            .map_err(|e| shape_error(path, e)),
        _ => Err(Error::Npy {
            path: path.to_path_buf(),
            msg: format!("shape: rank must be 1 or 3, got {}", raw.shape.len()),
        }),
    }
}

/// Load a rank-3 feature map, rejecting embeddings.
pub fn read_features<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Features(f) => Ok(f),
        _ => Err(Error::Npy {
            path: path.to_path_buf(),
            msg: "shape: expected a rank-3 feature map".into(),
        }),
    }
}

/// Load a rank-2 activation map as written by [`write_tensor`].
pub fn read_map<T: Scalar>(path: impl AsRef<Path>) -> Result<ActivationMap<T>> {
    let path = path.as_ref();
    let raw = load(path)?;
    let values = raw
        .values
        .iter()
        .map(|v| T::from_acc(f64::from(*v)))
        .collect();
    match raw.shape[..] {
        [h, w] => ActivationMap::new(h, w, values).map_err(|e| shape_error(path, e)),
        _ => Err(Error::Npy {
            path: path.to_path_buf(),
            msg: format!("shape: expected rank 2, got {}", raw.shape.len()),
        }),
    }
}

/// Write any tensor as `<f4`, creating parent directories as needed.
pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let values: Vec<f32> = tensor.values().iter().map(|v| v.to_f32_lossy()).collect();
    let mut buf = Vec::new();
    encode(&mut buf, &tensor.shape(), &values).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
