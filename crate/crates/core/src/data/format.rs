//! Portable tensor files: one JSON header line terminated by `\n`, then the raw
//! little-endian `f32` payload in `[T, C, H, W]` row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FieldTensor;
use crate::{Error, Result};

pub const DTYPE: &str = "float32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: [usize; 4],
    pub dtype: String,
    pub vars: Vec<String>,
    pub units: Vec<String>,
    pub time_epoch: String,
    pub time_index: Vec<i64>,
}

impl TensorHeader {
    pub fn for_tensor(t: &FieldTensor) -> Self {
        Self {
            shape: t.shape(),
            dtype: DTYPE.to_string(),
            vars: t.var_names.clone(),
            units: t.units.clone(),
            time_epoch: t.time_epoch.clone(),
            time_index: t.time_index.clone(),
        }
    }

    fn frame_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    fn payload_bytes(&self) -> u64 {
        4 * self.shape.iter().map(|&d| d as u64).product::<u64>()
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE {
            return Err(Error::Dtype(self.dtype.clone()));
        }
        let [t, c, _, _] = self.shape;
        if self.vars.len() != c || self.units.len() != c {
            return Err(Error::MalformedHeader(format!(
                "{c} channels but {} vars and {} units",
                self.vars.len(),
                self.units.len()
            )));
        }
        if self.time_index.len() != t {
            return Err(Error::MalformedHeader(format!("{t} time steps but {} time indices", self.time_index.len())));
        }
        Ok(())
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &FieldTensor) -> Result<()> {
    let mut w = TensorWriter::create(path, TensorHeader::for_tensor(t))?;
    w.write_values(t.values())?;
    w.finish()
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FieldTensor> {
    let mut r = TensorReader::open(path)?;
    let t = r.header().shape[0];
    let out = r.read_frames(t)?;
    r.expect_end()?;
    Ok(out)
}

/// Streams frames into a tensor file whose header is known up front.
pub struct TensorWriter {
    path: PathBuf,
    out: BufWriter<File>,
    expected: usize,
    written: usize,
}

impl TensorWriter {
    pub fn create(path: impl AsRef<Path>, header: TensorHeader) -> Result<Self> {
        header.validate()?;
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let line = serde_json::to_string(&header)?;
        out.write_all(line.as_bytes()).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io(&path, e))?;
        let expected = header.shape.iter().product();
        Ok(Self { path, out, expected, written: 0 })
    }

    pub fn write_values(&mut self, values: &[f32]) -> Result<()> {
        if self.written + values.len() > self.expected {
            return Err(Error::Shape(format!(
                "writing {} values past the declared {}",
                self.written + values.len(),
                self.expected
            )));
        }
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.written += values.len();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::Shape(format!("wrote {} of {} declared values", self.written, self.expected)));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a tensor file frame by frame.
pub struct TensorReader {
    path: PathBuf,
    input: BufReader<File>,
    header: TensorHeader,
    next_frame: usize,
}

impl TensorReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let total = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut input = BufReader::new(file);
        let mut line = Vec::new();
        input.read_until(b'\n', &mut line).map_err(|e| Error::io(&path, e))?;
        if line.last() != Some(&b'\n') {
            return Err(Error::MalformedHeader("header line is not terminated by a newline".into()));
        }
        let text = std::str::from_utf8(&line[..line.len() - 1])
            .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
        // Check the dtype before the full schema so an unknown dtype reports as such.
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if let Some(dtype) = raw.get("dtype").and_then(|d| d.as_str()) {
            if dtype != DTYPE {
                return Err(Error::Dtype(dtype.to_string()));
            }
        }
        let header: TensorHeader =
            serde_json::from_value(raw).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        header.validate()?;
        let found = total - line.len() as u64;
        if found != header.payload_bytes() {
            return Err(Error::TruncatedPayload { expected: header.payload_bytes(), found });
        }
        Ok(Self { path, input, header, next_frame: 0 })
    }

    pub fn header(&self) -> &TensorHeader {
        &self.header
    }

    pub fn remaining(&self) -> usize {
        self.header.shape[0] - self.next_frame
    }

    /// Next `n` time steps (fewer at the end of the file).
    pub fn read_frames(&mut self, n: usize) -> Result<FieldTensor> {
        let n = n.min(self.remaining());
        let frame = self.header.frame_len();
        let mut bytes = vec![0u8; n * frame * 4];
        self.input.read_exact(&mut bytes).map_err(|e| Error::io(&self.path, e))?;
        let values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let [_, c, h, w] = self.header.shape;
        let start = self.next_frame;
        self.next_frame += n;
        FieldTensor::new(
            values,
            [n, c, h, w],
            self.header.vars.clone(),
            self.header.units.clone(),
            self.header.time_epoch.clone(),
            self.header.time_index[start..start + n].to_vec(),
        )
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.input.read(&mut probe).map_err(|e| Error::io(&self.path, e))? {
            0 => Ok(()),
            _ => Err(Error::TruncatedPayload { expected: self.header.payload_bytes(), found: self.header.payload_bytes() + 1 }),
        }
    }
}
