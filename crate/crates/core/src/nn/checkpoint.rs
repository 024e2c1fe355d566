//! Model checkpoint container.
//!
//! ```text
//! magic "UEDM" | u16 version | u32 header length | header (JSON spec)
//! u32 n_params | n_params x f32 LE | u32 n_state | n_state x f32 LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::extractor::{ExtractorSpec, FeatureExtractor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UEDM";
const VERSION: u16 = 1;

pub fn encode_extractor(model: &FeatureExtractor) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.spec)?;
    let mut out = Vec::with_capacity(14 + header.len() + 4 * (model.params.len() + model.state.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    write_f32s(&mut out, &model.params);
    write_f32s(&mut out, &model.state);
    Ok(out)
}

fn write_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(n.saturating_mul(4), what)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format((start + 4 * i) as u64, format!("non-finite value in {what}")));
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expect {
            return Err(Error::format(0, format!("bad magic {m:?}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.pos as u64, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn decode_extractor(bytes: &[u8]) -> Result<FeatureExtractor> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32("header length")? as usize;
    let hstart = c.pos;
    let header = c.take(hlen, "header")?;
    let spec: ExtractorSpec = serde_json::from_slice(header)
        .map_err(|e| Error::format(hstart as u64, format!("header: {e}")))?;
    let params = c.f32s("parameters")?;
    let state = c.f32s("state")?;
    c.finish()?;
    FeatureExtractor::from_parts(spec, params, state)
}

pub fn save_extractor(path: &Path, model: &FeatureExtractor) -> Result<()> {
    let bytes = encode_extractor(model)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_extractor(path: &Path) -> Result<FeatureExtractor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_extractor(&bytes)
}
