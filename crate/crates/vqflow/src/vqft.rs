//! VQFT feature files.
//!
//! Little-endian layout: `"VQFT"`, version `u16`, scale count `u16`, then
//! `D, H, W` as `u32` per scale, then each scale's `f32` payload in
//! channel-first row-major order, then label `u8`, class id `u32`,
//! mask flag `u8` and, if set, one `u8` per finest-scale position.
//!
//! The sample id is not stored; it comes from the manifest line.

use std::path::Path;

use vqflow_core::sample::{FeatureSample, Label, Mask};
use vqflow_core::Tensor;

use crate::bytes::{fit, put_f32s, put_u16, put_u32, Reader};
use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"VQFT";
pub const VERSION: u16 = 1;

pub fn encode(sample: &FeatureSample<f32>) -> Result<Vec<u8>> {
    sample.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    put_u16(&mut out, fit(sample.scales.len(), "scale count")?);
    for (d, h, w) in sample.geometry() {
        for v in [d, h, w] {
            put_u32(&mut out, fit(v, "dimension")?);
        }
    }
    for s in &sample.scales {
        put_f32s(&mut out, s.data());
    }
    out.push(match sample.label {
        Label::Normal => 0,
        Label::Anomalous => 1,
    });
    put_u32(&mut out, sample.class_id);
    match &sample.mask {
        Some(m) => {
            out.push(1);
            out.extend_from_slice(&m.data);
        }
        None => out.push(0),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], id: u32) -> Result<FeatureSample<f32>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"VQFT\"", String::from_utf8_lossy(magic))));
    }
    let at = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.pos;
    let l = r.u16("scale count")? as usize;
    if l == 0 {
        return Err(Error::format(at, "scale count is zero"));
    }
    let mut dims = Vec::with_capacity(l);
    for i in 0..l {
        let at = r.pos;
        let (d, h, w) = (r.u32("dims")? as usize, r.u32("dims")? as usize, r.u32("dims")? as usize);
        let n = d
            .checked_mul(h)
            .and_then(|x| x.checked_mul(w))
            .ok_or_else(|| Error::format(at, format!("scale {i} dims {d}x{h}x{w} overflow")))?;
        dims.push((d, h, w, n));
    }
    let mut scales = Vec::with_capacity(l);
    for (i, &(d, h, w, n)) in dims.iter().enumerate() {
        let data = r.f32s(n, &format!("scale {i} payload"))?;
        scales.push(Tensor::new(vec![d, h, w], data)?);
    }
    let at = r.pos;
    let label = match r.u8("label")? {
        0 => Label::Normal,
        1 => Label::Anomalous,
        v => return Err(Error::format(at, format!("label byte {v} is neither 0 nor 1"))),
    };
    let class_id = r.u32("class id")?;
    let at = r.pos;
    let mask = match r.u8("mask flag")? {
        0 => None,
        1 => {
            let (_, h, w, _) = dims[0];
            let at = r.pos;
            let data = r.take(h * w, "mask payload")?.to_vec();
            Some(Mask::new(h, w, data).map_err(|e| Error::format(at, e.to_string()))?)
        }
        v => return Err(Error::format(at, format!("mask flag {v} is neither 0 nor 1"))),
    };
    r.finish()?;
    let sample = FeatureSample { id, class_id, scales, label, mask };
    sample.validate()?;
    Ok(sample)
}

pub fn write_feature_file(sample: &FeatureSample<f32>, path: &Path) -> Result<()> {
    error::write(path, &encode(sample)?)
}

pub fn read_feature_file(path: &Path, id: u32) -> Result<FeatureSample<f32>> {
    decode(&error::read(path)?, id)
}
