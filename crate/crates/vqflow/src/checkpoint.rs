//! Model checkpoints.
//!
//! Little-endian layout: `"VQCK"`, version `u16`, the model configuration,
//! the codebook-seeded flag, the parameter registry (count, then name,
//! shape and `f32` payload of each entry in registry order), the codebook
//! usage counters and the coupling permutations. Loading rebuilds the model
//! from the stored configuration and refuses files whose registry or
//! permutations differ from what this build produces.

use std::path::Path;

use sha2::{Digest, Sha256};
use vqflow_core::model::{build_model, Components, ModelConfig, ScaleGeometry, VqFlowModel};
use vqflow_core::Tensor;

use crate::bytes::{fit, put_f32s, put_u16, put_u32, put_u64, Reader};
use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"VQCK";
pub const VERSION: u16 = 1;

fn component_bits(c: Components) -> u8 {
    c.cadm as u8 | (c.cpc as u8) << 1 | (c.cspc as u8) << 2 | (c.pe as u8) << 3
}

fn encode_config(out: &mut Vec<u8>, c: &ModelConfig) -> Result<()> {
    put_u64(out, c.seed);
    for v in [c.d_cp, c.d_pe, c.d_csp, c.k_cp, c.k_csp, c.blocks, c.cpc_hidden, c.head_hidden] {
        put_u32(out, fit(v, "model size")?);
    }
    out.push(component_bits(c.components));
    put_u16(out, fit(c.scales.len(), "scale count")?);
    for s in &c.scales {
        for v in [s.channels, s.height, s.width] {
            put_u32(out, fit(v, "scale dimension")?);
        }
    }
    Ok(())
}

fn decode_config(r: &mut Reader) -> Result<ModelConfig> {
    let seed = r.u64("seed")?;
    let mut sizes = [0usize; 8];
    for v in sizes.iter_mut() {
        *v = r.u32("model size")? as usize;
    }
    let at = r.pos;
    let bits = r.u8("component flags")?;
    if bits > 0b1111 {
        return Err(Error::format(at, format!("unknown component flags {bits:#06b}")));
    }
    let components = Components {
        cadm: bits & 1 != 0,
        cpc: bits & 2 != 0,
        cspc: bits & 4 != 0,
        pe: bits & 8 != 0,
    };
    let l = r.u16("scale count")? as usize;
    let mut scales = Vec::with_capacity(l);
    for _ in 0..l {
        scales.push(ScaleGeometry {
            channels: r.u32("scale dimension")? as usize,
            height: r.u32("scale dimension")? as usize,
            width: r.u32("scale dimension")? as usize,
        });
    }
    let [d_cp, d_pe, d_csp, k_cp, k_csp, blocks, cpc_hidden, head_hidden] = sizes;
    Ok(ModelConfig {
        scales,
        d_cp,
        d_pe,
        d_csp,
        k_cp,
        k_csp,
        blocks,
        cpc_hidden,
        head_hidden,
        components,
        seed,
    })
}

/// Field names where two configurations differ, with both values.
pub fn config_differences(file: &ModelConfig, expected: &ModelConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, a: String, b: String| {
        if a != b {
            out.push(format!("{name} (checkpoint {a}, expected {b})"));
        }
    };
    cmp("seed", file.seed.to_string(), expected.seed.to_string());
    cmp("D_cp", file.d_cp.to_string(), expected.d_cp.to_string());
    cmp("D_PE", file.d_pe.to_string(), expected.d_pe.to_string());
    cmp("D_csp", file.d_csp.to_string(), expected.d_csp.to_string());
    cmp("K_cp", file.k_cp.to_string(), expected.k_cp.to_string());
    cmp("K_csp", file.k_csp.to_string(), expected.k_csp.to_string());
    cmp("blocks", file.blocks.to_string(), expected.blocks.to_string());
    cmp("cpc_hidden", file.cpc_hidden.to_string(), expected.cpc_hidden.to_string());
    cmp("head_hidden", file.head_hidden.to_string(), expected.head_hidden.to_string());
    cmp("components", format!("{:?}", file.components), format!("{:?}", expected.components));
    let geo = |c: &ModelConfig| format!("{:?}", c.scales.iter().map(|s| (s.channels, s.height, s.width)).collect::<Vec<_>>());
    cmp("scales", geo(file), geo(expected));
    out
}

pub fn encode(model: &VqFlowModel<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    encode_config(&mut out, model.config())?;
    out.push(model.codebooks_seeded() as u8);
    let params = model.params();
    put_u32(&mut out, fit(params.len(), "parameter count")?);
    for (name, t) in params.names().iter().zip(params.values()) {
        put_u16(&mut out, fit(name.len(), "parameter name length")?);
        out.extend_from_slice(name.as_bytes());
        out.push(fit(t.shape().len(), "rank")?);
        for &d in t.shape() {
            put_u32(&mut out, fit(d, "parameter dimension")?);
        }
        put_f32s(&mut out, t.data());
    }
    let usage: Vec<Vec<u64>> = usage_of(model);
    put_u16(&mut out, fit(usage.len(), "usage table count")?);
    for u in &usage {
        put_u32(&mut out, fit(u.len(), "usage length")?);
        for &v in u {
            put_u64(&mut out, v);
        }
    }
    let perms = model.permutations();
    put_u32(&mut out, fit(perms.len(), "permutation count")?);
    for p in &perms {
        put_u32(&mut out, fit(p.len(), "permutation length")?);
        for &v in p {
            put_u32(&mut out, fit(v, "permutation entry")?);
        }
    }
    Ok(out)
}

fn usage_of(model: &VqFlowModel<f32>) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    if let Some(s) = model.cpc_slot() {
        out.push(s.usage.clone());
    }
    out.extend(model.cspc_slots().iter().map(|s| s.usage.clone()));
    out
}

pub fn decode(bytes: &[u8]) -> Result<VqFlowModel<f32>> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"VQCK\""));
    }
    let at = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "checkpoint format version {version} at byte {at}, this build reads {VERSION}"
        )));
    }
    let at = r.pos;
    let config = decode_config(&mut r)?;
    let mut model = build_model::<f32>(&config)
        .map_err(|e| Error::format(at, format!("stored configuration is invalid: {e}")))?;
    let at = r.pos;
    let seeded = match r.u8("seeded flag")? {
        0 => false,
        1 => true,
        v => return Err(Error::format(at, format!("seeded flag {v} is neither 0 nor 1"))),
    };
    model.set_codebooks_seeded(seeded);

    let count = r.u32("parameter count")? as usize;
    let expect_names = model.params().names().to_vec();
    let expect_shapes: Vec<Vec<usize>> = model.params().shapes().iter().map(|s| s.to_vec()).collect();
    if count != expect_names.len() {
        return Err(Error::Version(format!(
            "checkpoint has {count} parameters, this build registers {}",
            expect_names.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let n = r.u16("parameter name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(n, "parameter name")?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter dimension")? as usize);
        }
        if name != expect_names[i] || shape != expect_shapes[i] {
            return Err(Error::Version(format!(
                "parameter {i} is {name} {shape:?} in the checkpoint but {} {:?} in this build",
                expect_names[i], expect_shapes[i]
            )));
        }
        let n: usize = shape.iter().product();
        let data = r.f32s(n, &format!("parameter {name}"))?;
        values.push(Tensor::new(shape, data)?);
    }
    model.params_mut().set_values(values)?;

    let at = r.pos;
    let tables = r.u16("usage table count")? as usize;
    let mut slots = model.usage_mut();
    if tables != slots.len() {
        return Err(Error::format(at, format!("{tables} usage tables, model has {} codebooks", slots.len())));
    }
    for slot in slots.iter_mut() {
        let at = r.pos;
        let n = r.u32("usage length")? as usize;
        if n != slot.len() {
            return Err(Error::format(at, format!("usage table of length {n}, codebook has {}", slot.len())));
        }
        for v in slot.iter_mut() {
            *v = r.u64("usage count")?;
        }
    }

    let at = r.pos;
    let n = r.u32("permutation count")? as usize;
    let mut perms = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = r.u32("permutation length")? as usize;
        let mut p = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            p.push(r.u32("permutation entry")? as usize);
        }
        perms.push(p);
    }
    if perms != model.permutations() {
        return Err(Error::Version(format!(
            "coupling permutations at byte {at} differ from the ones this build derives from seed {}",
            config.seed
        )));
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(model: &VqFlowModel<f32>, path: &Path) -> Result<()> {
    error::write(path, &encode(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<VqFlowModel<f32>> {
    decode(&error::read(path)?)
}

/// Loads a checkpoint and requires its configuration to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<VqFlowModel<f32>> {
    let model = load_checkpoint(path)?;
    let diff = config_differences(model.config(), expected);
    if !diff.is_empty() {
        return Err(Error::Version(format!(
            "{} was written for a different model: {}",
            path.display(),
            diff.join(", ")
        )));
    }
    Ok(model)
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the checkpoint encoding of `model`.
pub fn model_digest(model: &VqFlowModel<f32>) -> Result<String> {
    Ok(digest(&encode(model)?))
}
