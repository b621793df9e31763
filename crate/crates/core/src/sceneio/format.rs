//! Binary scene container.
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 4            | magic `UBS1`                                         |
//! | 4            | `n_dims`, u32 LE (3, 6 or 7)                         |
//! | 4            | primitive count, u32 LE                              |
//! | 24           | background RGB, 3 x f64 LE                           |
//! | count x 8·P  | per primitive, P f64 LE in parameter-field order     |
//!
//! `P` is 14 for N = 3, 35 for N = 6 and 44 for N = 7.

use std::fs;
use std::path::Path;

use super::{param_len, query_dims_for, Primitive, Scene};
use crate::error::{Result, UbsError};

pub const SCENE_MAGIC: &[u8; 4] = b"UBS1";
const HEADER_LEN: usize = 4 + 4 + 4 + 24;

pub fn scene_to_bytes(scene: &Scene) -> Result<Vec<u8>> {
    let c = query_dims_for(scene.n_dims)?;
    let p = param_len(c);
    let mut out = Vec::with_capacity(HEADER_LEN + scene.len() * p * 8);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&(scene.n_dims as u32).to_le_bytes());
    let count = u32::try_from(scene.len()).map_err(|_| UbsError::Format("too many primitives".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for v in scene.background {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut flat = Vec::with_capacity(p);
    for (i, prim) in scene.primitives.iter().enumerate() {
        if prim.query_dims() != c {
            return Err(UbsError::Format(format!("primitive {i} has {} query dims, expected {c}", prim.query_dims())));
        }
        flat.clear();
        prim.write_flat(&mut flat);
        for v in &flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn scene_from_bytes(bytes: &[u8]) -> Result<Scene> {
    if bytes.len() < 4 || &bytes[..4] != SCENE_MAGIC {
        return Err(UbsError::Format("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(UbsError::Format(format!("truncated header: {} bytes", bytes.len())));
    }
    let n_dims = read_u32(bytes, 4) as usize;
    let c = query_dims_for(n_dims).map_err(|_| UbsError::Format(format!("n_dims {n_dims} not in {{3, 6, 7}}")))?;
    let count = read_u32(bytes, 8) as usize;
    let background = [read_f64(bytes, 12), read_f64(bytes, 20), read_f64(bytes, 28)];
    let p = param_len(c);
    let expected = count
        .checked_mul(p * 8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| UbsError::Format("primitive count overflows".into()))?;
    if bytes.len() < expected {
        return Err(UbsError::Format(format!("truncated: expected {expected} bytes, found {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(UbsError::Format(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut scene = Scene { n_dims, primitives: Vec::with_capacity(count), background };
    let mut flat = vec![0.0; p];
    for i in 0..count {
        let base = HEADER_LEN + i * p * 8;
        for (k, v) in flat.iter_mut().enumerate() {
            *v = read_f64(bytes, base + 8 * k);
        }
        scene.primitives.push(Primitive::from_flat(c, &flat));
    }
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scene_to_bytes(scene)?)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    scene_from_bytes(&fs::read(path)?)
}

/// Human-readable JSON form of a scene.
pub fn scene_to_json(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string_pretty(scene)?)
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    let scene: Scene = serde_json::from_str(text)?;
    scene.validate()?;
    Ok(scene)
}
