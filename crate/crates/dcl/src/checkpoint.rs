//! Binary weight checkpoints, one format for both networks: magic string,
//! network kind, layer-count header, per-layer shape headers, a step counter,
//! little-endian f32 weights, then optional optimizer state (SGD velocity or
//! Adam moments, stored as f64).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::acdqn::{AcdqnNet, TargetNet};
use crate::error::{DclError, Result};
use crate::learner::LearnerNet;
use crate::tensor::Kernel4;

const MAGIC: &[u8; 8] = b"DCLNET01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NetKind {
    Learner = 1,
    Acdqn = 2,
    Target = 3,
}

impl NetKind {
    fn from_u32(v: u32) -> Option<NetKind> {
        match v {
            1 => Some(NetKind::Learner),
            2 => Some(NetKind::Acdqn),
            3 => Some(NetKind::Target),
            _ => None,
        }
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> DclError {
    DclError::BadCheckpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_f32s(w: &mut impl Write, vals: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

fn write_header(
    w: &mut impl Write,
    kind: NetKind,
    layers: &[Kernel4<f32>],
    step: u64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, kind as u32)?;
    write_u32(w, layers.len() as u32)?;
    for l in layers {
        write_u32(w, l.kh() as u32)?;
        write_u32(w, l.kw() as u32)?;
        write_u32(w, l.cin() as u32)?;
        write_u32(w, l.cout() as u32)?;
    }
    write_u64(w, step)?;
    for l in layers {
        write_f32s(w, l.weights())?;
    }
    Ok(())
}

struct Header {
    kind: NetKind,
    layers: Vec<Kernel4<f32>>,
    step: u64,
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let kind = NetKind::from_u32(read_u32(r)?).ok_or_else(|| bad(path, "unknown net kind"))?;
    let layer_count = read_u32(r)? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(bad(path, format!("implausible layer count {layer_count}")));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let kh = read_u32(r)? as usize;
        let kw = read_u32(r)? as usize;
        let cin = read_u32(r)? as usize;
        let cout = read_u32(r)? as usize;
        shapes.push((kh, kw, cin, cout));
    }
    let step = read_u64(r)?;
    let mut layers = Vec::with_capacity(layer_count);
    for (kh, kw, cin, cout) in shapes {
        let weights = read_f32s(r, kh * kw * cin * cout)?;
        layers.push(
            Kernel4::from_vec(kh, kw, cin, cout, weights)
                .map_err(|e| bad(path, e.to_string()))?,
        );
    }
    Ok(Header { kind, layers, step })
}

/// Save the forward model: weights, step counter and SGD velocity.
pub fn save_learner(path: &Path, net: &LearnerNet<f32>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_header(&mut w, NetKind::Learner, std::slice::from_ref(net.kernel()), net.step_count())?;
    w.write_all(&[1u8])?;
    write_f64s(&mut w, net.momentum_state().velocity())?;
    Ok(())
}

pub fn load_learner(path: &Path) -> Result<LearnerNet<f32>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let hdr = read_header(&mut r, path)?;
    if hdr.kind != NetKind::Learner || hdr.layers.len() != 1 {
        return Err(bad(path, "not a forward-model checkpoint"));
    }
    let mut net = LearnerNet::from_kernel(hdr.layers.into_iter().next().unwrap(), hdr.step)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    if flag[0] == 1 {
        let velocity = read_f64s(&mut r, net.param_count())?;
        net.momentum_state_mut().velocity_mut().copy_from_slice(&velocity);
    }
    Ok(net)
}

/// Save the Q-network: weights, step counter, norm settings and Adam state.
pub fn save_acdqn(path: &Path, net: &AcdqnNet<f32>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_header(&mut w, NetKind::Acdqn, net.layers(), net.step_count())?;
    w.write_all(&[u8::from(net.use_norm())])?;
    write_f64s(&mut w, &[net.norm_eps()])?;
    w.write_all(&[1u8])?;
    for state in net.adam_states() {
        write_u64(&mut w, state.step_count())?;
        let (m, v) = state.moments();
        write_f64s(&mut w, m)?;
        write_f64s(&mut w, v)?;
    }
    Ok(())
}

pub fn load_acdqn(path: &Path) -> Result<AcdqnNet<f32>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let hdr = read_header(&mut r, path)?;
    if hdr.kind != NetKind::Acdqn {
        return Err(bad(path, "not a Q-network checkpoint"));
    }
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    let use_norm = flags[0] != 0;
    let norm_eps = read_f64s(&mut r, 1)?[0];
    let sizes: Vec<usize> = hdr.layers.iter().map(|l| l.len()).collect();
    let mut net = AcdqnNet::from_layers(hdr.layers, use_norm, norm_eps)?;
    net.set_step_count(hdr.step);
    r.read_exact(&mut flags)?;
    if flags[0] == 1 {
        for (state, size) in net.adam_states_mut().iter_mut().zip(sizes) {
            let step = read_u64(&mut r)?;
            let m = read_f64s(&mut r, size)?;
            let v = read_f64s(&mut r, size)?;
            state.set_step_count(step);
            let (ms, vs) = state.moments_mut();
            ms.copy_from_slice(&m);
            vs.copy_from_slice(&v);
        }
    }
    Ok(net)
}

/// Save a frozen target network (weights and sync counter only).
pub fn save_target(path: &Path, target: &TargetNet<f32>, use_norm: bool, norm_eps: f64) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_header(&mut w, NetKind::Target, target.layers(), target.sync_count())?;
    w.write_all(&[u8::from(use_norm)])?;
    write_f64s(&mut w, &[norm_eps])?;
    Ok(())
}

pub fn load_target(path: &Path) -> Result<TargetNet<f32>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let hdr = read_header(&mut r, path)?;
    if hdr.kind != NetKind::Target {
        return Err(bad(path, "not a target-network checkpoint"));
    }
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    let use_norm = flags[0] != 0;
    let norm_eps = read_f64s(&mut r, 1)?[0];
    let net = AcdqnNet::from_layers(hdr.layers, use_norm, norm_eps)?;
    let mut target = TargetNet::snapshot(&net);
    target.set_sync_count(hdr.step);
    Ok(target)
}
