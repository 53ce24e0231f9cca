use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Method, ProxyState, SgdMomentum, TrainState};
use crate::error::{DymlError, Result};
use crate::geometry::EmbeddingModel;
use crate::io::{
    expect_eof, read_f64, read_f64s, read_magic, read_u32, read_u64, write_f64, write_f64s, write_magic, write_u32,
    write_u64,
};
use crate::proxies::{ClassProxies, ProxyBank};
use crate::taxonomy::Taxonomy;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DYMC1";
const VERSION: usize = 1;
const NO_SCALE: usize = u32::MAX as usize;

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    write_u32(w, bytes.len())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DymlError::Format(format!("invalid utf-8 string: {e}")))
}

fn write_velocity<W: Write>(w: &mut W, velocity: &[Vec<f64>]) -> Result<()> {
    write_u32(w, velocity.len())?;
    for v in velocity {
        write_u32(w, v.len())?;
        write_f64s(w, v)?;
    }
    Ok(())
}

fn read_velocity<R: Read>(r: &mut R, proxies: &ClassProxies) -> Result<Vec<Vec<f64>>> {
    let n = read_u32(r)?;
    if n != proxies.len() {
        return Err(DymlError::Format(format!("velocity for {n} proxies, expected {}", proxies.len())));
    }
    (0..n)
        .map(|_| {
            let d = read_u32(r)?;
            if d != proxies.dim() {
                return Err(DymlError::DimensionMismatch { expected: proxies.dim(), got: d });
            }
            read_f64s(r, d)
        })
        .collect()
}

/// Writes a training state together with the config text it was run with.
///
/// Layout (little-endian): magic, version u32, config string, method name,
/// scale u32 (`u32::MAX` for all scales), seed u64, epoch u64, step u64,
/// total steps u64, rng (32 seed bytes, stream u64, word position as two
/// u64 halves), model (d_in, d_out, hidden, bias, param count, params,
/// momentum, velocity), shared bank flag with a proxy block and velocity,
/// scale proxy count with (scale, proxy block, velocity) entries.
pub fn write_checkpoint<W: Write>(w: &mut W, state: &TrainState, config: &str) -> Result<()> {
    write_magic(w, CHECKPOINT_MAGIC)?;
    write_u32(w, VERSION)?;
    write_bytes(w, config.as_bytes())?;
    write_bytes(w, state.method.kind.name().as_bytes())?;
    write_u32(w, state.method.scale.unwrap_or(NO_SCALE))?;
    write_u64(w, state.seed)?;
    write_u64(w, state.epoch as u64)?;
    write_u64(w, state.step as u64)?;
    write_u64(w, state.total_steps as u64)?;

    w.write_all(&state.rng.get_seed())?;
    write_u64(w, state.rng.get_stream())?;
    let pos = state.rng.get_word_pos();
    write_u64(w, pos as u64)?;
    write_u64(w, (pos >> 64) as u64)?;

    let m = &state.model;
    write_u32(w, m.d_in())?;
    write_u32(w, m.d_out())?;
    write_u32(w, m.hidden().unwrap_or(0))?;
    write_u32(w, m.has_bias() as usize)?;
    write_u64(w, m.num_params() as u64)?;
    write_f64s(w, m.params())?;
    write_f64(w, state.model_optimizer.momentum)?;
    write_f64s(w, state.model_optimizer.velocity())?;

    match &state.shared {
        Some((bank, velocity)) => {
            write_u32(w, 1)?;
            bank.proxies().write(w)?;
            write_velocity(w, velocity)?;
        }
        None => write_u32(w, 0)?,
    }
    write_u32(w, state.scale_proxies.len())?;
    for (&scale, ps) in &state.scale_proxies {
        write_u32(w, scale)?;
        ps.proxies.write(w)?;
        write_velocity(w, &ps.velocity)?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`]; the taxonomy
/// rebuilds the shared proxy bank. Returns the state and the config text.
pub fn read_checkpoint<R: Read>(r: &mut R, taxonomy: &Taxonomy) -> Result<(TrainState, String)> {
    read_magic(r, CHECKPOINT_MAGIC)?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(DymlError::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = read_string(r)?;
    let kind = read_string(r)?.parse().map_err(|e: DymlError| DymlError::Format(e.to_string()))?;
    let scale = match read_u32(r)? {
        NO_SCALE => None,
        s => Some(s),
    };
    let method = Method { kind, scale };
    method.validate(taxonomy.num_scales())?;
    let seed = read_u64(r)?;
    let epoch = read_u64(r)? as usize;
    let step = read_u64(r)? as usize;
    let total_steps = read_u64(r)? as usize;

    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_stream(read_u64(r)?);
    let lo = read_u64(r)? as u128;
    let hi = read_u64(r)? as u128;
    rng.set_word_pos(lo | (hi << 64));

    let d_in = read_u32(r)?;
    let d_out = read_u32(r)?;
    let hidden = Some(read_u32(r)?).filter(|&h| h > 0);
    let bias = read_u32(r)? != 0;
    let n = read_u64(r)? as usize;
    let model = EmbeddingModel::from_params(d_in, d_out, hidden, bias, read_f64s(r, n)?)?;
    let momentum = read_f64(r)?;
    let model_optimizer = SgdMomentum::with_velocity(momentum, read_f64s(r, n)?);

    let shared = match read_u32(r)? {
        0 => None,
        1 => {
            let proxies = ClassProxies::read(r)?;
            let velocity = read_velocity(r, &proxies)?;
            Some((ProxyBank::new(taxonomy, proxies)?, velocity))
        }
        f => return Err(DymlError::Format(format!("invalid bank flag {f}"))),
    };
    let mut scale_proxies = BTreeMap::new();
    for _ in 0..read_u32(r)? {
        let scale = read_u32(r)?;
        let proxies = ClassProxies::read(r)?;
        let velocity = read_velocity(r, &proxies)?;
        scale_proxies.insert(scale, ProxyState { proxies, velocity });
    }
    expect_eof(r)?;
    let state =
        TrainState { method, seed, epoch, step, total_steps, model, model_optimizer, shared, scale_proxies, rng };
    Ok((state, config))
}
