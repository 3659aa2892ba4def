//! Chain-state checkpointing.
//!
//! Flat binary file, little-endian throughout:
//!
//! | bytes | field                              |
//! |-------|------------------------------------|
//! | 4     | magic `b"CNLA"`                    |
//! | 4     | format version (u32, currently 1)  |
//! | 8     | iteration count (u64)              |
//! | 8     | n latent (u64)                     |
//! | 8     | p hyper (u64)                      |
//! | 32    | rng seed                           |
//! | 16    | rng word position (u128)           |
//! | 8n    | latent state (f64)                 |
//! | 8p    | hyper state (f64)                  |
//! | 8n    | latent step sizes (f64)            |
//! | 8p    | hyper step sizes (f64)             |

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"CNLA";
const VERSION: u32 = 1;

/// Serializable sampler state for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCheckpoint {
    pub iteration: u64,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub latent_step: Vec<f64>,
    pub hyper_step: Vec<f64>,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &ChainCheckpoint) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&ckpt.iteration.to_le_bytes())?;
    out.write_all(&(ckpt.x.len() as u64).to_le_bytes())?;
    out.write_all(&(ckpt.theta.len() as u64).to_le_bytes())?;
    out.write_all(&ckpt.rng_seed)?;
    out.write_all(&ckpt.rng_word_pos.to_le_bytes())?;
    for v in ckpt
        .x
        .iter()
        .chain(&ckpt.theta)
        .chain(&ckpt.latent_step)
        .chain(&ckpt.hyper_step)
    {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ChainCheckpoint> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Config("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let iteration = read_u64(&mut input)?;
    let n = read_u64(&mut input)? as usize;
    let p = read_u64(&mut input)? as usize;
    let mut rng_seed = [0u8; 32];
    input.read_exact(&mut rng_seed)?;
    let mut pos = [0u8; 16];
    input.read_exact(&mut pos)?;
    let rng_word_pos = u128::from_le_bytes(pos);
    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            input.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let x = read_vec(n)?;
    let theta = read_vec(p)?;
    let latent_step = read_vec(n)?;
    let hyper_step = read_vec(p)?;
    Ok(ChainCheckpoint {
        iteration,
        x,
        theta,
        latent_step,
        hyper_step,
        rng_seed,
        rng_word_pos,
    })
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
