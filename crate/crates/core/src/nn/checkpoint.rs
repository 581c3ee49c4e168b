//! Flat binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "WFCKPT01"
//! conv_layers      u32      | filters u32 | kernel u32
//! seq_len          u32      | stat_dim u32 | hidden_dim u32 | num_classes u32
//! use_dilation     u8
//! dropout_rate     f64
//! dilation count   u32, then that many u32 rates
//! parameter arrays, canonical order: u64 length + f32 values each
//! has_adam         u8
//!   (if 1) lr f64, beta1 f64, beta2 f64, epsilon f64, t u64,
//!          then m arrays and v arrays with the same framing
//! ```
//!
//! Save→load round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::adam::{AdamParams, AdamState};
use crate::nn::network::{Network, NetworkConfig};

const MAGIC: &[u8; 8] = b"WFCKPT01";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, expected: usize) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::Checkpoint(format!(
                "array length {n} does not match expected {expected}"
            )));
        }
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Serialize a network (and optionally its optimizer state) to bytes.
pub fn checkpoint_bytes(net: &Network<f32>, adam: Option<&AdamState<f32>>) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(64 + 4 * net.param_count().total),
    };
    w.buf.extend_from_slice(MAGIC);
    let cfg = &net.cfg;
    w.u32(cfg.conv_layers as u32);
    w.u32(cfg.filters as u32);
    w.u32(cfg.kernel as u32);
    w.u32(cfg.seq_len as u32);
    w.u32(cfg.stat_dim as u32);
    w.u32(cfg.hidden_dim as u32);
    w.u32(cfg.num_classes as u32);
    w.u8(cfg.use_dilation as u8);
    w.f64(cfg.dropout_rate);
    w.u32(cfg.dilation_schedule.len() as u32);
    for &d in &cfg.dilation_schedule {
        w.u32(d as u32);
    }
    for a in net.param_arrays() {
        w.f32_slice(a);
    }
    match adam {
        None => w.u8(0),
        Some(state) => {
            w.u8(1);
            w.f64(state.hyper.learning_rate);
            w.f64(state.hyper.beta1);
            w.f64(state.hyper.beta2);
            w.f64(state.hyper.epsilon);
            w.u64(state.t);
            for a in &state.m {
                w.f32_slice(a);
            }
            for a in &state.v {
                w.f32_slice(a);
            }
        }
    }
    w.buf
}

/// Deserialize a checkpoint produced by [`checkpoint_bytes`].
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Network<f32>, Option<AdamState<f32>>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint file)".into()));
    }
    let conv_layers = r.u32()? as usize;
    let filters = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    let seq_len = r.u32()? as usize;
    let stat_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let use_dilation = r.u8()? != 0;
    let dropout_rate = r.f64()?;
    let n_dil = r.u32()? as usize;
    let mut dilation_schedule = Vec::with_capacity(n_dil);
    for _ in 0..n_dil {
        dilation_schedule.push(r.u32()? as usize);
    }
    let cfg = NetworkConfig {
        conv_layers,
        filters,
        kernel,
        dilation_schedule,
        use_dilation,
        seq_len,
        stat_dim,
        hidden_dim,
        num_classes,
        dropout_rate,
    };
    let mut net = Network::<f32>::build(cfg, 0)?;
    for a in net.param_arrays_mut() {
        let vals = r.f32_vec(a.len())?;
        a.copy_from_slice(&vals);
    }
    let adam = if r.u8()? == 1 {
        let hyper = AdamParams {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let t = r.u64()?;
        let mut state = AdamState::new(&net, hyper);
        state.t = t;
        for a in &mut state.m {
            *a = r.f32_vec(a.len())?;
        }
        for a in &mut state.v {
            *a = r.f32_vec(a.len())?;
        }
        Some(state)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((net, adam))
}

/// Write a checkpoint file.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network<f32>,
    adam: Option<&AdamState<f32>>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&checkpoint_bytes(net, adam))
        .map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Read a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network<f32>, Option<AdamState<f32>>)> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::file(path, e))?;
    checkpoint_from_bytes(&bytes)
}
