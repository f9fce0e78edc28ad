//! Versioned little-endian checkpoint: magic `ATTM`, version, config block,
//! step, then parameters and the two Adam moment vectors as f64.

use std::io::{Read, Write};

use super::{CaptionerError, Layout, ModelConfig, ModelState, Variant};

const MAGIC: &[u8; 4] = b"ATTM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "config field exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint<W: Write>(mut w: W, state: &ModelState) -> Result<(), CaptionerError> {
    let c = &state.config;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [
        c.k,
        c.d_enc,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
        c.vocab_size,
        c.max_seq_len,
    ] {
        put_u32(&mut w, v)?;
    }
    w.write_all(&[c.variant.code()])?;
    w.write_all(&c.dropout.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&state.step.to_le_bytes())?;
    w.write_all(&(state.params.len() as u64).to_le_bytes())?;
    for tensor in [&state.params, &state.adam_m, &state.adam_v] {
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CaptionerError> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize, CaptionerError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64, CaptionerError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, CaptionerError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CaptionerError> {
        let mut raw = vec![0u8; n * 8];
        self.0.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelState, CaptionerError> {
    let mut r = Reader(r);
    if &r.bytes::<4>()? != MAGIC {
        return Err(CaptionerError::BadCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(CaptionerError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    let [variant] = r.bytes::<1>()?;
    let variant = Variant::from_code(variant)
        .ok_or_else(|| CaptionerError::BadCheckpoint(format!("unknown variant code {variant}")))?;
    let config = ModelConfig {
        k: dims[0],
        d_enc: dims[1],
        d_model: dims[2],
        n_layers: dims[3],
        n_heads: dims[4],
        d_ff: dims[5],
        vocab_size: dims[6],
        max_seq_len: dims[7],
        variant,
        dropout: r.f64()?,
        seed: r.u64()?,
    };
    config.validate()?;
    let step = r.u64()?;
    let n = r.u64()? as usize;
    let layout = Layout::new(&config);
    if n != layout.total {
        return Err(CaptionerError::BadCheckpoint(format!(
            "{n} parameters stored, config implies {}",
            layout.total
        )));
    }
    Ok(ModelState {
        params: r.f64s(n)?,
        adam_m: r.f64s(n)?,
        adam_v: r.f64s(n)?,
        config,
        layout,
        step,
    })
}
