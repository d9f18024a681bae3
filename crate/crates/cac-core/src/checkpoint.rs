//! Versioned binary checkpoints.
//!
//! Little-endian layout: magic `CACCKPT1`, u32 version, length-prefixed
//! canonical config text, u32 epoch, RNG state (32-byte seed, u128 word
//! position, u64 stream), u32 parameter count, then per-parameter records
//! of name length, name, rank, dims, and the f64 payload. Save → load →
//! save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CACCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable ChaCha state: seed, stream, and word position fully
/// determine the future output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    /// Canonical run-config echo; parsed back on load.
    pub config_text: String,
    pub epoch: usize,
    pub rng: RngState,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_named(self.params.clone())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&ckpt.version.to_le_bytes()).map_err(io_err)?;
    let config = ckpt.config_text.as_bytes();
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(config).map_err(io_err)?;
    w.write_all(&(ckpt.epoch as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&ckpt.rng.seed).map_err(io_err)?;
    w.write_all(&ckpt.rng.word_pos.to_le_bytes()).map_err(io_err)?;
    w.write_all(&ckpt.rng.stream.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in &ckpt.params {
        let name = name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes()).map_err(io_err)?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<u64> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(path, at, format!("truncated file while reading {what}"))
            } else {
                Error::io(path, e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(at)
    }

    fn u32(&mut self, path: &Path, what: &str) -> Result<(u32, u64)> {
        let mut buf = [0u8; 4];
        let at = self.bytes(&mut buf, path, what)?;
        Ok((u32::from_le_bytes(buf), at))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 8];
    let at = r.bytes(&mut magic, path, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, at, "bad magic, expected \"CACCKPT1\""));
    }
    let (version, at) = r.u32(path, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            at,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let (config_len, _) = r.u32(path, "config length")?;
    let mut config = vec![0u8; config_len as usize];
    let at = r.bytes(&mut config, path, "config text")?;
    let config_text = String::from_utf8(config)
        .map_err(|_| Error::format(path, at, "config text is not valid UTF-8"))?;
    let (epoch, _) = r.u32(path, "epoch")?;

    let mut seed = [0u8; 32];
    r.bytes(&mut seed, path, "rng seed")?;
    let mut word_pos = [0u8; 16];
    r.bytes(&mut word_pos, path, "rng word position")?;
    let mut stream = [0u8; 8];
    r.bytes(&mut stream, path, "rng stream")?;
    let rng = RngState {
        seed,
        word_pos: u128::from_le_bytes(word_pos),
        stream: u64::from_le_bytes(stream),
    };

    let (n_params, _) = r.u32(path, "parameter count")?;
    let mut params = Vec::with_capacity(n_params as usize);
    for _ in 0..n_params {
        let (name_len, _) = r.u32(path, "parameter name length")?;
        let mut name = vec![0u8; name_len as usize];
        let at = r.bytes(&mut name, path, "parameter name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format(path, at, "parameter name is not valid UTF-8"))?;
        let (rank, at) = r.u32(path, "parameter rank")?;
        if rank == 0 || rank > crate::tensor::MAX_RANK as u32 {
            return Err(Error::format(path, at, format!("invalid rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let (dim, _) = r.u32(path, "parameter dims")?;
            dims.push(dim as usize);
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.bytes(&mut buf, path, "parameter data")?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(dims, data)
            .map_err(|e| Error::format(path, at, e.to_string()))?;
        params.push((name, tensor));
    }

    Ok(Checkpoint {
        version,
        config_text,
        epoch: epoch as usize,
        rng,
        params,
    })
}
