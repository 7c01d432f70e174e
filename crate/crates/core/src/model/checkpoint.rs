//! Binary parameter container.
//!
//! Layout (little-endian): magic `DNPP`, format version, the sizes
//! `M N D K d1 d2 H` as u32, the variant / attention / flag bytes, both
//! activations, the init seed, then every array in declaration order as
//! `name_len:u16 name rows:u32 cols:u32 data:[f32]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::compute::{Activation, ParameterSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{AttentionMode, Dims, GammaInput, Model, ModelConfig, Variant};

const MAGIC: &[u8; 4] = b"DNPP";
const VERSION: u32 = 1;

/// Everything stored in a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub dims: Dims,
    pub seed: u64,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::new(&self.config, self.dims)
    }
}

fn variant_code(v: Variant) -> u8 {
    match v {
        Variant::DiffNetPP => 0,
        Variant::DiffNet => 1,
        Variant::Bpr => 2,
    }
}

fn mode_code(m: AttentionMode) -> u8 {
    match m {
        AttentionMode::Avg => 0,
        AttentionMode::Att => 1,
    }
}

fn bad(what: &str, code: u8) -> Error {
    Error::Checkpoint(format!("unknown {what} code {code}"))
}

fn write_activation<W: Write>(w: &mut W, act: Activation) -> std::io::Result<()> {
    match act {
        Activation::Identity => {
            w.write_u8(0)?;
            w.write_f64::<LE>(0.0)
        }
        Activation::LeakyRelu { slope } => {
            w.write_u8(1)?;
            w.write_f64::<LE>(slope)
        }
    }
}

fn read_activation<R: Read>(r: &mut R) -> Result<Activation> {
    let code = r.read_u8().map_err(truncated)?;
    let slope = r.read_f64::<LE>().map_err(truncated)?;
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::LeakyRelu { slope }),
        c => Err(bad("activation", c)),
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable checkpoint: {e}"))
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit the container")))
}

/// Serializes `params` at 32-bit precision.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model, params: &ParameterSet, seed: u64) -> Result<()> {
    model.layout().check(params)?;
    let cfg = model.config();
    let dims = model.dims();
    let io = |e: std::io::Error| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LE>(VERSION).map_err(io)?;
    for (v, what) in [
        (dims.users, "user count"),
        (dims.items, "item count"),
        (cfg.dim, "dimension"),
        (cfg.depth, "depth"),
        (dims.user_features, "user feature width"),
        (dims.item_features, "item feature width"),
        (cfg.hidden_width(), "hidden width"),
    ] {
        w.write_u32::<LE>(u32_of(v, what)?).map_err(io)?;
    }
    let flags = [
        variant_code(cfg.variant),
        mode_code(cfg.node_attention),
        mode_code(cfg.graph_attention),
        u8::from(cfg.share_attention),
        u8::from(cfg.gamma_input == GammaInput::Previous),
        u8::from(cfg.use_user_features),
        u8::from(cfg.use_item_features),
    ];
    w.write_all(&flags).map_err(io)?;
    write_activation(w, cfg.mlp_activation).map_err(io)?;
    write_activation(w, cfg.fusion_activation).map_err(io)?;
    w.write_u64::<LE>(seed).map_err(io)?;
    w.write_u32::<LE>(u32_of(params.len(), "array count")?).map_err(io)?;
    for (_, name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("array name too long: {name}")))?;
        w.write_u16::<LE>(len).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_u32::<LE>(u32_of(t.rows(), "rows")?).map_err(io)?;
        w.write_u32::<LE>(u32_of(t.cols(), "cols")?).map_err(io)?;
        for &x in t.as_slice() {
            w.write_f32::<LE>(x as f32).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut sizes = [0usize; 7];
    for s in sizes.iter_mut() {
        *s = r.read_u32::<LE>().map_err(truncated)? as usize;
    }
    let [users, items, dim, depth, d1, d2, hidden] = sizes;
    let mut flags = [0u8; 7];
    r.read_exact(&mut flags).map_err(truncated)?;
    let variant = match flags[0] {
        0 => Variant::DiffNetPP,
        1 => Variant::DiffNet,
        2 => Variant::Bpr,
        c => return Err(bad("variant", c)),
    };
    let mode = |c: u8| match c {
        0 => Ok(AttentionMode::Avg),
        1 => Ok(AttentionMode::Att),
        c => Err(bad("attention", c)),
    };
    let config = ModelConfig {
        dim,
        depth,
        hidden: Some(hidden),
        use_user_features: flags[5] != 0,
        use_item_features: flags[6] != 0,
        node_attention: mode(flags[1])?,
        graph_attention: mode(flags[2])?,
        variant,
        share_attention: flags[3] != 0,
        gamma_input: if flags[4] != 0 {
            GammaInput::Previous
        } else {
            GammaInput::Current
        },
        mlp_activation: read_activation(r)?,
        fusion_activation: read_activation(r)?,
    };
    let seed = r.read_u64::<LE>().map_err(truncated)?;
    let count = r.read_u32::<LE>().map_err(truncated)?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rows = r.read_u32::<LE>().map_err(truncated)? as usize;
        let cols = r.read_u32::<LE>().map_err(truncated)? as usize;
        let mut data = vec![0f32; rows * cols];
        r.read_f32_into::<LE>(&mut data).map_err(truncated)?;
        let t = Tensor::from_vec(rows, cols, data.into_iter().map(f64::from).collect())?;
        params.push(name, t);
    }
    let dims = Dims {
        users,
        items,
        user_features: d1,
        item_features: d2,
    };
    let checkpoint = Checkpoint {
        config,
        dims,
        seed,
        params,
    };
    checkpoint.model()?.layout().check(&checkpoint.params)?;
    Ok(checkpoint)
}

pub fn save_checkpoint(path: &Path, model: &Model, params: &ParameterSet, seed: u64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model, params, seed)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
