//! Binary model checkpoint format.
//!
//! Layout (little-endian): magic "GNSSMDL1", u32 version, hyperparameter
//! block (u32 M, u32 n, u32 h, f64 R, u32 num_types, u32 flags), target
//! standardization statistics (2x f64 mean, 2x f64 std), then one blob per
//! parameter tensor in declared order, each prefixed with a u32 rank and u32
//! dimensions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{CoreError, Result};
use crate::model::{AccelStats, GnssHyper, GnssModel};
use crate::nn::{mlp_init, Activation, EmbeddingTable, MlpParams, MlpSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GNSSMDL1";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_LAYER_NORM: u32 = 1;
const FLAG_RESIDUAL: u32 = 2;

pub fn save_model(model: &GnssModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let h = &model.hyper;
    w.write_u32::<LittleEndian>(h.message_steps as u32)?;
    w.write_u32::<LittleEndian>(h.history as u32)?;
    w.write_u32::<LittleEndian>(h.latent as u32)?;
    w.write_f64::<LittleEndian>(h.radius)?;
    w.write_u32::<LittleEndian>(h.num_types as u32)?;
    let mut flags = 0u32;
    if h.layer_norm {
        flags |= FLAG_LAYER_NORM;
    }
    if h.residual {
        flags |= FLAG_RESIDUAL;
    }
    w.write_u32::<LittleEndian>(flags)?;
    for c in 0..2 {
        w.write_f64::<LittleEndian>(model.accel_stats.mean[c])?;
    }
    for c in 0..2 {
        w.write_f64::<LittleEndian>(model.accel_stats.std[c])?;
    }

    write_mlp(&mut w, &model.encoder_node)?;
    write_mlp(&mut w, &model.encoder_edge)?;
    for m in &model.message_mlps {
        write_mlp(&mut w, m)?;
    }
    for u in &model.update_mlps {
        write_mlp(&mut w, u)?;
    }
    write_mlp(&mut w, &model.decoder)?;
    write_blob_2d(&mut w, &model.embedding.weights)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GnssModel> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    load_model_bytes(&bytes)
}

pub fn load_model_bytes(bytes: &[u8]) -> Result<GnssModel> {
    let mut r = Cursor { bytes, offset: 0 };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Format {
            offset: r.offset,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let message_steps = r.read_u32("hyperparameters")? as usize;
    let history = r.read_u32("hyperparameters")? as usize;
    let latent = r.read_u32("hyperparameters")? as usize;
    let radius = r.read_f64("hyperparameters")?;
    let num_types = r.read_u32("hyperparameters")? as usize;
    let flags = r.read_u32("hyperparameters")?;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for m in mean.iter_mut() {
        *m = r.read_f64("standardization statistics")?;
    }
    for s in std.iter_mut() {
        *s = r.read_f64("standardization statistics")?;
    }

    let layer_norm = flags & FLAG_LAYER_NORM != 0;
    let residual = flags & FLAG_RESIDUAL != 0;

    let encoder_node = read_mlp(&mut r, Activation::Relu, layer_norm)?;
    let encoder_edge = read_mlp(&mut r, Activation::Relu, layer_norm)?;
    let mut message_mlps = Vec::with_capacity(message_steps);
    for _ in 0..message_steps {
        message_mlps.push(read_mlp(&mut r, Activation::Relu, layer_norm)?);
    }
    let mut update_mlps = Vec::with_capacity(message_steps);
    for _ in 0..message_steps {
        update_mlps.push(read_mlp(&mut r, Activation::Relu, layer_norm)?);
    }
    let decoder = read_mlp(&mut r, Activation::Relu, false)?;
    let embedding_weights = r.read_blob_2d("embedding")?;

    let space_dim = decoder.spec.output_dim;
    let node_input = encoder_node.spec.input_dim;
    let expected_node_input = space_dim * (history + 1) + crate::nn::EMBEDDING_DIM;
    if node_input != expected_node_input {
        return Err(CoreError::Format {
            offset: r.offset,
            message: format!(
                "node encoder input {node_input} inconsistent with d={space_dim}, n={history}"
            ),
        });
    }
    if embedding_weights.nrows() != num_types {
        return Err(CoreError::Format {
            offset: r.offset,
            message: format!(
                "embedding rows {} do not match num_types {num_types}",
                embedding_weights.nrows()
            ),
        });
    }
    let hyper = GnssHyper {
        space_dim,
        history,
        latent,
        message_steps,
        radius,
        num_types,
        layer_norm,
        residual,
    };
    Ok(GnssModel {
        hyper,
        encoder_node,
        encoder_edge,
        message_mlps,
        update_mlps,
        decoder,
        embedding: EmbeddingTable {
            weights: embedding_weights,
        },
        accel_stats: AccelStats { mean, std },
    })
}

fn write_mlp<W: Write>(w: &mut W, mlp: &MlpParams) -> Result<()> {
    for layer in &mlp.layers {
        write_blob_2d(w, &layer.weight)?;
        write_blob_1d(w, &layer.bias)?;
    }
    if let Some(norm) = &mlp.norm {
        write_blob_1d(w, &norm.scale)?;
        write_blob_1d(w, &norm.shift)?;
    }
    Ok(())
}

/// Every MLP in this architecture has two hidden layers; the blob shapes
/// carry the widths.
fn read_mlp(r: &mut Cursor<'_>, activation: Activation, norm: bool) -> Result<MlpParams> {
    let mut weights = Vec::with_capacity(3);
    let mut biases = Vec::with_capacity(3);
    for _ in 0..3 {
        weights.push(r.read_blob_2d("mlp weight")?);
        biases.push(r.read_blob_1d("mlp bias")?);
    }
    let spec = MlpSpec::new(
        weights[0].nrows(),
        vec![weights[0].ncols(), weights[1].ncols()],
        weights[2].ncols(),
        activation,
        norm,
    )?;
    let mut params = mlp_init(&spec, 0);
    for (k, (w, b)) in weights.into_iter().zip(biases).enumerate() {
        if params.layers[k].weight.raw_dim() != w.raw_dim() {
            return Err(CoreError::Format {
                offset: r.offset,
                message: format!("inconsistent layer {k} shape {:?}", w.shape()),
            });
        }
        params.layers[k].weight = w;
        params.layers[k].bias = b;
    }
    if norm {
        let scale = r.read_blob_1d("norm scale")?;
        let shift = r.read_blob_1d("norm shift")?;
        let n = params.norm.as_mut().unwrap();
        n.scale = scale;
        n.shift = shift;
    }
    Ok(params)
}

fn write_blob_2d<W: Write>(w: &mut W, a: &Array2<f64>) -> Result<()> {
    w.write_u32::<LittleEndian>(2)?;
    w.write_u32::<LittleEndian>(a.nrows() as u32)?;
    w.write_u32::<LittleEndian>(a.ncols() as u32)?;
    for &v in a.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn write_blob_1d<W: Write>(w: &mut W, a: &Array1<f64>) -> Result<()> {
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(a.len() as u32)?;
    for &v in a.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: u64,
}

impl<'a> Cursor<'a> {
    fn read_exact(&mut self, out: &mut [u8], section: &str) -> Result<()> {
        let end = self.offset as usize + out.len();
        if end > self.bytes.len() {
            return Err(CoreError::Format {
                offset: self.offset,
                message: format!("checkpoint truncated in {section}"),
            });
        }
        out.copy_from_slice(&self.bytes[self.offset as usize..end]);
        self.offset = end as u64;
        Ok(())
    }

    fn read_u32(&mut self, section: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, section)?;
        Ok((&b[..]).read_u32::<LittleEndian>().unwrap())
    }

    fn read_f64(&mut self, section: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, section)?;
        Ok((&b[..]).read_f64::<LittleEndian>().unwrap())
    }

    fn read_blob_2d(&mut self, section: &str) -> Result<Array2<f64>> {
        let rank = self.read_u32(section)?;
        if rank != 2 {
            return Err(CoreError::Format {
                offset: self.offset,
                message: format!("{section}: expected rank-2 blob, got rank {rank}"),
            });
        }
        let rows = self.read_u32(section)? as usize;
        let cols = self.read_u32(section)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.read_f64(section)?);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| CoreError::ShapeMismatch(e.to_string()))
    }

    fn read_blob_1d(&mut self, section: &str) -> Result<Array1<f64>> {
        let rank = self.read_u32(section)?;
        if rank != 1 {
            return Err(CoreError::Format {
                offset: self.offset,
                message: format!("{section}: expected rank-1 blob, got rank {rank}"),
            });
        }
        let len = self.read_u32(section)? as usize;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.read_f64(section)?);
        }
        Ok(Array1::from_vec(data))
    }
}
