//! Checkpoint format: `MGMDCKPT` magic, a little-endian u32 header length,
//! a JSON header, the parameter and loss payload as little-endian f64, and
//! a trailing SHA-256 digest over every preceding byte. Loads verify the
//! digest before parsing anything else.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Mlp, MlpParams, MlpSpec};
use crate::numerics::Tensor;
use crate::objectives::Objective;

use super::{EpochLosses, Method, TrainConfig, TrainedModel};

const MAGIC: &[u8; 8] = b"MGMDCKPT";
const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    method: Method,
    k: usize,
    objective: Objective,
    gen_spec: MlpSpec,
    disc_spec: MlpSpec,
    n_generators: usize,
    epochs_recorded: usize,
    config: TrainConfig,
    partition_seed: u64,
    partitions: Vec<Vec<usize>>,
    data_digest: [u8; 32],
}

/// The exact bytes `save_checkpoint` writes. Identical models serialize to
/// identical bytes.
pub fn serialize_checkpoint(model: &TrainedModel) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        method: model.method,
        k: model.k(),
        objective: model.objective,
        gen_spec: model.generators[0].spec.clone(),
        disc_spec: model.discriminators[0].spec.clone(),
        n_generators: model.generators.len(),
        epochs_recorded: model.loss_history.len(),
        config: model.config.clone(),
        partition_seed: model.partitions.seed,
        partitions: model.partitions.parts.clone(),
        data_digest: model.data_digest,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encoding failed: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for net in model.generators.iter().chain(model.discriminators.iter()) {
        for t in &net.params.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for epoch in &model.loss_history {
        for v in epoch.d_ascent.iter().chain(epoch.g_value.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = serialize_checkpoint(model)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let min = MAGIC.len() + 4 + DIGEST_LEN;
    if bytes.len() < min {
        return Err(Error::Checkpoint(format!(
            "file is {} bytes, shorter than the {min}-byte minimum",
            bytes.len()
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(
            "integrity digest mismatch (truncated or corrupted file)".into(),
        ));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let header_len =
        u32::from_le_bytes(body[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 4;
    if header_start + header_len > body.len() {
        return Err(Error::Checkpoint(format!(
            "header length {header_len} overruns the file"
        )));
    }
    let header: Header = serde_json::from_slice(&body[header_start..header_start + header_len])
        .map_err(|e| Error::Checkpoint(format!("header decoding failed: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.partitions.len() != header.k {
        return Err(Error::Checkpoint(format!(
            "header lists {} partitions for k={}",
            header.partitions.len(),
            header.k
        )));
    }

    let mut reader = FloatReader::new(&body[header_start + header_len..]);
    let mut generators = Vec::with_capacity(header.n_generators);
    for _ in 0..header.n_generators {
        generators.push(read_net(&mut reader, &header.gen_spec)?);
    }
    let mut discriminators = Vec::with_capacity(header.k);
    for _ in 0..header.k {
        discriminators.push(read_net(&mut reader, &header.disc_spec)?);
    }
    let mut loss_history = Vec::with_capacity(header.epochs_recorded);
    for _ in 0..header.epochs_recorded {
        let d_ascent = reader.take(header.k)?;
        let g_value = reader.take(header.n_generators)?;
        loss_history.push(EpochLosses { d_ascent, g_value });
    }
    reader.finish()?;

    Ok(TrainedModel {
        method: header.method,
        generators,
        discriminators,
        objective: header.objective,
        partitions: crate::data::PartitionSet {
            k: header.k,
            parts: header.partitions,
            seed: header.partition_seed,
        },
        config: header.config,
        loss_history,
        data_digest: header.data_digest,
    })
}

fn read_net(reader: &mut FloatReader, spec: &MlpSpec) -> Result<Mlp> {
    let mut tensors = Vec::with_capacity(2 * spec.layers());
    for l in 0..spec.layers() {
        let (rows, cols) = (spec.widths[l], spec.widths[l + 1]);
        let w = reader.take(rows * cols)?;
        tensors.push(
            Tensor::from_vec(vec![rows, cols], w)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        let b = reader.take(cols)?;
        tensors.push(
            Tensor::from_vec(vec![cols], b).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
    }
    Ok(Mlp {
        spec: spec.clone(),
        params: MlpParams { tensors },
    })
}

struct FloatReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FloatReader<'a> {
    fn new(bytes: &'a [u8]) -> FloatReader<'a> {
        FloatReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n * 8;
        if self.pos + need > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "payload ends early: wanted {need} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += need;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} unread payload bytes after the last field",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
