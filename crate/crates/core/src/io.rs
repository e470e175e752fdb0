//! Binary artifacts: a one-line JSON header followed by little-endian `f32`s.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Region;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Mlp, Model};
use crate::surrogate::Surrogate;

#[derive(Serialize)]
struct EnvelopeOut<'a, H> {
    format: &'a str,
    floats: usize,
    #[serde(flatten)]
    header: &'a H,
}

#[derive(Deserialize)]
struct EnvelopeIn<H> {
    format: String,
    floats: usize,
    #[serde(flatten)]
    header: H,
}

pub fn encode_container<H: Serialize>(format: &str, header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&EnvelopeOut { format, floats: payload.len(), header })?;
    out.push(b'\n');
    out.reserve(payload.len() * 4);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<H: DeserializeOwned>(bytes: &[u8], format: &str, origin: &Path) -> Result<(H, Vec<f32>)> {
    let schema = |reason: String| Error::Schema { path: origin.to_path_buf(), reason };
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| schema("missing header line".into()))?;
    let env: EnvelopeIn<H> =
        serde_json::from_slice(&bytes[..split]).map_err(|e| schema(format!("bad header: {e}")))?;
    if env.format != format {
        return Err(schema(format!("expected format {format:?}, found {:?}", env.format)));
    }
    let body = &bytes[split + 1..];
    if body.len() != env.floats * 4 {
        return Err(schema(format!("header declares {} floats, payload holds {} bytes", env.floats, body.len())));
    }
    let payload = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((env.header, payload))
}

pub fn write_container<H: Serialize>(path: &Path, format: &str, header: &H, payload: &[f32]) -> Result<()> {
    let bytes = encode_container(format, header, payload)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container<H: DeserializeOwned>(path: &Path, format: &str) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, format, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Schema { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn to_f32(t: &Tensor) -> impl Iterator<Item = f32> + '_ {
    t.data().iter().map(|&v| v as f32)
}

fn rows_from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Tensor> {
    Tensor::matrix(rows, cols, data.iter().map(|&v| v as f64).collect())
}

pub const CHECKPOINT_FORMAT: &str = "srl-checkpoint/1";

/// A trained model plus the target standardization it predicts in.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub epoch: usize,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    encoder_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    epoch: usize,
    target_mean: f64,
    target_std: f64,
}

impl Checkpoint {
    /// Predictions on the original target scale.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.cols() != self.model.encoder.in_dim() {
            return Err(Error::shape(format!(
                "inputs have {} columns, checkpoint expects {}",
                x.cols(),
                self.model.encoder.in_dim()
            )));
        }
        Ok(self.model.predict(x)?.into_iter().map(|p| p * self.target_std + self.target_mean).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            encoder_dims: self.model.encoder.dims(),
            activation: self.model.encoder.activation,
            seed: self.seed,
            epoch: self.epoch,
            target_mean: self.target_mean,
            target_std: self.target_std,
        };
        let payload: Vec<f32> = self.model.params().into_iter().flat_map(to_f32).collect();
        encode_container(CHECKPOINT_FORMAT, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (h, payload): (CheckpointHeader, _) = decode_container(bytes, CHECKPOINT_FORMAT, origin)?;
        let schema = |reason: String| Error::Schema { path: origin.to_path_buf(), reason };
        let rep = *h.encoder_dims.last().ok_or_else(|| schema("empty encoder dims".into()))?;
        let mut offset = 0;
        let mut take = |dims: &[usize]| -> Result<Vec<Layer>> {
            dims.windows(2)
                .map(|w| {
                    let (i, o) = (w[0], w[1]);
                    let need = i * o + o;
                    let chunk = payload
                        .get(offset..offset + need)
                        .ok_or_else(|| schema(format!("payload too short for a {i}x{o} layer")))?;
                    offset += need;
                    Ok(Layer { weight: rows_from_f32(i, o, &chunk[..i * o])?, bias: rows_from_f32(1, o, &chunk[i * o..])? })
                })
                .collect()
        };
        if h.encoder_dims.len() < 2 {
            return Err(schema(format!("encoder dims {:?} describe no layer", h.encoder_dims)));
        }
        let encoder = Mlp { layers: take(&h.encoder_dims)?, activation: h.activation };
        let head = Mlp { layers: take(&[rep, 1])?, activation: h.activation };
        if offset != payload.len() {
            return Err(schema(format!("{} trailing floats after the last tensor", payload.len() - offset)));
        }
        Ok(Checkpoint {
            model: Model { encoder, head },
            seed: h.seed,
            epoch: h.epoch,
            target_mean: h.target_mean,
            target_std: h.target_std,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
    }
}

pub const SURROGATE_FORMAT: &str = "srl-surrogate/1";
pub const EMBEDDINGS_FORMAT: &str = "srl-embeddings/1";

#[derive(Serialize, Deserialize)]
struct SurrogateHeader {
    bins: Vec<f64>,
    k: usize,
    dim: usize,
    epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regions: Option<Vec<Region>>,
}

/// A surrogate with optional shot labels per bin, as consumed by `probe`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateDump {
    pub surrogate: Surrogate,
    pub regions: Option<Vec<Region>>,
}

impl SurrogateDump {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = &self.surrogate;
        let header =
            SurrogateHeader { bins: s.bins.clone(), k: s.k(), dim: s.dim(), epoch: s.epoch, regions: self.regions.clone() };
        write_container(path, SURROGATE_FORMAT, &header, &to_f32(&s.centroids).collect::<Vec<_>>())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (SurrogateHeader, _) = read_container(path, SURROGATE_FORMAT)?;
        let schema = |reason: String| Error::Schema { path: path.to_path_buf(), reason };
        if h.bins.len() != h.k || payload.len() != h.k * h.dim {
            return Err(schema(format!("{} bins, k={}, dim={}, {} floats", h.bins.len(), h.k, h.dim, payload.len())));
        }
        if h.regions.as_ref().is_some_and(|r| r.len() != h.k) {
            return Err(schema("region list length differs from k".into()));
        }
        let centroids = renormalize(rows_from_f32(h.k, h.dim, &payload)?);
        let surrogate = Surrogate::new(h.bins, centroids, h.epoch).map_err(|e| schema(e.to_string()))?;
        Ok(SurrogateDump { surrogate, regions: h.regions })
    }
}

/// Rounding to `f32` moves norms by ~1e-8; restore them exactly.
fn renormalize(mut t: Tensor) -> Tensor {
    let cols = t.cols();
    for row in t.data_mut().chunks_mut(cols) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    t
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsHeader {
    rows: usize,
    dim: usize,
    bins: Vec<usize>,
    bin_values: Vec<f64>,
    regions: Vec<Region>,
}

/// Unit-norm representations of one split with their bin ids and shot regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub z: Tensor,
    /// Global bin id per row.
    pub bins: Vec<usize>,
    /// Label value of each row's bin.
    pub bin_values: Vec<f64>,
    pub regions: Vec<Region>,
}

impl Embeddings {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = EmbeddingsHeader {
            rows: self.z.rows(),
            dim: self.z.cols(),
            bins: self.bins.clone(),
            bin_values: self.bin_values.clone(),
            regions: self.regions.clone(),
        };
        write_container(path, EMBEDDINGS_FORMAT, &header, &to_f32(&self.z).collect::<Vec<_>>())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (EmbeddingsHeader, _) = read_container(path, EMBEDDINGS_FORMAT)?;
        let n = h.rows;
        if payload.len() != n * h.dim || h.bins.len() != n || h.bin_values.len() != n || h.regions.len() != n {
            return Err(Error::Schema { path: path.to_path_buf(), reason: format!("inconsistent lengths for {n} rows") });
        }
        Ok(Embeddings { z: rows_from_f32(n, h.dim, &payload)?, bins: h.bins, bin_values: h.bin_values, regions: h.regions })
    }

    /// Normalized mean embedding per bin, bins ascending, with each bin's
    /// value and region. The `surrogate` epoch is 0.
    pub fn centroids(&self) -> Result<(Surrogate, Vec<Region>)> {
        let mut ids: Vec<usize> = self.bins.clone();
        ids.sort_unstable();
        ids.dedup();
        let d = self.z.cols();
        let mut sums = vec![0.0; ids.len() * d];
        let mut values = vec![0.0; ids.len()];
        let mut regions = vec![Region::Few; ids.len()];
        for (r, &b) in self.bins.iter().enumerate() {
            let k = ids.binary_search(&b).expect("id collected above");
            values[k] = self.bin_values[r];
            regions[k] = self.regions[r];
            for (s, v) in sums[k * d..(k + 1) * d].iter_mut().zip(self.z.row(r)) {
                *s += v;
            }
        }
        let c = renormalize(Tensor::matrix(ids.len(), d, sums)?);
        Ok((Surrogate::new(values, c, 0)?, regions))
    }
}

/// Resolves `path` against `base` unless it is absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct H {
        name: String,
    }

    #[test]
    fn container_roundtrip_and_validation() {
        let h = H { name: "x".into() };
        let bytes = encode_container("t/1", &h, &[1.0, -2.5]).unwrap();
        let (h2, p): (H, _) = decode_container(&bytes, "t/1", Path::new("mem")).unwrap();
        assert_eq!((h2, p), (h, vec![1.0, -2.5]));
        assert!(matches!(decode_container::<H>(&bytes, "t/2", Path::new("m")), Err(Error::Schema { .. })));
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_container::<H>(short, "t/1", Path::new("m")), Err(Error::Schema { .. })));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = Model::new(&[3, 4, 2], Activation::Tanh, 5).unwrap();
        let ck = Checkpoint { model, seed: 5, epoch: 7, target_mean: 1.5, target_std: 2.0 };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap(), Path::new("m")).unwrap();
        assert_eq!(back.model.encoder.dims(), vec![3, 4, 2]);
        assert_eq!((back.seed, back.epoch, back.target_mean), (5, 7, 1.5));
        for (a, b) in ck.model.params().iter().zip(back.model.params()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        let bytes = back.to_bytes().unwrap();
        assert_eq!(bytes, Checkpoint::from_bytes(&bytes, Path::new("m")).unwrap().to_bytes().unwrap());
    }
}
