//! Checkpoint container.
//!
//! ```text
//! "DDCK"            magic
//! u32 LE            format version
//! u64 LE            header length in bytes
//! header            UTF-8 JSON: step, config echo, tensor names and shapes
//! u64 LE            FNV-1a hash of the payload
//! payload           every tensor as f64 LE, in header order
//! ```

use std::fs;
use std::path::Path;

use depthduet_tensor::{Adam, AdamConfig, Tensor};
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, NetworkKind};
use super::network::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DDCK";

/// Saved state of one Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn of(adam: &Adam) -> Self {
        Self {
            config: adam.config,
            step: adam.step_count(),
            first: adam.first_moments().to_vec(),
            second: adam.second_moments().to_vec(),
        }
    }

    pub fn into_adam(self) -> Adam {
        Adam::from_state(self.config, self.step, self.first, self.second)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Free-form echo of the configuration that produced the state.
    pub config: serde_json::Value,
    pub networks: Vec<(String, Network)>,
    pub optimizers: Vec<(String, OptimizerState)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&Network> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, o)| o)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    config: serde_json::Value,
    networks: Vec<NetworkHeader>,
    optimizers: Vec<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct NetworkHeader {
    name: String,
    kind: NetworkKind,
    config: NetworkConfig,
    params: Vec<(String, Vec<usize>)>,
    norm_channels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    name: String,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    shapes: Vec<Vec<usize>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put(payload: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes to bytes. Exposed for tests and in-memory round trips.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut networks = Vec::new();
    for (name, net) in &ckpt.networks {
        let (mean, var) = net.running_stats();
        for p in net.params() {
            put(&mut payload, p.data());
        }
        for m in mean.iter().chain(var) {
            put(&mut payload, m);
        }
        networks.push(NetworkHeader {
            name: name.clone(),
            kind: net.kind(),
            config: net.config().clone(),
            params: net
                .param_names()
                .iter()
                .zip(net.params())
                .map(|(n, p)| (n.clone(), p.shape().to_vec()))
                .collect(),
            norm_channels: mean.iter().map(Vec::len).collect(),
        });
    }
    let mut optimizers = Vec::new();
    for (name, opt) in &ckpt.optimizers {
        if opt.first.len() != opt.second.len() {
            return Err(Error::Inconsistent(format!("optimizer '{name}' has mismatched moment lists")));
        }
        for t in opt.first.iter().chain(&opt.second) {
            put(&mut payload, t.data());
        }
        optimizers.push(OptimizerHeader {
            name: name.clone(),
            learning_rate: opt.config.learning_rate,
            beta1: opt.config.beta1,
            beta2: opt.config.beta2,
            eps: opt.config.eps,
            step: opt.step,
            shapes: opt.first.iter().map(|t| t.shape().to_vec()).collect(),
        });
    }
    let header = serde_json::to_vec(&Header {
        step: ckpt.step,
        config: ckpt.config.clone(),
        networks,
        optimizers,
    })
    .map_err(|e| Error::Inconsistent(format!("cannot serialize checkpoint header: {e}")))?;

    let mut out = Vec::with_capacity(24 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt("tensor too large".into()))?;
        Ok(Tensor::new(shape.to_vec(), self.f64s(n)?))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Corrupt(format!("unreadable checkpoint header: {e}")))?;
    let hash = r.u64()?;
    if fnv1a(&bytes[r.pos..]) != hash {
        return Err(Error::Corrupt("checkpoint payload checksum mismatch".into()));
    }

    let mut networks = Vec::new();
    for nh in header.networks {
        let mut net = Network::build(nh.kind, nh.config, 0).map_err(|e| Error::Corrupt(e.to_string()))?;
        let expected: Vec<(String, Vec<usize>)> = net
            .param_names()
            .iter()
            .zip(net.params())
            .map(|(n, p)| (n.clone(), p.shape().to_vec()))
            .collect();
        if expected != nh.params {
            return Err(Error::Corrupt(format!("network '{}' layout does not match its config", nh.name)));
        }
        let params = nh.params.iter().map(|(_, s)| r.tensor(s)).collect::<Result<Vec<_>>>()?;
        let mean = nh.norm_channels.iter().map(|&c| r.f64s(c)).collect::<Result<Vec<_>>>()?;
        let var = nh.norm_channels.iter().map(|&c| r.f64s(c)).collect::<Result<Vec<_>>>()?;
        net.load_state(params, mean, var)?;
        networks.push((nh.name, net));
    }
    let mut optimizers = Vec::new();
    for oh in header.optimizers {
        let first = oh.shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
        let second = oh.shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
        let config = AdamConfig {
            learning_rate: oh.learning_rate,
            beta1: oh.beta1,
            beta2: oh.beta2,
            eps: oh.eps,
        };
        optimizers.push((
            oh.name,
            OptimizerState {
                config,
                step: oh.step,
                first,
                second,
            },
        ));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint {
        step: header.step,
        config: header.config,
        networks,
        optimizers,
    })
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written checkpoint under the final name.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dense_generator, build_discriminator, build_sparse_generator, Mode};
    use depthduet_tensor::Graph;

    fn sample_checkpoint() -> Checkpoint {
        let sg_cfg = NetworkConfig::sparse_generator().scaled(4, 2, 16, 16);
        let mut sg = build_sparse_generator(&sg_cfg, 1).unwrap();
        let dg = build_dense_generator(&NetworkConfig::dense_generator().scaled(4, 2, 16, 16), 2).unwrap();
        let d = build_discriminator(&NetworkConfig::discriminator().scaled(4, 2, 16, 16), 3).unwrap();
        // non-trivial running stats and optimizer moments
        let mut g = Graph::new();
        let x = g.input(Tensor::full([2, 3, 16, 16], 0.3));
        let pass = sg.forward(&mut g, x, Mode::Train).unwrap();
        sg.update_running_stats(&pass.stats);
        let mut adam = Adam::new(AdamConfig::default(), sg.params());
        let grads: Vec<Option<Tensor>> = sg.params().iter().map(|p| Some(p.map(|v| v * 0.5 + 0.1))).collect();
        let mut params = sg.params().to_vec();
        adam.step(&mut params, &grads);
        Checkpoint {
            step: 7,
            config: serde_json::json!({"steps": 7, "note": "test"}),
            networks: vec![("sg".into(), sg), ("dg".into(), dg), ("d".into(), d)],
            optimizers: vec![("sg".into(), OptimizerState::of(&adam))],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let x = Tensor::full([1, 3, 16, 16], 0.7);
        let before = ckpt.network("sg").unwrap().predict(&x).unwrap();
        let after = back.network("sg").unwrap().predict(&x).unwrap();
        assert_eq!(before.data(), after.data());
        let adam = back.optimizer("sg").unwrap().clone().into_adam();
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn wrong_version_is_explicit() {
        let mut bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        match decode_checkpoint(&bytes) {
            Err(Error::Version { found, expected }) => {
                assert_eq!((found, expected), (99, CHECKPOINT_VERSION));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_detected() {
        let bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Corrupt(_))));
        assert!(matches!(decode_checkpoint(b"PNG\0garbage"), Err(Error::Corrupt(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::Corrupt(_))));
    }
}
