//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `DYHATR01`, format version u32, then length-prefixed sections:
//! training config as JSON, the node registry (type names, edge type names,
//! node name + type id per node), every parameter tensor as
//! name/rows/cols/f64 data, and the final embedding matrix. Strings are
//! u64-length-prefixed UTF-8. Saving the same state twice produces identical
//! bytes because `ParamStore` preserves insertion order.

use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::TrainConfig;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 8] = *b"DYHATR01";
pub const VERSION: u32 = 1;

/// Upper bound on any length prefix; a corrupt file fails fast instead of
/// attempting a giant allocation.
const MAX_FIELD: u64 = 1 << 32;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub node_names: Vec<String>,
    pub node_type_of: Vec<usize>,
    pub node_type_names: Vec<String>,
    pub edge_type_names: Vec<String>,
    pub params: ParamStore,
    /// Final embeddings, one row per registry node.
    pub embeddings: Tensor,
}

impl Checkpoint {
    pub fn new(
        graph: &DynamicGraph,
        config: TrainConfig,
        params: ParamStore,
        embeddings: Tensor,
    ) -> Checkpoint {
        Checkpoint {
            config,
            node_names: (0..graph.num_nodes()).map(|v| graph.node_name(v).to_string()).collect(),
            node_type_of: (0..graph.num_nodes()).map(|v| graph.node_type(v)).collect(),
            node_type_names: graph.node_type_names().to_vec(),
            edge_type_names: graph.edge_type_names().to_vec(),
            params,
            embeddings,
        }
    }

    /// Errors unless `graph` carries exactly the registry this checkpoint
    /// was trained against.
    pub fn registry_matches(&self, graph: &DynamicGraph) -> Result<()> {
        let same = graph.num_nodes() == self.node_names.len()
            && (0..graph.num_nodes()).all(|v| {
                graph.node_name(v) == self.node_names[v]
                    && graph.node_type(v) == self.node_type_of[v]
            })
            && graph.node_type_names() == self.node_type_names.as_slice()
            && graph.edge_type_names() == self.edge_type_names.as_slice();
        if same {
            Ok(())
        } else {
            Err(Error::Checkpoint(
                "dataset node registry does not match the checkpoint's".into(),
            ))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
        write_bytes(w, config.as_bytes())?;

        write_u64(w, self.node_type_names.len() as u64)?;
        for s in &self.node_type_names {
            write_bytes(w, s.as_bytes())?;
        }
        write_u64(w, self.edge_type_names.len() as u64)?;
        for s in &self.edge_type_names {
            write_bytes(w, s.as_bytes())?;
        }
        write_u64(w, self.node_names.len() as u64)?;
        for (name, &ty) in self.node_names.iter().zip(&self.node_type_of) {
            write_bytes(w, name.as_bytes())?;
            write_u64(w, ty as u64)?;
        }

        write_u64(w, self.params.len() as u64)?;
        for (name, t) in self.params.iter() {
            write_bytes(w, name.as_bytes())?;
            write_tensor(w, t)?;
        }
        write_tensor(w, &self.embeddings)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version}, this build reads version {VERSION}"
            )));
        }
        let config: TrainConfig = serde_json::from_slice(&read_bytes(r)?)
            .map_err(|e| Error::Checkpoint(format!("config section: {e}")))?;

        let node_type_names = read_strings(r)?;
        let edge_type_names = read_strings(r)?;
        let num_nodes = read_len(r)?;
        let mut node_names = Vec::with_capacity(num_nodes);
        let mut node_type_of = Vec::with_capacity(num_nodes);
        for _ in 0..num_nodes {
            node_names.push(read_string(r)?);
            node_type_of.push(read_u64(r)? as usize);
        }

        let num_params = read_len(r)?;
        let mut params = ParamStore::new();
        for _ in 0..num_params {
            let name = read_string(r)?;
            params.insert(&name, read_tensor(r)?)?;
        }
        let embeddings = read_tensor(r)?;
        Ok(Checkpoint {
            config,
            node_names,
            node_type_of,
            node_type_names,
            edge_type_names,
            params,
            embeddings,
        })
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u64(w, t.rows() as u64)?;
    write_u64(w, t.cols() as u64)?;
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    let v = read_u64(r)?;
    if v > MAX_FIELD {
        return Err(Error::Checkpoint(format!("implausible length {v}; file corrupt")));
    }
    Ok(v as usize)
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_len(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(read_bytes(r)?)
        .map_err(|e| Error::Checkpoint(format!("invalid UTF-8 string: {e}")))
}

fn read_strings(r: &mut impl Read) -> Result<Vec<String>> {
    let n = read_len(r)?;
    (0..n).map(|_| read_string(r)).collect()
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rows = read_len(r)?;
    let cols = read_len(r)?;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| (n as u64) <= MAX_FIELD)
        .ok_or_else(|| Error::Checkpoint("implausible tensor shape; file corrupt".into()))?;
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(vec![rows, cols], data, true)
        .map_err(|e| Error::Checkpoint(format!("tensor section: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_params, ModelDims, RnnKind, TemporalVariant};
    use crate::synth::{generate, SyntheticSpec};

    fn fixture() -> (DynamicGraph, Checkpoint) {
        let spec = SyntheticSpec {
            nodes_per_type: vec![6, 6],
            num_edge_types: 2,
            communities: 2,
            p_intra: 0.5,
            p_inter: 0.1,
            drift: 0.0,
            snapshots: 2,
            seed: 3,
        };
        let graph = generate(&spec).unwrap().graph;
        let dims = ModelDims {
            feature_dim: 4,
            heads: 2,
            head_dim: 2,
            edge_hidden: 4,
            temporal_heads: 2,
            temporal_head_dim: 2,
        };
        let params = init_params(
            7,
            graph.num_nodes(),
            graph.num_edge_types(),
            &dims,
            RnnKind::Gru,
            TemporalVariant::Full,
        )
        .unwrap();
        let emb = Tensor::new(
            vec![graph.num_nodes(), 4],
            (0..graph.num_nodes() * 4).map(|i| i as f64 * 0.25 - 3.0).collect(),
            false,
        )
        .unwrap();
        let ckpt = Checkpoint::new(&graph, TrainConfig::default(), params, emb);
        (graph, ckpt)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (_, ckpt) = fixture();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.node_names, ckpt.node_names);
        assert_eq!(back.node_type_of, ckpt.node_type_of);
        assert_eq!(back.node_type_names, ckpt.node_type_names);
        assert_eq!(back.edge_type_names, ckpt.edge_type_names);
        assert_eq!(back.params.len(), ckpt.params.len());
        for ((na, ta), (nb, tb)) in ckpt.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(ta.data(), tb.data());
        }
        assert_eq!(back.embeddings.data(), ckpt.embeddings.data());
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let (_, ckpt) = fixture();
        let mut a = Vec::new();
        let mut b = Vec::new();
        ckpt.write_to(&mut a).unwrap();
        ckpt.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_is_a_checkpoint_error() {
        let (_, ckpt) = fixture();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf[0] = b'X';
        let err = Checkpoint::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let (_, ckpt) = fixture();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf[8..12].copy_from_slice(&99u32.to_le_bytes());
        let err = Checkpoint::read_from(&mut buf.as_slice()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("99") && msg.contains('1'), "{msg}");
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let (_, ckpt) = fixture();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn registry_check_accepts_source_and_rejects_others() {
        let (graph, ckpt) = fixture();
        ckpt.registry_matches(&graph).unwrap();
        let other = generate(&SyntheticSpec {
            nodes_per_type: vec![5, 5],
            num_edge_types: 2,
            communities: 2,
            p_intra: 0.5,
            p_inter: 0.1,
            drift: 0.0,
            snapshots: 2,
            seed: 3,
        })
        .unwrap()
        .graph;
        assert!(ckpt.registry_matches(&other).is_err());
    }

    #[test]
    fn save_and_load_through_a_file() {
        let (_, ckpt) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.node_names, ckpt.node_names);
        assert_eq!(back.embeddings.data(), ckpt.embeddings.data());
    }
}
