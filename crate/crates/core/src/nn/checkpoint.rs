//! Binary checkpoint: magic, version, a `key=value` config echo, then named
//! parameter blocks as little-endian f32 with `rows, cols` prefixes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::model::{Model, ModelConfig, TaskConfig};
use super::tensor::Tensor;
use super::NnError;
use crate::taskgen::TaskSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SYMBRKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

/// The configuration echo stored in the header.
pub fn config_echo(model: &Model<f32>) -> String {
    let c = model.config();
    let mut s = String::new();
    let _ = writeln!(s, "seed={}", model.seed());
    let _ = writeln!(s, "model.hidden={}", c.hidden);
    let _ = writeln!(s, "model.layers={}", c.layers);
    let _ = writeln!(s, "model.edge_dim={}", c.edge_dim);
    let _ = writeln!(s, "model.heads={}", c.heads);
    let _ = writeln!(s, "model.dropout={}", c.dropout);
    let _ = writeln!(s, "model.layer_norm={}", c.layer_norm);
    let _ = writeln!(s, "model.aggregator={}", c.aggregator);
    let _ = writeln!(s, "tasks={}", model.tasks().len());
    for (k, t) in model.tasks().iter().enumerate() {
        let t = &t.cfg;
        let _ = writeln!(s, "task.{k}.key={}", t.key);
        let _ = writeln!(s, "task.{k}.name={}", t.spec.name);
        let _ = writeln!(s, "task.{k}.n={}", t.spec.n);
        let _ = writeln!(s, "task.{k}.vocab={}", t.spec.vocab);
        let _ = writeln!(s, "task.{k}.window={}", t.spec.window);
        let _ = writeln!(s, "task.{k}.mode={}", t.spec.mode.as_str());
        let _ = writeln!(s, "task.{k}.task_group={}", t.spec.group);
        let _ = writeln!(s, "task.{k}.group={}", t.group);
        let _ = writeln!(s, "task.{k}.token_embedder={}", t.token_embedder);
        let _ = writeln!(s, "task.{k}.node_orbits={}", t.node_orbits);
    }
    s
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let echo = config_echo(model);
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    let entries = &model.params().entries;
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.value.rows as u32).to_le_bytes());
        out.extend_from_slice(&(e.value.cols as u32).to_le_bytes());
        for x in &e.value.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<&'a str, NnError> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| err("non-UTF-8 text"))
    }
}

fn parse_echo(echo: &str) -> Result<(ModelConfig, Vec<TaskConfig>, u64), NnError> {
    let mut kv = BTreeMap::new();
    for (i, line) in echo.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("config echo line {}: expected key=value", i + 1)))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| err(format!("missing '{k}'")));
    fn num<X: std::str::FromStr>(k: &str, v: String) -> Result<X, NnError> {
        v.parse().map_err(|_| err(format!("bad value '{v}' for '{k}'")))
    }
    let cfg = ModelConfig {
        hidden: num("model.hidden", get("model.hidden")?)?,
        layers: num("model.layers", get("model.layers")?)?,
        edge_dim: num("model.edge_dim", get("model.edge_dim")?)?,
        heads: num("model.heads", get("model.heads")?)?,
        dropout: num("model.dropout", get("model.dropout")?)?,
        layer_norm: num("model.layer_norm", get("model.layer_norm")?)?,
        aggregator: get("model.aggregator")?.parse()?,
    };
    let seed = num("seed", get("seed")?)?;
    let count: usize = num("tasks", get("tasks")?)?;
    let mut tasks = Vec::with_capacity(count);
    for k in 0..count {
        let f = |s: &str| get(&format!("task.{k}.{s}"));
        let mut spec = TaskSpec::new(
            f("name")?.parse()?,
            num("n", f("n")?)?,
            num("vocab", f("vocab")?)?,
            f("mode")?.parse()?,
        )?;
        spec.window = num("window", f("window")?)?;
        spec.group = f("task_group")?.parse()?;
        spec.validate()?;
        tasks.push(TaskConfig {
            key: f("key")?,
            spec,
            group: f("group")?.parse()?,
            token_embedder: num("token_embedder", f("token_embedder")?)?,
            node_orbits: num("node_orbits", f("node_orbits")?)?,
        });
    }
    Ok((cfg, tasks, seed))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let (cfg, tasks, seed) = parse_echo(r.string()?)?;
    let mut model = Model::<f32>::new(cfg, tasks, seed)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(err(format!(
            "{count} parameter blocks, model expects {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name = r.string()?.to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| err(format!("unexpected parameter '{name}'")))?;
        let want = model.params().entries[id].value.shape();
        if want != (rows, cols) {
            return Err(err(format!("'{name}' is {rows}x{cols}, expected {want:?}")));
        }
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.params_mut().entries[id].value = Tensor::from_vec(rows, cols, data);
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, NnError> {
    decode_checkpoint(&std::fs::read(path)?)
}
