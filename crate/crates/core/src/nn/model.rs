use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Graph, Tape, Var};
use super::tensor::{Float, Tensor};
use super::NnError;
use crate::groupcatalog::GroupExpr;
use crate::orbitclosure::{edge_orbits, node_orbits, EdgeOrbitMatrix, NodeOrbitVector};
use crate::taskgen::{LabelMode, Record, TaskName, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Edge-conditioned attention (GATv2-style scoring).
    Attention,
    /// Mean of a one-layer message MLP.
    MeanMlp,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Attention => "attention",
            Aggregator::MeanMlp => "mean_mlp",
        })
    }
}

impl FromStr for Aggregator {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "attention" => Ok(Aggregator::Attention),
            "mean_mlp" | "meanMLP" | "mean" => Ok(Aggregator::MeanMlp),
            o => Err(NnError::Config(format!(
                "aggregator must be attention or mean_mlp, got '{o}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub aggregator: Aggregator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            layers: 4,
            edge_dim: 128,
            heads: 2,
            dropout: 0.0,
            layer_norm: true,
            aggregator: Aggregator::Attention,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.hidden == 0 || self.edge_dim == 0 {
            return bad("hidden and edge_dim must be positive".into());
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.aggregator == Aggregator::Attention
            && (self.heads == 0 || self.hidden % self.heads != 0)
        {
            return bad(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// One task attached to the shared backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    /// Unique name; parameter names are derived from it.
    pub key: String,
    pub spec: TaskSpec,
    /// Group whose edge orbits key this task's edge embeddings.
    pub group: GroupExpr,
    pub token_embedder: bool,
    pub node_orbits: bool,
}

impl TaskConfig {
    pub fn new(spec: TaskSpec, group: GroupExpr) -> Self {
        TaskConfig {
            key: spec.name.to_string(),
            spec,
            group,
            token_embedder: true,
            node_orbits: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Task,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: ParamGroup,
}

/// Named parameter tables in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.entries[i].value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data.len()).sum()
    }

    fn insert(&mut self, name: String, value: Tensor<T>, group: ParamGroup) -> usize {
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, group });
        id
    }
}

enum Init {
    Normal(f64),
    Uniform(f64),
    Const(f64),
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Each table gets its own generator keyed by its name, so adding a task
/// never shifts the initial values of anything else.
fn init_tensor<T: Float>(seed: u64, name: &str, rows: usize, cols: usize, init: Init) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    let data = match init {
        Init::Const(v) => vec![T::lit(v); rows * cols],
        Init::Uniform(b) => (0..rows * cols)
            .map(|_| T::lit(rng.random_range(-b..=b)))
            .collect(),
        Init::Normal(s) => {
            let d = Normal::new(0.0, s).expect("positive std");
            (0..rows * cols).map(|_| T::lit(d.sample(&mut rng))).collect()
        }
    };
    Tensor::from_vec(rows, cols, data)
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Per-task state: colorings plus the ids of the task's own tables.
#[derive(Debug, Clone)]
pub struct TaskSlot {
    pub cfg: TaskConfig,
    pub edges: EdgeOrbitMatrix,
    pub nodes: Option<NodeOrbitVector>,
    graph: Arc<Graph>,
    token: Option<usize>,
    edge: usize,
    node: Option<usize>,
    head: (usize, usize),
}

impl TaskSlot {
    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// Mean absolute error divided by `scale`.
    L1 { scale: f64 },
    Bce,
}

impl LossKind {
    /// Two-class log loss for per-position labels, logistic loss for the
    /// permutation sign, L1 for every other invariant target.
    pub fn default_for(spec: &TaskSpec) -> LossKind {
        match (spec.mode, spec.name) {
            (LabelMode::EquivariantBinary, _) => LossKind::CrossEntropy,
            (LabelMode::InvariantScalar, TaskName::SignOfPermutation) => LossKind::Bce,
            _ => LossKind::L1 { scale: 1.0 },
        }
    }
}

struct LayerIds {
    wl: usize,
    wr: usize,
    we: usize,
    att: Option<usize>,
    bias: usize,
    ln: Option<(usize, usize)>,
}

/// Shared message-passing backbone with per-task token, node-orbit and edge
/// embedders.
#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: ModelConfig,
    seed: u64,
    params: ParamStore<T>,
    tasks: Vec<TaskSlot>,
}

/// Activation after aggregation.
const UPDATE_SLOPE: f64 = 0.2;

impl<T: Float> Model<T> {
    pub fn new(cfg: ModelConfig, tasks: Vec<TaskConfig>, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut m = Model {
            cfg,
            seed,
            params: ParamStore {
                entries: Vec::new(),
                index: BTreeMap::new(),
            },
            tasks: Vec::new(),
        };
        m.build_backbone();
        for t in tasks {
            m.add_task(t)?;
        }
        Ok(m)
    }

    fn build_backbone(&mut self) {
        let (h, e) = (self.cfg.hidden, self.cfg.edge_dim);
        let seed = self.seed;
        let mut add = |name: String, r: usize, c: usize, init: Init| {
            let t = init_tensor(seed, &name, r, c, init);
            self.params.insert(name, t, ParamGroup::Backbone);
        };
        for l in 0..self.cfg.layers {
            add(format!("layer{l}.wl"), h, h, glorot(h, h));
            add(format!("layer{l}.wr"), h, h, glorot(h, h));
            add(format!("layer{l}.we"), e, h, glorot(e, h));
            if self.cfg.aggregator == Aggregator::Attention {
                let d = h / self.cfg.heads;
                add(format!("layer{l}.att"), 1, h, glorot(d, 1));
            }
            add(format!("layer{l}.bias"), 1, h, Init::Const(0.0));
            if self.cfg.layer_norm {
                add(format!("layer{l}.ln_gain"), 1, h, Init::Const(1.0));
                add(format!("layer{l}.ln_shift"), 1, h, Init::Const(0.0));
            }
        }
    }

    /// Attach a task with freshly initialized embedders. Tasks without a
    /// token embedder read tokens through the shared `lift` table, created
    /// on first use and sized to that task's vocabulary.
    pub fn add_task(&mut self, cfg: TaskConfig) -> Result<usize, NnError> {
        cfg.spec.validate()?;
        if self.tasks.iter().any(|t| t.cfg.key == cfg.key) {
            return Err(NnError::Config(format!("duplicate task key '{}'", cfg.key)));
        }
        if cfg.group.degree() != cfg.spec.n {
            return Err(NnError::Config(format!(
                "group {} has degree {} but the task has n = {}",
                cfg.group,
                cfg.group.degree(),
                cfg.spec.n
            )));
        }
        let gens = cfg.group.to_generators()?;
        let edges = edge_orbits(&gens)?;
        let nodes = cfg.node_orbits.then(|| node_orbits(&gens));
        let (h, e, seed) = (self.cfg.hidden, self.cfg.edge_dim, self.seed);
        let key = cfg.key.clone();
        let token = if cfg.token_embedder {
            let name = format!("task.{key}.token");
            let t = init_tensor(seed, &name, cfg.spec.vocab, h, Init::Normal(1.0));
            Some(self.params.insert(name, t, ParamGroup::Task))
        } else {
            match self.params.id("lift") {
                Some(id) if self.params.entries[id].value.rows < cfg.spec.vocab => {
                    return Err(NnError::Config(format!(
                        "shared lift covers {} tokens, task '{key}' needs {}",
                        self.params.entries[id].value.rows, cfg.spec.vocab
                    )))
                }
                Some(_) => {}
                None => {
                    let t = init_tensor(seed, "lift", cfg.spec.vocab, h, Init::Normal(1.0));
                    self.params.insert("lift".into(), t, ParamGroup::Backbone);
                }
            }
            None
        };
        let name = format!("task.{key}.edge");
        let t = init_tensor(seed, &name, edges.num_orbits().max(1), e, Init::Normal(1.0));
        let edge = self.params.insert(name, t, ParamGroup::Task);
        let node = nodes.as_ref().map(|nv| {
            let name = format!("task.{key}.node");
            let t = init_tensor(seed, &name, nv.num_orbits(), h, Init::Normal(1.0));
            self.params.insert(name, t, ParamGroup::Task)
        });
        let outs = match cfg.spec.mode {
            LabelMode::EquivariantBinary => 2,
            LabelMode::InvariantScalar => 1,
        };
        let mut head = |part: &str, r: usize, init: Init| {
            let name = format!("task.{key}.head.{part}");
            let t = init_tensor(seed, &name, r, outs, init);
            self.params.insert(name, t, ParamGroup::Task)
        };
        let head = (head("w", h, glorot(h, outs)), head("b", 1, Init::Const(0.0)));
        let graph = Arc::new(Graph {
            n: edges.n(),
            colors: edges.colors().to_vec(),
            sentinel: edges.sentinel(),
        });
        self.tasks.push(TaskSlot {
            cfg,
            edges,
            nodes,
            graph,
            token,
            edge,
            node,
            head,
        });
        Ok(self.tasks.len() - 1)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn tasks(&self) -> &[TaskSlot] {
        &self.tasks
    }

    pub fn task(&self, idx: usize) -> &TaskSlot {
        &self.tasks[idx]
    }

    pub fn task_index(&self, key: &str) -> Result<usize, NnError> {
        self.tasks
            .iter()
            .position(|t| t.cfg.key == key)
            .ok_or_else(|| NnError::UnknownTask(key.to_string()))
    }

    /// The learned edge table of a task: one row per orbit color.
    pub fn edge_table(&self, task: usize) -> &Tensor<T> {
        &self.params.entries[self.tasks[task].edge].value
    }

    /// Same model in another precision.
    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            seed: self.seed,
            params: ParamStore {
                entries: self
                    .params
                    .entries
                    .iter()
                    .map(|e| ParamEntry {
                        name: e.name.clone(),
                        value: e.value.cast(),
                        group: e.group,
                    })
                    .collect(),
                index: self.params.index.clone(),
            },
            tasks: self.tasks.clone(),
        }
    }

    fn p(&self, tape: &mut Tape<T>, id: usize) -> Var {
        tape.param(id, &self.params.entries[id].value)
    }

    fn layer_ids(&self, l: usize) -> LayerIds {
        let id = |s: &str| self.params.id(&format!("layer{l}.{s}")).expect("layer param");
        LayerIds {
            wl: id("wl"),
            wr: id("wr"),
            we: id("we"),
            att: (self.cfg.aggregator == Aggregator::Attention).then(|| id("att")),
            bias: id("bias"),
            ln: self.cfg.layer_norm.then(|| (id("ln_gain"), id("ln_shift"))),
        }
    }

    /// Record a forward pass for a batch of sequences of task `task`.
    ///
    /// Returns `(batch * n) x 2` logits for per-position tasks and a
    /// `batch x 1` column for invariant tasks. `dropout_rng` enables dropout
    /// when the configured rate is positive.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        task: usize,
        inputs: &[&[u32]],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NnError> {
        let slot = self
            .tasks
            .get(task)
            .ok_or_else(|| NnError::UnknownTask(format!("#{task}")))?;
        let n = slot.cfg.spec.n;
        let vocab = slot.cfg.spec.vocab;
        if inputs.is_empty() {
            return Err(NnError::Shape("empty batch".into()));
        }
        let mut idx = Vec::with_capacity(inputs.len() * n);
        for x in inputs {
            if x.len() != n {
                return Err(NnError::Shape(format!("input length {} for n = {n}", x.len())));
            }
            if let Some(t) = x.iter().find(|&&t| t as usize >= vocab) {
                return Err(NnError::Index(format!("token {t} outside vocab {vocab}")));
            }
            idx.extend_from_slice(x);
        }
        let table = match slot.token {
            Some(id) => self.p(tape, id),
            None => {
                let id = self.params.id("lift").expect("lift exists for such tasks");
                self.p(tape, id)
            }
        };
        let mut x = tape.gather(table, &idx)?;
        if let (Some(id), Some(nv)) = (slot.node, &slot.nodes) {
            let node_idx: Vec<u32> = (0..inputs.len())
                .flat_map(|_| nv.colors().iter().copied())
                .collect();
            let nt = self.p(tape, id);
            let ne = tape.gather(nt, &node_idx)?;
            x = tape.add(x, ne)?;
        }
        let mut rng = dropout_rng;
        let edge_table = self.p(tape, slot.edge);
        for l in 0..self.cfg.layers {
            let ids = self.layer_ids(l);
            if let Some(r) = rng.as_deref_mut() {
                x = self.dropout(tape, x, r)?;
            }
            let wl = self.p(tape, ids.wl);
            let wr = self.p(tape, ids.wr);
            let we = self.p(tape, ids.we);
            // pre-norm residual: x + f(LN(x))
            let xin = match ids.ln {
                Some((g, b)) => {
                    let (g, b) = (self.p(tape, g), self.p(tape, b));
                    tape.layer_norm(x, g, b)?
                }
                None => x,
            };
            let xl = tape.matmul(xin, wl)?;
            let xr = tape.matmul(xin, wr)?;
            let pe = tape.matmul(edge_table, we)?;
            let msg = match ids.att {
                Some(a) => {
                    let att = self.p(tape, a);
                    tape.attention(xl, xr, pe, att, self.cfg.heads, &slot.graph)?
                }
                None => tape.edge_relu_mean(xl, xr, pe, &slot.graph)?,
            };
            let bias = self.p(tape, ids.bias);
            let m = tape.add_bias(msg, bias)?;
            let m = tape.leaky_relu(m, T::lit(UPDATE_SLOPE));
            x = tape.add(x, m)?;
        }
        let pooled = match slot.cfg.spec.mode {
            LabelMode::EquivariantBinary => x,
            LabelMode::InvariantScalar => tape.mean_pool(x, n)?,
        };
        let w = self.p(tape, slot.head.0);
        let b = self.p(tape, slot.head.1);
        let y = tape.matmul(pooled, w)?;
        tape.add_bias(y, b)
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, rng: &mut ChaCha8Rng) -> Result<Var, NnError> {
        let p = self.cfg.dropout;
        if p <= 0.0 {
            return Ok(x);
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let len = tape.value(x).data.len();
        let mask = (0..len)
            .map(|_| if rng.random_bool(p) { T::zero() } else { scale })
            .collect();
        tape.dropout(x, mask)
    }

    /// Forward without dropout on a throwaway tape.
    pub fn predict(&self, task: usize, inputs: &[&[u32]]) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, task, inputs, None)?;
        Ok(tape.value(y).clone())
    }

    /// Scalar training loss for `records` given the output of `forward`.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        task: usize,
        out: Var,
        records: &[&Record],
        kind: LossKind,
    ) -> Result<Var, NnError> {
        let spec = &self.tasks[task].cfg.spec;
        match (spec.mode, kind) {
            (LabelMode::EquivariantBinary, LossKind::CrossEntropy) => {
                let mut bits = Vec::with_capacity(records.len() * spec.n);
                for r in records {
                    let eq = r.eq_labels.as_ref().ok_or_else(|| {
                        NnError::Shape("record has no per-position labels".into())
                    })?;
                    bits.extend_from_slice(eq);
                }
                tape.cross_entropy(out, &bits)
            }
            (LabelMode::InvariantScalar, LossKind::L1 { scale }) => {
                let t: Vec<T> = records.iter().map(|r| T::lit(r.inv_label)).collect();
                tape.l1(out, &t, T::lit(scale))
            }
            (LabelMode::InvariantScalar, LossKind::Bce) => {
                let t: Vec<T> = records.iter().map(|r| T::lit(r.inv_label)).collect();
                tape.bce_with_logits(out, &t)
            }
            (mode, kind) => Err(NnError::Config(format!(
                "loss {kind:?} does not fit mode {}",
                mode.as_str()
            ))),
        }
    }
}
