use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use symbreak::groupcatalog::GroupExpr;
use symbreak::nn::{load_checkpoint, save_checkpoint, Aggregator, ModelConfig, NnError, TaskConfig};
use symbreak::orbitclosure::{
    combine_colorings, edge_orbits, node_orbits, restrict_support, SupportMask,
};
use symbreak::par;
use symbreak::permgroup::{Permutation, StrongGenChain};
use symbreak::taskgen::{generate, LabelMode, TaskError, TaskName, TaskSpec};
use symbreak::trainer::{
    initial_model, pretrain_finetune, train_multitask, train_single, PretrainConfig, RunReport,
    TrainConfig, TrainError, TransferReport,
};
use symbreak::verify::{analyze_discovery, check_equivariance, matrix_csv, witness_non_equivariance, DiscoveryReport, VerifyError};

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Check(anyhow::Error),
}

type Res<T> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn train_err(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) | TrainError::Task(_) => usage(e),
        TrainError::Nn(NnError::Config(_)) => usage(e),
        _ => data(e),
    }
}

fn verify_err(e: VerifyError) -> Failure {
    match e {
        VerifyError::Precondition(_) | VerifyError::Group(_) | VerifyError::Task(_) => usage(e),
        _ => data(e),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "symbreak",
    about = "Edge-orbit colorings of permutation groups and message-passing models keyed by them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Edge and node orbit colorings of a group
    #[command(args_override_self = true)]
    Orbits(OrbitsArgs),
    /// Generate a synthetic dataset
    #[command(name = "gen-data", args_override_self = true)]
    GenData(GenDataArgs),
    /// Train one task from scratch
    #[command(args_override_self = true)]
    Train(TrainCmd),
    /// Train several tasks on a shared backbone
    #[command(args_override_self = true)]
    Multitask(MultitaskCmd),
    /// Compare scratch training against multitask pretraining plus finetuning
    #[command(args_override_self = true)]
    Transfer(TransferCmd),
    /// Check a checkpoint for equivariance under a group
    #[command(args_override_self = true)]
    Verify(VerifyCmd),
    /// Train under a misspecified group and measure edge-embedding merging
    #[command(args_override_self = true)]
    Discover(DiscoverCmd),
    /// Convert report JSON into CSV tables
    #[command(args_override_self = true)]
    Report(ReportCmd),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// key=value file; flags on the command line override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OrbitsArgs {
    #[arg(long)]
    pub group: String,
    /// Expected degree; checked against the group
    #[arg(long)]
    pub n: Option<usize>,
    /// 0/1 CSV mask of the edges to keep
    #[arg(long, value_name = "FILE")]
    pub support: Option<PathBuf>,
    /// Colorings to combine: full, sparse or full,sparse
    #[arg(long, default_value = "full")]
    pub combine: String,
    /// Output directory for edges.csv, nodes.csv and summary.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub vocab: usize,
    /// eq (per-position labels) or inv (one scalar)
    #[arg(long, default_value = "eq")]
    pub mode: String,
    /// Window length for palindrome, monotone and cyclic tasks
    #[arg(long)]
    pub window: Option<usize>,
}

impl SpecArgs {
    fn mode(&self) -> Res<LabelMode> {
        self.mode.parse().map_err(usage)
    }

    fn spec(&self, task: &str) -> Res<TaskSpec> {
        let name: TaskName = task.trim().parse().map_err(usage)?;
        let spec = TaskSpec::new(name, self.n, self.vocab, self.mode()?).map_err(usage)?;
        match self.window {
            Some(w) => spec.with_window(w).map_err(usage),
            None => Ok(spec),
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub task: String,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 2500)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 128)]
    pub edge_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long)]
    pub no_layer_norm: bool,
    /// attention or mean_mlp
    #[arg(long, default_value = "attention")]
    pub aggregator: String,
    /// Add embeddings keyed by node orbit
    #[arg(long)]
    pub node_orbits: bool,
    /// Replace per-task token tables with a shared linear lift
    #[arg(long)]
    pub no_token_embedder: bool,
}

impl ModelArgs {
    fn config(&self) -> Res<ModelConfig> {
        let aggregator: Aggregator = self.aggregator.parse().map_err(usage)?;
        let cfg = ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            edge_dim: self.edge_dim,
            heads: self.heads,
            dropout: self.dropout,
            layer_norm: !self.no_layer_norm,
            aggregator,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn task(&self, spec: TaskSpec, group: Option<&str>) -> Res<TaskConfig> {
        let group = match group {
            Some(g) => parse_group(g)?,
            None => spec.name.default_group(spec.n),
        };
        if group.degree() != spec.n {
            return Err(usage(anyhow!(
                "group {group} has degree {}, task length is {}",
                group.degree(),
                spec.n
            )));
        }
        let mut t = TaskConfig::new(spec, group);
        t.node_orbits = self.node_orbits;
        t.token_embedder = !self.no_token_embedder;
        Ok(t)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Default 40 for eq tasks, 80 for inv
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Dataset size in units (2500 records eq, 8000 inv)
    #[arg(long)]
    pub units: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub backbone_lr_scale: f64,
    /// Divide L1 losses by the largest training target
    #[arg(long)]
    pub weighted_l1: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated seeds; overrides --seed
    #[arg(long)]
    pub seeds: Option<String>,
    /// Run seeds concurrently
    #[arg(long)]
    pub parallel: bool,
}

impl TrainArgs {
    fn config(&self, mode: LabelMode, default_units: f64) -> Res<TrainConfig> {
        let mut cfg = TrainConfig::for_mode(mode);
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.units = self.units.unwrap_or(default_units);
        cfg.batch = self.batch;
        cfg.test_fraction = self.test_fraction;
        cfg.backbone_lr_scale = self.backbone_lr_scale;
        cfg.weighted_l1 = self.weighted_l1;
        cfg.seed = self.seed;
        cfg.validate().map_err(train_err)?;
        Ok(cfg)
    }

    fn seeds(&self) -> Res<Vec<u64>> {
        match &self.seeds {
            None => Ok(vec![self.seed]),
            Some(s) => {
                let v = s
                    .split(',')
                    .map(|t| t.trim().parse::<u64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| usage(anyhow!("bad --seeds '{s}': {e}")))?;
                if v.is_empty() {
                    return Err(usage(anyhow!("--seeds is empty")));
                }
                Ok(v)
            }
        }
    }

    fn for_seeds<R: Send>(&self, f: impl Fn(u64) -> Res<R> + Sync + Send) -> Res<Vec<R>> {
        let seeds = self.seeds()?;
        let out: Vec<Res<R>> = if self.parallel {
            par::map_slice(&seeds, |s| f(*s))
        } else {
            seeds.iter().map(|s| f(*s)).collect()
        };
        out.into_iter().collect()
    }
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[arg(long)]
    pub task: String,
    /// Group keying the edge embeddings; the task's own group by default
    #[arg(long)]
    pub group: Option<String>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory; the report goes to stdout when absent
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug)]
pub struct MultitaskCmd {
    /// Comma-separated task names
    #[arg(long)]
    pub tasks: String,
    /// Semicolon-separated groups, one per task
    #[arg(long)]
    pub groups: Option<String>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug)]
pub struct TransferCmd {
    #[arg(long)]
    pub target: String,
    /// Comma-separated pretraining tasks
    #[arg(long)]
    pub pretrain: String,
    #[arg(long)]
    pub target_group: Option<String>,
    /// Semicolon-separated groups, one per pretraining task
    #[arg(long)]
    pub pretrain_groups: Option<String>,
    /// Units of data per pretraining task
    #[arg(long, default_value_t = 1.5)]
    pub pretrain_units: f64,
    /// Pretraining epochs; same as --epochs when absent
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug)]
pub struct VerifyCmd {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub group: String,
    /// Task key inside the checkpoint; the first task by default
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Semicolon-separated permutations (one-line images, comma-separated)
    /// that should break equivariance
    #[arg(long)]
    pub witness: Option<String>,
    /// Inputs searched per witness permutation
    #[arg(long, default_value_t = 100)]
    pub inputs: usize,
    /// Write the JSON report here as well as to stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug)]
pub struct DiscoverCmd {
    #[arg(long, default_value = "intersect")]
    pub task: String,
    /// Group the model is trained with
    #[arg(long)]
    pub mis: String,
    /// Group whose orbits the misspecified ones should merge into; the
    /// task's own group by default
    #[arg(long)]
    pub full: Option<String>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

#[derive(Args, Debug)]
pub struct ReportCmd {
    /// JSON written by train, multitask, transfer or discover
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArg,
}

pub fn run(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::Orbits(a) => orbits(a),
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train(a),
        Cmd::Multitask(a) => multitask(a),
        Cmd::Transfer(a) => transfer(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Discover(a) => discover(a),
        Cmd::Report(a) => report(a),
    }
}

fn parse_group(text: &str) -> Res<GroupExpr> {
    text.parse::<GroupExpr>()
        .map_err(|e| usage(anyhow!("group '{text}': {e}")))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(data)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// One object for a single seed, an array otherwise.
fn json_one_or_many<T: Serialize>(v: &[T]) -> String {
    match v {
        [one] => json(one),
        many => json(many),
    }
}

fn seed_suffix(seeds: usize, seed: u64) -> String {
    if seeds == 1 {
        String::new()
    } else {
        format!("-seed{seed}")
    }
}

#[derive(Serialize)]
struct OrbitSummary {
    group: String,
    degree: usize,
    order: String,
    combine: String,
    edge_orbits: usize,
    node_orbits: usize,
    masked_edges: usize,
    build: String,
}

fn orbits(a: OrbitsArgs) -> Res<()> {
    let group = parse_group(&a.group)?;
    if let Some(n) = a.n {
        if n != group.degree() {
            return Err(usage(anyhow!(
                "--n {n} does not match the degree {} of {group}",
                group.degree()
            )));
        }
    }
    let gens = group.to_generators().map_err(usage)?;
    let full = edge_orbits(&gens).map_err(data)?;
    let mask = match &a.support {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(data)?;
            Some(SupportMask::from_csv(&text).map_err(data)?)
        }
        None => None,
    };
    let parts: Vec<&str> = a.combine.split(',').map(str::trim).collect();
    let sparse = || -> Res<_> {
        let m = mask
            .as_ref()
            .ok_or_else(|| usage(anyhow!("--combine sparse needs --support")))?;
        restrict_support(&full, m).map_err(data)
    };
    let a2 = match parts.as_slice() {
        ["full"] => full.clone(),
        ["sparse"] => sparse()?,
        ["full", "sparse"] | ["sparse", "full"] => combine_colorings(&full, &sparse()?).map_err(data)?,
        _ => {
            return Err(usage(anyhow!(
                "--combine takes full, sparse or full,sparse; found '{}'",
                a.combine
            )))
        }
    };
    let nodes = node_orbits(&gens);
    let chain = StrongGenChain::new(&gens);
    let n = a2.n();
    let summary = OrbitSummary {
        group: group.to_string(),
        degree: n,
        order: chain.order().to_string(),
        combine: parts.join(","),
        edge_orbits: a2.num_orbits(),
        node_orbits: nodes.num_orbits(),
        masked_edges: (0..n * n).filter(|&k| a2.is_masked(k / n, k % n)).count(),
        build: symbreak::build_id(),
    };
    let text = json(&summary);
    if let Some(dir) = &a.out {
        write(&dir.join("edges.csv"), a2.to_csv())?;
        write(&dir.join("nodes.csv"), nodes.to_csv())?;
        write(&dir.join("summary.json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Res<()> {
    let spec = a.spec.spec(&a.task)?;
    let ds = generate(&spec, a.count, a.seed).map_err(|e| match e {
        TaskError::InvalidSpec(_) => usage(e),
        _ => data(e),
    })?;
    let text = ds.to_text();
    match &a.out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_runs(out: Option<&Path>, runs: &[(u64, RunReport)], models: &[(u64, symbreak::nn::Model<f32>)]) -> Res<()> {
    let reports: Vec<&RunReport> = runs.iter().map(|(_, r)| r).collect();
    let text = json_one_or_many(&reports);
    let Some(dir) = out else {
        print!("{text}");
        return Ok(());
    };
    write(&dir.join("report.json"), &text)?;
    for (seed, r) in runs {
        let sfx = seed_suffix(runs.len(), *seed);
        write(&dir.join(format!("curves{sfx}.csv")), r.to_csv())?;
    }
    for (seed, m) in models {
        let sfx = seed_suffix(models.len(), *seed);
        save_checkpoint(m, &dir.join(format!("model{sfx}.ckpt")))
            .map_err(|e| data(anyhow!(e)))?;
    }
    for r in &reports {
        for t in &r.tasks {
            eprintln!(
                "seed {} task {}: final test loss {:.4}",
                r.seed,
                t.key,
                t.final_test_loss()
            );
        }
    }
    Ok(())
}

fn train(a: TrainCmd) -> Res<()> {
    let spec = a.spec.spec(&a.task)?;
    let task = a.model.task(spec, a.group.as_deref())?;
    let model_cfg = a.model.config()?;
    let base = a.train.config(task.spec.mode, 1.0)?;
    let results = a.train.for_seeds(|seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let (m, r) = train_single(&task, &cfg, &model_cfg).map_err(train_err)?;
        Ok((seed, m, r))
    })?;
    let runs: Vec<_> = results.iter().map(|(s, _, r)| (*s, r.clone())).collect();
    let models: Vec<_> = results.into_iter().map(|(s, m, _)| (s, m)).collect();
    emit_runs(a.out.as_deref(), &runs, &models)
}

fn task_list(
    names: &str,
    groups: Option<&str>,
    spec: &SpecArgs,
    model: &ModelArgs,
) -> Res<Vec<TaskConfig>> {
    let names: Vec<&str> = names.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(usage(anyhow!("no tasks given")));
    }
    let groups: Vec<Option<&str>> = match groups {
        None => vec![None; names.len()],
        Some(g) => {
            let v: Vec<Option<&str>> = g.split(';').map(|s| Some(s.trim())).collect();
            if v.len() != names.len() {
                return Err(usage(anyhow!(
                    "{} groups for {} tasks",
                    v.len(),
                    names.len()
                )));
            }
            v
        }
    };
    names
        .iter()
        .zip(groups)
        .map(|(n, g)| model.task(spec.spec(n)?, g))
        .collect()
}

fn multitask(a: MultitaskCmd) -> Res<()> {
    let tasks = task_list(&a.tasks, a.groups.as_deref(), &a.spec, &a.model)?;
    let model_cfg = a.model.config()?;
    let base = a.train.config(a.spec.mode()?, 1.0)?;
    let results = a.train.for_seeds(|seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let (m, r) = train_multitask(&tasks, &cfg, &model_cfg).map_err(train_err)?;
        Ok((seed, m, r))
    })?;
    let runs: Vec<_> = results.iter().map(|(s, _, r)| (*s, r.clone())).collect();
    let models: Vec<_> = results.into_iter().map(|(s, m, _)| (s, m)).collect();
    emit_runs(a.out.as_deref(), &runs, &models)
}

fn transfer(a: TransferCmd) -> Res<()> {
    let mode = a.spec.mode()?;
    let mut model_args = a.model.clone();
    if mode == LabelMode::InvariantScalar {
        model_args.no_token_embedder = true;
    }
    let pretrain = task_list(&a.pretrain, a.pretrain_groups.as_deref(), &a.spec, &model_args)?;
    let target = model_args.task(a.spec.spec(&a.target)?, a.target_group.as_deref())?;
    let model_cfg = model_args.config()?;
    let base = a.train.config(mode, 0.15)?;
    let pre = PretrainConfig {
        units: a.pretrain_units,
        epochs: a.pretrain_epochs.unwrap_or(base.epochs),
    };
    let reports = a.train.for_seeds(|seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        pretrain_finetune(&pretrain, &target, &pre, &cfg, &model_cfg).map_err(train_err)
    })?;
    let text = json_one_or_many(&reports);
    let Some(dir) = &a.out else {
        print!("{text}");
        return Ok(());
    };
    write(&dir.join("transfer.json"), &text)?;
    for r in &reports {
        let sfx = seed_suffix(reports.len(), r.scratch.seed);
        write(&dir.join(format!("scratch{sfx}.csv")), r.scratch.to_csv())?;
        write(&dir.join(format!("pretrained{sfx}.csv")), r.pretrained.to_csv())?;
        eprintln!(
            "seed {}: scratch {:.4}, pretrained {:.4}",
            r.scratch.seed,
            r.scratch.tasks[0].final_test_loss(),
            r.pretrained.tasks[0].final_test_loss()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyOutput {
    checkpoint: String,
    build: String,
    equivariance: symbreak::verify::EquivarianceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    witnesses: Option<symbreak::verify::WitnessReport>,
}

fn parse_perms(text: &str) -> Res<Vec<Permutation>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let images = s
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| usage(anyhow!("permutation '{s}': {e}")))?;
            Permutation::from_images(images).map_err(|e| usage(anyhow!("permutation '{s}': {e}")))
        })
        .collect()
}

fn verify(a: VerifyCmd) -> Res<()> {
    let group = parse_group(&a.group)?;
    let model = load_checkpoint(&a.checkpoint)
        .map_err(|e| data(anyhow!("{}: {e}", a.checkpoint.display())))?;
    let task = match &a.task {
        Some(k) => model.task_index(k).map_err(usage)?,
        None => 0,
    };
    let eq = check_equivariance(&model, task, &group, a.samples, a.tol, a.seed).map_err(verify_err)?;
    let witnesses = match &a.witness {
        Some(w) => Some(
            witness_non_equivariance(&model, task, &parse_perms(w)?, a.inputs, a.seed)
                .map_err(verify_err)?,
        ),
        None => None,
    };
    let passed = eq.pass;
    let out = VerifyOutput {
        checkpoint: a.checkpoint.display().to_string(),
        build: symbreak::build_id(),
        equivariance: eq,
        witnesses,
    };
    let text = json(&out);
    if let Some(p) = &a.out {
        write(p, &text)?;
    }
    print!("{text}");
    if passed {
        Ok(())
    } else {
        Err(Failure::Check(anyhow!(
            "max residual {} exceeds tolerance {}",
            out.equivariance.max_residual,
            a.tol
        )))
    }
}

#[derive(Serialize, Deserialize)]
pub struct DiscoveryRun {
    pub seed: u64,
    pub discovery: DiscoveryReport,
    pub run: RunReport,
}

fn discover(a: DiscoverCmd) -> Res<()> {
    let spec = a.spec.spec(&a.task)?;
    let full = match &a.full {
        Some(g) => parse_group(g)?,
        None => spec.name.default_group(spec.n),
    };
    let mis = parse_group(&a.mis)?;
    let task = a.model.task(spec, Some(&a.mis))?;
    let model_cfg = a.model.config()?;
    let base = a.train.config(task.spec.mode, 1.0)?;
    let runs = a.train.for_seeds(|seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let init = initial_model(&task, &model_cfg, seed).map_err(train_err)?;
        let (trained, run) = train_single(&task, &cfg, &model_cfg).map_err(train_err)?;
        let discovery = analyze_discovery(&init, &trained, 0, &full, &mis).map_err(verify_err)?;
        Ok(DiscoveryRun { seed, discovery, run })
    })?;
    let text = json_one_or_many(&runs);
    let Some(dir) = &a.out else {
        print!("{text}");
        return Ok(());
    };
    write(&dir.join("discovery.json"), &text)?;
    for r in &runs {
        let sfx = seed_suffix(runs.len(), r.seed);
        let d = &r.discovery;
        write(&dir.join(format!("initial_distances{sfx}.csv")), matrix_csv(&d.initial_distances))?;
        write(&dir.join(format!("trained_distances{sfx}.csv")), matrix_csv(&d.trained_distances))?;
        eprintln!(
            "seed {}: merge ratio {} -> {}",
            r.seed,
            fmt_ratio(d.initial_merge_ratio),
            fmt_ratio(d.trained_merge_ratio)
        );
    }
    Ok(())
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn one_or_many<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Option<Vec<T>> {
    if v.is_array() {
        serde_json::from_value(v.clone()).ok()
    } else {
        serde_json::from_value(v.clone()).ok().map(|x| vec![x])
    }
}

fn curves_csv(rows: &mut String, label: &str, r: &RunReport) {
    use std::fmt::Write as _;
    for t in &r.tasks {
        for (e, (tr, te)) in t.train_loss.iter().zip(&t.test_loss).enumerate() {
            let _ = writeln!(rows, "{},{label},{},{},train,{tr}", r.seed, t.key, e + 1);
            let _ = writeln!(rows, "{},{label},{},{},test,{te}", r.seed, t.key, e + 1);
        }
    }
}

fn finals_csv(rows: &mut String, label: &str, r: &RunReport) {
    use std::fmt::Write as _;
    for t in &r.tasks {
        let acc = t.test_accuracy.last().map_or(String::new(), |a| a.to_string());
        let _ = writeln!(rows, "{},{label},{},{},{acc}", r.seed, t.key, t.final_test_loss());
    }
}

fn report(a: ReportCmd) -> Res<()> {
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(data)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", a.input.display()))
        .map_err(data)?;
    let mut runs: Vec<(String, RunReport)> = Vec::new();
    if let Some(d) = one_or_many::<DiscoveryRun>(&value) {
        let mut ratios = String::from("seed,initial_merge_ratio,trained_merge_ratio,degenerate\n");
        for r in &d {
            let f = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
            ratios.push_str(&format!(
                "{},{},{},{}\n",
                r.seed,
                f(r.discovery.initial_merge_ratio),
                f(r.discovery.trained_merge_ratio),
                r.discovery.degenerate
            ));
            let sfx = seed_suffix(d.len(), r.seed);
            write(&a.out.join(format!("initial_distances{sfx}.csv")), matrix_csv(&r.discovery.initial_distances))?;
            write(&a.out.join(format!("trained_distances{sfx}.csv")), matrix_csv(&r.discovery.trained_distances))?;
            runs.push(("misspecified".into(), r.run.clone()));
        }
        write(&a.out.join("merge_ratios.csv"), ratios)?;
    } else if let Some(t) = one_or_many::<TransferReport>(&value) {
        for r in t {
            runs.push(("scratch".into(), r.scratch));
            runs.push(("pretrained".into(), r.pretrained));
        }
    } else if let Some(r) = one_or_many::<RunReport>(&value) {
        runs.extend(r.into_iter().map(|r| (r.kind.clone(), r)));
    } else {
        return Err(data(anyhow!(
            "{} is not a train, multitask, transfer or discover report",
            a.input.display()
        )));
    }
    let mut curves = String::from("seed,arm,task,epoch,split,loss\n");
    let mut finals = String::from("seed,arm,task,final_test_loss,final_test_accuracy\n");
    for (label, r) in &runs {
        curves_csv(&mut curves, label, r);
        finals_csv(&mut finals, label, r);
    }
    write(&a.out.join("loss_curves.csv"), curves)?;
    write(&a.out.join("final_losses.csv"), finals)?;
    Ok(())
}
