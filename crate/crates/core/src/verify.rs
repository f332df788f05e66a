//! Empirical checks of the symmetry a model is built to have (and to lack),
//! plus the edge-embedding merge analysis for misspecified groups.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groupcatalog::{CatalogError, GroupExpr};
use crate::nn::{Model, NnError, Tensor};
use crate::orbitclosure::{edge_orbits, preserves_colors, EdgeOrbitMatrix, OrbitError};
use crate::par;
use crate::permgroup::{Permutation, StrongGenChain};
use crate::taskgen::{generate, permute_positions, LabelMode, TaskError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Group(#[from] CatalogError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResidual {
    pub perm: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub group: String,
    pub task: String,
    pub samples: usize,
    pub tolerance: f64,
    pub max_residual: f64,
    pub per_sample: Vec<SampleResidual>,
    pub pass: bool,
}

/// Largest difference between `f(g x)` and `g f(x)`: per-position outputs
/// move with `g`, invariant outputs must not change.
pub fn commutation_residual(
    model: &Model<f32>,
    task: usize,
    g: &Permutation,
    input: &[u32],
) -> Result<f64, VerifyError> {
    let gx = permute_positions(g, input);
    let y = model.predict(task, &[input])?;
    let gy = model.predict(task, &[&gx])?;
    let mut worst = 0.0f64;
    match model.task(task).cfg.spec.mode {
        LabelMode::EquivariantBinary => {
            for i in 0..input.len() {
                for c in 0..y.cols {
                    let d = (gy.get(g.apply(i), c) - y.get(i, c)).abs() as f64;
                    worst = worst.max(d);
                }
            }
        }
        LabelMode::InvariantScalar => {
            worst = (gy.item() - y.item()).abs() as f64;
        }
    }
    Ok(worst)
}

fn respects_node_orbits(model: &Model<f32>, task: usize, g: &Permutation) -> Result<bool, VerifyError> {
    match &model.task(task).nodes {
        Some(nv) => Ok(nv.preserved_by(g)?),
        None => Ok(true),
    }
}

/// Sample `samples` pairs of a uniform group element and a generated input
/// and measure the commutation residual of each. Every generator of `group`
/// must preserve the task's edge (and node) colors.
pub fn check_equivariance(
    model: &Model<f32>,
    task: usize,
    group: &GroupExpr,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<EquivarianceReport, VerifyError> {
    let slot = model.task(task);
    let gens = group.to_generators()?;
    if gens.degree() != slot.cfg.spec.n {
        return Err(VerifyError::Precondition(format!(
            "group degree {} differs from task length {}",
            gens.degree(),
            slot.cfg.spec.n
        )));
    }
    for g in gens.gens() {
        if !preserves_colors(g, &slot.edges)? || !respects_node_orbits(model, task, g)? {
            return Err(VerifyError::Precondition(format!(
                "generator {g} of {group} does not preserve the model's colors"
            )));
        }
    }
    let chain = StrongGenChain::new(&gens);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Permutation> = (0..samples).map(|_| chain.random_element(&mut rng)).collect();
    let data = generate(&slot.cfg.spec, samples.max(1), seed)?;
    let residuals = par::map_range(samples, |k| {
        commutation_residual(model, task, &perms[k], &data.records[k].input)
    });
    let mut per_sample = Vec::with_capacity(samples);
    for (g, r) in perms.iter().zip(residuals) {
        per_sample.push(SampleResidual {
            perm: g.to_string(),
            residual: r?,
        });
    }
    let max_residual = per_sample.iter().map(|s| s.residual).fold(0.0, f64::max);
    Ok(EquivarianceReport {
        group: group.to_string(),
        task: slot.cfg.key.clone(),
        samples,
        tolerance: tol,
        max_residual,
        pass: max_residual <= tol,
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub perm: String,
    pub found: bool,
    /// Inputs tried before the first residual above the threshold.
    pub inputs_tried: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub task: String,
    pub threshold: f64,
    pub witnesses: Vec<Witness>,
}

impl WitnessReport {
    pub fn all_found(&self) -> bool {
        self.witnesses.iter().all(|w| w.found)
    }
}

pub const WITNESS_THRESHOLD: f64 = 1e-2;

/// For each permutation outside the coloring's automorphisms, search up to
/// `inputs` generated inputs for a commutation residual above the threshold.
/// Permutations that preserve the colors are rejected: they cannot witness
/// anything.
pub fn witness_non_equivariance(
    model: &Model<f32>,
    task: usize,
    perms: &[Permutation],
    inputs: usize,
    seed: u64,
) -> Result<WitnessReport, VerifyError> {
    let slot = model.task(task);
    for p in perms {
        if preserves_colors(p, &slot.edges)? && respects_node_orbits(model, task, p)? {
            return Err(VerifyError::Precondition(format!(
                "{p} preserves the model's colors, so it is not outside the group"
            )));
        }
    }
    let data = generate(&slot.cfg.spec, inputs.max(1), seed)?;
    let found = par::map_slice(perms, |p| -> Result<Witness, VerifyError> {
        let mut max_residual = 0.0f64;
        for (k, r) in data.records.iter().take(inputs).enumerate() {
            let res = commutation_residual(model, task, p, &r.input)?;
            max_residual = max_residual.max(res);
            if res > WITNESS_THRESHOLD {
                return Ok(Witness {
                    perm: p.to_string(),
                    found: true,
                    inputs_tried: k + 1,
                    max_residual,
                });
            }
        }
        Ok(Witness {
            perm: p.to_string(),
            found: false,
            inputs_tried: inputs,
            max_residual,
        })
    });
    Ok(WitnessReport {
        task: slot.cfg.key.clone(),
        threshold: WITNESS_THRESHOLD,
        witnesses: found.into_iter().collect::<Result<_, _>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub full_group: String,
    pub mis_group: String,
    /// For each misspecified color, the full-group color containing it.
    pub full_color_of: Vec<usize>,
    pub mergeable_pairs: usize,
    pub separated_pairs: usize,
    pub initial_distances: Vec<Vec<f64>>,
    pub trained_distances: Vec<Vec<f64>>,
    /// `None` when there is nothing to merge or nothing to compare against.
    pub initial_merge_ratio: Option<f64>,
    pub trained_merge_ratio: Option<f64>,
    pub degenerate: bool,
}

/// Euclidean distances between all pairs of rows.
pub fn row_distances(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    (0..t.rows)
        .map(|a| {
            (0..t.rows)
                .map(|b| {
                    t.row(a)
                        .iter()
                        .zip(t.row(b))
                        .map(|(x, y)| ((x - y) as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Mean distance between rows sharing a full-group color divided by the
/// mean distance between rows in different full-group colors.
pub fn merge_ratio(dist: &[Vec<f64>], full_color_of: &[usize]) -> (Option<f64>, usize, usize) {
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..full_color_of.len() {
        for b in a + 1..full_color_of.len() {
            if full_color_of[a] == full_color_of[b] {
                same += dist[a][b];
                ns += 1;
            } else {
                diff += dist[a][b];
                nd += 1;
            }
        }
    }
    let ratio = (ns > 0 && nd > 0 && diff > 0.0).then(|| (same / ns as f64) / (diff / nd as f64));
    (ratio, ns, nd)
}

/// Map every color of `fine` to the color of `coarse` containing it.
pub fn coarsening_map(fine: &EdgeOrbitMatrix, coarse: &EdgeOrbitMatrix) -> Result<Vec<usize>, VerifyError> {
    if !fine.refines(coarse)? {
        return Err(VerifyError::Precondition(
            "misspecified coloring does not refine the full-group coloring".into(),
        ));
    }
    let mut map = vec![usize::MAX; fine.num_orbits()];
    for (f, c) in fine.colors().iter().zip(coarse.colors()) {
        if (*f as usize) < map.len() {
            map[*f as usize] = *c as usize;
        }
    }
    Ok(map)
}

/// Compare how far apart the edge embeddings of `task` are before and after
/// training, for colors the full group would merge versus colors it keeps
/// apart.
pub fn analyze_discovery(
    init: &Model<f32>,
    trained: &Model<f32>,
    task: usize,
    full: &GroupExpr,
    mis: &GroupExpr,
) -> Result<DiscoveryReport, VerifyError> {
    let mis_colors = edge_orbits(&mis.to_generators()?)?;
    let full_colors = edge_orbits(&full.to_generators()?)?;
    for m in [init, trained] {
        if m.task(task).edges != mis_colors {
            return Err(VerifyError::Precondition(format!(
                "task '{}' is not colored by {mis}",
                m.task(task).cfg.key
            )));
        }
    }
    let map = coarsening_map(&mis_colors, &full_colors)?;
    let d0 = row_distances(init.edge_table(task));
    let d1 = row_distances(trained.edge_table(task));
    let (r0, ns, nd) = merge_ratio(&d0, &map);
    let (r1, _, _) = merge_ratio(&d1, &map);
    Ok(DiscoveryReport {
        full_group: full.to_string(),
        mis_group: mis.to_string(),
        full_color_of: map,
        mergeable_pairs: ns,
        separated_pairs: nd,
        initial_distances: d0,
        trained_distances: d1,
        initial_merge_ratio: r0,
        trained_merge_ratio: r1,
        degenerate: ns == 0 || nd == 0,
    })
}

/// Square matrix as CSV.
pub fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, TaskConfig};
    use crate::taskgen::{TaskName, TaskSpec};

    fn model(group: GroupExpr, seed: u64) -> Model<f32> {
        let spec = TaskSpec::new(TaskName::Intersect, 10, 7, LabelMode::EquivariantBinary).unwrap();
        let cfg = ModelConfig {
            hidden: 16,
            layers: 2,
            edge_dim: 8,
            ..ModelConfig::default()
        };
        Model::new(cfg, vec![TaskConfig::new(spec, group)], seed).unwrap()
    }

    #[test]
    fn random_init_passes_its_own_group() {
        let m = model(GroupExpr::Intersect(10), 1);
        let r = check_equivariance(&m, 0, &GroupExpr::Intersect(10), 100, 1e-4, 3).unwrap();
        assert!(r.pass, "max residual {}", r.max_residual);
        assert_eq!(r.per_sample.len(), 100);
    }

    #[test]
    fn trivial_coloring_rejects_a_larger_group() {
        let m = model(GroupExpr::Trivial(10), 1);
        assert!(matches!(
            check_equivariance(&m, 0, &GroupExpr::Intersect(10), 10, 1e-4, 0),
            Err(VerifyError::Precondition(_))
        ));
    }

    #[test]
    fn transposition_breaks_reversal_model() {
        let spec = TaskSpec::new(TaskName::Palindrome, 10, 4, LabelMode::EquivariantBinary).unwrap();
        let cfg = ModelConfig {
            hidden: 16,
            layers: 2,
            edge_dim: 8,
            ..ModelConfig::default()
        };
        let m: Model<f32> =
            Model::new(cfg, vec![TaskConfig::new(spec, GroupExpr::Rev(10))], 5).unwrap();
        let t = Permutation::transposition(10, 0, 1).unwrap();
        let r = witness_non_equivariance(&m, 0, &[t], 100, 2).unwrap();
        assert!(r.all_found(), "{r:?}");
        let id = Permutation::identity(10).unwrap();
        assert!(witness_non_equivariance(&m, 0, &[id], 10, 2).is_err());
    }

    #[test]
    fn alternating_coloring_has_no_outside_transpositions() {
        let spec = TaskSpec::new(TaskName::SignOfPermutation, 7, 7, LabelMode::InvariantScalar).unwrap();
        let cfg = ModelConfig {
            hidden: 8,
            layers: 1,
            edge_dim: 4,
            ..ModelConfig::default()
        };
        let m: Model<f32> =
            Model::new(cfg, vec![TaskConfig::new(spec, GroupExpr::Alt(7))], 0).unwrap();
        let t = Permutation::transposition(7, 2, 5).unwrap();
        assert!(matches!(
            witness_non_equivariance(&m, 0, &[t.clone()], 5, 0),
            Err(VerifyError::Precondition(_))
        ));
        // so an odd permutation leaves the S(7)-colored output unchanged
        let x: Vec<u32> = vec![3, 1, 4, 0, 6, 5, 2];
        assert!(commutation_residual(&m, 0, &t, &x).unwrap() < 1e-5);
    }

    #[test]
    fn discovery_report_shapes() {
        let mis: GroupExpr = "S(5)xS(5)".parse().unwrap();
        let m = model(mis.clone(), 4);
        let r = analyze_discovery(&m, &m, 0, &GroupExpr::Intersect(10), &mis).unwrap();
        assert_eq!(r.initial_merge_ratio, r.trained_merge_ratio);
        assert_eq!(r.full_color_of.len(), 6);
        assert_eq!((r.mergeable_pairs, r.separated_pairs), (3, 12));
        assert!(!r.degenerate);
        assert!(r.initial_merge_ratio.unwrap() > 0.0);

        let same = analyze_discovery(&m, &m, 0, &mis, &mis).unwrap();
        assert!(same.degenerate);
        assert_eq!(same.mergeable_pairs, 0);
        assert!(same.initial_merge_ratio.is_none());

        // coloring does not refine the claimed full group
        assert!(analyze_discovery(&m, &m, 0, &GroupExpr::Rev(10), &mis).is_err());
        assert!(matrix_csv(&r.initial_distances).lines().count() == 6);
    }
}
