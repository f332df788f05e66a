//! Node and edge orbit colorings of a permutation group.
//!
//! The edge coloring assigns every ordered pair `(i, j)` the id of its orbit
//! under the diagonal action `(i, j) -> (g(i), g(j))`. Its automorphism group
//! is the 2-closure of the generating group. Ids are canonical: scanning cells
//! in row-major order, the first cell of each new orbit takes the next id.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::par;
use crate::permgroup::{GeneratorSet, GroupError, Permutation, StrongGenChain, MAX_DEGREE};

/// Largest sequence length for which edge orbits are computed (`n^2` stays
/// within the degree cap).
pub const MAX_EDGE_N: usize = 64;
/// Largest degree the enumeration oracle accepts.
pub const MAX_BRUTE_FORCE_N: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrbitError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("n = {n} exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOrbitVector {
    colors: Vec<u32>,
    num_orbits: usize,
}

impl NodeOrbitVector {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn num_orbits(&self) -> usize {
        self.num_orbits
    }

    pub fn to_csv(&self) -> String {
        let mut s = join(&self.colors);
        s.push('\n');
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, OrbitError> {
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or(OrbitError::Csv {
                line: 1,
                msg: "empty input".into(),
            })?;
        let colors = parse_row(line, 1)?
            .into_iter()
            .map(|c| {
                u32::try_from(c).map_err(|_| OrbitError::Csv {
                    line: 1,
                    msg: "negative color".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (canon, k) = canonical_ids(colors.iter().map(|&c| c as u64), |_| false);
        if canon != colors {
            return Err(OrbitError::Csv {
                line: 1,
                msg: "colors are not canonically numbered".into(),
            });
        }
        Ok(NodeOrbitVector {
            colors,
            num_orbits: k,
        })
    }

    /// `true` iff `p` maps every node onto a node of the same color.
    pub fn preserved_by(&self, p: &Permutation) -> Result<bool, OrbitError> {
        if p.degree() != self.len() {
            return Err(OrbitError::SizeMismatch {
                left: self.len(),
                right: p.degree(),
            });
        }
        Ok((0..self.len()).all(|i| self.colors[p.apply(i)] == self.colors[i]))
    }
}

/// Orbit coloring of ordered node pairs. Masked cells (after support
/// restriction) carry the sentinel id `num_orbits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeOrbitMatrix {
    n: usize,
    colors: Vec<u32>,
    num_orbits: usize,
}

impl EdgeOrbitMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of live (unmasked) orbit colors.
    pub fn num_orbits(&self) -> usize {
        self.num_orbits
    }

    pub fn sentinel(&self) -> u32 {
        self.num_orbits as u32
    }

    #[inline]
    pub fn color(&self, i: usize, j: usize) -> u32 {
        self.colors[i * self.n + j]
    }

    #[inline]
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.color(i, j) == self.sentinel()
    }

    pub fn has_masked(&self) -> bool {
        self.colors.iter().any(|&c| c == self.sentinel())
    }

    /// Row-major colors.
    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    /// Colors of the diagonal cells, renumbered canonically. Equal to the
    /// node orbit vector when the matrix comes from `edge_orbits`.
    pub fn diagonal_node_colors(&self) -> NodeOrbitVector {
        let (colors, k) =
            canonical_ids((0..self.n).map(|i| self.color(i, i) as u64), |_| false);
        NodeOrbitVector {
            colors,
            num_orbits: k,
        }
    }

    /// `true` iff every class of `self` lies inside one class of `coarser`.
    pub fn refines(&self, coarser: &EdgeOrbitMatrix) -> Result<bool, OrbitError> {
        same_n(self.n, coarser.n)?;
        let mut map: HashMap<u32, u32> = HashMap::new();
        for (a, b) in self.colors.iter().zip(&coarser.colors) {
            match map.get(a) {
                Some(prev) if prev != b => return Ok(false),
                Some(_) => {}
                None => {
                    map.insert(*a, *b);
                }
            }
        }
        Ok(true)
    }

    /// CSV with `n` rows of `n` integers; masked cells are written as `-1`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.colors.len() * 3);
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    s.push(',');
                }
                if self.is_masked(i, j) {
                    s.push_str("-1");
                } else {
                    let _ = write!(s, "{}", self.color(i, j));
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, OrbitError> {
        let rows: Vec<(usize, Vec<i64>)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| parse_row(l, k + 1).map(|r| (k + 1, r)))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        if n == 0 {
            return Err(OrbitError::Csv {
                line: 1,
                msg: "empty input".into(),
            });
        }
        let mut raw = Vec::with_capacity(n * n);
        for (line, row) in &rows {
            if row.len() != n {
                return Err(OrbitError::Csv {
                    line: *line,
                    msg: format!("expected {n} columns, found {}", row.len()),
                });
            }
            for &c in row {
                if c < -1 {
                    return Err(OrbitError::Csv {
                        line: *line,
                        msg: format!("invalid color {c}"),
                    });
                }
                raw.push(c);
            }
        }
        let (colors, k) = canonical_ids(raw.iter().map(|&c| c as u64), |idx| raw[idx] == -1);
        let expected: Vec<i64> = colors
            .iter()
            .map(|&c| if c as usize == k { -1 } else { c as i64 })
            .collect();
        if expected != raw {
            return Err(OrbitError::Csv {
                line: 1,
                msg: "colors are not canonically numbered".into(),
            });
        }
        Ok(EdgeOrbitMatrix {
            n,
            colors,
            num_orbits: k,
        })
    }

    /// Build from arbitrary per-cell labels (row-major), renumbering
    /// canonically. Useful for indicator colorings and tests.
    pub fn from_labels(n: usize, labels: &[u64]) -> Result<Self, OrbitError> {
        if labels.len() != n * n {
            return Err(OrbitError::SizeMismatch {
                left: n * n,
                right: labels.len(),
            });
        }
        let (colors, k) = canonical_ids(labels.iter().copied(), |_| false);
        Ok(EdgeOrbitMatrix {
            n,
            colors,
            num_orbits: k,
        })
    }
}

/// Boolean `n x n` matrix of retained edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask {
    n: usize,
    keep: Vec<bool>,
}

impl SupportMask {
    pub fn full(n: usize) -> Self {
        SupportMask {
            n,
            keep: vec![true; n * n],
        }
    }

    pub fn empty(n: usize) -> Self {
        SupportMask {
            n,
            keep: vec![false; n * n],
        }
    }

    pub fn diagonal(n: usize) -> Self {
        let mut m = SupportMask::empty(n);
        for i in 0..n {
            m.keep[i * n + i] = true;
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        SupportMask {
            n,
            keep: (0..n * n).map(|k| f(k / n, k % n)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.n + j]
    }

    /// Whether every generator maps retained edges onto retained edges.
    pub fn is_invariant_under(&self, g: &GeneratorSet) -> Result<bool, OrbitError> {
        same_n(self.n, g.degree())?;
        Ok(g.gens().iter().all(|s| {
            (0..self.n).all(|i| {
                (0..self.n).all(|j| self.keeps(i, j) == self.keeps(s.apply(i), s.apply(j)))
            })
        }))
    }

    /// `n` rows of `n` comma-separated `0`/`1` entries.
    pub fn from_csv(text: &str) -> Result<Self, OrbitError> {
        let rows: Vec<Vec<i64>> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| parse_row(l, k + 1))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        let mut keep = Vec::with_capacity(n * n);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(OrbitError::Csv {
                    line: k + 1,
                    msg: format!("expected {n} columns, found {}", row.len()),
                });
            }
            for &v in row {
                match v {
                    0 => keep.push(false),
                    1 => keep.push(true),
                    _ => {
                        return Err(OrbitError::Csv {
                            line: k + 1,
                            msg: format!("mask entries must be 0 or 1, found {v}"),
                        })
                    }
                }
            }
        }
        Ok(SupportMask { n, keep })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<u32> = (0..self.n).map(|j| self.keeps(i, j) as u32).collect();
            s.push_str(&join(&row));
            s.push('\n');
        }
        s
    }
}

/// Literal lift of a generator to the action on encoded pairs `a*n + b`.
pub fn lift_generator(sigma: &Permutation) -> Result<Permutation, OrbitError> {
    let n = sigma.degree();
    if n * n > MAX_DEGREE {
        return Err(OrbitError::TooLarge {
            n,
            max: MAX_EDGE_N,
        });
    }
    let mut images = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            images.push(sigma.apply(a) * n + sigma.apply(b));
        }
    }
    Ok(Permutation::from_images(images)?)
}

/// Edge orbits by BFS over pairs with generator images, `O(r n^2)`.
pub fn edge_orbits(g: &GeneratorSet) -> Result<EdgeOrbitMatrix, OrbitError> {
    let n = g.degree();
    if n > MAX_EDGE_N {
        return Err(OrbitError::TooLarge {
            n,
            max: MAX_EDGE_N,
        });
    }
    let cells = n * n;
    let mut colors = vec![u32::MAX; cells];
    let mut next = 0u32;
    let mut queue = Vec::new();
    for start in 0..cells {
        if colors[start] != u32::MAX {
            continue;
        }
        colors[start] = next;
        queue.clear();
        queue.push(start);
        while let Some(c) = queue.pop() {
            let (i, j) = (c / n, c % n);
            for s in g.gens() {
                let d = s.apply(i) * n + s.apply(j);
                if colors[d] == u32::MAX {
                    colors[d] = next;
                    queue.push(d);
                }
            }
        }
        next += 1;
    }
    Ok(EdgeOrbitMatrix {
        n,
        colors,
        num_orbits: next as usize,
    })
}

/// The same partition computed through the lifted generators acting on
/// `0..n^2` as a permutation group.
pub fn edge_orbits_via_lift(g: &GeneratorSet) -> Result<EdgeOrbitMatrix, OrbitError> {
    let n = g.degree();
    let lifted = g
        .gens()
        .iter()
        .map(lift_generator)
        .collect::<Result<Vec<_>, _>>()?;
    let delta = GeneratorSet::new(n * n, lifted)?;
    let mut label = vec![0u64; n * n];
    for (k, orb) in crate::permgroup::all_orbits(&delta).iter().enumerate() {
        for &c in orb {
            label[c] = k as u64;
        }
    }
    EdgeOrbitMatrix::from_labels(n, &label)
}

pub fn node_orbits(g: &GeneratorSet) -> NodeOrbitVector {
    let mut label = vec![0u64; g.degree()];
    for (k, orb) in crate::permgroup::all_orbits(g).iter().enumerate() {
        for &i in orb {
            label[i] = k as u64;
        }
    }
    let (colors, num_orbits) = canonical_ids(label.into_iter(), |_| false);
    NodeOrbitVector { colors, num_orbits }
}

/// `true` iff `colors[p(i)][p(j)] == colors[i][j]` for all cells.
pub fn preserves_colors(p: &Permutation, a2: &EdgeOrbitMatrix) -> Result<bool, OrbitError> {
    same_n(p.degree(), a2.n)?;
    let n = a2.n;
    Ok((0..n).all(|i| (0..n).all(|j| a2.color(p.apply(i), p.apply(j)) == a2.color(i, j))))
}

/// Enumeration oracle: unite every pair with its image under every group
/// element. Limited to `n <= 8`.
pub fn brute_force_edge_orbits(g: &GeneratorSet) -> Result<EdgeOrbitMatrix, OrbitError> {
    let n = g.degree();
    if n > MAX_BRUTE_FORCE_N {
        return Err(OrbitError::TooLarge {
            n,
            max: MAX_BRUTE_FORCE_N,
        });
    }
    let chain = StrongGenChain::new(g);
    let order = chain.order_u128() as usize;
    let images: Vec<Vec<u16>> = par::map_range(order, |k| {
        let s = chain.element_at(k as u128);
        (0..n * n)
            .map(|c| (s.apply(c / n) * n + s.apply(c % n)) as u16)
            .collect()
    });
    let mut uf = UnionFind::new(n * n);
    for img in &images {
        for (c, &d) in img.iter().enumerate() {
            uf.union(c, d as usize);
        }
    }
    let roots: Vec<u64> = (0..n * n).map(|c| uf.find(c) as u64).collect();
    EdgeOrbitMatrix::from_labels(n, &roots)
}

/// Keep only cells retained by `mask`; the others take the sentinel id and
/// live ids are renumbered canonically over retained cells.
pub fn restrict_support(
    a2: &EdgeOrbitMatrix,
    mask: &SupportMask,
) -> Result<EdgeOrbitMatrix, OrbitError> {
    same_n(a2.n, mask.n)?;
    let (colors, k) = canonical_ids(a2.colors.iter().map(|&c| c as u64), |idx| {
        !mask.keep[idx] || a2.colors[idx] == a2.sentinel()
    });
    Ok(EdgeOrbitMatrix {
        n: a2.n,
        colors,
        num_orbits: k,
    })
}

/// Product coloring: two cells share a color iff they share colors in both
/// inputs. A cell is masked only when masked in both; otherwise a sentinel
/// is treated as an ordinary color value.
pub fn combine_colorings(
    a: &EdgeOrbitMatrix,
    b: &EdgeOrbitMatrix,
) -> Result<EdgeOrbitMatrix, OrbitError> {
    same_n(a.n, b.n)?;
    let keys = a
        .colors
        .iter()
        .zip(&b.colors)
        .map(|(&x, &y)| ((x as u64) << 32) | y as u64);
    let (colors, k) = canonical_ids(keys, |idx| {
        a.colors[idx] == a.sentinel() && b.colors[idx] == b.sentinel()
    });
    Ok(EdgeOrbitMatrix {
        n: a.n,
        colors,
        num_orbits: k,
    })
}

/// Renumber labels by first occurrence. Masked positions take id `count`
/// (the number of live ids).
fn canonical_ids(
    labels: impl Iterator<Item = u64>,
    masked: impl Fn(usize) -> bool,
) -> (Vec<u32>, usize) {
    let mut map: HashMap<u64, u32> = HashMap::new();
    let mut out = Vec::new();
    let mut masked_idx = Vec::new();
    for (idx, l) in labels.enumerate() {
        if masked(idx) {
            masked_idx.push(idx);
            out.push(0);
            continue;
        }
        let next = map.len() as u32;
        out.push(*map.entry(l).or_insert(next));
    }
    let k = map.len();
    for idx in masked_idx {
        out[idx] = k as u32;
    }
    (out, k)
}

fn same_n(a: usize, b: usize) -> Result<(), OrbitError> {
    if a != b {
        Err(OrbitError::SizeMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

fn join(v: &[u32]) -> String {
    let mut s = String::new();
    for (k, x) in v.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<i64>, OrbitError> {
    line.trim()
        .split(',')
        .map(|t| {
            t.trim().parse::<i64>().map_err(|_| OrbitError::Csv {
                line: lineno,
                msg: format!("not an integer: {t:?}"),
            })
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_images(v.to_vec()).unwrap()
    }

    fn gens(n: usize, v: Vec<Permutation>) -> GeneratorSet {
        GeneratorSet::new(n, v).unwrap()
    }

    fn sym(n: usize) -> GeneratorSet {
        gens(
            n,
            (0..n - 1)
                .map(|i| Permutation::transposition(n, i, i + 1).unwrap())
                .collect(),
        )
    }

    fn cyc(n: usize) -> GeneratorSet {
        gens(n, vec![p(&(0..n).map(|i| (i + 1) % n).collect::<Vec<_>>())])
    }

    fn rev(n: usize) -> GeneratorSet {
        gens(n, vec![p(&(0..n).rev().collect::<Vec<_>>())])
    }

    #[test]
    fn lift_examples() {
        assert!(lift_generator(&Permutation::identity(5).unwrap())
            .unwrap()
            .is_identity());
        assert_eq!(lift_generator(&p(&[1, 0])).unwrap(), p(&[3, 2, 1, 0]));
        assert!(lift_generator(&Permutation::identity(65).unwrap()).is_err());
    }

    #[test]
    fn lift_preserves_cyclic_order() {
        let c5 = cyc(5);
        let lifted = gens(25, vec![lift_generator(&c5.gens()[0]).unwrap()]);
        assert_eq!(
            StrongGenChain::new(&lifted).order(),
            StrongGenChain::new(&c5).order()
        );
    }

    #[test]
    fn edge_orbit_examples() {
        let s7 = edge_orbits(&sym(7)).unwrap();
        assert_eq!(s7.num_orbits(), 2);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(s7.color(i, j), (i != j) as u32);
            }
        }
        assert_eq!(
            edge_orbits(&GeneratorSet::trivial(4).unwrap())
                .unwrap()
                .num_orbits(),
            16
        );
        let c4 = edge_orbits(&cyc(4)).unwrap();
        assert_eq!(c4.num_orbits(), 4);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        let same_diff = (j + 4 - i) % 4 == (l + 4 - k) % 4;
                        assert_eq!(c4.color(i, j) == c4.color(k, l), same_diff);
                    }
                }
            }
        }
        assert!(edge_orbits(&GeneratorSet::trivial(65).unwrap()).is_err());
    }

    #[test]
    fn lift_path_matches_bfs_path() {
        for g in [sym(5), cyc(6), rev(7), GeneratorSet::trivial(3).unwrap()] {
            assert_eq!(edge_orbits(&g).unwrap(), edge_orbits_via_lift(&g).unwrap());
        }
    }

    #[test]
    fn node_orbit_examples() {
        assert!(node_orbits(&sym(10)).colors().iter().all(|&c| c == 0));
        let fix_first = gens(
            10,
            (1..9)
                .map(|i| Permutation::transposition(10, i, i + 1).unwrap())
                .collect(),
        );
        assert_eq!(
            node_orbits(&fix_first).colors(),
            &[0, 1, 1, 1, 1, 1, 1, 1, 1, 1]
        );
    }

    #[test]
    fn preserves_colors_examples() {
        let r4 = rev(4);
        let a2 = edge_orbits(&r4).unwrap();
        assert!(preserves_colors(&r4.gens()[0], &a2).unwrap());
        assert!(!preserves_colors(&Permutation::transposition(4, 0, 1).unwrap(), &a2).unwrap());
        assert!(preserves_colors(&Permutation::identity(3).unwrap(), &a2).is_err());
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(
            brute_force_edge_orbits(&GeneratorSet::trivial(3).unwrap())
                .unwrap()
                .num_orbits(),
            9
        );
        let r4 = brute_force_edge_orbits(&rev(4)).unwrap();
        assert_eq!(r4.num_orbits(), 8);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r4.color(i, j), r4.color(3 - i, 3 - j));
            }
        }
        assert!(brute_force_edge_orbits(&sym(9)).is_err());
    }

    #[test]
    fn restrict_examples() {
        let s4 = edge_orbits(&sym(4)).unwrap();
        assert_eq!(restrict_support(&s4, &SupportMask::full(4)).unwrap(), s4);
        let empty = restrict_support(&s4, &SupportMask::empty(4)).unwrap();
        assert_eq!(empty.num_orbits(), 0);
        assert!((0..4).all(|i| (0..4).all(|j| empty.is_masked(i, j))));
        let diag = restrict_support(&s4, &SupportMask::diagonal(4)).unwrap();
        assert_eq!(diag.num_orbits(), 1);
        assert!(diag.is_masked(0, 1) && !diag.is_masked(2, 2));
        assert!(restrict_support(&s4, &SupportMask::full(3)).is_err());
    }

    #[test]
    fn combine_examples() {
        let s4 = edge_orbits(&sym(4)).unwrap();
        assert_eq!(combine_colorings(&s4, &s4).unwrap(), s4);
        let triv = edge_orbits(&GeneratorSet::trivial(4).unwrap()).unwrap();
        assert_eq!(combine_colorings(&s4, &triv).unwrap(), triv);
        let labels: Vec<u64> = (0..16).map(|c| (c / 4 == c % 4) as u64).collect();
        let indicator = EdgeOrbitMatrix::from_labels(4, &labels).unwrap();
        assert_eq!(combine_colorings(&s4, &indicator).unwrap().num_orbits(), 2);
        let sparse = restrict_support(&s4, &SupportMask::diagonal(4)).unwrap();
        let weak = combine_colorings(&s4, &sparse).unwrap();
        assert_eq!(weak.num_orbits(), 2);
        assert!(!weak.has_masked());
    }

    #[test]
    fn csv_round_trip_with_sentinel() {
        let s4 = edge_orbits(&cyc(4)).unwrap();
        let mask = SupportMask::from_fn(4, |i, j| (i + j) % 2 == 0);
        let r = restrict_support(&s4, &mask).unwrap();
        let text = r.to_csv();
        assert!(text.contains("-1"));
        assert_eq!(EdgeOrbitMatrix::from_csv(&text).unwrap(), r);
        assert_eq!(EdgeOrbitMatrix::from_csv(&s4.to_csv()).unwrap(), s4);
        assert!(EdgeOrbitMatrix::from_csv("1,0\n0,1\n").is_err());
        assert!(EdgeOrbitMatrix::from_csv("0,1\n1\n").is_err());
        let nodes = node_orbits(&cyc(5));
        assert_eq!(NodeOrbitVector::from_csv(&nodes.to_csv()).unwrap(), nodes);
        assert_eq!(SupportMask::from_csv(&mask.to_csv()).unwrap(), mask);
    }

    #[test]
    fn refinement() {
        let s4 = edge_orbits(&sym(4)).unwrap();
        let c4 = edge_orbits(&cyc(4)).unwrap();
        assert!(c4.refines(&s4).unwrap());
        assert!(!s4.refines(&c4).unwrap());
    }

    #[test]
    fn support_invariance() {
        assert!(SupportMask::diagonal(5).is_invariant_under(&sym(5)).unwrap());
        let path = SupportMask::from_fn(5, |i, j| i.abs_diff(j) == 1);
        assert!(path.is_invariant_under(&rev(5)).unwrap());
        assert!(!path.is_invariant_under(&sym(5)).unwrap());
    }
}
