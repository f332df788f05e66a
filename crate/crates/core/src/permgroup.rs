//! Exact permutation arithmetic and stabilizer chains.
//!
//! Composition convention, used everywhere in this crate:
//! `a.compose(&b)` is the permutation `i -> a(b(i))`, i.e. `b` is applied first.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;
use thiserror::Error;

/// Largest supported degree. Covers the lifted action on pairs for
/// sequences of length 64.
pub const MAX_DEGREE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },
    #[error("degree {0} out of range (must be 1..={max})", max = MAX_DEGREE)]
    DegreeOutOfRange(usize),
    #[error("images do not form a bijection on 0..{0}")]
    NotABijection(usize),
    #[error("point {point} out of range for degree {degree}")]
    PointOutOfRange { point: usize, degree: usize },
    #[error("malformed permutation text: {0}")]
    Malformed(String),
}

/// A permutation of `0..n` in one-line notation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Result<Self, GroupError> {
        check_degree(n)?;
        Ok(Permutation {
            images: (0..n).collect(),
        })
    }

    pub fn from_images(images: Vec<usize>) -> Result<Self, GroupError> {
        let n = images.len();
        check_degree(n)?;
        let mut seen = vec![false; n];
        for &x in &images {
            if x >= n || seen[x] {
                return Err(GroupError::NotABijection(n));
            }
            seen[x] = true;
        }
        Ok(Permutation { images })
    }

    /// Product of disjoint or overlapping cycles, applied right to left.
    pub fn from_cycles(n: usize, cycles: &[&[usize]]) -> Result<Self, GroupError> {
        let mut p = Permutation::identity(n)?;
        for cycle in cycles {
            let mut images: Vec<usize> = (0..n).collect();
            for (k, &a) in cycle.iter().enumerate() {
                let b = cycle[(k + 1) % cycle.len()];
                if a >= n || b >= n {
                    return Err(GroupError::PointOutOfRange {
                        point: a.max(b),
                        degree: n,
                    });
                }
                images[a] = b;
            }
            let c = Permutation::from_images(images)?;
            p = p.compose(&c)?;
        }
        Ok(p)
    }

    pub fn transposition(n: usize, a: usize, b: usize) -> Result<Self, GroupError> {
        Permutation::from_cycles(n, &[&[a, b]])
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.images[i]
    }

    /// `i -> self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation, GroupError> {
        if self.degree() != other.degree() {
            return Err(GroupError::DegreeMismatch {
                left: self.degree(),
                right: other.degree(),
            });
        }
        Ok(self.compose_unchecked(other))
    }

    pub(crate) fn compose_unchecked(&self, other: &Permutation) -> Permutation {
        Permutation {
            images: other.images.iter().map(|&j| self.images[j]).collect(),
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.degree()];
        for (i, &j) in self.images.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { images: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn smallest_moved_point(&self) -> Option<usize> {
        self.images.iter().enumerate().position(|(i, &j)| i != j)
    }

    /// `true` for even permutations.
    pub fn is_even(&self) -> bool {
        let n = self.degree();
        let mut seen = vec![false; n];
        let mut transpositions = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.images[i];
                len += 1;
            }
            transpositions += len - 1;
        }
        transpositions % 2 == 0
    }
}

fn check_degree(n: usize) -> Result<(), GroupError> {
    if n == 0 || n > MAX_DEGREE {
        Err(GroupError::DegreeOutOfRange(n))
    } else {
        Ok(())
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// `perm(n): i0,i1,...`
impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "perm({}): ", self.degree())?;
        for (k, x) in self.images.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

impl FromStr for Permutation {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let rest = s
            .strip_prefix("perm(")
            .ok_or_else(|| GroupError::Malformed(s.to_string()))?;
        let (deg, body) = rest
            .split_once("):")
            .ok_or_else(|| GroupError::Malformed(s.to_string()))?;
        let n: usize = deg
            .trim()
            .parse()
            .map_err(|_| GroupError::Malformed(s.to_string()))?;
        let images = body
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| GroupError::Malformed(s.to_string()))?;
        if images.len() != n {
            return Err(GroupError::DegreeMismatch {
                left: n,
                right: images.len(),
            });
        }
        Permutation::from_images(images)
    }
}

/// Generators of a permutation group. An empty list denotes the trivial group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSet {
    degree: usize,
    gens: Vec<Permutation>,
}

impl GeneratorSet {
    pub fn new(degree: usize, gens: Vec<Permutation>) -> Result<Self, GroupError> {
        check_degree(degree)?;
        for g in &gens {
            if g.degree() != degree {
                return Err(GroupError::DegreeMismatch {
                    left: degree,
                    right: g.degree(),
                });
            }
        }
        Ok(GeneratorSet { degree, gens })
    }

    pub fn trivial(degree: usize) -> Result<Self, GroupError> {
        GeneratorSet::new(degree, Vec::new())
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn gens(&self) -> &[Permutation] {
        &self.gens
    }

    /// Orbit of `point` in BFS order (generators tried in list order).
    pub fn orbit(&self, point: usize) -> Result<Vec<usize>, GroupError> {
        if point >= self.degree {
            return Err(GroupError::PointOutOfRange {
                point,
                degree: self.degree,
            });
        }
        let mut seen = vec![false; self.degree];
        let mut out = vec![point];
        seen[point] = true;
        let mut head = 0;
        while head < out.len() {
            let p = out[head];
            head += 1;
            for g in &self.gens {
                let q = g.apply(p);
                if !seen[q] {
                    seen[q] = true;
                    out.push(q);
                }
            }
        }
        Ok(out)
    }
}

/// One level of a stabilizer chain: a base point, the strong generators
/// fixing all earlier base points, and a transversal of the basic orbit.
#[derive(Debug, Clone)]
struct Level {
    base: usize,
    gens: Vec<Permutation>,
    orbit: Vec<usize>,
    /// point -> index into `reps`, `usize::MAX` when outside the orbit.
    slot: Vec<usize>,
    /// `reps[k]` maps `base` to `orbit[k]`.
    reps: Vec<Permutation>,
    inv_reps: Vec<Permutation>,
}

impl Level {
    fn new(base: usize, degree: usize) -> Self {
        let id = Permutation {
            images: (0..degree).collect(),
        };
        let mut slot = vec![usize::MAX; degree];
        slot[base] = 0;
        Level {
            base,
            gens: Vec::new(),
            orbit: vec![base],
            slot,
            reps: vec![id.clone()],
            inv_reps: vec![id],
        }
    }

    fn rep_of(&self, point: usize) -> Option<(&Permutation, &Permutation)> {
        match self.slot[point] {
            usize::MAX => None,
            k => Some((&self.reps[k], &self.inv_reps[k])),
        }
    }
}

/// Base and strong generating set built by the Schreier-Sims algorithm.
#[derive(Debug, Clone)]
pub struct StrongGenChain {
    degree: usize,
    levels: Vec<Level>,
}

impl StrongGenChain {
    /// Deterministic incremental Schreier-Sims. New base points are the
    /// smallest point moved by the generator that forces a new level.
    pub fn new(gens: &GeneratorSet) -> Self {
        let mut chain = StrongGenChain {
            degree: gens.degree(),
            levels: Vec::new(),
        };
        for g in gens.gens() {
            if !g.is_identity() {
                chain.insert(0, g.clone());
            }
        }
        chain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn base(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.base).collect()
    }

    pub fn basic_orbit_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.orbit.len()).collect()
    }

    /// All strong generators, level by level (level `i` generators fix base
    /// points `0..i`).
    pub fn strong_gens(&self) -> Vec<Permutation> {
        let mut out: Vec<Permutation> = Vec::new();
        for l in &self.levels {
            for g in &l.gens {
                if !out.contains(g) {
                    out.push(g.clone());
                }
            }
        }
        out
    }

    pub fn level_gens(&self, level: usize) -> &[Permutation] {
        &self.levels[level].gens
    }

    pub fn order(&self) -> BigUint {
        self.levels
            .iter()
            .fold(BigUint::from(1u32), |acc, l| acc * BigUint::from(l.orbit.len()))
    }

    pub fn contains(&self, p: &Permutation) -> Result<bool, GroupError> {
        if p.degree() != self.degree {
            return Err(GroupError::DegreeMismatch {
                left: self.degree,
                right: p.degree(),
            });
        }
        Ok(self.sift_from(0, p.clone()).is_identity())
    }

    fn sift_from(&self, start: usize, mut g: Permutation) -> Permutation {
        for level in &self.levels[start..] {
            let q = g.apply(level.base);
            match level.rep_of(q) {
                Some((_, inv)) => g = inv.compose_unchecked(&g),
                None => return g,
            }
        }
        g
    }

    fn insert(&mut self, depth: usize, g: Permutation) {
        if self.sift_from(depth, g.clone()).is_identity() {
            return;
        }
        if depth == self.levels.len() {
            let base = g
                .smallest_moved_point()
                .expect("non-identity residue moves a point");
            self.levels.push(Level::new(base, self.degree));
        }
        self.levels[depth].gens.push(g.clone());

        // Schreier generators for the new generator at every known orbit point.
        let known = self.levels[depth].orbit.len();
        for k in 0..known {
            let sg = self.schreier_gen(depth, k, &g);
            if let Some(sg) = sg {
                self.insert(depth + 1, sg);
            }
        }
        // Extend the orbit; each new point needs Schreier generators for all
        // generators of this level. Transversal entries are never replaced.
        let mut k = 0;
        while k < self.levels[depth].orbit.len() {
            let p = self.levels[depth].orbit[k];
            let ngens = self.levels[depth].gens.len();
            for gi in 0..ngens {
                let s = self.levels[depth].gens[gi].clone();
                let q = s.apply(p);
                let level = &mut self.levels[depth];
                if level.slot[q] == usize::MAX {
                    let rep = s.compose_unchecked(&level.reps[k]);
                    level.slot[q] = level.reps.len();
                    level.orbit.push(q);
                    level.inv_reps.push(rep.inverse());
                    level.reps.push(rep);
                    let new_k = level.reps.len() - 1;
                    let all_gens = level.gens.clone();
                    for t in &all_gens {
                        if let Some(sg) = self.schreier_gen(depth, new_k, t) {
                            self.insert(depth + 1, sg);
                        }
                    }
                }
            }
            k += 1;
        }
    }

    /// `u_{t(p)}^{-1} t u_p` for orbit slot `k` holding `p`, or `None` when trivial.
    fn schreier_gen(&self, depth: usize, k: usize, t: &Permutation) -> Option<Permutation> {
        let level = &self.levels[depth];
        let p = level.orbit[k];
        let tp = t.apply(p);
        let (_, inv) = level.rep_of(tp)?;
        let h = inv.compose_unchecked(&t.compose_unchecked(&level.reps[k]));
        if h.is_identity() {
            None
        } else {
            Some(h)
        }
    }

    /// Uniform random element: one uniformly chosen transversal
    /// representative per level, multiplied top-down.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> Permutation {
        let mut g = Permutation {
            images: (0..self.degree).collect(),
        };
        for level in &self.levels {
            let k = rng.random_range(0..level.reps.len());
            g = g.compose_unchecked(&level.reps[k]);
        }
        g
    }

    /// Element indexed by a mixed-radix number over the basic orbits.
    /// Every index in `0..order` yields a distinct element.
    pub fn element_at(&self, mut index: u128) -> Permutation {
        let mut g = Permutation {
            images: (0..self.degree).collect(),
        };
        for level in &self.levels {
            let m = level.reps.len() as u128;
            let k = (index % m) as usize;
            index /= m;
            g = g.compose_unchecked(&level.reps[k]);
        }
        g
    }

    /// Enumerate all elements. Only sensible for small groups.
    pub fn elements(&self) -> impl Iterator<Item = Permutation> + '_ {
        let order: u128 = self
            .levels
            .iter()
            .map(|l| l.reps.len() as u128)
            .product();
        (0..order).map(move |i| self.element_at(i))
    }

    pub fn order_u128(&self) -> u128 {
        self.levels.iter().map(|l| l.reps.len() as u128).product()
    }
}

pub fn compose(a: &Permutation, b: &Permutation) -> Result<Permutation, GroupError> {
    a.compose(b)
}

pub fn schreier_sims(g: &GeneratorSet) -> StrongGenChain {
    StrongGenChain::new(g)
}

pub fn orbit(g: &GeneratorSet, point: usize) -> Result<Vec<usize>, GroupError> {
    g.orbit(point)
}

/// Orbits of the point action, each in BFS order, listed by smallest member.
pub fn all_orbits(g: &GeneratorSet) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.degree()];
    let mut out = Vec::new();
    for p in 0..g.degree() {
        if seen[p] {
            continue;
        }
        let mut orb = Vec::new();
        let mut queue = VecDeque::from([p]);
        seen[p] = true;
        while let Some(x) = queue.pop_front() {
            orb.push(x);
            for s in g.gens() {
                let y = s.apply(x);
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        out.push(orb);
    }
    out
}
