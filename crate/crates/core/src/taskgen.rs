//! Synthetic sequence tasks with equivariant (per-position) and invariant
//! (per-sequence) labels.
//!
//! Tokens are integers in `0..vocab`. Numeric tasks read a token as its
//! integer value; Detect Capital reads `0..v` as lowercase letters and
//! `v..2v` as the uppercase versions of the same letters.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::groupcatalog::GroupExpr;
use crate::par;
use crate::permgroup::Permutation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("unknown task '{0}' (valid: {valid})", valid = TaskName::valid_names())]
    UnknownTask(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degree mismatch: permutation of degree {perm} for sequence length {n}")]
    DegreeMismatch { perm: usize, n: usize },
    #[error("dataset line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskName {
    Intersect,
    SymmetricDifference,
    Palindrome,
    MonotoneRun,
    CyclicSum,
    CyclicProduct,
    DetectCapital,
    LongestPalindrome,
    SignOfPermutation,
}

impl TaskName {
    pub const ALL: [TaskName; 9] = [
        TaskName::Intersect,
        TaskName::SymmetricDifference,
        TaskName::Palindrome,
        TaskName::MonotoneRun,
        TaskName::CyclicSum,
        TaskName::CyclicProduct,
        TaskName::DetectCapital,
        TaskName::LongestPalindrome,
        TaskName::SignOfPermutation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskName::Intersect => "intersect",
            TaskName::SymmetricDifference => "symmetric_difference",
            TaskName::Palindrome => "palindrome",
            TaskName::MonotoneRun => "monotone_run",
            TaskName::CyclicSum => "cyclic_sum",
            TaskName::CyclicProduct => "cyclic_product",
            TaskName::DetectCapital => "detect_capital",
            TaskName::LongestPalindrome => "longest_palindrome",
            TaskName::SignOfPermutation => "sign_of_permutation",
        }
    }

    fn valid_names() -> String {
        TaskName::ALL
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Whether per-position labels exist for this task.
    pub fn has_equivariant_labels(&self) -> bool {
        !matches!(
            self,
            TaskName::DetectCapital | TaskName::LongestPalindrome | TaskName::SignOfPermutation
        )
    }

    /// The symmetry group the labels respect at length `n`.
    pub fn default_group(&self, n: usize) -> GroupExpr {
        match self {
            TaskName::Intersect | TaskName::SymmetricDifference => GroupExpr::Intersect(n),
            TaskName::Palindrome | TaskName::MonotoneRun => GroupExpr::Rev(n),
            TaskName::CyclicSum | TaskName::CyclicProduct => GroupExpr::Cyclic(n),
            TaskName::DetectCapital => GroupExpr::FixFirst(n),
            TaskName::LongestPalindrome => GroupExpr::Sym(n),
            TaskName::SignOfPermutation => GroupExpr::Alt(n),
        }
    }

    pub fn uses_window(&self) -> bool {
        matches!(
            self,
            TaskName::Palindrome
                | TaskName::MonotoneRun
                | TaskName::CyclicSum
                | TaskName::CyclicProduct
        )
    }

    /// Invariant labels that are 0/1 flags.
    pub fn invariant_is_boolean(&self) -> bool {
        matches!(
            self,
            TaskName::Palindrome
                | TaskName::MonotoneRun
                | TaskName::DetectCapital
                | TaskName::SignOfPermutation
        )
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let key = match key.as_str() {
            "cyclicsum" => "cyclic_sum",
            "cyclicproduct" => "cyclic_product",
            "symdiff" | "symmetricdifference" => "symmetric_difference",
            "monotonerun" => "monotone_run",
            "detectcapital" => "detect_capital",
            "longestpalindrome" => "longest_palindrome",
            "sign" | "signofpermutation" => "sign_of_permutation",
            other => other,
        }
        .to_string();
        TaskName::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelMode {
    EquivariantBinary,
    InvariantScalar,
}

impl LabelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelMode::EquivariantBinary => "eq",
            LabelMode::InvariantScalar => "inv",
        }
    }
}

impl FromStr for LabelMode {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "eq" => Ok(LabelMode::EquivariantBinary),
            "inv" => Ok(LabelMode::InvariantScalar),
            other => Err(TaskError::InvalidSpec(format!(
                "mode must be 'eq' or 'inv', got '{other}'"
            ))),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: TaskName,
    pub n: usize,
    pub vocab: usize,
    /// `k` for Palindrome / Monotone Run, `c` for the cyclic tasks.
    pub window: usize,
    pub mode: LabelMode,
    pub group: GroupExpr,
}

impl TaskSpec {
    /// Spec with the task's natural group and the default window.
    pub fn new(name: TaskName, n: usize, vocab: usize, mode: LabelMode) -> Result<Self, TaskError> {
        let spec = TaskSpec {
            name,
            n,
            vocab,
            window: DEFAULT_WINDOW,
            mode,
            group: name.default_group(n),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_window(mut self, window: usize) -> Result<Self, TaskError> {
        self.window = window;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::InvalidSpec(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.group.degree() != self.n {
            return bad(format!(
                "group degree {} differs from n = {}",
                self.group.degree(),
                self.n
            ));
        }
        if self.mode == LabelMode::EquivariantBinary && !self.name.has_equivariant_labels() {
            return bad(format!("{} has no equivariant labels", self.name));
        }
        match self.name {
            TaskName::Intersect | TaskName::SymmetricDifference if self.n % 2 != 0 => {
                bad(format!("{} needs an even n", self.name))
            }
            TaskName::DetectCapital if self.vocab < 2 || self.vocab % 2 != 0 => {
                bad("detect_capital needs an even vocab (lower and upper halves)".into())
            }
            TaskName::SignOfPermutation if self.vocab != self.n => {
                bad("sign_of_permutation needs vocab = n".into())
            }
            _ if self.vocab == 0 => bad("vocab must be positive".into()),
            t if t.uses_window() && (self.window == 0 || self.window > self.n) => {
                bad(format!("window {} must lie in 1..={}", self.window, self.n))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub input: Vec<u32>,
    pub eq_labels: Option<Vec<u8>>,
    pub inv_label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub records: Vec<Record>,
    pub seed: u64,
}

/// Compute both label kinds for `input`. Equivariant labels are `None` for
/// tasks that only define an invariant target.
pub fn label(spec: &TaskSpec, input: &[u32]) -> Result<(Option<Vec<u8>>, f64), TaskError> {
    check_input(spec, input)?;
    let n = spec.n;
    let k = spec.window;
    Ok(match spec.name {
        TaskName::Intersect | TaskName::SymmetricDifference => {
            let h = n / 2;
            let left: HashSet<u32> = input[..h].iter().copied().collect();
            let right: HashSet<u32> = input[h..].iter().copied().collect();
            let present: Vec<u8> = (0..n)
                .map(|i| {
                    let other = if i < h { &right } else { &left };
                    other.contains(&input[i]) as u8
                })
                .collect();
            let shared = left.intersection(&right).count();
            if spec.name == TaskName::Intersect {
                (Some(present), shared as f64)
            } else {
                let bits = present.iter().map(|b| 1 - b).collect();
                // Half the size of the symmetric difference of the two sets:
                // unchanged when the halves are swapped.
                let sym = left.len() + right.len() - 2 * shared;
                (Some(bits), sym as f64 / 2.0)
            }
        }
        TaskName::Palindrome | TaskName::MonotoneRun => {
            let mut bits = vec![0u8; n];
            let mut any = false;
            for s in 0..=n - k {
                let w = &input[s..s + k];
                let hit = if spec.name == TaskName::Palindrome {
                    (0..k / 2).all(|t| w[t] == w[k - 1 - t])
                } else {
                    w.windows(2).all(|p| p[0] < p[1]) || w.windows(2).all(|p| p[0] > p[1])
                };
                if hit {
                    any = true;
                    bits[s..s + k].iter_mut().for_each(|b| *b = 1);
                }
            }
            (Some(bits), any as u8 as f64)
        }
        TaskName::CyclicSum | TaskName::CyclicProduct => {
            let score = |s: usize| -> f64 {
                let vals = (0..k).map(|t| input[(s + t) % n] as f64);
                if spec.name == TaskName::CyclicSum {
                    vals.sum()
                } else {
                    vals.product()
                }
            };
            let scores: Vec<f64> = (0..n).map(score).collect();
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // Every window achieving the maximum is marked.
            let mut bits = vec![0u8; n];
            for (s, &v) in scores.iter().enumerate() {
                if v == best {
                    (0..k).for_each(|t| bits[(s + t) % n] = 1);
                }
            }
            (Some(bits), best)
        }
        TaskName::DetectCapital => {
            let v = (spec.vocab / 2) as u32;
            let upper: Vec<bool> = input.iter().map(|&t| t >= v).collect();
            let all_upper = upper.iter().all(|&u| u);
            let all_lower = upper.iter().all(|&u| !u);
            let title = upper[0] && upper[1..].iter().all(|&u| !u);
            (None, (all_upper || all_lower || title) as u8 as f64)
        }
        TaskName::LongestPalindrome => {
            let mut counts = vec![0usize; spec.vocab];
            input.iter().for_each(|&t| counts[t as usize] += 1);
            let pairs: usize = counts.iter().map(|c| c / 2 * 2).sum();
            let odd = counts.iter().any(|c| c % 2 == 1);
            (None, (pairs + odd as usize) as f64)
        }
        TaskName::SignOfPermutation => {
            let perm = Permutation::from_images(input.iter().map(|&t| t as usize).collect())
                .map_err(|_| TaskError::InvalidInput("input is not a permutation".into()))?;
            // 0 for even, 1 for odd.
            (None, (!perm.is_even()) as u8 as f64)
        }
    })
}

fn check_input(spec: &TaskSpec, input: &[u32]) -> Result<(), TaskError> {
    if input.len() != spec.n {
        return Err(TaskError::InvalidInput(format!(
            "expected length {}, got {}",
            spec.n,
            input.len()
        )));
    }
    if let Some(t) = input.iter().find(|&&t| t as usize >= spec.vocab) {
        return Err(TaskError::InvalidInput(format!(
            "token {t} outside vocab {}",
            spec.vocab
        )));
    }
    Ok(())
}

/// Per-record generator: stream `index` of a ChaCha8 keyed by `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_input(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = spec.n;
    match spec.name {
        TaskName::SignOfPermutation => {
            let mut v: Vec<u32> = (0..n as u32).collect();
            v.shuffle(rng);
            v
        }
        TaskName::DetectCapital => {
            let v = (spec.vocab / 2) as u32;
            let letters: Vec<u32> = (0..n).map(|_| rng.random_range(0..v)).collect();
            let upper: Vec<bool> = if rng.random_bool(0.5) {
                match rng.random_range(0..3) {
                    0 => vec![true; n],
                    1 => vec![false; n],
                    _ => (0..n).map(|i| i == 0).collect(),
                }
            } else {
                (0..n).map(|_| rng.random_bool(0.5)).collect()
            };
            letters
                .iter()
                .zip(upper)
                .map(|(&l, u)| if u { l + v } else { l })
                .collect()
        }
        _ => (0..n)
            .map(|_| rng.random_range(0..spec.vocab as u32))
            .collect(),
    }
}

/// Generate `count` labelled records. Record `i` depends only on
/// `(seed, i)`, so the output is identical however the work is split.
pub fn generate(spec: &TaskSpec, count: usize, seed: u64) -> Result<Dataset, TaskError> {
    spec.validate()?;
    if count == 0 {
        return Err(TaskError::InvalidSpec("count must be positive".into()));
    }
    let records = par::map_range(count, |i| {
        let mut rng = record_rng(seed, i as u64);
        let input = sample_input(spec, &mut rng);
        let (eq, inv) = label(spec, &input).expect("sampled inputs are valid");
        Record {
            input,
            eq_labels: eq,
            inv_label: inv,
        }
    });
    Ok(Dataset {
        spec: spec.clone(),
        records,
        seed,
    })
}

/// Permute positions: the token at `i` moves to `g(i)`. Per-position labels
/// move the same way; the invariant label is kept.
pub fn apply_group_action(
    spec: &TaskSpec,
    g: &Permutation,
    record: &Record,
) -> Result<Record, TaskError> {
    if g.degree() != spec.n || record.input.len() != spec.n {
        return Err(TaskError::DegreeMismatch {
            perm: g.degree(),
            n: spec.n,
        });
    }
    Ok(Record {
        input: permute_positions(g, &record.input),
        eq_labels: record.eq_labels.as_ref().map(|e| permute_positions(g, e)),
        inv_label: record.inv_label,
    })
}

/// `out[g(i)] = v[i]`.
pub fn permute_positions<T: Copy + Default>(g: &Permutation, v: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); v.len()];
    for (i, &x) in v.iter().enumerate() {
        out[g.apply(i)] = x;
    }
    out
}

impl Dataset {
    pub fn header(&self) -> String {
        let mut h = format!(
            "task={} n={} vocab={} count={} seed={} mode={}",
            self.spec.name,
            self.spec.n,
            self.spec.vocab,
            self.records.len(),
            self.seed,
            self.spec.mode.as_str()
        );
        if self.spec.name.uses_window() && self.spec.window != DEFAULT_WINDOW {
            let _ = write!(h, " window={}", self.spec.window);
        }
        h
    }

    /// Header line, then `input<TAB>eq bits or -<TAB>invariant or -`.
    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.records {
            let ins: Vec<String> = r.input.iter().map(|t| t.to_string()).collect();
            s.push_str(&ins.join(" "));
            s.push('\t');
            match &r.eq_labels {
                Some(bits) => {
                    let b: Vec<String> = bits.iter().map(|t| t.to_string()).collect();
                    s.push_str(&b.join(" "));
                }
                None => s.push('-'),
            }
            s.push('\t');
            let _ = write!(s, "{}", r.inv_label);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Dataset, TaskError> {
        let fmt_err = |line: usize, msg: String| TaskError::Format { line, msg };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt_err(1, "empty file".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| fmt_err(1, format!("malformed header field '{kv}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| fmt_err(1, format!("missing header field '{k}'")))
        };
        let num = |k: &str| -> Result<u64, TaskError> {
            get(k)?
                .parse()
                .map_err(|_| fmt_err(1, format!("header field '{k}' is not an integer")))
        };
        let name: TaskName = get("task")?.parse()?;
        let mode: LabelMode = get("mode")?.parse()?;
        let mut spec = TaskSpec::new(name, num("n")? as usize, num("vocab")? as usize, mode)?;
        if fields.contains_key("window") {
            spec = spec.with_window(num("window")? as usize)?;
        }
        let count = num("count")? as usize;
        let seed = num("seed")?;
        let mut records = Vec::with_capacity(count);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(fmt_err(lineno, "expected three tab-separated columns".into()));
            }
            let input = cols[0]
                .split(' ')
                .map(|t| t.parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| fmt_err(lineno, "bad input token".into()))?;
            let eq_labels = if cols[1] == "-" {
                None
            } else {
                Some(
                    cols[1]
                        .split(' ')
                        .map(|t| match t {
                            "0" => Ok(0u8),
                            "1" => Ok(1u8),
                            _ => Err(fmt_err(lineno, format!("bad label bit '{t}'"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                )
            };
            let inv_label = cols[2]
                .parse::<f64>()
                .map_err(|_| fmt_err(lineno, "bad invariant label".into()))?;
            check_input(&spec, &input).map_err(|e| fmt_err(lineno, e.to_string()))?;
            records.push(Record {
                input,
                eq_labels,
                inv_label,
            });
        }
        if records.len() != count {
            return Err(fmt_err(
                1,
                format!("header says {count} records, found {}", records.len()),
            ));
        }
        Ok(Dataset {
            spec,
            records,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permgroup::{GeneratorSet, StrongGenChain};

    fn spec(name: TaskName, n: usize, vocab: usize) -> TaskSpec {
        let mode = if name.has_equivariant_labels() {
            LabelMode::EquivariantBinary
        } else {
            LabelMode::InvariantScalar
        };
        TaskSpec::new(name, n, vocab, mode).unwrap()
    }

    // a=0, b=1, c=2, d=3
    #[test]
    fn table_examples() {
        let s = spec(TaskName::Intersect, 6, 4);
        assert_eq!(
            label(&s, &[0, 1, 2, 1, 2, 3]).unwrap(),
            (Some(vec![0, 1, 1, 1, 1, 0]), 2.0)
        );
        let s = spec(TaskName::SymmetricDifference, 6, 4);
        assert_eq!(
            label(&s, &[0, 1, 2, 1, 2, 3]).unwrap(),
            (Some(vec![1, 0, 0, 0, 0, 1]), 1.0)
        );
        let s = spec(TaskName::Palindrome, 5, 4);
        assert_eq!(
            label(&s, &[0, 1, 2, 1, 3]).unwrap(),
            (Some(vec![0, 1, 1, 1, 0]), 1.0)
        );
        let s = spec(TaskName::MonotoneRun, 5, 5);
        assert_eq!(
            label(&s, &[3, 1, 2, 4, 1]).unwrap(),
            (Some(vec![0, 1, 1, 1, 0]), 1.0)
        );
        let s = spec(TaskName::CyclicSum, 5, 10);
        assert_eq!(
            label(&s, &[7, 1, 2, 9, 8]).unwrap(),
            (Some(vec![1, 0, 0, 1, 1]), 24.0)
        );
        let s = spec(TaskName::CyclicProduct, 5, 6);
        assert_eq!(
            label(&s, &[1, 2, 4, 0, 5]).unwrap(),
            (Some(vec![1, 1, 0, 0, 1]), 10.0)
        );
        // vocab 8: a..d lowercase = 0..3, A..D uppercase = 4..7
        let s = spec(TaskName::DetectCapital, 4, 8);
        assert_eq!(label(&s, &[4, 1, 1, 1]).unwrap(), (None, 1.0));
        let s = spec(TaskName::LongestPalindrome, 8, 4);
        assert_eq!(label(&s, &[0, 1, 2, 2, 2, 2, 3, 3]).unwrap(), (None, 7.0));
        let s = spec(TaskName::SignOfPermutation, 4, 4);
        assert_eq!(label(&s, &[0, 1, 2, 3]).unwrap(), (None, 0.0));
        assert_eq!(label(&s, &[1, 0, 2, 3]).unwrap(), (None, 1.0));
        assert_eq!(label(&s, &[1, 2, 0, 3]).unwrap(), (None, 0.0));
    }

    #[test]
    fn detect_capital_cases() {
        let s = spec(TaskName::DetectCapital, 4, 8);
        assert_eq!(label(&s, &[4, 5, 6, 7]).unwrap().1, 1.0);
        assert_eq!(label(&s, &[0, 1, 2, 3]).unwrap().1, 1.0);
        assert_eq!(label(&s, &[0, 5, 2, 3]).unwrap().1, 0.0);
        assert_eq!(label(&s, &[4, 5, 2, 3]).unwrap().1, 0.0);
    }

    #[test]
    fn cyclic_ties_mark_every_maximizer() {
        let s = spec(TaskName::CyclicSum, 6, 5);
        // windows starting at 0 and 3 both sum to 6
        let (eq, inv) = label(&s, &[2, 2, 2, 0, 0, 0]).unwrap();
        assert_eq!(inv, 6.0);
        assert_eq!(eq.unwrap(), vec![1, 1, 1, 0, 0, 0]);
        let (eq, _) = label(&s, &[3, 0, 0, 3, 0, 0]).unwrap();
        assert_eq!(eq.unwrap(), oracle_cyclic(&[3, 0, 0, 3, 0, 0], 3));
    }

    fn oracle_cyclic(x: &[u32], c: usize) -> Vec<u8> {
        let n = x.len();
        let sums: Vec<u32> = (0..n).map(|s| (0..c).map(|t| x[(s + t) % n]).sum()).collect();
        let best = *sums.iter().max().unwrap();
        (0..n)
            .map(|i| {
                (0..n).any(|s| sums[s] == best && (0..c).any(|t| (s + t) % n == i)) as u8
            })
            .collect()
    }

    #[test]
    fn rejects_invalid_inputs() {
        let s = spec(TaskName::Intersect, 6, 4);
        assert!(label(&s, &[0, 1, 2]).is_err());
        assert!(label(&s, &[0, 1, 2, 1, 2, 4]).is_err());
        let s = spec(TaskName::SignOfPermutation, 3, 3);
        assert!(label(&s, &[0, 0, 1]).is_err());
        assert!(TaskSpec::new(TaskName::Intersect, 5, 4, LabelMode::EquivariantBinary).is_err());
        assert!(TaskSpec::new(TaskName::DetectCapital, 4, 7, LabelMode::InvariantScalar).is_err());
        assert!(
            TaskSpec::new(TaskName::DetectCapital, 4, 8, LabelMode::EquivariantBinary).is_err()
        );
        assert!("nope".parse::<TaskName>().is_err());
        assert_eq!("cyclicsum".parse::<TaskName>().unwrap(), TaskName::CyclicSum);
    }

    #[test]
    fn group_action_examples() {
        let s = spec(TaskName::Palindrome, 5, 4);
        let r = Record {
            input: vec![0, 1, 2, 1, 3],
            eq_labels: Some(vec![0, 1, 1, 1, 0]),
            inv_label: 1.0,
        };
        let id = Permutation::identity(5).unwrap();
        assert_eq!(apply_group_action(&s, &id, &r).unwrap(), r);
        let rev = Permutation::from_images(vec![4, 3, 2, 1, 0]).unwrap();
        let out = apply_group_action(&s, &rev, &r).unwrap();
        assert_eq!(out.input, vec![3, 1, 2, 1, 0]);
        assert_eq!(out.eq_labels, Some(vec![0, 1, 1, 1, 0]));

        let s = spec(TaskName::Intersect, 6, 4);
        let (eq, inv) = label(&s, &[0, 1, 2, 1, 2, 3]).unwrap();
        let r = Record {
            input: vec![0, 1, 2, 1, 2, 3],
            eq_labels: eq,
            inv_label: inv,
        };
        let swap = Permutation::from_images(vec![3, 4, 5, 0, 1, 2]).unwrap();
        let out = apply_group_action(&s, &swap, &r).unwrap();
        assert_eq!(out.input, vec![1, 2, 3, 0, 1, 2]);
        assert_eq!(out.eq_labels, Some(vec![1, 1, 0, 0, 1, 1]));
        assert_eq!(out.inv_label, 2.0);
        assert_eq!(label(&s, &out.input).unwrap().0, out.eq_labels);
        assert!(apply_group_action(&s, &id, &r).is_err());
    }

    #[test]
    fn sign_flips_under_odd_positions_only() {
        let s = spec(TaskName::SignOfPermutation, 7, 7);
        let ds = generate(&s, 50, 3).unwrap();
        let a7 = StrongGenChain::new(&s.group.to_generators().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let odd = Permutation::transposition(7, 2, 5).unwrap();
        for r in &ds.records {
            let g = a7.random_element(&mut rng);
            let moved = apply_group_action(&s, &g, r).unwrap();
            assert_eq!(label(&s, &moved.input).unwrap().1, r.inv_label);
            let flipped = apply_group_action(&s, &odd, r).unwrap();
            assert_eq!(label(&s, &flipped.input).unwrap().1, 1.0 - r.inv_label);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(TaskName::Intersect, 10, 7);
        let a = generate(&s, 100, 42).unwrap();
        let b = generate(&s, 100, 42).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate(&s, 100, 43).unwrap();
        assert_ne!(a.to_text(), c.to_text());
        assert!(generate(&s, 0, 1).is_err());
    }

    #[test]
    fn intersect_mean_matches_exact_expectation() {
        // E|set(L) & set(R)| = v * (1 - ((v-1)/v)^h)^2 with h = n/2 i.i.d. draws per half.
        let s = spec(TaskName::Intersect, 10, 7);
        let ds = generate(&s, 10_000, 11).unwrap();
        let mean = ds.records.iter().map(|r| r.inv_label).sum::<f64>() / 10_000.0;
        let p: f64 = 1.0 - (6.0f64 / 7.0).powi(5);
        let exact = 7.0 * p * p;
        assert!((exact - 2.0213).abs() < 1e-3);
        assert!((mean - exact).abs() < 0.05, "mean {mean} vs {exact}");
    }

    #[test]
    fn text_round_trip() {
        for name in TaskName::ALL {
            let vocab = match name {
                TaskName::SignOfPermutation => 8,
                TaskName::DetectCapital => 8,
                _ => 5,
            };
            let s = spec(name, 8, vocab);
            let ds = generate(&s, 30, 5).unwrap();
            let text = ds.to_text();
            let back = Dataset::from_text(&text).unwrap();
            assert_eq!(back, ds);
            assert_eq!(back.to_text(), text);
        }
        let s = spec(TaskName::CyclicSum, 8, 5).with_window(4).unwrap();
        let ds = generate(&s, 5, 1).unwrap();
        assert!(ds.header().ends_with("window=4"));
        assert_eq!(Dataset::from_text(&ds.to_text()).unwrap(), ds);
        assert!(Dataset::from_text("task=intersect n=4 vocab=3 count=1 seed=0 mode=eq\n0 1 2\t-\t0\n").is_err());
    }

    #[test]
    fn default_groups_have_matching_degree() {
        for name in TaskName::ALL {
            let g = name.default_group(8);
            assert_eq!(g.degree(), 8);
            let gens: GeneratorSet = g.to_generators().unwrap();
            assert_eq!(gens.degree(), 8);
        }
    }
}
