//! Named permutation groups and a small expression language for them.
//!
//! ```text
//! expr  := atom ('x' atom)*          product, degrees concatenated left to right
//! atom  := S(n) | C(n) | A(n) | Rev(n) | I(n) | FixFirst(n) | Intersect(n)
//!        | Patch(rows, cols, p)
//!        | Involutions(n; (a b)(c d)...; ...)   one generator per ';' item
//! ```
//!
//! Points are 0-indexed. Whitespace is ignored everywhere.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::permgroup::{GeneratorSet, GroupError, Permutation, MAX_DEGREE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("invalid group: {0}")]
    Invalid(String),
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupExpr {
    /// Full symmetric group.
    Sym(usize),
    /// Cyclic shifts.
    Cyclic(usize),
    /// Alternating group.
    Alt(usize),
    /// Sequence reversal.
    Rev(usize),
    /// Trivial group.
    Trivial(usize),
    /// Symmetric group on every point except 0.
    FixFirst(usize),
    /// Permute within each half, and swap the halves.
    Intersect(usize),
    Product(Vec<GroupExpr>),
    /// One generator per entry, each a product of disjoint transpositions.
    Involutions {
        n: usize,
        products: Vec<Vec<(usize, usize)>>,
    },
    /// Symmetric group within each `p x p` patch of a row-major grid.
    Patch { rows: usize, cols: usize, p: usize },
}

impl GroupExpr {
    pub fn degree(&self) -> usize {
        match self {
            GroupExpr::Sym(n)
            | GroupExpr::Cyclic(n)
            | GroupExpr::Alt(n)
            | GroupExpr::Rev(n)
            | GroupExpr::Trivial(n)
            | GroupExpr::FixFirst(n)
            | GroupExpr::Intersect(n)
            | GroupExpr::Involutions { n, .. } => *n,
            GroupExpr::Product(parts) => parts.iter().map(GroupExpr::degree).sum(),
            GroupExpr::Patch { rows, cols, .. } => rows * cols,
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let n = self.degree();
        if n == 0 || n > MAX_DEGREE {
            return Err(CatalogError::Invalid(format!(
                "degree {n} outside 1..={MAX_DEGREE}"
            )));
        }
        match self {
            GroupExpr::Intersect(n) if n % 2 != 0 => Err(CatalogError::Invalid(format!(
                "Intersect needs an even degree, got {n}"
            ))),
            GroupExpr::Product(parts) => {
                if parts.is_empty() {
                    return Err(CatalogError::Invalid("empty product".into()));
                }
                parts.iter().try_for_each(GroupExpr::validate)
            }
            GroupExpr::Involutions { n, products } => {
                if products.is_empty() {
                    return Err(CatalogError::Invalid(
                        "Involutions needs at least one generator".into(),
                    ));
                }
                for prod in products {
                    let mut used = vec![false; *n];
                    for &(a, b) in prod {
                        if a >= *n || b >= *n {
                            return Err(CatalogError::Invalid(format!(
                                "transposition ({a} {b}) out of range for degree {n}"
                            )));
                        }
                        if a == b || used[a] || used[b] {
                            return Err(CatalogError::Invalid(format!(
                                "transposition ({a} {b}) overlaps another pair"
                            )));
                        }
                        used[a] = true;
                        used[b] = true;
                    }
                }
                Ok(())
            }
            GroupExpr::Patch { rows, cols, p } => {
                if *p == 0 || rows % p != 0 || cols % p != 0 {
                    Err(CatalogError::Invalid(format!(
                        "patch size {p} must divide {rows} and {cols}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn to_generators(&self) -> Result<GeneratorSet, CatalogError> {
        self.validate()?;
        let n = self.degree();
        let mut out = Vec::new();
        self.push_generators(0, n, &mut out)?;
        Ok(GeneratorSet::new(n, out)?)
    }

    fn push_generators(
        &self,
        offset: usize,
        total: usize,
        out: &mut Vec<Permutation>,
    ) -> Result<(), CatalogError> {
        let tr = |a: usize, b: usize| Permutation::transposition(total, offset + a, offset + b);
        match self {
            GroupExpr::Sym(n) => {
                for i in 0..n.saturating_sub(1) {
                    out.push(tr(i, i + 1)?);
                }
            }
            GroupExpr::Cyclic(n) => {
                if *n > 1 {
                    let cycle: Vec<usize> = (0..*n).map(|i| offset + i).collect();
                    out.push(Permutation::from_cycles(total, &[&cycle])?);
                }
            }
            GroupExpr::Alt(n) => {
                for i in 0..n.saturating_sub(2) {
                    let c = [offset + i, offset + i + 1, offset + i + 2];
                    out.push(Permutation::from_cycles(total, &[&c])?);
                }
            }
            GroupExpr::Rev(n) => {
                if *n > 1 {
                    let mut images: Vec<usize> = (0..total).collect();
                    for i in 0..*n {
                        images[offset + i] = offset + n - 1 - i;
                    }
                    out.push(Permutation::from_images(images)?);
                }
            }
            GroupExpr::Trivial(_) => {}
            GroupExpr::FixFirst(n) => {
                for i in 1..n.saturating_sub(1) {
                    out.push(tr(i, i + 1)?);
                }
            }
            GroupExpr::Intersect(n) => {
                let h = n / 2;
                for half in [0, h] {
                    for i in 0..h.saturating_sub(1) {
                        out.push(tr(half + i, half + i + 1)?);
                    }
                }
                if h > 0 {
                    let mut images: Vec<usize> = (0..total).collect();
                    for i in 0..h {
                        images[offset + i] = offset + i + h;
                        images[offset + i + h] = offset + i;
                    }
                    out.push(Permutation::from_images(images)?);
                }
            }
            GroupExpr::Product(parts) => {
                let mut off = offset;
                for part in parts {
                    part.push_generators(off, total, out)?;
                    off += part.degree();
                }
            }
            GroupExpr::Involutions { products, .. } => {
                for prod in products {
                    let mut images: Vec<usize> = (0..total).collect();
                    for &(a, b) in prod {
                        images.swap(offset + a, offset + b);
                    }
                    out.push(Permutation::from_images(images)?);
                }
            }
            GroupExpr::Patch { rows, cols, p } => {
                for pr in 0..rows / p {
                    for pc in 0..cols / p {
                        let cells: Vec<usize> = (0..p * p)
                            .map(|k| (pr * p + k / p) * cols + pc * p + k % p)
                            .collect();
                        for w in cells.windows(2) {
                            out.push(tr(w[0], w[1])?);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for GroupExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupExpr::Sym(n) => write!(f, "S({n})"),
            GroupExpr::Cyclic(n) => write!(f, "C({n})"),
            GroupExpr::Alt(n) => write!(f, "A({n})"),
            GroupExpr::Rev(n) => write!(f, "Rev({n})"),
            GroupExpr::Trivial(n) => write!(f, "I({n})"),
            GroupExpr::FixFirst(n) => write!(f, "FixFirst({n})"),
            GroupExpr::Intersect(n) => write!(f, "Intersect({n})"),
            GroupExpr::Product(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str("x")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            GroupExpr::Involutions { n, products } => {
                write!(f, "Involutions({n}")?;
                for prod in products {
                    f.write_str("; ")?;
                    for (a, b) in prod {
                        write!(f, "({a} {b})")?;
                    }
                }
                f.write_str(")")
            }
            GroupExpr::Patch { rows, cols, p } => write!(f, "Patch({rows},{cols},{p})"),
        }
    }
}

impl FromStr for GroupExpr {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_group(s)
    }
}

pub fn parse_group(text: &str) -> Result<GroupExpr, CatalogError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut parts = vec![p.atom()?];
    loop {
        p.skip_ws();
        if p.eof() {
            break;
        }
        if p.peek() == Some(b'x') || p.peek() == Some(b'*') {
            p.pos += 1;
            parts.push(p.atom()?);
        } else {
            return Err(p.err("expected 'x' or end of input"));
        }
    }
    let expr = if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        GroupExpr::Product(parts)
    };
    expr.validate()?;
    Ok(expr)
}

pub fn to_generators(e: &GroupExpr) -> Result<GeneratorSet, CatalogError> {
    e.to_generators()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> CatalogError {
        CatalogError::Parse {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), CatalogError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn ident(&mut self) -> Result<(usize, &str), CatalogError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a group name"));
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok((start, name))
    }

    fn number(&mut self) -> Result<usize, CatalogError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a non-negative integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| CatalogError::Parse {
                offset: start,
                msg: "integer too large".into(),
            })
    }

    fn atom(&mut self) -> Result<GroupExpr, CatalogError> {
        let (at, name) = self.ident()?;
        let name = name.to_string();
        self.expect(b'(')?;
        let single = |p: &mut Self| -> Result<usize, CatalogError> {
            let n = p.number()?;
            if n == 0 {
                return Err(CatalogError::Parse {
                    offset: p.pos,
                    msg: "degree must be at least 1".into(),
                });
            }
            Ok(n)
        };
        let expr = match name.as_str() {
            "S" => GroupExpr::Sym(single(self)?),
            "C" => GroupExpr::Cyclic(single(self)?),
            "A" => GroupExpr::Alt(single(self)?),
            "Rev" => GroupExpr::Rev(single(self)?),
            "I" => GroupExpr::Trivial(single(self)?),
            "FixFirst" => GroupExpr::FixFirst(single(self)?),
            "Intersect" => {
                let n_at = self.pos;
                let n = single(self)?;
                if n % 2 != 0 {
                    return Err(CatalogError::Parse {
                        offset: n_at,
                        msg: format!("Intersect needs an even degree, got {n}"),
                    });
                }
                GroupExpr::Intersect(n)
            }
            "Patch" => {
                let rows = single(self)?;
                self.expect(b',')?;
                let cols = single(self)?;
                self.expect(b',')?;
                let p_at = self.pos;
                let p = single(self)?;
                if rows % p != 0 || cols % p != 0 {
                    return Err(CatalogError::Parse {
                        offset: p_at,
                        msg: format!("patch size {p} must divide {rows} and {cols}"),
                    });
                }
                GroupExpr::Patch { rows, cols, p }
            }
            "Involutions" => {
                let n = single(self)?;
                self.involutions(n)?
            }
            _ => {
                return Err(CatalogError::Parse {
                    offset: at,
                    msg: format!(
                        "unknown constructor '{name}' (expected one of S, C, A, Rev, I, \
                         FixFirst, Intersect, Involutions, Patch)"
                    ),
                })
            }
        };
        self.expect(b')')?;
        Ok(expr)
    }

    fn involutions(&mut self, n: usize) -> Result<GroupExpr, CatalogError> {
        let mut products = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() != Some(b';') {
                break;
            }
            self.pos += 1;
            let mut prod = Vec::new();
            let mut used = vec![false; n];
            loop {
                self.skip_ws();
                if self.peek() != Some(b'(') {
                    break;
                }
                self.pos += 1;
                let at = self.pos;
                let a = self.number()?;
                self.skip_ws();
                if self.peek() == Some(b',') {
                    self.pos += 1;
                }
                let b = self.number()?;
                self.expect(b')')?;
                if a >= n || b >= n {
                    return Err(CatalogError::Parse {
                        offset: at,
                        msg: format!("point out of range for degree {n}"),
                    });
                }
                if a == b || used[a] || used[b] {
                    return Err(CatalogError::Parse {
                        offset: at,
                        msg: format!("transposition ({a} {b}) overlaps another pair"),
                    });
                }
                used[a] = true;
                used[b] = true;
                prod.push((a, b));
            }
            if prod.is_empty() {
                return Err(self.err("expected a transposition '(a b)'"));
            }
            products.push(prod);
        }
        if products.is_empty() {
            return Err(self.err("expected '; (a b)...' after the degree"));
        }
        Ok(GroupExpr::Involutions { n, products })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permgroup::StrongGenChain;

    fn order(s: &str) -> u128 {
        let g = parse_group(s).unwrap().to_generators().unwrap();
        StrongGenChain::new(&g).order_u128()
    }

    fn fact(n: u128) -> u128 {
        (1..=n).product()
    }

    #[test]
    fn parse_examples() {
        let e = parse_group("S(5)xS(5)").unwrap();
        assert_eq!(
            e,
            GroupExpr::Product(vec![GroupExpr::Sym(5), GroupExpr::Sym(5)])
        );
        assert_eq!(e.degree(), 10);
        assert_eq!(parse_group(" S ( 5 ) x\tS(5) ").unwrap(), e);
        assert_eq!(order("Intersect(10)"), 28800);
        let inv = parse_group("Involutions(16; (1 4)(2 5)(3 6)(7 10)(8 11)(9 12)(13 15))").unwrap();
        assert_eq!(inv.to_generators().unwrap().gens().len(), 1);
        assert_eq!(order("Involutions(16; (1 4)(2 5)(3 6)(7 10)(8 11)(9 12)(13 15))"), 2);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse_group("S(5)xFoo(3)") {
            Err(CatalogError::Parse { offset, msg }) => {
                assert_eq!(offset, 5);
                assert!(msg.contains("Foo"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_group("Intersect(7)"),
            Err(CatalogError::Parse { offset: 10, .. })
        ));
        assert!(matches!(
            parse_group("S(x)"),
            Err(CatalogError::Parse { offset: 2, .. })
        ));
        assert!(parse_group("Involutions(6; (0 1)(1 2))").is_err());
        assert!(parse_group("Involutions(6; (0 6))").is_err());
        assert!(parse_group("Patch(4,4,3)").is_err());
        assert!(parse_group("S(3) S(3)").is_err());
        assert!(parse_group("S(0)").is_err());
        assert!(parse_group("").is_err());
    }

    #[test]
    fn generator_shapes() {
        let c4 = parse_group("C(4)").unwrap().to_generators().unwrap();
        assert_eq!(c4.gens()[0].images(), &[1, 2, 3, 0]);
        let r4 = parse_group("Rev(4)").unwrap().to_generators().unwrap();
        assert_eq!(r4.gens()[0].images(), &[3, 2, 1, 0]);
        assert_eq!(order("A(5)"), 60);
        assert!(parse_group("I(4)").unwrap().to_generators().unwrap().gens().is_empty());
    }

    #[test]
    fn analytic_orders() {
        for n in 1..=7u128 {
            let k = n as usize;
            assert_eq!(order(&format!("S({k})")), fact(n));
            assert_eq!(order(&format!("C({k})")), n);
            assert_eq!(order(&format!("A({k})")), (fact(n) / 2).max(1));
            assert_eq!(order(&format!("Rev({k})")), if n > 1 { 2 } else { 1 });
            assert_eq!(order(&format!("I({k})")), 1);
            assert_eq!(order(&format!("FixFirst({k})")), fact(n - 1));
            if n % 2 == 0 {
                assert_eq!(order(&format!("Intersect({k})")), fact(n / 2).pow(2) * 2);
            }
        }
        assert_eq!(order("FixFirst(10)"), 362880);
        assert_eq!(order("Patch(2,4,2)"), 24 * 24);
        assert_eq!(order("Patch(4,4,2)"), 24u128.pow(4));
        assert_eq!(order("S(3)xC(4)xRev(2)"), 6 * 4 * 2);
    }

    #[test]
    fn display_round_trip() {
        for s in [
            "S(5)",
            "C(3)xA(4)",
            "Rev(4)xI(2)xFixFirst(3)",
            "Intersect(10)",
            "Patch(2,4,2)",
            "Involutions(6; (0 5)(1 4); (2 3))",
        ] {
            let e = parse_group(s).unwrap();
            assert_eq!(e.to_string(), s);
            assert_eq!(parse_group(&e.to_string()).unwrap(), e);
        }
    }
}
