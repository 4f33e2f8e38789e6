//! Finite state spaces built from attribute declarations.
//!
//! A state is a vector of attribute values; the state space Ω is the product
//! of the attribute domains, indexed mixed-radix with the first attribute most
//! significant. Sets of states are dense bit vectors over `[0, |Ω|)`.
//! Conditions and effect rules are compiled once into extensional sets and
//! state → set tables so everything downstream is plain set algebra.

use std::fmt;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STATE_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain: Vec<i64>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, domain: Vec<i64>) -> Self {
        Self {
            name: name.into(),
            domain,
        }
    }

    /// Attribute over the contiguous range `lo..=hi`.
    pub fn range(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            domain: (lo..=hi).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    attributes: Vec<Attribute>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        Self::with_cap(attributes, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(attributes: Vec<Attribute>, cap: usize) -> Result<Self> {
        let mut size: usize = 1;
        for (i, attr) in attributes.iter().enumerate() {
            if attr.name.is_empty() {
                return Err(Error::InvalidSpace("empty attribute name".into()));
            }
            if attributes[..i].iter().any(|a| a.name == attr.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
            if attr.domain.is_empty() {
                return Err(Error::InvalidSpace(format!(
                    "attribute `{}` has an empty domain",
                    attr.name
                )));
            }
            if attr.domain.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSpace(format!(
                    "domain of `{}` is not strictly increasing",
                    attr.name
                )));
            }
            size = size
                .checked_mul(attr.domain.len())
                .filter(|&s| s <= cap)
                .ok_or_else(|| {
                    Error::InvalidSpace(format!("state space exceeds the cap of {cap} states"))
                })?;
        }
        let mut strides = vec![1; attributes.len()];
        for i in (0..attributes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * attributes[i + 1].domain.len();
        }
        Ok(Self {
            attributes,
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute_position(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn index(&self, values: &[i64]) -> Result<usize> {
        if values.len() != self.attributes.len() {
            return Err(Error::InvalidSpace(format!(
                "expected {} attribute values, got {}",
                self.attributes.len(),
                values.len()
            )));
        }
        let mut idx = 0;
        for ((attr, &v), &stride) in self.attributes.iter().zip(values).zip(&self.strides) {
            let pos = attr
                .domain
                .binary_search(&v)
                .map_err(|_| Error::ValueOutOfDomain {
                    attribute: attr.name.clone(),
                    value: v,
                })?;
            idx += pos * stride;
        }
        Ok(idx)
    }

    pub fn decode(&self, index: usize) -> Result<Vec<i64>> {
        if index >= self.size {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.size,
            });
        }
        Ok((0..self.attributes.len())
            .map(|i| self.value_unchecked(index, i))
            .collect())
    }

    /// Value of attribute `attr` in state `index`. Both must be in range.
    pub fn value_unchecked(&self, index: usize, attr: usize) -> i64 {
        let a = &self.attributes[attr];
        a.domain[(index / self.strides[attr]) % a.domain.len()]
    }

    pub fn full(&self) -> StateSet {
        StateSet::full(self.size)
    }

    pub fn empty(&self) -> StateSet {
        StateSet::empty(self.size)
    }

    /// Human-readable description of a set: per-attribute value lists when the
    /// set is a product of value sets, an explicit listing otherwise.
    pub fn describe(&self, set: &StateSet) -> String {
        let n = set.count();
        if n == 0 {
            return "∅".into();
        }
        if n == self.size {
            return "Ω".into();
        }
        let mut per_attr: Vec<Vec<i64>> = vec![Vec::new(); self.attributes.len()];
        for b in set.iter() {
            for (i, vals) in per_attr.iter_mut().enumerate() {
                let v = self.value_unchecked(b, i);
                if let Err(p) = vals.binary_search(&v) {
                    vals.insert(p, v);
                }
            }
        }
        let product: usize = per_attr.iter().map(Vec::len).product();
        if product == n {
            let parts: Vec<String> = per_attr
                .iter()
                .zip(&self.attributes)
                .filter(|(vals, a)| vals.len() != a.domain.len())
                .map(|(vals, a)| format!("{}∈{}", a.name, format_values(vals)))
                .collect();
            return parts.join(", ");
        }
        let shown: Vec<String> = set
            .iter()
            .take(6)
            .map(|b| {
                let vals: Vec<String> = (0..self.attributes.len())
                    .map(|i| self.value_unchecked(b, i).to_string())
                    .collect();
                format!("({})", vals.join(","))
            })
            .collect();
        if n > 6 {
            format!("{{{}, …}} ({n} states)", shown.join(", "))
        } else {
            format!("{{{}}}", shown.join(", "))
        }
    }
}

fn format_values(vals: &[i64]) -> String {
    let contiguous = vals.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && vals.len() > 2 {
        format!("{{{}..{}}}", vals[0], vals[vals.len() - 1])
    } else {
        let v: Vec<String> = vals.iter().map(i64::to_string).collect();
        format!("{{{}}}", v.join(","))
    }
}

/// A subset of Ω as a dense bit vector. The bit length is |Ω|.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateSet {
    bits: FixedBitSet,
}

impl StateSet {
    pub fn empty(universe: usize) -> Self {
        Self {
            bits: FixedBitSet::with_capacity(universe),
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(universe);
        bits.insert_range(..);
        Self { bits }
    }

    pub fn singleton(universe: usize, state: usize) -> Self {
        let mut s = Self::empty(universe);
        s.insert(state);
        s
    }

    pub fn from_indices(universe: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = Self::empty(universe);
        for i in indices {
            if i >= universe {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    size: universe,
                });
            }
            s.insert(i);
        }
        Ok(s)
    }

    pub fn universe(&self) -> usize {
        self.bits.len()
    }

    pub fn insert(&mut self, state: usize) {
        self.bits.insert(state);
    }

    pub fn contains(&self, state: usize) -> bool {
        self.bits.contains(state)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn is_full(&self) -> bool {
        self.bits.is_full()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn first(&self) -> Option<usize> {
        self.bits.minimum()
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        Self { bits }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        Self { bits }
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.difference_with(&other.bits);
        Self { bits }
    }

    pub fn complement(&self) -> Self {
        let mut bits = self.bits.clone();
        bits.toggle_range(..);
        Self { bits }
    }

    pub fn union_with(&mut self, other: &Self) {
        self.bits.union_with(&other.bits);
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.bits.is_disjoint(&other.bits)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        !self.is_disjoint(other)
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub(crate) fn check_universe(&self, universe: usize) -> Result<()> {
        if self.universe() != universe {
            return Err(Error::SpaceMismatch {
                expected: universe,
                found: self.universe(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// A total effect function E: Ω → 2^Ω, stored as a sorted image list per state.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Effect {
    images: Vec<Vec<u32>>,
}

impl Effect {
    pub fn identity(universe: usize) -> Self {
        Self {
            images: (0..universe as u32).map(|b| vec![b]).collect(),
        }
    }

    /// Extensional effect; every image must be a nonempty list of valid states.
    pub fn from_images(universe: usize, images: Vec<Vec<usize>>) -> Result<Self> {
        if images.len() != universe {
            return Err(Error::InvalidEffect(format!(
                "table has {} rows for a space of {universe} states",
                images.len()
            )));
        }
        let mut out = Vec::with_capacity(universe);
        for (b, mut img) in images.into_iter().enumerate() {
            if img.is_empty() {
                return Err(Error::InvalidEffect(format!("image of state {b} is empty")));
            }
            if let Some(&bad) = img.iter().find(|&&s| s >= universe) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    size: universe,
                });
            }
            img.sort_unstable();
            img.dedup();
            out.push(img.into_iter().map(|s| s as u32).collect());
        }
        Ok(Self { images: out })
    }

    pub fn universe(&self) -> usize {
        self.images.len()
    }

    pub fn image(&self, state: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.images[state].iter().map(|&s| s as usize)
    }

    pub fn image_set(&self, state: usize) -> StateSet {
        let mut s = StateSet::empty(self.universe());
        for b in self.image(state) {
            s.insert(b);
        }
        s
    }

    /// Lifted application E(B) = ⋃_{b∈B} E(b).
    pub fn apply(&self, set: &StateSet) -> StateSet {
        let mut out = StateSet::empty(self.universe());
        for b in set.iter() {
            for &s in &self.images[b] {
                out.insert(s as usize);
            }
        }
        out
    }

    /// Pointwise union b ↦ E(b) ∪ F(b).
    pub fn union(&self, other: &Effect) -> Result<Effect> {
        if self.universe() != other.universe() {
            return Err(Error::SpaceMismatch {
                expected: self.universe(),
                found: other.universe(),
            });
        }
        let images = self
            .images
            .iter()
            .zip(&other.images)
            .map(|(a, b)| {
                let mut v: Vec<u32> = a.iter().chain(b).copied().collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(Effect { images })
    }

    /// Composition b ↦ next(self(b)).
    pub fn then(&self, next: &Effect) -> Result<Effect> {
        if self.universe() != next.universe() {
            return Err(Error::SpaceMismatch {
                expected: self.universe(),
                found: next.universe(),
            });
        }
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut v: Vec<u32> = img
                    .iter()
                    .flat_map(|&m| next.images[m as usize].iter().copied())
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(Effect { images })
    }

    pub fn is_identity(&self) -> bool {
        self.images
            .iter()
            .enumerate()
            .all(|(b, img)| img.len() == 1 && img[0] as usize == b)
    }

    pub fn to_table(&self) -> Vec<Vec<usize>> {
        self.images
            .iter()
            .map(|img| img.iter().map(|&s| s as usize).collect())
            .collect()
    }
}

impl fmt::Debug for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            write!(f, "Effect(identity/{})", self.universe())
        } else {
            f.debug_list().entries(&self.images).finish()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// Boolean condition over attribute comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConditionExpr {
    True,
    False,
    Atom {
        attribute: String,
        op: CmpOp,
        value: i64,
    },
    Not(Box<ConditionExpr>),
    And(Vec<ConditionExpr>),
    Or(Vec<ConditionExpr>),
}

impl ConditionExpr {
    pub fn atom(attribute: impl Into<String>, op: CmpOp, value: i64) -> Self {
        ConditionExpr::Atom {
            attribute: attribute.into(),
            op,
            value,
        }
    }

    pub fn and(self, other: ConditionExpr) -> Self {
        ConditionExpr::And(vec![self, other])
    }

    pub fn or(self, other: ConditionExpr) -> Self {
        ConditionExpr::Or(vec![self, other])
    }

    pub fn negate(self) -> Self {
        ConditionExpr::Not(Box::new(self))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            toks: tokenize(text)?,
            pos: 0,
        };
        let e = p.or_expr()?;
        match p.toks.get(p.pos) {
            None => Ok(e),
            Some((off, t)) => Err(Error::ConditionSyntax {
                offset: *off,
                message: format!("unexpected `{t:?}`"),
            }),
        }
    }

    /// Extension of the condition: every state whose attribute vector satisfies it.
    pub fn compile(&self, space: &StateSpace) -> Result<StateSet> {
        let resolved = self.resolve(space)?;
        let mut set = space.empty();
        for b in 0..space.size() {
            if resolved.eval(space, b) {
                set.insert(b);
            }
        }
        Ok(set)
    }

    fn resolve(&self, space: &StateSpace) -> Result<Resolved> {
        Ok(match self {
            ConditionExpr::True => Resolved::Const(true),
            ConditionExpr::False => Resolved::Const(false),
            ConditionExpr::Atom {
                attribute,
                op,
                value,
            } => Resolved::Atom(space.attribute_position(attribute)?, *op, *value),
            ConditionExpr::Not(e) => Resolved::Not(Box::new(e.resolve(space)?)),
            ConditionExpr::And(es) => {
                Resolved::And(es.iter().map(|e| e.resolve(space)).collect::<Result<_>>()?)
            }
            ConditionExpr::Or(es) => {
                Resolved::Or(es.iter().map(|e| e.resolve(space)).collect::<Result<_>>()?)
            }
        })
    }
}

impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionExpr::True => write!(f, "true"),
            ConditionExpr::False => write!(f, "false"),
            ConditionExpr::Atom {
                attribute,
                op,
                value,
            } => write!(f, "{attribute} {} {value}", op.symbol()),
            ConditionExpr::Not(e) => write!(f, "!({e})"),
            ConditionExpr::And(es) | ConditionExpr::Or(es) => {
                let sep = if matches!(self, ConditionExpr::And(_)) {
                    " && "
                } else {
                    " || "
                };
                if es.is_empty() {
                    return write!(f, "{}", matches!(self, ConditionExpr::And(_)));
                }
                write!(f, "(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, "{sep}")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}

enum Resolved {
    Const(bool),
    Atom(usize, CmpOp, i64),
    Not(Box<Resolved>),
    And(Vec<Resolved>),
    Or(Vec<Resolved>),
}

impl Resolved {
    fn eval(&self, space: &StateSpace, b: usize) -> bool {
        match self {
            Resolved::Const(v) => *v,
            Resolved::Atom(attr, op, value) => op.holds(space.value_unchecked(b, *attr), *value),
            Resolved::Not(e) => !e.eval(space, b),
            Resolved::And(es) => es.iter().all(|e| e.eval(space, b)),
            Resolved::Or(es) => es.iter().any(|e| e.eval(space, b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Op(CmpOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let two = text.get(i..i + 2).unwrap_or("");
        match c {
            _ if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => {
                toks.push((start, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((start, Tok::RParen));
                i += 1;
            }
            _ if two == "&&" => {
                toks.push((start, Tok::And));
                i += 2;
            }
            _ if two == "||" => {
                toks.push((start, Tok::Or));
                i += 2;
            }
            _ if two == "<=" || two == ">=" || two == "==" => {
                let op = match two {
                    "<=" => CmpOp::Le,
                    ">=" => CmpOp::Ge,
                    _ => CmpOp::Eq,
                };
                toks.push((start, Tok::Op(op)));
                i += 2;
            }
            '<' | '>' | '=' => {
                let op = match c {
                    '<' => CmpOp::Lt,
                    '>' => CmpOp::Gt,
                    _ => CmpOp::Eq,
                };
                toks.push((start, Tok::Op(op)));
                i += 1;
            }
            '!' => {
                toks.push((start, Tok::Not));
                i += 1;
            }
            _ if c.is_ascii_digit()
                || (c == '-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) =>
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = text[start..i]
                    .parse::<i64>()
                    .map_err(|e| Error::ConditionSyntax {
                        offset: start,
                        message: e.to_string(),
                    })?;
                toks.push((start, Tok::Int(v)));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Ident(word.to_string()),
                };
                toks.push((start, tok));
            }
            _ => {
                return Err(Error::ConditionSyntax {
                    offset: start,
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map_or_else(|| self.toks.last().map_or(0, |(o, _)| *o + 1), |(o, _)| *o)
    }

    fn err(&self, message: &str) -> Error {
        Error::ConditionSyntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn or_expr(&mut self) -> Result<ConditionExpr> {
        let mut parts = vec![self.and_expr()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            parts.push(self.and_expr()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            ConditionExpr::Or(parts)
        })
    }

    fn and_expr(&mut self) -> Result<ConditionExpr> {
        let mut parts = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            ConditionExpr::And(parts)
        })
    }

    fn unary(&mut self) -> Result<ConditionExpr> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(ConditionExpr::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<ConditionExpr> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Ident(name)) if name == "true" => {
                self.pos += 1;
                Ok(ConditionExpr::True)
            }
            Some(Tok::Ident(name)) if name == "false" => {
                self.pos += 1;
                Ok(ConditionExpr::False)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let op = match self.peek() {
                    Some(Tok::Op(op)) => *op,
                    _ => return Err(self.err("expected a comparison operator")),
                };
                self.pos += 1;
                let value = match self.peek() {
                    Some(Tok::Int(v)) => *v,
                    _ => return Err(self.err("expected an integer")),
                };
                self.pos += 1;
                Ok(ConditionExpr::Atom {
                    attribute: name,
                    op,
                    value,
                })
            }
            _ => Err(self.err("expected a condition")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    /// `attr = attr + [lo, hi]`
    Add,
    /// `attr = [lo, hi]`
    Set,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EffectRule {
    pub attribute: String,
    pub kind: RuleKind,
    pub lo: i64,
    pub hi: i64,
}

impl EffectRule {
    pub fn add(attribute: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            attribute: attribute.into(),
            kind: RuleKind::Add,
            lo,
            hi,
        }
    }

    pub fn set(attribute: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            attribute: attribute.into(),
            kind: RuleKind::Set,
            lo,
            hi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledEffect {
    pub effect: Effect,
    pub warnings: Vec<String>,
}

/// Compiles interval update rules into an extensional effect. Results that
/// leave an attribute's domain saturate at the boundary and produce a warning.
pub fn compile_effect(rules: &[EffectRule], space: &StateSpace) -> Result<CompiledEffect> {
    let mut positions = Vec::with_capacity(rules.len());
    for rule in rules {
        let pos = space.attribute_position(&rule.attribute)?;
        if rule.lo > rule.hi {
            return Err(Error::InvalidEffect(format!(
                "rule on `{}` has lo {} > hi {}",
                rule.attribute, rule.lo, rule.hi
            )));
        }
        if positions.contains(&pos) {
            return Err(Error::InvalidEffect(format!(
                "attribute `{}` has more than one rule",
                rule.attribute
            )));
        }
        positions.push(pos);
    }
    let mut saturated = vec![false; rules.len()];
    let mut images = Vec::with_capacity(space.size());
    for b in 0..space.size() {
        let values = space.decode(b)?;
        let mut choices: Vec<Vec<i64>> = values.iter().map(|&v| vec![v]).collect();
        for (r, (rule, &pos)) in rules.iter().zip(&positions).enumerate() {
            let domain = &space.attributes()[pos].domain;
            let (lo, hi) = match rule.kind {
                RuleKind::Add => (
                    values[pos].saturating_add(rule.lo),
                    values[pos].saturating_add(rule.hi),
                ),
                RuleKind::Set => (rule.lo, rule.hi),
            };
            let (reached, clamped) = reachable_values(domain, lo, hi);
            saturated[r] |= clamped;
            choices[pos] = reached;
        }
        let mut img = Vec::new();
        let mut cursor = vec![0usize; choices.len()];
        'odometer: loop {
            let vec: Vec<i64> = cursor.iter().zip(&choices).map(|(&c, ch)| ch[c]).collect();
            img.push(space.index(&vec)?);
            for i in (0..choices.len()).rev() {
                cursor[i] += 1;
                if cursor[i] < choices[i].len() {
                    continue 'odometer;
                }
                cursor[i] = 0;
            }
            break;
        }
        images.push(img);
    }
    let warnings = rules
        .iter()
        .zip(&saturated)
        .filter(|(_, &s)| s)
        .map(|(r, _)| format!("rule on `{}` saturates at the domain boundary", r.attribute))
        .collect();
    Ok(CompiledEffect {
        effect: Effect::from_images(space.size(), images)?,
        warnings,
    })
}

/// Domain values reachable from the integer range `[lo, hi]`, clamped to the
/// domain. A range that falls entirely inside a gap of a non-contiguous domain
/// snaps to the nearest domain value.
fn reachable_values(domain: &[i64], lo: i64, hi: i64) -> (Vec<i64>, bool) {
    let (dmin, dmax) = (domain[0], domain[domain.len() - 1]);
    let clamped = lo < dmin || hi > dmax;
    let (a, c) = (lo.clamp(dmin, dmax), hi.clamp(dmin, dmax));
    let inside: Vec<i64> = domain
        .iter()
        .copied()
        .filter(|&v| v >= a && v <= c)
        .collect();
    if !inside.is_empty() {
        return (inside, clamped);
    }
    let mid2 = a + c;
    let nearest = *domain
        .iter()
        .min_by_key(|&&v| ((2 * v - mid2).abs(), v))
        .unwrap();
    (vec![nearest], clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fuel_ton() -> StateSpace {
        StateSpace::new(vec![
            Attribute::range("fuel", 0, 8),
            Attribute::range("ton", 0, 10),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(StateSpace::new(vec![Attribute::new("x", vec![])]).is_err());
        assert!(StateSpace::new(vec![Attribute::new("x", vec![1, 1])]).is_err());
        assert!(StateSpace::new(vec![
            Attribute::range("x", 0, 1),
            Attribute::range("x", 0, 1)
        ])
        .is_err());
        assert!(StateSpace::with_cap(
            vec![Attribute::range("x", 0, 9), Attribute::range("y", 0, 9)],
            99
        )
        .is_err());
        let empty = StateSpace::new(vec![]).unwrap();
        assert_eq!(empty.size(), 1);
    }

    #[test]
    fn index_extremes_and_round_trip() {
        let space = StateSpace::new(vec![
            Attribute::range("a", 0, 2),
            Attribute::new("b", vec![-1, 3, 4, 9]),
        ])
        .unwrap();
        assert_eq!(space.size(), 12);
        assert_eq!(space.index(&[0, -1]).unwrap(), 0);
        assert_eq!(space.index(&[2, 9]).unwrap(), 11);
        let mut seen = std::collections::HashSet::new();
        for a in 0..=2 {
            for b in [-1, 3, 4, 9] {
                let i = space.index(&[a, b]).unwrap();
                assert!(seen.insert(i));
                assert_eq!(space.decode(i).unwrap(), vec![a, b]);
            }
        }
        assert!(matches!(
            space.index(&[0, 2]),
            Err(Error::ValueOutOfDomain { .. })
        ));
        assert!(matches!(
            space.decode(12),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn compile_constant_conditions() {
        let space = fuel_ton();
        assert!(ConditionExpr::True.compile(&space).unwrap().is_full());
        assert!(ConditionExpr::False.compile(&space).unwrap().is_empty());
    }

    #[test]
    fn compile_threshold_matches_enumeration() {
        let space = fuel_ton();
        let set = ConditionExpr::parse("fuel > 3")
            .unwrap()
            .compile(&space)
            .unwrap();
        for b in 0..space.size() {
            let fuel = space.decode(b).unwrap()[0];
            assert_eq!(set.contains(b), (4..=8).contains(&fuel));
        }
        assert_eq!(set.count(), 5 * 11);
    }

    #[test]
    fn unknown_attribute_is_an_error() {
        let space = fuel_ton();
        let e = ConditionExpr::parse("speed < 2").unwrap().compile(&space);
        assert_eq!(e, Err(Error::UnknownAttribute("speed".into())));
    }

    #[test]
    fn parser_handles_precedence_and_errors() {
        let e = ConditionExpr::parse("fuel > 3 || ton <= 2 && !(fuel = 8)").unwrap();
        let expected =
            ConditionExpr::atom("fuel", CmpOp::Gt, 3).or(ConditionExpr::atom("ton", CmpOp::Le, 2)
                .and(ConditionExpr::atom("fuel", CmpOp::Eq, 8).negate()));
        assert_eq!(e, expected);
        let again = ConditionExpr::parse(&e.to_string()).unwrap();
        let space = fuel_ton();
        assert_eq!(again.compile(&space).unwrap(), e.compile(&space).unwrap());
        assert!(ConditionExpr::parse("fuel >").is_err());
        assert!(ConditionExpr::parse("(fuel > 1").is_err());
        assert!(ConditionExpr::parse("fuel > 1 )").is_err());
        assert!(ConditionExpr::parse("fuel # 1").is_err());
        assert_eq!(
            ConditionExpr::parse("x >= -2").unwrap(),
            ConditionExpr::atom("x", CmpOp::Ge, -2)
        );
    }

    #[test]
    fn empty_rules_give_identity() {
        let space = fuel_ton();
        let c = compile_effect(&[], &space).unwrap();
        assert!(c.effect.is_identity());
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn additive_rule_enumerates_offsets() {
        let space = fuel_ton();
        let c = compile_effect(&[EffectRule::add("ton", 2, 3)], &space).unwrap();
        let b = space.index(&[4, 5]).unwrap();
        let img: Vec<Vec<i64>> = c
            .effect
            .image(b)
            .map(|s| space.decode(s).unwrap())
            .collect();
        assert_eq!(img, vec![vec![4, 7], vec![4, 8]]);
    }

    #[test]
    fn additive_rule_saturates() {
        let space = fuel_ton();
        let c = compile_effect(&[EffectRule::add("ton", 2, 3)], &space).unwrap();
        let b = space.index(&[1, 9]).unwrap();
        let img: Vec<Vec<i64>> = c
            .effect
            .image(b)
            .map(|s| space.decode(s).unwrap())
            .collect();
        assert_eq!(img, vec![vec![1, 10]]);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn set_rule_and_multiple_rules() {
        let space = fuel_ton();
        let c = compile_effect(
            &[EffectRule::set("fuel", 0, 1), EffectRule::add("ton", -1, 0)],
            &space,
        )
        .unwrap();
        let b = space.index(&[6, 0]).unwrap();
        let img: Vec<Vec<i64>> = c
            .effect
            .image(b)
            .map(|s| space.decode(s).unwrap())
            .collect();
        assert_eq!(img, vec![vec![0, 0], vec![1, 0]]);
        assert!(compile_effect(&[EffectRule::add("ton", 1, 0)], &space).is_err());
        assert!(compile_effect(
            &[EffectRule::add("ton", 0, 1), EffectRule::set("ton", 0, 0)],
            &space
        )
        .is_err());
        assert!(compile_effect(&[EffectRule::add("nope", 0, 1)], &space).is_err());
    }

    #[test]
    fn gap_snaps_to_nearest_value() {
        let space = StateSpace::new(vec![Attribute::new("x", vec![0, 5, 10])]).unwrap();
        let c = compile_effect(&[EffectRule::add("x", 1, 1)], &space).unwrap();
        assert_eq!(c.effect.image(0).collect::<Vec<_>>(), vec![0]);
        assert_eq!(c.effect.image(1).collect::<Vec<_>>(), vec![1]);
        let c = compile_effect(&[EffectRule::add("x", 3, 4)], &space).unwrap();
        assert_eq!(c.effect.image(0).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn effect_algebra() {
        let e = Effect::from_images(3, vec![vec![1], vec![2], vec![2, 0]]).unwrap();
        let id = Effect::identity(3);
        assert_eq!(e.then(&id).unwrap(), e);
        assert_eq!(id.then(&e).unwrap(), e);
        assert_eq!(e.union(&e).unwrap(), e);
        let ee = e.then(&e).unwrap();
        assert_eq!(ee.image(0).collect::<Vec<_>>(), vec![2]);
        assert_eq!(ee.image(1).collect::<Vec<_>>(), vec![0, 2]);
        assert!(Effect::from_images(2, vec![vec![0], vec![]]).is_err());
        assert!(Effect::from_images(2, vec![vec![0], vec![2]]).is_err());
        let s = StateSet::from_indices(3, [0, 1]).unwrap();
        assert_eq!(e.apply(&s).to_vec(), vec![1, 2]);
    }

    #[test]
    fn describe_sets() {
        let space = fuel_ton();
        let c = ConditionExpr::parse("fuel > 3")
            .unwrap()
            .compile(&space)
            .unwrap();
        assert_eq!(space.describe(&c), "fuel∈{4..8}");
        assert_eq!(space.describe(&space.full()), "Ω");
        assert_eq!(space.describe(&space.empty()), "∅");
    }
}
