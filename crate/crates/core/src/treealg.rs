//! Decorated trees and the exact Hopf algebra `(T, T⁺, Δ, Δ⁺, S)`.
//!
//! A tree is `X^k ○^ε ∏ I_{n_i}(τ_i)`; a forest (element of the basis of T⁺)
//! is `X^ℓ ∏ I_{n_i}(τ_i)` with every planted factor of positive degree.
//! Coefficients are exact rationals. Children are kept sorted by
//! (edge label, canonical key), which does not depend on the noise degree.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::MultiIndex;

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

const TIE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum TreeError {
    BadSpec(&'static str),
    NonSubcritical { rounds: usize, size: usize },
    Parse { pos: usize, msg: &'static str },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::BadSpec(m) => write!(f, "invalid structure spec: {m}"),
            TreeError::NonSubcritical { rounds, size } => write!(
                f,
                "non-subcritical spec: basis still growing after {rounds} rounds ({size} symbols)"
            ),
            TreeError::Parse { pos, msg } => write!(f, "parse error at byte {pos}: {msg}"),
        }
    }
}

impl core::error::Error for TreeError {}

// ---------------------------------------------------------------- trees

struct Node {
    mono: MultiIndex,
    noise: bool,
    children: Vec<Planted>,
    key: String,
    ideg: i64,
    noises: u32,
}

/// Decorated tree in canonical form. Cheap to clone.
#[derive(Clone)]
pub struct Tree(Arc<Node>);

/// `I_edge(tree)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Planted {
    pub edge: MultiIndex,
    pub tree: Tree,
}

impl PartialEq for Tree {
    fn eq(&self, o: &Self) -> bool {
        Arc::ptr_eq(&self.0, &o.0) || self.0.key == o.0.key
    }
}
impl Eq for Tree {}
impl PartialOrd for Tree {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Tree {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.key.cmp(&o.0.key)
    }
}
impl Hash for Tree {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.0.key.hash(h)
    }
}
impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tree({})", self.0.key)
    }
}

impl Tree {
    pub fn new(mono: MultiIndex, noise: bool, mut children: Vec<Planted>) -> Tree {
        children.sort();
        let mut ideg = mono.order() as i64;
        let mut noises = noise as u32;
        for c in &children {
            ideg += c.int_degree();
            noises += c.tree.noise_count();
        }
        let mut key = String::new();
        write_product(&mut key, mono, noise, &children, 2, false);
        Tree(Arc::new(Node { mono, noise, children, key, ideg, noises }))
    }

    pub fn one() -> Tree {
        Tree::new(MultiIndex::ZERO, false, Vec::new())
    }

    pub fn noise() -> Tree {
        Tree::new(MultiIndex::ZERO, true, Vec::new())
    }

    pub fn mono(k: MultiIndex) -> Tree {
        Tree::new(k, false, Vec::new())
    }

    pub fn planted(edge: MultiIndex, t: Tree) -> Tree {
        Tree::new(MultiIndex::ZERO, false, vec![Planted { edge, tree: t }])
    }

    pub fn monomial(&self) -> MultiIndex {
        self.0.mono
    }

    pub fn has_noise(&self) -> bool {
        self.0.noise
    }

    pub fn children(&self) -> &[Planted] {
        &self.0.children
    }

    /// Canonical key (two-index notation); the total order on trees.
    pub fn key(&self) -> &str {
        &self.0.key
    }

    /// Integer part of the degree (monomials and edges).
    pub fn int_degree(&self) -> i64 {
        self.0.ideg
    }

    pub fn noise_count(&self) -> u32 {
        self.0.noises
    }

    pub fn degree(&self, deg_noise: f64) -> f64 {
        self.0.ideg as f64 + self.0.noises as f64 * deg_noise
    }

    pub fn is_polynomial(&self) -> bool {
        !self.0.noise && self.0.children.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.is_polynomial() && self.0.mono.is_zero()
    }

    /// Tree of the form `I_n(τ)` alone.
    pub fn as_planted(&self) -> Option<&Planted> {
        if !self.0.noise && self.0.mono.is_zero() && self.0.children.len() == 1 {
            Some(&self.0.children[0])
        } else {
            None
        }
    }

    /// Root product; `None` when both factors carry a noise at the root.
    pub fn mul(&self, o: &Tree) -> Option<Tree> {
        if self.0.noise && o.0.noise {
            return None;
        }
        if self.is_one() {
            return Some(o.clone());
        }
        if o.is_one() {
            return Some(self.clone());
        }
        let mut ch = self.0.children.clone();
        ch.extend(o.0.children.iter().cloned());
        Some(Tree::new(self.0.mono.add(&o.0.mono), self.0.noise || o.0.noise, ch))
    }

    /// Same tree with the monomial decoration at the root removed.
    pub fn without_monomial(&self) -> Tree {
        Tree::new(MultiIndex::ZERO, self.0.noise, self.0.children.clone())
    }

    /// Largest index component used anywhere, to pick a rendering dimension.
    fn uses_second(&self) -> bool {
        self.0.mono.0[1] != 0
            || self
                .0
                .children
                .iter()
                .any(|c| c.edge.0[1] != 0 || c.tree.uses_second())
    }

    pub fn render(&self, d: usize) -> String {
        let mut s = String::new();
        write_product(&mut s, self.0.mono, self.0.noise, &self.0.children, d, false);
        s
    }

    pub fn parse(s: &str, d: usize) -> Result<Tree, TreeError> {
        let mut p = Parser { s: s.as_bytes(), pos: 0, d };
        let t = p.product()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(t)
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = if self.uses_second() { 2 } else { 1 };
        f.write_str(&self.render(d))
    }
}

impl Planted {
    pub fn new(edge: MultiIndex, tree: Tree) -> Self {
        Planted { edge, tree }
    }

    pub fn int_degree(&self) -> i64 {
        2 - self.edge.order() as i64 + self.tree.int_degree()
    }

    pub fn noise_count(&self) -> u32 {
        self.tree.noise_count()
    }

    pub fn degree(&self, deg_noise: f64) -> f64 {
        self.int_degree() as f64 + self.noise_count() as f64 * deg_noise
    }

    pub fn as_tree(&self) -> Tree {
        Tree::new(MultiIndex::ZERO, false, vec![self.clone()])
    }

    pub fn render(&self, d: usize) -> String {
        let mut s = String::new();
        write_planted(&mut s, self, d);
        s
    }
}

fn write_index(out: &mut String, k: MultiIndex, d: usize) {
    if d == 1 {
        out.push_str(&k.0[0].to_string());
    } else {
        out.push_str(&format!("({},{})", k.0[0], k.0[1]));
    }
}

fn write_planted(out: &mut String, p: &Planted, d: usize) {
    out.push('I');
    if !p.edge.is_zero() {
        out.push('_');
        write_index(out, p.edge, d);
    }
    out.push('[');
    write_product(out, p.tree.0.mono, p.tree.0.noise, &p.tree.0.children, d, false);
    out.push(']');
}

fn write_product(
    out: &mut String,
    mono: MultiIndex,
    noise: bool,
    children: &[Planted],
    d: usize,
    forest: bool,
) {
    let start = out.len();
    let sep = |out: &mut String| {
        if out.len() > start {
            out.push(' ');
        }
    };
    if !mono.is_zero() {
        sep(out);
        out.push('X');
        if d == 1 {
            if mono.0[0] != 1 {
                out.push('^');
                out.push_str(&mono.0[0].to_string());
            }
        } else {
            out.push('^');
            write_index(out, mono, 2);
        }
    }
    if noise {
        sep(out);
        out.push('o');
    }
    for c in children {
        sep(out);
        write_planted(out, c, d);
    }
    if out.len() == start {
        out.push_str(if forest { "1+" } else { "1" });
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    d: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &'static str) -> TreeError {
        TreeError::Parse { pos: self.pos, msg }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos] == b' ' {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8, msg: &'static str) -> Result<(), TreeError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(msg))
        }
    }

    fn int(&mut self) -> Result<u32, TreeError> {
        let st = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if st == self.pos {
            return Err(self.err("expected integer"));
        }
        core::str::from_utf8(&self.s[st..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or(self.err("integer out of range"))
    }

    fn index(&mut self) -> Result<MultiIndex, TreeError> {
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let a = self.int()?;
            self.expect(b',', "expected ','")?;
            let b = self.int()?;
            self.expect(b')', "expected ')'")?;
            if self.d == 1 && b != 0 {
                return Err(self.err("two-component index in dimension 1"));
            }
            Ok(MultiIndex::new(a, b))
        } else {
            Ok(MultiIndex::scalar(self.int()?))
        }
    }

    fn product(&mut self) -> Result<Tree, TreeError> {
        let mut mono = MultiIndex::ZERO;
        let mut noise = false;
        let mut children = Vec::new();
        let mut any = false;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'1') => {
                    self.pos += 1;
                }
                Some(b'o') => {
                    if noise {
                        return Err(self.err("two noises at one vertex"));
                    }
                    self.pos += 1;
                    noise = true;
                }
                Some(b'X') => {
                    self.pos += 1;
                    let k = if self.peek() == Some(b'^') {
                        self.pos += 1;
                        self.index()?
                    } else {
                        MultiIndex::scalar(1)
                    };
                    mono = mono.add(&k);
                }
                Some(b'I') => {
                    self.pos += 1;
                    let edge = if self.peek() == Some(b'_') {
                        self.pos += 1;
                        self.index()?
                    } else {
                        MultiIndex::ZERO
                    };
                    self.expect(b'[', "expected '['")?;
                    let t = self.product()?;
                    self.skip_ws();
                    self.expect(b']', "expected ']'")?;
                    children.push(Planted { edge, tree: t });
                }
                _ => break,
            }
            any = true;
        }
        if !any {
            return Err(self.err("empty product"));
        }
        Ok(Tree::new(mono, noise, children))
    }
}

// ---------------------------------------------------------------- forests

/// Basis element `X^ℓ ∏ I_{n_i}(τ_i)` of T⁺. The empty forest is `1₊`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Forest {
    mono: MultiIndex,
    factors: Vec<Planted>,
}

impl Forest {
    pub fn one() -> Forest {
        Forest { mono: MultiIndex::ZERO, factors: Vec::new() }
    }

    pub fn mono(k: MultiIndex) -> Forest {
        Forest { mono: k, factors: Vec::new() }
    }

    pub fn single(p: Planted) -> Forest {
        Forest { mono: MultiIndex::ZERO, factors: vec![p] }
    }

    pub fn new(mono: MultiIndex, mut factors: Vec<Planted>) -> Forest {
        factors.sort();
        Forest { mono, factors }
    }

    pub fn monomial(&self) -> MultiIndex {
        self.mono
    }

    pub fn factors(&self) -> &[Planted] {
        &self.factors
    }

    pub fn is_one(&self) -> bool {
        self.mono.is_zero() && self.factors.is_empty()
    }

    pub fn mul(&self, o: &Forest) -> Forest {
        let mut f = self.factors.clone();
        f.extend(o.factors.iter().cloned());
        Forest::new(self.mono.add(&o.mono), f)
    }

    pub fn degree(&self, deg_noise: f64) -> f64 {
        self.mono.order() as f64 + self.factors.iter().map(|p| p.degree(deg_noise)).sum::<f64>()
    }

    /// Generators with multiplicity: `X_i` repeated `ℓ_i` times, then the planted factors.
    pub fn generators(&self) -> Vec<Generator> {
        let mut g = Vec::new();
        for i in 0..2 {
            for _ in 0..self.mono.0[i] {
                g.push(Generator::X(i));
            }
        }
        g.extend(self.factors.iter().cloned().map(Generator::Planted));
        g
    }

    pub fn render(&self, d: usize) -> String {
        let mut s = String::new();
        write_product(&mut s, self.mono, false, &self.factors, d, true);
        s
    }

    pub fn parse(s: &str, d: usize) -> Result<Forest, TreeError> {
        if s.trim() == "1+" {
            return Ok(Forest::one());
        }
        let t = Tree::parse(s, d)?;
        if t.has_noise() {
            return Err(TreeError::Parse { pos: 0, msg: "noise at the root of a forest" });
        }
        Ok(Forest::new(t.monomial(), t.children().to_vec()))
    }
}

impl fmt::Display for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let two = self.mono.0[1] != 0
            || self.factors.iter().any(|p| p.edge.0[1] != 0 || p.tree.uses_second());
        f.write_str(&self.render(if two { 2 } else { 1 }))
    }
}

/// Algebra generator of T⁺.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Generator {
    X(usize),
    Planted(Planted),
}

impl Generator {
    pub fn forest(&self) -> Forest {
        match self {
            Generator::X(i) => Forest::mono(MultiIndex::unit(*i)),
            Generator::Planted(p) => Forest::single(p.clone()),
        }
    }

    pub fn degree(&self, deg_noise: f64) -> f64 {
        match self {
            Generator::X(_) => 1.0,
            Generator::Planted(p) => p.degree(deg_noise),
        }
    }

    pub fn render(&self, d: usize) -> String {
        match self {
            Generator::X(i) if d == 1 && *i == 0 => "X".into(),
            Generator::X(i) => Forest::mono(MultiIndex::unit(*i)).render(d),
            Generator::Planted(p) => p.render(d),
        }
    }
}

// ---------------------------------------------------------------- scalars

/// Coefficient ring for characters and linear combinations.
pub trait Scalar: Clone + fmt::Debug {
    fn nil() -> Self;
    fn unit() -> Self;
    fn is_nil(&self) -> bool;
    fn plus(&self, o: &Self) -> Self;
    fn times(&self, o: &Self) -> Self;
    fn negated(&self) -> Self;
    fn from_q(q: &Q) -> Self;
}

impl Scalar for Q {
    fn nil() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn negated(&self) -> Self {
        -self
    }
    fn from_q(q: &Q) -> Self {
        q.clone()
    }
}

impl Scalar for f64 {
    fn nil() -> Self {
        0.0
    }
    fn unit() -> Self {
        1.0
    }
    fn is_nil(&self) -> bool {
        *self == 0.0
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn negated(&self) -> Self {
        -self
    }
    fn from_q(q: &Q) -> Self {
        q.to_f64().unwrap_or(f64::NAN)
    }
}

fn pow_s<S: Scalar>(x: &S, e: u32) -> S {
    let mut r = S::unit();
    for _ in 0..e {
        r = r.times(x);
    }
    r
}

/// Finite linear combination without stored zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinComb<K: Ord, C = Q> {
    terms: BTreeMap<K, C>,
}

impl<K: Ord + Clone, C: Scalar> Default for LinComb<K, C> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Ord + Clone, C: Scalar> LinComb<K, C> {
    pub fn new() -> Self {
        LinComb { terms: BTreeMap::new() }
    }

    pub fn single(k: K) -> Self {
        Self::term(k, C::unit())
    }

    pub fn term(k: K, c: C) -> Self {
        let mut l = Self::new();
        l.add_term(k, c);
        l
    }

    pub fn add_term(&mut self, k: K, c: C) {
        if c.is_nil() {
            return;
        }
        match self.terms.get_mut(&k) {
            Some(v) => {
                *v = v.plus(&c);
                if v.is_nil() {
                    self.terms.remove(&k);
                }
            }
            None => {
                self.terms.insert(k, c);
            }
        }
    }

    pub fn add_scaled(&mut self, o: &Self, c: &C) {
        for (k, v) in &o.terms {
            self.add_term(k.clone(), v.times(c));
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut r = self.clone();
        r.add_scaled(o, &C::unit().negated());
        r
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut r = Self::new();
        r.add_scaled(self, c);
        r
    }

    pub fn coeff(&self, k: &K) -> C {
        self.terms.get(k).cloned().unwrap_or_else(C::nil)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &C)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

pub type TreeLin = LinComb<Tree>;
pub type ForestLin = LinComb<Forest>;
/// Element of T ⊗ T⁺.
pub type Split = LinComb<(Tree, Forest)>;
/// Element of T⁺ ⊗ T⁺.
pub type SplitPlus = LinComb<(Forest, Forest)>;

fn mul_split(a: &Split, b: &Split) -> Split {
    let mut r = Split::new();
    for ((ta, fa), ca) in a.iter() {
        for ((tb, fb), cb) in b.iter() {
            let t = ta.mul(tb).expect("two noises at one vertex");
            r.add_term((t, fa.mul(fb)), ca * cb);
        }
    }
    r
}

fn mul_split_plus(a: &SplitPlus, b: &SplitPlus) -> SplitPlus {
    let mut r = SplitPlus::new();
    for ((xa, ya), ca) in a.iter() {
        for ((xb, yb), cb) in b.iter() {
            r.add_term((xa.mul(xb), ya.mul(yb)), ca * cb);
        }
    }
    r
}

fn mul_forest_lin(a: &ForestLin, b: &ForestLin) -> ForestLin {
    let mut r = ForestLin::new();
    for (fa, ca) in a.iter() {
        for (fb, cb) in b.iter() {
            r.add_term(fa.mul(fb), ca * cb);
        }
    }
    r
}

/// `Σ_{ℓ≤k} C(k,ℓ) (ℓ, k−ℓ)`.
fn binomial_split(k: MultiIndex) -> Vec<(MultiIndex, MultiIndex, Q)> {
    k.lower_set()
        .into_iter()
        .map(|l| {
            let r = k.checked_sub(&l).unwrap();
            (l, r, q(k.binomial(&l) as i64, 1))
        })
        .collect()
}

/// Number of orders `o ≥ 0` with `o < deg` (strict truncation).
fn jet_bound(deg: f64) -> u32 {
    if deg <= TIE {
        0
    } else {
        libm::ceil(deg - TIE) as u32
    }
}

// ---------------------------------------------------------------- spec

#[derive(Clone, Debug, PartialEq)]
pub struct StructureSpec {
    pub dim: usize,
    pub deg_noise: f64,
    /// Symbols of degree `< cutoff` are retained.
    pub cutoff: f64,
    /// Edge labels `n` allowed for `I_n`.
    pub labels: Vec<MultiIndex>,
    pub max_noises: Option<u32>,
    /// Whether the bare noise `o` is listed in the basis.
    pub noise_in_basis: bool,
    pub polynomial_only: bool,
}

impl StructureSpec {
    pub fn new(dim: usize, deg_noise: f64, cutoff: f64) -> Self {
        StructureSpec {
            dim,
            deg_noise,
            cutoff,
            labels: vec![MultiIndex::ZERO],
            max_noises: None,
            noise_in_basis: true,
            polynomial_only: false,
        }
    }

    pub fn polynomial(dim: usize, cutoff: f64) -> Self {
        StructureSpec { polynomial_only: true, labels: Vec::new(), ..Self::new(dim, -1.01, cutoff) }
    }

    /// Elliptic PAM-like structure: `K(f(u)ξ)` with one label `I`, noise of degree −1.01.
    pub fn pam(dim: usize, cutoff: f64, max_noises: u32) -> Self {
        StructureSpec { max_noises: Some(max_noises), ..Self::new(dim, -1.01, cutoff) }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(TreeError::BadSpec("dimension must be 1 or 2"));
        }
        if !(self.deg_noise > -2.0 && self.deg_noise < 0.0) {
            return Err(TreeError::BadSpec("deg_noise must lie in (-2, 0)"));
        }
        if !self.cutoff.is_finite() {
            return Err(TreeError::BadSpec("cutoff must be finite"));
        }
        if !self.polynomial_only && self.labels.is_empty() {
            return Err(TreeError::BadSpec("no edge labels"));
        }
        if self.labels.iter().any(|l| self.dim == 1 && l.0[1] != 0) {
            return Err(TreeError::BadSpec("edge label has two components in dimension 1"));
        }
        Ok(())
    }

    pub fn degree(&self, t: &Tree) -> f64 {
        t.degree(self.deg_noise)
    }

    pub fn planted_degree(&self, p: &Planted) -> f64 {
        p.degree(self.deg_noise)
    }

    pub fn forest_degree(&self, f: &Forest) -> f64 {
        f.degree(self.deg_noise)
    }
}

/// Generated basis of T (sorted by degree, then key) and the generators of T⁺.
#[derive(Clone, Debug)]
pub struct Basis {
    pub trees: Vec<Tree>,
    pub generators: Vec<Generator>,
}

// ---------------------------------------------------------------- Hopf algebra

/// Coproducts and antipode for one structure spec, with memoization.
/// Interior caches make this `!Sync`; share by cloning the spec instead.
pub struct Hopf {
    spec: StructureSpec,
    delta: RefCell<BTreeMap<Tree, Split>>,
    plus: RefCell<BTreeMap<Planted, SplitPlus>>,
    anti: RefCell<BTreeMap<Planted, ForestLin>>,
}

impl Hopf {
    pub fn new(spec: StructureSpec) -> Result<Hopf, TreeError> {
        spec.validate()?;
        Ok(Hopf {
            spec,
            delta: RefCell::new(BTreeMap::new()),
            plus: RefCell::new(BTreeMap::new()),
            anti: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Δ: T → T ⊗ T⁺.
    pub fn coproduct(&self, t: &Tree) -> Split {
        if let Some(v) = self.delta.borrow().get(t) {
            return v.clone();
        }
        let mut acc = Split::new();
        for (l, r, c) in binomial_split(t.monomial()) {
            let left = if t.has_noise() {
                Tree::new(l, true, Vec::new())
            } else {
                Tree::mono(l)
            };
            acc.add_term((left, Forest::mono(r)), c);
        }
        for ch in t.children() {
            acc = mul_split(&acc, &self.coproduct_planted(ch));
        }
        self.delta.borrow_mut().insert(t.clone(), acc.clone());
        acc
    }

    /// Δ(I_n τ) = (I_n ⊗ Id)Δτ + Σ_{|ℓ|<deg} X^ℓ/ℓ! ⊗ I_{n+ℓ}(τ).
    fn coproduct_planted(&self, p: &Planted) -> Split {
        let mut out = Split::new();
        for ((a, f), c) in self.coproduct(&p.tree).iter() {
            if a.is_polynomial() {
                continue;
            }
            out.add_term((Tree::planted(p.edge, a.clone()), f.clone()), c.clone());
        }
        self.add_jet(&mut out, p, |l| Tree::mono(l));
        out
    }

    fn add_jet<L: Ord + Clone>(
        &self,
        out: &mut LinComb<(L, Forest)>,
        p: &Planted,
        left: impl Fn(MultiIndex) -> L,
    ) {
        for l in self.jet_indices(p) {
            let right = Forest::single(Planted { edge: p.edge.add(&l), tree: p.tree.clone() });
            out.add_term((left(l), right), q(1, l.factorial() as i64));
        }
    }

    /// Multi-indices `ℓ` with `|ℓ| < deg(I_n τ)`, ordered by `|ℓ|`.
    pub fn jet_indices(&self, p: &Planted) -> Vec<MultiIndex> {
        MultiIndex::all_below(self.spec.dim, jet_bound(self.spec.planted_degree(p)))
    }

    /// Δ⁺: T⁺ → T⁺ ⊗ T⁺, multiplicative.
    pub fn coproduct_plus(&self, f: &Forest) -> SplitPlus {
        let mut acc = SplitPlus::new();
        for (l, r, c) in binomial_split(f.monomial()) {
            acc.add_term((Forest::mono(l), Forest::mono(r)), c);
        }
        for p in f.factors() {
            acc = mul_split_plus(&acc, &self.coproduct_plus_planted(p));
        }
        acc
    }

    fn coproduct_plus_planted(&self, p: &Planted) -> SplitPlus {
        if let Some(v) = self.plus.borrow().get(p) {
            return v.clone();
        }
        let mut out = SplitPlus::new();
        for ((a, f), c) in self.coproduct(&p.tree).iter() {
            if a.is_polynomial() {
                continue;
            }
            let lp = Planted { edge: p.edge, tree: a.clone() };
            if self.spec.planted_degree(&lp) <= TIE {
                continue;
            }
            out.add_term((Forest::single(lp), f.clone()), c.clone());
        }
        self.add_jet(&mut out, p, Forest::mono);
        self.plus.borrow_mut().insert(p.clone(), out.clone());
        out
    }

    pub fn coproduct_plus_lin(&self, v: &ForestLin) -> SplitPlus {
        let mut r = SplitPlus::new();
        for (f, c) in v.iter() {
            r.add_scaled(&self.coproduct_plus(f), c);
        }
        r
    }

    /// Antipode S: T⁺ → T⁺, multiplicative.
    pub fn antipode(&self, f: &Forest) -> ForestLin {
        let sign = if f.monomial().order() % 2 == 0 { q(1, 1) } else { q(-1, 1) };
        let mut acc = ForestLin::term(Forest::mono(f.monomial()), sign);
        for p in f.factors() {
            acc = mul_forest_lin(&acc, &self.antipode_planted(p));
        }
        acc
    }

    fn antipode_planted(&self, p: &Planted) -> ForestLin {
        if let Some(v) = self.anti.borrow().get(p) {
            return v.clone();
        }
        let mut out = ForestLin::new();
        for ((a, b), c) in self.coproduct_plus_planted(p).iter() {
            if a.is_one() {
                continue;
            }
            for (fb, cb) in self.antipode(b).iter() {
                out.add_term(a.mul(fb), -(c * cb));
            }
        }
        self.anti.borrow_mut().insert(p.clone(), out.clone());
        out
    }

    /// Generate the basis of T and the generators of T⁺.
    pub fn basis(&self) -> Result<Basis, TreeError> {
        let spec = &self.spec;
        let d = spec.dim;
        let below = |deg: f64| deg < spec.cutoff - TIE;
        let mut trees = Vec::new();
        let mono_bound = jet_bound(spec.cutoff);
        for k in MultiIndex::all_below(d, mono_bound) {
            trees.push(Tree::mono(k));
        }
        let mut rooted: BTreeSet<Tree> = BTreeSet::new();
        if !spec.polynomial_only {
            let mut rounds = 0;
            loop {
                rounds += 1;
                let mut cands: Vec<(Planted, f64, u32)> = Vec::new();
                for t in &rooted {
                    for &n in &spec.labels {
                        let p = Planted { edge: n, tree: t.clone() };
                        let pd = spec.planted_degree(&p);
                        if below(pd + spec.deg_noise) {
                            cands.push((p, pd, t.noise_count()));
                        }
                    }
                }
                cands.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
                let mut next = BTreeSet::new();
                let mut cur = Vec::new();
                self.noise_products(&cands, 0, &mut cur, spec.deg_noise, 1, &mut next)?;
                if next.len() > 20000 {
                    return Err(TreeError::NonSubcritical { rounds, size: next.len() });
                }
                if next == rooted {
                    break;
                }
                if rounds >= 50 {
                    return Err(TreeError::NonSubcritical { rounds, size: next.len() });
                }
                rooted = next;
            }
        }
        for t in &rooted {
            if spec.noise_in_basis || *t != Tree::noise() {
                trees.push(t.clone());
            }
            for &n in &spec.labels {
                let p = Tree::planted(n, t.clone());
                if below(spec.degree(&p)) {
                    trees.push(p);
                }
            }
        }
        trees.sort_by(|a, b| {
            spec.degree(a).total_cmp(&spec.degree(b)).then_with(|| a.cmp(b))
        });
        trees.dedup();
        let mut gens: BTreeSet<Planted> = BTreeSet::new();
        for t in &trees {
            for ((_, f), _) in self.coproduct(t).iter() {
                gens.extend(f.factors().iter().cloned());
            }
        }
        let mut gens: Vec<Planted> = gens.into_iter().collect();
        gens.sort_by(|a, b| {
            spec.planted_degree(a)
                .total_cmp(&spec.planted_degree(b))
                .then_with(|| a.cmp(b))
        });
        let mut generators: Vec<Generator> = (0..d).map(Generator::X).collect();
        generators.extend(gens.into_iter().map(Generator::Planted));
        Ok(Basis { trees, generators })
    }

    fn noise_products(
        &self,
        cands: &[(Planted, f64, u32)],
        start: usize,
        cur: &mut Vec<Planted>,
        deg: f64,
        noises: u32,
        out: &mut BTreeSet<Tree>,
    ) -> Result<(), TreeError> {
        let spec = &self.spec;
        if deg < spec.cutoff - TIE {
            let room = spec.cutoff - deg;
            for k in MultiIndex::all_below(spec.dim, jet_bound(room)) {
                out.insert(Tree::new(k, true, cur.clone()));
            }
        }
        for i in start..cands.len() {
            let (p, pd, pn) = &cands[i];
            if let Some(m) = spec.max_noises {
                if noises + pn > m {
                    continue;
                }
            } else if *pd <= TIE {
                return Err(TreeError::NonSubcritical { rounds: 0, size: out.len() });
            }
            if *pd > 0.0 && deg + pd >= spec.cutoff - TIE {
                break;
            }
            cur.push(p.clone());
            self.noise_products(cands, i, cur, deg + pd, noises + pn, out)?;
            cur.pop();
        }
        Ok(())
    }

    /// Δ(T_a) ⊆ ⊕ T_{a−α} ⊗ T⁺_α on every basis tree; returns violations.
    pub fn grading_check(&self, basis: &Basis) -> Vec<String> {
        let d = self.spec.dim;
        let mut bad = Vec::new();
        for t in &basis.trees {
            let dt = self.spec.degree(t);
            for ((a, f), _) in self.coproduct(t).iter() {
                let da = self.spec.degree(a);
                let df = self.spec.forest_degree(f);
                let pos = f.factors().iter().all(|p| self.spec.planted_degree(p) > 0.0);
                if libm::fabs(da + df - dt) > 1e-12 || df < 0.0 || !pos {
                    bad.push(format!("{} -> {} (x) {}", t.render(d), a.render(d), f.render(d)));
                }
            }
        }
        bad
    }
}

/// Standalone basis generation.
pub fn generate_basis(spec: &StructureSpec) -> Result<Basis, TreeError> {
    Hopf::new(spec.clone())?.basis()
}

// ---------------------------------------------------------------- characters

/// Multiplicative linear functional on T⁺, given by its values on generators.
pub trait Character<S: Scalar> {
    fn on_generator(&self, g: &Generator) -> S;

    fn eval(&self, f: &Forest) -> S {
        let mut r = S::unit();
        for i in 0..2 {
            let e = f.monomial().0[i];
            if e > 0 {
                r = r.times(&pow_s(&self.on_generator(&Generator::X(i)), e));
            }
        }
        for p in f.factors() {
            r = r.times(&self.on_generator(&Generator::Planted(p.clone())));
        }
        r
    }

    fn eval_lin(&self, v: &ForestLin) -> S {
        let mut r = S::nil();
        for (f, c) in v.iter() {
            r = r.plus(&S::from_q(c).times(&self.eval(f)));
        }
        r
    }
}

/// The counit `1'₊`.
pub struct Counit;

impl<S: Scalar> Character<S> for Counit {
    fn on_generator(&self, _: &Generator) -> S {
        S::nil()
    }
}

/// Character defined by a closure on generators.
pub struct FnCharacter<F>(pub F);

impl<S: Scalar, F: Fn(&Generator) -> S> Character<S> for FnCharacter<F> {
    fn on_generator(&self, g: &Generator) -> S {
        (self.0)(g)
    }
}

/// `g(X_i) = a_i`, zero on planted generators.
pub struct Translation<S>(pub Vec<S>);

impl<S: Scalar> Character<S> for Translation<S> {
    fn on_generator(&self, g: &Generator) -> S {
        match g {
            Generator::X(i) => self.0.get(*i).cloned().unwrap_or_else(S::nil),
            Generator::Planted(_) => S::nil(),
        }
    }
}

/// Pseudo-random small rational values, a deterministic function of (seed, generator).
#[derive(Clone, Copy, Debug)]
pub struct RandomCharacter {
    pub seed: u64,
}

impl RandomCharacter {
    fn value(&self, g: &Generator) -> Q {
        let key = g.render(2);
        let mut h: u64 = 0xcbf29ce484222325 ^ self.seed.wrapping_mul(0x9e3779b97f4a7c15);
        for b in key.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let x = rng.next_u64();
        q((x % 9) as i64 - 4, ((x >> 16) % 4) as i64 + 1)
    }
}

impl Character<Q> for RandomCharacter {
    fn on_generator(&self, g: &Generator) -> Q {
        self.value(g)
    }
}

impl Character<f64> for RandomCharacter {
    fn on_generator(&self, g: &Generator) -> f64 {
        self.value(g).to_f64().unwrap()
    }
}

/// `(g1 ⋆ g2)(σ) = (g1 ⊗ g2)Δ⁺σ`.
pub struct Convolution<'a, S> {
    pub hopf: &'a Hopf,
    pub left: &'a dyn Character<S>,
    pub right: &'a dyn Character<S>,
}

pub fn convolve<'a, S: Scalar>(
    hopf: &'a Hopf,
    left: &'a dyn Character<S>,
    right: &'a dyn Character<S>,
) -> Convolution<'a, S> {
    Convolution { hopf, left, right }
}

impl<S: Scalar> Character<S> for Convolution<'_, S> {
    fn on_generator(&self, g: &Generator) -> S {
        let mut r = S::nil();
        for ((a, b), c) in self.hopf.coproduct_plus(&g.forest()).iter() {
            let v = self.left.eval(a).times(&self.right.eval(b));
            r = r.plus(&S::from_q(c).times(&v));
        }
        r
    }
}

/// Convolution inverse `g ∘ S`.
pub struct Inverse<'a, S> {
    pub hopf: &'a Hopf,
    pub g: &'a dyn Character<S>,
}

impl<S: Scalar> Character<S> for Inverse<'_, S> {
    fn on_generator(&self, gen: &Generator) -> S {
        self.g.eval_lin(&self.hopf.antipode(&gen.forest()))
    }
}

/// `ĝ(τ) = (Id ⊗ g)Δτ`.
pub fn gamma_map<S: Scalar>(hopf: &Hopf, g: &dyn Character<S>, t: &Tree) -> LinComb<Tree, S> {
    let mut r = LinComb::new();
    for ((a, f), c) in hopf.coproduct(t).iter() {
        r.add_term(a.clone(), S::from_q(c).times(&g.eval(f)));
    }
    r
}

pub fn gamma_map_lin<S: Scalar>(
    hopf: &Hopf,
    g: &dyn Character<S>,
    v: &LinComb<Tree, S>,
) -> LinComb<Tree, S> {
    let mut r = LinComb::new();
    for (t, c) in v.iter() {
        r.add_scaled(&gamma_map(hopf, g, t), c);
    }
    r
}

// ---------------------------------------------------------------- identity suite

/// Outcome of one symbolic identity: number of cases and of nonzero residual terms.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub cases: usize,
    pub residual_terms: usize,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.residual_terms == 0 && self.cases > 0
    }
}

fn random_forests(basis: &Basis, n: usize, seed: u64) -> Vec<Forest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &basis.generators;
    (0..n)
        .map(|_| {
            let k = 1 + (rng.next_u32() % 3) as usize;
            let mut f = Forest::one();
            for _ in 0..k {
                f = f.mul(&g[(rng.next_u32() as usize) % g.len()].forest());
            }
            f
        })
        .collect()
}

type Triple = LinComb<(Forest, Forest, Forest)>;
type TreeTriple = LinComb<(Tree, Forest, Forest)>;

fn count_diff<K: Ord + Clone>(a: &LinComb<K>, b: &LinComb<K>) -> usize {
    a.sub(b).len()
}

impl Hopf {
    /// (Δ⁺⊗Id)Δ⁺ − (Id⊗Δ⁺)Δ⁺ on `f`; number of nonzero terms.
    pub fn coassociativity_residual(&self, f: &Forest) -> usize {
        let dp = self.coproduct_plus(f);
        let mut l = Triple::new();
        let mut r = Triple::new();
        for ((a, b), c) in dp.iter() {
            for ((a1, a2), c1) in self.coproduct_plus(a).iter() {
                l.add_term((a1.clone(), a2.clone(), b.clone()), c * c1);
            }
            for ((b1, b2), c2) in self.coproduct_plus(b).iter() {
                r.add_term((a.clone(), b1.clone(), b2.clone()), c * c2);
            }
        }
        count_diff(&l, &r)
    }

    /// (Δ⊗Id)Δ − (Id⊗Δ⁺)Δ on `t`.
    pub fn compatibility_residual(&self, t: &Tree) -> usize {
        let dt = self.coproduct(t);
        let mut l = TreeTriple::new();
        let mut r = TreeTriple::new();
        for ((a, b), c) in dt.iter() {
            for ((a1, a2), c1) in self.coproduct(a).iter() {
                l.add_term((a1.clone(), a2.clone(), b.clone()), c * c1);
            }
            for ((b1, b2), c2) in self.coproduct_plus(b).iter() {
                r.add_term((a.clone(), b1.clone(), b2.clone()), c * c2);
            }
        }
        count_diff(&l, &r)
    }

    /// Both counit laws on T⁺ for `f`.
    pub fn counit_residual(&self, f: &Forest) -> usize {
        let dp = self.coproduct_plus(f);
        let mut l = ForestLin::new();
        let mut r = ForestLin::new();
        for ((a, b), c) in dp.iter() {
            if a.is_one() {
                l.add_term(b.clone(), c.clone());
            }
            if b.is_one() {
                r.add_term(a.clone(), c.clone());
            }
        }
        let id = ForestLin::single(f.clone());
        count_diff(&l, &id) + count_diff(&r, &id)
    }

    /// (Id ⊗ 1'₊)Δτ − τ.
    pub fn right_counit_residual(&self, t: &Tree) -> usize {
        let mut l = TreeLin::new();
        for ((a, b), c) in self.coproduct(t).iter() {
            if b.is_one() {
                l.add_term(a.clone(), c.clone());
            }
        }
        count_diff(&l, &TreeLin::single(t.clone()))
    }

    /// m(Id⊗S)Δ⁺f and m(S⊗Id)Δ⁺f against 1'₊(f)·1₊.
    pub fn antipode_residual(&self, f: &Forest) -> usize {
        let dp = self.coproduct_plus(f);
        let mut l = ForestLin::new();
        let mut r = ForestLin::new();
        for ((a, b), c) in dp.iter() {
            for (sb, cb) in self.antipode(b).iter() {
                l.add_term(a.mul(sb), c * cb);
            }
            for (sa, ca) in self.antipode(a).iter() {
                r.add_term(sa.mul(b), c * ca);
            }
        }
        let e = if f.is_one() { ForestLin::single(Forest::one()) } else { ForestLin::new() };
        count_diff(&l, &e) + count_diff(&r, &e)
    }

    /// Δ⁺(τ/η) − Σ_σ (σ/η) ⊗ (τ/σ) over all η reachable from τ.
    pub fn quotient_residual(&self, t: &Tree) -> usize {
        let quot = |s: &Tree| -> BTreeMap<Tree, ForestLin> {
            let mut m: BTreeMap<Tree, ForestLin> = BTreeMap::new();
            for ((a, f), c) in self.coproduct(s).iter() {
                m.entry(a.clone()).or_default().add_term(f.clone(), c.clone());
            }
            m
        };
        let qt = quot(t);
        let qs: BTreeMap<Tree, BTreeMap<Tree, ForestLin>> =
            qt.keys().map(|s| (s.clone(), quot(s))).collect();
        let mut etas: BTreeSet<Tree> = BTreeSet::new();
        for m in qs.values() {
            etas.extend(m.keys().cloned());
        }
        let mut bad = 0;
        for eta in &etas {
            let lhs = match qt.get(eta) {
                Some(v) => self.coproduct_plus_lin(v),
                None => SplitPlus::new(),
            };
            let mut rhs = SplitPlus::new();
            for (s, ts) in &qt {
                if let Some(se) = qs[s].get(eta) {
                    for (f1, c1) in se.iter() {
                        for (f2, c2) in ts.iter() {
                            rhs.add_term((f1.clone(), f2.clone()), c1 * c2);
                        }
                    }
                }
            }
            bad += count_diff(&lhs, &rhs);
        }
        bad
    }

    /// Runs every Hopf identity on the basis with exact rationals.
    pub fn identity_suite(&self, basis: &Basis, seed: u64) -> Vec<IdentityCheck> {
        let gens: Vec<Forest> = basis.generators.iter().map(|g| g.forest()).collect();
        let mut forests = gens.clone();
        forests.push(Forest::one());
        forests.extend(random_forests(basis, 20, seed));
        let mut out = Vec::new();
        let mut run = |name, cases: usize, res: usize| {
            out.push(IdentityCheck { name, cases, residual_terms: res })
        };
        run(
            "coassociativity",
            forests.len(),
            forests.iter().map(|f| self.coassociativity_residual(f)).sum(),
        );
        run(
            "compatibility",
            basis.trees.len(),
            basis.trees.iter().map(|t| self.compatibility_residual(t)).sum(),
        );
        run("counit_plus", forests.len(), forests.iter().map(|f| self.counit_residual(f)).sum());
        run(
            "counit_right",
            basis.trees.len(),
            basis.trees.iter().map(|t| self.right_counit_residual(t)).sum(),
        );
        run("antipode", forests.len(), forests.iter().map(|f| self.antipode_residual(f)).sum());

        let chars: Vec<RandomCharacter> =
            (0..20).map(|i| RandomCharacter { seed: seed.wrapping_add(1000 + i) }).collect();
        let mut inv_bad = 0;
        for g in &chars {
            let gi = Inverse { hopf: self, g: g as &dyn Character<Q> };
            let conv = convolve(self, g as &dyn Character<Q>, &gi);
            let conv2 = convolve(self, &gi, g as &dyn Character<Q>);
            for f in &forests {
                let e: Q = if f.is_one() { One::one() } else { Zero::zero() };
                inv_bad += (conv.eval(f) != e) as usize + (conv2.eval(f) != e) as usize;
            }
        }
        run("character_inverse", chars.len() * forests.len(), inv_bad);

        let mut assoc_bad = 0;
        for w in chars.windows(3).take(6) {
            let (a, b, c): (&dyn Character<Q>, &dyn Character<Q>, &dyn Character<Q>) =
                (&w[0], &w[1], &w[2]);
            let ab = convolve(self, a, b);
            let bc = convolve(self, b, c);
            let l = convolve(self, &ab, c);
            let r = convolve(self, a, &bc);
            for f in &forests {
                assoc_bad += (l.eval(f) != r.eval(f)) as usize;
            }
        }
        run("convolution_associativity", 6 * forests.len(), assoc_bad);

        let mut rep_bad = 0;
        for w in chars.chunks(2).take(5) {
            let (g1, g2): (&dyn Character<Q>, &dyn Character<Q>) = (&w[0], &w[1]);
            let g12 = convolve(self, g1, g2);
            for t in &basis.trees {
                let l = gamma_map_lin(self, g1, &gamma_map(self, g2, t));
                let r = gamma_map(self, &g12, t);
                rep_bad += l.sub(&r).len();
            }
        }
        run("representation", 5 * basis.trees.len(), rep_bad);
        run("grading", basis.trees.len(), self.grading_check(basis).len());
        run(
            "quotient_coproduct",
            basis.trees.len(),
            basis.trees.iter().map(|t| self.quotient_residual(t)).sum(),
        );
        out
    }
}
