//! Renormalized continuous models built recursively from a preparation map.
//!
//! Conventions. `K = (1 - Δ)^{-1}` on the torus, applied spectrally. The
//! polynomial symbol `X_i` is interpreted with literal grid coordinates in
//! `[0,1)^d`, so `Π_x(X^k)(y) = (y - x)^k` and `g_x^{-1}(X_i) = -x_i` hold as
//! exact algebraic identities and all re-expansion relations are exact on the
//! grid. Caches use `RefCell`; a model is confined to one thread.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::{OnceCell, RefCell};
use core::fmt;

use num_rational::BigRational;
#[allow(unused_imports)]
use num_traits::Float;
use num_traits::{ToPrimitive, Zero};

use crate::germ::{self, Germ, GermError, Reconstruction};
use crate::spectral::{self, resolvent_symbol, SpectralError, TorusField, TorusGrid};
use crate::stats;
use crate::treealg::{
    Basis, Character, Convolution, Forest, Generator, Hopf, Inverse, LinComb, Planted,
    Split, StructureSpec, Tree, TreeError, TreeLin, Q,
};
use crate::MultiIndex;

const TIE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    Tree(TreeError),
    Spectral(SpectralError),
    Germ(GermError),
    /// A rule or constant violates the shape or degree constraints.
    BadRule { tree: String, reason: &'static str },
    /// `(R ⊗ Id)Δτ ≠ ΔRτ`.
    Commutation { tree: String },
    DimensionMismatch { spec: usize, grid: usize },
    NonPositiveGamma(f64),
    /// A product needed by `compose_md` is undefined or outside the basis.
    MissingProduct { left: String, right: String },
    NegativeCoefficient { tree: String },
    LadderTooShort(usize),
    NoConvergence { tree: String, se_full: f64, se_quarter: f64 },
    TooFewSamples(usize),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tree(e) => write!(f, "{e}"),
            ModelError::Spectral(e) => write!(f, "{e}"),
            ModelError::Germ(e) => write!(f, "{e}"),
            ModelError::BadRule { tree, reason } => write!(f, "rule for {tree}: {reason}"),
            ModelError::Commutation { tree } => {
                write!(f, "preparation map does not commute with the coproduct on {tree}")
            }
            ModelError::DimensionMismatch { spec, grid } => {
                write!(f, "structure has dimension {spec} but the noise lives in dimension {grid}")
            }
            ModelError::NonPositiveGamma(g) => write!(f, "gamma must be positive, got {g}"),
            ModelError::MissingProduct { left, right } => {
                write!(f, "product {left} * {right} is not available in the structure")
            }
            ModelError::NegativeCoefficient { tree } => {
                write!(f, "coefficient of negative-degree symbol {tree} must vanish")
            }
            ModelError::LadderTooShort(n) => {
                write!(f, "heat ladder has {n} points, at least 4 are needed")
            }
            ModelError::NoConvergence { tree, se_full, se_quarter } => write!(
                f,
                "estimate for {tree} does not converge: SE {se_full:.3e} vs {se_quarter:.3e} on a quarter of the samples"
            ),
            ModelError::TooFewSamples(n) => write!(f, "need at least 8 samples, got {n}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<TreeError> for ModelError {
    fn from(e: TreeError) -> Self {
        ModelError::Tree(e)
    }
}

impl From<SpectralError> for ModelError {
    fn from(e: SpectralError) -> Self {
        ModelError::Spectral(e)
    }
}

impl From<GermError> for ModelError {
    fn from(e: GermError) -> Self {
        ModelError::Germ(e)
    }
}

// ---------------------------------------------------------------- preparation maps

/// Linear map `R = Id + U` on the tree span.
///
/// `U` is stored per tree. Explicit rules fix `U(τ)` outright. A constant `c`
/// for `τ` adds `c·𝟏`. Every other tree gets the particular solution of
/// `ΔU(τ) − U(τ)⊗1 = Σ_{b≠1} U(a)⊗b` read off from its `𝟏 ⊗ b` terms, so a
/// root-level constant on `○I(○)` propagates to every tree containing it.
/// Each value of `U` is checked against that equation, which is the
/// commutation `(R⊗Id)Δ = ΔR`.
pub struct PreparationMap {
    hopf: Hopf,
    rules: BTreeMap<Tree, TreeLin>,
    constants: BTreeMap<Tree, Q>,
    memo: RefCell<BTreeMap<Tree, TreeLin>>,
}

impl fmt::Debug for PreparationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreparationMap")
            .field("spec", self.hopf.spec())
            .field("rules", &self.rules)
            .field("constants", &self.constants)
            .finish()
    }
}

impl PreparationMap {
    pub fn identity(spec: StructureSpec) -> Result<Self, ModelError> {
        Self::build(spec, Vec::new(), Vec::new())
    }

    /// Explicit corrections `U(τ) = R(τ) − τ`.
    pub fn register(spec: StructureSpec, rules: Vec<(Tree, TreeLin)>) -> Result<Self, ModelError> {
        Self::build(spec, rules, Vec::new())
    }

    /// Root constants: `R(τ) = τ + c_τ·𝟏 + (induced terms)`.
    pub fn from_constants(spec: StructureSpec, constants: Vec<(Tree, Q)>) -> Result<Self, ModelError> {
        Self::build(spec, Vec::new(), constants)
    }

    pub fn build(
        spec: StructureSpec,
        rules: Vec<(Tree, TreeLin)>,
        constants: Vec<(Tree, Q)>,
    ) -> Result<Self, ModelError> {
        let hopf = Hopf::new(spec)?;
        let d = hopf.dim();
        for t in rules.iter().map(|r| &r.0).chain(constants.iter().map(|c| &c.0)) {
            let reason = if t.as_planted().is_some() {
                Some("planted trees are fixed by R")
            } else if t.is_polynomial() {
                Some("polynomial symbols are fixed by R")
            } else if !t.monomial().is_zero() {
                Some("rules are given on trees without a root monomial")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(ModelError::BadRule { tree: t.render(d), reason });
            }
        }
        let m = PreparationMap {
            hopf,
            rules: rules.into_iter().collect(),
            constants: constants.into_iter().filter(|(_, c)| !c.is_zero()).collect(),
            memo: RefCell::new(BTreeMap::new()),
        };
        let mut seeds: Vec<Tree> = m.rules.keys().chain(m.constants.keys()).cloned().collect();
        if let Ok(b) = m.hopf.basis() {
            seeds.extend(b.trees);
        }
        m.validate_closure(seeds)?;
        Ok(m)
    }

    /// Computes `U` on the seeds, their subtrees, left legs and correction terms.
    fn validate_closure(&self, seeds: Vec<Tree>) -> Result<(), ModelError> {
        let mut seen: BTreeSet<Tree> = BTreeSet::new();
        let mut stack = seeds;
        while let Some(t) = stack.pop() {
            if !seen.insert(t.clone()) {
                continue;
            }
            for ((a, _), _) in self.hopf.coproduct(&t).iter() {
                stack.push(a.clone());
            }
            for p in t.children() {
                stack.push(p.tree.clone());
            }
            for (s, _) in self.correction(&t)?.iter() {
                stack.push(s.clone());
            }
        }
        Ok(())
    }

    pub fn hopf(&self) -> &Hopf {
        &self.hopf
    }

    pub fn spec(&self) -> &StructureSpec {
        self.hopf.spec()
    }

    pub fn is_identity(&self) -> bool {
        self.rules.is_empty() && self.constants.is_empty()
    }

    /// `U(τ) = R(τ) − τ`.
    pub fn correction(&self, t: &Tree) -> Result<TreeLin, ModelError> {
        if let Some(u) = self.memo.borrow().get(t) {
            return Ok(u.clone());
        }
        let u = self.solve(t)?;
        self.memo.borrow_mut().insert(t.clone(), u.clone());
        Ok(u)
    }

    fn solve(&self, t: &Tree) -> Result<TreeLin, ModelError> {
        if t.is_polynomial() || t.as_planted().is_some() {
            return Ok(TreeLin::new());
        }
        let k = t.monomial();
        if !k.is_zero() {
            let xk = Tree::mono(k);
            let mut u = TreeLin::new();
            for (s, c) in self.correction(&t.without_monomial())?.iter() {
                u.add_term(s.mul(&xk).expect("monomials multiply freely"), c.clone());
            }
            return Ok(u);
        }
        let mut rhs = Split::new();
        for ((a, b), c) in self.hopf.coproduct(t).iter() {
            if b.is_one() {
                continue;
            }
            for (s, e) in self.correction(a)?.iter() {
                rhs.add_term((s.clone(), b.clone()), c * e);
            }
        }
        let u = match self.rules.get(t) {
            Some(r) => r.clone(),
            None => {
                let mut u = TreeLin::new();
                for ((a, b), c) in rhs.iter() {
                    if a.is_one() {
                        u.add_term(forest_tree(b), c.clone());
                    }
                }
                if let Some(c) = self.constants.get(t) {
                    u.add_term(Tree::one(), c.clone());
                }
                u
            }
        };
        let d = self.hopf.dim();
        let deg = self.hopf.spec().degree(t);
        for (s, _) in u.iter() {
            if self.hopf.spec().degree(s) < deg - TIE {
                return Err(ModelError::BadRule {
                    tree: t.render(d),
                    reason: "correction term of lower degree",
                });
            }
            if s.noise_count() >= t.noise_count() {
                return Err(ModelError::BadRule {
                    tree: t.render(d),
                    reason: "correction term does not lower the noise count",
                });
            }
        }
        let mut lhs = Split::new();
        for (s, c) in u.iter() {
            for (pair, e) in self.hopf.coproduct(s).iter() {
                lhs.add_term(pair.clone(), c * e);
            }
            lhs.add_term((s.clone(), Forest::one()), -c.clone());
        }
        if !lhs.sub(&rhs).is_empty() {
            return Err(ModelError::Commutation { tree: t.render(d) });
        }
        Ok(u)
    }

    pub fn apply(&self, t: &Tree) -> Result<TreeLin, ModelError> {
        let mut r = self.correction(t)?;
        r.add_term(t.clone(), Q::from_integer(1.into()));
        Ok(r)
    }

    pub fn apply_lin(&self, v: &TreeLin) -> Result<TreeLin, ModelError> {
        let mut r = TreeLin::new();
        for (t, c) in v.iter() {
            r.add_scaled(&self.apply(t)?, c);
        }
        Ok(r)
    }

    fn correction_lin(&self, v: &TreeLin) -> Result<TreeLin, ModelError> {
        let mut r = TreeLin::new();
        for (t, c) in v.iter() {
            r.add_scaled(&self.correction(t)?, c);
        }
        Ok(r)
    }

    /// `R^{-1}τ = Σ_m (−U)^m τ`; the series stops because `U` lowers the noise count.
    pub fn inverse_apply(&self, t: &Tree) -> Result<TreeLin, ModelError> {
        let minus = Q::from_integer((-1).into());
        let mut out = TreeLin::single(t.clone());
        let mut cur = out.clone();
        loop {
            cur = self.correction_lin(&cur)?.scale(&minus);
            if cur.is_empty() {
                return Ok(out);
            }
            out.add_scaled(&cur, &Q::from_integer(1.into()));
        }
    }

    /// Nonzero corrections on the given trees, for dumps and file output.
    pub fn corrections(&self, trees: &[Tree]) -> Result<Vec<(Tree, TreeLin)>, ModelError> {
        let mut out = Vec::new();
        for t in trees {
            let u = self.correction(t)?;
            if !u.is_empty() {
                out.push((t.clone(), u));
            }
        }
        Ok(out)
    }

    /// `Γ_g R τ = R Γ_g τ` with exact arithmetic.
    pub fn gamma_commutes(&self, g: &dyn Character<Q>, t: &Tree) -> Result<bool, ModelError> {
        let rt = self.apply(t)?;
        let mut lhs = TreeLin::new();
        for (s, c) in rt.iter() {
            lhs.add_scaled(&crate::treealg::gamma_map(&self.hopf, g, s), c);
        }
        let rhs = self.apply_lin(&crate::treealg::gamma_map(&self.hopf, g, t))?;
        Ok(lhs.sub(&rhs).is_empty())
    }
}

/// The forest `X^ℓ ∏ I_n(τ)` read as the tree with the same root decorations.
fn forest_tree(f: &Forest) -> Tree {
    Tree::new(f.monomial(), false, f.factors().to_vec())
}

fn to_f64(c: &Q) -> f64 {
    c.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational closest to a float constant.
pub fn rational(x: f64) -> Q {
    BigRational::from_float(x).unwrap_or_else(Q::zero)
}

// ---------------------------------------------------------------- continuous model

/// `Π_x`, `𝚷` and `g_x` for one noise realisation and one preparation map.
pub struct ContinuousModel {
    prep: Rc<PreparationMap>,
    zeta: TorusField,
    grid: TorusGrid,
    basis: OnceCell<Result<Basis, TreeError>>,
    bold_x: RefCell<BTreeMap<Tree, TorusField>>,
    pi_x: RefCell<BTreeMap<(usize, Tree), TorusField>>,
    jets: RefCell<BTreeMap<(usize, Planted), Vec<f64>>>,
}

impl ContinuousModel {
    pub fn new(prep: Rc<PreparationMap>, zeta: TorusField) -> Result<Self, ModelError> {
        let grid = zeta.grid();
        if grid.dim() != prep.spec().dim {
            return Err(ModelError::DimensionMismatch { spec: prep.spec().dim, grid: grid.dim() });
        }
        Ok(ContinuousModel {
            prep,
            zeta,
            grid,
            basis: OnceCell::new(),
            bold_x: RefCell::new(BTreeMap::new()),
            pi_x: RefCell::new(BTreeMap::new()),
            jets: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn canonical(spec: StructureSpec, zeta: TorusField) -> Result<Self, ModelError> {
        Self::new(Rc::new(PreparationMap::identity(spec)?), zeta)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn noise(&self) -> &TorusField {
        &self.zeta
    }

    pub fn prep(&self) -> &PreparationMap {
        &self.prep
    }

    pub fn hopf(&self) -> &Hopf {
        self.prep.hopf()
    }

    pub fn spec(&self) -> &StructureSpec {
        self.prep.spec()
    }

    pub fn basis(&self) -> Result<&Basis, ModelError> {
        self.basis
            .get_or_init(|| self.hopf().basis())
            .as_ref()
            .map_err(|e| ModelError::Tree(e.clone()))
    }

    /// `y ↦ (y − x)^k`, or `y^k` without a base point.
    pub fn monomial_field(&self, k: MultiIndex, x: Option<usize>) -> TorusField {
        let o = x.map(|x| self.grid.coord(x)).unwrap_or([0.0; 2]);
        TorusField::from_fn(self.grid, |y| k.pow(&[y[0] - o[0], y[1] - o[1]]))
    }

    fn r_f64(&self, t: &Tree) -> Result<Vec<(Tree, f64)>, ModelError> {
        Ok(self.prep.apply(t)?.iter().map(|(s, c)| (s.clone(), to_f64(c))).collect())
    }

    /// `𝚷^×(τ)`: multiplicative, `𝚷^×(I_nτ) = ∂^nK 𝚷(τ)`.
    pub fn bold_times(&self, t: &Tree) -> Result<TorusField, ModelError> {
        if let Some(f) = self.bold_x.borrow().get(t) {
            return Ok(f.clone());
        }
        let mut f = self.monomial_field(t.monomial(), None);
        if t.has_noise() {
            f = f.mul(&self.zeta)?;
        }
        for p in t.children() {
            f = f.mul(&spectral::resolvent_apply(&self.bold(&p.tree)?, p.edge))?;
        }
        self.bold_x.borrow_mut().insert(t.clone(), f.clone());
        Ok(f)
    }

    /// `𝚷(τ) = 𝚷^×(Rτ)`.
    pub fn bold(&self, t: &Tree) -> Result<TorusField, ModelError> {
        let mut f = TorusField::zero(self.grid);
        for (s, c) in self.r_f64(t)? {
            f = f.axpby(1.0, &self.bold_times(&s)?, c)?;
        }
        Ok(f)
    }

    /// `Π^×_x(τ)`: multiplicative, `Π^×_x(X^k) = (· − x)^k`, `Π^×_x(○) = ζ`.
    pub fn pi_times(&self, x: usize, t: &Tree) -> Result<TorusField, ModelError> {
        let key = (x, t.clone());
        if let Some(f) = self.pi_x.borrow().get(&key) {
            return Ok(f.clone());
        }
        let mut f = self.monomial_field(t.monomial(), Some(x));
        if t.has_noise() {
            f = f.mul(&self.zeta)?;
        }
        for p in t.children() {
            f = f.mul(&self.pi_planted(x, p)?)?;
        }
        self.pi_x.borrow_mut().insert(key, f.clone());
        Ok(f)
    }

    /// `Π^×_x(I_nτ) = ∂^nK(Π_xτ) − Σ_{|ℓ|<deg} (· − x)^ℓ/ℓ! ∂^{n+ℓ}K(Π_xτ)(x)`.
    fn pi_planted(&self, x: usize, p: &Planted) -> Result<TorusField, ModelError> {
        let mut f = spectral::resolvent_apply(&self.pi(x, &p.tree)?, p.edge);
        let jet = self.jet(x, p)?;
        for (l, v) in self.hopf().jet_indices(p).into_iter().zip(jet) {
            let m = self.monomial_field(l, Some(x));
            f = f.axpby(1.0, &m, -v / l.factorial() as f64)?;
        }
        Ok(f)
    }

    /// `Π_x(τ) = Π^×_x(Rτ)`.
    pub fn pi(&self, x: usize, t: &Tree) -> Result<TorusField, ModelError> {
        let mut f = TorusField::zero(self.grid);
        for (s, c) in self.r_f64(t)? {
            f = f.axpby(1.0, &self.pi_times(x, &s)?, c)?;
        }
        Ok(f)
    }

    pub fn pi_lin(&self, x: usize, v: &LinComb<Tree, f64>) -> Result<TorusField, ModelError> {
        let mut f = TorusField::zero(self.grid);
        for (s, c) in v.iter() {
            f = f.axpby(1.0, &self.pi(x, s)?, *c)?;
        }
        Ok(f)
    }

    /// `∂^{n+ℓ}K(Π_xτ)(x)` for `ℓ` in `Hopf::jet_indices` order.
    pub fn jet(&self, x: usize, p: &Planted) -> Result<Vec<f64>, ModelError> {
        let key = (x, p.clone());
        if let Some(j) = self.jets.borrow().get(&key) {
            return Ok(j.clone());
        }
        let ls = self.hopf().jet_indices(p);
        let mut j = Vec::with_capacity(ls.len());
        if !ls.is_empty() {
            let base = self.pi(x, &p.tree)?;
            for l in ls {
                let n = p.edge.add(&l);
                j.push(base.eval_multiplier_at(|k| resolvent_symbol(k, n), x));
            }
        }
        self.jets.borrow_mut().insert(key, j.clone());
        Ok(j)
    }

    /// `g_x^{-1}(I_nτ) = −Σ_{|ℓ|<deg} (−x)^ℓ/ℓ! ∂^{n+ℓ}K(Π_xτ)(x)`.
    pub fn ginv_planted(&self, x: usize, p: &Planted) -> Result<f64, ModelError> {
        let c = self.grid.coord(x);
        let mx = [-c[0], -c[1]];
        let jet = self.jet(x, p)?;
        Ok(-self
            .hopf()
            .jet_indices(p)
            .into_iter()
            .zip(jet)
            .map(|(l, v)| l.pow(&mx) / l.factorial() as f64 * v)
            .sum::<f64>())
    }

    pub fn g_inv(&self, x: usize) -> GInv<'_> {
        GInv { m: self, x }
    }

    pub fn g(&self, x: usize) -> Gx<'_> {
        Gx { m: self, x }
    }

    pub fn g_yx(&self, y: usize, x: usize) -> Gyx<'_> {
        Gyx { m: self, y, x }
    }

    /// `Γ_yx τ`, satisfying `Π_y Γ_yx τ = Π_x τ`.
    pub fn gamma(&self, y: usize, x: usize, t: &Tree) -> LinComb<Tree, f64> {
        crate::treealg::gamma_map::<f64>(self.hopf(), &self.g_yx(y, x), t)
    }

    // ------------------------------------------------------------ verification

    /// `Π_x(τ) − (𝚷 ⊗ g_x^{-1})Δτ` in sup norm.
    pub fn verify_lemma10(&self, t: &Tree, x: usize) -> Result<Residual, ModelError> {
        let lhs = self.pi(x, t)?;
        let gi = self.g_inv(x);
        let mut rhs = TorusField::zero(self.grid);
        let mut scale = lhs.max_abs();
        for ((a, b), c) in self.hopf().coproduct(t).iter() {
            let w = to_f64(c) * Character::<f64>::eval(&gi, b);
            if w == 0.0 {
                continue;
            }
            let f = self.bold(a)?;
            scale = scale.max(w.abs() * f.max_abs());
            rhs = rhs.axpby(1.0, &f, w)?;
        }
        Ok(Residual { abs: lhs.sub(&rhs)?.max_abs(), scale })
    }

    /// `Π_x Γ_{xy} τ = Π_y τ` on basis trees and `g_{zy} ⋆ g_{yx} = g_{zx}` on generators.
    pub fn verify_reexpansion(
        &self,
        triples: &[(usize, usize, usize)],
    ) -> Result<ReexpansionReport, ModelError> {
        let basis = self.basis()?.clone();
        let mut pi_res = Residual::default();
        let mut co_res = Residual::default();
        for &(x, y, z) in triples {
            for t in &basis.trees {
                let lhs = self.pi_lin(x, &self.gamma(x, y, t))?;
                let rhs = self.pi(y, t)?;
                pi_res.absorb(lhs.sub(&rhs)?.max_abs(), rhs.max_abs().max(lhs.max_abs()));
            }
            let gzy = self.g_yx(z, y);
            let gyx = self.g_yx(y, x);
            let gzx = self.g_yx(z, x);
            let conv = Convolution { hopf: self.hopf(), left: &gzy, right: &gyx };
            for gen in &basis.generators {
                let a = conv.on_generator(gen);
                let b = gzx.on_generator(gen);
                co_res.absorb((a - b).abs(), a.abs().max(b.abs()));
            }
        }
        Ok(ReexpansionReport { reexpansion: pi_res, cocycle: co_res })
    }

    /// Both sides of the jet identity for `g_yx(I_nτ)`:
    /// `Σ_θ g_yx(τ/θ) ∂^nK(Π_yθ)(y) − Σ_{|ℓ|<deg} (y−x)^ℓ/ℓ! ∂^{n+ℓ}K(Π_xτ)(x)`,
    /// with `θ` ranging over the non-polynomial left legs of `Δτ` with
    /// `deg I_nθ > 0`.
    pub fn verify_lemma11(&self, p: &Planted, pairs: &[(usize, usize)]) -> Result<Residual, ModelError> {
        let spec = self.spec().clone();
        let mut quot: BTreeMap<Tree, crate::treealg::ForestLin> = BTreeMap::new();
        for ((a, b), c) in self.hopf().coproduct(&p.tree).iter() {
            if a.is_polynomial() || spec.planted_degree(&Planted::new(p.edge, a.clone())) <= 0.0 {
                continue;
            }
            quot.entry(a.clone()).or_default().add_term(b.clone(), c.clone());
        }
        let mut res = Residual::default();
        for &(x, y) in pairs {
            let gyx = self.g_yx(y, x);
            let lhs = gyx.on_generator(&Generator::Planted(p.clone()));
            let mut rhs = 0.0;
            let mut scale = lhs.abs();
            for (theta, tq) in &quot {
                let w = gyx.eval_lin(tq);
                let v = self.pi(y, theta)?.eval_multiplier_at(|k| resolvent_symbol(k, p.edge), y);
                rhs += w * v;
                scale = scale.max((w * v).abs());
            }
            let dx = {
                let (cy, cx) = (self.grid.coord(y), self.grid.coord(x));
                [cy[0] - cx[0], cy[1] - cx[1]]
            };
            for (l, v) in self.hopf().jet_indices(p).into_iter().zip(self.jet(x, p)?) {
                let term = l.pow(&dx) / l.factorial() as f64 * v;
                rhs -= term;
                scale = scale.max(term.abs());
            }
            res.absorb((lhs - rhs).abs(), scale);
        }
        Ok(res)
    }

    /// Slope of `log ⟨|Π_x τ|, p_t(x,·)⟩` against `log √t`, pairings averaged over `xs`.
    pub fn scaling_exponent(&self, t: &Tree, xs: &[usize]) -> Result<f64, ModelError> {
        let ladder = germ::dyadic_ladder(self.grid, 1.0 / 64.0);
        if ladder.len() < 4 {
            return Err(ModelError::LadderTooShort(ladder.len()));
        }
        let abs: Vec<TorusField> = xs
            .iter()
            .map(|&x| self.pi(x, t).map(|f| f.map(f64::abs)))
            .collect::<Result<_, _>>()?;
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for &s in &ladder {
            let mut acc = 0.0;
            for (f, &x) in abs.iter().zip(xs) {
                acc += germ::heat_pair(f, x, s)?;
            }
            lx.push(0.5 * s.ln());
            ly.push((acc / xs.len() as f64).ln());
        }
        Ok(stats::linear_fit(&lx, &ly).0)
    }

    /// `𝚷` expressed through the canonical products: `Σ_σ c_σ 𝚷^×(σ)` for `Rτ = Σ c_σ σ`.
    pub fn bold_via_products(&self, t: &Tree) -> Result<Vec<(Tree, f64)>, ModelError> {
        self.r_f64(t)
    }
}

/// Points spread over the middle of the torus, away from the coordinate seam.
pub fn central_points(grid: TorusGrid, count: usize) -> Vec<usize> {
    let n = grid.n();
    let count = count.max(1);
    (0..count)
        .map(|i| {
            let a = n / 4 + (i * n / 2) / count;
            let b = if grid.dim() == 2 { n / 4 + ((i * 7 + 3) % count) * n / (2 * count) } else { 0 };
            grid.flat([a, b])
        })
        .collect()
}

/// `g_x^{-1}`.
pub struct GInv<'a> {
    m: &'a ContinuousModel,
    x: usize,
}

impl Character<f64> for GInv<'_> {
    fn on_generator(&self, g: &Generator) -> f64 {
        match g {
            Generator::X(i) => -self.m.grid.coord(self.x)[*i],
            Generator::Planted(p) => self
                .m
                .ginv_planted(self.x, p)
                .expect("model evaluated outside its validated trees"),
        }
    }
}

/// `g_x = g_x^{-1} ∘ S`.
pub struct Gx<'a> {
    m: &'a ContinuousModel,
    x: usize,
}

impl Character<f64> for Gx<'_> {
    fn on_generator(&self, g: &Generator) -> f64 {
        Inverse { hopf: self.m.hopf(), g: &self.m.g_inv(self.x) }.on_generator(g)
    }
}

/// `g_yx = g_y ⋆ g_x^{-1}`.
pub struct Gyx<'a> {
    m: &'a ContinuousModel,
    y: usize,
    x: usize,
}

impl Character<f64> for Gyx<'_> {
    fn on_generator(&self, g: &Generator) -> f64 {
        let gy = self.m.g(self.y);
        let gx = self.m.g_inv(self.x);
        Convolution { hopf: self.m.hopf(), left: &gy, right: &gx }.on_generator(g)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residual {
    pub abs: f64,
    /// Largest magnitude among the compared quantities.
    pub scale: f64,
}

impl Residual {
    /// `abs / max(scale, 1)`.
    pub fn relative(&self) -> f64 {
        self.abs / self.scale.max(1.0)
    }

    fn absorb(&mut self, abs: f64, scale: f64) {
        self.abs = self.abs.max(abs);
        self.scale = self.scale.max(scale);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReexpansionReport {
    pub reexpansion: Residual,
    pub cocycle: Residual,
}

// ---------------------------------------------------------------- modelled distributions

/// Coefficient fields `x ↦ v_τ(x)` of a modelled distribution.
#[derive(Clone, Debug)]
pub struct ModelledDistribution {
    pub gamma: f64,
    pub coeffs: BTreeMap<Tree, TorusField>,
}

impl ModelledDistribution {
    pub fn new(gamma: f64) -> Self {
        ModelledDistribution { gamma, coeffs: BTreeMap::new() }
    }

    pub fn with(mut self, t: Tree, f: TorusField) -> Self {
        self.coeffs.insert(t, f);
        self
    }

    pub fn coeff(&self, t: &Tree) -> Option<&TorusField> {
        self.coeffs.get(t)
    }

    /// `v(x) = Σ_{|k|<γ} ∂^k f(x)/k! X^k`.
    pub fn polynomial_lift(f: &TorusField, gamma: f64) -> Self {
        let d = f.grid().dim();
        let bound = (gamma - TIE).ceil().max(0.0) as u32;
        let mut v = Self::new(gamma);
        for k in MultiIndex::all_below(d, bound) {
            if (k.order() as f64) < gamma {
                v.coeffs.insert(Tree::mono(k), f.derivative(k).scale(1.0 / k.factorial() as f64));
            }
        }
        v
    }

    /// `v(x)` as a combination of symbols.
    pub fn at(&self, x: usize) -> LinComb<Tree, f64> {
        let mut r = LinComb::new();
        for (t, f) in &self.coeffs {
            r.add_term(t.clone(), f.value(x));
        }
        r
    }
}

/// Reconstruction of the germ `Λ_x = Σ_τ v_τ(x) Π_x(τ)`.
pub fn md_to_field(m: &ContinuousModel, v: &ModelledDistribution) -> Result<Reconstruction, ModelError> {
    if !(v.gamma > 0.0) {
        return Err(ModelError::NonPositiveGamma(v.gamma));
    }
    let grid = m.grid();
    let mut fields = Vec::with_capacity(grid.len());
    for x in 0..grid.len() {
        fields.push(m.pi_lin(x, &v.at(x))?);
    }
    Ok(germ::reconstruct(&Germ::new(grid, fields)?, v.gamma)?)
}

/// `F(v)(x) = Q_γ Σ_n F^{(n)}(v_𝟏(x))/n! (v(x) − v_𝟏(x)𝟏)^n`.
///
/// `deriv(n, u)` returns `F^{(n)}(u)`. Products are taken in the tree algebra
/// and must land in the model's basis below `γ`.
pub fn compose_md(
    m: &ContinuousModel,
    v: &ModelledDistribution,
    deriv: &dyn Fn(usize, f64) -> f64,
) -> Result<ModelledDistribution, ModelError> {
    let spec = m.spec();
    let d = spec.dim;
    let grid = m.grid();
    let gamma = v.gamma;
    let basis: BTreeSet<Tree> = m.basis()?.trees.iter().cloned().collect();
    let one = Tree::one();
    let v1 = v.coeff(&one).cloned().unwrap_or_else(|| TorusField::zero(grid));
    let mut rest: Vec<(Tree, TorusField)> = Vec::new();
    for (t, f) in &v.coeffs {
        if t.is_one() {
            continue;
        }
        if spec.degree(t) < 0.0 {
            if f.max_abs() > 0.0 {
                return Err(ModelError::NegativeCoefficient { tree: t.render(d) });
            }
            continue;
        }
        if spec.degree(t) < gamma {
            rest.push((t.clone(), f.clone()));
        }
    }
    let mut out = ModelledDistribution::new(gamma);
    out.coeffs.insert(one.clone(), v1.map(|u| deriv(0, u)));
    let min_deg = rest.iter().map(|(t, _)| spec.degree(t)).fold(f64::INFINITY, f64::min);
    if rest.is_empty() || !(min_deg > 0.0) {
        // a zero-degree symbol other than 𝟏 would make the series infinite
        if !rest.is_empty() {
            return Err(ModelError::BadRule {
                tree: rest[0].0.render(d),
                reason: "composition needs positive-degree symbols away from 1",
            });
        }
        return Ok(out);
    }
    let n_max = ((gamma / min_deg).ceil() as usize).max(1);
    let mut power: BTreeMap<Tree, TorusField> = BTreeMap::new();
    power.insert(one.clone(), TorusField::constant(grid, 1.0));
    let mut fact = 1.0;
    for n in 1..=n_max {
        let mut next: BTreeMap<Tree, TorusField> = BTreeMap::new();
        for (a, fa) in &power {
            for (b, fb) in &rest {
                let prod = a.mul(b).ok_or_else(|| ModelError::MissingProduct {
                    left: a.render(d),
                    right: b.render(d),
                })?;
                if spec.degree(&prod) >= gamma {
                    continue;
                }
                if !basis.contains(&prod) {
                    return Err(ModelError::MissingProduct { left: a.render(d), right: b.render(d) });
                }
                let f = fa.mul(fb)?;
                let e = next.entry(prod).or_insert_with(|| TorusField::zero(grid));
                *e = e.add(&f)?;
            }
        }
        if next.is_empty() {
            break;
        }
        fact *= n as f64;
        let dn = v1.map(|u| deriv(n, u) / fact);
        for (t, f) in &next {
            let term = dn.mul(f)?;
            let e = out.coeffs.entry(t.clone()).or_insert_with(|| TorusField::zero(grid));
            *e = e.add(&term)?;
        }
        power = next;
    }
    Ok(out)
}

/// `max |v_τ(y) − (Γ_yx v(x))_τ| / |y − x|^{γ − deg τ}` over the pairs and `deg τ < γ`.
pub fn md_seminorm(
    m: &ContinuousModel,
    v: &ModelledDistribution,
    pairs: &[(usize, usize)],
) -> Result<f64, ModelError> {
    let spec = m.spec();
    let grid = m.grid();
    let mut worst = 0.0f64;
    for &(x, y) in pairs {
        let (cx, cy) = (grid.coord(x), grid.coord(y));
        let dist = ((cy[0] - cx[0]).powi(2) + (cy[1] - cx[1]).powi(2)).sqrt();
        if dist == 0.0 {
            continue;
        }
        let mut moved: LinComb<Tree, f64> = LinComb::new();
        for (s, f) in &v.coeffs {
            moved.add_scaled(&m.gamma(y, x, s), &f.value(x));
        }
        let mut keys: BTreeSet<Tree> = v.coeffs.keys().cloned().collect();
        keys.extend(moved.iter().map(|(t, _)| t.clone()));
        for t in keys {
            let deg = spec.degree(&t);
            if deg >= v.gamma {
                continue;
            }
            let vy = v.coeff(&t).map(|f| f.value(y)).unwrap_or(0.0);
            let diff = (vy - moved.coeff(&t)).abs();
            worst = worst.max(diff / dist.powf(v.gamma - deg));
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------- BPHZ

/// Sharp spectral cutoff of white noise at `|k| ≤ cutoff`.
pub fn mollified_noise(grid: TorusGrid, cutoff: f64, seed: u64) -> TorusField {
    spectral::lowpass(&spectral::sample_white_noise(grid, seed), cutoff)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BphzEstimate {
    pub tree: Tree,
    /// Empirical `E[𝚷(τ)]` under the constants fixed before `τ`.
    pub constant: f64,
    pub se: f64,
    /// Standard error on a quarter of the samples, averaged over the four quarters.
    pub se_quarter: f64,
    /// Whether `−constant·𝟏` was added to `R(τ)`.
    pub registered: bool,
}

#[derive(Debug)]
pub struct Bphz {
    pub map: PreparationMap,
    pub estimates: Vec<BphzEstimate>,
}

fn registrable(spec: &StructureSpec, t: &Tree) -> bool {
    t.as_planted().is_none()
        && !t.is_polynomial()
        && t.monomial().is_zero()
        && t.noise_count() >= 1
        && spec.degree(t) <= 0.0
}

/// Monte-Carlo root constants, solved in noise-count order.
///
/// For each skeleton tree the spatial mean of `𝚷(τ)` is averaged over
/// `n_samples` noise draws `sampler(seed + i)`, with the constants of
/// earlier trees already in the map. Non-planted trees of degree `≤ 0`
/// get `R(τ) = τ − E[𝚷(τ)]·𝟏 + …`; the others are reported only. An
/// estimate whose standard error does not shrink from a quarter of the
/// samples to all of them (`SE > 0.75·SE_quarter`, with `SE_quarter` the
/// mean over the four disjoint quarters) is rejected.
pub fn bphz_constants(
    spec: &StructureSpec,
    skeleton: &[Tree],
    sampler: &dyn Fn(u64) -> TorusField,
    n_samples: usize,
    seed: u64,
) -> Result<Bphz, ModelError> {
    if n_samples < 8 {
        return Err(ModelError::TooFewSamples(n_samples));
    }
    let mut order: Vec<Tree> = skeleton.to_vec();
    order.sort_by(|a, b| {
        a.noise_count()
            .cmp(&b.noise_count())
            .then(spec.degree(a).total_cmp(&spec.degree(b)))
            .then(a.cmp(b))
    });
    order.dedup();
    let noises: Vec<TorusField> = (0..n_samples as u64).map(|i| sampler(seed.wrapping_add(i))).collect();
    let mut consts: Vec<(Tree, Q)> = Vec::new();
    let mut estimates = Vec::new();
    for t in &order {
        let map = Rc::new(PreparationMap::from_constants(spec.clone(), consts.clone())?);
        let mut vals = Vec::with_capacity(n_samples);
        for z in &noises {
            let m = ContinuousModel::new(map.clone(), z.clone())?;
            vals.push(stats::mean(m.bold(t)?.samples()));
        }
        let (mean, se) = stats::mean_se(&vals);
        let q = n_samples / 4;
        let se_quarter = vals.chunks_exact(q).map(|c| stats::mean_se(c).1).sum::<f64>() / 4.0;
        if se_quarter > 0.0 && se > 0.75 * se_quarter {
            return Err(ModelError::NoConvergence {
                tree: t.render(spec.dim),
                se_full: se,
                se_quarter,
            });
        }
        let registered = registrable(spec, t);
        if registered {
            consts.push((t.clone(), rational(-mean)));
        }
        estimates.push(BphzEstimate { tree: t.clone(), constant: mean, se, se_quarter, registered });
    }
    Ok(Bphz { map: PreparationMap::from_constants(spec.clone(), consts)?, estimates })
}

/// `Σ_{|k|≤cutoff} 1/(1 + 4π²|k|²)`, the exact mean of `ζ·Kζ` for the
/// mollified noise.
pub fn mollified_product_mean(grid: TorusGrid, cutoff: f64) -> f64 {
    (0..grid.len())
        .map(|i| grid.wavevector(i))
        .filter(|k| ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt() <= cutoff)
        .map(|k| resolvent_symbol(k, MultiIndex::ZERO).re)
        .sum()
}
