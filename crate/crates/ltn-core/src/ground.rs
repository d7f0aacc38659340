//! Grounding formulas into differentiable computation graphs.
//!
//! A predicate over a `d`-dimensional grounding vector `v` is the tensor
//! network
//!
//! ```text
//! P(v) = sigmoid( u^T tanh( v^T W^[1..k] v + V v + b ) )
//! ```
//!
//! with `k` bilinear kernels `W` of shape `[k, d, d]`, a linear map `V` of
//! shape `[k, d]`, mixing vector `u` of length `k`, and a scalar bias `b`.
//!
//! The compiler walks each axiom, memoising atom evaluations per
//! (predicate, argument tuple) so shared subformulas are evaluated once per
//! tape. A top-level `forall` enumerates the Cartesian product of its
//! variables' domains, skipping tuples that bind two distinct variables that
//! share a domain to the same element. Clause losses are aggregated with the
//! focal log-product and summed in clause-name order, plus an L2 penalty
//! over every trainable parameter on the tape.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{GraphError, NodeId, Tape, Tensor};
use crate::fol::{Formula, KnowledgeBase, Term};
use crate::fuzzy::{
    focal_log_product, luk_and, luk_implies, luk_not, luk_or, AggregatorConfig, Truth,
};

/// Half-width of the uniform parameter initialisation interval.
pub const INIT_RANGE: f64 = 0.05;

/// Kernel count of every predicate network.
pub const DEFAULT_KERNELS: usize = 6;

#[derive(Debug, Error)]
pub enum GroundError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicates of arity {0} are not supported (only 1 and 2)")]
    UnsupportedArity(usize),
    #[error("unbound variable `{0}` outside any quantifier")]
    UnboundVariable(String),
    #[error("unknown constant `{0}`")]
    UnknownConstant(String),
    #[error("nested quantifier: `forall` is only supported at the head of an axiom")]
    NestedQuantifier,
    #[error("variable `{0}` quantifies over an empty domain")]
    EmptyDomain(String),
    #[error("grounding input for predicate `{name}` has length {actual}, expects {expected}")]
    InputDimension {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate clause name `{0}`")]
    DuplicateClause(String),
    #[error("malformed parameter set: {0}")]
    BadParamSet(String),
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

/// Stable sub-seed for a named stream (a predicate's init, an image's
/// batch draw) derived from one global seed. FNV-1a is spelled out so the
/// mapping never shifts under dependency upgrades.
pub fn derive_seed(global_seed: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^ global_seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Trainable tensors of one predicate network.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateParams {
    pub kernels: usize,
    pub input_dim: usize,
    /// `[k, d, d]` bilinear kernel stack.
    pub w: Tensor,
    /// `[k, d]` linear map.
    pub v: Tensor,
    /// `[k]` mixing vector.
    pub u: Tensor,
    /// `[1]` bias.
    pub b: Tensor,
}

impl PredicateParams {
    /// Uniform init in `[-range, range]`, deterministic in `seed`.
    pub fn init(kernels: usize, input_dim: usize, range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-range..=range)).collect()
        };
        let (k, d) = (kernels, input_dim);
        Self {
            kernels: k,
            input_dim: d,
            w: Tensor::new(vec![k, d, d], draw(k * d * d)).unwrap(),
            v: Tensor::new(vec![k, d], draw(k * d)).unwrap(),
            u: Tensor::new(vec![k], draw(k)).unwrap(),
            b: Tensor::new(vec![1], draw(1)).unwrap(),
        }
    }

    pub fn zeros(kernels: usize, input_dim: usize) -> Self {
        let (k, d) = (kernels, input_dim);
        Self {
            kernels: k,
            input_dim: d,
            w: Tensor::zeros(vec![k, d, d]),
            v: Tensor::zeros(vec![k, d]),
            u: Tensor::zeros(vec![k]),
            b: Tensor::zeros(vec![1]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.v.len() + self.u.len() + self.b.len()
    }

    /// Straight-line evaluation without a tape, used on the inference path.
    pub fn eval(&self, input: &[f64]) -> f64 {
        assert_eq!(input.len(), self.input_dim, "grounding dimension mismatch");
        let (k, d) = (self.kernels, self.input_dim);
        let mut logit = 0.0;
        for q in 0..k {
            let mut quad = 0.0;
            let base = q * d * d;
            for i in 0..d {
                let mut row = 0.0;
                for j in 0..d {
                    row += self.w.data()[base + i * d + j] * input[j];
                }
                quad += input[i] * row;
            }
            let mut lin = 0.0;
            for j in 0..d {
                lin += self.v.data()[q * d + j] * input[j];
            }
            let pre = quad + lin + self.b.data()[0];
            logit += self.u.data()[q] * pre.tanh();
        }
        1.0 / (1.0 + (-logit).exp())
    }
}

/// Predicate leaves already inserted into a tape.
#[derive(Debug, Clone)]
pub struct GroundedPredicate {
    pub name: String,
    pub kernels: usize,
    pub input_dim: usize,
    pub w: NodeId,
    pub v: NodeId,
    pub u: NodeId,
    pub b: NodeId,
}

/// Inserts the four tensors as trainable leaves named `{prefix}:W` etc.
pub fn insert_predicate(tape: &mut Tape, prefix: &str, params: &PredicateParams) -> GroundedPredicate {
    GroundedPredicate {
        name: prefix.to_string(),
        kernels: params.kernels,
        input_dim: params.input_dim,
        w: tape.param(format!("{prefix}:W"), params.w.clone()),
        v: tape.param(format!("{prefix}:V"), params.v.clone()),
        u: tape.param(format!("{prefix}:u"), params.u.clone()),
        b: tape.param(format!("{prefix}:b"), params.b.clone()),
    }
}

/// Builds the predicate network over an input node already on the tape.
pub fn predicate_forward(
    tape: &mut Tape,
    pred: &GroundedPredicate,
    input: NodeId,
) -> Result<Truth, GroundError> {
    let in_len = tape.value(input).len();
    if in_len != pred.input_dim {
        return Err(GroundError::InputDimension {
            name: pred.name.clone(),
            expected: pred.input_dim,
            actual: in_len,
        });
    }
    let quad = tape.bilinear(pred.w, input)?;
    let lin = tape.matvec(pred.v, input)?;
    let pre = tape.add(quad, lin)?;
    let pre_b = tape.add_scalar_node(pre, pred.b)?;
    let hidden = tape.tanh(pre_b);
    let mixed = tape.mul(pred.u, hidden)?;
    let logit = tape.sum(mixed);
    Ok(Truth(tape.sigmoid(logit)))
}

/// A named family of predicate parameters: the full trainable state of a
/// model, convertible to and from the flat tensor map the optimizer and
/// checkpoint code operate on (keys `{name}:W`, `{name}:V`, `{name}:u`,
/// `{name}:b`).
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateSet {
    pub preds: BTreeMap<String, PredicateParams>,
}

impl PredicateSet {
    /// Initialises one predicate per `(name, input_dim)` pair. Each draw
    /// uses its own stream seeded from `(seed, name)`, so adding a
    /// predicate never shifts the others' initialisation.
    pub fn init(specs: &[(String, usize)], kernels: usize, seed: u64) -> Self {
        let preds = specs
            .iter()
            .map(|(name, dim)| {
                let params =
                    PredicateParams::init(kernels, *dim, INIT_RANGE, derive_seed(seed, name));
                (name.clone(), params)
            })
            .collect();
        Self { preds }
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, p) in &self.preds {
            out.insert(format!("{name}:W"), p.w.clone());
            out.insert(format!("{name}:V"), p.v.clone());
            out.insert(format!("{name}:u"), p.u.clone());
            out.insert(format!("{name}:b"), p.b.clone());
        }
        out
    }

    /// Rebuilds the set from a flat tensor map, recovering each predicate's
    /// kernel count and input dimension from the stored shapes.
    pub fn from_tensors(tensors: &BTreeMap<String, Tensor>) -> Result<Self, GroundError> {
        let bad = |m: String| GroundError::BadParamSet(m);
        let mut grouped: BTreeMap<&str, BTreeMap<&str, &Tensor>> = BTreeMap::new();
        for (key, tensor) in tensors {
            let (name, part) = key
                .rsplit_once(':')
                .ok_or_else(|| bad(format!("key `{key}` has no `:part` suffix")))?;
            grouped.entry(name).or_default().insert(part, tensor);
        }
        let mut preds = BTreeMap::new();
        for (name, parts) in grouped {
            let get = |part: &str| {
                parts
                    .get(part)
                    .copied()
                    .ok_or_else(|| bad(format!("predicate `{name}` misses `{part}`")))
            };
            let w = get("W")?;
            let v = get("V")?;
            let u = get("u")?;
            let b = get("b")?;
            let (k, d) = match v.shape() {
                [k, d] => (*k, *d),
                other => return Err(bad(format!("`{name}:V` has shape {other:?}, want [k, d]"))),
            };
            if w.shape() != [k, d, d] {
                return Err(bad(format!("`{name}:W` shape {:?} != [{k}, {d}, {d}]", w.shape())));
            }
            if u.shape() != [k] {
                return Err(bad(format!("`{name}:u` shape {:?} != [{k}]", u.shape())));
            }
            if b.shape() != [1] {
                return Err(bad(format!("`{name}:b` shape {:?} != [1]", b.shape())));
            }
            preds.insert(
                name.to_string(),
                PredicateParams {
                    kernels: k,
                    input_dim: d,
                    w: w.clone(),
                    v: v.clone(),
                    u: u.clone(),
                    b: b.clone(),
                },
            );
        }
        Ok(Self { preds })
    }

    /// Inserts every predicate as trainable leaves on `tape`.
    pub fn insert_into_tape(&self, tape: &mut Tape) -> BTreeMap<String, GroundedPredicate> {
        self.preds
            .iter()
            .map(|(name, params)| (name.clone(), insert_predicate(tape, name, params)))
            .collect()
    }
}

/// L2 penalty `lambda * sum(theta^2)` over every trainable leaf on the tape.
pub fn l2_penalty(tape: &mut Tape, lambda: f64) -> Result<NodeId, GraphError> {
    let params = tape.params().to_vec();
    if params.is_empty() {
        let zero = tape.leaf(Tensor::scalar(0.0));
        return Ok(zero);
    }
    let mut sums = Vec::with_capacity(params.len());
    for p in params {
        let sq = tape.mul(p, p)?;
        sums.push(tape.sum(sq));
    }
    let stacked = tape.concat(&sums)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, lambda))
}

/// Supplies grounding vectors for a roster of objects: per-object feature
/// vectors for unary atoms and ordered-pair vectors for binary atoms.
pub trait GroundingSource {
    fn len(&self) -> usize;
    fn unary(&self, i: usize) -> Tensor;
    fn pair(&self, m: usize, l: usize) -> Tensor;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed vectors with concatenated pairs, enough for tests and toy theories.
pub struct VectorSource {
    pub vectors: Vec<Vec<f64>>,
}

impl GroundingSource for VectorSource {
    fn len(&self) -> usize {
        self.vectors.len()
    }

    fn unary(&self, i: usize) -> Tensor {
        Tensor::vector(self.vectors[i].clone()).unwrap()
    }

    fn pair(&self, m: usize, l: usize) -> Tensor {
        let mut v = self.vectors[m].clone();
        v.extend_from_slice(&self.vectors[l]);
        Tensor::vector(v).unwrap()
    }
}

/// Variable domains, constant bindings, and the predicate table for one
/// grounding pass.
pub struct GroundingEnvironment<'a> {
    source: &'a dyn GroundingSource,
    predicates: BTreeMap<String, GroundedPredicate>,
    domains: BTreeMap<String, Vec<usize>>,
    default_domain: Vec<usize>,
    constants: BTreeMap<String, usize>,
}

impl<'a> GroundingEnvironment<'a> {
    /// Every variable ranges over the whole roster; constants `"0"`, `"1"`,
    /// ... name roster positions.
    pub fn new(source: &'a dyn GroundingSource, predicates: BTreeMap<String, GroundedPredicate>) -> Self {
        let default_domain: Vec<usize> = (0..source.len()).collect();
        let constants = default_domain
            .iter()
            .map(|&i| (i.to_string(), i))
            .collect();
        Self {
            source,
            predicates,
            domains: BTreeMap::new(),
            default_domain,
            constants,
        }
    }

    pub fn bind_domain(&mut self, var: impl Into<String>, elems: Vec<usize>) {
        self.domains.insert(var.into(), elems);
    }

    pub fn bind_constant(&mut self, name: impl Into<String>, elem: usize) {
        self.constants.insert(name.into(), elem);
    }

    pub fn domain_for(&self, var: &str) -> &[usize] {
        self.domains
            .get(var)
            .map(|v| v.as_slice())
            .unwrap_or(&self.default_domain)
    }

    pub fn predicate(&self, name: &str) -> Option<&GroundedPredicate> {
        self.predicates.get(name)
    }
}

/// Ground literal: a predicate applied to roster elements, possibly negated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundLiteral {
    pub predicate: String,
    pub args: Vec<usize>,
    pub negated: bool,
}

/// One compiled clause: its literal truth nodes and aggregated loss.
#[derive(Debug, Clone)]
pub struct CompiledClause {
    pub name: String,
    pub truths: Vec<NodeId>,
    pub loss: NodeId,
    /// Node index range occupied by this clause's subgraph.
    pub node_range: (usize, usize),
}

/// Compiled theory: clause losses, the L2 term, and their total.
#[derive(Debug, Clone)]
pub struct TheoryLoss {
    pub clauses: Vec<CompiledClause>,
    pub l2: NodeId,
    pub total: NodeId,
}

impl TheoryLoss {
    /// Sum of clause loss values whose name starts with `prefix`.
    /// Valid after a forward pass.
    pub fn group_loss(&self, tape: &Tape, prefix: &str) -> f64 {
        self.clauses
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .map(|c| tape.value(c.loss).item())
            .sum()
    }

    /// Mean literal truth of one clause. Valid after a forward pass.
    pub fn mean_truth(&self, tape: &Tape, clause: &CompiledClause) -> f64 {
        if clause.truths.is_empty() {
            return 1.0;
        }
        clause
            .truths
            .iter()
            .map(|t| tape.value(*t).item())
            .sum::<f64>()
            / clause.truths.len() as f64
    }

    /// Name of the clause whose subgraph contains `node`, if any.
    pub fn clause_containing(&self, node: usize) -> Option<&str> {
        self.clauses
            .iter()
            .find(|c| node >= c.node_range.0 && node < c.node_range.1)
            .map(|c| c.name.as_str())
    }
}

type AtomKey = (String, Vec<usize>);

/// Accumulates clauses against one tape/environment pair, memoising atom
/// groundings, then closes the theory with the L2 term and canonical total.
pub struct TheoryCompiler<'t, 'e, 'a> {
    tape: &'t mut Tape,
    env: &'e GroundingEnvironment<'a>,
    atom_cache: HashMap<AtomKey, Truth>,
    unary_inputs: HashMap<usize, NodeId>,
    pair_inputs: HashMap<(usize, usize), NodeId>,
    clauses: Vec<CompiledClause>,
}

impl<'t, 'e, 'a> TheoryCompiler<'t, 'e, 'a> {
    pub fn new(tape: &'t mut Tape, env: &'e GroundingEnvironment<'a>) -> Self {
        Self {
            tape,
            env,
            atom_cache: HashMap::new(),
            unary_inputs: HashMap::new(),
            pair_inputs: HashMap::new(),
            clauses: Vec::new(),
        }
    }

    fn atom_truth(&mut self, pred_name: &str, elems: &[usize]) -> Result<Truth, GroundError> {
        let key = (pred_name.to_string(), elems.to_vec());
        if let Some(t) = self.atom_cache.get(&key) {
            return Ok(*t);
        }
        let pred = self
            .env
            .predicate(pred_name)
            .ok_or_else(|| GroundError::UnknownPredicate(pred_name.to_string()))?
            .clone();
        let input = match elems.len() {
            1 => {
                let i = elems[0];
                match self.unary_inputs.get(&i) {
                    Some(id) => *id,
                    None => {
                        let id = self.tape.leaf(self.env.source.unary(i));
                        self.unary_inputs.insert(i, id);
                        id
                    }
                }
            }
            2 => {
                let key2 = (elems[0], elems[1]);
                match self.pair_inputs.get(&key2) {
                    Some(id) => *id,
                    None => {
                        let id = self.tape.leaf(self.env.source.pair(elems[0], elems[1]));
                        self.pair_inputs.insert(key2, id);
                        id
                    }
                }
            }
            n => return Err(GroundError::UnsupportedArity(n)),
        };
        let truth = predicate_forward(self.tape, &pred, input)?;
        self.atom_cache.insert(key, truth);
        Ok(truth)
    }

    fn resolve_term(
        &self,
        term: &Term,
        bindings: &BTreeMap<String, usize>,
    ) -> Result<usize, GroundError> {
        match term {
            Term::Variable(v) => bindings
                .get(v)
                .copied()
                .ok_or_else(|| GroundError::UnboundVariable(v.clone())),
            Term::Constant(c) => self
                .env
                .constants
                .get(c)
                .copied()
                .ok_or_else(|| GroundError::UnknownConstant(c.clone())),
        }
    }

    /// Quantifier-free body under a fixed binding.
    fn ground_body(
        &mut self,
        f: &Formula,
        bindings: &BTreeMap<String, usize>,
    ) -> Result<Truth, GroundError> {
        match f {
            Formula::Atom { pred, args } => {
                let elems: Vec<usize> = args
                    .iter()
                    .map(|t| self.resolve_term(t, bindings))
                    .collect::<Result<_, _>>()?;
                self.atom_truth(pred, &elems)
            }
            Formula::Not(a) => {
                let t = self.ground_body(a, bindings)?;
                Ok(luk_not(self.tape, t))
            }
            Formula::And(a, b) => {
                let ta = self.ground_body(a, bindings)?;
                let tb = self.ground_body(b, bindings)?;
                Ok(luk_and(self.tape, ta, tb)?)
            }
            Formula::Or(a, b) => {
                let ta = self.ground_body(a, bindings)?;
                let tb = self.ground_body(b, bindings)?;
                Ok(luk_or(self.tape, ta, tb)?)
            }
            Formula::Implies(a, b) => {
                let ta = self.ground_body(a, bindings)?;
                let tb = self.ground_body(b, bindings)?;
                Ok(luk_implies(self.tape, ta, tb)?)
            }
            Formula::ForAll { .. } => Err(GroundError::NestedQuantifier),
        }
    }

    /// Per-instantiation truths of a formula. A `forall` head enumerates
    /// bindings; a ground formula yields exactly one truth.
    pub fn ground_formula(&mut self, f: &Formula) -> Result<Vec<Truth>, GroundError> {
        match f {
            Formula::ForAll { vars, body } => {
                let domains: Vec<&[usize]> =
                    vars.iter().map(|v| self.env.domain_for(v)).collect();
                for (v, d) in vars.iter().zip(&domains) {
                    if d.is_empty() {
                        return Err(GroundError::EmptyDomain(v.clone()));
                    }
                }
                // Distinct variables over the same domain never bind the
                // same element: a formula like P(x) -> ~P(y) is not meant to
                // contradict itself on x = y.
                let shared: Vec<Vec<bool>> = domains
                    .iter()
                    .map(|di| domains.iter().map(|dj| di == dj).collect())
                    .collect();
                let mut truths = Vec::new();
                let mut choice = vec![0usize; vars.len()];
                let mut bindings = BTreeMap::new();
                self.enumerate(
                    body,
                    vars,
                    &domains,
                    &shared,
                    0,
                    &mut choice,
                    &mut bindings,
                    &mut truths,
                )?;
                Ok(truths)
            }
            other => {
                let bindings = BTreeMap::new();
                Ok(vec![self.ground_body(other, &bindings)?])
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        &mut self,
        body: &Formula,
        vars: &[String],
        domains: &[&[usize]],
        shared: &[Vec<bool>],
        depth: usize,
        choice: &mut Vec<usize>,
        bindings: &mut BTreeMap<String, usize>,
        out: &mut Vec<Truth>,
    ) -> Result<(), GroundError> {
        if depth == vars.len() {
            out.push(self.ground_body(body, bindings)?);
            return Ok(());
        }
        'next: for pos in 0..domains[depth].len() {
            for prev in 0..depth {
                if shared[depth][prev] && choice[prev] == pos {
                    continue 'next;
                }
            }
            choice[depth] = pos;
            bindings.insert(vars[depth].clone(), domains[depth][pos]);
            self.enumerate(body, vars, domains, shared, depth + 1, choice, bindings, out)?;
        }
        bindings.remove(&vars[depth]);
        Ok(())
    }

    /// Adds an axiom as one clause aggregating its instantiation truths.
    pub fn add_axiom_clause(
        &mut self,
        name: impl Into<String>,
        axiom: &Formula,
        agg: &AggregatorConfig,
        weight: f64,
    ) -> Result<(), GroundError> {
        let name = name.into();
        self.check_name(&name)?;
        let start = self.tape.len();
        let truths = self.ground_formula(axiom)?;
        let literals: Vec<(Truth, f64)> = truths.iter().map(|t| (*t, weight)).collect();
        let loss = focal_log_product(self.tape, &literals, agg.effective_gamma())?;
        let end = self.tape.len();
        self.clauses.push(CompiledClause {
            name,
            truths: truths.into_iter().map(|t| t.0).collect(),
            loss,
            node_range: (start, end),
        });
        Ok(())
    }

    /// Adds a clause of ground literals with per-literal weights.
    pub fn add_literal_clause(
        &mut self,
        name: impl Into<String>,
        literals: &[(GroundLiteral, f64)],
        agg: &AggregatorConfig,
    ) -> Result<(), GroundError> {
        let name = name.into();
        self.check_name(&name)?;
        let start = self.tape.len();
        let mut weighted = Vec::with_capacity(literals.len());
        for (lit, alpha) in literals {
            let mut truth = self.atom_truth(&lit.predicate, &lit.args)?;
            if lit.negated {
                truth = luk_not(self.tape, truth);
            }
            weighted.push((truth, *alpha));
        }
        let loss = focal_log_product(
            self.tape,
            &weighted,
            agg.effective_gamma(),
        )?;
        let end = self.tape.len();
        self.clauses.push(CompiledClause {
            name,
            truths: weighted.into_iter().map(|(t, _)| t.0).collect(),
            loss,
            node_range: (start, end),
        });
        Ok(())
    }

    fn check_name(&self, name: &str) -> Result<(), GroundError> {
        if self.clauses.iter().any(|c| c.name == name) {
            return Err(GroundError::DuplicateClause(name.to_string()));
        }
        Ok(())
    }

    /// Closes the theory: clause losses are summed in name order (so axiom
    /// permutations cannot reorder the reduction) and the L2 term is added.
    pub fn finish(self, lambda_l2: f64) -> Result<TheoryLoss, GroundError> {
        let TheoryCompiler { tape, clauses, .. } = self;
        let l2 = l2_penalty(tape, lambda_l2)?;
        let mut order: Vec<usize> = (0..clauses.len()).collect();
        order.sort_by(|&a, &b| clauses[a].name.cmp(&clauses[b].name));
        let mut terms: Vec<NodeId> = order.iter().map(|&i| clauses[i].loss).collect();
        terms.push(l2);
        let stacked = tape.concat(&terms)?;
        let total = tape.sum(stacked);
        Ok(TheoryLoss { clauses, l2, total })
    }
}

/// Compiles a knowledge base: one clause per axiom, named by the printed
/// formula so clause identity is independent of axiom order.
pub fn compile_theory(
    kb: &KnowledgeBase,
    env: &GroundingEnvironment<'_>,
    tape: &mut Tape,
    agg: &AggregatorConfig,
    lambda_l2: f64,
) -> Result<TheoryLoss, GroundError> {
    let mut compiler = TheoryCompiler::new(tape, env);
    for axiom in &kb.axioms {
        compiler.add_axiom_clause(format!("prior/{axiom}"), axiom, agg, 1.0)?;
    }
    compiler.finish(lambda_l2)
}
