//! Exact robust multiple stopping on finite scenario trees.
//!
//! A tree node carries a payoff and, for every scenario `m`, a probability
//! vector over its children. The worst-case one-step expectation at a node
//! is `ρ(h) = max_m Σ_c p_m(c) h(c)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::dual_pathwise_max;
use crate::error::{Error, Result};
use crate::rng::path_rng;
use crate::scalar::Scalar;
use crate::stats::SampleStats;

/// A number in a tree file: integer, float, decimal string or `"a/b"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    pub fn frac(n: i64, d: i64) -> Self {
        if d == 1 {
            Number::Int(n)
        } else {
            Number::Text(format!("{n}/{d}"))
        }
    }

    pub fn to_scalar<S: Scalar>(&self) -> Result<S> {
        match self {
            Number::Int(n) => Ok(S::from_ratio(*n, 1)),
            Number::Float(x) => parse_decimal(&format!("{x}")),
            Number::Text(t) => match t.split_once('/') {
                Some((a, b)) => {
                    let n: i64 = a.trim().parse().map_err(|_| bad(t))?;
                    let d: i64 = b.trim().parse().map_err(|_| bad(t))?;
                    if d == 0 {
                        return Err(bad(t));
                    }
                    Ok(S::from_ratio(n, d))
                }
                None => parse_decimal(t.trim()),
            },
        }
    }
}

fn bad(t: &str) -> Error {
    Error::Tree(format!("cannot parse number `{t}`"))
}

fn parse_decimal<S: Scalar>(t: &str) -> Result<S> {
    if t.contains(['e', 'E']) {
        return Err(Error::Tree(format!(
            "exponent notation not supported in `{t}`"
        )));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if frac.len() > 15 {
        return Err(Error::Tree(format!("too many decimals in `{t}`")));
    }
    let digits = format!("{int}{frac}");
    let n: i64 = digits.parse().map_err(|_| bad(t))?;
    let d = 10i64.pow(frac.len() as u32);
    Ok(S::from_ratio(if neg { -n } else { n }, d))
}

/// Serialized form of a tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub depth: usize,
    pub scenarios: usize,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub payoff: Number,
    #[serde(default)]
    pub children: Vec<usize>,
    /// `probs[m][c]`; empty for leaves.
    #[serde(default)]
    pub probs: Vec<Vec<Number>>,
}

impl TreeSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build<S: Scalar>(&self) -> Result<ScenarioTree<S>> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                Ok(Node {
                    payoff: n.payoff.to_scalar()?,
                    children: n.children.clone(),
                    probs: n
                        .probs
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(Number::to_scalar)
                                .collect::<Result<Vec<S>>>()
                        })
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScenarioTree::new(self.depth, self.scenarios, nodes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<S> {
    pub payoff: S,
    pub children: Vec<usize>,
    pub probs: Vec<Vec<S>>,
}

/// Validated tree with every leaf at date `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree<S> {
    depth: usize,
    scenarios: usize,
    nodes: Vec<Node<S>>,
    date: Vec<usize>,
    parent: Vec<Option<usize>>,
}

impl<S: Scalar> ScenarioTree<S> {
    pub fn new(depth: usize, scenarios: usize, nodes: Vec<Node<S>>) -> Result<Self> {
        if depth == 0 || scenarios == 0 || nodes.is_empty() {
            return Err(Error::Tree(
                "need depth >= 1, >= 1 scenario and a root".into(),
            ));
        }
        let n = nodes.len();
        let mut parent = vec![None; n];
        let mut date = vec![usize::MAX; n];
        date[0] = 0;
        for (v, node) in nodes.iter().enumerate() {
            if node.payoff < S::zero() {
                return Err(Error::Tree(format!("node {v}: negative payoff")));
            }
            if date[v] == usize::MAX {
                return Err(Error::Tree(format!(
                    "node {v} is unreachable or listed before its parent"
                )));
            }
            if node.children.is_empty() {
                if date[v] != depth {
                    return Err(Error::Tree(format!(
                        "leaf {v} at date {} instead of {depth}",
                        date[v]
                    )));
                }
                continue;
            }
            if date[v] == depth {
                return Err(Error::Tree(format!(
                    "node {v} at the last date has children"
                )));
            }
            if node.probs.len() != scenarios {
                return Err(Error::Tree(format!(
                    "node {v}: expected {scenarios} probability rows"
                )));
            }
            for (m, row) in node.probs.iter().enumerate() {
                if row.len() != node.children.len() {
                    return Err(Error::Tree(format!(
                        "node {v}, scenario {m}: wrong row length"
                    )));
                }
                if row.iter().any(|p| *p < S::zero()) {
                    return Err(Error::Tree(format!(
                        "node {v}, scenario {m}: negative probability"
                    )));
                }
                let total = row.iter().cloned().fold(S::zero(), |a, b| a + b);
                let err = if total > S::one() {
                    total - S::one()
                } else {
                    S::one() - total
                };
                if err.to_f64_lossy() > 1e-12 {
                    return Err(Error::Tree(format!(
                        "node {v}, scenario {m}: probabilities do not sum to 1"
                    )));
                }
            }
            for &c in &node.children {
                if c <= v || c >= n || parent[c].is_some() {
                    return Err(Error::Tree(format!("node {v}: invalid child {c}")));
                }
                parent[c] = Some(v);
                date[c] = date[v] + 1;
            }
        }
        Ok(Self {
            depth,
            scenarios,
            nodes,
            date,
            parent,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: usize) -> &Node<S> {
        &self.nodes[v]
    }

    pub fn date(&self, v: usize) -> usize {
        self.date[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Scenario expectation of a node function over the children of `v`.
    pub fn expectation(&self, v: usize, m: usize, h: &[S]) -> S {
        let node = &self.nodes[v];
        node.children
            .iter()
            .zip(&node.probs[m])
            .fold(S::zero(), |s, (&c, p)| s + p.clone() * h[c].clone())
    }

    /// `(max_m E_m[h], first maximizing m)`.
    pub fn rho(&self, v: usize, h: &[S]) -> (S, usize) {
        let mut best = (self.expectation(v, 0, h), 0);
        for m in 1..self.scenarios {
            let e = self.expectation(v, m, h);
            if e > best.0 {
                best = (e, m);
            }
        }
        best
    }

    /// Root-to-leaf node sequences.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![0usize]];
        while let Some(p) = stack.pop() {
            let v = *p.last().expect("non-empty");
            let ch = &self.nodes[v].children;
            if ch.is_empty() {
                out.push(p);
            } else {
                for &c in ch.iter().rev() {
                    let mut q = p.clone();
                    q.push(c);
                    stack.push(q);
                }
            }
        }
        out
    }

    /// Nodes from the last date back to the root.
    fn backward_order(&self) -> impl Iterator<Item = usize> {
        (0..self.nodes.len()).rev()
    }
}

/// Robust Snell envelopes `Yˡ` for `l = 0..=L` at every node and the
/// increments of their worst-case Doob martingales.
#[derive(Debug, Clone)]
pub struct DpSolution<S> {
    /// `values[l][v]`.
    pub values: Vec<Vec<S>>,
    /// `increments[l][v] = Yˡ(v) − ρ_parent(Yˡ)`, zero at the root.
    pub increments: Vec<Vec<S>>,
}

impl<S: Scalar> DpSolution<S> {
    pub fn value(&self, l: usize) -> S {
        self.values[l][0].clone()
    }

    /// Doob martingale of level `l` along a root-to-leaf path.
    pub fn martingale_along(&self, l: usize, path: &[usize]) -> Vec<S> {
        let mut m = S::zero();
        path.iter()
            .map(|&v| {
                m = m.clone() + self.increments[l][v].clone();
                m.clone()
            })
            .collect()
    }
}

/// Backward induction `Yˡ = max(f + ρ(Y^{l−1}), ρ(Yˡ))`, `Yˡ = f` at leaves.
pub fn dp_value<S: Scalar>(tree: &ScenarioTree<S>, rights: usize) -> DpSolution<S> {
    let n = tree.len();
    let mut values = vec![vec![S::zero(); n]];
    let mut increments = vec![vec![S::zero(); n]];
    for l in 1..=rights {
        let mut y = vec![S::zero(); n];
        for v in tree.backward_order() {
            let node = tree.node(v);
            y[v] = if node.children.is_empty() {
                node.payoff.clone()
            } else {
                let stop = node.payoff.clone() + tree.rho(v, &values[l - 1]).0;
                let wait = tree.rho(v, &y).0;
                S::max_of(stop, wait)
            };
        }
        let mut inc = vec![S::zero(); n];
        for v in 1..n {
            let p = tree.parent(v).expect("non-root has a parent");
            inc[v] = y[v].clone() - tree.rho(p, &y).0;
        }
        values.push(y);
        increments.push(inc);
    }
    DpSolution { values, increments }
}

/// Number of distinct exercise behaviours below `v` with `used` rights gone.
fn behaviours<S: Scalar>(tree: &ScenarioTree<S>, v: usize, used: usize, rights: usize) -> f64 {
    if used == rights {
        return 1.0;
    }
    let ch = &tree.node(v).children;
    if ch.is_empty() {
        return 2.0;
    }
    let stop: f64 = ch
        .iter()
        .map(|&c| behaviours(tree, c, used + 1, rights))
        .product();
    let wait: f64 = ch
        .iter()
        .map(|&c| behaviours(tree, c, used, rights))
        .product();
    stop + wait
}

/// Size of the search performed by [`enumerate_policies`].
pub fn enumeration_size<S: Scalar>(tree: &ScenarioTree<S>, rights: usize) -> f64 {
    let branching = (0..tree.len())
        .filter(|&v| tree.node(v).children.len() > 1)
        .count();
    behaviours(tree, 0, 0, rights) * (tree.scenarios() as f64).powi(branching as i32)
}

/// Largest value over every adapted exercise rule and every per-node
/// scenario choice, found by listing them all.
///
/// Rejects instances whose search size exceeds `guard`.
pub fn enumerate_policies<S: Scalar>(
    tree: &ScenarioTree<S>,
    rights: usize,
    guard: f64,
) -> Result<S> {
    if rights == 0 {
        return Ok(S::zero());
    }
    let size = enumeration_size(tree, rights);
    if size > guard {
        return Err(Error::SizeGuard(format!(
            "{size:.3e} combinations exceed {guard:.3e}"
        )));
    }
    let branching: Vec<usize> = (0..tree.len())
        .filter(|&v| tree.node(v).children.len() > 1)
        .collect();
    let selections = tree.scenarios().pow(branching.len() as u32);
    let mut choice = vec![0usize; tree.len()];
    let mut best: Option<S> = None;
    for sel in 0..selections {
        let mut code = sel;
        for &v in &branching {
            choice[v] = code % tree.scenarios();
            code /= tree.scenarios();
        }
        let mut prob = vec![S::zero(); tree.len()];
        prob[0] = S::one();
        for v in 0..tree.len() {
            let node = tree.node(v);
            let m = choice[v];
            for (i, &c) in node.children.iter().enumerate() {
                prob[c] = prob[v].clone() * node.probs[m][i].clone();
            }
        }
        for x in values_below(tree, &prob, 0, 0, rights) {
            best = Some(match best.take() {
                Some(b) => S::max_of(b, x),
                None => x,
            });
        }
    }
    Ok(best.expect("at least one selection"))
}

/// Values `Σ P(v) f(v)` over exercised nodes of every behaviour below `v`.
fn values_below<S: Scalar>(
    tree: &ScenarioTree<S>,
    prob: &[S],
    v: usize,
    used: usize,
    rights: usize,
) -> Vec<S> {
    if used == rights {
        return vec![S::zero()];
    }
    let node = tree.node(v);
    let here = prob[v].clone() * node.payoff.clone();
    let mut out = Vec::new();
    for (exercise, after) in [(true, used + 1), (false, used)] {
        let mut acc = vec![if exercise { here.clone() } else { S::zero() }];
        for &c in &node.children {
            let sub = values_below(tree, prob, c, after, rights);
            acc = acc
                .iter()
                .flat_map(|a| sub.iter().map(move |b| a.clone() + b.clone()))
                .collect();
        }
        out.extend(acc);
    }
    out
}

/// Shape of random test trees.
#[derive(Debug, Clone, Copy)]
pub struct RandomTreeParams {
    pub max_depth: usize,
    pub max_scenarios: usize,
    pub max_nodes: usize,
    /// Chance that a node below the last date gets two children.
    pub branch_prob: f64,
    pub max_payoff: i64,
    /// Probabilities are multiples of `1/denominator`.
    pub denominator: i64,
}

impl Default for RandomTreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            max_scenarios: 2,
            max_nodes: 16,
            branch_prob: 0.4,
            max_payoff: 9,
            denominator: 8,
        }
    }
}

/// Random tree with dyadic-friendly rational probabilities.
pub fn random_tree<R: Rng>(rng: &mut R, p: &RandomTreeParams) -> TreeSpec {
    let depth = rng.gen_range(1..=p.max_depth);
    let scenarios = rng.gen_range(1..=p.max_scenarios);
    let mut nodes = vec![NodeSpec {
        payoff: Number::Int(rng.gen_range(0..=p.max_payoff)),
        children: Vec::new(),
        probs: Vec::new(),
    }];
    let mut level = vec![0usize];
    for d in 0..depth {
        let mut next = Vec::new();
        for (i, &v) in level.iter().enumerate() {
            // every later level is at least as wide as the next one
            let width = next.len() + 2 + (level.len() - i - 1);
            let fits = nodes.len() + width * (depth - d) <= p.max_nodes;
            let k = if fits && rng.gen_bool(p.branch_prob) {
                2
            } else {
                1
            };
            let mut kids = Vec::new();
            for _ in 0..k {
                kids.push(nodes.len() + next.len());
                next.push(rng.gen_range(0..=p.max_payoff));
            }
            let probs = (0..scenarios)
                .map(|_| {
                    if k == 1 {
                        vec![Number::Int(1)]
                    } else {
                        let a = rng.gen_range(1..p.denominator);
                        vec![
                            Number::frac(a, p.denominator),
                            Number::frac(p.denominator - a, p.denominator),
                        ]
                    }
                })
                .collect();
            nodes[v].children = kids;
            nodes[v].probs = probs;
        }
        let first = nodes.len();
        nodes.extend(next.into_iter().map(|f| NodeSpec {
            payoff: Number::Int(f),
            children: Vec::new(),
            probs: Vec::new(),
        }));
        level = (first..nodes.len()).collect();
    }
    TreeSpec {
        depth,
        scenarios,
        nodes,
    }
}

/// Monte Carlo bounds on a tree, built the way the continuous engine builds
/// them: node values are estimated from sampled paths under the reference
/// measure (the scenario average), the lower bound evaluates the greedy
/// policy under an estimated worst-case scenario choice, and the upper bound
/// tracks the pathwise dual with an estimated worst-case value process.
#[derive(Debug, Clone, Serialize)]
pub struct TreeBounds {
    pub lb_raw: SampleStats,
    pub lb: SampleStats,
    pub y0_upper: f64,
    pub tracking_error: f64,
    pub ub: f64,
    pub dual: SampleStats,
    /// `√(max_Q E[D²])`.
    pub k: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeSizes {
    pub train: usize,
    pub fit: usize,
    pub eval: usize,
    pub upper_fit: usize,
    /// Each half of the tracking sample.
    pub upper_eval: usize,
}

impl Default for TreeSizes {
    fn default() -> Self {
        Self {
            train: 200,
            fit: 200,
            eval: 2000,
            upper_fit: 200,
            upper_eval: 500,
        }
    }
}

struct Sampled<'a> {
    tree: &'a ScenarioTree<f64>,
    reference: Vec<f64>,
}

impl<'a> Sampled<'a> {
    fn new(tree: &'a ScenarioTree<f64>) -> Self {
        let mut reference = vec![1.0; tree.len()];
        for v in 0..tree.len() {
            let node = tree.node(v);
            for (i, &c) in node.children.iter().enumerate() {
                reference[c] = (0..tree.scenarios()).map(|m| node.probs[m][i]).sum::<f64>()
                    / tree.scenarios() as f64;
            }
        }
        Self { tree, reference }
    }

    /// Likelihood ratio of scenario `m` against the reference at child `c`.
    fn ratio(&self, v: usize, m: usize, i: usize) -> f64 {
        let c = self.tree.node(v).children[i];
        self.tree.node(v).probs[m][i] / self.reference[c]
    }

    fn path(&self, seed: u64, n: u64) -> Vec<usize> {
        let mut rng = path_rng(seed, n);
        let mut p = vec![0usize];
        loop {
            let v = *p.last().expect("non-empty");
            let ch = &self.tree.node(v).children;
            if ch.is_empty() {
                return p;
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = ch[ch.len() - 1];
            for &c in ch {
                acc += self.reference[c];
                if u < acc {
                    pick = c;
                    break;
                }
            }
            p.push(pick);
        }
    }

    fn visits(&self, seed: u64, count: usize) -> Vec<f64> {
        let mut n = vec![0.0; self.tree.len()];
        for i in 0..count {
            for v in self.path(seed, i as u64) {
                n[v] += 1.0;
            }
        }
        n
    }

    /// `(ρ̂(h), maximizing scenario)` from empirical transition counts.
    fn rho_hat(&self, visits: &[f64], v: usize, h: &[f64]) -> (f64, usize) {
        if visits[v] == 0.0 {
            return (0.0, 0);
        }
        let node = self.tree.node(v);
        let mut best = (f64::NEG_INFINITY, 0);
        for m in 0..self.tree.scenarios() {
            let e: f64 = node
                .children
                .iter()
                .enumerate()
                .map(|(i, &c)| visits[c] / visits[v] * self.ratio(v, m, i) * h[c])
                .sum();
            if e > best.0 {
                best = (e, m);
            }
        }
        best
    }

    /// `√(max over scenario choices of E_ref[D²])`.
    fn k(&self) -> f64 {
        let mut w = vec![1.0; self.tree.len()];
        for v in self.tree.backward_order() {
            let node = self.tree.node(v);
            if node.children.is_empty() {
                continue;
            }
            w[v] = (0..self.tree.scenarios())
                .map(|m| {
                    node.children
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| self.reference[c] * self.ratio(v, m, i).powi(2) * w[c])
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        w[0].sqrt()
    }
}

/// Runs the tree analogue of the bounds pipeline with independent seeds
/// per stage.
pub fn tree_bounds(
    tree: &ScenarioTree<f64>,
    rights: usize,
    sizes: TreeSizes,
    seed: u64,
) -> Result<TreeBounds> {
    if rights == 0 {
        return Err(Error::Config(
            "at least one exercise right is required".into(),
        ));
    }
    let s = Sampled::new(tree);
    let seeds: Vec<u64> = (1..=5).map(|i| crate::rng::derive_seed(seed, i)).collect();
    let n = tree.len();
    let leaf = |v: usize| tree.node(v).children.is_empty();

    // stage 1: continuation values per level
    let visits = s.visits(seeds[0], sizes.train);
    let mut cont = vec![vec![0.0; n]];
    let mut yval = vec![vec![0.0; n]];
    for l in 1..=rights {
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        for v in tree.backward_order() {
            let f = tree.node(v).payoff;
            if !leaf(v) {
                c[v] = s.rho_hat(&visits, v, &y).0.max(0.0);
            }
            y[v] = (f + cont[l - 1][v]).max(c[v]);
        }
        cont.push(c);
        yval.push(y);
    }
    let policy = |path: &[usize]| -> f64 {
        let mut r = 1;
        let mut cash = 0.0;
        for &v in path {
            if r > rights {
                break;
            }
            let f = tree.node(v).payoff;
            if f + cont[rights - r][v] >= cont[rights - r + 1][v] {
                cash += f;
                r += 1;
            }
        }
        cash
    };

    // stage 2: worst-case scenario choice for the policy cash-flows
    let fit_visits = s.visits(seeds[1], sizes.fit);
    let mut vhat = vec![0.0; n];
    for p in tree.paths() {
        let l = *p.last().expect("non-empty");
        if fit_visits[l] > 0.0 {
            vhat[l] = policy(&p);
        }
    }
    let mut worst = vec![0usize; n];
    for v in tree.backward_order() {
        if !leaf(v) {
            let (val, m) = s.rho_hat(&fit_visits, v, &vhat);
            vhat[v] = val;
            worst[v] = m;
        }
    }

    // stage 3: weighted evaluation with and without the martingale
    let mut raw = Vec::with_capacity(sizes.eval);
    let mut sub = Vec::with_capacity(sizes.eval);
    for i in 0..sizes.eval {
        let p = s.path(seeds[2], i as u64);
        let mut d = 1.0;
        let mut m = 0.0;
        for w in p.windows(2) {
            let (v, c) = (w[0], w[1]);
            let idx = tree
                .node(v)
                .children
                .iter()
                .position(|&x| x == c)
                .expect("child");
            d *= s.ratio(v, worst[v], idx);
            m += vhat[c] - tree.expectation(v, worst[v], &vhat);
        }
        let u = policy(&p);
        raw.push(d * u);
        sub.push(d * (u - m));
    }

    // stage 4: dual terminals with exact worst-case martingales of Ȳ
    let mut inc = vec![vec![0.0; n]; rights + 1];
    for l in 1..=rights {
        for v in 1..n {
            let p = tree.parent(v).expect("parent");
            inc[l][v] = yval[l][v] - tree.rho(p, &yval[l]).0;
        }
    }
    let theta_of = |p: &[usize]| -> f64 {
        let f: Vec<f64> = p.iter().map(|&v| tree.node(v).payoff).collect();
        let ms: Vec<Vec<f64>> = (1..=rights)
            .map(|l| {
                let mut acc = 0.0;
                p.iter()
                    .map(|&v| {
                        acc += inc[l][v];
                        acc
                    })
                    .collect()
            })
            .collect();
        dual_pathwise_max(&f, &ms, rights)
    };
    let up_visits = s.visits(seeds[3], sizes.upper_fit);
    let mut what = vec![0.0; n];
    for p in tree.paths() {
        let l = *p.last().expect("non-empty");
        if up_visits[l] > 0.0 {
            what[l] = theta_of(&p);
        }
    }
    for v in tree.backward_order() {
        if !leaf(v) {
            what[v] = s.rho_hat(&up_visits, v, &what).0;
        }
    }
    let y0 = what[0];

    // stage 5: tracking error on two fresh halves
    let mut resid = Vec::with_capacity(2 * sizes.upper_eval);
    let mut duals = Vec::with_capacity(2 * sizes.upper_eval);
    for i in 0..2 * sizes.upper_eval {
        let p = s.path(seeds[4], i as u64);
        let mut u = y0;
        for w in p.windows(2) {
            u += what[w[1]] - tree.rho(w[0], &what).0;
        }
        let th = theta_of(&p);
        resid.push((u - th).powi(2));
        duals.push(th);
    }
    let half = sizes.upper_eval;
    let m1 = resid[..half].iter().sum::<f64>() / half as f64;
    let m2 = resid[half..].iter().sum::<f64>() / half as f64;
    let k = s.k();
    let ub = if m2 > 0.0 {
        y0 + k * m1 / m2.sqrt()
    } else {
        y0
    };
    Ok(TreeBounds {
        lb_raw: SampleStats::from_slice(&raw),
        lb: SampleStats::from_slice(&sub),
        y0_upper: y0,
        tracking_error: (resid.iter().sum::<f64>() / resid.len() as f64).sqrt(),
        ub,
        dual: SampleStats::from_slice(&duals),
        k,
    })
}
