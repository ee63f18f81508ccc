//! Brute-force verification of the crossing rule's optimality properties on
//! finite scenario trees.
//!
//! A [`ScenarioTree`] is a finite outcome set: every root-to-leaf path is one
//! scenario, all leaves sit at the final level, and the per-level forecast
//! values decrease strictly to 0. Stopping rules attach a stop/continue
//! decision to each node (adaptedness is automatic), so they can be counted
//! and enumerated exhaustively, and optimality / Pareto optimality / the
//! before-after conditions can be checked by direct enumeration rather than
//! by trusting any theorem.
//!
//! Discretization caveat: the continuous-time arguments rely on the drawdown
//! meeting the forecast exactly at the crossing. A tree where the drawdown
//! jumps past the *previous* level's forecast value at its first crossing is
//! a genuine counterexample to the optimality claims, not an oracle bug.
//! [`random_tree`] therefore generates trees whose first crossings are tight
//! (`drawdown < psi[level-1]` at every first-crossing node), and
//! [`ScenarioTree::tight_crossings`] reports whether an arbitrary tree has
//! that property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strictness tolerance for regret comparisons. Generated trees carry dyadic
/// prices, so genuine ties are exact and genuine gaps are far above this.
const TOL: f64 = 1e-12;

/// Default cap on the number of enumerable rules.
pub const DEFAULT_RULE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("invalid scenario tree: {0}")]
    Structure(String),
    #[error("rule count {count} exceeds cap {cap}")]
    RuleCountExceedsCap { count: u128, cap: u64 },
    #[error("rule is inadmissible at node {node}: it stops at ancestor {stop}")]
    InadmissibleRule { node: usize, stop: usize },
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),
    #[error("tree generation failed after {0} attempts (rule cap too small?)")]
    GenerationFailed(usize),
}

/// Nested node form used for construction and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeSpec {
    pub price: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNodeSpec>,
}

impl TreeNodeSpec {
    pub fn leaf(price: f64) -> Self {
        Self { price, children: Vec::new() }
    }
    pub fn branch(price: f64, children: Vec<TreeNodeSpec>) -> Self {
        Self { price, children }
    }
}

#[derive(Debug, Clone)]
struct Node {
    price: f64,
    level: usize,
    children: Vec<usize>,
    /// Exclusive end of this node's DFS-contiguous subtree id range.
    subtree_end: usize,
    /// Contiguous range of leaf indices under this node.
    leaf_lo: usize,
    leaf_hi: usize,
    running_max: f64,
    drawdown: f64,
}

/// A finite scenario tree with per-level times and forecast values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioTreeRepr", into = "ScenarioTreeRepr")]
pub struct ScenarioTree {
    level_times: Vec<f64>,
    psi: Vec<f64>,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.price == other.price && self.level == other.level && self.children == other.children
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioTreeRepr {
    level_times: Vec<f64>,
    psi: Vec<f64>,
    root: TreeNodeSpec,
}

impl TryFrom<ScenarioTreeRepr> for ScenarioTree {
    type Error = TreeError;
    fn try_from(repr: ScenarioTreeRepr) -> Result<Self, TreeError> {
        ScenarioTree::new(repr.level_times, repr.psi, repr.root)
    }
}

impl From<ScenarioTree> for ScenarioTreeRepr {
    fn from(tree: ScenarioTree) -> Self {
        let root = tree.to_node_spec(0);
        ScenarioTreeRepr { level_times: tree.level_times, psi: tree.psi, root }
    }
}

impl ScenarioTree {
    /// Validate and flatten a tree.
    ///
    /// Structural requirements: times strictly increasing from 0; forecast
    /// values strictly decreasing with the final value exactly 0 and the
    /// first value positive (so the root, with drawdown 0, never stops
    /// immediately); every leaf at the final level.
    pub fn new(level_times: Vec<f64>, psi: Vec<f64>, root: TreeNodeSpec) -> Result<Self, TreeError> {
        let fail = |msg: String| Err(TreeError::Structure(msg));
        if level_times.len() < 2 {
            return fail("need at least 2 levels".into());
        }
        if level_times.len() != psi.len() {
            return fail(format!("{} level times but {} forecast values", level_times.len(), psi.len()));
        }
        if level_times[0] != 0.0 {
            return fail(format!("first level time must be 0, got {}", level_times[0]));
        }
        for w in level_times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return fail(format!("level times must strictly increase, got {} then {}", w[0], w[1]));
            }
        }
        for w in psi.windows(2) {
            if !(w[1] < w[0]) {
                return fail(format!("forecast values must strictly decrease, got {} then {}", w[0], w[1]));
            }
        }
        if *psi.last().unwrap() != 0.0 {
            return fail(format!("terminal forecast value must be 0, got {}", psi.last().unwrap()));
        }
        if !(psi[0] > 0.0) {
            return fail(format!("initial forecast value must be positive, got {}", psi[0]));
        }

        let depth = level_times.len() - 1;
        let mut nodes: Vec<Node> = Vec::new();
        let mut leaves = Vec::new();
        flatten(&root, 0, f64::NEG_INFINITY, depth, &mut nodes, &mut leaves)?;
        Ok(Self { level_times, psi, nodes, leaves })
    }

    fn to_node_spec(&self, id: usize) -> TreeNodeSpec {
        TreeNodeSpec {
            price: self.nodes[id].price,
            children: self.nodes[id].children.iter().map(|&c| self.to_node_spec(c)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.level_times.len() - 1
    }
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }
    pub fn level_times(&self) -> &[f64] {
        &self.level_times
    }
    pub fn psi_levels(&self) -> &[f64] {
        &self.psi
    }
    pub fn node_level(&self, id: usize) -> usize {
        self.nodes[id].level
    }
    pub fn node_price(&self, id: usize) -> f64 {
        self.nodes[id].price
    }
    pub fn node_drawdown(&self, id: usize) -> f64 {
        self.nodes[id].drawdown
    }
    pub fn node_running_max(&self, id: usize) -> f64 {
        self.nodes[id].running_max
    }
    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }
    /// Leaf node ids in DFS order.
    pub fn leaf_ids(&self) -> &[usize] {
        &self.leaves
    }

    /// Estimated regret of stopping exactly at this node:
    /// `max(drawdown, psi at the node's level)`.
    pub fn stop_value(&self, id: usize) -> f64 {
        let n = &self.nodes[id];
        n.drawdown.max(self.psi[n.level])
    }

    /// Prices along the scenario ending at the given leaf index (root first).
    pub fn scenario_prices(&self, leaf_index: usize) -> Vec<f64> {
        let mut ids = Vec::with_capacity(self.depth() + 1);
        let mut id = self.leaves[leaf_index];
        loop {
            ids.push(id);
            match self.parent_of(id) {
                Some(p) => id = p,
                None => break,
            }
        }
        ids.iter().rev().map(|&i| self.nodes[i].price).collect()
    }

    fn parent_of(&self, id: usize) -> Option<usize> {
        if id == 0 {
            return None;
        }
        // parent is the nearest preceding node whose subtree contains id
        let mut p = id - 1;
        loop {
            if self.nodes[p].subtree_end > id {
                return Some(p);
            }
            p -= 1;
        }
    }

    /// Uniqueness assumption: below every non-terminal node some scenario
    /// keeps all subsequent prices strictly under the node's price.
    pub fn declining_assumption_holds(&self) -> bool {
        (0..self.nodes.len())
            .filter(|&v| !self.nodes[v].children.is_empty())
            .all(|v| self.exists_path_below(v, self.nodes[v].price))
    }

    fn exists_path_below(&self, v: usize, bound: f64) -> bool {
        self.nodes[v].children.iter().any(|&c| {
            self.nodes[c].price < bound
                && (self.nodes[c].children.is_empty() || self.exists_path_below(c, bound))
        })
    }

    /// Whether every first crossing is tight: at each node where the drawdown
    /// first reaches the forecast, it is still below the previous level's
    /// forecast value. Trees violating this can genuinely fail the
    /// optimality properties (the discretization is too coarse).
    pub fn tight_crossings(&self) -> bool {
        self.first_crossing_violation().is_none()
    }

    fn first_crossing_violation(&self) -> Option<usize> {
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            let n = &self.nodes[v];
            if n.drawdown >= self.psi[n.level] {
                // first crossing on this scenario prefix
                if n.level == 0 || n.drawdown >= self.psi[n.level - 1] {
                    return Some(v);
                }
                // do not descend: later crossings are unconstrained
            } else {
                stack.extend_from_slice(&n.children);
            }
        }
        None
    }

    /// Number of distinct adapted stopping rules:
    /// `count(node) = 1 + Π children count` (leaves count 1).
    pub fn count_rules(&self) -> u128 {
        self.count_rules_at(0)
    }

    fn count_rules_at(&self, v: usize) -> u128 {
        if self.nodes[v].children.is_empty() {
            return 1;
        }
        let product = self.nodes[v]
            .children
            .iter()
            .fold(1u128, |acc, &c| acc.saturating_mul(self.count_rules_at(c)));
        product.saturating_add(1)
    }

    /// All distinct adapted stopping rules, as antichains of stop nodes.
    pub fn enumerate_rules(&self, cap: u64) -> Result<Vec<TreeStoppingRule>, TreeError> {
        let count = self.count_rules();
        if count > cap as u128 {
            return Err(TreeError::RuleCountExceedsCap { count, cap });
        }
        Ok(self
            .enumerate_at(0)
            .into_iter()
            .map(|stops| TreeStoppingRule { stops })
            .collect())
    }

    fn enumerate_at(&self, v: usize) -> Vec<Vec<usize>> {
        let n = &self.nodes[v];
        if n.children.is_empty() {
            return vec![vec![v]];
        }
        let mut out = vec![vec![v]];
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for &c in &n.children {
            let child_rules = self.enumerate_at(c);
            let mut next = Vec::with_capacity(combos.len() * child_rules.len());
            for combo in &combos {
                for cr in &child_rules {
                    let mut merged = combo.clone();
                    merged.extend_from_slice(cr);
                    next.push(merged);
                }
            }
            combos = next;
        }
        out.append(&mut combos);
        out
    }

    /// The crossing rule on this tree: stop at the first node (along each
    /// scenario) whose drawdown reaches the level's forecast value; leaves
    /// always stop since the terminal forecast is 0.
    pub fn perfect_rule(&self) -> TreeStoppingRule {
        let mut stops = Vec::new();
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            let n = &self.nodes[v];
            if n.children.is_empty() || n.drawdown >= self.psi[n.level] {
                stops.push(v);
            } else {
                // reversed so DFS order comes out sorted
                stack.extend(n.children.iter().rev());
            }
        }
        stops.sort_unstable();
        TreeStoppingRule { stops }
    }

    /// Per-node admissibility of a rule: admissible wherever the rule has not
    /// already stopped strictly earlier on the scenario prefix.
    fn admissible_map(&self, rule: &TreeStoppingRule) -> Vec<bool> {
        let mut admissible = vec![true; self.nodes.len()];
        for &s in &rule.stops {
            admissible[(s + 1)..self.nodes[s].subtree_end].fill(false);
        }
        admissible
    }

    /// Worst-case stop value of an admissible rule over scenarios through a
    /// node: the max over the rule's stop nodes inside the node's subtree.
    fn worst_case_at(&self, rule: &TreeStoppingRule, v: usize) -> f64 {
        let end = self.nodes[v].subtree_end;
        let lo = rule.stops.partition_point(|&s| s < v);
        let hi = rule.stops.partition_point(|&s| s < end);
        rule.stops[lo..hi].iter().map(|&s| self.stop_value(s)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-leaf stop values of a rule, written into `out` (length = leaves).
    fn leaf_values(&self, rule: &TreeStoppingRule, out: &mut [f64]) {
        for &s in &rule.stops {
            let value = self.stop_value(s);
            for slot in &mut out[self.nodes[s].leaf_lo..self.nodes[s].leaf_hi] {
                *slot = value;
            }
        }
    }

    /// Worst-case and per-leaf estimated regret of a rule conditioned on the
    /// history reaching `node`. Errors if the rule already stopped strictly
    /// before the node.
    pub fn estimated_regret(&self, rule: &TreeStoppingRule, node: usize) -> Result<TreeRegret, TreeError> {
        if node >= self.nodes.len() {
            return Err(TreeError::NodeOutOfRange(node));
        }
        for &s in &rule.stops {
            if s < node && self.nodes[s].subtree_end > node {
                return Err(TreeError::InadmissibleRule { node, stop: s });
            }
        }
        let mut all = vec![f64::NAN; self.leaves.len()];
        self.leaf_values(rule, &mut all);
        let n = &self.nodes[node];
        let per_leaf: Vec<(usize, f64)> = (n.leaf_lo..n.leaf_hi).map(|l| (l, all[l])).collect();
        let worst_case = per_leaf.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
        Ok(TreeRegret { worst_case, per_leaf })
    }

    /// Min worst-case stop value per node over all rules, by exhaustive
    /// min-max recursion: stop now, or continue and face the worst child.
    fn min_worst_case(&self) -> Vec<f64> {
        let mut opt = vec![0.0; self.nodes.len()];
        // children have larger DFS ids, so a reverse sweep sees them first
        for v in (0..self.nodes.len()).rev() {
            let n = &self.nodes[v];
            let stop = self.stop_value(v);
            opt[v] = if n.children.is_empty() {
                stop
            } else {
                let cont = n.children.iter().map(|&c| opt[c]).fold(f64::NEG_INFINITY, f64::max);
                stop.min(cont)
            };
        }
        opt
    }

    /// Exhaustively check the crossing rule's optimality properties.
    ///
    /// Everything is verified by enumeration (plus an independent min-max
    /// sweep for cross-checking); failures come back as counterexamples with
    /// the offending node and rule.
    pub fn verify_perfection(&self, cap: u64) -> Result<VerificationReport, TreeError> {
        let sigma = self.perfect_rule();
        let rules = self.enumerate_rules(cap)?;
        let opt = self.min_worst_case();
        let sigma_admissible = self.admissible_map(&sigma);
        let mut sigma_leaf = vec![f64::NAN; self.leaves.len()];
        self.leaf_values(&sigma, &mut sigma_leaf);

        let mut report = VerificationReport {
            pass: false,
            rule_count: rules.len() as u64,
            assumption_holds: self.declining_assumption_holds(),
            tight_crossings: self.tight_crossings(),
            optimal_everywhere: true,
            pareto_everywhere: true,
            condition_a: true,
            condition_b: true,
            unique_perfect: true,
            counterexamples: Vec::new(),
        };

        let admissible_nodes: Vec<usize> =
            (0..self.nodes.len()).filter(|&v| sigma_admissible[v]).collect();

        // (a) optimality of the crossing rule wherever admissible
        for &v in &admissible_nodes {
            let worst_sigma = self.worst_case_at(&sigma, v);
            if worst_sigma > opt[v] + TOL {
                report.optimal_everywhere = false;
                report.counterexamples.push(Counterexample {
                    check: CheckKind::Optimality,
                    node: v,
                    rule_stops: None,
                    scenario_leaf: None,
                    detail: format!("crossing rule worst case {worst_sigma} exceeds min-max value {}", opt[v]),
                });
            }
            for rule in &rules {
                if !self.rule_admissible_at(rule, v) {
                    continue;
                }
                let worst_rule = self.worst_case_at(rule, v);
                if worst_rule < worst_sigma - TOL {
                    report.optimal_everywhere = false;
                    report.counterexamples.push(Counterexample {
                        check: CheckKind::Optimality,
                        node: v,
                        rule_stops: Some(rule.stops.clone()),
                        scenario_leaf: None,
                        detail: format!("rule achieves worst case {worst_rule} below the crossing rule's {worst_sigma}"),
                    });
                }
            }
        }

        // (b) Pareto optimality of the crossing rule wherever admissible
        let mut tau_leaf = vec![f64::NAN; self.leaves.len()];
        for &v in &admissible_nodes {
            let (lo, hi) = (self.nodes[v].leaf_lo, self.nodes[v].leaf_hi);
            for rule in &rules {
                if !self.rule_admissible_at(rule, v) {
                    continue;
                }
                self.leaf_values(rule, &mut tau_leaf);
                let leq_everywhere = (lo..hi).all(|l| tau_leaf[l] <= sigma_leaf[l] + TOL);
                let strict_somewhere = (lo..hi).find(|&l| tau_leaf[l] < sigma_leaf[l] - TOL);
                if leq_everywhere {
                    if let Some(leaf) = strict_somewhere {
                        report.pareto_everywhere = false;
                        report.counterexamples.push(Counterexample {
                            check: CheckKind::Pareto,
                            node: v,
                            rule_stops: Some(rule.stops.clone()),
                            scenario_leaf: Some(leaf),
                            detail: "rule dominates the crossing rule".into(),
                        });
                    }
                }
            }
        }

        // (B) stopping strictly before the crossing rule is strictly worse on
        // every compatible scenario; checked per node since an early stop's
        // value depends only on the node
        for &v in &admissible_nodes {
            if sigma.stops.binary_search(&v).is_ok() {
                continue; // sigma stops here, nothing stops strictly before it at v
            }
            let early = self.stop_value(v);
            let (lo, hi) = (self.nodes[v].leaf_lo, self.nodes[v].leaf_hi);
            if let Some(leaf) = (lo..hi).find(|&l| early <= sigma_leaf[l] + TOL) {
                report.condition_b = false;
                report.counterexamples.push(Counterexample {
                    check: CheckKind::ConditionB,
                    node: v,
                    rule_stops: None,
                    scenario_leaf: Some(leaf),
                    detail: format!(
                        "stopping at the node yields {early}, not strictly worse than the crossing rule's {}",
                        sigma_leaf[leaf]
                    ),
                });
            }
        }

        // (A) at each crossing-rule stop, delaying is strictly worse on some
        // compatible scenario, for every delaying rule
        for &v in &sigma.stops {
            if self.nodes[v].children.is_empty() {
                continue; // no rule can stop strictly later than a leaf
            }
            let here = self.stop_value(v);
            // min over continuing rules of their worst case, by the min-max sweep
            let best_delay = self.nodes[v].children.iter().map(|&c| opt[c]).fold(f64::NEG_INFINITY, f64::max);
            if best_delay <= here + TOL {
                report.condition_a = false;
                report.counterexamples.push(Counterexample {
                    check: CheckKind::ConditionA,
                    node: v,
                    rule_stops: None,
                    scenario_leaf: None,
                    detail: format!("some delaying rule achieves worst case {best_delay} vs {here} at the stop"),
                });
            }
            // enumerated cross-check of the same statement
            for rule in &rules {
                if !self.rule_admissible_at(rule, v) || rule.stops.binary_search(&v).is_ok() {
                    continue;
                }
                let worst_rule = self.worst_case_at(rule, v);
                if worst_rule <= here + TOL {
                    report.condition_a = false;
                    report.counterexamples.push(Counterexample {
                        check: CheckKind::ConditionA,
                        node: v,
                        rule_stops: Some(rule.stops.clone()),
                        scenario_leaf: None,
                        detail: format!("delaying rule has worst case {worst_rule} vs {here} at the stop"),
                    });
                }
            }
        }

        // (d) uniqueness: every other rule fails optimality or Pareto
        // optimality at some node where it is admissible
        for rule in &rules {
            if rule.stops == sigma.stops {
                continue;
            }
            let admissible = self.admissible_map(rule);
            let mut disqualified = false;
            for v in 0..self.nodes.len() {
                if !admissible[v] {
                    continue;
                }
                if self.worst_case_at(rule, v) > opt[v] + TOL {
                    disqualified = true; // not optimal at v
                    break;
                }
                if self.dominated_at(rule, &sigma, v, &mut tau_leaf, &sigma_leaf) {
                    disqualified = true; // not Pareto at v
                    break;
                }
            }
            if !disqualified {
                // fall back to scanning every candidate dominator
                #[allow(clippy::needless_range_loop)] // v is a node id, not a slice position
                'outer: for v in 0..self.nodes.len() {
                    if !admissible[v] {
                        continue;
                    }
                    let mut cand_leaf = vec![f64::NAN; self.leaves.len()];
                    self.leaf_values(rule, &mut tau_leaf);
                    for cand in &rules {
                        if !self.rule_admissible_at(cand, v) {
                            continue;
                        }
                        self.leaf_values(cand, &mut cand_leaf);
                        let (lo, hi) = (self.nodes[v].leaf_lo, self.nodes[v].leaf_hi);
                        if (lo..hi).all(|l| cand_leaf[l] <= tau_leaf[l] + TOL)
                            && (lo..hi).any(|l| cand_leaf[l] < tau_leaf[l] - TOL)
                        {
                            disqualified = true;
                            break 'outer;
                        }
                    }
                }
            }
            if !disqualified {
                report.unique_perfect = false;
                report.counterexamples.push(Counterexample {
                    check: CheckKind::Uniqueness,
                    node: 0,
                    rule_stops: Some(rule.stops.clone()),
                    scenario_leaf: None,
                    detail: "rule is optimal and Pareto optimal at every admissible node".into(),
                });
            }
        }

        report.pass = report.optimal_everywhere
            && report.pareto_everywhere
            && report.condition_a
            && report.condition_b
            && report.unique_perfect;
        Ok(report)
    }

    fn rule_admissible_at(&self, rule: &TreeStoppingRule, v: usize) -> bool {
        // no stop strictly above v on the path to v
        let lo = rule.stops.partition_point(|&s| s < v);
        rule.stops[..lo].iter().all(|&s| self.nodes[s].subtree_end <= v)
    }

    /// Whether `by` dominates `rule` on the scenarios through `v`.
    fn dominated_at(
        &self,
        rule: &TreeStoppingRule,
        by: &TreeStoppingRule,
        v: usize,
        rule_buf: &mut [f64],
        by_leaf: &[f64],
    ) -> bool {
        if !self.rule_admissible_at(by, v) {
            return false;
        }
        self.leaf_values(rule, rule_buf);
        let (lo, hi) = (self.nodes[v].leaf_lo, self.nodes[v].leaf_hi);
        (lo..hi).all(|l| by_leaf[l] <= rule_buf[l] + TOL) && (lo..hi).any(|l| by_leaf[l] < rule_buf[l] - TOL)
    }
}

fn flatten(
    spec: &TreeNodeSpec,
    level: usize,
    running_max_above: f64,
    depth: usize,
    nodes: &mut Vec<Node>,
    leaves: &mut Vec<usize>,
) -> Result<usize, TreeError> {
    if !spec.price.is_finite() {
        return Err(TreeError::Structure(format!("non-finite price at level {level}")));
    }
    if level == depth && !spec.children.is_empty() {
        return Err(TreeError::Structure("node below the final level".into()));
    }
    if level < depth && spec.children.is_empty() {
        return Err(TreeError::Structure(format!("leaf at level {level} but depth is {depth}")));
    }
    let id = nodes.len();
    let running_max = running_max_above.max(spec.price);
    nodes.push(Node {
        price: spec.price,
        level,
        children: Vec::with_capacity(spec.children.len()),
        subtree_end: 0,
        leaf_lo: leaves.len(),
        leaf_hi: 0,
        running_max,
        drawdown: running_max - spec.price,
    });
    if spec.children.is_empty() {
        leaves.push(id);
    }
    let mut child_ids = Vec::with_capacity(spec.children.len());
    for child in &spec.children {
        child_ids.push(flatten(child, level + 1, running_max, depth, nodes, leaves)?);
    }
    nodes[id].children = child_ids;
    nodes[id].subtree_end = nodes.len();
    nodes[id].leaf_hi = leaves.len();
    Ok(id)
}

/// An adapted stopping rule on a tree: the antichain of nodes where it stops.
/// Every scenario passes through exactly one stop node; terminal nodes are
/// forced stops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStoppingRule {
    stops: Vec<usize>,
}

impl TreeStoppingRule {
    /// Validate that `stops` covers every scenario exactly once.
    pub fn new(tree: &ScenarioTree, mut stops: Vec<usize>) -> Result<Self, TreeError> {
        stops.sort_unstable();
        stops.dedup();
        let mut covered = vec![0u32; tree.leaf_count()];
        for &s in &stops {
            if s >= tree.node_count() {
                return Err(TreeError::NodeOutOfRange(s));
            }
            for c in &mut covered[tree.nodes[s].leaf_lo..tree.nodes[s].leaf_hi] {
                *c += 1;
            }
        }
        if let Some(l) = covered.iter().position(|&c| c != 1) {
            return Err(TreeError::InvalidRule(format!(
                "scenario {l} is covered {} times (need exactly 1)",
                covered[l]
            )));
        }
        Ok(Self { stops })
    }

    pub fn stops(&self) -> &[usize] {
        &self.stops
    }

    /// The stop node for the scenario ending at a leaf index.
    pub fn stop_for_leaf(&self, tree: &ScenarioTree, leaf_index: usize) -> usize {
        *self
            .stops
            .iter()
            .find(|&&s| (tree.nodes[s].leaf_lo..tree.nodes[s].leaf_hi).contains(&leaf_index))
            .expect("rule covers every scenario")
    }
}

/// Worst-case and per-leaf estimated regrets of a rule from a history node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRegret {
    pub worst_case: f64,
    /// (leaf index, stop value) for each scenario through the node.
    pub per_leaf: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    Optimality,
    Pareto,
    ConditionA,
    ConditionB,
    Uniqueness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub check: CheckKind,
    pub node: usize,
    pub rule_stops: Option<Vec<usize>>,
    pub scenario_leaf: Option<usize>,
    pub detail: String,
}

/// Outcome of [`ScenarioTree::verify_perfection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// All five checks clean.
    pub pass: bool,
    pub rule_count: u64,
    /// Whether every non-terminal node has a strictly-declining continuation.
    pub assumption_holds: bool,
    /// Whether every first crossing is tight (see the module docs).
    pub tight_crossings: bool,
    pub optimal_everywhere: bool,
    pub pareto_everywhere: bool,
    pub condition_a: bool,
    pub condition_b: bool,
    pub unique_perfect: bool,
    pub counterexamples: Vec<Counterexample>,
}

/// Shape of randomly generated trees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeGenConfig {
    /// Number of levels below the root (1..).
    pub depth: usize,
    /// Max children per node (1..=3 recommended; rule counts explode fast).
    pub max_branching: usize,
    /// Regenerate until the rule count fits this cap.
    pub max_rules: u64,
    pub horizon: f64,
}

impl Default for TreeGenConfig {
    fn default() -> Self {
        Self { depth: 4, max_branching: 3, max_rules: 20_000, horizon: 1.0 }
    }
}

/// Price grid for generated trees: dyadic steps keep every comparison exact.
const GEN_UNIT: f64 = 1.0 / 64.0;
const GEN_ATTEMPTS: usize = 500;

/// Generate a random valid scenario tree.
///
/// Guarantees by construction: a strictly-declining first-child branch at
/// every non-terminal node (the uniqueness assumption), tight first
/// crossings, dyadic prices and forecast values, and a rule count within
/// `config.max_rules`.
pub fn random_tree(config: &TreeGenConfig, seed: u64) -> Result<ScenarioTree, TreeError> {
    if config.depth < 1 || config.max_branching < 1 {
        return Err(TreeError::Structure("depth and max_branching must be at least 1".into()));
    }
    if !(config.horizon > 0.0) {
        return Err(TreeError::Structure("horizon must be positive".into()));
    }
    for attempt in 0..GEN_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let tree = generate_once(config, &mut rng);
        if tree.count_rules() <= config.max_rules as u128 {
            debug_assert!(tree.declining_assumption_holds());
            debug_assert!(tree.tight_crossings());
            return Ok(tree);
        }
    }
    Err(TreeError::GenerationFailed(GEN_ATTEMPTS))
}

fn generate_once(config: &TreeGenConfig, rng: &mut ChaCha8Rng) -> ScenarioTree {
    let depth = config.depth;

    // level times: distinct interior points on a 64ths grid
    let mut interior: Vec<u32> = Vec::new();
    while interior.len() < depth - 1 {
        let t = rng.random_range(1..64u32);
        if !interior.contains(&t) {
            interior.push(t);
        }
    }
    interior.sort_unstable();
    let mut level_times = vec![0.0];
    level_times.extend(interior.iter().map(|&t| config.horizon * t as f64 / 64.0));
    level_times.push(config.horizon);

    // forecast values in grid units, strictly decreasing to 0 with gaps >= 2
    let mut psi_units = vec![0i64];
    for _ in 0..depth {
        let gap = rng.random_range(2..=8i64);
        psi_units.push(psi_units.last().unwrap() + gap);
    }
    psi_units.reverse();

    // price states in grid units
    struct GenState {
        price: i64,
        runmax: i64,
        crossed: bool,
    }
    let x0 = rng.random_range(-16..=16i64);
    let root_state = GenState { price: x0, runmax: x0, crossed: false };

    fn build(
        state: &GenState,
        level: usize,
        depth: usize,
        psi: &[i64],
        config: &TreeGenConfig,
        rng: &mut ChaCha8Rng,
    ) -> TreeNodeSpec {
        if level == depth {
            return TreeNodeSpec::leaf(state.price as f64 * GEN_UNIT);
        }
        let n_children = rng.random_range(1..=config.max_branching);
        let mut children = Vec::with_capacity(n_children);
        let child_level = level + 1;
        let dd = state.runmax - state.price;
        for i in 0..n_children {
            let declining = i == 0;
            let child = if state.crossed {
                // unconstrained zone below a crossing
                let price = if declining {
                    state.price - rng.random_range(1..=4i64)
                } else {
                    state.price + rng.random_range(-3..=4i64)
                };
                GenState { price, runmax: state.runmax.max(price), crossed: true }
            } else {
                // margin that keeps declining chains feasible at deeper levels
                let cont_cap = psi[child_level] - 1 - (depth - child_level) as i64;
                let lo_decline = dd + 1;
                let cross_window = (psi[child_level].max(lo_decline), psi[child_level - 1] - 1);
                let can_continue = if declining { lo_decline <= cont_cap } else { cont_cap >= 0 };
                let cross = !can_continue || rng.random_range(0..100) < 25;
                if cross {
                    let lo = if declining { cross_window.0 } else { psi[child_level] };
                    let dd_child = rng.random_range(lo..=cross_window.1);
                    GenState { price: state.runmax - dd_child, runmax: state.runmax, crossed: true }
                } else if declining {
                    let dd_child = rng.random_range(lo_decline..=cont_cap);
                    GenState { price: state.runmax - dd_child, runmax: state.runmax, crossed: false }
                } else if rng.random_range(0..100) < 40 {
                    // ride or extend the running maximum
                    let rise = rng.random_range(0..=3i64);
                    GenState { price: state.runmax + rise, runmax: state.runmax + rise, crossed: false }
                } else {
                    let dd_child = rng.random_range(0..=cont_cap);
                    GenState { price: state.runmax - dd_child, runmax: state.runmax, crossed: false }
                }
            };
            children.push(build(&child, child_level, depth, psi, config, rng));
        }
        TreeNodeSpec::branch(state.price as f64 * GEN_UNIT, children)
    }

    let root = build(&root_state, 0, depth, &psi_units, config, rng);
    let psi: Vec<f64> = psi_units.iter().map(|&u| u as f64 * GEN_UNIT).collect();
    ScenarioTree::new(level_times, psi, root).expect("generated tree is structurally valid")
}
