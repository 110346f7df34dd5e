//! Single-consequent association rules.
//!
//! For a rule X -> Y over n transactions with counts |X|, |Y| and |X u Y|:
//!
//! * support    S = |X u Y| / n
//! * confidence C = |X u Y| / |X|
//! * lift       L = C / (|Y| / n) = |X u Y| n / (|X| |Y|)
//!
//! Every rule keeps its raw counts, so ordering and dominance checks compare
//! exact integer cross-products rather than rounded ratios.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apriori::{mine_frequent, FrequentItemsets, SupportSpec};
use crate::error::{Error, Result};
use crate::transactions::{ItemId, ItemRef, TransactionSet};

pub const DEFAULT_MIN_LIFT: f64 = 1.1;
pub const DEFAULT_MAX_RULE_ITEMS: usize = 4;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

/// Support, confidence and lift from raw counts.
pub fn score(n: u64, count_x: u64, count_y: u64, count_xy: u64) -> Result<Metrics> {
    if count_x == 0 || count_y == 0 {
        return Err(Error::InvalidCounts(format!(
            "antecedent count {count_x} and consequent count {count_y} must be positive"
        )));
    }
    if count_x > n || count_y > n {
        return Err(Error::InvalidCounts(format!(
            "counts ({count_x}, {count_y}) exceed {n} transactions"
        )));
    }
    if count_xy > count_x.min(count_y) {
        return Err(Error::InvalidCounts(format!(
            "joint count {count_xy} exceeds a marginal count"
        )));
    }
    // Products stay below 2^53 for any realistic n, so each metric carries a
    // single rounding.
    let (n, x, y, xy) = (n as f64, count_x as f64, count_y as f64, count_xy as f64);
    Ok(Metrics {
        support: xy / n,
        confidence: xy / x,
        lift: (xy * n) / (x * y),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    /// `R1`, `R2`, ... in rank order; empty until ranked.
    pub id: String,
    pub antecedent: Vec<ItemId>,
    pub consequent: ItemId,
    pub joint_count: u64,
    pub antecedent_count: u64,
    pub consequent_count: u64,
    pub n_transactions: u64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl Rule {
    pub fn from_counts(
        antecedent: Vec<ItemId>,
        consequent: ItemId,
        n: u64,
        count_x: u64,
        count_y: u64,
        count_xy: u64,
    ) -> Result<Self> {
        let m = score(n, count_x, count_y, count_xy)?;
        Ok(Rule {
            id: String::new(),
            antecedent,
            consequent,
            joint_count: count_xy,
            antecedent_count: count_x,
            consequent_count: count_y,
            n_transactions: n,
            support: m.support,
            confidence: m.confidence,
            lift: m.lift,
        })
    }

    /// Exact comparison of confidences.
    pub fn cmp_confidence(&self, other: &Rule) -> Ordering {
        let a = self.joint_count as u128 * other.antecedent_count as u128;
        let b = other.joint_count as u128 * self.antecedent_count as u128;
        a.cmp(&b)
    }

    pub fn cmp_support(&self, other: &Rule) -> Ordering {
        let a = self.joint_count as u128 * other.n_transactions as u128;
        let b = other.joint_count as u128 * self.n_transactions as u128;
        a.cmp(&b)
    }

    pub fn cmp_lift(&self, other: &Rule) -> Ordering {
        let a = self.joint_count as u128
            * self.n_transactions as u128
            * other.antecedent_count as u128
            * other.consequent_count as u128;
        let b = other.joint_count as u128
            * other.n_transactions as u128
            * self.antecedent_count as u128
            * self.consequent_count as u128;
        a.cmp(&b)
    }

    /// True when `self` has a strict-subset antecedent, the same consequent
    /// and confidence at least as high as `other`.
    pub fn dominates(&self, other: &Rule) -> bool {
        self.consequent == other.consequent
            && self.antecedent.len() < other.antecedent.len()
            && is_subset(&self.antecedent, &other.antecedent)
            && self.cmp_confidence(other) != Ordering::Less
    }
}

/// Both slices sorted ascending.
fn is_subset(small: &[ItemId], large: &[ItemId]) -> bool {
    let mut it = large.iter();
    small.iter().all(|s| it.any(|l| l == s))
}

fn default_min_lift() -> f64 {
    DEFAULT_MIN_LIFT
}

fn default_max_rule_items() -> usize {
    DEFAULT_MAX_RULE_ITEMS
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

/// Thresholds and shape of one mining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningCase {
    pub name: String,
    /// Fixed right-hand side. `None` mines every single-item consequent.
    #[serde(default)]
    pub consequent: Option<ItemRef>,
    #[serde(default)]
    pub min_support: SupportSpec,
    pub min_confidence: f64,
    #[serde(default = "default_min_lift")]
    pub min_lift: f64,
    /// Total items per rule, antecedent plus consequent.
    #[serde(default = "default_max_rule_items")]
    pub max_rule_items: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub allow_empty_antecedent: bool,
}

impl MiningCase {
    pub fn new(name: &str, consequent: Option<ItemRef>) -> Self {
        MiningCase {
            name: name.to_string(),
            consequent,
            min_support: SupportSpec::default(),
            min_confidence: 0.0,
            min_lift: DEFAULT_MIN_LIFT,
            max_rule_items: DEFAULT_MAX_RULE_ITEMS,
            top_k: DEFAULT_TOP_K,
            allow_empty_antecedent: false,
        }
    }

    /// A case with no support, confidence or lift constraint.
    pub fn unconstrained(name: &str) -> Self {
        MiningCase {
            min_lift: 0.0,
            ..MiningCase::new(name, None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_confidence.is_finite() && self.min_confidence >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "case `{}`: min_confidence {} must be a non-negative number",
                self.name, self.min_confidence
            )));
        }
        if !(self.min_lift.is_finite() && self.min_lift >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "case `{}`: min_lift {} must be a non-negative number",
                self.name, self.min_lift
            )));
        }
        if self.max_rule_items < 1 {
            return Err(Error::InvalidArgument(format!(
                "case `{}`: max_rule_items must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// Right-hand sides a case mines for, or `None` when the fixed consequent is
/// absent from the data.
fn consequents(ts: &TransactionSet, case: &MiningCase) -> Result<Option<Vec<ItemId>>> {
    let universe = ts.universe();
    let Some(item) = &case.consequent else {
        return Ok(Some(
            (0..universe.len()).map(|i| ItemId(i as u32)).collect(),
        ));
    };
    match universe.resolve(item) {
        Ok(id) => Ok(Some(vec![id])),
        Err(Error::UnknownItem(_)) => {
            let var = universe.dictionary().require(&item.variable)?;
            if ts.variables().contains(&var) {
                log::warn!("case `{}`: consequent {item} never occurs", case.name);
                Ok(None)
            } else {
                Err(Error::UnknownItem(format!(
                    "{item} (variable not encoded in this transaction set)"
                )))
            }
        }
        Err(e) => Err(e),
    }
}

/// Emits every rule Z \ {Y} -> Y from frequent itemsets Z that passes the
/// case thresholds.
pub fn generate_rules(
    freq: &FrequentItemsets,
    ts: &TransactionSet,
    case: &MiningCase,
) -> Result<Vec<Rule>> {
    case.validate()?;
    let Some(targets) = consequents(ts, case)? else {
        return Ok(Vec::new());
    };
    let n = ts.len() as u64;
    let min_count = case.min_support.resolve(ts.len())?;
    let mut is_target = vec![false; ts.universe().len()];
    for &t in &targets {
        is_target[t.index()] = true;
    }
    if case.consequent.is_some() && freq.count(&targets).is_none() {
        log::warn!(
            "case `{}`: consequent is not frequent at {} transactions",
            case.name,
            freq.min_support_count()
        );
        return Ok(Vec::new());
    }
    let min_items = if case.allow_empty_antecedent { 1 } else { 2 };

    let sets: Vec<_> = freq
        .iter()
        .filter(|z| z.items.len() >= min_items && z.items.len() <= case.max_rule_items)
        .filter(|z| z.count >= min_count)
        .collect();
    let per_set: Vec<Vec<Rule>> = sets
        .par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for (pos, &y) in z.items.iter().enumerate() {
                if !is_target[y.index()] {
                    continue;
                }
                let mut antecedent = z.items.clone();
                antecedent.remove(pos);
                let count_x = match freq.count(&antecedent) {
                    Some(c) => c,
                    None => ts.support_count(&antecedent).expect("items in universe"),
                };
                let count_y = freq.count(&[y]).expect("subset of a frequent set");
                let rule = Rule::from_counts(antecedent, y, n, count_x, count_y, z.count)
                    .expect("counts from one transaction set are consistent");
                if rule.confidence >= case.min_confidence && rule.lift >= case.min_lift {
                    out.push(rule);
                }
            }
            out
        })
        .collect();
    Ok(per_set.into_iter().flatten().collect())
}

/// Drops every rule dominated by a simpler rule: strict-subset antecedent,
/// same consequent, confidence at least as high. Input order is kept.
pub fn prune_redundant(rules: &[Rule]) -> Result<Vec<Rule>> {
    if let Some(first) = rules.first() {
        if rules.iter().any(|r| r.consequent != first.consequent) {
            return Err(Error::MixedConsequents);
        }
    }
    // A rule dominated by a removed rule is also dominated by whatever removed
    // that one, so only retained rules need checking.
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by_key(|&i| rules[i].antecedent.len());
    let mut keep = vec![false; rules.len()];
    let mut retained: HashMap<&[ItemId], &Rule> = HashMap::new();
    for i in order {
        let rule = &rules[i];
        let dominated = if rule.antecedent.len() <= SUBSET_LOOKUP_MAX {
            strict_subsets(&rule.antecedent).any(|sub| {
                retained
                    .get(sub.as_slice())
                    .is_some_and(|r| r.dominates(rule))
            })
        } else {
            retained.values().any(|r| r.dominates(rule))
        };
        if !dominated {
            keep[i] = true;
            retained.insert(&rule.antecedent, rule);
        }
    }
    Ok(rules
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

const SUBSET_LOOKUP_MAX: usize = 12;

fn strict_subsets(items: &[ItemId]) -> impl Iterator<Item = Vec<ItemId>> + '_ {
    let full = (1u32 << items.len()) - 1;
    (0..full).map(move |mask| {
        items
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &i)| i)
            .collect()
    })
}

fn prune_per_consequent(rules: Vec<Rule>) -> Vec<Rule> {
    let mut consequents: Vec<ItemId> = rules.iter().map(|r| r.consequent).collect();
    consequents.sort_unstable();
    consequents.dedup();
    let mut out = Vec::with_capacity(rules.len());
    for c in consequents {
        let group: Vec<Rule> = rules
            .iter()
            .filter(|r| r.consequent == c)
            .cloned()
            .collect();
        out.extend(prune_redundant(&group).expect("single consequent"));
    }
    out
}

/// Lift desc, then confidence desc, support desc, antecedent item ids,
/// consequent.
pub fn rank_order(a: &Rule, b: &Rule) -> Ordering {
    b.cmp_lift(a)
        .then_with(|| b.cmp_confidence(a))
        .then_with(|| b.cmp_support(a))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
        .then_with(|| a.consequent.cmp(&b.consequent))
}

fn rank_all(mut rules: Vec<Rule>) -> Vec<Rule> {
    rules.sort_by(rank_order);
    for (i, r) in rules.iter_mut().enumerate() {
        r.id = format!("R{}", i + 1);
    }
    rules
}

/// Sorts, assigns `R1..` ids and keeps the first `top_k`.
pub fn rank_rules(rules: &[Rule], top_k: usize) -> Vec<Rule> {
    let mut ranked = rank_all(rules.to_vec());
    ranked.truncate(top_k);
    ranked
}

/// `{a=x, b=y}`.
pub fn format_itemset(labels: &[String], items: &[ItemId]) -> String {
    let parts: Vec<&str> = items.iter().map(|i| labels[i.index()].as_str()).collect();
    format!("{{{}}}", parts.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub case: String,
    pub consequent: Option<String>,
    pub n_transactions: usize,
    pub resolved_min_support_count: u64,
    pub frequent_itemsets: usize,
    pub rules_generated: usize,
    pub rules_after_pruning: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case: MiningCase,
    /// `variable=category` per item id of the mined universe.
    pub item_labels: Vec<String>,
    pub n_transactions: usize,
    pub resolved_min_support_count: u64,
    pub frequent_itemsets: usize,
    pub rules_generated: usize,
    /// Every rule surviving pruning, ranked, with ids.
    pub rules: Vec<Rule>,
}

impl CaseResult {
    pub fn top(&self) -> &[Rule] {
        &self.rules[..self.rules.len().min(self.case.top_k)]
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            case: self.case.name.clone(),
            consequent: self.case.consequent.as_ref().map(ToString::to_string),
            n_transactions: self.n_transactions,
            resolved_min_support_count: self.resolved_min_support_count,
            frequent_itemsets: self.frequent_itemsets,
            rules_generated: self.rules_generated,
            rules_after_pruning: self.rules.len(),
            top_k: self.case.top_k,
        }
    }

    pub fn antecedent_label(&self, rule: &Rule) -> String {
        format_itemset(&self.item_labels, &rule.antecedent)
    }

    pub fn consequent_label(&self, rule: &Rule) -> &str {
        &self.item_labels[rule.consequent.index()]
    }

    /// Full ranked rule list as CSV: percentages to three decimals, lift to
    /// two.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "id",
            "antecedent_items",
            "consequent",
            "joint_count",
            "support_pct",
            "confidence_pct",
            "lift",
        ])?;
        for r in &self.rules {
            out.write_record([
                r.id.clone(),
                self.antecedent_label(r),
                self.consequent_label(r).to_string(),
                r.joint_count.to_string(),
                format!("{:.3}", 100.0 * r.support),
                format!("{:.3}", 100.0 * r.confidence),
                format!("{:.2}", r.lift),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv stream>", e))?;
        Ok(())
    }
}

/// Mine, generate, prune and rank for one case.
pub fn run_case(ts: &TransactionSet, case: &MiningCase) -> Result<CaseResult> {
    case.validate()?;
    let freq = mine_frequent(ts, case.min_support, case.max_rule_items)?;
    log::info!(
        "case `{}`: resolved minimum support count {} of {} transactions",
        case.name,
        freq.min_support_count(),
        ts.len()
    );
    let generated = generate_rules(&freq, ts, case)?;
    let rules_generated = generated.len();
    let pruned = prune_per_consequent(generated);
    log::info!(
        "case `{}`: {} rules generated, {} after pruning",
        case.name,
        rules_generated,
        pruned.len()
    );
    let universe = ts.universe();
    Ok(CaseResult {
        case: case.clone(),
        item_labels: (0..universe.len())
            .map(|i| universe.label(ItemId(i as u32)))
            .collect(),
        n_transactions: ts.len(),
        resolved_min_support_count: freq.min_support_count(),
        frequent_itemsets: freq.len(),
        rules_generated,
        rules: rank_all(pruned),
    })
}
