//! Level-wise frequent itemset mining.
//!
//! Candidates of size k are joined from pairs of frequent (k-1)-itemsets that
//! share their first k-2 items, pruned when any (k-1)-subset is infrequent,
//! and never contain two categories of the same variable. Counting is grouped
//! by the shared parent: one scan finds the rows covering the parent, and only
//! those rows are probed for each extension item.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transactions::{ItemId, TransactionSet};

/// Minimum support as a fraction of transactions, a percentage, or an
/// absolute transaction count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportSpec {
    Fraction(f64),
    Percent(f64),
    Count(u64),
}

impl Default for SupportSpec {
    fn default() -> Self {
        SupportSpec::Count(1)
    }
}

impl SupportSpec {
    /// Converts to a transaction count: `ceil(f * n)`, floored at 1.
    pub fn resolve(&self, n_transactions: usize) -> Result<u64> {
        let fraction = match *self {
            SupportSpec::Count(0) => {
                return Err(Error::InvalidArgument("support count must be >= 1".into()))
            }
            SupportSpec::Count(c) => return Ok(c),
            SupportSpec::Fraction(f) => f,
            SupportSpec::Percent(p) => p / 100.0,
        };
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "support fraction {fraction} outside (0, 1]"
            )));
        }
        let exact = fraction * n_transactions as f64;
        // 0.1 * 1800 must resolve to 180, not 181.
        let nearest = exact.round();
        let count = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            exact.ceil()
        };
        Ok((count as u64).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequentItemset {
    pub items: Vec<ItemId>,
    pub count: u64,
}

#[derive(Debug, Clone)]
pub struct FrequentItemsets {
    levels: Vec<Vec<FrequentItemset>>,
    lookup: HashMap<Vec<ItemId>, u64>,
    min_support_count: u64,
    max_len: usize,
    n_transactions: usize,
}

impl FrequentItemsets {
    fn new(
        levels: Vec<Vec<FrequentItemset>>,
        min_support_count: u64,
        max_len: usize,
        n: usize,
    ) -> Self {
        let lookup = levels
            .iter()
            .flatten()
            .map(|f| (f.items.clone(), f.count))
            .collect();
        FrequentItemsets {
            levels,
            lookup,
            min_support_count,
            max_len,
            n_transactions: n,
        }
    }

    pub fn min_support_count(&self) -> u64 {
        self.min_support_count
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn n_transactions(&self) -> usize {
        self.n_transactions
    }

    /// Itemsets of size `k` (1-based), in lexicographic item-id order.
    pub fn level(&self, k: usize) -> &[FrequentItemset] {
        k.checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrequentItemset> {
        self.levels.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }

    /// Count of a sorted itemset if it is frequent. The empty set is
    /// contained in every transaction.
    pub fn count(&self, items: &[ItemId]) -> Option<u64> {
        if items.is_empty() {
            return Some(self.n_transactions as u64);
        }
        self.lookup.get(items).copied()
    }

    /// CSV dump: level, items, support_count, support_fraction.
    pub fn write_csv<W: Write>(&self, writer: W, ts: &TransactionSet) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["level", "items", "support_count", "support_fraction"])?;
        for set in self.iter() {
            let labels: Vec<String> = set.items.iter().map(|&i| ts.universe().label(i)).collect();
            out.write_record([
                set.items.len().to_string(),
                labels.join(" "),
                set.count.to_string(),
                (set.count as f64 / self.n_transactions as f64).to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv stream>", e))?;
        Ok(())
    }
}

/// Mines every itemset of at most `max_len` items whose support count reaches
/// the resolved threshold.
pub fn mine_frequent(
    ts: &TransactionSet,
    min_support: SupportSpec,
    max_len: usize,
) -> Result<FrequentItemsets> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let n = ts.len();
    let threshold = min_support.resolve(n)?;
    log::info!("minimum support {min_support:?} resolved to {threshold} of {n} transactions");
    if threshold > n as u64 {
        log::warn!("support threshold {threshold} exceeds {n} transactions; nothing is frequent");
        return Ok(FrequentItemsets::new(Vec::new(), threshold, max_len, n));
    }

    let universe = ts.universe();
    let first: Vec<FrequentItemset> = (0..universe.len())
        .map(|i| ItemId(i as u32))
        .filter_map(|id| {
            let count = ts.item_count(id);
            (count >= threshold).then(|| FrequentItemset {
                items: vec![id],
                count,
            })
        })
        .collect();
    let mut levels = vec![first];

    for k in 2..=max_len {
        let prev = levels.last().expect("at least one level");
        if prev.len() < 2 {
            break;
        }
        let prev_set: HashSet<&[ItemId]> = prev.iter().map(|f| f.items.as_slice()).collect();
        let groups = join_and_prune(prev, &prev_set, k, ts);
        let counted: Vec<Vec<FrequentItemset>> = groups
            .par_iter()
            .map(|(parent, extensions)| {
                count_extensions(ts, &prev[*parent].items, extensions, threshold)
            })
            .collect();
        let level: Vec<FrequentItemset> = counted.into_iter().flatten().collect();
        if level.is_empty() {
            break;
        }
        levels.push(level);
    }

    Ok(FrequentItemsets::new(levels, threshold, max_len, n))
}

/// Groups candidate k-itemsets by their (k-1)-prefix parent, returned as
/// (index into `prev`, extension items).
fn join_and_prune(
    prev: &[FrequentItemset],
    prev_set: &HashSet<&[ItemId]>,
    k: usize,
    ts: &TransactionSet,
) -> Vec<(usize, Vec<ItemId>)> {
    let universe = ts.universe();
    let mut groups = Vec::new();
    let mut candidate = Vec::with_capacity(k);
    let mut subset = Vec::with_capacity(k - 1);
    for (i, left) in prev.iter().enumerate() {
        let a = &left.items;
        let tail_var = universe.variable_of(a[k - 2]);
        let mut extensions = Vec::new();
        for right in &prev[i + 1..] {
            let b = &right.items;
            if a[..k - 2] != b[..k - 2] {
                break;
            }
            let last = b[k - 2];
            if universe.variable_of(last) == tail_var {
                continue;
            }
            candidate.clear();
            candidate.extend_from_slice(a);
            candidate.push(last);
            // Dropping either of the last two items yields `a` or `b`.
            let all_frequent = (0..k - 2).all(|drop| {
                subset.clear();
                subset.extend(
                    candidate
                        .iter()
                        .enumerate()
                        .filter(|&(p, _)| p != drop)
                        .map(|(_, &id)| id),
                );
                prev_set.contains(subset.as_slice())
            });
            if all_frequent {
                extensions.push(last);
            }
        }
        if !extensions.is_empty() {
            groups.push((i, extensions));
        }
    }
    groups
}

fn count_extensions(
    ts: &TransactionSet,
    parent: &[ItemId],
    extensions: &[ItemId],
    threshold: u64,
) -> Vec<FrequentItemset> {
    let mask = ts.mask(parent).expect("parent items are in the universe");
    let mut counts = vec![0u64; extensions.len()];
    for t in 0..ts.len() {
        if !ts.covers(t, &mask) {
            continue;
        }
        for (slot, &ext) in counts.iter_mut().zip(extensions) {
            if ts.contains(t, ext) {
                *slot += 1;
            }
        }
    }
    extensions
        .iter()
        .zip(counts)
        .filter(|&(_, count)| count >= threshold)
        .map(|(&ext, count)| {
            let mut items = parent.to_vec();
            items.push(ext);
            FrequentItemset { items, count }
        })
        .collect()
}
