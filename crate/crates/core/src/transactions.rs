//! Bitset transaction database over a dense item universe.
//!
//! Each transaction is a fixed-width row of 64-bit words; item `i` sits at bit
//! `i % 64` of word `i / 64`. Containment of an itemset is a masked compare
//! per word.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::schema::{DataDictionary, RecordSet};

/// Dense index into an [`ItemUniverse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A (variable, category) pair, both as dictionary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item {
    pub variable: usize,
    pub category: u16,
}

/// A `variable=category` reference as written in configs and reports.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ItemRef {
    pub variable: String,
    pub category: String,
}

impl ItemRef {
    pub fn new(variable: &str, category: &str) -> Self {
        ItemRef {
            variable: variable.to_string(),
            category: category.to_string(),
        }
    }
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.variable, self.category)
    }
}

impl FromStr for ItemRef {
    type Err = Error;

    // Split on the first `=`: variable names never contain one, categories
    // such as `>64` may start with characters that look like an operator.
    fn from_str(s: &str) -> Result<Self> {
        let (var, cat) = s.split_once('=').ok_or_else(|| {
            Error::Parse(format!("item `{s}` is not of the form variable=category"))
        })?;
        if var.trim().is_empty() || cat.trim().is_empty() {
            return Err(Error::Parse(format!("item `{s}` has an empty side")));
        }
        Ok(ItemRef::new(var.trim(), cat.trim()))
    }
}

impl Serialize for ItemRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct ItemUniverse {
    dictionary: Arc<DataDictionary>,
    items: Vec<Item>,
    index: HashMap<Item, ItemId>,
}

impl ItemUniverse {
    fn new(dictionary: Arc<DataDictionary>, items: Vec<Item>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, &item)| (item, ItemId(i as u32)))
            .collect();
        ItemUniverse {
            dictionary,
            items,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: ItemId) -> Item {
        self.items[id.index()]
    }

    pub fn dictionary(&self) -> &Arc<DataDictionary> {
        &self.dictionary
    }

    pub fn id_of(&self, item: Item) -> Option<ItemId> {
        self.index.get(&item).copied()
    }

    pub fn variable_of(&self, id: ItemId) -> usize {
        self.items[id.index()].variable
    }

    pub fn item_ref(&self, id: ItemId) -> ItemRef {
        let item = self.item(id);
        let schema = self.dictionary.variable(item.variable);
        ItemRef::new(&schema.name, &schema.categories[item.category as usize])
    }

    /// `variable=category`.
    pub fn label(&self, id: ItemId) -> String {
        self.item_ref(id).to_string()
    }

    /// Resolves a reference; fails if the variable or category is unknown to
    /// the dictionary or the item is not part of this universe.
    pub fn resolve(&self, item: &ItemRef) -> Result<ItemId> {
        let var = self.dictionary.require(&item.variable)?;
        let cat = self.dictionary.require_category(var, &item.category)?;
        self.id_of(Item {
            variable: var,
            category: cat,
        })
        .ok_or_else(|| Error::UnknownItem(item.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Include every dictionary category of the selected variables, not only
    /// those that occur in the records.
    pub full_universe: bool,
}

#[derive(Debug, Clone)]
pub struct TransactionSet {
    universe: ItemUniverse,
    variables: Vec<usize>,
    words: usize,
    bits: Vec<u64>,
    n_transactions: usize,
    item_counts: Vec<u64>,
}

/// One bit row per record over the selected variables.
pub fn encode(
    rs: &RecordSet,
    selected_vars: &[impl AsRef<str>],
    options: EncodeOptions,
) -> Result<TransactionSet> {
    if selected_vars.is_empty() {
        return Err(Error::InvalidArgument(
            "no variables selected for encoding".into(),
        ));
    }
    if rs.is_empty() {
        return Err(Error::EmptyInput("record set has no records".into()));
    }
    let dict = rs.dictionary();
    let mut variables = selected_vars
        .iter()
        .map(|v| dict.require(v.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    variables.sort_unstable();
    variables.dedup();

    let mut items = Vec::new();
    for &var in &variables {
        let n_cats = dict.variable(var).categories.len();
        let mut present = vec![options.full_universe; n_cats];
        if !options.full_universe {
            for r in rs.records() {
                present[r.values[var] as usize] = true;
            }
        }
        items.extend((0..n_cats).filter(|&c| present[c]).map(|c| Item {
            variable: var,
            category: c as u16,
        }));
    }
    let universe = ItemUniverse::new(Arc::clone(dict), items);
    let words = universe.len().div_ceil(64).max(1);
    let mut bits = vec![0u64; words * rs.len()];
    for (t, r) in rs.records().iter().enumerate() {
        let row = &mut bits[t * words..(t + 1) * words];
        for &var in &variables {
            let id = universe
                .id_of(Item {
                    variable: var,
                    category: r.values[var],
                })
                .expect("occurring category is in the universe");
            row[id.index() / 64] |= 1 << (id.index() % 64);
        }
    }
    Ok(TransactionSet::assemble(
        universe,
        variables,
        words,
        bits,
        rs.len(),
    ))
}

impl TransactionSet {
    fn assemble(
        universe: ItemUniverse,
        variables: Vec<usize>,
        words: usize,
        bits: Vec<u64>,
        n_transactions: usize,
    ) -> Self {
        let mut item_counts = vec![0u64; universe.len()];
        for row in bits.chunks_exact(words) {
            for (w, &word) in row.iter().enumerate() {
                let mut rest = word;
                while rest != 0 {
                    let b = rest.trailing_zeros() as usize;
                    item_counts[w * 64 + b] += 1;
                    rest &= rest - 1;
                }
            }
        }
        TransactionSet {
            universe,
            variables,
            words,
            bits,
            n_transactions,
            item_counts,
        }
    }

    pub fn universe(&self) -> &ItemUniverse {
        &self.universe
    }

    /// Dictionary indices of the encoded variables, in dictionary order.
    pub fn variables(&self) -> &[usize] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.n_transactions
    }

    pub fn is_empty(&self) -> bool {
        self.n_transactions == 0
    }

    pub fn item_count(&self, id: ItemId) -> u64 {
        self.item_counts[id.index()]
    }

    fn row(&self, t: usize) -> &[u64] {
        &self.bits[t * self.words..(t + 1) * self.words]
    }

    pub fn contains(&self, t: usize, id: ItemId) -> bool {
        self.row(t)[id.index() / 64] & (1 << (id.index() % 64)) != 0
    }

    pub fn transaction_items(&self, t: usize) -> Vec<ItemId> {
        (0..self.universe.len())
            .map(|i| ItemId(i as u32))
            .filter(|&id| self.contains(t, id))
            .collect()
    }

    pub(crate) fn covers(&self, t: usize, mask: &[u64]) -> bool {
        self.row(t).iter().zip(mask).all(|(&r, &m)| r & m == m)
    }

    pub(crate) fn mask(&self, itemset: &[ItemId]) -> Result<Vec<u64>> {
        let mut mask = vec![0u64; self.words];
        for &id in itemset {
            if id.index() >= self.universe.len() {
                return Err(Error::UnknownItem(format!("#{}", id.0)));
            }
            mask[id.index() / 64] |= 1 << (id.index() % 64);
        }
        Ok(mask)
    }

    /// Number of transactions containing every item of `mask`.
    pub(crate) fn count_mask(&self, mask: &[u64]) -> u64 {
        const BLOCK: usize = 2048;
        let words = self.words;
        let covers = |row: &[u64]| row.iter().zip(mask).all(|(&r, &m)| r & m == m);
        // Blocks of rows are counted in parallel; integer sums keep it exact.
        if self.n_transactions <= BLOCK {
            return self.bits.chunks_exact(words).filter(|r| covers(r)).count() as u64;
        }
        self.bits
            .par_chunks(words * BLOCK)
            .map(|block| block.chunks_exact(words).filter(|r| covers(r)).count() as u64)
            .sum()
    }

    /// Transactions containing all items of `itemset`; the empty itemset is
    /// contained in every transaction.
    pub fn support_count(&self, itemset: &[ItemId]) -> Result<u64> {
        let mask = self.mask(itemset)?;
        Ok(self.count_mask(&mask))
    }

    /// Item counts, descending, ties broken by item id.
    pub fn item_frequencies(&self) -> Vec<ItemFrequency> {
        let mut out: Vec<ItemFrequency> = (0..self.universe.len())
            .map(|i| {
                let id = ItemId(i as u32);
                let count = self.item_counts[i];
                ItemFrequency {
                    item: id,
                    label: self.universe.label(id),
                    count,
                    relative: if self.n_transactions == 0 {
                        0.0
                    } else {
                        count as f64 / self.n_transactions as f64
                    },
                }
            })
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then(a.item.cmp(&b.item)));
        out
    }

    /// One line per transaction, space-separated `variable=category` tokens.
    pub fn write_debug<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in 0..self.n_transactions {
            let tokens: Vec<String> = self
                .transaction_items(t)
                .into_iter()
                .map(|id| self.universe.label(id))
                .collect();
            writeln!(out, "{}", tokens.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemFrequency {
    pub item: ItemId,
    pub label: String,
    pub count: u64,
    pub relative: f64,
}
