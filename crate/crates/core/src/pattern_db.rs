//! Transaction database and the implicit binary design matrix.
//!
//! A pattern `t` occurs in row `i` iff every item of `t` is contained in the
//! row's transaction, so the design matrix entry is `x_it = 1{t ⊆ G_i}`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

pub type Item = u32;

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// `label idx:val idx:val ...` with 1-based indices; nonzero values become items.
    Libsvm,
    /// `label<TAB>i1 i2 i3 ...` with 0-based item ids.
    Tlist,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "libsvm" => Ok(Format::Libsvm),
            "tlist" | "transaction_list" => Ok(Format::Tlist),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// An item-set: non-empty, strictly increasing item ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern(Vec<Item>);

impl Pattern {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidPattern("empty item list".into()));
        }
        if items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPattern(format!(
                "items must be strictly increasing: {items:?}"
            )));
        }
        Ok(Pattern(items))
    }

    /// Builds a pattern from arbitrary items, sorting and deduplicating them.
    pub fn from_unsorted(mut items: Vec<Item>) -> Result<Self> {
        items.sort_unstable();
        items.dedup();
        Pattern::new(items)
    }

    pub(crate) fn from_sorted_unchecked(items: Vec<Item>) -> Self {
        debug_assert!(!items.is_empty() && items.windows(2).all(|w| w[0] < w[1]));
        Pattern(items)
    }

    pub fn items(&self) -> &[Item] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Item {
        *self.0.last().expect("patterns are non-empty")
    }

    /// Pattern extended by one item larger than all of its own.
    pub fn with(&self, item: Item) -> Pattern {
        debug_assert!(item > self.last());
        let mut items = Vec::with_capacity(self.0.len() + 1);
        items.extend_from_slice(&self.0);
        items.push(item);
        Pattern(items)
    }

    /// Subset test against a sorted, deduplicated transaction.
    pub fn is_subset_of(&self, transaction: &[Item]) -> bool {
        let mut rest = transaction;
        for &item in &self.0 {
            match rest.binary_search(&item) {
                Ok(pos) => rest = &rest[pos + 1..],
                Err(_) => return false,
            }
        }
        true
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, item) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{item}")?;
        }
        write!(f, "}}")
    }
}

/// Maps internal item ids back to the ids used in the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRemap {
    pub format: Format,
    /// `raw_ids[internal] = id as written in the input file`.
    pub raw_ids: Vec<u64>,
}

impl ItemRemap {
    pub fn identity(num_items: usize) -> Self {
        ItemRemap {
            format: Format::Tlist,
            raw_ids: (0..num_items as u64).collect(),
        }
    }

    pub fn raw(&self, item: Item) -> u64 {
        self.raw_ids[item as usize]
    }
}

/// Transactions with responses plus a vertical index (item -> rows).
#[derive(Debug, Clone)]
pub struct PatternDb {
    transactions: Vec<Vec<Item>>,
    responses: Vec<f64>,
    num_items: usize,
    item_rows: Vec<Vec<u32>>,
    remap: ItemRemap,
}

impl PatternDb {
    /// Builds a database from raw transactions. Items within a row are sorted
    /// and deduplicated; classification responses must be ±1.
    pub fn new(transactions: Vec<Vec<Item>>, responses: Vec<f64>, task: Task) -> Result<Self> {
        let num_items = transactions
            .iter()
            .flat_map(|t| t.iter())
            .map(|&i| i as usize + 1)
            .max()
            .unwrap_or(0);
        Self::with_remap(transactions, responses, task, ItemRemap::identity(num_items))
    }

    fn with_remap(
        mut transactions: Vec<Vec<Item>>,
        responses: Vec<f64>,
        task: Task,
        remap: ItemRemap,
    ) -> Result<Self> {
        if transactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if transactions.len() != responses.len() {
            return Err(Error::Config(format!(
                "{} transactions but {} responses",
                transactions.len(),
                responses.len()
            )));
        }
        for (row, &y) in responses.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Parse {
                    line: row + 1,
                    msg: format!("non-finite response {y}"),
                });
            }
            if task == Task::Classification && y != 1.0 && y != -1.0 {
                return Err(Error::InvalidLabel { line: row + 1 });
            }
        }
        for t in &mut transactions {
            t.sort_unstable();
            t.dedup();
        }
        let num_items = remap.raw_ids.len().max(
            transactions
                .iter()
                .filter_map(|t| t.last())
                .map(|&i| i as usize + 1)
                .max()
                .unwrap_or(0),
        );
        let mut item_rows = vec![Vec::new(); num_items];
        for (row, t) in transactions.iter().enumerate() {
            for &item in t {
                item_rows[item as usize].push(row as u32);
            }
        }
        Ok(PatternDb {
            transactions,
            responses,
            num_items,
            item_rows,
            remap,
        })
    }

    pub fn n(&self) -> usize {
        self.transactions.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn transactions(&self) -> &[Vec<Item>] {
        &self.transactions
    }

    pub fn transaction(&self, row: usize) -> &[Item] {
        &self.transactions[row]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Rows containing `item`, ascending.
    pub fn item_rows(&self, item: Item) -> &[u32] {
        self.item_rows
            .get(item as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn remap(&self) -> &ItemRemap {
        &self.remap
    }

    /// `x_ip`: whether `pattern` is contained in row `row`.
    pub fn occurs(&self, pattern: &Pattern, row: usize) -> bool {
        pattern.is_subset_of(&self.transactions[row])
    }

    /// All rows where `pattern` occurs, ascending.
    pub fn occurrences(&self, pattern: &Pattern) -> Vec<u32> {
        let items = pattern.items();
        let mut occ: Vec<u32> = self.item_rows(items[0]).to_vec();
        for &item in &items[1..] {
            let rows = self.item_rows(item);
            occ.retain(|r| rows.binary_search(r).is_ok());
        }
        occ
    }

    /// Writes the canonical transaction-list form of the database.
    pub fn write_tlist<W: Write>(&self, mut out: W) -> Result<()> {
        for (t, y) in self.transactions.iter().zip(&self.responses) {
            write!(out, "{y}\t")?;
            for (k, item) in t.iter().enumerate() {
                if k > 0 {
                    write!(out, " ")?;
                }
                write!(out, "{item}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_tlist_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tlist(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

pub fn load_transactions(path: &Path, format: Format, task: Task) -> Result<PatternDb> {
    let text = fs::read_to_string(path)?;
    parse_transactions(&text, format, task)
}

pub fn parse_transactions(text: &str, format: Format, task: Task) -> Result<PatternDb> {
    let mut transactions = Vec::new();
    let mut responses = Vec::new();
    for (k, raw_line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (y, items) = match format {
            Format::Libsvm => parse_libsvm_line(line, line_no)?,
            Format::Tlist => parse_tlist_line(line, line_no)?,
        };
        if task == Task::Classification && y != 1.0 && y != -1.0 {
            return Err(Error::InvalidLabel { line: line_no });
        }
        transactions.push(items);
        responses.push(y);
    }
    if transactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_items = transactions
        .iter()
        .flat_map(|t: &Vec<Item>| t.iter())
        .map(|&i| i as usize + 1)
        .max()
        .unwrap_or(0);
    let offset = match format {
        Format::Libsvm => 1,
        Format::Tlist => 0,
    };
    let remap = ItemRemap {
        format,
        raw_ids: (0..num_items as u64).map(|i| i + offset).collect(),
    };
    PatternDb::with_remap(transactions, responses, task, remap)
}

fn parse_label(token: &str, line: usize) -> Result<f64> {
    let y: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad label `{token}`"),
    })?;
    if !y.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite label `{token}`"),
        });
    }
    Ok(y)
}

fn parse_libsvm_line(line: &str, line_no: usize) -> Result<(f64, Vec<Item>)> {
    let mut tokens = line.split_whitespace();
    let y = parse_label(tokens.next().unwrap_or(""), line_no)?;
    let mut items = Vec::new();
    for tok in tokens {
        let bad = || Error::Parse {
            line: line_no,
            msg: format!("bad feature `{tok}`"),
        };
        let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
        let idx: u64 = idx.parse().map_err(|_| bad())?;
        let val: f64 = val.parse().map_err(|_| bad())?;
        if idx == 0 || idx > u32::MAX as u64 {
            return Err(bad());
        }
        if val != 0.0 {
            items.push((idx - 1) as Item);
        }
    }
    Ok((y, items))
}

fn parse_tlist_line(line: &str, line_no: usize) -> Result<(f64, Vec<Item>)> {
    let (label, rest) = match line.split_once('\t') {
        Some((l, r)) => (l, r),
        None => (line, ""),
    };
    let y = parse_label(label.trim(), line_no)?;
    let items = rest
        .split_whitespace()
        .map(|tok| {
            tok.parse::<Item>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad item `{tok}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((y, items))
}
