//! Set-enumeration tree over item-sets.
//!
//! Each node extends its parent by one item larger than all of the parent's
//! items, so every item-set is reached exactly once and a child's occurrence
//! list is a subset of its parent's. Depth-first traversal visits patterns in
//! lexicographic order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pattern_db::{Item, Pattern, PatternDb};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub pattern: Pattern,
    /// Rows where the pattern occurs, ascending.
    pub occ: Vec<u32>,
    /// Smallest item a child may append.
    pub tail: Item,
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        self.pattern.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraverseStats {
    pub nodes_visited: u64,
    pub nodes_pruned: u64,
    pub max_depth_reached: usize,
}

impl TraverseStats {
    pub fn merge(&mut self, other: &TraverseStats) {
        self.nodes_visited += other.nodes_visited;
        self.nodes_pruned += other.nodes_pruned;
        self.max_depth_reached = self.max_depth_reached.max(other.max_depth_reached);
    }
}

/// Verdict of a visitor on one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    /// Collect this node in the traversal output.
    pub keep: bool,
    /// Generate and visit the node's children.
    pub descend: bool,
}

impl Visit {
    pub const ALL: Visit = Visit {
        keep: true,
        descend: true,
    };
}

pub trait Visitor {
    fn visit(&mut self, node: &TreeNode) -> Visit;
}

impl<F: FnMut(&TreeNode) -> Visit> Visitor for F {
    fn visit(&mut self, node: &TreeNode) -> Visit {
        self(node)
    }
}

/// One node per item with nonempty support, ordered by item id.
pub fn root_children(db: &PatternDb) -> Vec<TreeNode> {
    (0..db.num_items() as Item)
        .filter_map(|item| {
            let occ = db.item_rows(item);
            (!occ.is_empty()).then(|| TreeNode {
                pattern: Pattern::from_sorted_unchecked(vec![item]),
                occ: occ.to_vec(),
                tail: item + 1,
            })
        })
        .collect()
}

/// Child of `node` obtained by appending `item`; `None` when the child has
/// empty support.
pub fn extend(node: &TreeNode, item: Item, db: &PatternDb) -> Result<Option<TreeNode>> {
    if item < node.tail {
        return Err(Error::EnumerationOrder {
            item,
            tail: node.tail,
        });
    }
    let rows = db.item_rows(item);
    let occ: Vec<u32> = node
        .occ
        .iter()
        .copied()
        .filter(|r| rows.binary_search(r).is_ok())
        .collect();
    if occ.is_empty() {
        return Ok(None);
    }
    Ok(Some(TreeNode {
        pattern: node.pattern.with(item),
        occ,
        tail: item + 1,
    }))
}

/// All children with nonempty support, found by projecting the node's
/// occurrence rows onto items at or above its tail.
pub fn children(node: &TreeNode, db: &PatternDb) -> Vec<TreeNode> {
    let mut buckets: BTreeMap<Item, Vec<u32>> = BTreeMap::new();
    for &row in &node.occ {
        let t = db.transaction(row as usize);
        let start = t.partition_point(|&i| i < node.tail);
        for &item in &t[start..] {
            buckets.entry(item).or_default().push(row);
        }
    }
    buckets
        .into_iter()
        .map(|(item, occ)| TreeNode {
            pattern: node.pattern.with(item),
            occ,
            tail: item + 1,
        })
        .collect()
}

fn walk_subtree<V: Visitor + ?Sized>(
    node: &TreeNode,
    db: &PatternDb,
    maxpat: usize,
    visitor: &mut V,
    kept: &mut Vec<TreeNode>,
    stats: &mut TraverseStats,
) {
    let verdict = visitor.visit(node);
    stats.nodes_visited += 1;
    stats.max_depth_reached = stats.max_depth_reached.max(node.depth());
    if verdict.keep {
        kept.push(node.clone());
    }
    if !verdict.descend {
        stats.nodes_pruned += 1;
        return;
    }
    if node.depth() >= maxpat {
        return;
    }
    for child in children(node, db) {
        walk_subtree(&child, db, maxpat, visitor, kept, stats);
    }
}

/// Sequential depth-first traversal down to patterns of size `maxpat`.
/// Returns the nodes the visitor asked to keep, in visit order.
pub fn traverse<V: Visitor + ?Sized>(
    db: &PatternDb,
    maxpat: usize,
    visitor: &mut V,
) -> (Vec<TreeNode>, TraverseStats) {
    let mut kept = Vec::new();
    let mut stats = TraverseStats::default();
    if maxpat == 0 {
        return (kept, stats);
    }
    for root in root_children(db) {
        walk_subtree(&root, db, maxpat, visitor, &mut kept, &mut stats);
    }
    (kept, stats)
}

/// Result of [`TreeWalker::walk`].
#[derive(Debug)]
pub struct Walk<V> {
    pub kept: Vec<TreeNode>,
    pub stats: TraverseStats,
    /// One visitor when sequential, one per root child (in item order) otherwise.
    pub visitors: Vec<V>,
}

/// Traversal settings shared by every tree walk of a run.
#[derive(Clone)]
pub struct TreeWalker {
    maxpat: usize,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for TreeWalker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TreeWalker")
            .field("maxpat", &self.maxpat)
            .field("threads", &self.threads())
            .finish()
    }
}

impl TreeWalker {
    pub fn new(maxpat: usize) -> Self {
        TreeWalker { maxpat, pool: None }
    }

    /// Walker that splits root subtrees over `threads` workers (1 = sequential).
    pub fn with_threads(maxpat: usize, threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::new(maxpat));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(TreeWalker {
            maxpat,
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn maxpat(&self) -> usize {
        self.maxpat
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Walks the tree. Sequential mode shares one visitor across the whole
    /// tree; parallel mode gives each root subtree a fresh visitor and merges
    /// kept nodes in item order so the output does not depend on scheduling.
    pub fn walk<V, F>(&self, db: &PatternDb, make_visitor: F) -> Walk<V>
    where
        V: Visitor + Send,
        F: Fn() -> V + Sync,
    {
        match &self.pool {
            None => {
                let mut visitor = make_visitor();
                let (kept, stats) = traverse(db, self.maxpat, &mut visitor);
                Walk {
                    kept,
                    stats,
                    visitors: vec![visitor],
                }
            }
            Some(pool) => {
                let roots = if self.maxpat == 0 {
                    Vec::new()
                } else {
                    root_children(db)
                };
                let parts: Vec<(Vec<TreeNode>, TraverseStats, V)> = pool.install(|| {
                    roots
                        .par_iter()
                        .map(|root| {
                            let mut visitor = make_visitor();
                            let mut kept = Vec::new();
                            let mut stats = TraverseStats::default();
                            walk_subtree(root, db, self.maxpat, &mut visitor, &mut kept, &mut stats);
                            (kept, stats, visitor)
                        })
                        .collect()
                });
                let mut walk = Walk {
                    kept: Vec::new(),
                    stats: TraverseStats::default(),
                    visitors: Vec::with_capacity(parts.len()),
                };
                for (kept, stats, visitor) in parts {
                    walk.kept.extend(kept);
                    walk.stats.merge(&stats);
                    walk.visitors.push(visitor);
                }
                walk
            }
        }
    }
}
