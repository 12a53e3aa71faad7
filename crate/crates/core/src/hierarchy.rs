//! Ontology class hierarchy: parsing, validation and a subsumption index.
//!
//! The hierarchy is a DAG of named classes with `child -> parent` edges. It is
//! serialized as UTF-8 TSV, one `child<TAB>parent` edge per line; blank lines
//! and lines starting with `#` are ignored. Class names are normalized with
//! [`normalize_tag`] so that `Cross Walk` and `cross_walk` are the same class.
//!
//! # Closure index
//!
//! Subsumption queries are answered without materializing the transitive
//! closure, which would not fit in memory for millions of classes. Instead
//! every class carries a handful of integer labels computed in linear time:
//!
//! * `level`: longest path from a root. A strict ancestor always has a
//!   strictly smaller level.
//! * Two post-order interval labels (one DFS with children in ascending order,
//!   one in descending order). For each traversal `low(v)` is the minimum
//!   post-order rank among all descendants of `v`; if `sub` is a descendant of
//!   `sup` then `[low(sub), post(sub)]` is contained in `[low(sup), post(sup)]`.
//!   A failed containment test is therefore an exact negative answer.
//! * The size of each DFS spanning-tree subtree. Spanning-tree descendants
//!   occupy a contiguous post-order range, which is an exact positive answer.
//!
//! Queries that survive these filters fall back to an upward search from
//! `sub` that prunes every node the labels rule out.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tag_mapping::normalize_tag;

/// Dense handle of a class inside one [`ClassHierarchy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Compressed adjacency lists.
#[derive(Debug, Clone, Default)]
struct Adjacency {
    offsets: Vec<u32>,
    targets: Vec<ClassId>,
}

impl Adjacency {
    /// Builds adjacency from `(source, target)` pairs sorted by source then target.
    fn from_sorted(n: usize, pairs: impl Iterator<Item = (u32, u32)>) -> Self {
        let mut offsets = vec![0u32; n + 1];
        let mut targets = Vec::new();
        for (s, t) in pairs {
            offsets[s as usize + 1] += 1;
            targets.push(ClassId(t));
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Adjacency { offsets, targets }
    }

    #[inline]
    fn get(&self, v: usize) -> &[ClassId] {
        &self.targets[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct IntervalLabel {
    low: u32,
    post: u32,
}

impl IntervalLabel {
    #[inline]
    fn contains(self, inner: IntervalLabel) -> bool {
        self.low <= inner.low && inner.post <= self.post
    }
}

#[derive(Debug, Clone, Default)]
struct ClosureIndex {
    level: Vec<u32>,
    forward: Vec<IntervalLabel>,
    backward: Vec<IntervalLabel>,
    tree_size: Vec<u32>,
}

/// Parent/child taxonomy of named classes with a subsumption index.
///
/// Immutable once built; all queries take `&self`.
#[derive(Debug, Clone, Default)]
pub struct ClassHierarchy {
    names: IndexSet<Box<str>>,
    parents: Adjacency,
    children: Adjacency,
    closure: ClosureIndex,
}

/// Incremental construction of a [`ClassHierarchy`] from edges.
#[derive(Debug, Default)]
pub struct HierarchyBuilder {
    names: IndexSet<Box<str>>,
    edges: Vec<(u32, u32)>,
}

impl HierarchyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `name` (already normalized) and returns its id.
    pub fn add_class(&mut self, name: &str) -> ClassId {
        if let Some(i) = self.names.get_index_of(name) {
            return ClassId(i as u32);
        }
        let (i, _) = self.names.insert_full(name.into());
        ClassId(i as u32)
    }

    /// Records a `child -> parent` edge. Duplicate edges are collapsed at build time.
    pub fn add_edge(&mut self, child: &str, parent: &str) -> Result<()> {
        if child == parent {
            return Err(Error::Cycle(vec![child.to_string(), child.to_string()]));
        }
        let c = self.add_class(child);
        let p = self.add_class(parent);
        self.edges.push((c.0, p.0));
        Ok(())
    }

    pub fn add_edge_ids(&mut self, child: ClassId, parent: ClassId) {
        debug_assert!(child.index() < self.names.len() && parent.index() < self.names.len());
        self.edges.push((child.0, parent.0));
    }

    pub fn build(self) -> Result<ClassHierarchy> {
        let HierarchyBuilder { names, mut edges } = self;
        let n = names.len();
        edges.sort_unstable();
        edges.dedup();
        if let Some(&(c, _)) = edges.iter().find(|(c, p)| c == p) {
            let name = names[c as usize].to_string();
            return Err(Error::Cycle(vec![name.clone(), name]));
        }
        let parents = Adjacency::from_sorted(n, edges.iter().copied());
        let mut reversed: Vec<(u32, u32)> = edges.iter().map(|&(c, p)| (p, c)).collect();
        drop(edges);
        reversed.sort_unstable();
        let children = Adjacency::from_sorted(n, reversed.into_iter());

        let order = topological_order(n, &parents, &children)
            .map_err(|cycle| Error::Cycle(cycle_names(&names, &parents, cycle)))?;
        let closure = ClosureIndex::build(n, &parents, &children, &order);
        Ok(ClassHierarchy {
            names,
            parents,
            children,
            closure,
        })
    }
}

/// Kahn's algorithm, roots first. On failure returns the set of nodes that
/// could not be ordered (all of which lie on or above a cycle).
fn topological_order(n: usize, parents: &Adjacency, children: &Adjacency) -> std::result::Result<Vec<u32>, Vec<bool>> {
    let mut pending: Vec<u32> = (0..n).map(|v| parents.get(v).len() as u32).collect();
    let mut order: Vec<u32> = (0..n as u32).filter(|&v| pending[v as usize] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let v = order[head] as usize;
        head += 1;
        for &c in children.get(v) {
            let slot = &mut pending[c.index()];
            *slot -= 1;
            if *slot == 0 {
                order.push(c.0);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let mut stuck = vec![true; n];
        for &v in &order {
            stuck[v as usize] = false;
        }
        Err(stuck)
    }
}

/// Extracts one concrete cycle among the unordered nodes. Every such node has
/// at least one unordered parent, so walking upward must revisit a node.
fn cycle_names(names: &IndexSet<Box<str>>, parents: &Adjacency, stuck: Vec<bool>) -> Vec<String> {
    let start = stuck.iter().position(|&s| s).expect("at least one stuck node");
    let mut seen_at = std::collections::HashMap::new();
    let mut path = Vec::new();
    let mut v = start;
    loop {
        if let Some(&i) = seen_at.get(&v) {
            let mut cycle: Vec<usize> = path[i..].to_vec();
            // Rotate so the lexicographically smallest name comes first.
            let min = (0..cycle.len()).min_by_key(|&k| &names[cycle[k]]).unwrap_or(0);
            cycle.rotate_left(min);
            let mut out: Vec<String> = cycle.iter().map(|&c| names[c].to_string()).collect();
            out.push(out[0].clone());
            return out;
        }
        seen_at.insert(v, path.len());
        path.push(v);
        v = parents
            .get(v)
            .iter()
            .map(|p| p.index())
            .find(|&p| stuck[p])
            .expect("stuck node has a stuck parent");
    }
}

impl ClosureIndex {
    fn build(n: usize, parents: &Adjacency, children: &Adjacency, order: &[u32]) -> Self {
        let mut level = vec![0u32; n];
        for &v in order {
            let v = v as usize;
            level[v] = parents.get(v).iter().map(|p| level[p.index()] + 1).max().unwrap_or(0);
        }
        let roots: Vec<u32> = order
            .iter()
            .copied()
            .take_while(|&v| parents.get(v as usize).is_empty())
            .collect();
        let (forward, tree_size) = post_order_labels(n, children, order, &roots, false);
        let (backward, _) = post_order_labels(n, children, order, &roots, true);
        ClosureIndex {
            level,
            forward,
            backward,
            tree_size,
        }
    }
}

/// Iterative DFS from every root; returns interval labels and spanning-tree
/// subtree sizes. `reverse` visits roots and children in descending id order.
fn post_order_labels(
    n: usize,
    children: &Adjacency,
    order: &[u32],
    roots: &[u32],
    reverse: bool,
) -> (Vec<IntervalLabel>, Vec<u32>) {
    let mut labels = vec![IntervalLabel::default(); n];
    let mut tree_size = vec![1u32; n];
    let mut visited = vec![false; n];
    let mut next_rank = 0u32;
    // (node, index of next child to try)
    let mut stack: Vec<(u32, u32)> = Vec::new();
    let mut visit_root = |root: u32, stack: &mut Vec<(u32, u32)>| {
        if visited[root as usize] {
            return;
        }
        visited[root as usize] = true;
        stack.push((root, 0));
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let kids = children.get(v as usize);
            if (*next as usize) < kids.len() {
                let k = if reverse {
                    kids[kids.len() - 1 - *next as usize]
                } else {
                    kids[*next as usize]
                };
                *next += 1;
                if !visited[k.index()] {
                    visited[k.index()] = true;
                    stack.push((k.0, 0));
                }
            } else {
                stack.pop();
                labels[v as usize].post = next_rank;
                next_rank += 1;
                if let Some(&(parent, _)) = stack.last() {
                    tree_size[parent as usize] += tree_size[v as usize];
                }
            }
        }
    };
    if reverse {
        for &r in roots.iter().rev() {
            visit_root(r, &mut stack);
        }
    } else {
        for &r in roots {
            visit_root(r, &mut stack);
        }
    }
    // low(v) = min post over all descendants, children before parents.
    for &v in order.iter().rev() {
        let v = v as usize;
        let low = children
            .get(v)
            .iter()
            .map(|c| labels[c.index()].low)
            .fold(labels[v].post, u32::min);
        labels[v].low = low;
    }
    (labels, tree_size)
}

/// Parses the hierarchy TSV format.
pub fn parse_hierarchy<R: BufRead>(reader: R) -> Result<ClassHierarchy> {
    let mut builder = HierarchyBuilder::new();
    let mut child_buf = String::new();
    let mut parent_buf = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (child, parent) = match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(p), None) => (c, p),
            _ => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: "expected exactly two tab-separated fields".into(),
                })
            }
        };
        normalize_into(child, &mut child_buf);
        normalize_into(parent, &mut parent_buf);
        if child_buf.is_empty() || parent_buf.is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "empty class name".into(),
            });
        }
        builder.add_edge(&child_buf, &parent_buf)?;
    }
    builder.build()
}

fn normalize_into(raw: &str, buf: &mut String) {
    buf.clear();
    // Fast path: most hierarchy names are already normalized.
    if raw
        .bytes()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-' || b == b'.')
    {
        buf.push_str(raw);
    } else {
        buf.push_str(&normalize_tag(raw));
    }
}

impl ClassHierarchy {
    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Looks up a class by name; the name is normalized first.
    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.names
            .get_index_of(name)
            .or_else(|| self.names.get_index_of(normalize_tag(name).as_str()))
            .map(|i| ClassId(i as u32))
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.index()]
    }

    pub fn try_name(&self, id: ClassId) -> Result<&str> {
        self.names
            .get_index(id.index())
            .map(|s| &**s)
            .ok_or(Error::UnknownClassId(id.0))
    }

    pub fn classes(&self) -> impl ExactSizeIterator<Item = ClassId> + '_ {
        (0..self.names.len() as u32).map(ClassId)
    }

    pub fn names(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.names.iter().map(|s| &**s)
    }

    pub fn parents(&self, id: ClassId) -> &[ClassId] {
        self.parents.get(id.index())
    }

    pub fn children(&self, id: ClassId) -> &[ClassId] {
        self.children.get(id.index())
    }

    pub fn roots(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes().filter(|&c| self.parents(c).is_empty())
    }

    /// Longest path length from a root.
    pub fn level(&self, id: ClassId) -> u32 {
        self.closure.level[id.index()]
    }

    /// Iterates `(child, parent)` edges grouped by child.
    pub fn edges(&self) -> impl Iterator<Item = (ClassId, ClassId)> + '_ {
        self.classes()
            .flat_map(move |c| self.parents(c).iter().map(move |&p| (c, p)))
    }

    fn check(&self, id: ClassId) -> Result<()> {
        if id.index() < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownClassId(id.0))
        }
    }

    /// Reflexive-transitive subsumption: is `sub` equal to or below `sup`?
    pub fn is_subclass_of(&self, sub: ClassId, sup: ClassId) -> Result<bool> {
        self.check(sub)?;
        self.check(sup)?;
        Ok(self.subsumes_unchecked(sup, sub))
    }

    /// Exact negative filter: `false` means `node` is certainly not below `sup`.
    #[inline]
    fn may_reach(&self, sup: usize, node: usize) -> bool {
        let ix = &self.closure;
        ix.level[sup] < ix.level[node]
            && ix.forward[sup].contains(ix.forward[node])
            && ix.backward[sup].contains(ix.backward[node])
    }

    /// Exact positive filter through the forward spanning tree.
    #[inline]
    fn tree_contains(&self, sup: usize, node: usize) -> bool {
        let post = self.closure.forward[sup].post;
        let p = self.closure.forward[node].post;
        p <= post && post - p < self.closure.tree_size[sup]
    }

    pub(crate) fn subsumes_unchecked(&self, sup: ClassId, sub: ClassId) -> bool {
        let (sup, sub) = (sup.index(), sub.index());
        if sup == sub {
            return true;
        }
        if !self.may_reach(sup, sub) {
            return false;
        }
        if self.tree_contains(sup, sub) {
            return true;
        }
        let mut stack = vec![sub];
        let mut seen: HashSet<usize> = HashSet::new();
        while let Some(v) = stack.pop() {
            for p in self.parents.get(v) {
                let p = p.index();
                if p == sup {
                    return true;
                }
                if !self.may_reach(sup, p) || !seen.insert(p) {
                    continue;
                }
                if self.tree_contains(sup, p) {
                    return true;
                }
                stack.push(p);
            }
        }
        false
    }

    /// Reflexive-transitive superclasses of `id`, sorted by id.
    pub fn ancestors(&self, id: ClassId) -> Result<Vec<ClassId>> {
        self.check(id)?;
        let mut out = Vec::new();
        self.collect_ancestors(id, &mut out);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Appends the reflexive-transitive ancestors of `id` to `out` (unsorted,
    /// without duplicates among the appended entries).
    pub(crate) fn collect_ancestors(&self, id: ClassId, out: &mut Vec<ClassId>) {
        let start = out.len();
        out.push(id);
        let mut head = start;
        while head < out.len() {
            let v = out[head];
            head += 1;
            for &p in self.parents(v) {
                if !out[start..].contains(&p) {
                    out.push(p);
                }
            }
        }
    }
}
