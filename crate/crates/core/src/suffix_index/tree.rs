//! Generalized suffix tree built online with Ukkonen's algorithm.
//!
//! Sequences are appended to one shared text, each terminated by a sentinel
//! symbol unique to that sequence. Once a sequence's sentinel has been
//! processed every suffix of it ends in its own leaf, so leaf counts below a
//! node equal the number of occurrences of the node's path label across the
//! corpus. The suffix consisting of the sentinel alone is never materialized,
//! which keeps the node count at or below twice the number of stored tokens.

use std::cmp::Ordering;

use crate::corpus::TokenId;

type NodeId = u32;
type Symbol = u64;

const ROOT: NodeId = 0;
const NONE: NodeId = NodeId::MAX;
const OPEN: usize = usize::MAX;
const SENTINEL_BASE: Symbol = 1 << 32;

/// Relative tolerance under which two weighted counts are considered tied.
const WEIGHT_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    link: NodeId,
    parent: NodeId,
    // sorted by symbol
    children: Vec<(Symbol, NodeId)>,
    visit_count: u64,
    weighted_count: f64,
    latest_epoch: u64,
}

impl Node {
    fn new(start: usize, end: usize, parent: NodeId) -> Self {
        Self {
            start,
            end,
            link: NONE,
            parent,
            children: Vec::new(),
            visit_count: 0,
            weighted_count: 0.0,
            latest_epoch: 0,
        }
    }
}

/// Index into the sequence registry of a [`SuffixTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceId(pub u32);

#[derive(Debug, Clone, Copy)]
struct SequenceEntry {
    start: usize,
    len: usize,
    epoch: u64,
}

/// A position in the tree: `offset` symbols along the edge entering `node`.
/// When `offset` equals the edge length the position is the node itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPoint {
    node: NodeId,
    offset: usize,
}

/// Longest query suffix found in the corpus and what may follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub match_len: usize,
    pub point: MatchPoint,
    /// Token continuations at the match point with their recency-weighted
    /// counts, ordered by token id. Sequence ends are not listed.
    pub candidates: Vec<(TokenId, f64)>,
}

#[derive(Debug, Clone)]
pub struct SuffixTree {
    text: Vec<Symbol>,
    nodes: Vec<Node>,
    sequences: Vec<SequenceEntry>,
    gamma: f64,
    current_epoch: u64,
    active_node: NodeId,
    active_edge: usize,
    active_len: usize,
    remainder: usize,
    open_leaves: Vec<NodeId>,
}

impl Default for SuffixTree {
    fn default() -> Self {
        Self::new()
    }
}

impl SuffixTree {
    /// Empty tree without recency weighting.
    pub fn new() -> Self {
        Self::with_recency(1.0, 0)
    }

    /// Empty tree where a sequence from epoch `e` contributes
    /// `gamma^(current_epoch - e)` to weighted counts.
    pub fn with_recency(gamma: f64, current_epoch: u64) -> Self {
        assert!(gamma > 0.0 && gamma <= 1.0, "recency gamma must lie in (0, 1]");
        Self {
            text: Vec::new(),
            nodes: vec![Node::new(0, 0, NONE)],
            sequences: Vec::new(),
            gamma,
            current_epoch,
            active_node: ROOT,
            active_edge: 0,
            active_len: 0,
            remainder: 0,
            open_leaves: Vec::new(),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn current_epoch(&self) -> u64 {
        self.current_epoch
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn sequence_count(&self) -> usize {
        self.sequences.len()
    }

    /// Tokens stored across all registered sequences (sentinels excluded).
    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequence_ids(&self) -> impl Iterator<Item = SequenceId> {
        (0..self.sequences.len() as u32).map(SequenceId)
    }

    pub fn sequence_tokens(&self, id: SequenceId) -> Vec<TokenId> {
        let e = self.sequences[id.0 as usize];
        self.text[e.start..e.start + e.len]
            .iter()
            .map(|&s| s as TokenId)
            .collect()
    }

    pub fn sequence_epoch(&self, id: SequenceId) -> u64 {
        self.sequences[id.0 as usize].epoch
    }

    fn weight_for(&self, epoch: u64) -> f64 {
        let age = self.current_epoch.saturating_sub(epoch);
        self.gamma.powi(age.min(i32::MAX as u64) as i32)
    }

    /// Moves the recency reference epoch, rescaling every weighted count.
    pub fn set_current_epoch(&mut self, epoch: u64) {
        if epoch == self.current_epoch || self.gamma == 1.0 {
            self.current_epoch = epoch;
            return;
        }
        let delta = epoch as f64 - self.current_epoch as f64;
        let factor = self.gamma.powf(delta);
        for n in &mut self.nodes {
            n.weighted_count *= factor;
        }
        self.current_epoch = epoch;
    }

    /// Appends a sequence online. Epochs newer than the tree's reference
    /// epoch advance it first.
    pub fn add_sequence(&mut self, tokens: &[TokenId], epoch: u64) -> SequenceId {
        if epoch > self.current_epoch {
            self.set_current_epoch(epoch);
        }
        let id = SequenceId(self.sequences.len() as u32);
        let start = self.text.len();
        self.sequences.push(SequenceEntry {
            start,
            len: tokens.len(),
            epoch,
        });
        let weight = self.weight_for(epoch);
        self.text.reserve(tokens.len() + 1);
        for &t in tokens {
            self.extend(Symbol::from(t), weight, epoch);
        }
        self.extend(SENTINEL_BASE + Symbol::from(id.0), weight, epoch);
        let end = self.text.len();
        for leaf in self.open_leaves.drain(..) {
            self.nodes[leaf as usize].end = end;
        }
        debug_assert_eq!(self.remainder, 0);
        debug_assert_eq!(self.active_node, ROOT);
        id
    }

    /// Fresh tree holding exactly `keep`, at the same recency settings.
    pub fn rebuild(&self, keep: &[SequenceId]) -> SuffixTree {
        let mut tree = SuffixTree::with_recency(self.gamma, self.current_epoch);
        for &id in keep {
            let tokens = self.sequence_tokens(id);
            tree.add_sequence(&tokens, self.sequence_epoch(id));
        }
        tree
    }

    fn edge_end(&self, node: NodeId) -> usize {
        let end = self.nodes[node as usize].end;
        if end == OPEN {
            self.text.len()
        } else {
            end
        }
    }

    fn edge_len(&self, node: NodeId) -> usize {
        self.edge_end(node) - self.nodes[node as usize].start
    }

    fn child(&self, node: NodeId, sym: Symbol) -> Option<NodeId> {
        let children = &self.nodes[node as usize].children;
        children
            .binary_search_by_key(&sym, |&(s, _)| s)
            .ok()
            .map(|i| children[i].1)
    }

    fn set_child(&mut self, node: NodeId, sym: Symbol, child: NodeId) {
        let children = &mut self.nodes[node as usize].children;
        match children.binary_search_by_key(&sym, |&(s, _)| s) {
            Ok(i) => children[i].1 = child,
            Err(i) => children.insert(i, (sym, child)),
        }
    }

    fn push_node(&mut self, node: Node) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(node);
        id
    }

    fn new_leaf(&mut self, pos: usize, parent: NodeId, weight: f64, epoch: u64) -> NodeId {
        let mut leaf = Node::new(pos, OPEN, parent);
        leaf.visit_count = 1;
        leaf.weighted_count = weight;
        leaf.latest_epoch = epoch;
        let id = self.push_node(leaf);
        self.open_leaves.push(id);
        let mut p = parent;
        while p != NONE {
            let n = &mut self.nodes[p as usize];
            n.visit_count += 1;
            n.weighted_count += weight;
            n.latest_epoch = n.latest_epoch.max(epoch);
            p = n.parent;
        }
        id
    }

    fn extend(&mut self, sym: Symbol, weight: f64, epoch: u64) {
        self.text.push(sym);
        let pos = self.text.len() - 1;
        let is_sentinel = sym >= SENTINEL_BASE;
        let mut need_link = NONE;
        self.remainder += 1;

        while self.remainder > 0 {
            if self.active_len == 0 {
                self.active_edge = pos;
            }
            let edge_sym = self.text[self.active_edge];
            match self.child(self.active_node, edge_sym) {
                None => {
                    // A bare sentinel at the root would be the empty suffix.
                    if !(is_sentinel && self.active_node == ROOT) {
                        let leaf = self.new_leaf(pos, self.active_node, weight, epoch);
                        self.set_child(self.active_node, edge_sym, leaf);
                    }
                    Self::link(&mut self.nodes, &mut need_link, self.active_node);
                }
                Some(next) => {
                    let len = self.edge_len(next);
                    if self.active_len >= len {
                        self.active_edge += len;
                        self.active_len -= len;
                        self.active_node = next;
                        continue;
                    }
                    let next_start = self.nodes[next as usize].start;
                    if self.text[next_start + self.active_len] == sym {
                        self.active_len += 1;
                        Self::link(&mut self.nodes, &mut need_link, self.active_node);
                        break;
                    }
                    let mut split = Node::new(next_start, next_start + self.active_len, self.active_node);
                    {
                        let n = &self.nodes[next as usize];
                        split.visit_count = n.visit_count;
                        split.weighted_count = n.weighted_count;
                        split.latest_epoch = n.latest_epoch;
                    }
                    let split = self.push_node(split);
                    self.set_child(self.active_node, edge_sym, split);
                    let moved_start = next_start + self.active_len;
                    {
                        let n = &mut self.nodes[next as usize];
                        n.start = moved_start;
                        n.parent = split;
                    }
                    let moved_sym = self.text[moved_start];
                    self.set_child(split, moved_sym, next);
                    let leaf = self.new_leaf(pos, split, weight, epoch);
                    self.set_child(split, sym, leaf);
                    Self::link(&mut self.nodes, &mut need_link, split);
                }
            }
            self.remainder -= 1;
            if self.active_node == ROOT && self.active_len > 0 {
                self.active_len -= 1;
                self.active_edge = pos + 1 - self.remainder;
            } else if self.active_node != ROOT {
                let link = self.nodes[self.active_node as usize].link;
                self.active_node = if link == NONE { ROOT } else { link };
            }
        }
    }

    fn link(nodes: &mut [Node], need_link: &mut NodeId, node: NodeId) {
        if *need_link != NONE {
            nodes[*need_link as usize].link = node;
        }
        *need_link = if node == ROOT { NONE } else { node };
    }

    fn at_node(&self, p: MatchPoint) -> bool {
        p.offset == self.edge_len(p.node)
    }

    /// Next symbol on the current edge, or `None` when positioned at a node.
    fn edge_symbol(&self, p: MatchPoint) -> Option<Symbol> {
        if self.at_node(p) {
            None
        } else {
            Some(self.text[self.nodes[p.node as usize].start + p.offset])
        }
    }

    fn step(&self, p: MatchPoint, sym: Symbol) -> Option<MatchPoint> {
        match self.edge_symbol(p) {
            Some(s) if s == sym => Some(MatchPoint {
                node: p.node,
                offset: p.offset + 1,
            }),
            Some(_) => None,
            None => self.child(p.node, sym).map(|c| MatchPoint { node: c, offset: 1 }),
        }
    }

    /// Walks `pattern` from the root. The first `known` symbols are assumed to
    /// be present and are descended edge-by-edge without comparison.
    fn walk(&self, pattern: &[TokenId], known: usize) -> (MatchPoint, usize) {
        let mut p = MatchPoint { node: ROOT, offset: 0 };
        let mut i = 0;
        while i < known {
            let c = self
                .child(p.node, Symbol::from(pattern[i]))
                .expect("skip/count descent follows an existing path");
            let len = self.edge_len(c);
            let take = len.min(known - i);
            p = MatchPoint { node: c, offset: take };
            i += take;
        }
        while i < pattern.len() {
            match self.step(p, Symbol::from(pattern[i])) {
                Some(next) => {
                    p = next;
                    i += 1;
                }
                None => break,
            }
        }
        (p, i)
    }

    fn candidates_at(&self, p: MatchPoint) -> Vec<(TokenId, f64)> {
        match self.edge_symbol(p) {
            Some(s) if s < SENTINEL_BASE => {
                vec![(s as TokenId, self.nodes[p.node as usize].weighted_count)]
            }
            Some(_) => Vec::new(),
            None => self.nodes[p.node as usize]
                .children
                .iter()
                .filter(|(s, _)| *s < SENTINEL_BASE)
                .map(|&(s, c)| (s as TokenId, self.nodes[c as usize].weighted_count))
                .collect(),
        }
    }

    /// Longest suffix of `query` occurring anywhere in the corpus.
    ///
    /// Suffixes are tried longest first; a failed walk that matched `k`
    /// symbols guarantees the next suffix matches at least `k - 1`, which are
    /// then skipped by edge lengths.
    pub fn longest_match(&self, query: &[TokenId]) -> MatchResult {
        let mut known = 0;
        for start in 0..query.len() {
            let suffix = &query[start..];
            let (point, matched) = self.walk(suffix, known);
            if matched == suffix.len() {
                return MatchResult {
                    match_len: matched,
                    point,
                    candidates: self.candidates_at(point),
                };
            }
            known = matched.saturating_sub(1);
        }
        let root = MatchPoint { node: ROOT, offset: 0 };
        MatchResult {
            match_len: 0,
            point: root,
            candidates: self.candidates_at(root),
        }
    }

    /// Greedy draft following the heaviest continuation from the longest
    /// match. Ties go to the most recent epoch, then the smaller token id.
    /// Returns nothing when no suffix of `query` matches.
    pub fn propose(&self, query: &[TokenId], max_tokens: usize) -> Vec<TokenId> {
        if max_tokens == 0 {
            return Vec::new();
        }
        let m = self.longest_match(query);
        if m.match_len == 0 {
            return Vec::new();
        }
        self.continue_from(m.point, max_tokens)
    }

    /// Greedy continuation from an arbitrary match point.
    pub fn continue_from(&self, mut p: MatchPoint, max_tokens: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(max_tokens);
        while out.len() < max_tokens {
            let sym = match self.edge_symbol(p) {
                Some(s) => s,
                None => match self.best_child(p.node) {
                    Some(s) => s,
                    None => break,
                },
            };
            if sym >= SENTINEL_BASE {
                break;
            }
            out.push(sym as TokenId);
            p = self.step(p, sym).expect("chosen symbol is a valid step");
        }
        out
    }

    fn best_child(&self, node: NodeId) -> Option<Symbol> {
        let children = &self.nodes[node as usize].children;
        let mut best: Option<(Symbol, &Node)> = None;
        for &(sym, c) in children {
            let cand = &self.nodes[c as usize];
            best = match best {
                None => Some((sym, cand)),
                Some((bs, bn)) => {
                    if Self::heavier(cand, bn) == Ordering::Greater {
                        Some((sym, cand))
                    } else {
                        Some((bs, bn))
                    }
                }
            };
        }
        best.map(|(s, _)| s)
    }

    /// Orders by weighted count, then recency. Equal on both keeps the
    /// earlier (smaller) symbol since children are scanned in order.
    fn heavier(a: &Node, b: &Node) -> Ordering {
        let scale = a.weighted_count.abs().max(b.weighted_count.abs()).max(f64::MIN_POSITIVE);
        let diff = a.weighted_count - b.weighted_count;
        if diff.abs() > WEIGHT_TIE_EPS * scale {
            return if diff > 0.0 { Ordering::Greater } else { Ordering::Less };
        }
        a.latest_epoch.cmp(&b.latest_epoch)
    }

    /// Occurrence count of the path label ending at `p` (number of suffixes
    /// passing through it).
    pub fn visit_count_at(&self, p: MatchPoint) -> u64 {
        self.nodes[p.node as usize].visit_count
    }

    /// Visit count of the root child whose edge starts with `token`.
    pub fn root_child_visits(&self, token: TokenId) -> u64 {
        self.child(ROOT, Symbol::from(token))
            .map(|c| self.nodes[c as usize].visit_count)
            .unwrap_or(0)
    }

    /// Checks structural invariants; used by tests.
    #[doc(hidden)]
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut leaf_counts = vec![0u64; self.nodes.len()];
        // children are appended after parents, so a reverse scan sums subtrees
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            if n.children.is_empty() && id != ROOT as usize {
                leaf_counts[id] = 1;
            }
            for w in n.children.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(format!("node {id}: children not sorted"));
                }
            }
        }
        fn subtree(t: &SuffixTree, id: NodeId, acc: &mut [u64]) -> u64 {
            let n = &t.nodes[id as usize];
            if n.children.is_empty() {
                return acc[id as usize];
            }
            let total: u64 = n.children.iter().map(|&(_, c)| subtree(t, c, acc)).sum();
            acc[id as usize] = total;
            total
        }
        subtree(self, ROOT, &mut leaf_counts);
        for (id, n) in self.nodes.iter().enumerate() {
            if n.visit_count != leaf_counts[id] {
                return Err(format!(
                    "node {id}: visit_count {} but {} leaves below",
                    n.visit_count, leaf_counts[id]
                ));
            }
            for &(sym, c) in &n.children {
                let child = &self.nodes[c as usize];
                if child.parent as usize != id {
                    return Err(format!("node {c}: wrong parent"));
                }
                if self.text[child.start] != sym {
                    return Err(format!("node {c}: edge key mismatch"));
                }
                if child.visit_count > n.visit_count && id != ROOT as usize {
                    return Err(format!("node {c}: visit_count exceeds parent"));
                }
            }
            if id != ROOT as usize && n.children.len() == 1 {
                return Err(format!("internal node {id} has a single child"));
            }
        }
        Ok(())
    }
}
