//! Prefix trie mapping the leading tokens of past generations to a shard.

use std::collections::BTreeMap;

use crate::corpus::TokenId;

#[derive(Debug, Clone)]
struct TrieNode<S> {
    children: BTreeMap<TokenId, usize>,
    /// Shard whose stored prefix ends exactly here.
    terminal: Option<S>,
    /// Shard of the most recent insertion passing through this node.
    latest: Option<S>,
}

impl<S> TrieNode<S> {
    fn empty() -> Self {
        Self {
            children: BTreeMap::new(),
            terminal: None,
            latest: None,
        }
    }
}

/// Deepest-match router over token prefixes.
///
/// A query routes to the shard stored at the deepest trie node it reaches:
/// the shard whose prefix ends there if any, otherwise the shard most
/// recently inserted through that node. Queries sharing no first token with
/// any stored prefix route nowhere.
#[derive(Debug, Clone)]
pub struct PrefixTrie<S> {
    nodes: Vec<TrieNode<S>>,
    max_depth: usize,
}

impl<S: Clone> PrefixTrie<S> {
    pub fn new(max_depth: usize) -> Self {
        Self {
            nodes: vec![TrieNode::empty()],
            max_depth: max_depth.max(1),
        }
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Stores `prefix` (truncated to the depth limit) as routing to `shard`.
    pub fn insert(&mut self, prefix: &[TokenId], shard: S) {
        let prefix = &prefix[..prefix.len().min(self.max_depth)];
        if prefix.is_empty() {
            return;
        }
        let mut cur = 0;
        for &t in prefix {
            let next = match self.nodes[cur].children.get(&t) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(TrieNode::empty());
                    self.nodes[cur].children.insert(t, n);
                    n
                }
            };
            cur = next;
            self.nodes[cur].latest = Some(shard.clone());
        }
        self.nodes[cur].terminal = Some(shard);
    }

    /// Routed shard and the number of query tokens matched to reach it.
    pub fn route_with_depth(&self, query: &[TokenId]) -> Option<(&S, usize)> {
        let mut cur = 0;
        let mut depth = 0;
        for &t in query.iter().take(self.max_depth) {
            match self.nodes[cur].children.get(&t) {
                Some(&n) => {
                    cur = n;
                    depth += 1;
                }
                None => break,
            }
        }
        if depth == 0 {
            return None;
        }
        let node = &self.nodes[cur];
        node.terminal.as_ref().or(node.latest.as_ref()).map(|s| (s, depth))
    }

    pub fn route(&self, query: &[TokenId]) -> Option<&S> {
        self.route_with_depth(query).map(|(s, _)| s)
    }
}
