//! Static suffix-array baseline: prefix-doubling construction, Kasai LCP and
//! binary-search matching. Every update is a full rebuild.

use std::cmp::Ordering;

use crate::corpus::TokenId;

type Symbol = u64;
const SENTINEL_BASE: Symbol = 1 << 32;

#[derive(Debug, Clone, Default)]
pub struct SuffixArrayIndex {
    text: Vec<Symbol>,
    /// Suffix start positions over token positions only, in lexicographic order.
    sa: Vec<u32>,
    lcp: Option<Vec<u32>>,
}

impl SuffixArrayIndex {
    /// Builds over the separator-joined corpus in O(n log^2 n).
    pub fn build<S: AsRef<[TokenId]>>(sequences: &[S]) -> Self {
        let mut text = Vec::with_capacity(sequences.iter().map(|s| s.as_ref().len() + 1).sum());
        for (i, s) in sequences.iter().enumerate() {
            text.extend(s.as_ref().iter().map(|&t| Symbol::from(t)));
            text.push(SENTINEL_BASE + i as Symbol);
        }
        let full = prefix_doubling(&text);
        let sa = full
            .into_iter()
            .filter(|&p| text[p as usize] < SENTINEL_BASE)
            .collect();
        Self { text, sa, lcp: None }
    }

    /// Same as [`build`](Self::build) plus the LCP array.
    pub fn build_with_lcp<S: AsRef<[TokenId]>>(sequences: &[S]) -> Self {
        let mut idx = Self::build(sequences);
        idx.lcp = Some(kasai(&idx.text, &idx.sa));
        idx
    }

    pub fn len(&self) -> usize {
        self.sa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sa.is_empty()
    }

    pub fn positions(&self) -> &[u32] {
        &self.sa
    }

    /// `lcp[i]` is the common prefix length of suffixes `sa[i-1]` and `sa[i]`;
    /// `lcp[0] == 0`.
    pub fn lcp(&self) -> Option<&[u32]> {
        self.lcp.as_deref()
    }

    fn suffix(&self, pos: u32) -> &[Symbol] {
        &self.text[pos as usize..]
    }

    fn compare_prefix(&self, pos: u32, pattern: &[TokenId]) -> Ordering {
        let suffix = self.suffix(pos);
        for (i, &t) in pattern.iter().enumerate() {
            match suffix.get(i) {
                None => return Ordering::Less,
                Some(&s) => match s.cmp(&Symbol::from(t)) {
                    Ordering::Equal => {}
                    o => return o,
                },
            }
        }
        Ordering::Equal
    }

    /// Whether `pattern` occurs in the corpus.
    pub fn contains(&self, pattern: &[TokenId]) -> bool {
        if pattern.is_empty() {
            return true;
        }
        let lo = self
            .sa
            .partition_point(|&p| self.compare_prefix(p, pattern) == Ordering::Less);
        lo < self.sa.len() && self.compare_prefix(self.sa[lo], pattern) == Ordering::Equal
    }

    /// Length of the longest suffix of `query` occurring in the corpus.
    pub fn longest_match(&self, query: &[TokenId]) -> usize {
        (0..query.len())
            .find(|&start| self.contains(&query[start..]))
            .map_or(0, |start| query.len() - start)
    }
}

fn prefix_doubling(text: &[Symbol]) -> Vec<u32> {
    let n = text.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sa: Vec<u32> = (0..n as u32).collect();
    // initial ranks: dense ranks of symbols
    let mut sorted_syms: Vec<Symbol> = text.to_vec();
    sorted_syms.sort_unstable();
    sorted_syms.dedup();
    let mut rank: Vec<u64> = text
        .iter()
        .map(|s| sorted_syms.binary_search(s).unwrap() as u64 + 1)
        .collect();
    let mut tmp = vec![0u64; n];
    let mut k = 1;
    loop {
        let key = |i: u32| {
            let i = i as usize;
            let second = if i + k < n { rank[i + k] } else { 0 };
            (rank[i], second)
        };
        sa.sort_unstable_by_key(|&i| key(i));
        tmp[sa[0] as usize] = 1;
        for w in 1..n {
            let bump = u64::from(key(sa[w - 1]) != key(sa[w]));
            tmp[sa[w] as usize] = tmp[sa[w - 1] as usize] + bump;
        }
        std::mem::swap(&mut rank, &mut tmp);
        if rank[sa[n - 1] as usize] as usize == n {
            break;
        }
        k *= 2;
    }
    sa
}

fn kasai(text: &[Symbol], sa: &[u32]) -> Vec<u32> {
    // Kasai over the filtered array: suffixes starting at sentinels are absent,
    // but a suffix's successor (pos + 1) is absent only when it starts at a
    // sentinel, in which case the carried length is already 0.
    let n = text.len();
    let mut rank = vec![u32::MAX; n];
    for (i, &p) in sa.iter().enumerate() {
        rank[p as usize] = i as u32;
    }
    let mut lcp = vec![0u32; sa.len()];
    let mut h = 0usize;
    for pos in 0..n {
        let r = rank[pos];
        if r == u32::MAX {
            h = 0;
            continue;
        }
        if r == 0 {
            h = 0;
            continue;
        }
        let prev = sa[r as usize - 1] as usize;
        while pos + h < n && prev + h < n && text[pos + h] == text[prev + h] && text[pos + h] < SENTINEL_BASE {
            h += 1;
        }
        lcp[r as usize] = h as u32;
        h = h.saturating_sub(1);
    }
    lcp
}
