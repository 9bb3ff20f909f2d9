//! Token arrangements for the two decoding branches.
//!
//! The prior branch lays tokens out as visual, action queries, language;
//! under a causal mask the action queries therefore never see language.
//! The posterior branch lays them out as visual, language, action queries,
//! so every action query sees the full instruction. The branch difference
//! is carried entirely by token order plus one shared causal mask.

use std::ops::Range;

use crate::tensor::AttnMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Visual,
    Language,
    ActionQuery,
}

/// One branch's token ordering with its causal attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    branch: Branch,
    n_v: usize,
    n_l: usize,
    n_a: usize,
    mask: AttnMask,
}

/// Builds the layout for `branch` with the given token counts. All counts
/// must be at least one.
pub fn build_sequence(branch: Branch, n_v: usize, n_l: usize, n_a: usize) -> SequenceLayout {
    assert!(
        n_v >= 1 && n_l >= 1 && n_a >= 1,
        "token counts must be >= 1, got n_v={n_v} n_l={n_l} n_a={n_a}"
    );
    let mask = AttnMask::causal(n_v + n_l + n_a);
    SequenceLayout {
        branch,
        n_v,
        n_l,
        n_a,
        mask,
    }
}

impl SequenceLayout {
    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn len(&self) -> usize {
        self.n_v + self.n_l + self.n_a
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mask(&self) -> &AttnMask {
        &self.mask
    }

    /// Contiguous index range occupied by `kind` in this branch's order.
    pub fn positions(&self, kind: TokenKind) -> Range<usize> {
        let (v, l, a) = (self.n_v, self.n_l, self.n_a);
        match (self.branch, kind) {
            (_, TokenKind::Visual) => 0..v,
            (Branch::Prior, TokenKind::ActionQuery) => v..v + a,
            (Branch::Prior, TokenKind::Language) => v + a..v + a + l,
            (Branch::Posterior, TokenKind::Language) => v..v + l,
            (Branch::Posterior, TokenKind::ActionQuery) => v + l..v + l + a,
        }
    }

    pub fn kind_at(&self, i: usize) -> TokenKind {
        for kind in [TokenKind::Visual, TokenKind::Language, TokenKind::ActionQuery] {
            if self.positions(kind).contains(&i) {
                return kind;
            }
        }
        panic!("position {i} out of range for layout of length {}", self.len());
    }

    /// True when the causal mask lets `query` attend to `key`.
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.mask.allowed(query, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_action_rows_disallow_language_columns() {
        // n_v=2, n_a=1, n_l=2: order is [v v A l l], so the action query
        // sits at position 2 and language occupies columns 3 and 4.
        let layout = build_sequence(Branch::Prior, 2, 2, 1);
        assert_eq!(layout.positions(TokenKind::ActionQuery), 2..3);
        assert_eq!(layout.positions(TokenKind::Language), 3..5);
        assert!(!layout.allowed(2, 3));
        assert!(!layout.allowed(2, 4));
        assert!(layout.allowed(2, 0) && layout.allowed(2, 1) && layout.allowed(2, 2));
    }

    #[test]
    fn posterior_action_rows_allow_language_columns() {
        // Same counts, order [v v l l A]: the action query at position 4
        // sees language columns 2 and 3.
        let layout = build_sequence(Branch::Posterior, 2, 2, 1);
        assert_eq!(layout.positions(TokenKind::ActionQuery), 4..5);
        assert_eq!(layout.positions(TokenKind::Language), 2..4);
        assert!(layout.allowed(4, 2));
        assert!(layout.allowed(4, 3));
    }

    #[test]
    fn mask_is_lower_triangular_for_both_branches() {
        for branch in [Branch::Prior, Branch::Posterior] {
            let layout = build_sequence(branch, 3, 2, 2);
            for q in 0..layout.len() {
                for k in 0..layout.len() {
                    assert_eq!(layout.allowed(q, k), k <= q);
                }
            }
        }
    }

    #[test]
    fn segments_partition_the_sequence() {
        for branch in [Branch::Prior, Branch::Posterior] {
            for n_v in 1..=4 {
                for n_l in 1..=4 {
                    for n_a in 1..=4 {
                        let layout = build_sequence(branch, n_v, n_l, n_a);
                        let mut seen = vec![0usize; layout.len()];
                        for kind in
                            [TokenKind::Visual, TokenKind::Language, TokenKind::ActionQuery]
                        {
                            for i in layout.positions(kind) {
                                seen[i] += 1;
                                assert_eq!(layout.kind_at(i), kind);
                            }
                        }
                        assert!(seen.iter().all(|&c| c == 1));
                    }
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "token counts must be >= 1")]
    fn zero_counts_are_rejected() {
        build_sequence(Branch::Prior, 0, 1, 1);
    }
}
