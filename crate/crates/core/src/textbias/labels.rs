use serde::{Deserialize, Serialize};

use crate::corpus::NeutralityPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledToken {
    pub token: String,
    /// 1 when the token was edited away in the neutral rewrite.
    pub label: u8,
}

/// Labels each biased-side word 1 if it is not part of the longest common
/// subsequence with the neutral side.
///
/// When the neutral side only inserts words, every biased word is in the
/// LCS; the word just before the first insertion point (or just after it,
/// for an insertion at the start) is labeled instead, so every pair yields
/// at least one positive.
pub fn derive_diff_labels(pair: &NeutralityPair) -> Result<Vec<LabeledToken>> {
    let (a, b) = (&pair.biased_tokens, &pair.neutral_tokens);
    if a == b {
        return Err(Error::validation(format!(
            "pair `{}` has token-identical sides",
            pair.id
        )));
    }
    let (in_lcs, first_gap) = lcs_membership(a, b);
    let mut labels: Vec<u8> = in_lcs.iter().map(|&m| u8::from(!m)).collect();
    if labels.iter().all(|&l| l == 0) {
        // Pure insertion on the neutral side.
        let anchor = first_gap.map_or(0, |g| g.saturating_sub(1)).min(a.len() - 1);
        labels[anchor] = 1;
    }
    Ok(a.iter()
        .zip(labels)
        .map(|(token, label)| LabeledToken {
            token: token.clone(),
            label,
        })
        .collect())
}

/// Returns which positions of `a` participate in an LCS with `b`, and the
/// position in `a` at which the first unmatched `b` token would be inserted.
fn lcs_membership(a: &[String], b: &[String]) -> (Vec<bool>, Option<usize>) {
    let (n, m) = (a.len(), b.len());
    // table[i][j] = LCS length of a[i..], b[j..]
    let mut table = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if a[i] == b[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut member = vec![false; n];
    let mut first_gap = None;
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            member[i] = true;
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            first_gap.get_or_insert(i);
            j += 1;
        }
    }
    if j < m {
        first_gap.get_or_insert(i);
    }
    (member, first_gap)
}
