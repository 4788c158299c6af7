//! Answer-overlap metrics over normalized word tokens.

use std::collections::HashMap;

/// Lowercases, deletes every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn harmonic(overlap: usize, pred_len: usize, gt_len: usize) -> f64 {
    match (pred_len, gt_len) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / gt_len as f64;
    2.0 * p * r / (p + r)
}

/// Multiset token-overlap F1 in [0, 1].
pub fn token_f1(pred: &str, gt: &str) -> f64 {
    let pred = normalize_answer(pred);
    let gt = normalize_answer(gt);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    harmonic(overlap, pred.len(), gt.len())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // One DP row over b; `diag` and `left` carry the previous row's
    // neighbour and the current row's running value. Both neighbours are at
    // most diag + 1, so a match needs no branch: max(left, up, diag + [x == y]).
    // The up/diag term is formed first so only one max depends on `left`.
    let mut inline = [0usize; 64];
    let mut heap = Vec::new();
    let row: &mut [usize] = if b.len() <= inline.len() {
        &mut inline[..b.len()]
    } else {
        heap.resize(b.len(), 0);
        &mut heap
    };
    for x in a {
        let (mut diag, mut left) = (0, 0);
        for (cell, y) in row.iter_mut().zip(b) {
            let up = *cell;
            left = left.max(up.max(diag + usize::from(x == y)));
            diag = up;
            *cell = left;
        }
    }
    row.last().copied().unwrap_or(0)
}

/// LCS-based F-measure with beta = 1.
pub fn rouge_l(pred: &str, gt: &str) -> f64 {
    let pred = normalize_answer(pred);
    let gt = normalize_answer(gt);
    harmonic(lcs_len(&pred, &gt), pred.len(), gt.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Cat!"), ["the", "cat"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("  U.S.A.,\tnow "), ["usa", "now"]);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1("yes", "yes"), 1.0);
        assert!((token_f1("the cat sat", "cat sat down") - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "x"), 0.0);
        assert_eq!(token_f1("x", "!!"), 0.0);
        // Multiset: a repeated prediction token only matches as often as it occurs in gt.
        assert!((token_f1("a a a", "a b") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        assert!((rouge_l("a b c d", "a c b d") - 0.75).abs() < 1e-12);
        assert_eq!(lcs_len(&[1, 2, 3], &[4, 5]), 0);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
    }
}
