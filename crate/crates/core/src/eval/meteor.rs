//! Unigram METEOR without synonym or paraphrase matching.

use super::EvalError;

/// Strips one common inflectional suffix, keeping at least three letters.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    for suf in ["ing", "ed", "es", "ly", "s"] {
        if let Some(s) = w.strip_suffix(suf) {
            if s.chars().count() >= 3 {
                return s.to_string();
            }
        }
    }
    w
}

/// Aligned `(hyp, ref)` index pairs: exact matches first, then stem matches
/// among the words left over. A hypothesis word continues the previous
/// alignment when it can; otherwise it takes the free reference position
/// that starts the longest matching run, leftmost on ties.
pub fn align(hypothesis: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut hyp_used = vec![false; hypothesis.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let stages: [fn(&str) -> String; 2] = [|w| w.to_lowercase(), stem];
    for key in stages {
        let hkeys: Vec<String> = hypothesis.iter().map(|w| key(w)).collect();
        let rkeys: Vec<String> = reference.iter().map(|w| key(w)).collect();
        let mut prev: Option<usize> = None;
        for i in 0..hypothesis.len() {
            if hyp_used[i] {
                prev = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
                continue;
            }
            let free = |j: usize, i: usize| i < hkeys.len() && j < rkeys.len() && !ref_used[j] && rkeys[j] == hkeys[i];
            let run = |j: usize| (0..).take_while(|&d| free(j + d, i + d) && (d == 0 || !hyp_used[i + d])).count();
            let next = prev.map(|p| p + 1).filter(|&j| free(j, i));
            let best = next.or_else(|| {
                (0..reference.len())
                    .filter(|&j| free(j, i))
                    .fold(None, |best: Option<(usize, usize)>, j| {
                        let r = run(j);
                        match best {
                            Some((_, br)) if br >= r => best,
                            _ => Some((j, r)),
                        }
                    })
                    .map(|(j, _)| j)
            });
            if let Some(j) = best {
                hyp_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
                prev = Some(j);
            } else {
                prev = None;
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of maximal runs of alignments adjacent in both strings.
pub fn chunks(pairs: &[(usize, usize)]) -> usize {
    let mut n = 0;
    let mut last: Option<(usize, usize)> = None;
    for &(h, r) in pairs {
        if last != Some((h.wrapping_sub(1), r.wrapping_sub(1))) {
            n += 1;
        }
        last = Some((h, r));
    }
    n
}

/// Score in `[0, 1]`; `F_mean · (1 − 0.5 · (chunks / m)³)`.
pub fn meteor_lite(hypothesis: &[String], reference: &[String]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let pairs = align(hypothesis, reference);
    let m = pairs.len() as f64;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let p = m / hypothesis.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks(&pairs) as f64 / m).powi(3);
    Ok(fmean * (1.0 - penalty))
}
