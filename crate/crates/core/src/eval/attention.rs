//! CSV export of glocal attention maps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::models::AttentionMaps;

fn slot_header(labels: &[String]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(k, l)| format!("{}:{}", k + 1, l.replace([',', '"', '\n'], "_")))
        .collect::<Vec<_>>()
        .join(",")
}

/// Sentence-level attention, one row per sentence and one column per
/// skeleton slot.
pub fn sentence_csv(maps: &AttentionMaps) -> String {
    let mut out = format!("sentence,{}\n", slot_header(&maps.slot_labels));
    for (t, row) in maps.a_s.iter().enumerate() {
        let _ = write!(out, "{}", t + 1);
        for v in row {
            let _ = write!(out, ",{v:.6e}");
        }
        out.push('\n');
    }
    out
}

/// Word-level attention, one row per `(sentence, word)` pair.
pub fn word_csv(maps: &AttentionMaps) -> String {
    let mut out = format!("sentence,word_index,token,{}\n", slot_header(&maps.slot_labels));
    for (t, words) in maps.a_w.iter().enumerate() {
        for (i, row) in words.iter().enumerate() {
            let tok = maps.dii_tokens[t][i].replace([',', '"', '\n'], "_");
            let _ = write!(out, "{},{},{}", t + 1, i, tok);
            for v in row {
                let _ = write!(out, ",{v:.6e}");
            }
            out.push('\n');
        }
    }
    out
}

/// Writes `<stem>.sentence.csv` and `<stem>.word.csv` and returns both paths.
pub fn export_attention(maps: &AttentionMaps, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), EvalError> {
    let s = dir.join(format!("{stem}.sentence.csv"));
    let w = dir.join(format!("{stem}.word.csv"));
    for (path, body) in [(&s, sentence_csv(maps)), (&w, word_csv(maps))] {
        std::fs::write(path, body).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok((s, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps() -> AttentionMaps {
        AttentionMaps {
            a_w: (0..5).map(|_| vec![vec![0.25; 5], vec![0.75; 5]]).collect(),
            a_s: (0..5).map(|t| (0..5).map(|k| if k == t { 0.6 } else { 0.1 }).collect()).collect(),
            dii_tokens: (0..5).map(|_| vec!["a".to_string(), "dog".to_string()]).collect(),
            slot_labels: ["dog", "dog", "NONE", "dog", "UNK"].map(String::from).to_vec(),
        }
    }

    #[test]
    fn sentence_file_has_five_rows_that_parse_back() {
        let m = maps();
        let csv = sentence_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "sentence,1:dog,2:dog,3:NONE,4:dog,5:UNK");
        for (t, line) in lines[1..].iter().enumerate() {
            let vals: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            for (a, b) in vals.iter().zip(&m.a_s[t]) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn word_file_rows() {
        let csv = word_csv(&maps());
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,1,dog,7.5"));
    }

    #[test]
    fn unwritable_path_errors() {
        let err = export_attention(&maps(), Path::new("/nonexistent/dir"), "x");
        assert!(matches!(err, Err(EvalError::Io(_))));
    }
}
