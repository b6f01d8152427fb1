//! Corpus readers.
//!
//! Token corpora hold one sequence per line as whitespace-separated
//! nonnegative integers; blank lines are skipped. Binary corpora (for
//! Bernoulli-emission HMMs) hold one sequence per line as whitespace-separated
//! frames, each a string of `0`/`1` characters. HSMM corpora are directories
//! of CSV files, one sequence per file in file-name order, one frame per row.

use crate::{CliError, Result};
use lrinfer_core::hsmm::FrameSeq;
use lrinfer_core::numeric::DenseMatrix;
use std::path::{Path, PathBuf};

/// A parsed sequence with the 1-based line it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Line<T> {
    pub line: usize,
    pub data: T,
}

pub fn parse_tokens(text: &str) -> Result<Vec<Line<Vec<usize>>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let data = raw
            .split_whitespace()
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| CliError::corpus(format!("line {}: {w:?} is not a nonnegative integer", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Line { line: i + 1, data });
    }
    Ok(out)
}

pub fn parse_binary(text: &str) -> Result<Vec<Line<Vec<Vec<bool>>>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let data = raw
            .split_whitespace()
            .map(|w| {
                w.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(CliError::corpus(format!("line {}: {w:?} is not a 0/1 frame", i + 1))),
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Line { line: i + 1, data });
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::corpus(format!("cannot read corpus {}: {e}", path.display())))
}

/// Parses one CSV frame file. Every row must have the same width.
pub fn parse_frames(text: &str, name: &str) -> Result<FrameSeq> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let row = raw
            .split(',')
            .map(|f| {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| CliError::corpus(format!("{name} line {}: {f:?} is not a number", i + 1)))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(CliError::corpus(format!("{name} line {}: non-finite value", i + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::corpus(format!(
                    "{name} line {}: {} columns, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::corpus(format!("{name}: no frames")));
    }
    let d = rows[0].len();
    let m = DenseMatrix::new(rows.len(), d, rows.concat()).map_err(|e| CliError::corpus(format!("{name}: {e}")))?;
    Ok(FrameSeq::new(m))
}

/// Reads every `*.csv` file in `dir`, sorted by file name.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<(String, FrameSeq)>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::corpus(format!("cannot read corpus directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let text = read_text(&p)?;
            Ok((name.clone(), parse_frames(&text, &name)?))
        })
        .collect()
}

pub fn write_frames(path: &Path, x: &FrameSeq) -> Result<()> {
    let mut text = String::new();
    for t in 0..x.len() {
        let row: Vec<String> = x.frames().row(t).iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn tokens_with_blank_lines() {
        let c = parse_tokens("1 2 3\n\n  \n4\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], Line { line: 4, data: vec![4] });
        assert!(parse_tokens("").unwrap().is_empty());
    }

    #[test]
    fn token_errors_carry_line_numbers() {
        let e = parse_tokens("1 2\n3 -1\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Corpus);
        assert!(e.message.starts_with("line 2:"));
        assert!(parse_tokens("1 x").is_err());
    }

    #[test]
    fn binary_frames() {
        let c = parse_binary("01 10\n11\n").unwrap();
        assert_eq!(c[0].data, vec![vec![false, true], vec![true, false]]);
        let e = parse_binary("01\n02\n").unwrap_err();
        assert!(e.message.starts_with("line 2:"));
    }

    #[test]
    fn frame_files() {
        let x = parse_frames("1.0,2.5\n-3,4e-1\n", "a.csv").unwrap();
        assert_eq!(x.len(), 2);
        assert_eq!(x.frames().row(1), &[-3.0, 0.4]);
        let e = parse_frames("1,2\n3\n", "b.csv").unwrap_err();
        assert_eq!(e.message, "b.csv line 2: 1 columns, expected 2");
        assert!(parse_frames("\n", "c.csv").is_err());
        assert!(parse_frames("1,nan\n", "d.csv").is_err());
    }

    #[test]
    fn frame_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = parse_frames("0.1,0.2\n0.30000000000000004,-1\n", "x").unwrap();
        write_frames(&dir.path().join("b.csv"), &x).unwrap();
        write_frames(&dir.path().join("a.csv"), &x).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "skip").unwrap();
        let got = read_frame_dir(dir.path()).unwrap();
        assert_eq!(got.iter().map(|g| g.0.as_str()).collect::<Vec<_>>(), ["a.csv", "b.csv"]);
        assert_eq!(got[0].1, x);
    }
}
