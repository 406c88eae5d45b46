//! Parallel corpus loading.
//!
//! Corpus file format: UTF-8, one pair per line, `source<TAB>target`,
//! tokens space-separated. Text arrives pre-tokenized; this crate does
//! no tokenization of its own.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One source sentence per line, tokens space-separated.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Vec<String>, Vec<String>)>) -> Result<Self> {
        for (i, (src, tgt)) in pairs.iter().enumerate() {
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::Input(format!(
                    "pair {i}: empty {} side",
                    if src.is_empty() { "source" } else { "target" }
                )));
            }
        }
        Ok(ParallelCorpus { pairs })
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((src, tgt)) = line.split_once('\t') else {
                return Err(Error::Input(format!(
                    "line {}: expected source<TAB>target",
                    lineno + 1
                )));
            };
            let src: Vec<String> = src.split_whitespace().map(str::to_string).collect();
            let tgt: Vec<String> = tgt.split_whitespace().map(str::to_string).collect();
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::Input(format!("line {}: empty side", lineno + 1)));
            }
            pairs.push((src, tgt));
        }
        Ok(ParallelCorpus { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read corpus {}: {e}", path.display())))?;
        Self::from_lines(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (src, tgt) in &self.pairs {
            out.push_str(&src.join(" "));
            out.push('\t');
            out.push_str(&tgt.join(" "));
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|(s, _)| s)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tab_separated_pairs() {
        let c = ParallelCorpus::from_lines("a b\tx y\nc\tz\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0].0, vec!["a", "b"]);
        assert_eq!(c.pairs[1].1, vec!["z"]);
    }

    #[test]
    fn rejects_empty_side() {
        let err = ParallelCorpus::from_lines("a b\t\n").unwrap_err();
        assert_eq!(err.category(), "input");
    }

    #[test]
    fn rejects_missing_tab() {
        let err = ParallelCorpus::from_lines("no tab here\n").unwrap_err();
        assert_eq!(err.category(), "input");
    }
}
