//! Parallel corpus files. Source files hold one lattice per line, either as
//! a JSON lattice or as whitespace-separated tokens (read as a sequence
//! lattice with sentinels). Target files hold whitespace-separated tokens.

use std::fs;
use std::path::Path;

use crate::error::ModelError;
use crate::lattice::{from_json, Lattice};

#[derive(Debug, Clone)]
pub struct Example {
    pub source: Lattice,
    pub target: Vec<String>,
}

pub fn read_source_line(line: &str) -> Result<Lattice, ModelError> {
    let t = line.trim();
    if t.starts_with('{') {
        Ok(from_json(t)?)
    } else {
        let toks: Vec<&str> = t.split_whitespace().collect();
        Ok(Lattice::from_sequence(&toks)?)
    }
}

fn lines(path: &Path) -> Result<Vec<String>, ModelError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::to_string)
        .collect())
}

pub fn read_targets(path: &Path) -> Result<Vec<Vec<String>>, ModelError> {
    Ok(lines(path)?
        .iter()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

pub fn read_corpus(source: &Path, target: &Path) -> Result<Vec<Example>, ModelError> {
    let src = lines(source)?;
    let tgt = read_targets(target)?;
    if src.len() != tgt.len() {
        return Err(ModelError::Corpus(format!(
            "{} has {} lines but {} has {}",
            source.display(),
            src.len(),
            target.display(),
            tgt.len()
        )));
    }
    src.iter()
        .zip(tgt)
        .enumerate()
        .map(|(i, (s, target))| {
            let source = read_source_line(s)
                .map_err(|e| ModelError::Corpus(format!("{}:{}: {e}", source.display(), i + 1)))?;
            Ok(Example { source, target })
        })
        .collect()
}
