//! Subcommands that inspect single lattices.

use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use latsa_core::lattice::{from_json, parse_lattice, to_dot, Format};
use latsa_core::masks::{
    binary_masks, compute_marginals, format_entry, merge_nondirectional, prob_masks,
};
use latsa_core::Lattice;

use crate::{DirArg, MaskKindArg, PositionsArg};

pub fn read_text(input: Option<&Path>) -> Result<String> {
    match input {
        Some(p) if p != Path::new("-") => {
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
        }
        _ => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .context("reading stdin")?;
            Ok(s)
        }
    }
}

/// A file holds either one (possibly pretty-printed) JSON lattice or one
/// lattice per non-empty line.
pub fn parse_all(text: &str, format: Format) -> Result<Vec<Lattice>> {
    if format == Format::Json {
        if let Ok(l) = from_json(text) {
            return Ok(vec![l]);
        }
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l =
            parse_lattice(line, format).with_context(|| format!("lattice on line {}", i + 1))?;
        out.push(l);
    }
    if out.is_empty() {
        anyhow::bail!("no lattice in input");
    }
    Ok(out)
}

fn load(input: Option<&Path>, format: Format) -> Result<Vec<Lattice>> {
    parse_all(&read_text(input)?, format)
}

pub fn validate(input: Option<&Path>, format: Format) -> Result<()> {
    let lattices = load(input, format)?;
    for l in &lattices {
        println!("ok\t{} nodes\t{} edges", l.len(), l.edges().len());
    }
    Ok(())
}

pub fn masks(input: Option<&Path>, format: Format, kind: MaskKindArg, dir: DirArg) -> Result<()> {
    let lattices = load(input, format)?;
    for (i, l) in lattices.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let (fwd, bwd) = match kind {
            MaskKindArg::Bin => binary_masks(l),
            MaskKindArg::Prob => prob_masks(l),
        };
        let m = match dir {
            DirArg::Fwd => fwd,
            DirArg::Bwd => bwd,
            DirArg::Nondir => merge_nondirectional(&fwd, &bwd)?,
        };
        print!("{}", m.to_tsv());
    }
    Ok(())
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn positions(input: Option<&Path>, format: Format, kind: PositionsArg) -> Result<()> {
    for l in load(input, format)? {
        let p = match kind {
            PositionsArg::Longest => l.longest_path_positions().as_slice().to_vec(),
            PositionsArg::Topological => l.topological_positions(),
        };
        println!("{}", join(p));
    }
    Ok(())
}

pub fn marginals(input: Option<&Path>, format: Format) -> Result<()> {
    let lattices = load(input, format)?;
    for (i, l) in lattices.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let m = compute_marginals(l);
        for k in l.node_ids() {
            println!("{}\t{}\t{}", k, l.token(k), format_entry(m.get(k)));
        }
    }
    Ok(())
}

pub fn linearize(input: Option<&Path>, format: Format) -> Result<()> {
    for l in load(input, format)? {
        println!("{}", join(l.linearize().into_iter().map(|(t, _)| t)));
    }
    Ok(())
}

pub fn dot(input: Option<&Path>, format: Format) -> Result<()> {
    for l in load(input, format)? {
        print!("{}", to_dot(&l, Some(&compute_marginals(&l))));
    }
    Ok(())
}
