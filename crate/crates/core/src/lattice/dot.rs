use super::Lattice;
use crate::masks::MarginalVector;

const PALETTE: [&str; 5] = ["#f7fbff", "#c6dbef", "#6baed6", "#2171b5", "#08306b"];

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Nodes are labeled `token\np=marginal` when marginals
/// are given and shaded on a five-step scale by that marginal.
pub fn to_dot(l: &Lattice, marginals: Option<&MarginalVector>) -> String {
    let mut out =
        String::from("digraph lattice {\n  rankdir=LR;\n  node [shape=box, style=filled];\n");
    for k in l.node_ids() {
        let token = escape(l.token(k));
        match marginals {
            Some(m) => {
                let p = m.get(k);
                let bucket = ((p * 5.0).ceil() as usize).clamp(1, 5) - 1;
                let font = if bucket >= 3 { "white" } else { "black" };
                out.push_str(&format!(
                    "  n{} [label=\"{}\\np={:.4}\", fillcolor=\"{}\", fontcolor=\"{}\"];\n",
                    k.0, token, p, PALETTE[bucket], font
                ));
            }
            None => out.push_str(&format!(
                "  n{} [label=\"{}\", fillcolor=\"{}\"];\n",
                k.0, token, PALETTE[0]
            )),
        }
    }
    for e in l.edges() {
        out.push_str(&format!(
            "  n{} -> n{} [label=\"{}\"];\n",
            e.from.0, e.to.0, e.p
        ));
    }
    out.push_str("}\n");
    out
}
