//! Python lattice format (PLF): one lattice per line, written as nested
//! tuples. Each column lists the edges leaving node `i` as
//! `('token', prob, offset)`, reaching node `i + offset`; the final node is
//! the one past the last column.
//!
//! ```text
//! ((('a',1.0,1),),(('b',0.6,1),('c',0.4,1),),)
//! ```

use super::transform::{EdgeLabeledLattice, LabeledEdge};
use super::PARSE_TOLERANCE;
use crate::error::LatticeError;

/// How the numeric field of a PLF edge is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlfProb {
    #[default]
    Linear,
    /// Natural-log probabilities.
    Log,
}

/// Parses a single PLF line into an edge-labeled lattice.
pub fn parse_plf(text: &str, prob: PlfProb) -> Result<EdgeLabeledLattice, LatticeError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let columns = p.lattice()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing characters after lattice"));
    }
    if columns.is_empty() {
        return Err(LatticeError::Empty);
    }
    let n = columns.len();
    let mut edges = Vec::new();
    for (i, col) in columns.into_iter().enumerate() {
        for (token, value, offset) in col {
            let to = i + offset;
            if to > n {
                return Err(LatticeError::UnknownNode(to as u64));
            }
            let p = match prob {
                PlfProb::Linear => value,
                PlfProb::Log => value.exp(),
            };
            edges.push(LabeledEdge {
                from: i,
                to,
                token,
                p,
            });
        }
    }
    EdgeLabeledLattice::with_tolerance(n + 1, edges, 0, n, PARSE_TOLERANCE)
}

type Column = Vec<(String, f64, usize)>;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> LatticeError {
        LatticeError::Syntax {
            line: 1,
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), LatticeError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    /// Parses `( item, item, ... )` with an optional trailing comma.
    fn tuple<T>(
        &mut self,
        mut item: impl FnMut(&mut Self) -> Result<T, LatticeError>,
    ) -> Result<Vec<T>, LatticeError> {
        self.expect(b'(')?;
        let mut out = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(out);
            }
            out.push(item(self)?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(self.error("expected ',' or ')'")),
            }
        }
    }

    fn lattice(&mut self) -> Result<Vec<Column>, LatticeError> {
        self.tuple(|p| p.tuple(|p| p.edge()))
    }

    fn edge(&mut self) -> Result<(String, f64, usize), LatticeError> {
        self.expect(b'(')?;
        let token = self.string()?;
        self.expect(b',')?;
        let value = self.number()?;
        self.expect(b',')?;
        let offset = self.number()?;
        if self.peek() == Some(b',') {
            self.pos += 1;
        }
        self.expect(b')')?;
        if offset < 1.0 || offset.fract() != 0.0 {
            return Err(self.error("edge offset must be a positive integer"));
        }
        Ok((token, value, offset as usize))
    }

    fn string(&mut self) -> Result<String, LatticeError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.error("expected quoted token")),
        };
        self.pos += 1;
        let mut bytes = Vec::new();
        while let Some(&c) = self.src.get(self.pos) {
            self.pos += 1;
            if c == b'\\' {
                match self.src.get(self.pos) {
                    Some(&next) => {
                        bytes.push(next);
                        self.pos += 1;
                    }
                    None => break,
                }
            } else if c == quote {
                return String::from_utf8(bytes).map_err(|_| self.error("token is not UTF-8"));
            } else {
                bytes.push(c);
            }
        }
        Err(self.error("unterminated token"))
    }

    fn number(&mut self) -> Result<f64, LatticeError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LatticeError::Syntax {
                line: 1,
                offset: start,
                message: "expected a number".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_columns_and_offsets() {
        let e = parse_plf(
            "((('a',1.0,1),),(('b',0.6,2),('c',0.4,1),),(('d',1.0,1),),)",
            PlfProb::Linear,
        )
        .unwrap();
        assert_eq!(e.num_nodes(), 4);
        assert_eq!(e.edges().len(), 4);
        assert_eq!(e.edges()[1].to, 3);
    }

    #[test]
    fn log_probabilities() {
        let e = parse_plf(
            "((('a',-0.5108256237659907,1),('b',-0.916290731874155,1),),)",
            PlfProb::Log,
        )
        .unwrap();
        assert!((e.edges()[0].p - 0.6).abs() < 1e-12);
    }

    #[test]
    fn escaped_quotes_and_whitespace() {
        let e = parse_plf(r#"( ( ( 'it\'s' , 1.0 , 1 ) , ) , )"#, PlfProb::Linear).unwrap();
        assert_eq!(e.edges()[0].token, "it's");
    }

    #[test]
    fn syntax_error_offset() {
        match parse_plf("((('a',1.0,1),)", PlfProb::Linear).unwrap_err() {
            LatticeError::Syntax { offset, .. } => assert_eq!(offset, 15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn offset_past_end() {
        assert!(parse_plf("((('a',1.0,3),),)", PlfProb::Linear).is_err());
    }
}
