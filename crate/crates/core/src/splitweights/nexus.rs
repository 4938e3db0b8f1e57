//! NEXUS TAXA and splits blocks in the layout read by SplitsTree4.

use std::fmt::Write as _;

use super::{CircularSplit, Result, SplitError, WeightedSplit, WeightedSplitSystem};
use crate::neighbornet::CircularOrdering;

#[derive(Debug, Clone, PartialEq)]
pub struct NexusDocument {
    pub labels: Vec<String>,
    pub system: WeightedSplitSystem,
}

/// Writes `system` with taxon `i` labelled `labels[i]`. Weights use the
/// shortest decimal form that reads back to the same `f64`.
pub fn export_nexus(system: &WeightedSplitSystem, labels: &[String]) -> Result<String> {
    let n = system.n_taxa();
    if labels.len() != n {
        return Err(SplitError::LabelCount {
            expected: n,
            found: labels.len(),
        });
    }
    let mut out = String::new();
    out.push_str("#NEXUS\n\n");
    out.push_str("BEGIN taxa;\n");
    let _ = writeln!(out, "DIMENSIONS ntax={n};");
    out.push_str("TAXLABELS\n");
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(out, "[{}] {}", i + 1, quote(label));
    }
    out.push_str(";\nEND; [taxa]\n\n");

    out.push_str("BEGIN st_splits;\n");
    let _ = writeln!(out, "DIMENSIONS ntax={n} nsplits={};", system.splits().len());
    out.push_str("FORMAT labels=no weights=yes confidences=no intervals=no;\n");
    out.push_str("PROPERTIES fit=-1.0 cyclic;\n");
    out.push_str("CYCLE");
    for &t in system.ordering().taxa() {
        let _ = write!(out, " {}", t + 1);
    }
    out.push_str(";\n");
    let _ = writeln!(out, "[residual={}]", system.fit_residual());
    out.push_str("MATRIX\n");
    for (k, s) in system.splits().iter().enumerate() {
        let mut side = s.split.side(system.ordering());
        side.sort_unstable();
        let _ = write!(out, "[{}, size={}]\t{}\t", k + 1, side.len(), s.weight);
        let ids: Vec<String> = side.iter().map(|t| (t + 1).to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push_str(",\n");
    }
    out.push_str(";\nEND; [st_splits]\n");
    Ok(out)
}

fn quote(label: &str) -> String {
    let plain = !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Comment(String),
    Semicolon,
    Comma,
    Equals,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '[' => {
                chars.next();
                let mut depth = 1;
                let mut body = String::new();
                for c in chars.by_ref() {
                    match c {
                        '[' => depth += 1,
                        ']' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    body.push(c);
                }
                if depth != 0 {
                    return Err(SplitError::Nexus("unterminated comment".into()));
                }
                tokens.push(Token::Comment(body));
            }
            '\'' => {
                chars.next();
                let mut word = String::new();
                loop {
                    match chars.next() {
                        Some('\'') if chars.peek() == Some(&'\'') => {
                            chars.next();
                            word.push('\'');
                        }
                        Some('\'') => break,
                        Some(c) => word.push(c),
                        None => return Err(SplitError::Nexus("unterminated quoted label".into())),
                    }
                }
                tokens.push(Token::Word(word));
            }
            ';' => {
                chars.next();
                tokens.push(Token::Semicolon);
            }
            ',' => {
                chars.next();
                tokens.push(Token::Comma);
            }
            '=' => {
                chars.next();
                tokens.push(Token::Equals);
            }
            _ => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || matches!(c, ';' | ',' | '=' | '[' | '\'') {
                        break;
                    }
                    word.push(c);
                    chars.next();
                }
                tokens.push(Token::Word(word));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    comments: Vec<String>,
}

impl Parser {
    /// Next non-comment token; comments are collected on the side.
    fn next(&mut self) -> Option<Token> {
        while let Some(tok) = self.tokens.get(self.pos).cloned() {
            self.pos += 1;
            match tok {
                Token::Comment(c) => self.comments.push(c),
                other => return Some(other),
            }
        }
        None
    }

    fn word(&mut self) -> Result<String> {
        match self.next() {
            Some(Token::Word(w)) => Ok(w),
            other => Err(SplitError::Nexus(format!("expected a word, found {other:?}"))),
        }
    }

    fn keyword(&mut self, expected: &str) -> Result<()> {
        let w = self.word()?;
        if w.eq_ignore_ascii_case(expected) {
            Ok(())
        } else {
            Err(SplitError::Nexus(format!("expected {expected}, found {w}")))
        }
    }

    /// Words up to the next semicolon.
    fn command(&mut self) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        loop {
            match self.next() {
                Some(Token::Semicolon) => return Ok(out),
                Some(tok) => out.push(tok),
                None => return Err(SplitError::Nexus("unexpected end of input".into())),
            }
        }
    }
}

fn assignments(tokens: &[Token]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k + 2 < tokens.len() {
        if let (Token::Word(key), Token::Equals, Token::Word(value)) = (&tokens[k], &tokens[k + 1], &tokens[k + 2]) {
            out.push((key.to_ascii_lowercase(), value.clone()));
            k += 3;
        } else {
            k += 1;
        }
    }
    out
}

fn parse_count(value: &str, what: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| SplitError::Nexus(format!("bad {what} '{value}'")))
}

/// Reads a document written by [`export_nexus`] (or any TAXA plus splits
/// block pair with a CYCLE line and weighted, unlabelled rows).
pub fn parse_nexus(text: &str) -> Result<NexusDocument> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        comments: Vec::new(),
    };
    p.keyword("#NEXUS")?;

    let mut labels: Option<Vec<String>> = None;
    let mut splits_block: Option<(usize, Vec<usize>, Vec<(f64, Vec<usize>)>, f64)> = None;

    while let Some(tok) = p.next() {
        if !matches!(&tok, Token::Word(w) if w.eq_ignore_ascii_case("begin")) {
            return Err(SplitError::Nexus(format!("expected BEGIN, found {tok:?}")));
        }
        let name = p.word()?.to_ascii_lowercase();
        p.command()?;
        match name.as_str() {
            "taxa" => labels = Some(parse_taxa(&mut p)?),
            "st_splits" | "splits" => splits_block = Some(parse_splits(&mut p)?),
            other => return Err(SplitError::Nexus(format!("unsupported block {other}"))),
        }
    }

    let labels = labels.ok_or_else(|| SplitError::Nexus("missing TAXA block".into()))?;
    let (ntax, cycle, rows, residual) = splits_block.ok_or_else(|| SplitError::Nexus("missing splits block".into()))?;
    if ntax != labels.len() {
        return Err(SplitError::LabelCount {
            expected: ntax,
            found: labels.len(),
        });
    }
    let ordering = CircularOrdering::new(cycle).map_err(|e| SplitError::Nexus(e.to_string()))?;
    let positions = ordering.positions();
    let mut splits = Vec::with_capacity(rows.len());
    for (weight, taxa) in rows {
        let split = split_from_side(&taxa, &positions, ntax)?;
        splits.push(WeightedSplit { split, weight });
    }
    let system = WeightedSplitSystem::new(ordering, splits, residual)?;
    Ok(NexusDocument { labels, system })
}

fn parse_taxa(p: &mut Parser) -> Result<Vec<String>> {
    let mut ntax = None;
    let mut labels = None;
    loop {
        let head = p.word()?;
        match head.to_ascii_lowercase().as_str() {
            "dimensions" => {
                for (k, v) in assignments(&p.command()?) {
                    if k == "ntax" {
                        ntax = Some(parse_count(&v, "ntax")?);
                    }
                }
            }
            "taxlabels" => {
                let words = p
                    .command()?
                    .into_iter()
                    .map(|t| match t {
                        Token::Word(w) => Ok(w),
                        other => Err(SplitError::Nexus(format!("unexpected {other:?} in TAXLABELS"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                labels = Some(words);
            }
            "end" | "endblock" => {
                p.command()?;
                break;
            }
            _ => {
                p.command()?;
            }
        }
    }
    let labels = labels.ok_or_else(|| SplitError::Nexus("missing TAXLABELS".into()))?;
    if let Some(n) = ntax {
        if n != labels.len() {
            return Err(SplitError::LabelCount {
                expected: n,
                found: labels.len(),
            });
        }
    }
    Ok(labels)
}

type SplitsBlock = (usize, Vec<usize>, Vec<(f64, Vec<usize>)>, f64);

fn parse_splits(p: &mut Parser) -> Result<SplitsBlock> {
    let mut ntax = None;
    let mut nsplits = None;
    let mut cycle = None;
    let mut rows = Vec::new();
    p.comments.clear();
    loop {
        let head = p.word()?;
        match head.to_ascii_lowercase().as_str() {
            "dimensions" => {
                for (k, v) in assignments(&p.command()?) {
                    match k.as_str() {
                        "ntax" => ntax = Some(parse_count(&v, "ntax")?),
                        "nsplits" => nsplits = Some(parse_count(&v, "nsplits")?),
                        _ => {}
                    }
                }
            }
            "cycle" => {
                let ids = p
                    .command()?
                    .into_iter()
                    .map(|t| match t {
                        Token::Word(w) => parse_count(&w, "cycle entry").and_then(|v| {
                            v.checked_sub(1).ok_or_else(|| SplitError::Nexus("cycle entries are 1-based".into()))
                        }),
                        other => Err(SplitError::Nexus(format!("unexpected {other:?} in CYCLE"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                cycle = Some(ids);
            }
            "matrix" => {
                let mut row: Vec<String> = Vec::new();
                for tok in p.command()? {
                    match tok {
                        Token::Word(w) => row.push(w),
                        Token::Comma => rows.push(matrix_row(std::mem::take(&mut row))?),
                        other => return Err(SplitError::Nexus(format!("unexpected {other:?} in MATRIX"))),
                    }
                }
                if !row.is_empty() {
                    rows.push(matrix_row(row)?);
                }
            }
            "end" | "endblock" => {
                p.command()?;
                break;
            }
            _ => {
                p.command()?;
            }
        }
    }
    let residual = p
        .comments
        .iter()
        .find_map(|c| c.trim().strip_prefix("residual="))
        .map(|v| v.parse::<f64>().map_err(|_| SplitError::Nexus(format!("bad residual '{v}'"))))
        .transpose()?
        .unwrap_or(0.0);
    let ntax = ntax.ok_or_else(|| SplitError::Nexus("missing ntax in splits block".into()))?;
    let cycle = cycle.ok_or_else(|| SplitError::Nexus("missing CYCLE".into()))?;
    if cycle.len() != ntax {
        return Err(SplitError::Nexus(format!("CYCLE has {} entries, expected {ntax}", cycle.len())));
    }
    if let Some(m) = nsplits {
        if m != rows.len() {
            return Err(SplitError::Nexus(format!("nsplits={m} but MATRIX has {} rows", rows.len())));
        }
    }
    Ok((ntax, cycle, rows, residual))
}

fn matrix_row(words: Vec<String>) -> Result<(f64, Vec<usize>)> {
    let (weight, taxa) = words
        .split_first()
        .ok_or_else(|| SplitError::Nexus("empty MATRIX row".into()))?;
    let weight: f64 = weight
        .parse()
        .map_err(|_| SplitError::Nexus(format!("bad weight '{weight}'")))?;
    let taxa = taxa
        .iter()
        .map(|w| {
            parse_count(w, "taxon id")
                .and_then(|v| v.checked_sub(1).ok_or_else(|| SplitError::Nexus("taxon ids are 1-based".into())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((weight, taxa))
}

fn split_from_side(taxa: &[usize], positions: &[usize], n: usize) -> Result<CircularSplit> {
    let mut inside = vec![false; n];
    for &t in taxa {
        if t >= n {
            return Err(SplitError::Nexus(format!("taxon id {} out of range", t + 1)));
        }
        inside[positions[t]] = true;
    }
    if inside[0] {
        inside.iter_mut().for_each(|v| *v = !*v);
        if !inside.iter().any(|&v| v) {
            return Err(SplitError::Nexus("split side covers every taxon".into()));
        }
        if inside[1..].iter().all(|&v| v) {
            return CircularSplit::new(0, 0, n);
        }
    }
    let first = inside
        .iter()
        .position(|&v| v)
        .ok_or_else(|| SplitError::Nexus("empty split side".into()))?;
    let last = inside.iter().rposition(|&v| v).expect("non-empty");
    if inside[first..=last].iter().any(|&v| !v) {
        return Err(SplitError::Nexus("split is not circular for the CYCLE".into()));
    }
    CircularSplit::new(first, last, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn structure_of_a_small_document() {
        let split = CircularSplit::new(2, 3, 4).unwrap();
        let sys = WeightedSplitSystem::new(CircularOrdering::identity(4), vec![WeightedSplit { split, weight: 1.0 }], 0.0).unwrap();
        let text = export_nexus(&sys, &labels(&["a", "b", "c", "d"])).unwrap();
        assert!(text.contains("ntax=4"));
        assert!(text.contains("nsplits=1"));
        assert_eq!(text.matches("CYCLE").count(), 1);
    }

    #[test]
    fn empty_system_is_valid() {
        let sys = WeightedSplitSystem::new(CircularOrdering::identity(3), Vec::new(), 0.0).unwrap();
        let text = export_nexus(&sys, &labels(&["a", "b", "c"])).unwrap();
        assert!(text.contains("nsplits=0"));
        let doc = parse_nexus(&text).unwrap();
        assert_eq!(doc.system, sys);
    }

    #[test]
    fn label_count_must_match() {
        let sys = WeightedSplitSystem::new(CircularOrdering::identity(3), Vec::new(), 0.0).unwrap();
        assert_eq!(
            export_nexus(&sys, &labels(&["a", "b"])),
            Err(SplitError::LabelCount { expected: 3, found: 2 })
        );
    }

    #[test]
    fn awkward_labels_are_quoted() {
        assert_eq!(quote("XOM"), "XOM");
        assert_eq!(quote("XCMD-I"), "'XCMD-I'");
        assert_eq!(quote("O'Neil"), "'O''Neil'");
        assert_eq!(quote(""), "''");
    }

    #[test]
    fn trivial_split_of_position_zero_round_trips() {
        let o = CircularOrdering::new(vec![2, 0, 3, 1]).unwrap();
        let splits = vec![
            WeightedSplit { split: CircularSplit::new(0, 0, 4).unwrap(), weight: 0.5 },
            WeightedSplit { split: CircularSplit::new(1, 3, 4).unwrap(), weight: 0.25 },
            WeightedSplit { split: CircularSplit::new(1, 2, 4).unwrap(), weight: 0.125 },
        ];
        let sys = WeightedSplitSystem::new(o, splits, 1e-3).unwrap();
        let names = labels(&["w x", "y", "z", "v"]);
        let doc = parse_nexus(&export_nexus(&sys, &names).unwrap()).unwrap();
        assert_eq!(doc.labels, names);
        assert_eq!(doc.system, sys);
    }

    #[test]
    fn rejects_non_circular_rows() {
        let text = "#NEXUS\nBEGIN taxa;\nDIMENSIONS ntax=4;\nTAXLABELS a b c d;\nEND;\n\
                    BEGIN st_splits;\nDIMENSIONS ntax=4 nsplits=1;\nCYCLE 1 2 3 4;\nMATRIX\n1.0 2 4,\n;\nEND;\n";
        assert!(matches!(parse_nexus(text), Err(SplitError::Nexus(_))));
    }
}
