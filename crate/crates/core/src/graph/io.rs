//! Whitespace-separated text format for graphs.
//!
//! `edges.txt` holds one `u v` pair per line; `features.txt` holds one row of
//! reals per node, node `i` on data line `i`. Blank lines and lines starting
//! with `#` are skipped. Reals are written in shortest round-trip form, so
//! save followed by load reproduces the graph bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};

pub(crate) fn data_lines<'s, R: BufRead + 's>(
    reader: R,
    source: &'s str,
) -> impl Iterator<Item = Result<(usize, String)>> + 's {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Err(e) => Some(Err(Error::format(
            format!("{source}:{}", i + 1),
            e.to_string(),
        ))),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
    })
}

pub(crate) fn parse_matrix<R: BufRead>(reader: R, source: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for line in data_lines(reader, source) {
        let (lineno, text) = line?;
        let loc = || format!("{source}:{lineno}");
        let before = data.len();
        for tok in text.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::format(loc(), format!("'{tok}' is not a real number")))?;
            if !x.is_finite() {
                return Err(Error::format(loc(), format!("non-finite value '{tok}'")));
            }
            data.push(x);
        }
        let width = data.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::format(
                    loc(),
                    format!("ragged row: {width} values, expected {d}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, dim.unwrap_or(0)), data)
        .map_err(|e| Error::format(source, e.to_string()))
}

pub(crate) fn parse_usize(tok: &str, loc: impl Fn() -> String) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::format(loc(), format!("'{tok}' is not a non-negative integer")))
}

pub(crate) fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        let mut first = true;
        for x in row {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{x:?}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a graph from edge and feature readers.
pub fn read_graph<E: BufRead, F: BufRead>(edges: E, features: F) -> Result<Graph> {
    let features = parse_matrix(features, "features")?;
    let mut pairs = Vec::new();
    for line in data_lines(edges, "edges") {
        let (lineno, text) = line?;
        let loc = || format!("edges:{lineno}");
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::format(loc(), "expected two node ids"));
        }
        pairs.push((parse_usize(toks[0], loc)?, parse_usize(toks[1], loc)?));
    }
    Graph::new(&pairs, features)
}

pub fn load_graph(edge_path: impl AsRef<Path>, feature_path: impl AsRef<Path>) -> Result<Graph> {
    let (ep, fp) = (edge_path.as_ref(), feature_path.as_ref());
    let e = File::open(ep).map_err(|e| Error::io(ep, e))?;
    let f = File::open(fp).map_err(|e| Error::io(fp, e))?;
    read_graph(BufReader::new(e), BufReader::new(f))
}

pub fn write_graph<E: Write, F: Write>(g: &Graph, mut edges: E, features: F) -> std::io::Result<()> {
    for (u, v) in g.edges() {
        writeln!(edges, "{u} {v}")?;
    }
    write_matrix(features, g.features())
}

pub fn save_graph(
    g: &Graph,
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
) -> Result<()> {
    let (ep, fp) = (edge_path.as_ref(), feature_path.as_ref());
    let e = File::create(ep).map_err(|e| Error::io(ep, e))?;
    let f = File::create(fp).map_err(|e| Error::io(fp, e))?;
    let mut ew = BufWriter::new(e);
    let mut fw = BufWriter::new(f);
    write_graph(g, &mut ew, &mut fw).map_err(|e| Error::io(ep, e))?;
    ew.flush().map_err(|e| Error::io(ep, e))?;
    fw.flush().map_err(|e| Error::io(fp, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_rejected() {
        let err = read_graph("".as_bytes(), "1 2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn non_finite_rejected() {
        let err = read_graph("".as_bytes(), "1 inf\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn out_of_range_is_load_error() {
        let err = read_graph("0 5\n".as_bytes(), "0\n0\n0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
    }

    #[test]
    fn directed_input_symmetrized() {
        let g = read_graph("0 1\n2 1\n".as_bytes(), "0\n0\n0\n".as_bytes()).unwrap();
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = read_graph(
            "0 1\n1 2\n2 2\n".as_bytes(),
            "0.1 -3e-17\n1.0000000000000002 2\n5 6\n".as_bytes(),
        )
        .unwrap();
        let (mut e, mut f) = (Vec::new(), Vec::new());
        write_graph(&g, &mut e, &mut f).unwrap();
        let g2 = read_graph(e.as_slice(), f.as_slice()).unwrap();
        assert_eq!(g, g2);
        let (mut e2, mut f2) = (Vec::new(), Vec::new());
        write_graph(&g2, &mut e2, &mut f2).unwrap();
        assert_eq!(e, e2);
        assert_eq!(f, f2);
    }
}
