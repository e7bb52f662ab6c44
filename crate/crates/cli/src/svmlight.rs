//! Reading and writing the svmlight / libsvm sparse text format.
//!
//! One sample per line: `<label> <index>:<value> ...` with 1-based, strictly
//! increasing feature indices. Labels `+1`/`1` map to `+1`; `-1` and `0` map
//! to `-1`. Anything after `#` is a comment. Files ending in `.gz` are
//! decompressed transparently.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use dynanewton_core::dataset::{Dataset, DatasetBuilder};
use flate2::read::GzDecoder;

#[derive(Debug, thiserror::Error)]
pub enum SvmlightError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no samples found")]
    Empty,
    #[error(transparent)]
    Dataset(#[from] dynanewton_core::Error),
}

fn parse_label(token: &str) -> Option<f64> {
    match token.parse::<f64>().ok()? {
        v if v == 1.0 => Some(1.0),
        v if v == -1.0 || v == 0.0 => Some(-1.0),
        _ => None,
    }
}

/// Parse svmlight text. `min_dim` widens the feature space, e.g. to match a
/// training file whose highest index is not present in the test file.
pub fn parse<R: BufRead>(reader: R, min_dim: Option<usize>) -> Result<Dataset, SvmlightError> {
    let mut builder = DatasetBuilder::new();
    let mut entries: Vec<(u32, f64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |msg: String| SvmlightError::Parse { line: line_no, msg };
        let line = line.map_err(|e| err(e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_ascii_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label = parse_label(label_tok).ok_or_else(|| err(format!("unsupported label {label_tok:?}")))?;
        entries.clear();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got {tok:?}")))?;
            let idx: u32 = idx.parse().map_err(|_| err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad feature value {val:?}")))?;
            entries.push((idx - 1, val));
        }
        builder
            .push_row(&entries, label)
            .map_err(|e| err(e.to_string()))?;
    }
    if builder.is_empty() {
        return Err(SvmlightError::Empty);
    }
    Ok(builder.build(min_dim)?)
}

/// Read a file, gunzipping it when the name ends in `.gz`.
pub fn read(path: &Path, min_dim: Option<usize>) -> Result<Dataset, SvmlightError> {
    let io_err = |source| SvmlightError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse(BufReader::new(GzDecoder::new(file)), min_dim)
    } else {
        parse(BufReader::new(file), min_dim)
    }
}

/// Write with 1-based indices and `+1`/`-1` labels. Values use the shortest
/// representation that round-trips.
pub fn write<W: Write>(ds: &Dataset, mut out: W) -> io::Result<()> {
    for (row, y) in ds.full().rows() {
        write!(out, "{}", if y > 0.0 { "+1" } else { "-1" })?;
        for (&j, &v) in row.indices.iter().zip(row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_labels_comments_and_indices() {
        let text = "# header\n+1 1:0.5 3:2\n0 2:1 # trailing\n\n-1 4:-1e-3\n";
        let ds = parse(text.as_bytes(), None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[1.0, -1.0, -1.0]);
        assert_eq!(ds.row(0).indices, &[0, 2]);
        assert_eq!(ds.row(0).values, &[0.5, 2.0]);
        assert_eq!(ds.row(2).values, &[-1e-3]);
        assert_eq!(parse("1 1:1\n".as_bytes(), Some(10)).unwrap().dim(), 10);
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("1 1:1\n2 1:1\n", 2),
            ("1 1:1\n1 0:1\n", 2),
            ("1 1:1\n1 1:1\n-1 2=1\n", 3),
            ("1 3:1 2:1\n", 1),
            ("1 1:abc\n", 1),
            ("1 x:1\n", 1),
        ];
        for (text, line) in cases {
            match parse(text.as_bytes(), None) {
                Err(SvmlightError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(matches!(parse("# nothing\n\n".as_bytes(), None), Err(SvmlightError::Empty)));
    }

    #[test]
    fn gzip_files_are_decompressed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.svm.gz");
        let mut gz = flate2::write::GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::fast());
        gz.write_all(b"-1 2:1\n+1 1:1 2:1\n").unwrap();
        gz.finish().unwrap();
        let ds = read(&path, None).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 2));
        assert!(matches!(read(&dir.path().join("missing"), None), Err(SvmlightError::Io { .. })));
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(
            rows in prop::collection::vec(
                (prop::collection::btree_map(0u32..50, -1e3f64..1e3, 0..8), any::<bool>()),
                1..30,
            )
        ) {
            let mut b = DatasetBuilder::new();
            for (entries, pos) in &rows {
                let e: Vec<(u32, f64)> = entries.iter().map(|(&k, &v)| (k, v)).collect();
                b.push_row(&e, if *pos { 1.0 } else { -1.0 }).unwrap();
            }
            let ds = b.build(Some(50)).unwrap();
            let mut buf = Vec::new();
            write(&ds, &mut buf).unwrap();
            let back = parse(buf.as_slice(), Some(50)).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
