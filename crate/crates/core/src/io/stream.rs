//! Text stream format: one item per line,
//! `item_id,tag,popularity,e_1,...,e_d`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::ItemRecord;

/// Streaming reader over a stream file. Blank lines are skipped.
pub struct StreamReader<R> {
    reader: R,
    path: PathBuf,
    dim: Option<usize>,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    /// `dim` of `None` accepts any dimension but still requires every line to
    /// agree with the first.
    pub fn new(reader: R, path: impl Into<PathBuf>, dim: Option<usize>) -> Self {
        Self {
            reader,
            path: path.into(),
            dim,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn parse_error(&self, cause: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            cause: cause.into(),
        }
    }

    fn parse_line(&mut self) -> Result<ItemRecord> {
        let line = self.buf.trim_end_matches(['\n', '\r']);
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .map(str::trim)
                .ok_or_else(|| format!("missing {name}"))
        };
        let parsed: std::result::Result<(u64, u32, u64), String> = (|| {
            let id = next("item_id")?;
            let id = id.parse().map_err(|e| format!("item_id {id:?}: {e}"))?;
            let tag = next("tag")?;
            let tag = tag.parse().map_err(|e| format!("tag {tag:?}: {e}"))?;
            let pop = next("popularity")?;
            let pop = pop.parse().map_err(|e| format!("popularity {pop:?}: {e}"))?;
            Ok((id, tag, pop))
        })();
        let (item_id, tag, popularity) = parsed.map_err(|c| self.parse_error(c))?;
        let mut embedding = Vec::with_capacity(self.dim.unwrap_or(0));
        for (j, f) in fields.enumerate() {
            let f = f.trim();
            let x: f64 = f
                .parse()
                .map_err(|e| self.parse_error(format!("embedding[{j}] {f:?}: {e}")))?;
            if !x.is_finite() {
                return Err(self.parse_error(format!("embedding[{j}] is not finite")));
            }
            embedding.push(x);
        }
        match self.dim {
            Some(d) if d != embedding.len() => {
                return Err(self.parse_error(format!(
                    "expected {d} embedding values, found {}",
                    embedding.len()
                )))
            }
            None => self.dim = Some(embedding.len()),
            _ => {}
        }
        if embedding.is_empty() {
            return Err(self.parse_error("record has no embedding values"));
        }
        Ok(ItemRecord {
            item_id,
            embedding,
            tag,
            popularity,
        })
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<ItemRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    if self.buf.trim().is_empty() {
                        continue;
                    }
                    return Some(self.parse_line());
                }
                Err(e) => {
                    self.line_no += 1;
                    return Some(Err(self.parse_error(e.to_string())));
                }
            }
        }
    }
}

pub fn load_stream(path: &Path, dim: Option<usize>) -> Result<StreamReader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(StreamReader::new(BufReader::new(file), path, dim))
}

pub fn write_record<W: Write>(w: &mut W, r: &ItemRecord) -> std::io::Result<()> {
    write!(w, "{},{},{}", r.item_id, r.tag, r.popularity)?;
    for x in &r.embedding {
        write!(w, ",{x}")?;
    }
    writeln!(w)
}

pub fn save_stream<'a>(path: &Path, records: impl IntoIterator<Item = &'a ItemRecord>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth sidecar: `item_id,cluster_id` per line.
pub fn write_truth<W: Write>(w: &mut W, item_id: u64, cluster: u32) -> std::io::Result<()> {
    writeln!(w, "{item_id},{cluster}")
}

pub fn read_truth(path: &Path) -> Result<Vec<(u64, u32)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |cause: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            cause,
        };
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| err("expected item_id,cluster_id".into()))?;
        let id = a.trim().parse().map_err(|e| err(format!("item_id: {e}")))?;
        let c = b.trim().parse().map_err(|e| err(format!("cluster_id: {e}")))?;
        out.push((id, c));
    }
    Ok(out)
}
