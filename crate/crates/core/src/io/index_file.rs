//! Assignment index as text: a header line, then
//! `item_id,coarse,fine,score,via` per item, sorted by item id. A missing
//! coarse code is written as `-`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::assignment::{AssignVia, Assignment, AssignmentIndex};
use crate::error::{Error, Result};

const HEADER: &str = "item_id,coarse,fine,score,via";

pub fn write_index<W: Write>(w: &mut W, index: &AssignmentIndex) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for (id, a) in index.entries() {
        match a.coarse {
            Some(c) => write!(w, "{id},{c},")?,
            None => write!(w, "{id},-,")?,
        }
        writeln!(w, "{},{},{}", a.fine, a.score, a.via.as_str())?;
    }
    Ok(())
}

pub fn save_index(path: &Path, index: &AssignmentIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_index(&mut w, index)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<AssignmentIndex> {
    let reader = BufReader::new(File::open(path)?);
    let mut index = AssignmentIndex::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let err = |cause: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            cause,
        };
        if i == 0 {
            if line.trim() != HEADER {
                return Err(err(format!("expected header {HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let id: u64 = f[0].parse().map_err(|e| err(format!("item_id: {e}")))?;
        let coarse = match f[1] {
            "-" => None,
            c => Some(c.parse().map_err(|e| err(format!("coarse: {e}")))?),
        };
        let fine = f[2].parse().map_err(|e| err(format!("fine: {e}")))?;
        let score = f[3].parse().map_err(|e| err(format!("score: {e}")))?;
        let via = AssignVia::parse(f[4]).ok_or_else(|| err(format!("unknown via {:?}", f[4])))?;
        index.insert(
            id,
            Assignment {
                coarse,
                fine,
                score,
                via,
            },
        );
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut idx = AssignmentIndex::new();
        idx.assign(5, 2, 0.91, AssignVia::Matched);
        idx.assign(1, 0, 1.0 / 3.0, AssignVia::Founded);
        idx.insert(
            9,
            Assignment {
                coarse: Some(4),
                fine: 3,
                score: -0.25,
                via: AssignVia::Nearest,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.csv");
        save_index(&p, &idx).unwrap();
        let back = load_index(&p).unwrap();
        assert_eq!(back.entries(), idx.entries());
        assert!(back.is_consistent());
    }

    #[test]
    fn bad_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.csv");
        std::fs::write(&p, format!("{HEADER}\n1,-,0,0.5,matched\n2,-,0,0.5,bogus\n")).unwrap();
        match load_index(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
