//! IP-pair trace files.
//!
//! Binary form: 12-byte little-endian records `slice: u32, hip: u32, oip: u32`.
//! Text form: one `slice,src,dst` line per record, addresses in dotted quad
//! (plain integers are accepted on input). Lines starting with `#` are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceRecord {
    pub slice: u32,
    pub hip: u32,
    pub oip: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Text,
}

impl TraceFormat {
    /// `.txt` and `.csv` are text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("csv") => TraceFormat::Text,
            _ => TraceFormat::Binary,
        }
    }
}

pub fn encode_binary(records: &[TraceRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.extend_from_slice(&r.slice.to_le_bytes());
        out.extend_from_slice(&r.hip.to_le_bytes());
        out.extend_from_slice(&r.oip.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<TraceRecord>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Data(format!(
            "binary trace length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(RECORD_BYTES)
        .map(|c| {
            let word = |i: usize| u32::from_le_bytes(c[i..i + 4].try_into().unwrap());
            TraceRecord {
                slice: word(0),
                hip: word(4),
                oip: word(8),
            }
        })
        .collect())
}

pub fn write_text(mut w: impl Write, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        writeln!(
            w,
            "{},{},{}",
            r.slice,
            Ipv4Addr::from(r.hip),
            Ipv4Addr::from(r.oip)
        )?;
    }
    Ok(())
}

fn parse_addr(field: &str, line: usize) -> Result<u32> {
    let field = field.trim();
    field
        .parse::<Ipv4Addr>()
        .map(u32::from)
        .or_else(|_| field.parse::<u32>())
        .map_err(|_| Error::Data(format!("line {line}: bad address {field:?}")))
}

pub fn read_text(r: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "line {}: expected slice,src,dst",
                i + 1
            )));
        }
        let slice = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad slice {:?}", i + 1, fields[0])))?;
        out.push(TraceRecord {
            slice,
            hip: parse_addr(fields[1], i + 1)?,
            oip: parse_addr(fields[2], i + 1)?,
        });
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    match TraceFormat::from_path(path) {
        TraceFormat::Text => read_text(BufReader::new(File::open(path)?)),
        TraceFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            decode_binary(&bytes)
        }
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match TraceFormat::from_path(path) {
        TraceFormat::Text => write_text(&mut w, records)?,
        TraceFormat::Binary => w.write_all(&encode_binary(records))?,
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_and_text_round_trip(recs in proptest::collection::vec((any::<u32>(), any::<u32>(), any::<u32>()), 0..50)) {
            let recs: Vec<TraceRecord> = recs.into_iter().map(|(slice, hip, oip)| TraceRecord { slice, hip, oip }).collect();
            prop_assert_eq!(decode_binary(&encode_binary(&recs)).unwrap(), recs.clone());
            let mut text = Vec::new();
            write_text(&mut text, &recs).unwrap();
            prop_assert_eq!(read_text(&text[..]).unwrap(), recs);
        }
    }

    #[test]
    fn binary_layout_is_little_endian() {
        let b = encode_binary(&[TraceRecord {
            slice: 1,
            hip: 0x0a000001,
            oip: 0xc0a80001,
        }]);
        assert_eq!(b, [1, 0, 0, 0, 1, 0, 0, 10, 1, 0, 168, 192]);
        assert!(decode_binary(&b[..11]).is_err());
    }

    #[test]
    fn text_accepts_integers_and_comments() {
        let t = "# header\n3,10.0.0.1,167772162\n\n";
        let r = read_text(t.as_bytes()).unwrap();
        assert_eq!(
            r,
            vec![TraceRecord {
                slice: 3,
                hip: 0x0a000001,
                oip: 0x0a000002
            }]
        );
        assert!(read_text("1,2".as_bytes()).is_err());
        assert!(read_text("x,1,2".as_bytes()).is_err());
        assert!(read_text("1,1.2.3.400,2".as_bytes()).is_err());
    }
}
