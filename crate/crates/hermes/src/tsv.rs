//! Tab-separated inputs: the NDC→ATC3 map and interaction records.
//! Lines starting with `#` are comments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use hermes_core::ddi::DdiRecord;
use hermes_core::ehr::NdcAtcMap;

use crate::error::{io_err, Error, Result};

pub const DDI_HEADER: [&str; 4] = ["atc3_a", "atc3_b", "interaction_type", "severity"];

/// Input with comment lines removed, plus the file line of each kept line
/// so errors can point at the original text.
struct Stripped {
    text: String,
    lines: Vec<usize>,
}

impl Stripped {
    fn read(mut r: impl Read, path: &Path) -> Result<Self> {
        let mut raw = String::new();
        r.read_to_string(&mut raw).map_err(io_err(path))?;
        let (mut text, mut lines) = (String::new(), Vec::new());
        for (i, l) in raw.lines().enumerate() {
            if !l.starts_with('#') {
                text.push_str(l);
                text.push('\n');
                lines.push(i + 1);
            }
        }
        Ok(Stripped { text, lines })
    }

    fn reader(&self, headers: bool) -> csv::Reader<&[u8]> {
        csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(headers)
            .flexible(true)
            .from_reader(self.text.as_bytes())
    }

    fn line(&self, pos: Option<&csv::Position>) -> usize {
        pos.and_then(|p| self.lines.get(p.line() as usize - 1)).copied().unwrap_or(0)
    }

    fn err(&self, path: &Path, e: csv::Error) -> Error {
        Error::Parse { path: path.into(), line: self.line(e.position()), msg: e.to_string() }
    }
}

pub fn load_ndc_map(path: &Path) -> Result<NdcAtcMap> {
    read_ndc_map(File::open(path).map_err(io_err(path))?, path)
}

/// `ndc<TAB>atc3` rows; an optional `ndc atc3` header row is skipped.
pub fn read_ndc_map(r: impl Read, path: &Path) -> Result<NdcAtcMap> {
    let input = Stripped::read(r, path)?;
    let mut map = NdcAtcMap::new();
    for rec in input.reader(false).records() {
        let rec = rec.map_err(|e| input.err(path, e))?;
        let line = input.line(rec.position());
        let parse = |msg: String| Error::Parse { path: path.into(), line, msg };
        if rec.len() != 2 {
            return Err(parse(format!("expected 2 columns, found {}", rec.len())));
        }
        if &rec[0] == "ndc" && &rec[1] == "atc3" {
            continue;
        }
        map.insert(rec[0].trim(), rec[1].trim()).map_err(|e| parse(e.to_string()))?;
    }
    Ok(map)
}

pub fn load_ddi_records(path: &Path) -> Result<Vec<DdiRecord>> {
    read_ddi_records(File::open(path).map_err(io_err(path))?, path)
}

pub fn read_ddi_records(r: impl Read, path: &Path) -> Result<Vec<DdiRecord>> {
    let input = Stripped::read(r, path)?;
    let mut rd = input.reader(true);
    let headers = rd.headers().map_err(|e| input.err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != DDI_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: input.line(headers.position()),
            msg: format!("expected header {:?}", DDI_HEADER.join("\t")),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| input.err(path, e))?;
        let line = input.line(rec.position());
        let parse = |msg: String| Error::Parse { path: path.into(), line, msg };
        if rec.len() != 4 {
            return Err(parse(format!("expected 4 columns, found {}", rec.len())));
        }
        let severity: f64 = rec[3].trim().parse().map_err(|_| parse(format!("bad severity {:?}", &rec[3])))?;
        let r = DdiRecord::new(rec[0].trim(), rec[1].trim(), rec[2].trim(), severity).map_err(|e| parse(e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

pub fn save_ddi_records(path: &Path, records: &[DdiRecord]) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    write_ddi_records(&mut f, records).map_err(io_err(path))
}

pub fn write_ddi_records(mut w: impl Write, records: &[DdiRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", DDI_HEADER.join("\t"))?;
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.atc3_a, r.atc3_b, r.interaction_type, r.severity)?;
    }
    Ok(())
}
