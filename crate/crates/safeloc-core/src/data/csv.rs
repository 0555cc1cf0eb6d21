//! CSV fingerprint files.
//!
//! Layout (header required):
//! `building_id,device_id,rp_index,x_m,y_m,rss_0,...,rss_{k-1}`
//! with RSS in dBm and -100 meaning "AP not visible". Values outside
//! `[-100, 0]` are clamped on ingest and counted.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{denormalize, normalize_dbm, FingerprintSet, RSS_CEIL_DBM, RSS_FLOOR_DBM};
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

#[derive(Debug)]
pub struct IngestOutcome {
    pub set: FingerprintSet,
    /// Number of RSS values clamped into [-100, 0] while parsing.
    pub clamped_values: usize,
}

pub fn export_csv(set: &FingerprintSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "building_id,device_id,rp_index,x_m,y_m")?;
    for ap in 0..set.features.cols() {
        write!(w, ",rss_{ap}")?;
    }
    writeln!(w)?;
    for (r, &label) in set.labels.iter().enumerate() {
        let (x, y) = set.rp_coords[label];
        write!(w, "{},{},{label},{x},{y}", set.building_id, set.device_id)?;
        for &feature in set.features.row(r) {
            write!(w, ",{}", denormalize(feature))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ingest_csv(path: &Path) -> Result<IngestOutcome> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file".into()))?;
    let header = header?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 6 || columns[..5] != ["building_id", "device_id", "rp_index", "x_m", "y_m"] {
        return Err(Error::Schema(format!("unexpected header: {header}")));
    }
    let num_aps = columns.len() - 5;

    let mut building_id = String::new();
    let mut device_id = String::new();
    let mut labels = Vec::new();
    let mut coords: Vec<Option<(f32, f32)>> = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let mut clamped = 0usize;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Schema(format!(
                "line {line_no}: expected {} columns, got {}",
                columns.len(),
                fields.len()
            )));
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if building_id.is_empty() {
            building_id = fields[0].to_string();
            device_id = fields[1].to_string();
        }
        let rp: usize = fields[2]
            .parse()
            .map_err(|e| parse_err(format!("rp_index: {e}")))?;
        let x: f32 = fields[3]
            .parse()
            .map_err(|e| parse_err(format!("x_m: {e}")))?;
        let y: f32 = fields[4]
            .parse()
            .map_err(|e| parse_err(format!("y_m: {e}")))?;
        if coords.len() <= rp {
            coords.resize(rp + 1, None);
        }
        if coords[rp].is_none() {
            coords[rp] = Some((x, y));
        }
        labels.push(rp);
        for (ap, field) in fields[5..].iter().enumerate() {
            let rss: f64 = field
                .parse()
                .map_err(|e| parse_err(format!("rss_{ap}: {e}")))?;
            let value = rss.clamp(RSS_FLOOR_DBM, RSS_CEIL_DBM);
            if value != rss {
                clamped += 1;
            }
            data.push(normalize_dbm(value));
        }
    }

    let rp_coords: Vec<(f32, f32)> = coords
        .into_iter()
        .enumerate()
        .map(|(rp, c)| c.ok_or_else(|| Error::Schema(format!("no row for rp_index {rp}"))))
        .collect::<Result<_>>()?;
    let rows = labels.len();
    let set = FingerprintSet {
        features: DenseMatrix::from_vec(rows, num_aps, data)?,
        labels,
        rp_coords,
        building_id,
        device_id,
    };
    set.validate()?;
    Ok(IngestOutcome {
        set,
        clamped_values: clamped,
    })
}
