//! Text checkpoint format for the fused model.
//!
//! ```text
//! SAFELOC-CHECKPOINT v1
//! input_dim <n>
//! num_rps <n>
//! hidden <h0> <h1> <h2>
//! tensor <name> <rows> <cols>
//! <cols hex-encoded f32 bit patterns per row>
//! ```
//!
//! Values are stored as `f32::to_bits` hex so saves and loads are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fused::{FusedParams, NamedTensor};

const MAGIC: &str = "SAFELOC-CHECKPOINT v1";

pub fn save_checkpoint(params: &FusedParams, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "input_dim {}", params.input_dim())?;
    writeln!(w, "num_rps {}", params.num_rps())?;
    let h = params.hidden();
    writeln!(w, "hidden {} {} {}", h[0], h[1], h[2])?;
    for tensor in params.to_named_tensors() {
        writeln!(w, "tensor {} {} {}", tensor.name, tensor.rows, tensor.cols)?;
        for row in tensor.data.chunks(tensor.cols) {
            let mut first = true;
            for &v in row {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{:08x}", v.to_bits())?;
                first = false;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn schema_err(message: impl Into<String>) -> Error {
    Error::Schema(message.into())
}

fn parse_usize(token: Option<&str>, what: &str) -> Result<usize> {
    token
        .ok_or_else(|| schema_err(format!("missing {what}")))?
        .parse()
        .map_err(|e| schema_err(format!("bad {what}: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<FusedParams> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| schema_err("truncated checkpoint"))?
            .map_err(Error::from)
    };

    if next_line()? != MAGIC {
        return Err(schema_err("bad checkpoint magic"));
    }
    let header_value = |line: String, key: &str| -> Result<Vec<String>> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(schema_err(format!("expected '{key}' header")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let input_dim = parse_usize(
        header_value(next_line()?, "input_dim")?
            .first()
            .map(String::as_str),
        "input_dim",
    )?;
    let num_rps = parse_usize(
        header_value(next_line()?, "num_rps")?
            .first()
            .map(String::as_str),
        "num_rps",
    )?;
    let hidden_tokens = header_value(next_line()?, "hidden")?;
    if hidden_tokens.len() != 3 {
        return Err(schema_err("hidden header must carry 3 sizes"));
    }
    let mut hidden = [0usize; 3];
    for (slot, token) in hidden.iter_mut().zip(&hidden_tokens) {
        *slot = parse_usize(Some(token), "hidden size")?;
    }

    let mut tensors = Vec::new();
    while let Some(line) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(schema_err(format!("expected tensor header, got '{line}'")));
        }
        let name = parts
            .next()
            .ok_or_else(|| schema_err("tensor header missing name"))?
            .to_string();
        let rows = parse_usize(parts.next(), "tensor rows")?;
        let cols = parse_usize(parts.next(), "tensor cols")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines
                .next()
                .ok_or_else(|| schema_err("truncated tensor data"))??;
            for token in row.split_whitespace() {
                let bits = u32::from_str_radix(token, 16)
                    .map_err(|e| schema_err(format!("bad f32 bits '{token}': {e}")))?;
                data.push(f32::from_bits(bits));
            }
        }
        if data.len() != rows * cols {
            return Err(schema_err(format!(
                "tensor {name}: expected {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        tensors.push(NamedTensor {
            name,
            rows,
            cols,
            data,
        });
    }
    FusedParams::from_named_tensors(input_dim, num_rps, hidden, &tensors)
}
