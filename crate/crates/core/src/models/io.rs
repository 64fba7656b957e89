//! TSSM v1 model files.
//!
//! ```text
//! "TSSM" 0x01
//! <kind> <input_dim> <output_dim> <width_or_degree> <step_scale> <n_params>\n
//! <block name> <offset> <length>\n      (one line per block)
//! \n
//! n_params little-endian f64
//! ```

use std::path::Path;

use super::{Block, Model, ModelKind, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSSM";
const VERSION: u8 = 1;

pub fn serialize(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let params = model.params();
    let mut out = Vec::with_capacity(64 + 8 * params.theta.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(
        format!(
            "{} {} {} {} {} {}\n",
            spec.kind.as_str(),
            spec.input_dim,
            spec.output_dim,
            spec.width_or_degree,
            spec.step_scale,
            params.theta.len()
        )
        .as_bytes(),
    );
    for b in &params.layout {
        out.extend_from_slice(format!("{} {} {}\n", b.name, b.offset, b.len).as_bytes());
    }
    out.push(b'\n');
    for v in &params.theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::format("malformed header: missing TSSM magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported TSSM version {}", bytes[4])));
    }
    let mut pos = 5;
    let header = next_line(bytes, &mut pos)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::format(format!("malformed header line `{header}`")));
    }
    let kind = ModelKind::parse(fields[0]).map_err(|_| Error::format(format!("unknown kind `{}`", fields[0])))?;
    let spec = ModelSpec {
        kind,
        input_dim: parse_field(fields[1])?,
        output_dim: parse_field(fields[2])?,
        width_or_degree: parse_field(fields[3])?,
        step_scale: parse_field(fields[4])?,
    };
    let n_params: usize = parse_field(fields[5])?;
    spec.validate().map_err(|e| Error::format(e.to_string()))?;

    let mut blocks = Vec::new();
    loop {
        let line = next_line(bytes, &mut pos)?;
        if line.is_empty() {
            break;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::format(format!("malformed block line `{line}`")));
        }
        blocks.push(Block { name: f[0].to_string(), offset: parse_field(f[1])?, len: parse_field(f[2])? });
    }
    if blocks != spec.layout() || spec.parameter_count() != n_params {
        return Err(Error::format("block table does not match model kind"));
    }
    let body = &bytes[pos..];
    if body.len() != 8 * n_params {
        return Err(Error::format(format!(
            "length mismatch: expected {} parameter bytes, found {}",
            8 * n_params,
            body.len()
        )));
    }
    let theta: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Model::new(spec, theta).map_err(|e| Error::format(e.to_string()))
}

pub fn write_model_file(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    std::fs::write(path, serialize(model))?;
    Ok(())
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<Model> {
    deserialize(&std::fs::read(path)?)
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format("truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::format("header is not UTF-8"))
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format!("bad header field `{s}`")))
}
