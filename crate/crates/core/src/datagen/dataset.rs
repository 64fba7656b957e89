//! Training datasets and the TSSD v1 file format.
//!
//! ```text
//! "TSSD" 0x01
//! <N> <d_x> <d_y> <seed> <spec_digest>\n
//! N rows of little-endian f64: x (d_x values) then y (d_y values)
//! optional density block:
//!   "RHON" variance truncation_factor amplitude (3 × f64)  N × f64
//! ```

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{estimate_density, KernelSpec};
use crate::models::Surrogate;
use crate::points::Points;

const MAGIC: &[u8; 4] = b"TSSD";
const VERSION: u8 = 1;
const DENSITY_TAG: &[u8; 4] = b"RHON";

/// Immutable training pairs plus optional precomputed sampling densities.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Points,
    labels: Points,
    densities: Option<Vec<f64>>,
    density_kernel: Option<KernelSpec>,
    seed: u64,
    spec_digest: String,
}

impl Dataset {
    pub fn new(inputs: Points, labels: Points) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::invalid(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if inputs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        Ok(Self { inputs, labels, densities: None, density_kernel: None, seed: 0, spec_digest: "none".into() })
    }

    /// Labels every input with `truth`.
    pub fn labeled(inputs: Points, truth: &dyn Surrogate) -> Result<Self> {
        if inputs.dim() != truth.input_dim() {
            return Err(Error::DimensionMismatch { expected: truth.input_dim(), got: inputs.dim() });
        }
        let dy = truth.output_dim();
        let flat: Vec<f64> = (0..inputs.len())
            .into_par_iter()
            .flat_map_iter(|i| truth.eval(inputs.row(i)))
            .collect();
        Self::new(inputs, Points::new(dy, flat)?)
    }

    pub fn with_provenance(mut self, seed: u64, spec_digest: impl Into<String>) -> Self {
        self.seed = seed;
        self.spec_digest = spec_digest.into();
        self
    }

    /// Fills `ρ_N(x_i)` with the KDE of the inputs themselves.
    pub fn with_densities(mut self, kernel: KernelSpec) -> Result<Self> {
        let d = estimate_density(&self.inputs, &self.inputs, &kernel)?;
        self.densities = Some(d.values);
        self.density_kernel = Some(kernel);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn labels(&self) -> &Points {
        &self.labels
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.labels.dim()
    }

    pub fn densities(&self) -> Option<&[f64]> {
        self.densities.as_deref()
    }

    pub fn density_kernel(&self) -> Option<&KernelSpec> {
        self.density_kernel.as_ref()
    }

    pub fn require_densities(&self) -> Result<&[f64]> {
        self.densities().ok_or_else(|| Error::invalid("dataset densities have not been computed"))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec_digest(&self) -> &str {
        &self.spec_digest
    }

    /// `‖f(x_i) - y_i‖²` for every sample.
    pub fn squared_errors(&self, model: &dyn Surrogate) -> Result<Vec<f64>> {
        if model.input_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: model.input_dim() });
        }
        if model.output_dim() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: model.output_dim() });
        }
        Ok((0..self.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; self.output_dim()],
                |out, i| {
                    model.eval_into(self.inputs.row(i), out);
                    out.iter().zip(self.labels.row(i)).map(|(f, y)| (f - y) * (f - y)).sum()
                },
            )
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (dx, dy) = (self.input_dim(), self.output_dim());
        let mut out = Vec::with_capacity(64 + 8 * self.len() * (dx + dy + 1));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(format!("{} {dx} {dy} {} {}\n", self.len(), self.seed, self.spec_digest).as_bytes());
        for i in 0..self.len() {
            for v in self.inputs.row(i).iter().chain(self.labels.row(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let (Some(d), Some(k)) = (&self.densities, &self.density_kernel) {
            out.extend_from_slice(DENSITY_TAG);
            for v in [k.variance, k.truncation_radius_factor, k.amplitude].iter().chain(d) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(Error::format("malformed header: missing TSSD magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(format!("unsupported TSSD version {}", bytes[4])));
        }
        let rest = &bytes[5..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format("truncated header"))?;
        let header = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::format("header is not UTF-8"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::format(format!("malformed header line `{header}`")));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|_| Error::format(format!("bad header field `{s}`")));
        let (n, dx, dy, seed) = (parse(f[0])? as usize, parse(f[1])? as usize, parse(f[2])? as usize, parse(f[3])?);
        if n == 0 || dx == 0 || dy == 0 {
            return Err(Error::format("header dimensions must be positive"));
        }
        let body = &rest[nl + 1..];
        let row_bytes = 8 * (dx + dy);
        if body.len() < n * row_bytes {
            return Err(Error::format(format!("length mismatch: {} rows of {row_bytes} bytes expected", n)));
        }
        let read = |chunk: &[u8]| -> Vec<f64> {
            chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
        };
        let mut xs = Vec::with_capacity(n * dx);
        let mut ys = Vec::with_capacity(n * dy);
        for row in body[..n * row_bytes].chunks_exact(row_bytes) {
            let vals = read(row);
            xs.extend_from_slice(&vals[..dx]);
            ys.extend_from_slice(&vals[dx..]);
        }
        let mut ds = Self::new(Points::new(dx, xs)?, Points::new(dy, ys)?)?.with_provenance(seed, f[4]);
        let tail = &body[n * row_bytes..];
        if !tail.is_empty() {
            if tail.len() != 4 + 8 * (3 + n) || &tail[..4] != DENSITY_TAG {
                return Err(Error::format("malformed density block"));
            }
            let vals = read(&tail[4..]);
            let kernel = KernelSpec { variance: vals[0], truncation_radius_factor: vals[1], amplitude: vals[2] };
            kernel.validate().map_err(|e| Error::format(e.to_string()))?;
            ds.densities = Some(vals[3..].to_vec());
            ds.density_kernel = Some(kernel);
        }
        Ok(ds)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// CSV export with header `x0..,y0..`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let names: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.output_dim()).map(|i| format!("y{i}")))
            .collect();
        writeln!(w, "{}", names.join(","))?;
        for i in 0..self.len() {
            let vals: Vec<String> =
                self.inputs.row(i).iter().chain(self.labels.row(i)).map(|v| v.to_string()).collect();
            writeln!(w, "{}", vals.join(","))?;
        }
        Ok(())
    }
}
