//! Samplers, ground-truth labelers and dataset construction.

mod dataset;
pub mod truth;

use sha2::{Digest, Sha256};

pub use dataset::Dataset;
pub use truth::{
    energy, energy_and_gradient, lorenz_flow_map, pendulum_acceleration, LorenzFlowMap, NegAbsolute,
    NegEnergyGradient, PendulumAcceleration,
};

use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::Points;
use crate::rng::SeedStream;

/// Sampling measure for training inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplingSpec {
    /// Independent uniform coordinates, optionally clipped afterwards.
    Uniform { lower: Vec<f64>, upper: Vec<f64>, clip: Option<(Vec<f64>, Vec<f64>)> },
    /// Per-sample Bernoulli(`alpha`) choice between `near` (true) and `base`.
    Mixture { alpha: f64, base: Box<SamplingSpec>, near: Box<SamplingSpec> },
    /// A uniformly chosen node plus isotropic Gaussian noise.
    KernelPerturbedSupport { nodes: Points, variance: f64 },
    /// Euler-Maruyama on `dx = -∇E dt + sqrt(2 T) dW` for the double-well energy.
    Langevin { start: Vec<f64>, temperature: f64, dt: f64, burn_in: usize, thinning: usize },
}

impl SamplingSpec {
    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        SamplingSpec::Uniform { lower, upper, clip: None }
    }

    pub fn mixture(alpha: f64, base: SamplingSpec, near: SamplingSpec) -> Self {
        SamplingSpec::Mixture { alpha, base: Box::new(base), near: Box::new(near) }
    }

    /// Langevin chain from `x_A = (1, 0, 0)` with dt 1e-3, burn-in 1e4, thinning 10.
    pub fn langevin(temperature: f64) -> Self {
        SamplingSpec::Langevin { start: vec![1.0, 0.0, 0.0], temperature, dt: 1e-3, burn_in: 10_000, thinning: 10 }
    }

    pub fn dim(&self) -> usize {
        match self {
            SamplingSpec::Uniform { lower, .. } => lower.len(),
            SamplingSpec::Mixture { base, .. } => base.dim(),
            SamplingSpec::KernelPerturbedSupport { nodes, .. } => nodes.dim(),
            SamplingSpec::Langevin { start, .. } => start.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SamplingSpec::Uniform { .. } => "uniform",
            SamplingSpec::Mixture { .. } => "mixture",
            SamplingSpec::KernelPerturbedSupport { .. } => "perturbed",
            SamplingSpec::Langevin { .. } => "langevin",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingSpec::Uniform { lower, upper, clip } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::invalid("uniform bounds must be non-empty and of equal length"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::invalid("uniform bounds need lower < upper per coordinate"));
                }
                if let Some((cl, cu)) = clip {
                    if cl.len() != lower.len() || cu.len() != lower.len() || cl.iter().zip(cu).any(|(l, u)| l > u) {
                        return Err(Error::invalid("clip bounds must match dimension with lower <= upper"));
                    }
                }
            }
            SamplingSpec::Mixture { alpha, base, near } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::invalid(format!("mixture weight {alpha} outside [0, 1]")));
                }
                base.validate()?;
                near.validate()?;
                if base.dim() != near.dim() {
                    return Err(Error::DimensionMismatch { expected: base.dim(), got: near.dim() });
                }
            }
            SamplingSpec::KernelPerturbedSupport { nodes, variance } => {
                if nodes.is_empty() {
                    return Err(Error::invalid("perturbed sampler needs at least one node"));
                }
                if !(*variance > 0.0) || !variance.is_finite() {
                    return Err(Error::invalid("perturbation variance must be positive"));
                }
            }
            SamplingSpec::Langevin { start, temperature, dt, thinning, .. } => {
                if start.len() != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: start.len() });
                }
                if !(*temperature > 0.0) || !(*dt > 0.0) || *thinning == 0 {
                    return Err(Error::invalid("Langevin needs positive temperature, dt and thinning"));
                }
            }
        }
        Ok(())
    }

    /// `<kind>:<first 16 hex digits of sha256>` over a canonical description.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.feed(&mut h);
        let hex = hex::encode(h.finalize());
        format!("{}:{}", self.kind_name(), &hex[..16])
    }

    fn feed(&self, h: &mut Sha256) {
        let floats = |h: &mut Sha256, v: &[f64]| {
            h.update((v.len() as u64).to_le_bytes());
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        h.update(self.kind_name().as_bytes());
        match self {
            SamplingSpec::Uniform { lower, upper, clip } => {
                floats(h, lower);
                floats(h, upper);
                if let Some((cl, cu)) = clip {
                    h.update(b"clip");
                    floats(h, cl);
                    floats(h, cu);
                }
            }
            SamplingSpec::Mixture { alpha, base, near } => {
                floats(h, &[*alpha]);
                base.feed(h);
                near.feed(h);
            }
            SamplingSpec::KernelPerturbedSupport { nodes, variance } => {
                h.update((nodes.dim() as u64).to_le_bytes());
                floats(h, nodes.as_flat());
                floats(h, &[*variance]);
            }
            SamplingSpec::Langevin { start, temperature, dt, burn_in, thinning } => {
                floats(h, start);
                floats(h, &[*temperature, *dt]);
                h.update((*burn_in as u64).to_le_bytes());
                h.update((*thinning as u64).to_le_bytes());
            }
        }
    }
}

/// Ground truth used to label sampled inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Labeler {
    LorenzFlowMap { tau: f64, substeps: usize },
    PendulumAccel,
    NegEnergyGrad,
    NegAbs { slope: f64 },
}

impl Labeler {
    pub fn truth(&self) -> Box<dyn Surrogate> {
        match *self {
            Labeler::LorenzFlowMap { tau, substeps } => Box::new(LorenzFlowMap { tau, substeps }),
            Labeler::PendulumAccel => Box::new(PendulumAcceleration),
            Labeler::NegEnergyGrad => Box::new(NegEnergyGradient),
            Labeler::NegAbs { slope } => Box::new(NegAbsolute { slope }),
        }
    }
}

fn child_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n` inputs from `spec`. Bit-exact for a given seed.
pub fn sample(spec: &SamplingSpec, n: usize, seed: u64) -> Result<Points> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    spec.validate()?;
    Ok(draw(spec, n, seed))
}

fn draw(spec: &SamplingSpec, n: usize, seed: u64) -> Points {
    let mut out = Points::with_capacity(spec.dim(), n);
    match spec {
        SamplingSpec::Uniform { lower, upper, clip } => {
            let mut rng = SeedStream::new(seed);
            let mut row = vec![0.0; lower.len()];
            for _ in 0..n {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = rng.uniform_in(lower[k], upper[k]);
                    if let Some((cl, cu)) = clip {
                        *r = r.clamp(cl[k], cu[k]);
                    }
                }
                out.push(&row).expect("row dim");
            }
        }
        SamplingSpec::Mixture { alpha, base, near } => {
            let mut rng = SeedStream::substream(seed, 1);
            let pick: Vec<bool> = (0..n).map(|_| rng.uniform() < *alpha).collect();
            let n_near = pick.iter().filter(|&&b| b).count();
            let from_near = if n_near > 0 { Some(draw(near, n_near, child_seed(seed, 2))) } else { None };
            let from_base = if n_near < n { Some(draw(base, n - n_near, child_seed(seed, 3))) } else { None };
            let (mut i_near, mut i_base) = (0, 0);
            for &b in &pick {
                if b {
                    out.push(from_near.as_ref().expect("near draws").row(i_near)).expect("row dim");
                    i_near += 1;
                } else {
                    out.push(from_base.as_ref().expect("base draws").row(i_base)).expect("row dim");
                    i_base += 1;
                }
            }
        }
        SamplingSpec::KernelPerturbedSupport { nodes, variance } => {
            let mut rng = SeedStream::new(seed);
            let sd = variance.sqrt();
            let mut row = vec![0.0; nodes.dim()];
            for _ in 0..n {
                let node = nodes.row(rng.below(nodes.len()));
                for (r, c) in row.iter_mut().zip(node) {
                    *r = c + sd * rng.normal();
                }
                out.push(&row).expect("row dim");
            }
        }
        SamplingSpec::Langevin { start, temperature, dt, burn_in, thinning } => {
            let mut rng = SeedStream::new(seed);
            let noise = (2.0 * temperature * dt).sqrt();
            let mut x = [start[0], start[1], start[2]];
            let mut step = |x: &mut [f64; 3]| {
                let (_, g) = energy_and_gradient(x);
                for k in 0..3 {
                    x[k] += -g[k] * dt + noise * rng.normal();
                }
            };
            for _ in 0..*burn_in {
                step(&mut x);
            }
            for _ in 0..n {
                for _ in 0..*thinning {
                    step(&mut x);
                }
                out.push(&x).expect("row dim");
            }
        }
    }
    out
}

/// Samples inputs, labels them with the named ground truth and records provenance.
pub fn build_dataset(spec: &SamplingSpec, n: usize, labeler: Labeler, seed: u64) -> Result<Dataset> {
    let truth = labeler.truth();
    if spec.dim() != truth.input_dim() {
        return Err(Error::DimensionMismatch { expected: truth.input_dim(), got: spec.dim() });
    }
    let inputs = sample(spec, n, seed)?;
    Ok(Dataset::labeled(inputs, truth.as_ref())?.with_provenance(seed, spec.digest()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_zero_mixture_equals_base_component() {
        let base = SamplingSpec::uniform(vec![0.0, 0.0], vec![1.0, 1.0]);
        let near = SamplingSpec::uniform(vec![5.0, 5.0], vec![6.0, 6.0]);
        let pts = sample(&SamplingSpec::mixture(0.0, base, near), 500, 3).unwrap();
        assert!(pts.rows().all(|r| r.iter().all(|v| (0.0..1.0).contains(v))));
    }

    #[test]
    fn mixture_fraction_is_roughly_alpha() {
        let base = SamplingSpec::uniform(vec![0.0], vec![1.0]);
        let near = SamplingSpec::uniform(vec![5.0], vec![6.0]);
        let pts = sample(&SamplingSpec::mixture(0.3, base, near), 20_000, 9).unwrap();
        let frac = pts.rows().filter(|r| r[0] > 2.0).count() as f64 / 20_000.0;
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }

    #[test]
    fn clipped_control_has_atoms_at_bounds() {
        let spec = SamplingSpec::Uniform {
            lower: vec![-1.0, -1.0, -11.0],
            upper: vec![1.0, 1.0, 11.0],
            clip: Some((vec![f64::NEG_INFINITY; 2].into_iter().chain([-10.0]).collect(), vec![
                f64::INFINITY,
                f64::INFINITY,
                10.0,
            ])),
        };
        let pts = sample(&spec, 5000, 1).unwrap();
        assert!(pts.rows().all(|r| (-10.0..=10.0).contains(&r[2])));
        assert!(pts.rows().any(|r| r[2] == 10.0));
        assert!(pts.rows().any(|r| r[2] == -10.0));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = SamplingSpec::mixture(
            0.5,
            SamplingSpec::uniform(vec![-1.0; 3], vec![1.0; 3]),
            SamplingSpec::KernelPerturbedSupport {
                nodes: Points::from_rows(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap(),
                variance: 0.01,
            },
        );
        assert_eq!(sample(&spec, 300, 77).unwrap(), sample(&spec, 300, 77).unwrap());
        assert_ne!(sample(&spec, 300, 77).unwrap(), sample(&spec, 300, 78).unwrap());
        let l = SamplingSpec::Langevin { start: vec![1.0, 0.0, 0.0], temperature: 0.5, dt: 1e-3, burn_in: 10, thinning: 2 };
        assert_eq!(sample(&l, 100, 5).unwrap(), sample(&l, 100, 5).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(sample(&SamplingSpec::uniform(vec![1.0], vec![0.0]), 3, 0).is_err());
        let bad = SamplingSpec::mixture(
            1.5,
            SamplingSpec::uniform(vec![0.0], vec![1.0]),
            SamplingSpec::uniform(vec![0.0], vec![1.0]),
        );
        assert!(sample(&bad, 3, 0).is_err());
        assert!(sample(&SamplingSpec::uniform(vec![0.0], vec![1.0]), 0, 0).is_err());
    }

    #[test]
    fn digest_tracks_spec() {
        let a = SamplingSpec::uniform(vec![0.0], vec![1.0]);
        let b = SamplingSpec::uniform(vec![0.0], vec![2.0]);
        assert!(a.digest().starts_with("uniform:"));
        assert_eq!(a.digest().len(), "uniform:".len() + 16);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn build_labels_with_truth() {
        let spec = SamplingSpec::uniform(vec![-1.0; 3], vec![1.0; 3]);
        let ds = build_dataset(&spec, 50, Labeler::PendulumAccel, 2).unwrap();
        for i in 0..ds.len() {
            let x = ds.inputs().row(i);
            assert_eq!(ds.labels().row(i)[0], pendulum_acceleration(x[0], x[1], x[2]));
        }
        assert_eq!(ds.spec_digest(), spec.digest());
    }
}
