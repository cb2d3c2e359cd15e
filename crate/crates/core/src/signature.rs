//! Individual motor signatures: velocity histograms on a uniform grid, the
//! earth mover's distance between them, and cyclic playback of a recorded
//! velocity series as the desired-velocity reference.
//!
//! Mass is treated as uniformly spread inside each bin, so the CDF is
//! piecewise linear between bin edges and the EMD integral is evaluated
//! exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VpError};

pub const SIGNATURE_VERSION: u32 = 1;
pub const DEFAULT_BINS: usize = 101;
pub const DEFAULT_RANGE: (f64, f64) = (-3.0, 3.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    bin_edges: Vec<f64>,
    mass: Vec<f64>,
    cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SignatureDoc {
    version: u32,
    bin_edges: Vec<f64>,
    mass: Vec<f64>,
}

fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 3 {
        return Err(VpError::InvalidInput(format!("need at least 2 bins, got {}", edges.len().saturating_sub(1))));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VpError::InvalidInput("bin edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

impl Signature {
    /// Builds a signature from per-bin mass; the mass is normalized to 1.
    pub fn from_mass(bin_edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        validate_edges(&bin_edges)?;
        if mass.len() + 1 != bin_edges.len() {
            return Err(VpError::InvalidInput(format!(
                "{} edges need {} masses, got {}",
                bin_edges.len(),
                bin_edges.len() - 1,
                mass.len()
            )));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(VpError::InvalidInput("mass must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(VpError::InvalidInput("mass must not be all zero".into()));
        }
        let mass: Vec<f64> = if (total - 1.0).abs() <= 1e-12 { mass } else { mass.iter().map(|m| m / total).collect() };
        let mut cdf = Vec::with_capacity(bin_edges.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in &mass {
            acc += m;
            cdf.push(acc.min(1.0));
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { bin_edges, mass, cdf })
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Cumulative mass at each bin edge (`cdf[0] = 0`, last = 1).
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn bin_count(&self) -> usize {
        self.mass.len()
    }

    /// Piecewise-linear CDF evaluated anywhere; 0 below the grid, 1 above.
    pub fn cdf_at(&self, z: f64) -> f64 {
        let e = &self.bin_edges;
        if z <= e[0] {
            return 0.0;
        }
        if z >= e[e.len() - 1] {
            return 1.0;
        }
        let i = e.partition_point(|&v| v <= z) - 1;
        let frac = (z - e[i]) / (e[i + 1] - e[i]);
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn to_text(&self) -> String {
        let doc = SignatureDoc { version: SIGNATURE_VERSION, bin_edges: self.bin_edges.clone(), mass: self.mass.clone() };
        serde_json::to_string_pretty(&doc).expect("signature serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: SignatureDoc = serde_json::from_str(text)?;
        if doc.version != SIGNATURE_VERSION {
            return Err(VpError::Parse(format!("unsupported signature version {}", doc.version)));
        }
        Self::from_mass(doc.bin_edges, doc.mass)
    }
}

pub fn uniform_edges(bin_count: usize, range: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if bin_count < 2 {
        return Err(VpError::InvalidInput(format!("need at least 2 bins, got {bin_count}")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(VpError::InvalidInput(format!("invalid range [{lo}, {hi}]")));
    }
    let w = (hi - lo) / bin_count as f64;
    let mut edges: Vec<f64> = (0..=bin_count).map(|i| lo + i as f64 * w).collect();
    edges[bin_count] = hi;
    Ok(edges)
}

/// Normalized histogram of `velocities` on `bin_count` uniform bins over
/// `range`. Values outside the range are counted in the end bins.
pub fn velocity_pdf(velocities: &[f64], bin_count: usize, range: (f64, f64)) -> Result<Signature> {
    if velocities.is_empty() {
        return Err(VpError::InvalidInput("velocity series is empty".into()));
    }
    if velocities.iter().any(|v| !v.is_finite()) {
        return Err(VpError::InvalidInput("velocity series must be finite".into()));
    }
    let edges = uniform_edges(bin_count, range)?;
    let (lo, hi) = range;
    let w = (hi - lo) / bin_count as f64;
    let mut counts = vec![0u64; bin_count];
    for &v in velocities {
        let idx = ((v - lo) / w).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bin_count - 1) };
        counts[idx] += 1;
    }
    let n = velocities.len() as f64;
    Signature::from_mass(edges, counts.iter().map(|&c| c as f64 / n).collect())
}

/// Signature on the default grid.
pub fn default_velocity_pdf(velocities: &[f64]) -> Result<Signature> {
    velocity_pdf(velocities, DEFAULT_BINS, DEFAULT_RANGE)
}

/// `integral |a(z) - b(z)| dz` for functions linear on `[z0, z1]`.
fn abs_linear_integral(z0: f64, z1: f64, d0: f64, d1: f64) -> f64 {
    let h = z1 - z0;
    if d0 * d1 >= 0.0 {
        0.5 * h * (d0.abs() + d1.abs())
    } else {
        // sign change at the root of the linear difference
        let t = d0 / (d0 - d1);
        0.5 * h * (t * d0.abs() + (1.0 - t) * d1.abs())
    }
}

/// Earth mover's distance `integral |CDF_1 - CDF_2| dz`.
///
/// Signatures on different grids are compared on the union of both edge
/// sets, with each CDF linearly interpolated there. This is exact for the
/// piecewise-linear CDFs used here.
pub fn emd(p1: &Signature, p2: &Signature) -> Result<f64> {
    if p1.bin_edges == p2.bin_edges {
        let e = &p1.bin_edges;
        let mut total = 0.0;
        for i in 0..e.len() - 1 {
            let d0 = p1.cdf[i] - p2.cdf[i];
            let d1 = p1.cdf[i + 1] - p2.cdf[i + 1];
            total += abs_linear_integral(e[i], e[i + 1], d0, d1);
        }
        return Ok(total);
    }
    let mut grid: Vec<f64> = p1.bin_edges.iter().chain(p2.bin_edges.iter()).copied().collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("edges are finite"));
    grid.dedup();
    if grid.len() < 2 {
        return Err(VpError::IncompatibleGrid("union grid has fewer than two edges".into()));
    }
    let mut total = 0.0;
    let mut prev = p1.cdf_at(grid[0]) - p2.cdf_at(grid[0]);
    for w in grid.windows(2) {
        let next = p1.cdf_at(w[1]) - p2.cdf_at(w[1]);
        total += abs_linear_integral(w[0], w[1], prev, next);
        prev = next;
    }
    if !total.is_finite() {
        return Err(VpError::IncompatibleGrid("EMD is not finite on the union grid".into()));
    }
    Ok(total)
}

/// Recorded desired-velocity series sampled every `sample_period` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureTrack {
    samples: Vec<f64>,
    sample_period: f64,
}

impl SignatureTrack {
    pub fn new(samples: Vec<f64>, sample_period: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(VpError::InvalidInput("signature track is empty".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(VpError::InvalidInput("signature track must be finite".into()));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(VpError::InvalidInput(format!("sample period must be > 0, got {sample_period}")));
        }
        Ok(Self { samples, sample_period })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Loop length: the record wraps from its last sample back to the first.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    pub fn signature(&self) -> Result<Signature> {
        default_velocity_pdf(&self.samples)
    }
}

/// Desired velocity at time `t`, linearly interpolated and looping.
pub fn playback(track: &SignatureTrack, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(VpError::InvalidInput(format!("playback time must be >= 0, got {t}")));
    }
    let n = track.samples.len();
    let pos = t / track.sample_period;
    let cycles = (pos / n as f64).floor();
    let mut local = pos - cycles * n as f64;
    if local >= n as f64 {
        local -= n as f64;
    }
    let i = (local.floor() as usize).min(n - 1);
    let frac = local - i as f64;
    let a = track.samples[i];
    let b = track.samples[(i + 1) % n];
    Ok(if frac == 0.0 { a } else { a + frac * (b - a) })
}
