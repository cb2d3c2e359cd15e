//! Uniformly sampled position traces and their comma-separated file format
//! (`t,x` header, optional third column `v`).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, VpError};

/// Relative tolerance on the sampling grid used by file readers.
pub const FILE_GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    t: Vec<f64>,
    x: Vec<f64>,
    v: Option<Vec<f64>>,
    period: f64,
}

impl Trace {
    /// Validates equal lengths and a uniform grid to within `1e-9` seconds.
    pub fn new(t: Vec<f64>, x: Vec<f64>, v: Option<Vec<f64>>) -> Result<Self> {
        Self::with_tolerance(t, x, v, 1e-9)
    }

    fn with_tolerance(t: Vec<f64>, x: Vec<f64>, v: Option<Vec<f64>>, tol: f64) -> Result<Self> {
        if t.is_empty() {
            return Err(VpError::InvalidInput("trace is empty".into()));
        }
        if t.len() != x.len() || v.as_ref().is_some_and(|v| v.len() != t.len()) {
            return Err(VpError::InvalidInput("trace columns have different lengths".into()));
        }
        let all_finite = t.iter().chain(&x).chain(v.iter().flatten()).all(|a| a.is_finite());
        if !all_finite {
            return Err(VpError::InvalidInput("trace contains non-finite values".into()));
        }
        let period = if t.len() > 1 { (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64 } else { 1.0 };
        if !(period > 0.0) {
            return Err(VpError::InvalidInput("trace times must increase".into()));
        }
        for (k, &tk) in t.iter().enumerate() {
            let expected = t[0] + k as f64 * period;
            if (tk - expected).abs() > tol {
                return Err(VpError::InvalidInput(format!(
                    "non-uniform sampling at row {k}: t = {tk}, expected {expected}"
                )));
            }
        }
        Ok(Self { t, x, v, period })
    }

    /// Trace sampled at `k * period` from `t0`.
    pub fn from_positions(period: f64, x: Vec<f64>, v: Option<Vec<f64>>) -> Result<Self> {
        if !(period > 0.0) {
            return Err(VpError::InvalidInput(format!("period must be > 0, got {period}")));
        }
        let t = (0..x.len()).map(|k| k as f64 * period).collect();
        let mut tr = Self::new(t, x, v)?;
        tr.period = period;
        Ok(tr)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn duration(&self) -> f64 {
        self.period * (self.len() - 1) as f64
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn recorded_velocity(&self) -> Option<&[f64]> {
        self.v.as_deref()
    }

    /// Recorded velocities, or finite differences of position (central in the
    /// interior, one-sided at the ends).
    pub fn velocities(&self) -> Vec<f64> {
        if let Some(v) = &self.v {
            return v.clone();
        }
        let n = self.x.len();
        let h = self.period;
        if n < 2 {
            return vec![0.0; n];
        }
        let mut out = Vec::with_capacity(n);
        out.push((self.x[1] - self.x[0]) / h);
        for i in 1..n - 1 {
            out.push((self.x[i + 1] - self.x[i - 1]) / (2.0 * h));
        }
        out.push((self.x[n - 1] - self.x[n - 2]) / h);
        out
    }

    /// Linear interpolation of position, holding the end values outside.
    pub fn position_at(&self, t: f64) -> f64 {
        let n = self.len();
        let pos = (t - self.t[0]) / self.period;
        if pos <= 0.0 {
            return self.x[0];
        }
        if pos >= (n - 1) as f64 {
            return self.x[n - 1];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac == 0.0 {
            self.x[i]
        } else {
            self.x[i] + frac * (self.x[i + 1] - self.x[i])
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.v {
            Some(v) => {
                out.push_str("t,x,v\n");
                for ((t, x), v) in self.t.iter().zip(&self.x).zip(v) {
                    let _ = writeln!(out, "{t},{x},{v}");
                }
            }
            None => {
                out.push_str("t,x\n");
                for (t, x) in self.t.iter().zip(&self.x) {
                    let _ = writeln!(out, "{t},{x}");
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| VpError::Parse("empty trace file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let with_v = match cols.as_slice() {
            ["t", "x"] => false,
            ["t", "x", "v"] => true,
            _ => return Err(VpError::Parse(format!("expected header `t,x` or `t,x,v`, got `{header}`"))),
        };
        let (mut t, mut x, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(VpError::Parse(format!("row {}: expected {} fields", row + 1, cols.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| VpError::Parse(format!("row {}: `{s}`: {e}", row + 1)))
            };
            t.push(parse(fields[0])?);
            x.push(parse(fields[1])?);
            if with_v {
                v.push(parse(fields[2])?);
            }
        }
        if t.len() < 2 {
            return Err(VpError::Parse("trace needs at least two rows".into()));
        }
        let period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        Self::with_tolerance(t, x, with_v.then_some(v), FILE_GRID_TOLERANCE * period)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let tr = Trace::from_positions(0.03, vec![0.1, 0.2, -0.3], Some(vec![1.0, 2.0, 3.0])).unwrap();
        let back = Trace::from_csv(&tr.to_csv()).unwrap();
        assert_eq!(back.x(), tr.x());
        assert_eq!(back.recorded_velocity(), tr.recorded_velocity());
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let text = "t,x\n0,0\n0.1,0\n0.25,0\n";
        assert!(Trace::from_csv(text).is_err());
        assert!(Trace::from_csv("time,pos\n0,0\n").is_err());
        assert!(Trace::from_csv("t,x\n0,0\n0.1\n").is_err());
    }

    #[test]
    fn differenced_velocity() {
        let tr = Trace::from_positions(0.5, vec![0.0, 1.0, 3.0], None).unwrap();
        assert_eq!(tr.velocities(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn interpolation_and_hold() {
        let tr = Trace::from_positions(0.1, vec![0.0, 1.0, 0.0], None).unwrap();
        assert!((tr.position_at(0.05) - 0.5).abs() < 1e-12);
        assert_eq!(tr.position_at(-1.0), 0.0);
        assert_eq!(tr.position_at(5.0), 0.0);
    }
}
