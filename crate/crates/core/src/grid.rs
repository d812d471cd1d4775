//! Cell-centred space-time grids and the functions sampled on them.
//!
//! Axes are `x1, …, xN, t`; values are stored row-major with `t` varying fastest.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 8;

/// Box `[lo_k, hi_k]` per axis (time last) with `res_k` cells per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != res.len() || lo.len() < 2 {
            return Err(Error::Shape(format!(
                "grid needs matching lo/hi/resolution with at least 2 axes, got {}/{}/{}",
                lo.len(),
                hi.len(),
                res.len()
            )));
        }
        for k in 0..lo.len() {
            if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] < hi[k]) {
                return Err(Error::Domain(format!("axis {k}: empty or non-finite interval [{}, {}]", lo[k], hi[k])));
            }
            if res[k] < MIN_RESOLUTION {
                return Err(Error::Domain(format!(
                    "axis {k}: resolution {} below the minimum {MIN_RESOLUTION}",
                    res[k]
                )));
            }
        }
        Ok(GridSpec { lo, hi, res })
    }

    /// Same box with `res` cells on every axis.
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>, res: usize) -> Result<Self> {
        let k = lo.len();
        Self::new(lo, hi, vec![res; k])
    }

    /// Spatial dimension `N` (axes minus time).
    pub fn n(&self) -> usize {
        self.lo.len() - 1
    }

    pub fn axes(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.res[axis] as f64
    }

    pub fn ht(&self) -> f64 {
        self.h(self.n())
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.axes()).map(|k| self.h(k)).product()
    }

    /// Coordinate of node `i` on `axis`: `lo + (i + ½) h`.
    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (i as f64 + 0.5) * self.h(axis)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.res[self.n()]).map(|i| self.coord(self.n(), i)).collect()
    }

    /// Row-major strides (time stride is 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes()];
        for k in (0..self.axes() - 1).rev() {
            s[k] = s[k + 1] * self.res[k + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes()];
        for k in (0..self.axes()).rev() {
            idx[k] = flat % self.res[k];
            flat /= self.res[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.res).fold(0, |acc, (&i, &r)| acc * r + i)
    }

    /// Spatial coordinates and time of node `flat`.
    pub fn node(&self, flat: usize) -> (Vec<f64>, f64) {
        let idx = self.multi_index(flat);
        let n = self.n();
        let x = (0..n).map(|k| self.coord(k, idx[k])).collect();
        (x, self.coord(n, idx[n]))
    }

    /// Number of spatial nodes in one time slice.
    pub fn slice_len(&self) -> usize {
        self.res[..self.n()].iter().product()
    }

    /// Spatial coordinates of spatial node `s` (index over the first `N` axes).
    pub fn spatial_node(&self, mut s: usize) -> Vec<f64> {
        let n = self.n();
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            x[k] = self.coord(k, s % self.res[k]);
            s /= self.res[k];
        }
        x
    }

    /// Spec with every resolution replaced by `res`.
    pub fn with_resolution(&self, res: usize) -> Result<Self> {
        Self::uniform(self.lo.clone(), self.hi.clone(), res)
    }
}

/// Values of a function on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Dimension { expected: spec.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite grid value at node {i}")));
        }
        Ok(GridFunction { spec, values })
    }

    pub fn constant(spec: GridSpec, v: f64) -> Result<Self> {
        let n = spec.len();
        Self::new(spec, vec![v; n])
    }

    /// Samples `f(x, t)` at every node (in parallel, deterministic order).
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> f64 + Sync,
    {
        let values: Vec<f64> = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let (x, t) = spec.node(i);
                f(&x, t)
            })
            .collect();
        Self::new(spec, values)
    }

    /// As [`from_fn`](Self::from_fn) for fallible samplers; the first error in node order wins.
    pub fn try_from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> Result<f64> + Sync,
    {
        let values: Result<Vec<f64>> = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let (x, t) = spec.node(i);
                f(&x, t)
            })
            .collect();
        Self::new(spec, values?)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.spec.flat_index(idx)]
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Result<Self> {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        Self::new(self.spec.clone(), values)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map(|v| s * v)
    }

    /// Pointwise combination with a function on the same grid.
    pub fn zip_with<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &GridFunction, f: F) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::Shape("grid functions live on different grids".into()));
        }
        let values = self.values.par_iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.spec.clone(), values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multilinear interpolation at `(x, t)`; constant extension to the box edge, 0 outside the box.
    pub fn interpolate(&self, x: &[f64], t: f64) -> f64 {
        let axes = self.spec.axes();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(axes <= 8, "interpolation supports at most 8 axes");
        for k in 0..axes {
            let p = if k < axes - 1 { x[k] } else { t };
            if p < self.spec.lo[k] || p > self.spec.hi[k] {
                return 0.0;
            }
            let s = ((p - self.spec.lo[k]) / self.spec.h(k) - 0.5).clamp(0.0, (self.spec.res[k] - 1) as f64);
            let i = (s.floor() as usize).min(self.spec.res[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        let strides = self.spec.strides();
        let mut acc = 0.0;
        for corner in 0..(1usize << axes) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..axes {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat += (base[k] + bit) * strides[k];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    /// Tensor four-point Lagrange interpolation in space within time slice `k`; stencils shift
    /// inward at the faces, so cubics are reproduced exactly between the outermost nodes. Extension
    /// rules match [`interpolate`](Self::interpolate).
    pub fn interpolate_slice_cubic(&self, x: &[f64], k: usize) -> f64 {
        let n = self.spec.n();
        assert!(n <= 7, "interpolation supports at most 7 spatial axes");
        if self.spec.res[..n].iter().any(|&r| r < 4) {
            return self.interpolate_slice(x, k);
        }
        let mut base = [0usize; 7];
        let mut w = [[0.0f64; 4]; 7];
        for a in 0..n {
            let p = x[a];
            if p < self.spec.lo[a] || p > self.spec.hi[a] {
                return 0.0;
            }
            let r = self.spec.res[a];
            let s = ((p - self.spec.lo[a]) / self.spec.h(a) - 0.5).clamp(0.0, (r - 1) as f64);
            let j0 = (s.floor() as usize).saturating_sub(1).min(r - 4);
            let u = s - j0 as f64;
            for m in 0..4 {
                let mut l = 1.0;
                for q in 0..4 {
                    if q != m {
                        l *= (u - q as f64) / (m as f64 - q as f64);
                    }
                }
                w[a][m] = l;
            }
            base[a] = j0;
        }
        let rt = self.spec.res[n];
        let mut acc = 0.0;
        for corner in 0..(1usize << (2 * n)) {
            let mut wt = 1.0;
            let mut flat = 0;
            for a in 0..n {
                let m = (corner >> (2 * a)) & 3;
                wt *= w[a][m];
                flat = flat * self.spec.res[a] + base[a] + m;
            }
            acc += wt * self.values[flat * rt + k];
        }
        acc
    }

    /// Multilinear interpolation in space within time slice `k`; same extension rules as
    /// [`interpolate`](Self::interpolate).
    pub fn interpolate_slice(&self, x: &[f64], k: usize) -> f64 {
        let n = self.spec.n();
        assert!(n <= 7, "interpolation supports at most 7 spatial axes");
        let mut base = [0usize; 7];
        let mut frac = [0.0f64; 7];
        for a in 0..n {
            let p = x[a];
            if p < self.spec.lo[a] || p > self.spec.hi[a] {
                return 0.0;
            }
            let s = ((p - self.spec.lo[a]) / self.spec.h(a) - 0.5).clamp(0.0, (self.spec.res[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.spec.res[a] - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let rt = self.spec.res[n];
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * self.spec.res[a] + base[a] + bit;
            }
            if w != 0.0 {
                acc += w * self.values[flat * rt + k];
            }
        }
        acc
    }

    /// CSV export: header `# box=… resolution=… columns=…`, then one row per node.
    pub fn to_csv(&self) -> String {
        let s = &self.spec;
        let n = s.n();
        let mut out = String::with_capacity(s.len() * (n + 2) * 24 + 128);
        let boxes: Vec<String> = (0..s.axes()).map(|k| format!("{:.16e}:{:.16e}", s.lo[k], s.hi[k])).collect();
        let res: Vec<String> = s.res.iter().map(|r| r.to_string()).collect();
        let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        cols.push("t".into());
        cols.push("value".into());
        let _ = writeln!(out, "# box={} resolution={} columns={}", boxes.join(","), res.join(","), cols.join(","));
        for (i, v) in self.values.iter().enumerate() {
            let (x, t) = s.node(i);
            for c in x {
                let _ = write!(out, "{c:.16e},");
            }
            let _ = writeln!(out, "{t:.16e},{v:.16e}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("CSV header must start with '#'".into()))?;
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut res = Vec::new();
        for field in header.split_whitespace() {
            if let Some(b) = field.strip_prefix("box=") {
                for iv in b.split(',') {
                    let (a, c) = iv
                        .split_once(':')
                        .ok_or_else(|| Error::Parse(format!("bad interval '{iv}' in header")))?;
                    lo.push(parse_f64(a)?);
                    hi.push(parse_f64(c)?);
                }
            } else if let Some(r) = field.strip_prefix("resolution=") {
                for v in r.split(',') {
                    res.push(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad resolution '{v}'")))?);
                }
            }
        }
        let spec = GridSpec::new(lo, hi, res)?;
        let cols = spec.axes() + 1;
        let mut values = Vec::with_capacity(spec.len());
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse(format!("row {}: expected {cols} columns, got {}", row + 2, fields.len())));
            }
            values.push(parse_f64(fields[cols - 1])?);
        }
        Self::new(spec, values)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("invalid number '{s}'")))
}
