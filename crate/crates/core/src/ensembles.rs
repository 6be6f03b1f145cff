//! Seeded weight-matrix and input samplers.
//!
//! Every random draw comes from a [`RngStream`]: a ChaCha8 generator keyed by
//! a master seed and selected by a 64-bit stream id. Trial `k` of an
//! experiment uses stream `k`, so results do not depend on how trials are
//! scheduled across threads.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analytic::{EnsembleKind, EnsembleSpec};
use crate::error::{Error, Result};
use crate::output;

const HAAR_RETRIES: usize = 5;

/// Address of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    #[serde(rename = "master")]
    pub master_seed: u64,
    #[serde(rename = "stream")]
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Stream `index` of a named family of streams under `master_seed`.
    /// Family 0 is plain `new(master_seed, index)`; other families get a
    /// derived master seed so their ids never collide with family 0.
    pub fn family(master_seed: u64, family: u64, index: u64) -> Self {
        if family == 0 {
            Self::new(master_seed, index)
        } else {
            Self::new(splitmix64(master_seed ^ splitmix64(family)), index)
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Square `d x d` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    d: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::usage(format!(
                "expected {} entries for a {d}x{d} matrix, got {}",
                d * d,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("matrix entry {bad} is not finite")));
        }
        Ok(Self { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= c);
        self
    }

    /// `out = self * x`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        for (row, o) in self.data.chunks_exact(self.d).zip(out.iter_mut()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let d = self.d;
        let mut out = Matrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.d;
        let mut out = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.get(i, j);
            }
        }
        out
    }

    /// `M^T M`.
    pub fn gram(&self) -> Matrix {
        self.transpose().matmul(self)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, j)).collect()
    }

    /// Largest entrywise deviation of `M^T M` from `c^2 * I`.
    pub fn orthogonality_defect(&self, c: f64) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in 0..self.d {
                let target = if i == j { c * c } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        DMatrix::from_row_slice(self.d, self.d, &self.data).determinant()
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_width(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::domain("width d must be at least 1"));
    }
    Ok(())
}

/// `d x d` matrix with i.i.d. `N(0, sigma^2)` entries.
pub fn sample_gaussian_matrix<R: Rng + ?Sized>(
    d: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Matrix> {
    check_width(d)?;
    check_positive("sigma", sigma)?;
    let data = (0..d * d)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Matrix { d, data })
}

/// `eta * Q` with `Q` Haar-distributed on the full orthogonal group `O(d)`.
///
/// `Q` comes from the QR factorization of a standard Gaussian matrix with each
/// column of `Q` multiplied by the sign of the matching diagonal entry of `R`.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(d: usize, eta: f64, rng: &mut R) -> Result<Matrix> {
    check_width(d)?;
    check_positive("eta", eta)?;
    for _ in 0..=HAAR_RETRIES {
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let r = qr.r();
        let mut q = qr.q();
        let diag_ok = (0..d).all(|i| r[(i, i)].is_finite() && r[(i, i)] != 0.0);
        if !diag_ok {
            continue;
        }
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(eta * q[(i, j)]);
            }
        }
        return Ok(Matrix { d, data });
    }
    Err(Error::Internal(format!(
        "QR of a Gaussian matrix broke down {} times in a row",
        HAAR_RETRIES + 1
    )))
}

/// Uniform point on the unit sphere `S^{d-1}`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_width(d)?;
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-150 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Ok(v);
        }
    }
}

/// `d x d` matrix with i.i.d. `Unif[0, a]` entries.
pub fn sample_uniform_positive_matrix<R: Rng + ?Sized>(
    d: usize,
    a: f64,
    rng: &mut R,
) -> Result<Matrix> {
    check_width(d)?;
    check_positive("a", a)?;
    let data = (0..d * d).map(|_| a * rng.random::<f64>()).collect();
    Ok(Matrix { d, data })
}

/// Draw one matrix from `ensemble`.
pub fn sample_matrix<R: Rng + ?Sized>(ensemble: &EnsembleSpec, rng: &mut R) -> Result<Matrix> {
    match ensemble.kind {
        EnsembleKind::Gaussian => sample_gaussian_matrix(ensemble.d, ensemble.scale, rng),
        EnsembleKind::Orthogonal => sample_haar_orthogonal(ensemble.d, ensemble.scale, rng),
    }
}

/// Per-entry tolerance for `M^T M = eta^2 I` on orthogonal stacks.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

/// An ordered list of layer matrices plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    pub ensemble: EnsembleSpec,
    pub seed: RngStream,
    pub matrices: Vec<Matrix>,
    pub diagnostics: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    kind: EnsembleKind,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightStackFile {
    d: usize,
    depth: usize,
    ensemble: EnsembleFile,
    seed: RngStream,
    matrices: Vec<Vec<f64>>,
    #[serde(default)]
    diagnostics: Map<String, Value>,
}

impl WeightStack {
    /// Draw `depth` matrices from `ensemble` using one stream.
    pub fn sample(ensemble: EnsembleSpec, depth: usize, seed: RngStream) -> Result<Self> {
        if depth == 0 {
            return Err(Error::domain("depth must be at least 1"));
        }
        let mut rng = seed.rng();
        let matrices = (0..depth)
            .map(|_| sample_matrix(&ensemble, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ensemble,
            seed,
            matrices,
            diagnostics: Map::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.ensemble.d
    }

    pub fn depth(&self) -> usize {
        self.matrices.len()
    }

    /// Shape and, for orthogonal stacks, `M^T M = eta^2 I` per entry.
    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.matrices.is_empty() {
            return Err(Error::usage("weight stack has no layers"));
        }
        for (k, m) in self.matrices.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::usage(format!(
                    "layer {k} is {0}x{0}, expected {d}x{d}",
                    m.dim()
                )));
            }
            if self.ensemble.kind == EnsembleKind::Orthogonal {
                let defect = m.orthogonality_defect(self.ensemble.scale);
                if defect > ORTHOGONALITY_TOL {
                    return Err(Error::domain(format!(
                        "layer {k} deviates from eta*O(d) by {defect:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightStackFile {
            d: self.d(),
            depth: self.depth(),
            ensemble: EnsembleFile {
                kind: self.ensemble.kind,
                scale: self.ensemble.scale,
            },
            seed: self.seed,
            matrices: self
                .matrices
                .iter()
                .map(|m| m.as_slice().to_vec())
                .collect(),
            diagnostics: self.diagnostics.clone(),
        };
        output::to_json_string(&file)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: WeightStackFile = serde_json::from_str(s)?;
        if file.matrices.len() != file.depth {
            return Err(Error::usage(format!(
                "depth is {} but {} matrices are present",
                file.depth,
                file.matrices.len()
            )));
        }
        let ensemble = EnsembleSpec::new(file.ensemble.kind, file.d, file.ensemble.scale)?;
        let matrices = file
            .matrices
            .into_iter()
            .map(|m| Matrix::from_row_major(file.d, m))
            .collect::<Result<Vec<_>>>()?;
        let stack = Self {
            ensemble,
            seed: file.seed,
            matrices,
            diagnostics: file.diagnostics,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var)
    }

    #[test]
    fn streams_replay_and_differ() {
        let a = sample_gaussian_matrix(4, 1.0, &mut RngStream::new(7, 3).rng()).unwrap();
        let b = sample_gaussian_matrix(4, 1.0, &mut RngStream::new(7, 3).rng()).unwrap();
        let c = sample_gaussian_matrix(4, 1.0, &mut RngStream::new(7, 4).rng()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(
            RngStream::family(7, 1, 3).rng().random::<u64>(),
            RngStream::new(7, 3).rng().random::<u64>()
        );
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngStream::new(1, 0).rng();
        let mut entries = Vec::with_capacity(1_000_000);
        while entries.len() < 1_000_000 {
            entries.extend(sample_gaussian_matrix(4, 1.0, &mut rng).unwrap().into_vec());
        }
        let (m, _) = mean_var(&entries);
        assert!(m.abs() < 3e-3, "{m}");

        let mut rng = RngStream::new(2, 0).rng();
        let mut entries = Vec::with_capacity(1_000_000);
        while entries.len() < 1_000_000 {
            entries.extend(
                sample_gaussian_matrix(10, 0.5, &mut rng)
                    .unwrap()
                    .into_vec(),
            );
        }
        let (_, v) = mean_var(&entries);
        assert!((v - 0.25).abs() < 3.0 * 2f64.sqrt() * 0.25 / 1e3, "{v}");
    }

    #[test]
    fn samplers_reject_bad_scale() {
        let mut rng = RngStream::new(0, 0).rng();
        assert!(sample_gaussian_matrix(2, 0.0, &mut rng).is_err());
        assert!(sample_haar_orthogonal(2, -1.0, &mut rng).is_err());
        assert!(sample_uniform_positive_matrix(2, 0.0, &mut rng).is_err());
        assert!(sample_unit_sphere(0, &mut rng).is_err());
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = RngStream::new(3, 0).rng();
        for d in [1, 2, 3, 8] {
            for _ in 0..100 {
                let q = sample_haar_orthogonal(d, 1.0, &mut rng).unwrap();
                assert!(q.orthogonality_defect(1.0) < 1e-10);
            }
            let q = sample_haar_orthogonal(d, 2.5, &mut rng).unwrap();
            assert!(q.orthogonality_defect(2.5) < 1e-9);
        }
    }

    #[test]
    fn haar_covers_both_determinant_signs() {
        let mut rng = RngStream::new(4, 0).rng();
        let n = 10_000;
        let pos = (0..n)
            .filter(|_| {
                sample_haar_orthogonal(3, 1.0, &mut rng)
                    .unwrap()
                    .determinant()
                    > 0.0
            })
            .count();
        let frac = pos as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn haar_image_of_fixed_vector_is_isotropic() {
        let d = 3;
        let n = 100_000;
        let x = [0.6, 0.0, 0.8];
        let mut rng = RngStream::new(5, 0).rng();
        let mut acc = [0.0; 9];
        for _ in 0..n {
            let y = sample_haar_orthogonal(d, 1.0, &mut rng)
                .unwrap()
                .mul_vec(&x);
            for i in 0..d {
                for j in 0..d {
                    acc[i * d + j] += y[i] * y[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 / d as f64 } else { 0.0 };
                assert!((acc[i * d + j] / n as f64 - target).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn unit_sphere_moments() {
        let d = 4;
        let n = 100_000;
        let mut rng = RngStream::new(6, 0).rng();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for _ in 0..n {
            let x = sample_unit_sphere(d, &mut rng).unwrap();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for i in 0..d {
                mean[i] += x[i];
                for j in 0..d {
                    second[i * d + j] += x[i] * x[j];
                }
            }
        }
        let band = 3.0 / ((n * d) as f64).sqrt();
        for i in 0..d {
            assert!((mean[i] / n as f64).abs() < band);
            for j in 0..d {
                let target = if i == j { 0.25 } else { 0.0 };
                assert!((second[i * d + j] / n as f64 - target).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn uniform_positive_matrix() {
        let a = 2.0;
        let mut rng = RngStream::new(8, 0).rng();
        let mut entries = Vec::with_capacity(1_000_000);
        while entries.len() < 1_000_000 {
            entries.extend(
                sample_uniform_positive_matrix(10, a, &mut rng)
                    .unwrap()
                    .into_vec(),
            );
        }
        assert!(entries.iter().all(|&v| (0.0..=a).contains(&v)));
        let (m, _) = mean_var(&entries);
        assert!((m - 1.0).abs() < 3.0 * (a / 12f64.sqrt()) / 1e3);
        let x = sample_uniform_positive_matrix(3, 1.0, &mut RngStream::new(9, 9).rng()).unwrap();
        let y = sample_uniform_positive_matrix(3, 1.0, &mut RngStream::new(9, 9).rng()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn stack_json_round_trip_is_exact() {
        let ens = EnsembleSpec::orthogonal(3, 1.4).unwrap();
        let mut stack = WeightStack::sample(ens, 4, RngStream::new(11, 2)).unwrap();
        stack
            .diagnostics
            .insert("note".into(), Value::String("test".into()));
        let s = stack.to_json().unwrap();
        let back = WeightStack::from_json(&s).unwrap();
        assert_eq!(back, stack);
        assert_eq!(back.to_json().unwrap(), s);

        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["d"], 3);
        assert_eq!(v["depth"], 4);
        assert_eq!(v["ensemble"]["kind"], "orthogonal");
        assert_eq!(v["seed"]["master"], 11);
        assert_eq!(v["seed"]["stream"], 2);
        assert_eq!(v["matrices"][0].as_array().unwrap().len(), 9);
    }

    #[test]
    fn stack_json_rejects_inconsistent_files() {
        let ens = EnsembleSpec::gaussian(2, 1.0).unwrap();
        let stack = WeightStack::sample(ens, 2, RngStream::new(1, 1)).unwrap();
        let mut v: Value = serde_json::from_str(&stack.to_json().unwrap()).unwrap();
        v["depth"] = 3.into();
        assert!(WeightStack::from_json(&v.to_string()).is_err());

        // A Gaussian matrix labelled orthogonal fails the Gram check.
        let mut v: Value = serde_json::from_str(&stack.to_json().unwrap()).unwrap();
        v["ensemble"]["kind"] = "orthogonal".into();
        assert!(WeightStack::from_json(&v.to_string()).is_err());
    }
}
