//! Empirical orthogonal functions per depth slice and channel.
//!
//! Each `(depth, channel)` slice of a `T×D×H×W×C` sequence is flattened into a
//! `T×(H·W)` matrix `S`. After removing the temporal mean, `S = U Σ Vᵀ`; the
//! principal components are the first `P` columns of `UΣ` and the EOFs the
//! first `P` rows of `Vᵀ`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{VolumeSequence, PC_AXES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Basis of one `(depth, channel)` slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBasis {
    /// Temporal mean per grid point (zeros when fitted without centering).
    pub mean: Vec<f64>,
    /// `P × N` row-major, rows orthonormal.
    pub eofs: DMatrix<f64>,
    /// All `min(T, N)` singular values, non-increasing.
    pub singular_values: Vec<f64>,
}

impl SliceBasis {
    pub fn components(&self) -> usize {
        self.eofs.nrows()
    }

    pub fn points(&self) -> usize {
        self.eofs.ncols()
    }

    /// `(S − mean) · EOFsᵀ`.
    pub fn project(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if s.ncols() != self.points() {
            return Err(Error::shape(format!(
                "slice has {} points, basis has {}",
                s.ncols(),
                self.points()
            )));
        }
        Ok(self.centered(s) * self.eofs.transpose())
    }

    /// `PCs · EOFs + mean`.
    pub fn reconstruct(&self, pcs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if pcs.ncols() != self.components() {
            return Err(Error::shape(format!(
                "{} PCs given, basis has {}",
                pcs.ncols(),
                self.components()
            )));
        }
        let mut s = pcs * &self.eofs;
        for mut row in s.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(s)
    }

    fn centered(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = s.clone();
        for mut row in c.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        c
    }
}

/// Truncated SVD of `s` (`T×N`) without centering. Returns the `T×P` PCs and
/// the basis.
pub fn fit(s: &DMatrix<f64>, p: usize) -> Result<(DMatrix<f64>, SliceBasis)> {
    fit_with_mean(s, p, vec![0.0; s.ncols()])
}

/// [`fit`] after subtracting the temporal mean of each grid point.
pub fn fit_centered(s: &DMatrix<f64>, p: usize) -> Result<(DMatrix<f64>, SliceBasis)> {
    let t = s.nrows() as f64;
    let mean: Vec<f64> = s.column_iter().map(|c| c.sum() / t).collect();
    fit_with_mean(s, p, mean)
}

fn fit_with_mean(s: &DMatrix<f64>, p: usize, mean: Vec<f64>) -> Result<(DMatrix<f64>, SliceBasis)> {
    let (t, n) = s.shape();
    if t == 0 || n == 0 {
        return Err(Error::shape("empty slice matrix"));
    }
    if p == 0 || p > t.min(n) {
        return Err(Error::config(format!(
            "retained components P={p} must be in 1..={}",
            t.min(n)
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("slice matrix has non-finite values".into()));
    }
    let mut centered = s.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    // nalgebra's SVD loses accuracy on rank-deficient inputs, which every
    // centered slice with T <= N is, so faer does the factorization.
    let m = faer::Mat::<f64>::from_fn(t, n, |i, j| centered[(i, j)]);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (fu, fv) = (svd.U(), svd.V());
    let k = t.min(n);
    let u = DMatrix::from_fn(t, k, |i, j| fu[(i, j)]);
    let v_t = DMatrix::from_fn(k, n, |i, j| fv[(j, i)]);
    let fs = svd.S().column_vector();
    let sigma: Vec<f64> = (0..k).map(|i| fs[i]).collect();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut pcs = DMatrix::zeros(t, p);
    let mut eofs = DMatrix::zeros(p, n);
    for (k, &src) in order.iter().take(p).enumerate() {
        pcs.set_column(k, &(u.column(src) * sigma[src]));
        eofs.set_row(k, &v_t.row(src));
    }
    let singular_values = order.iter().map(|&i| sigma[i]).collect();
    Ok((
        pcs,
        SliceBasis {
            mean,
            eofs,
            singular_values,
        },
    ))
}

/// Per-`(depth, channel)` bases of a volume sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EofBasis {
    pub depth: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub components: usize,
    /// Indexed `d * channels + c`.
    pub slices: Vec<SliceBasis>,
}

impl EofBasis {
    pub fn slice(&self, d: usize, c: usize) -> &SliceBasis {
        &self.slices[d * self.channels + c]
    }

    fn check_volume(&self, x: &VolumeSequence) -> Result<()> {
        let [_, d, h, w, c] = x.dims();
        if (d, h, w, c) != (self.depth, self.height, self.width, self.channels) {
            return Err(Error::shape(format!(
                "volume is D×H×W×C = {d}×{h}×{w}×{c}, basis expects {}×{}×{}×{}",
                self.depth, self.height, self.width, self.channels
            )));
        }
        Ok(())
    }
}

/// Compressed sequence `T×D×P×C`.
#[derive(Clone, Debug)]
pub struct PcSequence {
    pub data: Tensor<f64>,
    pub time_step_hours: f64,
    pub basis: Option<Arc<EofBasis>>,
}

impl PcSequence {
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened `T×(H·W)` slice for depth `d`, channel `c`.
pub fn slice_matrix(x: &VolumeSequence, d: usize, c: usize) -> DMatrix<f64> {
    let [t, nd, h, w, nc] = x.dims();
    let data = x.data.data();
    DMatrix::from_fn(t, h * w, |ti, k| data[((ti * nd + d) * h * w + k) * nc + c] as f64)
}

fn assemble(t: usize, depth: usize, p: usize, channels: usize, blocks: &[DMatrix<f64>]) -> Tensor<f64> {
    let mut out = vec![0.0; t * depth * p * channels];
    for d in 0..depth {
        for c in 0..channels {
            let m = &blocks[d * channels + c];
            for ti in 0..t {
                for k in 0..p {
                    out[((ti * depth + d) * p + k) * channels + c] = m[(ti, k)];
                }
            }
        }
    }
    Tensor::new(&[t, depth, p, channels], out).expect("pc tensor shape")
}

/// Fits a centered EOF basis on every `(depth, channel)` slice.
pub fn compress(x: &VolumeSequence, p: usize) -> Result<PcSequence> {
    let [t, depth, h, w, channels] = x.dims();
    let fitted: Vec<(DMatrix<f64>, SliceBasis)> = (0..depth * channels)
        .into_par_iter()
        .map(|i| fit_centered(&slice_matrix(x, i / channels, i % channels), p))
        .collect::<Result<_>>()?;
    let (pcs, slices): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let basis = EofBasis {
        depth,
        channels,
        height: h,
        width: w,
        components: p,
        slices,
    };
    Ok(PcSequence {
        data: assemble(t, depth, p, channels, &pcs),
        time_step_hours: x.time_step_hours,
        basis: Some(Arc::new(basis)),
    })
}

/// Projects unseen data onto an existing basis.
pub fn project(x: &VolumeSequence, basis: &Arc<EofBasis>) -> Result<PcSequence> {
    basis.check_volume(x)?;
    let [t, depth, _, _, channels] = x.dims();
    let pcs: Vec<DMatrix<f64>> = (0..depth * channels)
        .into_par_iter()
        .map(|i| {
            let (d, c) = (i / channels, i % channels);
            basis.slice(d, c).project(&slice_matrix(x, d, c))
        })
        .collect::<Result<_>>()?;
    Ok(PcSequence {
        data: assemble(t, depth, basis.components, channels, &pcs),
        time_step_hours: x.time_step_hours,
        basis: Some(basis.clone()),
    })
}

/// Maps PCs back to the physical grid.
pub fn reconstruct(pcs: &PcSequence) -> Result<VolumeSequence> {
    let basis = pcs
        .basis
        .as_ref()
        .ok_or_else(|| Error::contract("reconstruct needs a PC sequence with a basis"))?;
    let [t, depth, p, channels] = pcs.dims();
    if (depth, p, channels) != (basis.depth, basis.components, basis.channels) {
        return Err(Error::shape(format!(
            "PCs are D×P×C = {depth}×{p}×{channels}, basis expects {}×{}×{}",
            basis.depth, basis.components, basis.channels
        )));
    }
    let (h, w) = (basis.height, basis.width);
    let mut out = vec![0.0f32; t * depth * h * w * channels];
    let src = pcs.data.data();
    for d in 0..depth {
        for c in 0..channels {
            let m = DMatrix::from_fn(t, p, |ti, k| src[((ti * depth + d) * p + k) * channels + c]);
            let s = basis.slice(d, c).reconstruct(&m)?;
            for ti in 0..t {
                for k in 0..h * w {
                    out[((ti * depth + d) * h * w + k) * channels + c] = s[(ti, k)] as f32;
                }
            }
        }
    }
    VolumeSequence::new(Tensor::new(&[t, depth, h, w, channels], out)?, pcs.time_step_hours)
}

/// PC sequence as a `T×D×P×1×C` volume tagged with PC axes (f32).
pub fn pc_to_volume(pcs: &PcSequence) -> VolumeSequence {
    let [t, d, p, c] = pcs.dims();
    let data = Tensor::new(&[t, d, p, 1, c], pcs.data.data().iter().map(|&v| v as f32).collect())
        .expect("pc volume shape");
    VolumeSequence::with_axes(data, pcs.time_step_hours, PC_AXES.iter().map(|s| s.to_string()).collect())
        .expect("pc volume is valid")
}

/// Inverse of [`pc_to_volume`]; the input must carry PC axes.
pub fn pc_from_volume(x: &VolumeSequence, basis: Option<Arc<EofBasis>>) -> Result<PcSequence> {
    if !x.is_pc_space() {
        return Err(Error::contract("sequence is not in PC space"));
    }
    let [t, d, p, w, c] = x.dims();
    if w != 1 {
        return Err(Error::shape(format!("PC volume must have a unit axis of 1, got {w}")));
    }
    Ok(PcSequence {
        data: Tensor::new(&[t, d, p, c], x.data.data().iter().map(|&v| v as f64).collect())?,
        time_step_hours: x.time_step_hours,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_volume(dims: [usize; 5], seed: u64) -> VolumeSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VolumeSequence::new(Tensor::from_fn(&dims, |_| rng.random_range(-1.0f32..1.0)), 12.0).unwrap()
    }

    fn orthonormality_error(e: &DMatrix<f64>) -> f64 {
        let g = e * e.transpose();
        (g - DMatrix::identity(e.nrows(), e.nrows())).abs().max()
    }

    #[test]
    fn rank_one_outer_product() {
        let u: Vec<f64> = (0..7).map(|i| (i as f64 * 0.3).sin() + 0.2).collect();
        let v: Vec<f64> = (0..12).map(|j| (j as f64 * 0.7).cos()).collect();
        let s = DMatrix::from_fn(7, 12, |i, j| u[i] * v[j]);
        let (pcs, b) = fit(&s, 1).unwrap();
        assert!(b.singular_values[0] > 1.0);
        assert!(b.singular_values[1..].iter().all(|&x| x < 1e-10));
        assert!((pcs * &b.eofs - &s).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_round_trip() {
        // Low-rank products, wide and tall, plus centered wide slices.
        for (t, n, r, seed) in [(4, 16, 3, 1), (26, 10, 1, 2), (16, 3, 1, 3), (9, 26, 8, 4)] {
            let s = random_matrix(t, r, seed) * random_matrix(r, n, seed + 10);
            for f in [fit, fit_centered] {
                let (pcs, b) = f(&s, t.min(n)).unwrap();
                assert!((b.reconstruct(&pcs).unwrap() - &s).norm() <= 1e-10 * s.norm());
                assert!(orthonormality_error(&b.eofs) < 1e-10);
            }
        }
    }

    #[test]
    fn constructed_singular_values() {
        let q = random_matrix(6, 6, 9).qr().q();
        let s = DMatrix::from_fn(6, 3, |i, j| q[(i, j)] * [3.0, 2.0, 1.0][j]);
        let (_, b) = fit(&s, 3).unwrap();
        for (got, want) in b.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eckart_young_truncation() {
        let s = random_matrix(20, 30, 4);
        let (pcs, b) = fit(&s, 5).unwrap();
        let err = (&pcs * &b.eofs - &s).norm();
        let tail: f64 = b.singular_values[5..].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((err - tail).abs() < 1e-8);
        assert!(orthonormality_error(&b.eofs) < 1e-8);
        assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn too_many_components_is_config_error() {
        let s = random_matrix(4, 10, 1);
        assert!(matches!(fit(&s, 5), Err(Error::Config(_))));
    }

    #[test]
    fn error_non_increasing_in_p() {
        let s = random_matrix(15, 10, 2);
        let mut prev = f64::INFINITY;
        for p in 1..=10 {
            let (pcs, b) = fit_centered(&s, p).unwrap();
            let err = (b.reconstruct(&pcs).unwrap() - &s).norm();
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn single_slice_compress_is_fit() {
        let x = random_volume([9, 1, 3, 4, 1], 3);
        let pcs = compress(&x, 4).unwrap();
        let (direct, _) = fit_centered(&slice_matrix(&x, 0, 0), 4).unwrap();
        for t in 0..9 {
            for k in 0..4 {
                assert!((pcs.data.data()[t * 4 + k] - direct[(t, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_round_trip_and_projection() {
        let x = random_volume([10, 2, 3, 3, 2], 5);
        let pcs = compress(&x, 9).unwrap();
        assert_eq!(pcs.dims(), [10, 2, 9, 2]);
        let back = reconstruct(&pcs).unwrap();
        let rel = back.data.cast::<f64>().sub(&x.data.cast()).unwrap().norm() / x.data.norm();
        assert!(rel < 1e-5);
        let basis = pcs.basis.clone().unwrap();
        let again = project(&x, &basis).unwrap();
        assert!(again.data.max_abs_diff(&pcs.data) < 1e-6);
        for s in &basis.slices {
            assert!(orthonormality_error(&s.eofs) < 1e-8);
        }
    }

    #[test]
    fn projection_of_span_and_orthogonal_fields() {
        let x = random_volume([12, 1, 4, 4, 1], 6);
        let pcs = compress(&x, 3).unwrap();
        let basis = pcs.basis.clone().unwrap();
        let sb = basis.slice(0, 0);
        // Mean plus a combination of retained EOFs lies in the span.
        let field: Vec<f64> = (0..16).map(|k| sb.mean[k] + 0.5 * sb.eofs[(0, k)] - 1.5 * sb.eofs[(2, k)]).collect();
        let s = DMatrix::from_row_slice(1, 16, &field);
        let proj = sb.project(&s).unwrap();
        assert!((sb.reconstruct(&proj).unwrap() - &s).norm() < 1e-10);
        // Mean plus a direction orthogonal to every EOF projects to zero PCs.
        let mut dir = DMatrix::from_fn(1, 16, |_, k| ((k * 7) % 5) as f64 - 2.0);
        for r in 0..3 {
            let e = sb.eofs.row(r);
            let c = (dir.row(0) * e.transpose())[(0, 0)];
            dir -= e * c;
        }
        let s = DMatrix::from_fn(1, 16, |_, k| sb.mean[k] + dir[(0, k)]);
        assert!(sb.project(&s).unwrap().norm() < 1e-10);
    }

    #[test]
    fn zero_pcs_give_mean_field() {
        let x = random_volume([8, 1, 2, 3, 1], 7);
        let mut pcs = compress(&x, 2).unwrap();
        pcs.data = Tensor::zeros(pcs.data.shape());
        let back = reconstruct(&pcs).unwrap();
        let mean = &pcs.basis.as_ref().unwrap().slice(0, 0).mean;
        for t in 0..8 {
            for k in 0..6 {
                assert!((back.data.data()[t * 6 + k] as f64 - mean[k]).abs() < 1e-6);
            }
        }
        let orphan = PcSequence { basis: None, ..pcs };
        assert!(matches!(reconstruct(&orphan), Err(Error::Contract(_))));
    }

    #[test]
    fn project_rejects_shape_mismatch() {
        let x = random_volume([8, 1, 2, 3, 1], 8);
        let basis = compress(&x, 2).unwrap().basis.unwrap();
        let y = random_volume([8, 1, 3, 3, 1], 9);
        assert!(matches!(project(&y, &basis), Err(Error::Shape(_))));
    }
}
