//! "Same" zero-padded convolutions over `H×W×C` feature maps.
//!
//! All loops keep the output-channel axis innermost so the kernel rows and
//! output pixels are contiguous slices.

use super::{Real, Tensor};
use crate::error::{Error, Result};

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
}

impl Geometry {
    fn check<F: Real>(input: &Tensor<F>, kernel: &Tensor<F>) -> Result<Self> {
        let (h, w) = input.spatial()?;
        let cin = input.channels();
        let ks = kernel.shape();
        if ks.len() != 4 || ks[0] != ks[1] {
            return Err(Error::shape(format!(
                "conv2d kernel must be K×K×Cin×Cout, got {ks:?}"
            )));
        }
        if ks[0].is_multiple_of(2) {
            return Err(Error::config(format!(
                "conv2d kernel size must be odd, got {}",
                ks[0]
            )));
        }
        if ks[2] != cin {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {}",
                ks[2]
            )));
        }
        Ok(Geometry {
            h,
            w,
            cin,
            k: ks[0],
            cout: ks[3],
        })
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every in-bounds stencil tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = (self.k / 2) as isize;
        let (h, w) = (self.h as isize, self.w as isize);
        for y in 0..h {
            for x in 0..w {
                let out_px = (y * w + x) as usize;
                for ky in 0..self.k as isize {
                    let iy = y + ky - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..self.k as isize {
                        let ix = x + kx - p;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        f(out_px, (iy * w + ix) as usize, (ky * self.k as isize + kx) as usize);
                    }
                }
            }
        }
    }
}

pub fn conv2d<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let g = Geometry::check(input, kernel)?;
    let mut out = vec![F::zero(); g.h * g.w * g.cout];
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::shape(format!(
                "conv2d bias has {} entries, expected {}",
                b.len(),
                g.cout
            )));
        }
        for px in out.chunks_exact_mut(g.cout) {
            px.copy_from_slice(b.data());
        }
    }
    let (x, k) = (input.data(), kernel.data());
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|o, i, tap| {
        let xin = &x[i * cin..(i + 1) * cin];
        let kt = &k[tap * cin * cout..(tap + 1) * cin * cout];
        let acc = &mut out[o * cout..(o + 1) * cout];
        for (&xv, krow) in xin.iter().zip(kt.chunks_exact(cout)) {
            for (a, &kv) in acc.iter_mut().zip(krow) {
                *a += xv * kv;
            }
        }
    });
    Tensor::new(&[g.h, g.w, g.cout], out)
}

pub fn conv2d_grad_input<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    kernel: &Tensor<F>,
) -> Result<Tensor<F>> {
    let g = Geometry::check(input, kernel)?;
    let mut dx = vec![F::zero(); g.h * g.w * g.cin];
    let (dy, k) = (grad_out.data(), kernel.data());
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|o, i, tap| {
        let gy = &dy[o * cout..(o + 1) * cout];
        let kt = &k[tap * cin * cout..(tap + 1) * cin * cout];
        let acc = &mut dx[i * cin..(i + 1) * cin];
        for (a, krow) in acc.iter_mut().zip(kt.chunks_exact(cout)) {
            let mut s = F::zero();
            for (&kv, &gv) in krow.iter().zip(gy) {
                s += kv * gv;
            }
            *a += s;
        }
    });
    Tensor::new(input.shape(), dx)
}

pub fn conv2d_grad_kernel<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    kernel: &Tensor<F>,
) -> Result<Tensor<F>> {
    let g = Geometry::check(input, kernel)?;
    let mut dk = vec![F::zero(); kernel.len()];
    let (dy, x) = (grad_out.data(), input.data());
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|o, i, tap| {
        let gy = &dy[o * cout..(o + 1) * cout];
        let xin = &x[i * cin..(i + 1) * cin];
        let acc = &mut dk[tap * cin * cout..(tap + 1) * cin * cout];
        for (&xv, row) in xin.iter().zip(acc.chunks_exact_mut(cout)) {
            for (a, &gv) in row.iter_mut().zip(gy) {
                *a += xv * gv;
            }
        }
    });
    Tensor::new(kernel.shape(), dk)
}

pub fn conv2d_grad_bias<F: Real>(grad_out: &Tensor<F>) -> Tensor<F> {
    let cout = grad_out.channels();
    let mut db = vec![F::zero(); cout];
    for px in grad_out.data().chunks_exact(cout) {
        for (a, &v) in db.iter_mut().zip(px) {
            *a += v;
        }
    }
    Tensor::new(&[cout], db).expect("bias shape")
}

/// Spatiotemporal convolution whose kernel spans the full time axis of the
/// input, so the time axis collapses. Input `H×W×Tw×Cin`, kernel
/// `K×K×Tw×Cin×Cout`, output `H×W×Cout`.
pub fn conv3d<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let (flat_in, flat_k) = flatten_conv3d(input.shape(), kernel.shape())?;
    conv2d(&input.reshape(&flat_in)?, &kernel.reshape(&flat_k)?, bias)
}

/// Shapes under which a full-time-extent 3D convolution is a 2D convolution
/// over `Tw·Cin` channels.
pub(crate) fn flatten_conv3d(input: &[usize], kernel: &[usize]) -> Result<([usize; 3], [usize; 4])> {
    if input.len() != 4 || kernel.len() != 5 {
        return Err(Error::shape(format!(
            "conv3d expects H×W×Tw×Cin input and K×K×Tw×Cin×Cout kernel, got {input:?} / {kernel:?}"
        )));
    }
    if input[2] != kernel[2] {
        return Err(Error::shape(format!(
            "conv3d temporal extent mismatch: input {} vs kernel {}",
            input[2], kernel[2]
        )));
    }
    if input[3] != kernel[3] {
        return Err(Error::shape(format!(
            "conv3d channel mismatch: input {} vs kernel {}",
            input[3], kernel[3]
        )));
    }
    let ch = input[2] * input[3];
    Ok((
        [input[0], input[1], ch],
        [kernel[0], kernel[1], ch, kernel[4]],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Quadruple-loop reference with explicit zero padding.
    fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (ks, cout) = (k.shape()[0], k.shape()[3]);
        let p = ks as i64 / 2;
        let at = |y: i64, xx: i64, c: usize| -> f64 {
            if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                0.0
            } else {
                x.data()[(y as usize * w + xx as usize) * cin + c]
            }
        };
        Tensor::from_fn(&[h, w, cout], |idx| {
            let co = idx % cout;
            let xx = (idx / cout) % w;
            let y = idx / cout / w;
            let mut s = b.data()[co];
            for ky in 0..ks {
                for kx in 0..ks {
                    for ci in 0..cin {
                        let kv = k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                        s += kv * at(y as i64 + ky as i64 - p, xx as i64 + kx as i64 - p, ci);
                    }
                }
            }
            s
        })
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, Some(&Tensor::zeros(&[1]))).unwrap(), x);
    }

    #[test]
    fn ones_stencil_counts_neighbours() {
        let x = Tensor::<f64>::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let fast = conv2d(&x, &k, Some(&b)).unwrap();
        assert!(fast.max_abs_diff(&naive_conv2d(&x, &k, &b)) < 1e-12);
    }

    #[test]
    fn rejects_even_kernel_and_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[4, 4, 2]);
        assert!(matches!(
            conv2d(&x, &Tensor::zeros(&[2, 2, 2, 1]), None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            conv2d(&x, &Tensor::zeros(&[3, 3, 3, 1]), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[6, 5, 3], &mut rng);
        let b = random(&[6, 5, 3], &mut rng);
        let k = random(&[3, 3, 3, 2], &mut rng);
        let lhs = conv2d(&a.scale(2.5).add(&b.scale(-0.7)).unwrap(), &k, None).unwrap();
        let rhs = conv2d(&a, &k, None)
            .unwrap()
            .scale(2.5)
            .add(&conv2d(&b, &k, None).unwrap().scale(-0.7))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-6);
    }

    #[test]
    fn conv3d_single_tap_is_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 3], &mut rng);
        let y2 = conv2d(&x, &k, None).unwrap();
        let y3 = conv3d(&x.reshape(&[4, 5, 1, 2]).unwrap(), &k.reshape(&[3, 3, 1, 2, 3]).unwrap(), None).unwrap();
        assert_eq!(y2, y3);
    }

    #[test]
    fn conv3d_duplicate_slices_sum_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let slice = random(&[4, 4, 2], &mut rng);
        let k = random(&[3, 3, 2, 2], &mut rng);
        // Two identical time slices, each tap carrying half of k.
        let x3 = Tensor::concat_channels(&[&slice, &slice]).unwrap().reshape(&[4, 4, 2, 2]).unwrap();
        let half = k.scale(0.5);
        let mut k3 = Vec::new();
        for tap in half.data().chunks_exact(2 * 2) {
            k3.extend_from_slice(tap);
            k3.extend_from_slice(tap);
        }
        let k3 = Tensor::new(&[3, 3, 2, 2, 2], k3).unwrap();
        let y3 = conv3d(&x3, &k3, None).unwrap();
        assert!(y3.max_abs_diff(&conv2d(&slice, &k, None).unwrap()) < 1e-12);
    }

    #[test]
    fn conv3d_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (h, w, tw, cin, cout) = (5, 4, 3, 2, 2);
        let x = random(&[h, w, tw, cin], &mut rng);
        let k = random(&[3, 3, tw, cin, cout], &mut rng);
        let y = conv3d(&x, &k, None).unwrap();
        let at = |yy: i64, xx: i64, t: usize, c: usize| -> f64 {
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                0.0
            } else {
                x.data()[((yy as usize * w + xx as usize) * tw + t) * cin + c]
            }
        };
        for yy in 0..h {
            for xx in 0..w {
                for co in 0..cout {
                    let mut s = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for t in 0..tw {
                                for ci in 0..cin {
                                    let kv = k.data()[(((ky * 3 + kx) * tw + t) * cin + ci) * cout + co];
                                    s += kv * at(yy as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1, t, ci);
                                }
                            }
                        }
                    }
                    assert!((y.data()[(yy * w + xx) * cout + co] - s).abs() < 1e-6);
                }
            }
        }
        let bad = Tensor::<f64>::zeros(&[3, 3, tw + 1, cin, cout]);
        assert!(matches!(conv3d(&x, &bad, None), Err(Error::Shape(_))));
    }
}
