//! Convolutional tensor-train chains.
//!
//! A chain of `m` cores, core `l` shaped `K×K×R_l×R_{l+1}`, stands in for a
//! large higher-order convolution kernel. It is evaluated sequentially:
//!
//! ```text
//! V^1 = 0
//! V^{l+1}[:, r'] = Σ_r T^l[:, r, r'] ∗ (V^l[:, r] + U^l[:, r])
//! ```
//!
//! and the result is `V^{m+1}`. Every step uses "same" zero padding, so all
//! intermediates share the input's spatial extent.
//!
//! [`CttdChain::compose`] builds the equivalent dense kernel explicitly. Its
//! size grows with `m·(K−1)+1` per axis and with every rank, so it exists to
//! check [`CttdChain::apply`] and for parameter accounting only.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CttdChain<F> {
    cores: Vec<Tensor<F>>,
}

impl<F: Real> CttdChain<F> {
    pub fn new(cores: Vec<Tensor<F>>) -> Result<Self> {
        let shapes: Vec<&[usize]> = cores.iter().map(|c| c.shape()).collect();
        validate_core_shapes(&shapes)?;
        Ok(CttdChain { cores })
    }

    pub fn cores(&self) -> &[Tensor<F>] {
        &self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.cores[0].shape()[0]
    }

    /// `(R_1, …, R_{m+1})`.
    pub fn rank_vector(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[2]).collect();
        r.push(self.cores.last().unwrap().shape()[3]);
        r
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Sequential evaluation over the inputs `U^1..U^m`.
    pub fn apply(&self, inputs: &[Tensor<F>]) -> Result<Tensor<F>> {
        let tape = Tape::new();
        let cores: Vec<Var> = self.cores.iter().map(|c| tape.constant(c.clone())).collect();
        let us: Vec<Var> = inputs.iter().map(|u| tape.constant(u.clone())).collect();
        let out = apply_var(&tape, &cores, &us)?;
        let v = tape.value(out).clone();
        Ok(v)
    }

    /// Dense kernel `K_eff×K_eff×R_1×R_{m+1}` with
    /// `T[:, r_1, r_{m+1}] = Σ_{r_2..r_m} T^1[:, r_1, r_2] ∗ ⋯ ∗ T^m[:, r_m, r_{m+1}]`,
    /// where `∗` is full (untruncated) 2D convolution.
    pub fn compose(&self) -> Tensor<F> {
        let mut acc = self.cores[0].clone();
        for core in &self.cores[1..] {
            acc = full_conv_contract(&acc, core);
        }
        acc
    }

    /// Dense kernel of the sub-chain starting at core `from` (0-based).
    pub fn compose_from(&self, from: usize) -> Tensor<F> {
        CttdChain {
            cores: self.cores[from..].to_vec(),
        }
        .compose()
    }
}

/// Checks that each core is `K×K×R_l×R_{l+1}` with a shared odd `K` and
/// matching adjacent ranks.
pub fn validate_core_shapes(shapes: &[&[usize]]) -> Result<()> {
    let first = shapes.first().ok_or_else(|| Error::shape("chain needs at least one core"))?;
    if first.len() != 4 {
        return Err(Error::shape(format!("core must be K×K×R×R', got {first:?}")));
    }
    let k = first[0];
    for (l, s) in shapes.iter().enumerate() {
        if s.len() != 4 || s[0] != k || s[1] != k {
            return Err(Error::shape(format!("core {l} has shape {s:?}, expected {k}×{k}×R×R'")));
        }
        if l > 0 && shapes[l - 1][3] != s[2] {
            return Err(Error::shape(format!(
                "rank mismatch: core {} outputs {} but core {l} takes {}",
                l - 1,
                shapes[l - 1][3],
                s[2]
            )));
        }
    }
    Ok(())
}

/// Sequential chain evaluation on a tape. `cores[l]` is `K×K×R_l×R_{l+1}`,
/// `inputs[l]` is `H×W×R_l`.
pub fn apply_var<F: Real>(tape: &Tape<F>, cores: &[Var], inputs: &[Var]) -> Result<Var> {
    if cores.len() != inputs.len() || cores.is_empty() {
        return Err(Error::shape(format!(
            "chain of order {} given {} inputs",
            cores.len(),
            inputs.len()
        )));
    }
    let shapes: Vec<Vec<usize>> = cores.iter().map(|&c| tape.shape(c)).collect();
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    validate_core_shapes(&refs)?;
    let spatial = tape.shape(inputs[0]);
    for (l, (&u, s)) in inputs.iter().zip(&shapes).enumerate() {
        let us = tape.shape(u);
        if us.len() != 3 || us[2] != s[2] || us[..2] != spatial[..2] {
            return Err(Error::shape(format!(
                "input {l} has shape {us:?}, expected {}×{}×{}",
                spatial[0], spatial[1], s[2]
            )));
        }
    }
    // V^1 is zero, so the first step convolves U^1 alone.
    let mut v = tape.conv2d(inputs[0], cores[0], None)?;
    for l in 1..cores.len() {
        let s = tape.add(v, inputs[l])?;
        v = tape.conv2d(s, cores[l], None)?;
    }
    Ok(v)
}

/// Full 2D convolution of `a: Ka×Ka×R0×R1` with `b: Kb×Kb×R1×R2`, summed over
/// the shared rank: result `(Ka+Kb−1)²×R0×R2`.
fn full_conv_contract<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (ka, r0, r1) = (a.shape()[0], a.shape()[2], a.shape()[3]);
    let (kb, r2) = (b.shape()[0], b.shape()[3]);
    let kc = ka + kb - 1;
    let mut out = vec![F::zero(); kc * kc * r0 * r2];
    let (ad, bd) = (a.data(), b.data());
    for ay in 0..ka {
        for ax in 0..ka {
            for by in 0..kb {
                for bx in 0..kb {
                    let (cy, cx) = (ay + by, ax + bx);
                    for i in 0..r0 {
                        for j in 0..r1 {
                            let av = ad[((ay * ka + ax) * r0 + i) * r1 + j];
                            for k in 0..r2 {
                                let bv = bd[((by * kb + bx) * r1 + j) * r2 + k];
                                out[((cy * kc + cx) * r0 + i) * r2 + k] += av * bv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[kc, kc, r0, r2], out).expect("composed kernel shape")
}

/// Parameters of a chain with kernel `k` and ranks `(R_1..R_{m+1})`.
pub fn chain_param_count(k: usize, ranks: &[usize]) -> usize {
    ranks.windows(2).map(|w| k * k * w[0] * w[1]).sum()
}

/// Size of the dense higher-order kernel the chain factorizes:
/// `K_eff² · Π_l R_l` with `K_eff = m(K−1)+1`. Equals the chain count at
/// `m = 1`.
pub fn dense_equivalent_count(m: usize, k: usize, ranks: &[usize]) -> usize {
    let k_eff = m * (k - 1) + 1;
    k_eff * k_eff * ranks.iter().product::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn order_one_compose_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let core = random(&[3, 3, 2, 4], &mut rng);
        let chain = CttdChain::new(vec![core.clone()]).unwrap();
        assert_eq!(chain.compose(), core);
    }

    #[test]
    fn rank_one_compose_is_polynomial_product() {
        let k1 = Tensor::<f64>::from_fn(&[3, 3, 1, 1], |i| (i + 1) as f64);
        let k2 = Tensor::<f64>::from_fn(&[3, 3, 1, 1], |i| if i % 2 == 0 { 1.0 } else { -2.0 });
        let c = CttdChain::new(vec![k1.clone(), k2.clone()]).unwrap().compose();
        assert_eq!(c.shape(), &[5, 5, 1, 1]);
        // Hand expansion: c[y][x] = Σ_{a+b=y, c+d=x} k1[a][c]·k2[b][d].
        for y in 0..5 {
            for x in 0..5 {
                let mut s = 0.0;
                for a in 0..3 {
                    for cc in 0..3 {
                        if y >= a && y - a < 3 && x >= cc && x - cc < 3 {
                            s += k1.data()[a * 3 + cc] * k2.data()[(y - a) * 3 + (x - cc)];
                        }
                    }
                }
                assert_eq!(c.data()[y * 5 + x], s);
            }
        }
    }

    #[test]
    fn compose_sums_over_inner_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[3, 3, 2, 2], &mut rng);
        let b = random(&[3, 3, 2, 3], &mut rng);
        let c = CttdChain::new(vec![a.clone(), b.clone()]).unwrap().compose();
        let pick = |t: &Tensor<f64>, r: usize, rr: usize| {
            let (k, ri, ro) = (t.shape()[0], t.shape()[2], t.shape()[3]);
            Tensor::from_fn(&[k, k, 1, 1], |i| t.data()[i * ri * ro + r * ro + rr])
        };
        for r1 in 0..2 {
            for r3 in 0..3 {
                let mut want = Tensor::<f64>::zeros(&[5, 5, 1, 1]);
                for r2 in 0..2 {
                    let s = CttdChain::new(vec![pick(&a, r1, r2), pick(&b, r2, r3)]).unwrap().compose();
                    want.add_assign(&s).unwrap();
                }
                assert!(pick(&c, r1, r3).max_abs_diff(&want) < 1e-12);
            }
        }
    }

    #[test]
    fn rank_mismatch_is_rejected() {
        let bad = CttdChain::<f64>::new(vec![Tensor::zeros(&[3, 3, 2, 2]), Tensor::zeros(&[3, 3, 3, 1])]);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn order_one_apply_is_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let core = random(&[3, 3, 2, 3], &mut rng);
        let u = random(&[5, 6, 2], &mut rng);
        let chain = CttdChain::new(vec![core.clone()]).unwrap();
        assert_eq!(chain.apply(std::slice::from_ref(&u)).unwrap(), conv2d(&u, &core, None).unwrap());
    }

    #[test]
    fn zero_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chain = CttdChain::new(vec![random(&[3, 3, 2, 2], &mut rng), random(&[3, 3, 2, 4], &mut rng)]).unwrap();
        let z = Tensor::zeros(&[4, 4, 2]);
        let out = chain.apply(&[z.clone(), z]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_channels_rejected() {
        let chain = CttdChain::<f64>::new(vec![Tensor::zeros(&[3, 3, 2, 2])]).unwrap();
        assert!(matches!(chain.apply(&[Tensor::zeros(&[4, 4, 3])]), Err(Error::Shape(_))));
    }

    #[test]
    fn dirac_inputs_match_composed_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chain = CttdChain::new(vec![random(&[3, 3, 1, 1], &mut rng), random(&[3, 3, 1, 1], &mut rng)]).unwrap();
        let mut u1 = Tensor::zeros(&[9, 9, 1]);
        u1.data_mut()[4 * 9 + 4] = 1.0;
        let z = Tensor::zeros(&[9, 9, 1]);
        let out = chain.apply(&[u1, z]).unwrap();
        // The impulse response is the composed kernel, centred.
        let c = chain.compose();
        for y in 0..5 {
            for x in 0..5 {
                let got = out.data()[(y + 2) * 9 + (x + 2)];
                assert!((got - c.data()[(4 - y) * 5 + (4 - x)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn counts() {
        assert_eq!(chain_param_count(3, &[8, 8, 8, 8]), 1728);
        assert_eq!(chain_param_count(3, &[4, 6]), dense_equivalent_count(1, 3, &[4, 6]));
        let chain = CttdChain::<f64>::new(vec![Tensor::zeros(&[3, 3, 2, 3]), Tensor::zeros(&[3, 3, 3, 4])]).unwrap();
        assert_eq!(chain.param_count(), 9 * 6 + 9 * 12);
        assert_eq!(chain.rank_vector(), vec![2, 3, 4]);
        for m in 1..6 {
            let ranks = vec![8; m + 1];
            assert_eq!(chain_param_count(3, &ranks), m * 9 * 64);
        }
    }
}
