//! Plain reference implementations that every kernel and engine result is
//! checked against. Integer accumulation wraps at 32 bits like the hardware.

use crate::dwe::Requant;
use crate::numerics::{fp16_fma, Fp16};

use super::tensor::Tensor;

/// Stride-1 convolution shape. Input is (h, w, c_in) before padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad + 1).saturating_sub(self.k)
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad + 1).saturating_sub(self.k)
    }

    pub fn macs(&self) -> u64 {
        (self.out_h() * self.out_w() * self.c_out * self.k * self.k * self.c_in) as u64
    }

    /// Weight index for filter `f`, tap (dy, dx), channel `c`.
    pub fn w_index(&self, f: usize, dy: usize, dx: usize, c: usize) -> usize {
        ((f * self.k + dy) * self.k + dx) * self.c_in + c
    }
}

/// Input element with zero padding.
fn padded(input: &Tensor, s: &ConvShape, y: usize, x: usize, c: usize) -> i32 {
    let (y, x) = (y as isize - s.pad as isize, x as isize - s.pad as isize);
    if y < 0 || x < 0 || y >= s.h as isize || x >= s.w as isize {
        0
    } else {
        input.at3(y as usize, x as usize, c)
    }
}

/// Raw accumulators, HWC order.
pub fn conv2d_acc(input: &Tensor, weights: &[i32], s: &ConvShape) -> Vec<i32> {
    let mut out = Vec::with_capacity(s.out_h() * s.out_w() * s.c_out);
    for y in 0..s.out_h() {
        for x in 0..s.out_w() {
            for f in 0..s.c_out {
                let mut acc = 0i32;
                for dy in 0..s.k {
                    for dx in 0..s.k {
                        for c in 0..s.c_in {
                            let a = padded(input, s, y + dy, x + dx, c);
                            acc = acc.wrapping_add(a.wrapping_mul(weights[s.w_index(f, dy, dx, c)]));
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn requantize(acc: &[i32], rq: Requant) -> Vec<i8> {
    acc.iter().map(|&a| rq.apply(a)).collect()
}

pub fn conv2d(input: &Tensor, weights: &[i32], s: &ConvShape, rq: Requant) -> Vec<i8> {
    requantize(&conv2d_acc(input, weights, s), rq)
}

/// 1x1 convolution; weights are [c_out][c_in].
pub fn pointwise(input: &Tensor, weights: &[i32], c_out: usize, rq: Requant) -> Vec<i8> {
    let d = &input.spec.dims;
    let s = ConvShape { h: d[0], w: d[1], c_in: d[2], c_out, k: 1, pad: 0 };
    conv2d(input, weights, &s, rq)
}

/// Valid 3x3 depthwise convolution; weights are [c][9].
pub fn depthwise3x3(input: &Tensor, weights: &[i32], rq: Requant) -> Vec<i8> {
    let d = &input.spec.dims;
    let (h, w, c) = (d[0], d[1], d[2]);
    let (ho, wo) = (h.saturating_sub(2), w.saturating_sub(2));
    let mut out = Vec::with_capacity(ho * wo * c);
    for y in 0..ho {
        for x in 0..wo {
            for ch in 0..c {
                let mut acc = 0i32;
                for t in 0..9 {
                    acc = acc.wrapping_add(input.at3(y + t / 3, x + t % 3, ch).wrapping_mul(weights[ch * 9 + t]));
                }
                out.push(rq.apply(acc));
            }
        }
    }
    out
}

/// Row-major `a` (m x k) times `b` (k x n).
pub fn matmul_int(a: &[i32], b: &[i32], m: usize, n: usize, k: usize) -> Vec<i32> {
    let mut z = vec![0i32; m * n];
    for i in 0..m {
        for j in 0..n {
            z[i * n + j] = (0..k).fold(0i32, |acc, l| acc.wrapping_add(a[i * k + l].wrapping_mul(b[l * n + j])));
        }
    }
    z
}

/// Binary16 product accumulated in ascending k, one rounding per step.
pub fn matmul_fp16_chain(x: &[Fp16], w: &[Fp16], m: usize, n: usize, k: usize) -> Vec<Fp16> {
    let mut z = vec![Fp16::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            z[i * n + j] = (0..k).fold(Fp16::ZERO, |acc, l| fp16_fma(x[i * k + l], w[l * n + j], acc));
        }
    }
    z
}

pub fn transpose<T: Copy>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..cols * rows).map(|i| a[(i % rows) * cols + i / rows]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{LaneFormat, Precision};
    use crate::workloads::tensor::{Layout, TensorSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(h: usize, w: usize, c: usize, f: LaneFormat, rng: &mut ChaCha8Rng) -> Tensor {
        let (lo, hi) = f.range();
        let v: Vec<i32> = (0..h * w * c).map(|_| rng.gen_range(lo..=hi) as i32).collect();
        Tensor::from_values(TensorSpec::hwc(h, w, c, f), &v).unwrap()
    }

    fn random_vals(n: usize, lo: i32, hi: i32, rng: &mut ChaCha8Rng) -> Vec<i32> {
        (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
    }

    /// Convolution lowered to im2col then a matrix product.
    fn conv_via_im2col(input: &Tensor, weights: &[i32], s: &ConvShape) -> Vec<i32> {
        let kk = s.k * s.k * s.c_in;
        let rows = s.out_h() * s.out_w();
        let mut cols = Vec::with_capacity(rows * kk);
        for y in 0..s.out_h() {
            for x in 0..s.out_w() {
                for dy in 0..s.k {
                    for dx in 0..s.k {
                        for c in 0..s.c_in {
                            cols.push(padded(input, s, y + dy, x + dx, c));
                        }
                    }
                }
            }
        }
        let wt = transpose(weights, s.c_out, kk);
        matmul_int(&cols, &wt, rows, s.c_out, kk)
    }

    #[test]
    fn tiny_conv_by_hand() {
        let f = LaneFormat::signed(Precision::B8);
        let t = Tensor::from_values(TensorSpec::hwc(2, 2, 1, f), &[1, 2, 3, 4]).unwrap();
        let s = ConvShape { h: 2, w: 2, c_in: 1, c_out: 1, k: 3, pad: 1 };
        let w = vec![1; 9];
        assert_eq!(conv2d_acc(&t, &w, &s), vec![10, 10, 10, 10]);
        let s1 = ConvShape { k: 1, pad: 0, ..s };
        assert_eq!(conv2d_acc(&t, &[-2], &s1), vec![-2, -4, -6, -8]);
    }

    #[test]
    fn transpose_small() {
        assert_eq!(transpose(&[1, 2, 3, 4, 5, 6], 2, 3), vec![1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn fp16_chain_single_step_is_rounded_product() {
        let x = [Fp16::from_f64(1.5), Fp16::from_f64(-3.0)];
        let w = [Fp16::from_f64(0.1)];
        let z = matmul_fp16_chain(&x, &w, 2, 1, 1);
        assert_eq!(z[0], Fp16::from_f64(1.5 * Fp16::from_f64(0.1).to_f64()));
        assert_eq!(z[1], Fp16::from_f64(-3.0 * Fp16::from_f64(0.1).to_f64()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn conv_direct_equals_im2col(h in 1usize..6, w in 1usize..6, ci in 1usize..6, co in 1usize..5,
                                     k in prop::sample::select(vec![1usize, 3]), pad in 0usize..2, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = ConvShape { h, w, c_in: ci, c_out: co, k, pad };
            let t = random_tensor(h, w, ci, LaneFormat::unsigned(Precision::B4), &mut rng);
            let wts = random_vals(co * k * k * ci, -8, 7, &mut rng);
            prop_assert_eq!(conv2d_acc(&t, &wts, &s), conv_via_im2col(&t, &wts, &s));
        }

        #[test]
        fn layout_does_not_change_conv(h in 1usize..5, w in 1usize..5, ci in 1usize..5, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = ConvShape { h, w, c_in: ci, c_out: 2, k: 3, pad: 1 };
            let t = random_tensor(h, w, ci, LaneFormat::signed(Precision::B8), &mut rng);
            let wts = random_vals(2 * 9 * ci, -128, 127, &mut rng);
            let chw = t.to_layout(Layout::Chw).unwrap();
            prop_assert_eq!(conv2d_acc(&t, &wts, &s), conv2d_acc(&chw, &wts, &s));
        }

        #[test]
        fn depthwise_equals_masked_dense(h in 3usize..7, w in 3usize..7, c in 1usize..6, shift in 0u8..8, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(h, w, c, LaneFormat::signed(Precision::B8), &mut rng);
            let dw = random_vals(c * 9, -128, 127, &mut rng);
            let s = ConvShape { h, w, c_in: c, c_out: c, k: 3, pad: 0 };
            let mut dense = vec![0; c * 9 * c];
            for f in 0..c {
                for tap in 0..9 {
                    dense[s.w_index(f, tap / 3, tap % 3, f)] = dw[f * 9 + tap];
                }
            }
            let rq = Requant { shift, relu: shift % 2 == 0 };
            prop_assert_eq!(depthwise3x3(&t, &dw, rq), conv2d(&t, &dense, &s, rq));
        }

        #[test]
        fn pointwise_equals_matmul(h in 1usize..5, w in 1usize..5, ci in 1usize..9, co in 1usize..9, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(h, w, ci, LaneFormat::unsigned(Precision::B8), &mut rng);
            let wts = random_vals(co * ci, -128, 127, &mut rng);
            let acc = matmul_int(&t.values(), &transpose(&wts, co, ci), h * w, co, ci);
            let rq = Requant { shift: 6, relu: false };
            prop_assert_eq!(pointwise(&t, &wts, co, rq), requantize(&acc, rq));
        }

        #[test]
        fn fp16_chain_tracks_exact_sum(m in 1usize..4, n in 1usize..4, k in 1usize..12, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |len: usize| -> Vec<Fp16> {
                (0..len).map(|_| Fp16::from_f64(rng.gen_range(-1.0..1.0))).collect()
            };
            let (x, w) = (gen(m * k), gen(k * n));
            let z = matmul_fp16_chain(&x, &w, m, n, k);
            for i in 0..m {
                for j in 0..n {
                    let exact: f64 = (0..k).map(|l| x[i * k + l].to_f64() * w[l * n + j].to_f64()).sum();
                    // each step rounds once: |err| <= k * 2^-11 * running magnitude
                    let bound = k as f64 * 2f64.powi(-11) * (0..k).map(|l| (x[i*k+l].to_f64() * w[l*n+j].to_f64()).abs()).sum::<f64>().max(1.0) + 2f64.powi(-24) * k as f64;
                    prop_assert!((z[i * n + j].to_f64() - exact).abs() <= bound);
                }
            }
        }

        #[test]
        fn transpose_involution(rows in 1usize..10, cols in 1usize..10) {
            let a: Vec<usize> = (0..rows * cols).collect();
            let t = transpose(&a, rows, cols);
            for i in 0..rows { for j in 0..cols { prop_assert_eq!(t[j * rows + i], a[i * cols + j]); } }
            prop_assert_eq!(transpose(&t, cols, rows), a);
        }
    }
}
