//! Golden outputs from tensor files.

use std::fmt;
use std::str::FromStr;

use crate::dwe::Requant;
use crate::error::{Result, SimError};
use crate::numerics::{LaneFormat, Precision};
use crate::workloads::oracle::{conv2d, depthwise3x3, matmul_fp16_chain, pointwise, transpose, ConvShape};
use crate::workloads::tensor::{ElemFormat, Layout, Tensor, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKernel {
    /// input (H, W, C), weights with C*9 elements `[c][ky][kx]`.
    Depthwise,
    /// input (H, W, C_in), weights `(C_out, K, K, C_in)`.
    Conv,
    /// input (H, W, C_in), weights `(C_out, C_in)`.
    Pointwise,
    /// binary16 X (M, K) times W (K, N), ascending-k FMA chain.
    Matmul,
    /// Any matrix.
    Transpose,
}

impl OracleKernel {
    pub const ALL: [OracleKernel; 5] = [OracleKernel::Depthwise, OracleKernel::Conv, OracleKernel::Pointwise, OracleKernel::Matmul, OracleKernel::Transpose];

    pub fn inputs(self) -> usize {
        match self {
            OracleKernel::Transpose => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for OracleKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKernel::Depthwise => "depthwise",
            OracleKernel::Conv => "conv",
            OracleKernel::Pointwise => "pointwise",
            OracleKernel::Matmul => "matmul",
            OracleKernel::Transpose => "transpose",
        })
    }
}

impl FromStr for OracleKernel {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        OracleKernel::ALL.into_iter().find(|k| k.to_string() == s).ok_or_else(|| SimError::Parse(format!("unknown oracle kernel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OracleOpts {
    pub requant: Requant,
    pub pad: usize,
}

fn int_values(t: &Tensor, what: &str) -> Result<Vec<i32>> {
    match t.spec.format {
        ElemFormat::Int(_) => Ok(t.values()),
        ElemFormat::Fp16 => Err(SimError::Validation(format!("{what} must be an integer tensor"))),
    }
}

fn feature_map(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.spec.dims[..] {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(SimError::Shape(format!("expected an (H, W, C) input, got dims {:?}", t.spec.dims))),
    }
}

fn i8_map(h: usize, w: usize, c: usize, v: Vec<i8>) -> Result<Tensor> {
    let vals: Vec<i32> = v.into_iter().map(i32::from).collect();
    Tensor::from_values(TensorSpec::hwc(h, w, c, LaneFormat::signed(Precision::B8)), &vals)
}

pub fn run_oracle(kernel: OracleKernel, inputs: &[Tensor], opts: &OracleOpts) -> Result<Tensor> {
    if inputs.len() != kernel.inputs() {
        return Err(SimError::Validation(format!("{kernel} takes {} tensor file(s), got {}", kernel.inputs(), inputs.len())));
    }
    let rq = opts.requant;
    match kernel {
        OracleKernel::Depthwise => {
            let (h, w, c) = feature_map(&inputs[0])?;
            let wts = int_values(&inputs[1], "weights")?;
            if wts.len() != 9 * c {
                return Err(SimError::Shape(format!("depthwise weights need {} elements, got {}", 9 * c, wts.len())));
            }
            if h < 3 || w < 3 {
                return Err(SimError::Shape("depthwise input must be at least 3x3".into()));
            }
            int_values(&inputs[0], "input")?;
            i8_map(h - 2, w - 2, c, depthwise3x3(&inputs[0], &wts, rq))
        }
        OracleKernel::Conv => {
            let (h, w, c_in) = feature_map(&inputs[0])?;
            let wts = int_values(&inputs[1], "weights")?;
            let (c_out, k) = match inputs[1].spec.dims[..] {
                [f, k1, k2, c] if k1 == k2 && c == c_in => (f, k1),
                _ => return Err(SimError::Shape(format!("conv weights must be (C_out, K, K, {c_in}), got {:?}", inputs[1].spec.dims))),
            };
            let s = ConvShape { h, w, c_in, c_out, k, pad: opts.pad };
            if s.out_h() == 0 || s.out_w() == 0 {
                return Err(SimError::Shape("kernel larger than the padded input".into()));
            }
            int_values(&inputs[0], "input")?;
            i8_map(s.out_h(), s.out_w(), c_out, conv2d(&inputs[0], &wts, &s, rq))
        }
        OracleKernel::Pointwise => {
            let (h, w, c_in) = feature_map(&inputs[0])?;
            let wts = int_values(&inputs[1], "weights")?;
            let c_out = match inputs[1].spec.dims[..] {
                [f, c] if c == c_in => f,
                _ => return Err(SimError::Shape(format!("pointwise weights must be (C_out, {c_in}), got {:?}", inputs[1].spec.dims))),
            };
            int_values(&inputs[0], "input")?;
            i8_map(h, w, c_out, pointwise(&inputs[0], &wts, c_out, rq))
        }
        OracleKernel::Matmul => {
            let (x, w) = (&inputs[0], &inputs[1]);
            if x.spec.format != ElemFormat::Fp16 || w.spec.format != ElemFormat::Fp16 {
                return Err(SimError::Validation("matmul operands must be fp16".into()));
            }
            let (m, k, n) = match (&x.spec.dims[..], &w.spec.dims[..]) {
                (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
                _ => return Err(SimError::Shape(format!("matmul needs (M, K) x (K, N), got {:?} x {:?}", x.spec.dims, w.spec.dims))),
            };
            let xv: Vec<_> = (0..m * k).map(|i| x.get_fp16(i)).collect();
            let wv: Vec<_> = (0..k * n).map(|i| w.get_fp16(i)).collect();
            Tensor::from_fp16(TensorSpec::matrix(m, n, ElemFormat::Fp16), &matmul_fp16_chain(&xv, &wv, m, n, k))
        }
        OracleKernel::Transpose => {
            let t = &inputs[0];
            let (r, c) = match t.spec.dims[..] {
                [r, c] if t.spec.layout == Layout::RowMajor => (r, c),
                _ => return Err(SimError::Shape(format!("transpose needs a row-major matrix, got dims {:?}", t.spec.dims))),
            };
            let spec = TensorSpec::matrix(c, r, t.spec.format);
            match t.spec.format {
                ElemFormat::Fp16 => {
                    let v: Vec<_> = (0..r * c).map(|i| t.get_fp16(i)).collect();
                    Tensor::from_fp16(spec, &transpose(&v, r, c))
                }
                ElemFormat::Int(_) => Tensor::from_values(spec, &transpose(&t.values(), r, c)),
            }
        }
    }
}
