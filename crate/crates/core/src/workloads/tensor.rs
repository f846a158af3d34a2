//! Dense tensors with packed sub-byte or binary16 elements.
//!
//! Element `e` of the flat element order occupies bits `[e*b, (e+1)*b)` of the
//! little-endian byte stream, so a word of the buffer is a packed vector with
//! lane 0 first.
//!
//! File format: a text header, one `key value...` per line, closed by `---`,
//! followed by the raw data bytes.
//!
//! ```text
//! hetsim-tensor 1
//! dims 16 16 32
//! format u8
//! layout hwc
//! ---
//! <bytes>
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SimError};
use crate::numerics::{Fp16, LaneFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemFormat {
    Int(LaneFormat),
    Fp16,
}

impl ElemFormat {
    pub fn bits(&self) -> u32 {
        match self {
            ElemFormat::Int(f) => f.bits(),
            ElemFormat::Fp16 => 16,
        }
    }
}

impl From<LaneFormat> for ElemFormat {
    fn from(f: LaneFormat) -> Self {
        ElemFormat::Int(f)
    }
}

impl fmt::Display for ElemFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemFormat::Int(l) => write!(f, "{l}"),
            ElemFormat::Fp16 => write!(f, "fp16"),
        }
    }
}

impl FromStr for ElemFormat {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "fp16" {
            Ok(ElemFormat::Fp16)
        } else {
            Ok(ElemFormat::Int(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Hwc,
    Chw,
    RowMajor,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Hwc => "hwc",
            Layout::Chw => "chw",
            Layout::RowMajor => "rowmajor",
        })
    }
}

impl FromStr for Layout {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hwc" => Ok(Layout::Hwc),
            "chw" => Ok(Layout::Chw),
            "rowmajor" | "row-major" => Ok(Layout::RowMajor),
            _ => Err(SimError::Parse(format!("unknown layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorSpec {
    /// Logical dims: (H, W, C) for feature maps whatever the layout, (rows, cols) for matrices.
    pub dims: Vec<usize>,
    pub format: ElemFormat,
    pub layout: Layout,
}

impl TensorSpec {
    pub fn new(dims: &[usize], format: ElemFormat, layout: Layout) -> Self {
        Self { dims: dims.to_vec(), format, layout }
    }

    pub fn hwc(h: usize, w: usize, c: usize, f: LaneFormat) -> Self {
        Self::new(&[h, w, c], ElemFormat::Int(f), Layout::Hwc)
    }

    pub fn matrix(rows: usize, cols: usize, format: ElemFormat) -> Self {
        Self::new(&[rows, cols], format, Layout::RowMajor)
    }

    pub fn elems(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn bytes(&self) -> usize {
        (self.elems() * self.format.bits() as usize).div_ceil(8)
    }

    /// Flat element index of feature-map coordinate (y, x, c) under the layout.
    pub fn index3(&self, y: usize, x: usize, c: usize) -> usize {
        let [h, w, ch] = [self.dims[0], self.dims[1], self.dims[2]];
        match self.layout {
            Layout::Chw => (c * h + y) * w + x,
            _ => (y * w + x) * ch + c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub spec: TensorSpec,
    pub data: Vec<u8>,
}

impl Tensor {
    pub fn zeros(spec: TensorSpec) -> Self {
        let n = spec.bytes();
        Self { spec, data: vec![0; n] }
    }

    pub fn from_bytes(spec: TensorSpec, data: Vec<u8>) -> Result<Self> {
        if data.len() != spec.bytes() {
            return Err(SimError::Shape(format!("{} bytes for a tensor of {}", data.len(), spec.bytes())));
        }
        Ok(Self { spec, data })
    }

    /// Integer tensor from flat values; values must fit the format.
    pub fn from_values(spec: TensorSpec, values: &[i32]) -> Result<Self> {
        if values.len() != spec.elems() {
            return Err(SimError::Shape(format!("{} values for {} elements", values.len(), spec.elems())));
        }
        let mut t = Self::zeros(spec);
        for (i, &v) in values.iter().enumerate() {
            t.set(i, v)?;
        }
        Ok(t)
    }

    pub fn from_fp16(spec: TensorSpec, values: &[Fp16]) -> Result<Self> {
        if spec.format != ElemFormat::Fp16 || values.len() != spec.elems() {
            return Err(SimError::Shape("fp16 tensor shape or format mismatch".into()));
        }
        Ok(Self { data: values.iter().flat_map(|v| v.0.to_le_bytes()).collect(), spec })
    }

    fn bits(&self) -> usize {
        self.spec.format.bits() as usize
    }

    fn raw(&self, i: usize) -> u32 {
        let b = self.bits();
        let bit = i * b;
        let mut v = 0u32;
        for k in 0..b.div_ceil(8).max(1) {
            if let Some(&byte) = self.data.get(bit / 8 + k) {
                v |= (byte as u32) << (8 * k);
            }
        }
        let v = v >> (bit % 8);
        if b == 32 {
            v
        } else {
            v & ((1 << b) - 1)
        }
    }

    pub fn get(&self, i: usize) -> i32 {
        match self.spec.format {
            ElemFormat::Int(f) => f.extend(self.raw(i)),
            ElemFormat::Fp16 => self.raw(i) as i32,
        }
    }

    pub fn get_fp16(&self, i: usize) -> Fp16 {
        Fp16(self.raw(i) as u16)
    }

    pub fn set(&mut self, i: usize, v: i32) -> Result<()> {
        if let ElemFormat::Int(f) = self.spec.format {
            let (lo, hi) = f.range();
            if (v as i64) < lo || (v as i64) > hi {
                return Err(SimError::Validation(format!("value {v} does not fit {f}")));
            }
        }
        self.set_raw(i, v as u32);
        Ok(())
    }

    pub fn set_fp16(&mut self, i: usize, v: Fp16) {
        self.set_raw(i, v.0 as u32);
    }

    fn set_raw(&mut self, i: usize, v: u32) {
        let b = self.bits();
        let bit = i * b;
        let mask: u64 = if b == 32 { u32::MAX as u64 } else { (1u64 << b) - 1 };
        let val = (v as u64 & mask) << (bit % 8);
        let m = mask << (bit % 8);
        for k in 0..(bit % 8 + b).div_ceil(8) {
            let byte = &mut self.data[bit / 8 + k];
            let (vm, mm) = ((val >> (8 * k)) as u8, (m >> (8 * k)) as u8);
            *byte = (*byte & !mm) | (vm & mm);
        }
    }

    pub fn values(&self) -> Vec<i32> {
        (0..self.spec.elems()).map(|i| self.get(i)).collect()
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> i32 {
        self.get(self.spec.index3(y, x, c))
    }

    /// Same feature map in another layout; lossless.
    pub fn to_layout(&self, layout: Layout) -> Result<Tensor> {
        if self.spec.dims.len() != 3 {
            return Err(SimError::Shape("layout conversion needs an (H, W, C) tensor".into()));
        }
        let mut spec = self.spec.clone();
        spec.layout = layout;
        let mut out = Tensor::zeros(spec.clone());
        let [h, w, c] = [spec.dims[0], spec.dims[1], spec.dims[2]];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = self.raw(self.spec.index3(y, x, ch));
                    out.set_raw(spec.index3(y, x, ch), v);
                }
            }
        }
        Ok(out)
    }

    pub fn header(&self) -> String {
        let dims: Vec<String> = self.spec.dims.iter().map(|d| d.to_string()).collect();
        format!("hetsim-tensor 1\ndims {}\nformat {}\nlayout {}\n---\n", dims.join(" "), self.spec.format, self.spec.layout)
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn parse_file_bytes(bytes: &[u8]) -> Result<Tensor> {
        let marker = b"\n---\n";
        let pos = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| SimError::Parse("tensor header has no `---` terminator".into()))?;
        let head = std::str::from_utf8(&bytes[..pos]).map_err(|_| SimError::Parse("tensor header is not text".into()))?;
        let data = bytes[pos + marker.len()..].to_vec();
        let mut lines = head.lines();
        if lines.next().map(str::trim) != Some("hetsim-tensor 1") {
            return Err(SimError::Parse("not a tensor file (missing `hetsim-tensor 1`)".into()));
        }
        let (mut dims, mut format, mut layout) = (None, None, None);
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("dims") => {
                    dims = Some(
                        parts
                            .map(|p| p.parse::<usize>().map_err(|_| SimError::Parse(format!("bad dim `{p}`"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                Some("format") => format = Some(parts.next().unwrap_or("").parse::<ElemFormat>()?),
                Some("layout") => layout = Some(parts.next().unwrap_or("").parse::<Layout>()?),
                Some(k) => return Err(SimError::Parse(format!("unknown tensor header key `{k}`"))),
                None => {}
            }
        }
        let missing = |k: &str| SimError::Parse(format!("tensor header lacks `{k}`"));
        let spec = TensorSpec {
            dims: dims.ok_or_else(|| missing("dims"))?,
            format: format.ok_or_else(|| missing("format"))?,
            layout: layout.ok_or_else(|| missing("layout"))?,
        };
        Tensor::from_bytes(spec, data)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Tensor> {
        Tensor::parse_file_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{PackedVector, Precision};
    use proptest::prelude::*;

    #[test]
    fn packing_matches_lane_order() {
        let f = LaneFormat::signed(Precision::B4);
        let vals = [1, -2, 3, -4, 5, -6, 7, -8];
        let t = Tensor::from_values(TensorSpec::matrix(1, 8, ElemFormat::Int(f)), &vals).unwrap();
        let w = u32::from_le_bytes(t.data[..4].try_into().unwrap());
        assert_eq!(PackedVector::new(w, f).unpack(), vals.to_vec());
    }

    #[test]
    fn file_round_trip() {
        let spec = TensorSpec::hwc(2, 3, 4, LaneFormat::unsigned(Precision::B2));
        let vals: Vec<i32> = (0..24).map(|i| i % 4).collect();
        let t = Tensor::from_values(spec, &vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        t.write_file(&p).unwrap();
        assert_eq!(Tensor::read_file(&p).unwrap(), t);
        assert!(Tensor::parse_file_bytes(b"nope\n---\n").is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        let spec = TensorSpec::matrix(1, 1, ElemFormat::Int(LaneFormat::signed(Precision::B2)));
        assert!(Tensor::from_values(spec, &[2]).is_err());
    }

    proptest! {
        #[test]
        fn layout_round_trip(h in 1usize..6, w in 1usize..6, c in 1usize..9, bits in 0usize..3, seed: u64) {
            use rand::{Rng, SeedableRng};
            let f = LaneFormat::signed([Precision::B2, Precision::B4, Precision::B8][bits]);
            let (lo, hi) = f.range();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<i32> = (0..h * w * c).map(|_| rng.gen_range(lo..=hi) as i32).collect();
            let t = Tensor::from_values(TensorSpec::hwc(h, w, c, f), &vals).unwrap();
            let chw = t.to_layout(Layout::Chw).unwrap();
            for y in 0..h { for x in 0..w { for ch in 0..c {
                prop_assert_eq!(chw.at3(y, x, ch), t.at3(y, x, ch));
            }}}
            prop_assert_eq!(chw.to_layout(Layout::Hwc).unwrap(), t);
        }
    }
}
