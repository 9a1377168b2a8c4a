//! Dense row-major tensors and class-index masks.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array in row-major order.
///
/// Image tensors use the `N×C×H×W` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("zero extent in shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {n} scalars but {} were supplied",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// Extents of a rank-4 image tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!(
                "expected N×C×H×W tensor, got shape {:?}",
                self.shape
            )),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max),
        )
    }

    /// Copies image `i` of an `N×C×H×W` batch out as a `1×C×H×W` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if i >= n {
            return Err(shape_err!("batch index {i} out of range for N={n}"));
        }
        let len = c * h * w;
        Ok(Tensor {
            shape: vec![1, c, h, w],
            data: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    /// Stacks `1×C×H×W` (or `N_i×C×H×W`) tensors along the batch axis.
    pub fn stack_batch(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack an empty batch"))?;
        let (_, c, h, w) = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let (ni, ci, hi, wi) = t.dims4()?;
            if (ci, hi, wi) != (c, h, w) {
                return Err(shape_err!(
                    "batch item {:?} does not match {:?}",
                    t.shape,
                    first.shape
                ));
            }
            n += ni;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(vec![n, c, h, w], data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Per-pixel class labels laid out as `N×H×W`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(shape_err!("zero extent in mask {n}×{h}×{w}"));
        }
        if data.len() != n * h * w {
            return Err(shape_err!(
                "mask {n}×{h}×{w} holds {} labels but {} were supplied",
                n * h * w,
                data.len()
            ));
        }
        Ok(Mask { n, h, w, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Mask {
            n,
            h,
            w,
            data: vec![0; n * h * w],
        }
    }

    /// Single-image mask from row slices.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(shape_err!("ragged mask rows"));
        }
        Mask::new(1, h, w, rows.concat())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn batch_item(&self, i: usize) -> Result<Mask> {
        if i >= self.n {
            return Err(shape_err!("batch index {i} out of range for N={}", self.n));
        }
        let len = self.h * self.w;
        Ok(Mask {
            n: 1,
            h: self.h,
            w: self.w,
            data: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    pub fn stack_batch(items: &[&Mask]) -> Result<Mask> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack an empty batch"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(shape_err!(
                    "mask {}×{} does not match {}×{}",
                    m.h,
                    m.w,
                    first.h,
                    first.w
                ));
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        Mask::new(n, first.h, first.w, data)
    }
}
