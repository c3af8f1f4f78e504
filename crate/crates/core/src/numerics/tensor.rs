use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dim("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count of a matrix; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim("matmul expects two matrices"));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(&[m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::dim("transpose expects a matrix"));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(&[n, m], out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Softmax along `axis`, with max subtraction so large logits do not overflow.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for {shape:?}"
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (t, b) in buf.iter_mut().enumerate() {
                *b = out[base + t * inner];
            }
            softmax_in_place(&mut buf);
            for (t, b) in buf.iter().enumerate() {
                out[base + t * inner] = *b;
            }
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `out += a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    dispatch(|i, p| a[i * k + p], b, out, m, k, n);
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let mut bt = vec![0.0; k * n];
    for (j, row) in b.chunks_exact(k).enumerate() {
        for (p, &v) in row.iter().enumerate() {
            bt[p * n + j] = v;
        }
    }
    gemm_nn(a, &bt, out, m, k, n);
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    dispatch(|i, p| a[p * m + i], b, out, m, k, n);
}

#[inline(always)]
fn dispatch(
    a: impl Fn(usize, usize) -> f64,
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was just detected.
        return unsafe { gemm_avx2(a, b, out, m, k, n) };
    }
    gemm_tiled(a, b, out, m, k, n);
}

// Wider vectors only; no fused multiply-add, so results are bit-identical
// to the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(
    a: impl Fn(usize, usize) -> f64,
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    gemm_tiled(a, b, out, m, k, n);
}

const TILE_R: usize = 4;
const TILE_C: usize = 8;

/// `out[i][j] += Σ_p a(i, p) · b[p][j]`, accumulated in ascending `p` for
/// every element, so the result does not depend on the tiling. Rows of `a`
/// are packed four at a time; the interior runs on a 4×8 register tile.
#[inline(always)]
fn gemm_tiled(
    a: impl Fn(usize, usize) -> f64,
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    let cols = n - n % TILE_C;
    let mut panel = vec![0.0; k * TILE_R];
    for i in (0..m).step_by(TILE_R) {
        let height = TILE_R.min(m - i);
        for p in 0..k {
            for r in 0..TILE_R {
                panel[p * TILE_R + r] = if r < height { a(i + r, p) } else { 0.0 };
            }
        }
        for j in (0..cols).step_by(TILE_C) {
            let mut acc = [[0.0; TILE_C]; TILE_R];
            for (r, row) in acc.iter_mut().enumerate().take(height) {
                row.copy_from_slice(&out[(i + r) * n + j..][..TILE_C]);
            }
            for (ap, bp) in panel.chunks_exact(TILE_R).zip(b[j..].chunks(n)) {
                let bp = &bp[..TILE_C];
                for (row, &av) in acc.iter_mut().zip(ap) {
                    for (o, &bv) in row.iter_mut().zip(bp) {
                        *o += av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate().take(height) {
                out[(i + r) * n + j..][..TILE_C].copy_from_slice(row);
            }
        }
        if cols < n {
            for r in 0..height {
                let out_row = &mut out[(i + r) * n + cols..(i + r + 1) * n];
                for (p, ap) in panel.chunks_exact(TILE_R).enumerate() {
                    for (o, &bv) in out_row.iter_mut().zip(&b[p * n + cols..(p + 1) * n]) {
                        *o += ap[r] * bv;
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators (fixed summation order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(eye.matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = rng.uniform_tensor(&[5, 4], -1.0, 1.0);
        let b = rng.uniform_tensor(&[4, 3], -1.0, 1.0);
        let fast = a.matmul(&b).unwrap();
        let slow = naive(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_kernels_agree() {
        let mut rng = Rng::new(5);
        let a = rng.uniform_tensor(&[6, 7], -1.0, 1.0);
        let b = rng.uniform_tensor(&[5, 7], -1.0, 1.0);
        let mut nt = vec![0.0; 30];
        gemm_nt(a.data(), b.data(), &mut nt, 6, 7, 5);
        let want = a.matmul(&b.transpose().unwrap()).unwrap();
        for (x, y) in nt.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = rng.uniform_tensor(&[6, 3], -1.0, 1.0);
        let mut tn = vec![0.0; 21];
        gemm_tn(a.data(), c.data(), &mut tn, 7, 6, 3);
        let want = a.transpose().unwrap().matmul(&c).unwrap();
        for (x, y) in tn.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor::new(&[3], vec![0.0; 3]).unwrap();
        for v in softmax(&x, 0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::new(&[2], vec![1000.0, 0.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.all_finite());
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_high_precision_reference() {
        // e^k / (e + e^2 + e^3) evaluated to 30 digits with mpmath.
        let expected = [
            0.090_030_573_170_380_458,
            0.244_728_471_054_797_652,
            0.665_240_955_774_821_890,
        ];
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = Tensor::from_rows(&[[1.0, 5.0], [3.0, -2.0]]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.at(0, 0) + y.at(1, 0) - 1.0).abs() < 1e-15);
        assert!((y.at(0, 1) + y.at(1, 1) - 1.0).abs() < 1e-15);
        assert!(y.at(1, 0) > y.at(0, 0));
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-1e4f64..1e4, 1..40)) {
            let n = v.len();
            let y = softmax(&Tensor::new(&[n], v).unwrap(), 0).unwrap();
            let total: f64 = y.data().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
            proptest::prop_assert!(y.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
