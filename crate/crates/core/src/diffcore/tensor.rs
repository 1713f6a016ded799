use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Rank 0 (shape `[]`) holds a scalar, rank 1 a vector (used for biases),
/// rank 2 a matrix whose rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err("new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err("item", &self.shape, &[]));
        }
        Ok(self.data[0])
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err(op, &self.shape, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul_elem(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.expect_matrix("matmul")?;
        let (k2, m) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let (r, c) = self.expect_matrix("add_row")?;
        if bias.shape != [c] {
            return Err(shape_err("add_row", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias.data) {
                *o = *o + b;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Column sums of a matrix, as a vector.
    pub fn sum_rows(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("sum_rows")?;
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o = *o + x;
            }
        }
        Ok(Self::vector(out))
    }

    pub fn relu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// Scales each row to unit Euclidean norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&self) -> Result<Self> {
        let (r, _) = self.expect_matrix("l2_normalize_rows")?;
        let mut out = self.clone();
        for i in 0..r {
            let row = out.row_mut(i);
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|x| *x = *x / norm);
            }
        }
        Ok(out)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&self) -> Result<Self> {
        let (r, _) = self.expect_matrix("log_softmax_rows")?;
        let mut out = self.clone();
        for i in 0..r {
            let row = out.row_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x = *x - lse);
        }
        Ok(out)
    }

    pub fn softmax_rows(&self) -> Result<Self> {
        Ok(self.log_softmax_rows()?.map(|x| x.exp()))
    }

    pub fn exp(&self) -> Self {
        self.map(|x| x.exp())
    }

    pub fn ln(&self) -> Result<Self> {
        if let Some(bad) = self.data.iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive input {bad}"),
            });
        }
        Ok(self.map(|x| x.ln()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len().max(1) as f64)
    }

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element type, e.g. to run the same data through an `f32` graph.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Stabilised `log Σ exp(x_i)`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);
    }

    #[test]
    fn normalize_three_four_five() {
        let t = Tensor::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(t.l2_normalize_rows().unwrap().data(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_row_normalizes_to_zero() {
        let t = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(t.l2_normalize_rows().unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu_clips_negatives() {
        assert_eq!(Tensor::vector(vec![-1.0, 2.0]).relu().data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn log_rejects_nonpositive() {
        assert!(Tensor::vector(vec![1.0, 0.0]).ln().is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let t = Tensor::from_rows(&[[1000.0, 1000.0]]).unwrap();
        let ls = t.log_softmax_rows().unwrap();
        assert!((ls.data()[0] + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 3.0, 3.0]]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn transpose_round_trip() {
        let t = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(t.transpose().unwrap().transpose().unwrap(), t);
        assert_eq!(t.transpose().unwrap().row(2), &[3.0, 6.0]);
    }
}
