/// Row-major `f64` matrix used for all float-model arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::from_vec shape");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · b`
    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul inner dims");
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let x = self.data[i * self.cols + k];
                if x == 0.0 {
                    continue;
                }
                for (s, &w) in o.iter_mut().zip(b.row(k)) {
                    *s += x * w;
                }
            }
        }
        out
    }

    /// `selfᵀ · b`
    pub fn t_matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "t_matmul rows");
        let mut out = Mat::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let brow = b.row(r);
            for (i, &x) in self.row(r).iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (s, &w) in o.iter_mut().zip(brow) {
                    *s += x * w;
                }
            }
        }
        out
    }

    /// `self · bᵀ`
    pub fn matmul_t(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "matmul_t cols");
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = a.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    pub fn add_row_vec(&mut self, v: &[f64]) {
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    /// Columns `[c0, c0 + width)` as a new matrix.
    pub fn col_slice(&self, c0: usize, width: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[c0..c0 + width]);
        }
        out
    }

    pub fn set_col_slice(&mut self, c0: usize, src: &Mat) {
        for r in 0..self.rows {
            self.row_mut(r)[c0..c0 + src.cols].copy_from_slice(src.row(r));
        }
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, x) in s.iter_mut().zip(self.row(r)) {
                *a += x;
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree() {
        let a = Mat::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Mat::from_vec(2, 3, vec![0.5, -1., 2., 1., 0., -3.]);
        let abt = a.matmul_t(&b);
        assert_eq!(abt.data, vec![4.5, -8., 9., -14.]);
        let atb = a.t_matmul(&b);
        assert_eq!(atb.rows, 3);
        assert_eq!(atb.at(0, 0), 1. * 0.5 + 4. * 1.);
    }
}
