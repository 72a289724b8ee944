//! Dense row-major tensors and the handful of matrix kernels the stack
//! needs. The kernels keep a fixed accumulation order so results are
//! bit-reproducible regardless of thread count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorGrid {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        TensorGrid {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// c[m,n] = a[m,k] * b[k,n]; c is overwritten.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// out[c,r] = w[r,c].
pub fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = w[r * cols + c];
        }
    }
    out
}

/// gw[o,i] += sum_r dz[r,o] * x[r,i].
pub fn add_outer_products(
    gw: &mut [f64],
    dz: &[f64],
    x: &[f64],
    rows: usize,
    out: usize,
    input: usize,
) {
    debug_assert_eq!(gw.len(), out * input);
    debug_assert_eq!(dz.len(), rows * out);
    debug_assert_eq!(x.len(), rows * input);
    for r in 0..rows {
        let xrow = &x[r * input..(r + 1) * input];
        let dzrow = &dz[r * out..(r + 1) * out];
        for (o, &d) in dzrow.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let grow = &mut gw[o * input..(o + 1) * input];
            for i in 0..input {
                grow[i] += d * xrow[i];
            }
        }
    }
}

/// Add bias to every row of z.
pub fn add_bias(z: &mut [f64], b: &[f64], rows: usize, out: usize) {
    for r in 0..rows {
        let zrow = &mut z[r * out..(r + 1) * out];
        for i in 0..out {
            zrow[i] += b[i];
        }
    }
}

/// db[o] += sum_r dz[r,o].
pub fn add_row_sums(db: &mut [f64], dz: &[f64], rows: usize, out: usize) {
    for r in 0..rows {
        let dzrow = &dz[r * out..(r + 1) * out];
        for i in 0..out {
            db[i] += dzrow[i];
        }
    }
}

pub fn relu_inplace(z: &mut [f64]) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// dz[i] = 0 where the post-activation h[i] was clipped.
pub fn relu_backward_inplace(dz: &mut [f64], h: &[f64]) {
    for (d, &a) in dz.iter_mut().zip(h.iter()) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let wt = transpose(&w, 2, 3);
        assert_eq!(wt, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&wt, 3, 2), w.to_vec());
    }

    #[test]
    fn outer_products_accumulate() {
        let dz = [1.0, 2.0]; // 1 row, out=2
        let x = [3.0, 4.0, 5.0]; // 1 row, in=3
        let mut gw = vec![0.0; 6];
        add_outer_products(&mut gw, &dz, &x, 1, 2, 3);
        assert_eq!(gw, vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }
}
