//! Inner loops. Split accumulators let the compiler vectorize reductions.

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
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

/// `out[m×n] += a[m×k] · b[k×n]`.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aval) in a_row.iter().enumerate() {
            if aval != 0.0 {
                axpy(aval, &b[p * n..(p + 1) * n], out_row);
            }
        }
    }
}

/// `da[m×k] += dout[m×n] · bᵀ`.
pub fn matmul_grad_a(dout: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let d_row = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(d_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db[k×n] += aᵀ · dout[m×n]`.
pub fn matmul_grad_b(a: &[f64], dout: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let d_row = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let aval = a[i * k + p];
            if aval != 0.0 {
                axpy(aval, d_row, &mut db[p * n..(p + 1) * n]);
            }
        }
    }
}
