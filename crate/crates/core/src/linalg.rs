//! Tiny dense helpers over row-major slices. Summation order is fixed
//! (ascending column index) so every caller sees identical rounding.

/// `out[i] += sum_j m[i * cols + j] * x[j]`
#[inline]
pub fn matvec_acc(out: &mut [f64], m: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols.max(1))) {
        let mut acc = *o;
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        *o = acc;
    }
}

/// `out[j] += sum_i m[i * cols + j] * g[i]` (transpose product)
#[inline]
pub fn matvec_t_acc(out: &mut [f64], m: &[f64], g: &[f64]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), g.len() * cols);
    for (gi, row) in g.iter().zip(m.chunks_exact(cols.max(1))) {
        if *gi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * gi;
        }
    }
}

/// `m[i * cols + j] += g[i] * x[j]`
#[inline]
pub fn outer_acc(m: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(m.chunks_exact_mut(cols.max(1))) {
        if *gi == 0.0 {
            continue;
        }
        for (w, v) in row.iter_mut().zip(x) {
            *w += gi * v;
        }
    }
}

#[inline]
pub fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
