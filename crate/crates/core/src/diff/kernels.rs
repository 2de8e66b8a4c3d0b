//! Raw numeric kernels behind the tape ops.

use crate::par;

/// `c = a * b (+ c if accumulate)` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

const ROW_CHUNK: usize = 128;

/// Row-major `[m,k] x [k,n]`, rows split into fixed chunks across workers.
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, ROW_CHUNK * n, |ci, chunk| {
        let r0 = ci * ROW_CHUNK;
        let rows = chunk.len() / n;
        gemm(rows, k, n, &a[r0 * k..], k, 1, b, n, 1, chunk, n, 1, false);
    });
    out
}

/// [`matmul`] with f64 products and sums, rounded to f32 once per entry.
pub(crate) fn matmul_f64(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    if n == 0 || m == 0 {
        return out;
    }
    let b64: Vec<f64> = b[..k * n].iter().map(|&v| v as f64).collect();
    par::for_each_chunk_mut(&mut out, ROW_CHUNK * n, |ci, chunk| {
        let r0 = ci * ROW_CHUNK;
        let rows = chunk.len() / n;
        let a64: Vec<f64> = a[r0 * k..(r0 + rows) * k].iter().map(|&v| v as f64).collect();
        let mut c64 = vec![0.0f64; rows * n];
        if k > 0 {
            // SAFETY: a64 is rows x k, b64 is k x n and c64 is rows x n, all
            // row-major and contiguous.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a64.as_ptr(),
                    k as isize,
                    1,
                    b64.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    c64.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        for (o, v) in chunk.iter_mut().zip(&c64) {
            *o = *v as f32;
        }
    });
    out
}

/// Geometry of a stride-1 2D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }
    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }
}

fn im2col(x: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let plane = oh * ow;
    for c in 0..d.cin {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - d.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let plane = oh * ow;
    for c in 0..d.cin {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * d.h + iy as usize) * d.w..][..d.w];
                    for ox in 0..ow {
                        let ix = ox as isize + kx as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward conv over a batch `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`.
pub(crate) fn conv2d_forward(
    x: &[f32],
    wt: &[f32],
    bias: Option<&[f32]>,
    n: usize,
    d: ConvDims,
) -> Vec<f32> {
    let plane = d.out_h() * d.out_w();
    let in_sz = d.cin * d.h * d.w;
    let ckk = d.cin * d.k * d.k;
    let mut out = vec![0.0; n * d.cout * plane];
    if plane == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, d.cout * plane, |i, o| {
        let mut cols = vec![0.0; ckk * plane];
        im2col(&x[i * in_sz..(i + 1) * in_sz], &d, &mut cols);
        gemm(d.cout, ckk, plane, wt, ckk, 1, &cols, plane, 1, o, plane, 1, false);
        if let Some(b) = bias {
            for (co, bv) in b.iter().enumerate() {
                o[co * plane..(co + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    });
    out
}

/// Gradients of the batch conv. Returns `(dx, dw, db)`; per-image weight
/// gradients are reduced in index order.
pub(crate) fn conv2d_backward(
    x: &[f32],
    wt: &[f32],
    gout: &[f32],
    n: usize,
    d: ConvDims,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let plane = d.out_h() * d.out_w();
    let in_sz = d.cin * d.h * d.w;
    let ckk = d.cin * d.k * d.k;
    let wsz = d.cout * ckk;

    let per_image: Vec<(Vec<f32>, Vec<f32>)> = par::map_indices(n, |i| {
        let g = &gout[i * d.cout * plane..(i + 1) * d.cout * plane];
        let mut dw = Vec::new();
        let mut dx = Vec::new();
        if need_dw {
            let mut cols = vec![0.0; ckk * plane];
            im2col(&x[i * in_sz..(i + 1) * in_sz], &d, &mut cols);
            dw = vec![0.0; wsz];
            // dw[co, r] = sum_p g[co, p] * cols[r, p]
            gemm(d.cout, plane, ckk, g, plane, 1, &cols, 1, plane, &mut dw, ckk, 1, false);
        }
        if need_dx {
            let mut dcols = vec![0.0; ckk * plane];
            // dcols[r, p] = sum_co w[co, r] * g[co, p]
            gemm(ckk, d.cout, plane, wt, 1, ckk, g, plane, 1, &mut dcols, plane, 1, false);
            dx = vec![0.0; in_sz];
            col2im(&dcols, &d, &mut dx);
        }
        (dx, dw)
    });

    let mut db = vec![0.0; d.cout];
    for i in 0..n {
        for (co, acc) in db.iter_mut().enumerate() {
            let s = &gout[(i * d.cout + co) * plane..(i * d.cout + co + 1) * plane];
            *acc += s.iter().sum::<f32>();
        }
    }
    let dx = need_dx.then(|| {
        let mut all = Vec::with_capacity(n * in_sz);
        for (dxi, _) in &per_image {
            all.extend_from_slice(dxi);
        }
        all
    });
    let dw = need_dw.then(|| {
        let mut acc = vec![0.0; wsz];
        for (_, dwi) in &per_image {
            acc.iter_mut().zip(dwi).for_each(|(a, b)| *a += b);
        }
        acc
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        assert_eq!(matmul_f64(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn f64_matmul_keeps_cancelling_sums() {
        // 1e8 + 1 - 1e8 loses the 1 in f32 accumulation.
        let a = [1e8f32, 1.0, -1e8];
        let b = [1.0f32, 1.0, 1.0];
        assert_eq!(matmul_f64(&a, &b, 1, 3, 1), vec![1.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims {
            cin: 1,
            h: 3,
            w: 3,
            cout: 1,
            k: 3,
            pad: 1,
        };
        let x: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv2d_forward(&x, &k, None, 1, d), x);
    }
}
