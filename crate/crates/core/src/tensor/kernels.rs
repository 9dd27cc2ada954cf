//! Slice-level numeric kernels shared by the graph ops. All accumulate into
//! the output buffer.

/// `c[m×n] += a[m×k] · b[k×n]`. Each output accumulates over `k` in
/// ascending order.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (
                a[i * k + p],
                a[(i + 1) * k + p],
                a[(i + 2) * k + p],
                a[(i + 3) * k + p],
            );
            let b_row = &b[p * n..(p + 1) * n];
            let rows = c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut());
            for ((((x0, x1), x2), x3), &bv) in rows.zip(b_row) {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            for (cv, &bv) in c_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let mut j = 0;
        while j + 4 <= n {
            let b0 = &b[j * k..(j + 1) * k];
            let b1 = &b[(j + 1) * k..(j + 2) * k];
            let b2 = &b[(j + 2) * k..(j + 3) * k];
            let b3 = &b[(j + 3) * k..(j + 4) * k];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            let cols = b0.iter().zip(b1).zip(b2).zip(b3);
            for (&av, (((&v0, &v1), &v2), &v3)) in a_row.iter().zip(cols) {
                s0 += av * v0;
                s1 += av * v1;
                s2 += av * v2;
                s3 += av * v3;
            }
            let row = &mut c[i * n + j..i * n + j + 4];
            row[0] += s0;
            row[1] += s1;
            row[2] += s2;
            row[3] += s3;
            j += 4;
        }
        for j in j..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * n + j] += dot;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`. Each output accumulates over `k` in
/// ascending order.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut p = 0;
    while p + 4 <= k {
        let b0 = &b[p * n..(p + 1) * n];
        let b1 = &b[(p + 1) * n..(p + 2) * n];
        let b2 = &b[(p + 2) * n..(p + 3) * n];
        let b3 = &b[(p + 3) * n..(p + 4) * n];
        for i in 0..m {
            let (a0, a1, a2, a3) = (
                a[p * m + i],
                a[(p + 1) * m + i],
                a[(p + 2) * m + i],
                a[(p + 3) * m + i],
            );
            let c_row = &mut c[i * n..(i + 1) * n];
            let cols = b0.iter().zip(b1).zip(b2).zip(b3);
            for (cv, (((&v0, &v1), &v2), &v3)) in c_row.iter_mut().zip(cols) {
                *cv = *cv + a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3;
            }
        }
        p += 4;
    }
    for p in p..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            for (cv, &bv) in c[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// Geometry of a node-wise temporal convolution over a `[C, T, J]` block.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub channels: usize,
    pub time: usize,
    pub nodes: usize,
    pub taps: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn pad(&self) -> usize {
        self.taps / 2
    }

    pub fn out_time(&self) -> usize {
        (self.time + 2 * self.pad() - self.taps) / self.stride + 1
    }

    /// Rows of the column matrix (`C·taps`).
    pub fn col_rows(&self) -> usize {
        self.channels * self.taps
    }

    /// Columns of the column matrix (`T_out·J`).
    pub fn col_cols(&self) -> usize {
        self.out_time() * self.nodes
    }

    fn source_time(&self, t_out: usize, tap: usize) -> Option<usize> {
        let t = (t_out * self.stride + tap) as isize - self.pad() as isize;
        (t >= 0 && (t as usize) < self.time).then_some(t as usize)
    }

    /// Unfolds one `[C, T, J]` block into `[C·taps, T_out·J]`.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (j, t_out) = (self.nodes, self.out_time());
        cols.fill(0.0);
        for c in 0..self.channels {
            for tap in 0..self.taps {
                let row = (c * self.taps + tap) * t_out * j;
                for to in 0..t_out {
                    if let Some(ti) = self.source_time(to, tap) {
                        let src = (c * self.time + ti) * j;
                        cols[row + to * j..row + (to + 1) * j].copy_from_slice(&x[src..src + j]);
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates columns back into `dx`.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (j, t_out) = (self.nodes, self.out_time());
        for c in 0..self.channels {
            for tap in 0..self.taps {
                let row = (c * self.taps + tap) * t_out * j;
                for to in 0..t_out {
                    if let Some(ti) = self.source_time(to, tap) {
                        let dst = (c * self.time + ti) * j;
                        for (d, s) in dx[dst..dst + j]
                            .iter_mut()
                            .zip(&cols[row + to * j..row + (to + 1) * j])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        for (m, k, n) in [(3, 4, 5), (9, 7, 6), (4, 8, 4), (1, 1, 1)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
            let expected = naive(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            assert_eq!(c, expected);

            let mut c = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c);
            for (x, y) in c.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-14);
            }

            let mut c = vec![0.0; m * n];
            gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c);
            assert_eq!(c, expected);
        }
    }

    #[test]
    fn conv_geometry_output_lengths() {
        let g = ConvGeometry {
            channels: 1,
            time: 20,
            nodes: 1,
            taps: 9,
            stride: 2,
        };
        assert_eq!(g.out_time(), 10);
        let g = ConvGeometry {
            channels: 1,
            time: 7,
            nodes: 1,
            taps: 9,
            stride: 2,
        };
        assert_eq!(g.out_time(), 4);
        let g = ConvGeometry {
            channels: 1,
            time: 5,
            nodes: 3,
            taps: 1,
            stride: 1,
        };
        assert_eq!(g.out_time(), 5);
    }
}
