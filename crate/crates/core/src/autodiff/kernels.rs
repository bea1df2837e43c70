//! Dense f64 kernels behind the tape ops. The matmul paths carry nearly all
//! of the training cost, so they are register-tiled for the vector units and
//! parallelized over deterministic row partitions.

use rayon::prelude::*;

const MR: usize = 8; // rows per microkernel
const NR: usize = 8; // columns per accumulator strip
const PAR_ROWS: usize = 128; // rows per rayon task in gemm
const REDUCE_CHUNK: usize = 4096; // rows per partial in transposed-A products

/// C\[n x m\] = A\[n x k\] @ B\[k x m\], row-major.
pub fn gemm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || k == 0 || m == 0 {
        c.fill(0.0);
        return;
    }
    if n * k * m < 64 * 64 * 64 {
        gemm_rows(a, b, k, m, c);
        return;
    }
    c.par_chunks_mut(PAR_ROWS * m)
        .enumerate()
        .for_each(|(blk, cs)| {
            let r0 = blk * PAR_ROWS;
            let rows = cs.len() / m;
            gemm_rows(&a[r0 * k..(r0 + rows) * k], b, k, m, cs);
        });
}

/// Serial product over a row range of A; panels of A are packed k-major so
/// the microkernel streams contiguously.
fn gemm_rows(a: &[f64], b: &[f64], k: usize, m: usize, c: &mut [f64]) {
    let rows = c.len() / m;
    let mut panel = vec![0.0f64; MR * k];
    let mut r = 0;
    while r + MR <= rows {
        pack_panel(&a[r * k..(r + MR) * k], k, &mut panel);
        gemm_micro(&panel, b, k, m, &mut c[r * m..(r + MR) * m]);
        r += MR;
    }
    while r < rows {
        gemm_row_1(&a[r * k..(r + 1) * k], b, k, m, &mut c[r * m..(r + 1) * m]);
        r += 1;
    }
}

/// panel\[kk * MR + r\] = a\[r * k + kk\] for an MR-row block.
fn pack_panel(a: &[f64], k: usize, panel: &mut [f64]) {
    for r in 0..MR {
        let row = &a[r * k..(r + 1) * k];
        for (kk, v) in row.iter().enumerate() {
            panel[kk * MR + r] = *v;
        }
    }
}

/// MR x NR register-tile microkernel over a packed A panel.
fn gemm_micro(panel: &[f64], b: &[f64], k: usize, m: usize, c: &mut [f64]) {
    let mut j = 0;
    while j + NR <= m {
        let mut acc = [[0.0f64; NR]; MR];
        for kk in 0..k {
            let av: &[f64; MR] = panel[kk * MR..kk * MR + MR].try_into().unwrap();
            let bv: &[f64; NR] = b[kk * m + j..kk * m + j + NR].try_into().unwrap();
            for r in 0..MR {
                for jj in 0..NR {
                    acc[r][jj] = av[r].mul_add(bv[jj], acc[r][jj]);
                }
            }
        }
        for r in 0..MR {
            c[r * m + j..r * m + j + NR].copy_from_slice(&acc[r]);
        }
        j += NR;
    }
    if j < m {
        let rem = m - j;
        for r in 0..MR {
            let mut acc = [0.0f64; NR];
            for kk in 0..k {
                let av = panel[kk * MR + r];
                for (jj, bv) in b[kk * m + j..kk * m + j + rem].iter().enumerate() {
                    acc[jj] = av.mul_add(*bv, acc[jj]);
                }
            }
            c[r * m + j..r * m + j + rem].copy_from_slice(&acc[..rem]);
        }
    }
}

fn gemm_row_1(a: &[f64], b: &[f64], k: usize, m: usize, c: &mut [f64]) {
    c.fill(0.0);
    for (kk, av) in a.iter().enumerate().take(k) {
        if *av == 0.0 {
            continue;
        }
        let brow = &b[kk * m..kk * m + m];
        for (cv, bv) in c.iter_mut().zip(brow) {
            *cv = av.mul_add(*bv, *cv);
        }
    }
}

/// C\[k x m\] = A^T @ B where A is \[n x k\] and B is \[n x m\].
///
/// Used for weight gradients (reduction over the batch dim). Partial sums are
/// combined in fixed chunk order so results do not depend on thread count.
pub fn gemm_at_b(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(c.len(), k * m);
    c.fill(0.0);
    if n == 0 {
        return;
    }
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    if nchunks <= 1 {
        at_b_chunk(a, b, n, k, m, c);
        return;
    }
    let partials: Vec<Vec<f64>> = (0..nchunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * REDUCE_CHUNK;
            let hi = ((ci + 1) * REDUCE_CHUNK).min(n);
            let mut part = vec![0.0f64; k * m];
            at_b_chunk(&a[lo * k..hi * k], &b[lo * m..hi * m], hi - lo, k, m, &mut part);
            part
        })
        .collect();
    for part in &partials {
        for (cv, pv) in c.iter_mut().zip(part) {
            *cv += *pv;
        }
    }
}

const AT_KR: usize = 8; // dW rows per register tile
const AT_NN: usize = 256; // reduction block so A/B slabs stay cached

/// Accumulates A^T B for one row chunk into `c`, register-tiling the output
/// and blocking the reduction dimension.
fn at_b_chunk(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + AT_NN).min(n);
        let mut kk = 0;
        while kk + AT_KR <= k {
            at_b_micro::<AT_KR>(a, b, n0, n1, k, m, kk, c);
            kk += AT_KR;
        }
        while kk < k {
            at_b_micro::<1>(a, b, n0, n1, k, m, kk, c);
            kk += 1;
        }
        n0 = n1;
    }
}

/// Accumulate KR rows of A^T B over batch rows \[n0, n1).
fn at_b_micro<const KR: usize>(
    a: &[f64],
    b: &[f64],
    n0: usize,
    n1: usize,
    k: usize,
    m: usize,
    kk: usize,
    c: &mut [f64],
) {
    let mut j = 0;
    while j + NR <= m {
        let mut acc = [[0.0f64; NR]; KR];
        for nn in n0..n1 {
            let av: &[f64; KR] = a[nn * k + kk..nn * k + kk + KR].try_into().unwrap();
            let bv: &[f64; NR] = b[nn * m + j..nn * m + j + NR].try_into().unwrap();
            for r in 0..KR {
                for jj in 0..NR {
                    acc[r][jj] = av[r].mul_add(bv[jj], acc[r][jj]);
                }
            }
        }
        for r in 0..KR {
            for (cv, av) in c[(kk + r) * m + j..(kk + r) * m + j + NR].iter_mut().zip(&acc[r]) {
                *cv += *av;
            }
        }
        j += NR;
    }
    if j < m {
        let rem = m - j;
        let mut acc = [[0.0f64; NR]; KR];
        for nn in n0..n1 {
            for r in 0..KR {
                let av = a[nn * k + kk + r];
                for (jj, bv) in b[nn * m + j..nn * m + j + rem].iter().enumerate() {
                    acc[r][jj] = av.mul_add(*bv, acc[r][jj]);
                }
            }
        }
        for r in 0..KR {
            for (cv, av) in c[(kk + r) * m + j..(kk + r) * m + j + rem].iter_mut().zip(&acc[r][..rem]) {
                *cv += *av;
            }
        }
    }
}

/// Row-major transpose: input \[n x m\] -> output \[m x n\].
pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = a[i * m + j];
        }
    }
    t
}

/// Elementwise map over a slice, parallel above a size threshold, with the
/// output written in index order (deterministic for any thread count).
pub fn map_unary(x: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    let mut out = vec![0.0f64; x.len()];
    if x.len() < 1 << 14 {
        for (o, v) in out.iter_mut().zip(x) {
            *o = f(*v);
        }
    } else {
        out.par_chunks_mut(1 << 13).zip(x.par_chunks(1 << 13)).for_each(|(os, xs)| {
            for (o, v) in os.iter_mut().zip(xs) {
                *o = f(*v);
            }
        });
    }
    out
}

/// Elementwise combine of two equal-length slices.
pub fn map_binary(x: &[f64], y: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let mut out = vec![0.0f64; x.len()];
    if x.len() < 1 << 14 {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = f(*a, *b);
        }
    } else {
        out.par_chunks_mut(1 << 13)
            .zip(x.par_chunks(1 << 13))
            .zip(y.par_chunks(1 << 13))
            .for_each(|((os, xs), ys)| {
                for ((o, a), b) in os.iter_mut().zip(xs).zip(ys) {
                    *o = f(*a, *b);
                }
            });
    }
    out
}

pub fn sum_slice(x: &[f64]) -> f64 {
    x.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn gemm_naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for kk in 0..k {
                for j in 0..m {
                    c[i * m + j] += a[i * k + kk] * b[kk * m + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for (n, k, m) in [(1, 1, 1), (3, 5, 7), (130, 33, 17), (257, 64, 128), (1030, 61, 128)] {
            let a: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = vec![0.0; n * m];
            gemm(&a, &b, n, k, m, &mut c);
            let want = gemm_naive(&a, &b, n, k, m);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn at_b_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for (n, k, m) in [(4, 3, 2), (600, 33, 128), (1500, 7, 5), (9000, 13, 37)] {
            let a: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = vec![0.0; k * m];
            gemm_at_b(&a, &b, n, k, m, &mut c);
            let at = transpose(&a, n, k);
            let want = gemm_naive(&at, &b, k, n, m);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    #[ignore] // manual throughput probe: cargo test -p lidarsynth --release gemm_throughput -- --ignored --nocapture
    fn gemm_throughput() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (n, k, m) = (12288, 128, 128);
        let a: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![0.0; n * m];
        let reps = 50;
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            gemm(&a, &b, n, k, m, &mut c);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gflops = (2.0 * (n * k * m * reps) as f64) / dt / 1e9;
        println!("gemm {n}x{k}x{m}: {gflops:.1} GFLOP/s ({:.1} ms/op)", dt / reps as f64 * 1e3);

        let t0 = std::time::Instant::now();
        let mut cw = vec![0.0; k * m];
        for _ in 0..reps {
            gemm_at_b(&a, &c, n, k, m, &mut cw);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gflops = (2.0 * (n * k * m * reps) as f64) / dt / 1e9;
        println!("at_b {n}x{k}x{m}: {gflops:.1} GFLOP/s ({:.1} ms/op)", dt / reps as f64 * 1e3);
    }
}
