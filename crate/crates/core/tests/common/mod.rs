//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls into the library's numerical routines.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct autocorrelation sum.
pub fn autocorrelation(x: &[f64], p: usize) -> Vec<f64> {
    (0..=p)
        .map(|k| {
            let mut s = 0.0;
            for n in 0..x.len() - k {
                s += x[n] * x[n + k];
            }
            s
        })
        .collect()
}

/// Solves `m·x = y` by Gaussian elimination with partial pivoting.
pub fn gaussian_solve(mut m: Vec<Vec<f64>>, mut y: Vec<f64>) -> Vec<f64> {
    let n = y.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        y.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
            y[row] -= f * y[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (y[row] - s) / m[row][row];
    }
    x
}

/// Predictor from the dense Toeplitz normal equations `Σ_i a_i r[|i−j|] = r[j]`,
/// plus the residual energy `r[0] − Σ a_i r[i]`.
pub fn dense_lpc(r: &[f64]) -> (Vec<f64>, f64) {
    let p = r.len() - 1;
    let m: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|i| r[(i as isize - j as isize).unsigned_abs()]).collect())
        .collect();
    let a = gaussian_solve(m, r[1..].to_vec());
    let e = r[0] - a.iter().zip(&r[1..]).map(|(a, r)| a * r).sum::<f64>();
    (a, e)
}

/// Stable predictor built from reflection coefficients by the step-up recursion.
pub fn predictor_from_reflections(k: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::new();
    for &ki in k {
        let prev = a.clone();
        a = (0..prev.len()).map(|j| prev[j] - ki * prev[prev.len() - 1 - j]).collect();
        a.push(ki);
    }
    a
}

/// Cepstrum of `1 / (1 − Σ a_i z^{-i})` as the truncated power series
/// `−ln(1 − A) = Σ_{n≥1} Aⁿ/n`, coefficients of `z^{-1}..z^{-q}`.
pub fn series_cepstrum(a: &[f64], q: usize) -> Vec<f64> {
    let mut poly_a = vec![0.0; q + 1];
    for (i, &ai) in a.iter().enumerate() {
        if i + 1 <= q {
            poly_a[i + 1] = ai;
        }
    }
    let mul = |x: &[f64], y: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; q + 1];
        for i in 0..=q {
            for j in 0..=q - i {
                out[i + j] += x[i] * y[j];
            }
        }
        out
    };
    let mut power = poly_a.clone();
    let mut total = vec![0.0; q + 1];
    for n in 1..=q {
        for d in 0..=q {
            total[d] += power[d] / n as f64;
        }
        power = mul(&power, &poly_a);
    }
    total[1..].to_vec()
}

/// A random discrete HMM as raw matrices `(pi, A, B)`.
pub struct RawHmm {
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn random_row(rng: &mut ChaCha8Rng, len: usize, coarse: bool) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..len)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(0..=2u8))
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Random model; `coarse` draws weights from {0, 1, 2} so exact ties and
/// zero probabilities are common.
pub fn random_raw_hmm(rng: &mut ChaCha8Rng, n: usize, m: usize, coarse: bool) -> RawHmm {
    RawHmm {
        pi: random_row(rng, n, coarse),
        a: (0..n).map(|_| random_row(rng, n, coarse)).collect(),
        b: (0..n).map(|_| random_row(rng, m, coarse)).collect(),
    }
}

fn for_each_path(n: usize, t: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; t];
    loop {
        f(&path);
        let mut i = t;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
        }
    }
}

/// `P(O|λ)` by summing the probability of every state path.
pub fn brute_force_probability(h: &RawHmm, obs: &[usize]) -> f64 {
    let mut total = 0.0;
    for_each_path(h.pi.len(), obs.len(), |path| {
        let mut p = h.pi[path[0]] * h.b[path[0]][obs[0]];
        for t in 1..obs.len() {
            p *= h.a[path[t - 1]][path[t]] * h.b[path[t]][obs[t]];
        }
        total += p;
    });
    total
}

/// Unscaled forward recursion.
pub fn unscaled_forward(h: &RawHmm, obs: &[usize]) -> f64 {
    let n = h.pi.len();
    let mut alpha: Vec<f64> = (0..n).map(|i| h.pi[i] * h.b[i][obs[0]]).collect();
    for &o in &obs[1..] {
        alpha = (0..n)
            .map(|j| (0..n).map(|i| alpha[i] * h.a[i][j]).sum::<f64>() * h.b[j][o])
            .collect();
    }
    alpha.iter().sum()
}

/// Best path by enumeration. Among equal log-probabilities the path that is
/// smallest when read from the last state backwards wins.
pub fn brute_force_viterbi(h: &RawHmm, obs: &[usize]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_path(h.pi.len(), obs.len(), |path| {
        let mut lp = h.pi[path[0]].ln() + h.b[path[0]][obs[0]].ln();
        for t in 1..obs.len() {
            lp = lp + h.a[path[t - 1]][path[t]].ln() + h.b[path[t]][obs[t]].ln();
        }
        let better = match &best {
            None => true,
            Some((bp, blp)) => {
                lp > *blp || (lp == *blp && path.iter().rev().lt(bp.iter().rev()))
            }
        };
        if better {
            best = Some((path.to_vec(), lp));
        }
    });
    best.unwrap()
}

/// Plain Lloyd k-means from the given starting centroids, run until the
/// assignment stops changing.
pub fn kmeans(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut assign = vec![usize::MAX; points.len()];
    loop {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.iter().enumerate() {
                let d: f64 = p.iter().zip(cen).map(|(x, y)| (x - y) * (x - y)).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            return centroids;
        }
        for (c, cen) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                for d in 0..cen.len() {
                    cen[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
}

/// Exhaustive nearest neighbour with lowest-index tie-breaking.
pub fn brute_force_nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let dists: Vec<f64> = centroids
        .iter()
        .map(|c| c.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum())
        .collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).unwrap()
}

/// Hand-rolled canonical PCM WAV file for codec tests.
pub fn wav_bytes(rate: u32, channels: u16, bits: u16, format: u16, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + body.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * u32::from(channels) * u32::from(bits) / 8).to_le_bytes());
    out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn pcm16(values: &[i16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
