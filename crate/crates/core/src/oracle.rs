//! Brute-force reference computations.
//!
//! Each function here recomputes something from [`crate::analysis`] by a
//! different route (explicit convolution, enumeration of outcomes) and is only
//! practical on small inputs.

use crate::analysis::packet_length_pmf;

/// `m`-fold convolution of the truncated packet-length law, restricted to
/// sums at most `n` and renormalised. Indexed by r = 0..=n.
pub fn reserved_slots_convolution(m: usize, q: f64, n: usize) -> Vec<f64> {
    let pl = packet_length_pmf(q, n);
    let mut dist = vec![0.0; n + 1];
    dist[0] = 1.0;
    for _ in 0..m {
        let mut next = vec![0.0; n + 1];
        for (r, &d) in dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (i, &p) in pl.iter().enumerate() {
                let s = r + i + 1;
                if s > n {
                    break;
                }
                next[s] += d * p;
            }
        }
        dist = next;
    }
    let total: f64 = dist.iter().sum();
    dist.iter().map(|x| x / total).collect()
}

/// Binomial pmf from explicit coefficients C(n, k) built by Pascal's rule.
pub fn binomial_reference(n: usize, s: f64) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row.iter()
        .enumerate()
        .map(|(k, c)| c * s.powi(k as i32) * (1.0 - s).powi((n - k) as i32))
        .collect()
}

/// Success probability in a triple after `m` earlier successes, by walking
/// the whole event space: every length tuple of the `m` winners (conditioned
/// on fitting in `n` slots), then every assignment of the other contenders to
/// {sits out, stays silent, sends}.
pub fn p_succ_enumeration(m: usize, n_c: usize, n: usize, q: f64, p: f64) -> f64 {
    if n_c <= m {
        return 0.0;
    }
    let pl = packet_length_pmf(q, n);
    let rest = n_c - m;
    let mut fit_mass = 0.0;
    let mut success = 0.0;
    let mut lengths = vec![1usize; m];
    loop {
        let r: usize = lengths.iter().sum();
        if r <= n {
            let w: f64 = lengths.iter().map(|&l| pl[l - 1]).product();
            fit_mass += w;
            // A waiting packet stays only if it fits in the n - r free slots.
            let stay: f64 = pl[..n - r].iter().sum();
            let mut p_one = 0.0;
            for code in 0..3usize.pow(rest as u32) {
                let (mut c, mut prob, mut senders) = (code, 1.0, 0);
                for _ in 0..rest {
                    match c % 3 {
                        0 => prob *= 1.0 - stay,
                        1 => prob *= stay * (1.0 - p),
                        _ => {
                            prob *= stay * p;
                            senders += 1;
                        }
                    }
                    c /= 3;
                }
                if senders == 1 {
                    p_one += prob;
                }
            }
            success += w * p_one;
        }
        // Odometer over lengths in 1..=n.
        let mut i = 0;
        loop {
            if i == m {
                return success / fit_mass;
            }
            lengths[i] += 1;
            if lengths[i] <= n {
                break;
            }
            lengths[i] = 1;
            i += 1;
        }
    }
}

/// P[J = j] for j = 0..=j_max by summing over every ordered tuple of success
/// positions among `k` triples.
pub fn successes_enumeration(k: usize, j_max: usize, ps: impl Fn(usize) -> f64) -> Vec<f64> {
    let probs: Vec<f64> = (0..=j_max).map(|m| if m < j_max { ps(m) } else { 0.0 }).collect();
    let mut out = vec![0.0; j_max + 1];
    for mask in 0u32..(1 << k) {
        let j = mask.count_ones() as usize;
        if j > j_max {
            continue;
        }
        let mut prob = 1.0;
        let mut m = 0;
        for t in 0..k {
            if mask & (1 << t) != 0 {
                prob *= probs[m];
                m += 1;
            } else {
                prob *= 1.0 - probs[m];
            }
        }
        out[j] += prob;
    }
    out
}
