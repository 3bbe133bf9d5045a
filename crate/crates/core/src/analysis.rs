//! Contender-count Markov chain for a fully connected network.
//!
//! Packets arrive as a Poisson stream, each at a fresh node, with a
//! truncated-geometric length in slots. A node contends with probability `p`
//! in each of the `K` signaling triples until its whole packet is reserved;
//! nodes whose packet no longer fits in the unreserved slots sit out the rest
//! of the frame. The number of contenders at frame boundaries is a Markov
//! chain whose stationary law gives the distribution of reserved slots.
//!
//! Probabilities are evaluated in the log domain where products get long;
//! binomial coefficients come from recurrences rather than factorials.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error(
        "truncation mass {mass:.3e} exceeds {bound:.1e} at n_max = {n_max}; raise n_max (MACRSV_NMAX) or lower the load"
    )]
    Truncation { n_max: usize, mass: f64, bound: f64 },
    #[error(
        "stationary distribution did not converge after {iterations} iterations (residual {residual:.3e}, n_max = {n_max}); \
         the chain may have no stationary law at this load"
    )]
    NoConvergence { iterations: usize, residual: f64, n_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisParams {
    /// Signaling triples per frame.
    pub triples: usize,
    /// Data slots per frame.
    pub data_slots: usize,
    pub q: f64,
    pub p: f64,
    pub frame_s: f64,
    /// Mean interarrival time; `f64::INFINITY` means no traffic.
    pub tau_s: f64,
    /// State truncation; `None` picks a default and raises it as needed.
    pub n_max: Option<usize>,
    pub tol: f64,
    /// Largest acceptable truncation mass.
    pub truncation_bound: f64,
    pub max_iterations: usize,
}

/// Largest state the automatic truncation will grow to.
pub const AUTO_N_MAX_CAP: usize = 256;

impl AnalysisParams {
    pub fn new(triples: usize, data_slots: usize, q: f64, p: f64, frame_s: f64, tau_s: f64) -> Self {
        AnalysisParams {
            triples,
            data_slots,
            q,
            p,
            frame_s,
            tau_s,
            n_max: None,
            tol: 1e-8,
            truncation_bound: 1e-6,
            max_iterations: 20_000,
        }
    }

    /// Parameters with frame length 1 and the given mean arrivals per frame.
    pub fn with_load(triples: usize, data_slots: usize, q: f64, p: f64, load: f64) -> Self {
        let tau = if load == 0.0 { f64::INFINITY } else { 1.0 / load };
        AnalysisParams::new(triples, data_slots, q, p, 1.0, tau)
    }

    /// Mean arrivals per frame, T/τ.
    pub fn load(&self) -> f64 {
        if self.tau_s.is_infinite() {
            0.0
        } else {
            self.frame_s / self.tau_s
        }
    }

    pub fn default_n_max(&self) -> usize {
        8 * self.load().ceil() as usize + self.triples + 20
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::Domain(m));
        if self.triples == 0 || self.data_slots == 0 {
            return bad("K and N must be at least 1".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} outside (0, 1)", self.q));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} outside (0, 1]", self.p));
        }
        if !(self.frame_s > 0.0 && self.frame_s.is_finite()) || !(self.tau_s > 0.0) {
            return bad("T and tau must be positive".into());
        }
        if let Some(n) = self.n_max {
            if n < self.triples {
                return bad(format!("n_max = {n} below K = {}", self.triples));
            }
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        Ok(())
    }
}

fn ln_choose_row(n: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    row.push(0.0);
    for k in 1..=n {
        acc += ((n - k + 1) as f64).ln() - (k as f64).ln();
        row.push(acc);
    }
    row
}

/// Binomial(n, s) pmf over 0..=n.
pub fn binomial_pmf(n: usize, s: f64) -> Vec<f64> {
    if s <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if s >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let (ls, lf) = (s.ln(), (-s).ln_1p());
    ln_choose_row(n)
        .into_iter()
        .enumerate()
        .map(|(k, c)| (c + k as f64 * ls + (n - k) as f64 * lf).exp())
        .collect()
}

/// Poisson(lambda) pmf over 0..len.
pub fn poisson_pmf(lambda: f64, len: usize) -> Vec<f64> {
    if lambda == 0.0 {
        let mut v = vec![0.0; len];
        if len > 0 {
            v[0] = 1.0;
        }
        return v;
    }
    let ll = lambda.ln();
    let mut ln_fact = 0.0;
    (0..len)
        .map(|a| {
            if a > 0 {
                ln_fact += (a as f64).ln();
            }
            (a as f64 * ll - lambda - ln_fact).exp()
        })
        .collect()
}

/// P[L = l] for l = 1..=N, stored at index l - 1.
pub fn packet_length_pmf(q: f64, n: usize) -> Vec<f64> {
    if q == 0.0 {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        return v;
    }
    let norm = (1.0 - q) / (1.0 - q.powi(n as i32));
    (0..n).map(|i| norm * q.powi(i as i32)).collect()
}

/// Distribution of the slots taken by `m` successful reservations, indexed by
/// r = 0..=N (entries below `m` are zero). Closed form: P[R = r] is
/// proportional to q^r (r-1)(r-2)...(r-m+1). `m = 0` is the point mass at 0.
pub fn reserved_slots_pmf(m: usize, q: f64, n: usize) -> Result<Vec<f64>, AnalysisError> {
    if m > n {
        return Err(AnalysisError::Domain(format!("{m} reservations cannot fit in {n} slots")));
    }
    let mut out = vec![0.0; n + 1];
    if m == 0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let lq = q.ln();
    let logs: Vec<f64> = (m..=n)
        .map(|r| r as f64 * lq + (1..m).map(|i| ((r - i) as f64).ln()).sum::<f64>())
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    for (r, w) in (m..=n).zip(weights) {
        out[r] = w / total;
    }
    Ok(out)
}

/// Probability that a waiting packet no longer fits once `r` slots are taken.
pub fn dropout_prob(r: usize, q: f64, n: usize) -> f64 {
    if r >= n {
        return 1.0;
    }
    1.0 - (1.0 - q.powi((n - r) as i32)) / (1.0 - q.powi(n as i32))
}

/// Number of the `n_c - m` still-waiting contenders that sit out the frame.
pub fn dropout_pmf(n_c: usize, m: usize, s: f64) -> Vec<f64> {
    binomial_pmf(n_c.saturating_sub(m), s)
}

/// g(n): probability that exactly one of `n` contenders sends an RTS.
pub fn single_tx_prob(n: usize, p: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    n as f64 * p * (1.0 - p).powi(n as i32 - 1)
}

/// Probability of a success in a triple after `m` earlier successes among
/// `n_c` contenders.
pub fn p_succ(m: usize, n_c: usize, params: &AnalysisParams) -> f64 {
    if m == 0 {
        return single_tx_prob(n_c, params.p);
    }
    if m >= n_c || m > params.data_slots {
        return 0.0;
    }
    let n = params.data_slots;
    let rest = n_c - m;
    let g: Vec<f64> = (0..=rest).map(|k| single_tx_prob(k, params.p)).collect();
    let pr = reserved_slots_pmf(m, params.q, n).expect("m <= N checked above");
    let mut total = 0.0;
    for (r, &w) in pr.iter().enumerate().skip(m) {
        if w == 0.0 {
            continue;
        }
        let drops = dropout_pmf(n_c, m, dropout_prob(r, params.q, n));
        let inner: f64 = drops.iter().enumerate().map(|(nd, &pd)| g[rest - nd] * pd).sum();
        total += inner * w;
    }
    total
}

/// Distribution of the number of successes over `k` triples when the
/// success probability after `m` successes is `ps(m)`, for m up to `j_max`.
pub fn successes_dp(k: usize, j_max: usize, ps: impl Fn(usize) -> f64) -> Vec<f64> {
    let probs: Vec<f64> = (0..=j_max).map(|m| if m < j_max { ps(m) } else { 0.0 }).collect();
    let mut dist = vec![0.0; j_max + 1];
    dist[0] = 1.0;
    for _ in 0..k {
        let mut next = vec![0.0; j_max + 1];
        for (m, &d) in dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            next[m] += d * (1.0 - probs[m]);
            if m < j_max {
                next[m + 1] += d * probs[m];
            }
        }
        dist = next;
    }
    dist
}

/// P[J = j | N_c = n_c] for j = 0..=min(n_c, K, N).
pub fn successes_pmf(n_c: usize, params: &AnalysisParams) -> Vec<f64> {
    let j_max = n_c.min(params.triples).min(params.data_slots);
    successes_dp(params.triples, j_max, |m| p_succ(m, n_c, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub params: AnalysisParams,
    pub n_max: usize,
    /// Row-stochastic (n_max + 1) x (n_max + 1) matrix.
    pub transition: DMatrix<f64>,
    /// Per-row probability of a transition past `n_max`, folded into the top state.
    pub row_overflow: Vec<f64>,
    pub stationary: Vec<f64>,
    /// Stationary-weighted overflow: the probability per frame that the
    /// truncation alters the chain's next state.
    pub truncation_mass: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl MarkovModel {
    pub fn max_row_sum_error(&self) -> f64 {
        self.transition.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Transition matrix of the contender count truncated at `n_max`, with the
/// per-row overflow probabilities.
pub fn transition_matrix(params: &AnalysisParams, n_max: usize) -> Result<(DMatrix<f64>, Vec<f64>), AnalysisError> {
    params.validate()?;
    if n_max < params.triples {
        return Err(AnalysisError::Domain(format!("n_max = {n_max} below K = {}", params.triples)));
    }
    let lambda = params.load();
    let kk = params.triples.min(params.data_slots);
    // Arrival counts up to a_hi carry all but a negligible sliver of mass.
    let a_hi = n_max + kk + 2 + (lambda + 40.0 * lambda.sqrt() + 60.0) as usize;
    let pois = poisson_pmf(lambda, a_hi + 1);
    // upper[x] = P[A >= x], summed from the top down.
    let mut upper = vec![0.0; a_hi + 2];
    for a in (0..=a_hi).rev() {
        upper[a] = upper[a + 1] + pois[a];
    }
    let size = n_max + 1;
    let mut tp = DMatrix::zeros(size, size);
    let mut overflow = vec![0.0; size];
    for i in 0..size {
        let pj = successes_pmf(i, params);
        for (k, &pk) in pj.iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            let base = i - k;
            for (a, &pa) in pois.iter().enumerate().take(n_max - base) {
                tp[(i, base + a)] += pk * pa;
            }
            tp[(i, n_max)] += pk * upper[n_max - base];
            overflow[i] += pk * upper[n_max - base + 1];
        }
    }
    Ok((tp, overflow))
}

/// Power iteration started from the empty system. Returns the distribution,
/// its residual max |pi P - pi| and the iteration count.
pub fn stationary_distribution(
    transition: &DMatrix<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, f64, usize), AnalysisError> {
    let size = transition.nrows();
    let mut pi = DVector::zeros(size);
    pi[0] = 1.0;
    let mut residual = f64::INFINITY;
    for it in 0..=max_iterations {
        let next = transition.tr_mul(&pi);
        residual = (&next - &pi).amax();
        if residual <= tol {
            let total = pi.sum();
            return Ok((pi.iter().map(|x| x / total).collect(), residual, it));
        }
        pi = next;
    }
    Err(AnalysisError::NoConvergence { iterations: max_iterations, residual, n_max: size - 1 })
}

fn build(params: &AnalysisParams, n_max: usize) -> Result<MarkovModel, AnalysisError> {
    let (transition, row_overflow) = transition_matrix(params, n_max)?;
    let (stationary, residual, iterations) =
        stationary_distribution(&transition, params.tol, params.max_iterations)?;
    let truncation_mass = stationary.iter().zip(&row_overflow).map(|(p, o)| p * o).sum();
    Ok(MarkovModel { params: *params, n_max, transition, row_overflow, stationary, truncation_mass, residual, iterations })
}

/// Builds the chain and its stationary law. Without an explicit `n_max` the
/// default is doubled until the truncation mass is within bounds or the cap
/// is reached.
pub fn markov_model(params: &AnalysisParams) -> Result<MarkovModel, AnalysisError> {
    params.validate()?;
    let (mut n_max, auto) = match params.n_max {
        Some(n) => (n, false),
        None => (params.default_n_max(), true),
    };
    loop {
        let model = build(params, n_max)?;
        if model.truncation_mass <= params.truncation_bound {
            return Ok(model);
        }
        if !auto || n_max >= AUTO_N_MAX_CAP {
            return Err(AnalysisError::Truncation {
                n_max,
                mass: model.truncation_mass,
                bound: params.truncation_bound,
            });
        }
        n_max = (2 * n_max).min(AUTO_N_MAX_CAP);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Utilization {
    /// P(R = r) for r = 0..=N.
    pub reserved_pmf: Vec<f64>,
    /// E[R] / N.
    pub expected: f64,
}

/// Distribution of reserved slots per frame under the stationary law.
pub fn utilization_of(model: &MarkovModel) -> Utilization {
    let params = &model.params;
    let n = params.data_slots;
    let by_j: Vec<Vec<f64>> = (0..=params.triples.min(n))
        .map(|j| reserved_slots_pmf(j, params.q, n).expect("j <= N"))
        .collect();
    let mut pmf = vec![0.0; n + 1];
    for (n_c, &w) in model.stationary.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (j, pj) in successes_pmf(n_c, params).into_iter().enumerate() {
            for (r, pr) in by_j[j].iter().enumerate() {
                pmf[r] += w * pj * pr;
            }
        }
    }
    let expected = pmf.iter().enumerate().map(|(r, p)| r as f64 * p).sum::<f64>() / n as f64;
    Utilization { reserved_pmf: pmf, expected }
}

pub fn utilization(params: &AnalysisParams) -> Result<(MarkovModel, Utilization), AnalysisError> {
    let model = markov_model(params)?;
    let u = utilization_of(&model);
    Ok((model, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn smoke(load: f64) -> AnalysisParams {
        AnalysisParams::with_load(5, 10, 0.5, 0.2, load)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn packet_length_small_cases() {
        let v = packet_length_pmf(0.5, 2);
        assert!(close(v[0], 2.0 / 3.0, 1e-15) && close(v[1], 1.0 / 3.0, 1e-15));
        let v = packet_length_pmf(1e-12, 5);
        assert!(close(v[0], 1.0, 1e-11));
        let v = packet_length_pmf(0.5, 3);
        assert!(close(v[0], 4.0 / 7.0, 1e-15) && close(v[2], 1.0 / 7.0, 1e-15));
    }

    #[test]
    fn reserved_slots_small_cases() {
        let v = reserved_slots_pmf(2, 0.5, 3).unwrap();
        assert!(close(v[2], 0.5, 1e-15) && close(v[3], 0.5, 1e-15));
        let one = reserved_slots_pmf(1, 0.6, 7).unwrap();
        let l = packet_length_pmf(0.6, 7);
        for r in 1..=7 {
            assert!(close(one[r], l[r - 1], 1e-15));
        }
        let full = reserved_slots_pmf(7, 0.6, 7).unwrap();
        assert_eq!(full[7], 1.0);
        assert!(matches!(reserved_slots_pmf(8, 0.6, 7), Err(AnalysisError::Domain(_))));
    }

    #[test]
    fn dropout_edges() {
        assert_eq!(dropout_prob(10, 0.5, 10), 1.0);
        assert!(close(dropout_prob(0, 0.5, 10), 0.0, 1e-15));
        assert_eq!(dropout_pmf(3, 3, 0.4), vec![1.0]);
    }

    #[test]
    fn single_transmission() {
        assert_eq!(single_tx_prob(1, 0.3), 0.3);
        assert_eq!(single_tx_prob(0, 0.3), 0.0);
        assert!(close(single_tx_prob(4, 0.25), 0.421875, 1e-15));
    }

    #[test]
    fn p_succ_edges() {
        let p = AnalysisParams::with_load(3, 4, 0.5, 0.3, 1.0);
        assert_eq!(p_succ(0, 1, &p), 0.3);
        for m in 0..4 {
            assert_eq!(p_succ(m, m, &p), 0.0);
        }
    }

    #[test]
    fn p_succ_matches_event_enumeration() {
        let p = AnalysisParams::with_load(2, 4, 0.5, 0.3, 1.0);
        let dp = p_succ(1, 3, &p);
        let brute = oracle::p_succ_enumeration(1, 3, 4, 0.5, 0.3);
        assert!(close(dp, brute, 1e-14), "{dp} vs {brute}");
        for (m, nc) in [(1, 5), (2, 5), (2, 4), (3, 6)] {
            let a = p_succ(m, nc, &AnalysisParams::with_load(4, 6, 0.4, 0.2, 1.0));
            let b = oracle::p_succ_enumeration(m, nc, 6, 0.4, 0.2);
            assert!(close(a, b, 1e-14), "m={m} nc={nc}: {a} vs {b}");
        }
    }

    #[test]
    fn successes_small_cases() {
        let p = AnalysisParams::with_load(2, 4, 0.5, 0.3, 1.0);
        let v = successes_pmf(1, &p);
        assert!(close(v[0], 0.49, 1e-15) && close(v[1], 0.51, 1e-15));
        assert_eq!(successes_pmf(0, &p), vec![1.0]);
        let p = AnalysisParams::with_load(4, 6, 0.5, 0.2, 1.0);
        let dp = successes_pmf(5, &p);
        let en = oracle::successes_enumeration(4, 4, |m| p_succ(m, 5, &p));
        for (a, b) in dp.iter().zip(&en) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn zero_load_drains() {
        let p = smoke(0.0);
        let (tp, overflow) = transition_matrix(&p, 20).unwrap();
        for i in 0..=20 {
            let pj = successes_pmf(i, &p);
            for j in 0..=20 {
                let want = if j <= i && i - j < pj.len() { pj[i - j] } else { 0.0 };
                assert!(close(tp[(i, j)], want, 1e-15), "({i},{j})");
            }
        }
        assert!(overflow.iter().all(|&o| o == 0.0));
        let (m, u) = utilization(&p).unwrap();
        assert_eq!(m.stationary[0], 1.0);
        assert_eq!(u.expected, 0.0);
        assert_eq!(u.reserved_pmf[0], 1.0);
    }

    #[test]
    fn empty_row_is_poisson() {
        let p = smoke(1.5);
        let (tp, _) = transition_matrix(&p, 30).unwrap();
        let pois = poisson_pmf(1.5, 30);
        for j in 0..30 {
            assert!(close(tp[(0, j)], pois[j], 1e-15));
        }
    }

    #[test]
    fn rows_are_stochastic() {
        for load in [0.1, 1.0, 4.0] {
            let (tp, _) = transition_matrix(&smoke(load), 40).unwrap();
            for r in tp.row_iter() {
                assert!(close(r.sum(), 1.0, 1e-12));
            }
        }
    }

    #[test]
    fn light_load_has_a_stationary_law() {
        let (m, u) = utilization(&smoke(0.1)).unwrap();
        assert!(m.residual <= 1e-8);
        assert!(close(m.stationary.iter().sum(), 1.0, 1e-9));
        assert!(m.truncation_mass <= 1e-6);
        assert!(u.expected > 0.0 && u.expected < 1.0);
        assert!(close(u.reserved_pmf.iter().sum(), 1.0, 1e-9));
    }

    #[test]
    fn explicit_n_max_is_not_raised() {
        let mut p = smoke(0.5);
        p.n_max = Some(2);
        assert!(matches!(markov_model(&p), Err(AnalysisError::Domain(_))));
    }

    proptest! {
        #[test]
        fn pmfs_are_normalised(q in 0.01f64..0.99, n in 1usize..30, m in 1usize..10) {
            let l: f64 = packet_length_pmf(q, n).iter().sum();
            prop_assert!((l - 1.0).abs() < 1e-12);
            if m <= n {
                let r: f64 = reserved_slots_pmf(m, q, n).unwrap().iter().sum();
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn successes_are_normalised(nc in 0usize..20, k in 1usize..8, n in 1usize..12, p in 0.05f64..1.0) {
            let params = AnalysisParams::with_load(k, n, 0.5, p, 1.0);
            let v = successes_pmf(nc, &params);
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|x| *x >= 0.0));
        }
    }
}
