//! Discrete-emission hidden Markov models.
//!
//! Forward and backward passes use per-time scaling; Viterbi works in log
//! space. Training is multi-sequence Baum-Welch with probability floors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of every stochastic row.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("empty observation sequence")]
    EmptySequence,
    #[error("symbol {symbol} at t={t} is outside the alphabet of {alphabet} symbols")]
    SymbolOutOfRange { t: usize, symbol: usize, alphabet: usize },
    #[error("ZeroProbability: the observation sequence is impossible under the model")]
    ZeroProbability,
    #[error("{got} scale factors supplied for a sequence of length {expected}")]
    ScaleMismatch { expected: usize, got: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
}

/// A sequence of discrete observation symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSequence(Vec<usize>);

impl ObservationSequence {
    pub fn new(symbols: Vec<usize>) -> Self {
        Self(symbols)
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for ObservationSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Word-model training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmConfig {
    pub states: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub floor_a: f64,
    pub floor_b: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            states: 5,
            max_iters: 40,
            tol: 1e-4,
            floor_a: 1e-8,
            floor_b: 1e-6,
        }
    }
}

/// Discrete HMM `(π, A, B)` with a structural transition mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmRecord", into = "HmmRecord")]
pub struct Hmm {
    pi: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

/// On-disk layout of an [`Hmm`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HmmRecord {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    pi: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    topology_mask: Vec<Vec<bool>>,
}

impl TryFrom<HmmRecord> for Hmm {
    type Error = HmmError;

    fn try_from(r: HmmRecord) -> Result<Self, HmmError> {
        let h = Hmm::with_topology(r.pi, r.a, r.b, r.topology_mask)?;
        if h.n_states() != r.n || h.n_symbols() != r.m {
            return Err(HmmError::InvalidModel(format!(
                "declared N={} M={} but matrices are {}x{}",
                r.n,
                r.m,
                h.n_states(),
                h.n_symbols()
            )));
        }
        Ok(h)
    }
}

impl From<Hmm> for HmmRecord {
    fn from(h: Hmm) -> Self {
        HmmRecord {
            n: h.n_states(),
            m: h.n_symbols(),
            pi: h.pi,
            a: h.a,
            b: h.b,
            topology_mask: h.mask,
        }
    }
}

fn check_distribution(name: &str, row: &[f64]) -> Result<(), HmmError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(HmmError::InvalidModel(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(HmmError::InvalidModel(format!("{name} sums to {sum}")));
    }
    Ok(())
}

impl Hmm {
    /// Builds a model whose topology is the set of non-zero transitions.
    pub fn new(pi: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self, HmmError> {
        let mask = a
            .iter()
            .map(|row| row.iter().map(|&p| p > 0.0).collect())
            .collect();
        Self::with_topology(pi, a, b, mask)
    }

    pub fn with_topology(
        pi: Vec<f64>,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self, HmmError> {
        let n = pi.len();
        if n == 0 {
            return Err(HmmError::InvalidModel("no states".into()));
        }
        if a.len() != n || b.len() != n || mask.len() != n {
            return Err(HmmError::InvalidModel(format!(
                "expected {n} rows in A, B and the topology mask"
            )));
        }
        let m = b[0].len();
        if m == 0 {
            return Err(HmmError::InvalidModel("no symbols".into()));
        }
        check_distribution("pi", &pi)?;
        for i in 0..n {
            if a[i].len() != n || mask[i].len() != n {
                return Err(HmmError::InvalidModel(format!("A row {i} is not {n} wide")));
            }
            if b[i].len() != m {
                return Err(HmmError::InvalidModel(format!("B row {i} is not {m} wide")));
            }
            check_distribution(&format!("A row {i}"), &a[i])?;
            check_distribution(&format!("B row {i}"), &b[i])?;
            if let Some(j) = (0..n).find(|&j| !mask[i][j] && a[i][j] != 0.0) {
                return Err(HmmError::InvalidModel(format!(
                    "A[{i}][{j}] is non-zero on a forbidden transition"
                )));
            }
        }
        Ok(Self { pi, a, b, mask })
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.b[0].len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn emissions(&self) -> &[Vec<f64>] {
        &self.b
    }

    pub fn topology_mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    fn check_sequence(&self, obs: &ObservationSequence) -> Result<(), HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptySequence);
        }
        let m = self.n_symbols();
        if let Some((t, &symbol)) = obs.symbols().iter().enumerate().find(|(_, &s)| s >= m) {
            return Err(HmmError::SymbolOutOfRange {
                t,
                symbol,
                alphabet: m,
            });
        }
        Ok(())
    }
}

/// Bakis (left-to-right) model: self-loop, next state and one skip per state.
///
/// Transitions are uniform over the allowed arcs and emissions are uniform
/// with at most 1% seeded jitter, then renormalized.
pub fn init_left_right(n: usize, m: usize, seed: u64) -> Hmm {
    assert!(n >= 1 && m >= 1, "a model needs at least one state and one symbol");
    let mut mask = vec![vec![false; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let reach = (i + 2).min(n - 1);
        for j in i..=reach {
            mask[i][j] = true;
        }
        let w = 1.0 / (reach - i + 1) as f64;
        for j in i..=reach {
            a[i][j] = w;
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..m)
                .map(|_| (1.0 + rng.random_range(-0.01..=0.01)) / m as f64)
                .collect();
            let sum: f64 = row.iter().sum();
            row.into_iter().map(|p| p / sum).collect()
        })
        .collect();
    Hmm { pi, a, b, mask }
}

/// Scaled forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// `ln P(O|λ)`; `-inf` when the sequence is impossible.
    pub log_likelihood: f64,
    /// `α_t(i)` normalized so each row sums to one.
    pub scaled_alpha: Vec<Vec<f64>>,
    /// Per-time normalizers `c_t`; `P(O|λ) = Π c_t`.
    pub scale_factors: Vec<f64>,
}

impl ForwardResult {
    pub fn is_impossible(&self) -> bool {
        self.log_likelihood == f64::NEG_INFINITY
    }
}

pub fn forward(h: &Hmm, obs: &ObservationSequence) -> Result<ForwardResult, HmmError> {
    h.check_sequence(obs)?;
    let n = h.n_states();
    let o = obs.symbols();
    let t_len = o.len();
    let mut alpha = vec![vec![0.0; n]; t_len];
    let mut scale = vec![0.0; t_len];

    for t in 0..t_len {
        let (done, rest) = alpha.split_at_mut(t);
        let row = &mut rest[0];
        for j in 0..n {
            let inflow = if t == 0 {
                h.pi[j]
            } else {
                let prev = &done[t - 1];
                (0..n).map(|i| prev[i] * h.a[i][j]).sum()
            };
            row[j] = inflow * h.b[j][o[t]];
        }
        let c: f64 = row.iter().sum();
        if c <= 0.0 {
            return Ok(ForwardResult {
                log_likelihood: f64::NEG_INFINITY,
                scaled_alpha: alpha,
                scale_factors: scale,
            });
        }
        row.iter_mut().for_each(|x| *x /= c);
        scale[t] = c;
    }

    let log_likelihood = scale.iter().map(|c| c.ln()).sum();
    Ok(ForwardResult {
        log_likelihood,
        scaled_alpha: alpha,
        scale_factors: scale,
    })
}

/// Scaled backward pass using the forward pass's scale factors.
///
/// `β̂_{T−1}(i) = 1/c_{T−1}` and `β̂_t(i) = Σ_j a_ij·b_j(o_{t+1})·β̂_{t+1}(j) / c_t`,
/// so that `γ_t(i) = α̂_t(i)·β̂_t(i)·c_t`.
pub fn backward(h: &Hmm, obs: &ObservationSequence, scale_factors: &[f64]) -> Result<Vec<Vec<f64>>, HmmError> {
    h.check_sequence(obs)?;
    let o = obs.symbols();
    let t_len = o.len();
    if scale_factors.len() != t_len {
        return Err(HmmError::ScaleMismatch {
            expected: t_len,
            got: scale_factors.len(),
        });
    }
    if scale_factors.iter().any(|&c| !(c > 0.0)) {
        return Err(HmmError::ZeroProbability);
    }
    let n = h.n_states();
    let mut beta = vec![vec![0.0; n]; t_len];
    beta[t_len - 1] = vec![1.0 / scale_factors[t_len - 1]; n];
    for t in (0..t_len - 1).rev() {
        let next: Vec<f64> = (0..n).map(|j| h.b[j][o[t + 1]] * beta[t + 1][j]).collect();
        for i in 0..n {
            let s: f64 = (0..n).map(|j| h.a[i][j] * next[j]).sum();
            beta[t][i] = s / scale_factors[t];
        }
    }
    Ok(beta)
}

pub fn log_likelihood(h: &Hmm, obs: &ObservationSequence) -> Result<f64, HmmError> {
    forward(h, obs).map(|f| f.log_likelihood)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// `-inf` when no path has non-zero probability.
    pub log_prob: f64,
}

/// Most likely state path. Ties go to the lower state index, both for the
/// final state and at every backtracking step. When every path has zero
/// probability they all tie and the all-zero path is returned.
pub fn viterbi(h: &Hmm, obs: &ObservationSequence) -> Result<ViterbiPath, HmmError> {
    h.check_sequence(obs)?;
    let n = h.n_states();
    let o = obs.symbols();
    let t_len = o.len();
    let log_a: Vec<Vec<f64>> = h.a.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();

    let mut delta: Vec<f64> = (0..n).map(|i| h.pi[i].ln() + h.b[i][o[0]].ln()).collect();
    let mut back = vec![vec![0usize; n]; t_len];
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            let mut best = (0, delta[0] + log_a[0][j]);
            for i in 1..n {
                let v = delta[i] + log_a[i][j];
                if v > best.1 {
                    best = (i, v);
                }
            }
            back[t][j] = best.0;
            next[j] = best.1 + h.b[j][o[t]].ln();
        }
        delta = next;
    }

    let mut last = 0;
    for i in 1..n {
        if delta[i] > delta[last] {
            last = i;
        }
    }
    let log_prob = delta[last];
    let mut states = vec![0; t_len];
    if log_prob == f64::NEG_INFINITY {
        return Ok(ViterbiPath { states, log_prob });
    }
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}

/// Expected counts gathered from one or more sequences.
#[derive(Debug, Clone)]
struct Accumulator {
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
    sequences: usize,
    log_likelihood: f64,
}

impl Accumulator {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            pi: vec![0.0; n],
            trans: vec![vec![0.0; n]; n],
            emit: vec![vec![0.0; m]; n],
            sequences: 0,
            log_likelihood: 0.0,
        }
    }

    fn add(&mut self, other: &Accumulator) {
        fn add_into(dst: &mut [f64], src: &[f64]) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        add_into(&mut self.pi, &other.pi);
        for (d, s) in self.trans.iter_mut().zip(&other.trans) {
            add_into(d, s);
        }
        for (d, s) in self.emit.iter_mut().zip(&other.emit) {
            add_into(d, s);
        }
        self.sequences += other.sequences;
        self.log_likelihood += other.log_likelihood;
    }
}

fn expected_counts(h: &Hmm, obs: &ObservationSequence) -> Result<Accumulator, HmmError> {
    let n = h.n_states();
    let mut acc = Accumulator::zeros(n, h.n_symbols());
    let fwd = forward(h, obs)?;
    if fwd.is_impossible() {
        acc.log_likelihood = f64::NEG_INFINITY;
        return Ok(acc);
    }
    let beta = backward(h, obs, &fwd.scale_factors)?;
    let alpha = &fwd.scaled_alpha;
    let o = obs.symbols();
    for t in 0..o.len() {
        for i in 0..n {
            let gamma = alpha[t][i] * beta[t][i] * fwd.scale_factors[t];
            acc.emit[i][o[t]] += gamma;
            if t == 0 {
                acc.pi[i] += gamma;
            }
        }
        if t + 1 < o.len() {
            for i in 0..n {
                if alpha[t][i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if h.a[i][j] != 0.0 {
                        acc.trans[i][j] +=
                            alpha[t][i] * h.a[i][j] * h.b[j][o[t + 1]] * beta[t + 1][j];
                    }
                }
            }
        }
    }
    acc.sequences = 1;
    acc.log_likelihood = fwd.log_likelihood;
    Ok(acc)
}

/// Maximizes `Σ_k n_k·ln p_k` over distributions with `p_k ≥ floor` on the
/// allowed entries and `p_k = 0` elsewhere.
///
/// The solution is `p_k = max(floor, n_k/λ)`; entries are pinned to the floor
/// until the remaining mass spreads proportionally without violating it.
pub fn floored_normalize(counts: &[f64], allowed: &[bool], floor: f64) -> Vec<f64> {
    let n_allowed = allowed.iter().filter(|&&x| x).count();
    let mut out = vec![0.0; counts.len()];
    if n_allowed == 0 {
        return out;
    }
    if floor * n_allowed as f64 >= 1.0 {
        for (o, &ok) in out.iter_mut().zip(allowed) {
            if ok {
                *o = 1.0 / n_allowed as f64;
            }
        }
        return out;
    }
    let mut pinned = vec![false; counts.len()];
    loop {
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let mass = 1.0 - floor * n_pinned as f64;
        let total: f64 = (0..counts.len())
            .filter(|&k| allowed[k] && !pinned[k])
            .map(|k| counts[k])
            .sum();
        let mut changed = false;
        for k in 0..counts.len() {
            if !allowed[k] {
                continue;
            }
            if pinned[k] {
                out[k] = floor;
                continue;
            }
            let p = if total > 0.0 { counts[k] * mass / total } else { 0.0 };
            if p < floor {
                pinned[k] = true;
                changed = true;
            }
            out[k] = p;
        }
        if !changed {
            return out;
        }
    }
}

/// Outcome of one Baum-Welch re-estimation step.
#[derive(Debug, Clone)]
pub struct Reestimation {
    pub model: Hmm,
    /// Total log-likelihood of the training data under the input model.
    pub log_likelihood: f64,
    /// States that received no expected occupancy; their rows were left unchanged.
    pub degenerate_states: Vec<usize>,
}

/// One EM iteration over all training sequences.
pub fn reestimate(
    h: &Hmm,
    training: &[ObservationSequence],
    floor_a: f64,
    floor_b: f64,
) -> Result<Reestimation, HmmError> {
    if training.is_empty() {
        return Err(HmmError::EmptyTrainingSet);
    }
    let n = h.n_states();
    let m = h.n_symbols();
    let parts = training
        .par_iter()
        .map(|obs| expected_counts(h, obs))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = Accumulator::zeros(n, m);
    for part in &parts {
        acc.add(part);
    }

    let mut next = h.clone();
    let mut degenerate = Vec::new();
    if acc.sequences > 0 {
        let total: f64 = acc.pi.iter().sum();
        next.pi = acc.pi.iter().map(|p| p / total).collect();
    }
    for i in 0..n {
        let out_flow: f64 = acc.trans[i].iter().sum();
        if out_flow > 0.0 {
            next.a[i] = floored_normalize(&acc.trans[i], &h.mask[i], floor_a);
        }
        let occupancy: f64 = acc.emit[i].iter().sum();
        if occupancy > 0.0 {
            next.b[i] = floored_normalize(&acc.emit[i], &vec![true; m], floor_b);
        } else {
            degenerate.push(i);
        }
    }
    Ok(Reestimation {
        model: next,
        log_likelihood: acc.log_likelihood,
        degenerate_states: degenerate,
    })
}

#[derive(Debug, Clone)]
pub struct BaumWelchResult {
    pub model: Hmm,
    /// Total training log-likelihood of every model visited, starting with the
    /// initial one and ending with the returned one.
    pub log_likelihoods: Vec<f64>,
    /// Re-estimation steps applied.
    pub iterations: usize,
    pub converged: bool,
    /// States that were degenerate in at least one iteration.
    pub degenerate_states: Vec<usize>,
}

/// Multi-sequence Baum-Welch.
///
/// Stops once the relative improvement of the total log-likelihood falls
/// below `tol`, or after `max_iters` re-estimation steps.
pub fn baum_welch(
    h: &Hmm,
    training: &[ObservationSequence],
    max_iters: usize,
    tol: f64,
    floor_b: f64,
    floor_a: f64,
) -> Result<BaumWelchResult, HmmError> {
    if training.is_empty() {
        return Err(HmmError::EmptyTrainingSet);
    }
    for obs in training {
        h.check_sequence(obs)?;
    }
    let mut model = h.clone();
    let mut history: Vec<f64> = Vec::new();
    let mut degenerate: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let step = reestimate(&model, training, floor_a, floor_b)?;
        if let Some(&prev) = history.last() {
            let ll = step.log_likelihood;
            let gain = ll - prev;
            if prev == 0.0 || !ll.is_finite() || gain.abs() <= tol * f64::abs(prev) {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(step.log_likelihood);
        if iterations == max_iters {
            break;
        }
        for s in step.degenerate_states {
            if !degenerate.contains(&s) {
                degenerate.push(s);
            }
        }
        model = step.model;
        iterations += 1;
    }
    degenerate.sort_unstable();
    Ok(BaumWelchResult {
        model,
        log_likelihoods: history,
        iterations,
        converged,
        degenerate_states: degenerate,
    })
}
