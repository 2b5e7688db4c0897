//! LBG vector quantization: codebook training by binary splitting plus
//! Lloyd iterations, and nearest-centroid quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{FeatureSequence, FeatureVector};
use crate::hmm::ObservationSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqError {
    #[error("no training vectors")]
    EmptyData,
    #[error("codebook size {size} is not a power of two no larger than the {available} training vectors")]
    TooManyCentroids { size: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
}

/// Codebook training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqConfig {
    pub size: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            size: 64,
            max_iters: 50,
            tol: 1e-4,
        }
    }
}

/// A set of `M` centroids of equal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Codebook {
    centroids: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for Codebook {
    type Error = VqError;

    fn try_from(centroids: Vec<Vec<f64>>) -> Result<Self, VqError> {
        Codebook::new(centroids)
    }
}

impl From<Codebook> for Vec<Vec<f64>> {
    fn from(cb: Codebook) -> Self {
        cb.centroids
    }
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self, VqError> {
        let dim = centroids
            .first()
            .map(Vec::len)
            .ok_or_else(|| VqError::InvalidCodebook("no centroids".into()))?;
        if dim == 0 {
            return Err(VqError::InvalidCodebook("zero-dimensional centroids".into()));
        }
        for c in &centroids {
            if c.len() != dim {
                return Err(VqError::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(VqError::InvalidCodebook("non-finite centroid".into()));
            }
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    /// Index and squared distance of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> Result<(usize, f64), VqError> {
        if v.len() != self.dim() {
            return Err(VqError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(nearest(&self.centroids, v))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Maps a vector to the index of its nearest centroid.
pub fn quantize(cb: &Codebook, v: &FeatureVector) -> Result<usize, VqError> {
    cb.nearest(v.as_slice()).map(|(i, _)| i)
}

pub fn quantize_sequence(cb: &Codebook, fs: &FeatureSequence) -> Result<ObservationSequence, VqError> {
    let symbols = fs
        .vectors
        .iter()
        .map(|v| quantize(cb, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ObservationSequence::new(symbols))
}

/// Average distortion recorded at each Lloyd iteration, grouped by codebook size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub stages: Vec<StageTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub size: usize,
    pub distortions: Vec<f64>,
}

impl TrainingTrace {
    pub fn final_distortion(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.distortions.last().copied())
    }
}

pub fn train_codebook(
    data: &[FeatureVector],
    size: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Codebook, VqError> {
    train_codebook_traced(data, size, seed, max_iters, tol).map(|(cb, _)| cb)
}

/// LBG training that also returns the distortion history.
///
/// Starts from the global mean and doubles the codebook by splitting every
/// centroid into `c ± δ`, where `δ_d = ±0.001·std_d` with a seeded random sign
/// per dimension. After each split, Lloyd iterations run until the relative
/// distortion improvement drops below `tol` or `max_iters` is reached. A cell
/// left empty is re-seeded with the training vector farthest from its centroid.
pub fn train_codebook_traced(
    data: &[FeatureVector],
    size: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(Codebook, TrainingTrace), VqError> {
    if data.is_empty() {
        return Err(VqError::EmptyData);
    }
    if size == 0 || !size.is_power_of_two() || size > data.len() {
        return Err(VqError::TooManyCentroids {
            size,
            available: data.len(),
        });
    }
    let dim = data[0].dim();
    if dim == 0 {
        return Err(VqError::EmptyData);
    }
    if let Some(v) = data.iter().find(|v| v.dim() != dim) {
        return Err(VqError::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    let points: Vec<&[f64]> = data.iter().map(FeatureVector::as_slice).collect();
    let n = points.len() as f64;

    let mut mean = vec![0.0; dim];
    for p in &points {
        mean.iter_mut().zip(*p).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let std: Vec<f64> = (0..dim)
        .map(|d| (points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![mean];
    let mut trace = TrainingTrace::default();
    let mut assignment = vec![0usize; points.len()];

    let first = lloyd(&points, &mut centroids, &mut assignment, max_iters, tol);
    trace.stages.push(StageTrace {
        size: 1,
        distortions: first,
    });
    while centroids.len() < size {
        let mut split = Vec::with_capacity(centroids.len() * 2);
        for c in &centroids {
            let delta: Vec<f64> = std
                .iter()
                .map(|s| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * 0.001 * s
                })
                .collect();
            split.push(c.iter().zip(&delta).map(|(x, d)| x + d).collect());
            split.push(c.iter().zip(&delta).map(|(x, d)| x - d).collect());
        }
        centroids = split;
        let distortions = lloyd(&points, &mut centroids, &mut assignment, max_iters, tol);
        trace.stages.push(StageTrace {
            size: centroids.len(),
            distortions,
        });
    }
    Ok((Codebook { centroids }, trace))
}

/// Lloyd iterations in place. Returns the average distortion of every assignment step.
fn lloyd(
    points: &[&[f64]],
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
    max_iters: usize,
    tol: f64,
) -> Vec<f64> {
    let dim = centroids[0].len();
    let k = centroids.len();
    let n = points.len() as f64;
    let mut history = Vec::new();
    let mut distances = vec![0.0; points.len()];
    let mut reseeded = false;

    for iter in 0..max_iters.max(1) {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(centroids, p);
            assignment[i] = c;
            distances[i] = d;
            total += d;
        }
        let distortion = total / n;
        // the step right after a reseed never counts as convergence
        let converged = match history.last() {
            Some(&prev) if !reseeded => prev <= 0.0 || (prev - distortion) / prev < tol,
            _ => false,
        };
        history.push(distortion);
        if distortion == 0.0 || iter + 1 >= max_iters.max(1) || converged {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(assignment.iter()) {
            counts[c] += 1;
            sums[c].iter_mut().zip(*p).for_each(|(s, x)| *s += x);
        }
        reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                let cnt = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / cnt).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its own centroid; claimed points are zeroed
                let (far, _) = distances
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                centroids[c] = points[far].to_vec();
                distances[far] = 0.0;
                reseeded = true;
            }
        }
    }
    history
}
