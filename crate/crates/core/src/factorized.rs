//! Fixed linear channel compression `g = Pᵀ f` ahead of distillation.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcf::TrainingSet;
use crate::distill::{distill, DistillConfig, DistillOutcome};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Plane};

/// `d x q` projection with unit-norm columns, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    d: usize,
    q: usize,
    matrix: Vec<f64>,
    /// Set when the data had rank below `q` and some columns are an
    /// arbitrary orthonormal completion.
    pub padded: bool,
}

impl Projection {
    pub fn new(d: usize, q: usize, matrix: Vec<f64>) -> Result<Self> {
        if q == 0 || q > d {
            return Err(Error::InvalidParameter(format!(
                "projection must satisfy 0 < q <= d, got d={d}, q={q}"
            )));
        }
        if matrix.len() != d * q {
            return Err(Error::Dimension(format!(
                "{d}x{q} projection needs {} entries, got {}",
                d * q,
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection matrix".into()));
        }
        for j in 0..q {
            let n: f64 = (0..d)
                .map(|l| matrix[l * q + j].powi(2))
                .sum::<f64>()
                .sqrt();
            if (n - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!(
                    "projection column {j} has norm {n}"
                )));
            }
        }
        Ok(Self {
            d,
            q,
            matrix,
            padded: false,
        })
    }

    /// First `q` columns of the `d x d` identity.
    pub fn identity_prefix(d: usize, q: usize) -> Result<Self> {
        let mut m = vec![0.0; d * q];
        for j in 0..q.min(d) {
            m[j * q + j] = 1.0;
        }
        Self::new(d, q, m)
    }

    pub fn input_channels(&self) -> usize {
        self.d
    }

    pub fn output_channels(&self) -> usize {
        self.q
    }

    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.matrix[l * self.q + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }
}

/// Top-`q` principal directions of the pooled, mean-removed per-pixel
/// feature vectors. Each column's largest-magnitude entry is made positive.
pub fn pca_projection(samples: &[FeatureMap], q: usize) -> Result<Projection> {
    let first = samples
        .first()
        .ok_or(Error::NotEnoughFrames { needed: 1, got: 0 })?;
    let d = first.channel_count();
    if q == 0 || q >= d {
        return Err(Error::InvalidParameter(format!(
            "PCA needs 0 < q < d, got d={d}, q={q}"
        )));
    }
    for s in samples {
        if s.channel_count() != d {
            return Err(Error::ChannelMismatch {
                expected: d,
                actual: s.channel_count(),
            });
        }
    }
    let count: usize = samples.iter().map(|s| s.height() * s.width()).sum();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (l, ch) in s.channels().iter().enumerate() {
            mean[l] += ch.as_slice().iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= count as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let centered: Vec<Vec<f64>> = s
            .channels()
            .iter()
            .zip(&mean)
            .map(|(ch, mu)| ch.as_slice().iter().map(|v| v - mu).collect())
            .collect();
        for a in 0..d {
            for b in a..d {
                let dot: f64 = centered[a]
                    .iter()
                    .zip(&centered[b])
                    .map(|(x, y)| x * y)
                    .sum();
                cov[(a, b)] += dot;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    cov /= count as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("covariance eigenvalues are finite")
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 + f64::MIN_POSITIVE;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();

    let mut matrix = vec![0.0; d * q];
    for (j, &i) in order.iter().take(q).enumerate() {
        let col = eig.eigenvectors.column(i);
        let norm = col.norm();
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap())
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for l in 0..d {
            matrix[l * q + j] = sign * col[l] / norm;
        }
    }
    let mut p = Projection::new(d, q, matrix)?;
    p.padded = rank < q;
    Ok(p)
}

/// `g^(j) = Σ_l P[l][j] f^(l)` at every pixel.
pub fn project(f: &FeatureMap, p: &Projection) -> Result<FeatureMap> {
    if f.channel_count() != p.d {
        return Err(Error::ChannelMismatch {
            expected: p.d,
            actual: f.channel_count(),
        });
    }
    let (h, w) = f.dims();
    let channels: Vec<Plane> = (0..p.q)
        .into_par_iter()
        .map(|j| {
            let mut out = vec![0.0; h * w];
            for l in 0..p.d {
                let coef = p.get(l, j);
                if coef == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(f.channel(l).as_slice()) {
                    *o += coef * v;
                }
            }
            Plane::new(h, w, out)
        })
        .collect::<Result<_>>()?;
    FeatureMap::new(channels)
}

/// Training set with every sample projected; label, weights and `λ` kept.
pub fn project_training_set(ts: &TrainingSet, p: &Projection) -> Result<TrainingSet> {
    let samples = ts
        .samples()
        .iter()
        .map(|s| project(s, p))
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::with_weights(
        samples,
        ts.label().clone(),
        ts.weights().to_vec(),
        ts.lambda(),
    )
}

/// Projects samples and friendliness frames, then distills the `q`
/// projected channels. `P` stays fixed, so its norm penalty is a constant
/// and is left out of the minimized loss.
pub fn distill_projected(
    ts: &TrainingSet,
    p: &Projection,
    seed_frames: &[FeatureMap],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let projected = project_training_set(ts, p)?;
    let frames = seed_frames
        .iter()
        .map(|f| project(f, p))
        .collect::<Result<Vec<_>>>()?;
    distill(&projected, &frames, cfg)
}
