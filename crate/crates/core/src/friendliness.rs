//! Per-channel spatial discrimination, temporal stability and their
//! combination into a friendliness score, plus the friendliness-ordered
//! pruning loop that produces the initial channel selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dcf::{holdout_loss, ChannelSelection, TrainingSet};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// `s(l) = ||f^(l)||_2 / m`.
pub fn spatial_score(f: &FeatureMap, l: usize) -> f64 {
    let p = f.channel(l);
    p.norm() / p.len() as f64
}

/// `t(l) = -||f_t^(l) - f_next^(l)||_2^2`.
pub fn temporal_score(f_t: &FeatureMap, f_next: &FeatureMap, l: usize) -> Result<f64> {
    let (a, b) = (f_t.channel(l), f_next.channel(l));
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(-a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>())
}

/// `r = (s - 1) * t`.
///
/// With unit-norm channels `s` is far below 1, so `(s - 1)` is negative and
/// a *less* stable channel scores higher. The formula is kept as is.
pub fn friendliness(s: f64, t: f64) -> f64 {
    (s - 1.0) * t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendlinessReport {
    pub per_channel_spatial: Vec<f64>,
    pub per_channel_temporal: Vec<f64>,
    pub per_channel_friendliness: Vec<f64>,
    /// Channel indices by descending friendliness; ties by lower index.
    pub ranking: Vec<usize>,
}

impl FriendlinessReport {
    pub fn channel_count(&self) -> usize {
        self.ranking.len()
    }

    /// Rank position of every channel (0 = most friendly).
    pub fn rank_of(&self) -> Vec<usize> {
        let mut rank = vec![0; self.ranking.len()];
        for (pos, &l) in self.ranking.iter().enumerate() {
            rank[l] = pos;
        }
        rank
    }

    /// The `c` most friendly channels.
    pub fn top(&self, c: usize) -> Result<ChannelSelection> {
        let d = self.ranking.len();
        if c == 0 || c > d {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {c} of {d} channels"
            )));
        }
        ChannelSelection::from_indices(d, &self.ranking[..c])
    }
}

/// Descending order of `scores`, ties broken by lower index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Scores averaged over the `k - 1` consecutive pairs of `frames`.
pub fn average_friendliness(frames: &[FeatureMap]) -> Result<FriendlinessReport> {
    if frames.len() < 2 {
        return Err(Error::NotEnoughFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    let d = frames[0].channel_count();
    for f in frames {
        if f.channel_count() != d {
            return Err(Error::ChannelMismatch {
                expected: d,
                actual: f.channel_count(),
            });
        }
        if f.dims() != frames[0].dims() {
            return Err(Error::DimensionMismatch {
                expected: frames[0].dims(),
                actual: f.dims(),
            });
        }
    }
    let pairs = (frames.len() - 1) as f64;
    let mut s_sum = vec![0.0; d];
    let mut t_sum = vec![0.0; d];
    let mut r_sum = vec![0.0; d];
    for pair in frames.windows(2) {
        for l in 0..d {
            let s = spatial_score(&pair[0], l);
            let t = temporal_score(&pair[0], &pair[1], l)?;
            s_sum[l] += s;
            t_sum[l] += t;
            r_sum[l] += friendliness(s, t);
        }
    }
    let avg = |v: Vec<f64>| v.into_iter().map(|x| x / pairs).collect::<Vec<_>>();
    let per_channel_friendliness = avg(r_sum);
    let ranking = rank_descending(&per_channel_friendliness);
    Ok(FriendlinessReport {
        per_channel_spatial: avg(s_sum),
        per_channel_temporal: avg(t_sum),
        per_channel_friendliness,
        ranking,
    })
}

/// Controls for [`prune_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Maximum number of channels dropped.
    pub max_iters: usize,
    /// Stop at the first iterate whose loss exceeds its predecessor's.
    ///
    /// Off by default: with strongly overfitting channels the held-out loss
    /// rises while they are removed one at a time and only drops once the
    /// last one is gone, so an early stop keeps all of them.
    pub early_stop: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            max_iters: usize::MAX,
            early_stop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Visited selection with the smallest loss.
    pub selection: ChannelSelection,
    /// `(selected count, held-out loss)` for every visited selection.
    pub visited: Vec<(usize, f64)>,
    pub report: FriendlinessReport,
}

/// Starting from all channels, repeatedly drops the least friendly remaining
/// channel and scores the nested selection with [`holdout_loss`]. Returns the
/// best visited selection; at least one channel is always kept.
pub fn prune_loop(
    frames: &[FeatureMap],
    ts: &TrainingSet,
    cfg: PruneConfig,
) -> Result<PruneOutcome> {
    let report = average_friendliness(frames)?;
    prune_with_report(report, ts, cfg)
}

/// [`prune_loop`] with a precomputed friendliness report.
pub fn prune_with_report(
    report: FriendlinessReport,
    ts: &TrainingSet,
    cfg: PruneConfig,
) -> Result<PruneOutcome> {
    let d = report.channel_count();
    if d != ts.channel_count() {
        return Err(Error::ChannelMismatch {
            expected: ts.channel_count(),
            actual: d,
        });
    }
    let mut sel = ChannelSelection::full(d);
    let mut current = holdout_loss(ts, &sel)?;
    let mut visited = vec![(d, current)];
    let mut best = (sel.clone(), current);
    let drops = cfg.max_iters.min(d - 1);
    for &victim in report.ranking.iter().rev().take(drops) {
        sel = sel.with(victim, false);
        let next = holdout_loss(ts, &sel)?;
        visited.push((sel.count(), next));
        if next < best.1 {
            best = (sel.clone(), next);
        }
        if cfg.early_stop && next > current {
            break;
        }
        current = next;
    }
    Ok(PruneOutcome {
        selection: best.0,
        visited,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{gaussian_label, LabelConfig};
    use crate::tensor::Plane;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn map(planes: Vec<Vec<f64>>, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(
            planes
                .into_iter()
                .map(|v| Plane::new(h, w, v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn spatial_examples() {
        let f = map(vec![vec![0.0; 4], vec![3.0, 0.0, 0.0, 4.0]], 2, 2);
        assert_eq!(spatial_score(&f, 0), 0.0);
        assert_eq!(spatial_score(&f, 1), 1.25);
    }

    #[test]
    fn spatial_matches_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let v: Vec<f64> = (0..35).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for x in &v {
            acc += x * x;
        }
        let f = map(vec![v], 5, 7);
        assert!((spatial_score(&f, 0) - acc.sqrt() / 35.0).abs() < 1e-15);
    }

    #[test]
    fn temporal_examples() {
        let a = map(vec![vec![1.0, 2.0, 3.0, 4.0]], 2, 2);
        let b = map(vec![vec![2.0, 3.0, 4.0, 5.0]], 2, 2);
        assert_eq!(temporal_score(&a, &a, 0).unwrap(), 0.0);
        assert_eq!(temporal_score(&a, &b, 0).unwrap(), -4.0);
        let c = map(vec![vec![1.0; 6]], 2, 3);
        assert!(temporal_score(&a, &c, 0).is_err());
    }

    #[test]
    fn temporal_matches_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut want = 0.0;
        for i in 0..12 {
            want -= (u[i] - v[i]).powi(2);
        }
        let got = temporal_score(&map(vec![u], 3, 4), &map(vec![v], 3, 4), 0).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn friendliness_examples() {
        assert_eq!(friendliness(1.0, -7.0), 0.0);
        assert_eq!(friendliness(1.25, -4.0), -1.0);
        assert_eq!(friendliness(0.5, -2.0), 1.0);
    }

    #[test]
    fn two_frames_reduce_to_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mk = |rng: &mut ChaCha8Rng| {
            map(
                (0..3)
                    .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
                3,
                3,
            )
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let rep = average_friendliness(&[a.clone(), b.clone()]).unwrap();
        for l in 0..3 {
            let r = friendliness(spatial_score(&a, l), temporal_score(&a, &b, l).unwrap());
            assert_eq!(rep.per_channel_friendliness[l], r);
        }
    }

    #[test]
    fn duplicated_channels_tie_by_index() {
        let ch = vec![0.5, -1.0, 2.0, 0.0];
        let ch2 = vec![1.5, -1.0, 0.0, 0.25];
        let f1 = map(vec![ch.clone(), ch.clone(), ch.clone()], 2, 2);
        let f2 = map(vec![ch2.clone(), ch2.clone(), ch2], 2, 2);
        let rep = average_friendliness(&[f1, f2]).unwrap();
        assert_eq!(
            rep.per_channel_friendliness[0],
            rep.per_channel_friendliness[2]
        );
        assert_eq!(rep.ranking, vec![0, 1, 2]);
    }

    #[test]
    fn hand_computed_three_frames() {
        // 1x2 planes, two channels.
        // ch0: (3,4) -> (3,4) -> (0,0)   ch1: (0,0) -> (1,1) -> (1,3)
        let frames = [
            map(vec![vec![3.0, 4.0], vec![0.0, 0.0]], 1, 2),
            map(vec![vec![3.0, 4.0], vec![1.0, 1.0]], 1, 2),
            map(vec![vec![0.0, 0.0], vec![1.0, 3.0]], 1, 2),
        ];
        // ch0: s = 5/2, 5/2; t = 0, -25; r = 0, (1.5)(-25) = -37.5; avg -18.75
        // ch1: s = 0, sqrt(2)/2; t = -2, -4; r = 2, (sqrt(2)/2 - 1)(-4); avg below
        let rep = average_friendliness(&frames).unwrap();
        assert_eq!(rep.per_channel_friendliness[0], -18.75);
        let r1 = (2.0 + (2f64.sqrt() / 2.0 - 1.0) * -4.0) / 2.0;
        assert!((rep.per_channel_friendliness[1] - r1).abs() < 1e-15);
        assert_eq!(rep.per_channel_spatial[0], 2.5);
        assert_eq!(rep.per_channel_temporal[1], -3.0);
        assert_eq!(rep.ranking, vec![1, 0]);
    }

    #[test]
    fn single_frame_is_rejected() {
        let f = map(vec![vec![1.0; 4]], 2, 2);
        assert!(matches!(
            average_friendliness(&[f]),
            Err(Error::NotEnoughFrames { .. })
        ));
    }

    fn label(h: usize, w: usize) -> Plane {
        gaussian_label(
            &LabelConfig::new(0.1, h, w).unwrap(),
            2.0 * h as f64,
            2.0 * w as f64,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_keep_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let frames: Vec<FeatureMap> = (0..2)
            .map(|_| {
                map(
                    (0..3)
                        .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                    8,
                    8,
                )
            })
            .collect();
        let ts = TrainingSet::new(frames.clone(), label(8, 8), 0.01).unwrap();
        let out = prune_loop(
            &frames,
            &ts,
            PruneConfig {
                max_iters: 0,
                early_stop: false,
            },
        )
        .unwrap();
        assert_eq!(out.selection, ChannelSelection::full(3));
        assert_eq!(out.visited.len(), 1);
    }

    #[test]
    fn noise_channel_is_pruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (h, w) = (8, 8);
        // Informative: a fixed unit-norm pattern. Noise: fresh every frame,
        // large enough that its friendliness is negative.
        let pattern: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = pattern.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pattern: Vec<f64> = pattern.iter().map(|v| v / norm).collect();
        let frames: Vec<FeatureMap> = (0..2)
            .map(|_| {
                let noise: Vec<f64> = (0..h * w)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        20.0 * z
                    })
                    .collect();
                map(vec![pattern.clone(), noise], h, w)
            })
            .collect();
        let ts = TrainingSet::new(frames.clone(), label(h, w), 0.01).unwrap();
        let both = holdout_loss(&ts, &ChannelSelection::full(2)).unwrap();
        let informative =
            holdout_loss(&ts, &ChannelSelection::from_indices(2, &[0]).unwrap()).unwrap();
        assert!(informative < both);
        let out = prune_loop(&frames, &ts, PruneConfig::default()).unwrap();
        assert_eq!(out.report.ranking, vec![0, 1]);
        assert_eq!(out.selection.indices(), vec![0]);
    }

    #[test]
    fn identical_channels_return_best_nested_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (h, w) = (6, 6);
        let frames: Vec<FeatureMap> = (0..2)
            .map(|_| {
                let v: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                map(vec![v; 4], h, w)
            })
            .collect();
        let ts = TrainingSet::new(frames.clone(), label(h, w), 0.01).unwrap();
        let out = prune_loop(&frames, &ts, PruneConfig::default()).unwrap();
        assert_eq!(out.report.ranking, vec![0, 1, 2, 3]);
        // Oracle: evaluate the four nested prefixes directly.
        let mut best = (0, f64::INFINITY);
        for c in (1..=4).rev() {
            let sel = ChannelSelection::from_indices(4, &(0..c).collect::<Vec<_>>()).unwrap();
            let l = holdout_loss(&ts, &sel).unwrap();
            if l < best.1 {
                best = (c, l);
            }
        }
        assert_eq!(out.selection.count(), best.0);
        assert_eq!(out.visited.len(), 4);
    }

    #[test]
    fn early_stop_halts_on_first_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let (h, w) = (6, 6);
        let frames: Vec<FeatureMap> = (0..2)
            .map(|_| {
                map(
                    (0..5)
                        .map(|_| (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                    h,
                    w,
                )
            })
            .collect();
        let ts = TrainingSet::new(frames.clone(), label(h, w), 0.01).unwrap();
        let cfg = PruneConfig {
            max_iters: usize::MAX,
            early_stop: true,
        };
        let out = prune_loop(&frames, &ts, cfg).unwrap();
        let v = &out.visited;
        for pair in v[..v.len() - 1].windows(2) {
            assert!(pair[1].1 <= pair[0].1);
        }
        if v.len() < 5 {
            assert!(v[v.len() - 1].1 > v[v.len() - 2].1);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ranking_is_descending_permutation(scores in prop::collection::vec(-5.0f64..5.0, 1..20)) {
                let order = rank_descending(&scores);
                let mut seen = order.clone();
                seen.sort();
                prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
                for w in order.windows(2) {
                    prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
                }
            }

            #[test]
            fn friendliness_is_exact_product(s in -10.0f64..10.0, t in -10.0f64..=0.0) {
                prop_assert_eq!(friendliness(s, t), (s - 1.0) * t);
            }
        }
    }

    #[test]
    fn prune_never_beats_full_selection_by_losing() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..5 {
            let frames: Vec<FeatureMap> = (0..2)
                .map(|_| {
                    map(
                        (0..4)
                            .map(|_| (0..25).map(|_| rng.random_range(-1.0..1.0)).collect())
                            .collect(),
                        5,
                        5,
                    )
                })
                .collect();
            let ts = TrainingSet::new(frames.clone(), label(5, 5), 0.01).unwrap();
            let out = prune_loop(&frames, &ts, PruneConfig::default()).unwrap();
            let full = holdout_loss(&ts, &ChannelSelection::full(4)).unwrap();
            let got = holdout_loss(&ts, &out.selection).unwrap();
            assert!(got <= full);
            assert!(out.selection.count() >= 1);
        }
    }
}
