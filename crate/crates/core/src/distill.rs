//! Joint channel selection and filter learning by alternating optimization.
//!
//! Step 1 keeps the filter fixed and searches binary selections of fixed
//! size with one-for-one swaps, scored from cached per-channel products
//! `A_il = f̂_i^(l) ⊙ conj(ĥ^(l))`, the label spectrum and `γ_l = ||ĥ^(l)||²`.
//! Step 2 re-solves the filter on the new selection. Channels that have never
//! been solved carry a zero filter (so `A_il = 0`, `γ_l = 0`).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dcf::{loss, solve_filter, ChannelSelection, FreqFilter, TrainingSet};
use crate::error::{Error, Result};
use crate::friendliness::{
    average_friendliness, prune_with_report, FriendlinessReport, PruneConfig, PruneOutcome,
};
use crate::tensor::{ComplexPlane, FeatureMap};

/// Loss change below which alternation stops.
pub const CONVERGENCE_TOL: f64 = 1e-9;

pub const DEFAULT_MAX_ROUNDS: usize = 5;

/// Cached quantities for scoring selections at a fixed filter.
#[derive(Debug, Clone)]
pub struct SelectionSearchState<'a> {
    ts: &'a TrainingSet,
    bank: Vec<Option<ComplexPlane>>,
    seed: ChannelSelection,
    ranked_good: Vec<usize>,
    complement: Vec<usize>,
    /// `products[i][l]` is `A_il`, or `None` for channels without a filter.
    products: Vec<Vec<Option<Vec<Complex64>>>>,
    gamma: Vec<f64>,
    stale: bool,
}

impl<'a> SelectionSearchState<'a> {
    /// Builds the caches for `filter` (any subset of channels) and splits
    /// `ranking` into the seed's ranked members and its complement.
    pub fn new(
        ts: &'a TrainingSet,
        filter: &FreqFilter,
        seed: ChannelSelection,
        ranking: &[usize],
    ) -> Result<Self> {
        let d = ts.channel_count();
        if seed.len() != d {
            return Err(Error::ChannelMismatch {
                expected: d,
                actual: seed.len(),
            });
        }
        check_ranking(ranking, d)?;
        let mut bank = vec![None; d];
        for (&l, p) in filter.channels().iter().zip(filter.planes()) {
            if l >= d {
                return Err(Error::InconsistentSelection(format!(
                    "filter channel {l} out of range for {d} channels"
                )));
            }
            if p.dims() != ts.dims() {
                return Err(Error::DimensionMismatch {
                    expected: ts.dims(),
                    actual: p.dims(),
                });
            }
            bank[l] = Some(p.clone());
        }
        let ranked_good = ranking
            .iter()
            .copied()
            .filter(|&l| seed.contains(l))
            .collect();
        let complement = ranking
            .iter()
            .copied()
            .filter(|&l| !seed.contains(l))
            .collect();
        let mut state = Self {
            ts,
            bank,
            seed,
            ranked_good,
            complement,
            products: Vec::new(),
            gamma: Vec::new(),
            stale: true,
        };
        state.rebuild();
        Ok(state)
    }

    /// Swaps in a new filter; caches stay stale until [`Self::rebuild`].
    pub fn replace_filter(&mut self, filter: &FreqFilter) {
        for (&l, p) in filter.channels().iter().zip(filter.planes()) {
            if l < self.bank.len() {
                self.bank[l] = Some(p.clone());
            }
        }
        self.stale = true;
    }

    pub fn rebuild(&mut self) {
        self.products = self
            .ts
            .spectra()
            .iter()
            .map(|spec| {
                self.bank
                    .iter()
                    .enumerate()
                    .map(|(l, h)| {
                        h.as_ref().map(|h| {
                            spec[l]
                                .as_slice()
                                .iter()
                                .zip(h.as_slice())
                                .map(|(f, h)| f * h.conj())
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect();
        self.gamma = self
            .bank
            .iter()
            .map(|h| h.as_ref().map_or(0.0, ComplexPlane::norm_sqr))
            .collect();
        self.stale = false;
    }

    pub fn seed(&self) -> &ChannelSelection {
        &self.seed
    }

    pub fn ranked_good(&self) -> &[usize] {
        &self.ranked_good
    }

    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// The bank restricted to `sel`; unsolved channels get zero planes.
    pub fn filter_for(&self, sel: &ChannelSelection) -> Result<FreqFilter> {
        let (h, w) = self.ts.dims();
        let idx = sel.indices();
        let planes = idx
            .iter()
            .map(|&l| match &self.bank[l] {
                Some(p) => Ok(p.clone()),
                None => ComplexPlane::zeros(h, w),
            })
            .collect::<Result<Vec<_>>>()?;
        FreqFilter::new(planes, idx)
    }

    /// Loss of `sel` at the cached filter, without any transforms.
    pub fn selection_loss(&self, sel: &ChannelSelection) -> Result<f64> {
        if self.stale {
            return Err(Error::StaleCache);
        }
        if sel.len() != self.bank.len() {
            return Err(Error::ChannelMismatch {
                expected: self.bank.len(),
                actual: sel.len(),
            });
        }
        let idx = sel.indices();
        let residuals = self.residuals(&idx);
        Ok(self.score(&residuals, None, idx.len(), self.gamma_sum(&idx)))
    }

    /// `Σ_{l∈S} A_il - B` for every sample.
    fn residuals(&self, idx: &[usize]) -> Vec<Vec<Complex64>> {
        let y = self.ts.label_spectrum().as_slice();
        self.products
            .iter()
            .map(|per_channel| {
                let mut r: Vec<Complex64> = y.iter().map(|v| -v).collect();
                for &l in idx {
                    if let Some(a) = &per_channel[l] {
                        for (acc, v) in r.iter_mut().zip(a) {
                            *acc += v;
                        }
                    }
                }
                r
            })
            .collect()
    }

    fn gamma_sum(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&l| self.gamma[l]).sum()
    }

    /// Loss from residuals, optionally with channel `out` replaced by `inn`.
    fn score(
        &self,
        residuals: &[Vec<Complex64>],
        swap: Option<(usize, usize)>,
        c: usize,
        gamma_sum: f64,
    ) -> f64 {
        let m = self.ts.bins() as f64;
        let mut data = 0.0;
        for (i, (r, &beta)) in residuals.iter().zip(self.ts.weights()).enumerate() {
            let acc: f64 = match swap {
                None => r.iter().map(|z| z.norm_sqr()).sum(),
                Some((out, inn)) => {
                    let a_out = self.products[i][out].as_deref();
                    let a_in = self.products[i][inn].as_deref();
                    r.iter()
                        .enumerate()
                        .map(|(k, z)| {
                            let mut v = *z;
                            if let Some(a) = a_out {
                                v -= a[k];
                            }
                            if let Some(a) = a_in {
                                v += a[k];
                            }
                            v.norm_sqr()
                        })
                        .sum()
                }
            };
            data += beta * acc;
        }
        let reg = if c == 0 {
            0.0
        } else {
            self.ts.lambda() / c as f64 * gamma_sum
        };
        (data + reg) / m
    }

    /// One backward pass over the ranked seed. For each member, the best
    /// one-for-one swap with the complement is committed only if it lowers
    /// the loss strictly; the swapped-out channel takes the vacated slot in
    /// the complement. Selection size never changes.
    pub fn swap_search(&self) -> Result<ChannelSelection> {
        if self.stale {
            return Err(Error::StaleCache);
        }
        let mut current = self.seed.clone();
        let mut complement = self.complement.clone();
        let mut idx = current.indices();
        let c = idx.len();
        let mut residuals = self.residuals(&idx);
        let mut gamma_sum = self.gamma_sum(&idx);
        let mut current_loss = self.score(&residuals, None, c, gamma_sum);

        for &member in self.ranked_good.iter().rev() {
            let mut best: Option<(usize, f64)> = None;
            for (pos, &cand) in complement.iter().enumerate() {
                let g = gamma_sum - self.gamma[member] + self.gamma[cand];
                let l = self.score(&residuals, Some((member, cand)), c, g);
                if best.is_none_or(|(_, b)| l < b) {
                    best = Some((pos, l));
                }
            }
            if let Some((pos, l)) = best {
                if l < current_loss {
                    let cand = complement[pos];
                    complement[pos] = member;
                    current = current.with(member, false).with(cand, true);
                    idx = current.indices();
                    residuals = self.residuals(&idx);
                    gamma_sum = self.gamma_sum(&idx);
                    current_loss = self.score(&residuals, None, c, gamma_sum);
                }
            }
        }
        Ok(current)
    }
}

fn check_ranking(ranking: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    for &l in ranking {
        if l >= d || seen[l] {
            return Err(Error::InvalidParameter(format!(
                "ranking is not a permutation of 0..{d}"
            )));
        }
        seen[l] = true;
    }
    if ranking.len() != d {
        return Err(Error::InvalidParameter(format!(
            "ranking has {} entries for {d} channels",
            ranking.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AlternateOutcome {
    pub filter: FreqFilter,
    pub selection: ChannelSelection,
    pub loss: f64,
    /// Solve loss and post-swap loss of every round, in order.
    pub loss_trace: Vec<f64>,
    pub rounds: usize,
}

/// Alternates filter solves and swap searches starting from `seed`.
pub fn alternate(
    ts: &TrainingSet,
    seed: &ChannelSelection,
    ranking: &[usize],
    max_rounds: usize,
) -> Result<AlternateOutcome> {
    alternate_with_prior(ts, seed, ranking, None, max_rounds)
}

/// [`alternate`] with filters for channels outside the seed taken from
/// `prior`, so the first swap search can consider them.
pub fn alternate_with_prior(
    ts: &TrainingSet,
    seed: &ChannelSelection,
    ranking: &[usize],
    prior: Option<&FreqFilter>,
    max_rounds: usize,
) -> Result<AlternateOutcome> {
    if max_rounds == 0 {
        return Err(Error::InvalidParameter(
            "max_rounds must be at least 1".into(),
        ));
    }
    if seed.count() == 0 {
        return Err(Error::EmptySelection);
    }
    let d = ts.channel_count();
    check_ranking(ranking, d)?;
    let (h, w) = ts.dims();
    let mut bank: Vec<Option<ComplexPlane>> = vec![None; d];
    if let Some(p) = prior {
        for (&l, plane) in p.channels().iter().zip(p.planes()) {
            if l < d {
                bank[l] = Some(plane.clone());
            }
        }
    }
    let bank_filter = |bank: &[Option<ComplexPlane>]| -> Result<FreqFilter> {
        let (planes, channels): (Vec<_>, Vec<_>) = bank
            .iter()
            .enumerate()
            .filter_map(|(l, p)| p.clone().map(|p| (p, l)))
            .unzip();
        FreqFilter::new(planes, channels)
    };

    let mut sel = seed.clone();
    let mut trace = Vec::new();
    let mut best: Option<(FreqFilter, ChannelSelection, f64)> = None;
    let mut rounds = 0;
    let mut consider = |flt: FreqFilter, sel: &ChannelSelection, l: f64| {
        if best.as_ref().is_none_or(|b| l < b.2) {
            best = Some((flt, sel.clone(), l));
        }
    };
    for _ in 0..max_rounds {
        rounds += 1;
        let flt = solve_filter(ts, &sel)?;
        for (&l, p) in flt.channels().iter().zip(flt.planes()) {
            bank[l] = Some(p.clone());
        }
        let solved = loss(ts, &flt, &sel)?;
        trace.push(solved);
        consider(flt, &sel, solved);

        let full = bank_filter(&bank)?;
        let state = SelectionSearchState::new(ts, &full, sel.clone(), ranking)?;
        let next = state.swap_search()?;
        if next == sel {
            trace.push(solved);
            break;
        }
        let swapped = state.selection_loss(&next)?;
        trace.push(swapped);
        consider(state.filter_for(&next)?, &next, swapped);
        sel = next;
        if (solved - swapped).abs() < CONVERGENCE_TOL {
            break;
        }
    }
    let (filter, selection, l) = best.expect("at least one round ran");
    // Keep the planes consistent with the zero-filled bank dims.
    debug_assert!(filter.dims().is_none_or(|dims| dims == (h, w)));
    Ok(AlternateOutcome {
        filter,
        selection,
        loss: l,
        loss_trace: trace,
        rounds,
    })
}

/// Controls for the full distillation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub prune: PruneConfig,
    pub max_rounds: usize,
    /// Fixes the selection size: the seed is the `c` most friendly channels
    /// and the pruning loop is skipped.
    pub target_channels: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            prune: PruneConfig::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            target_channels: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub filter: FreqFilter,
    pub selection: ChannelSelection,
    pub seed: ChannelSelection,
    pub report: FriendlinessReport,
    pub prune: Option<PruneOutcome>,
    pub loss_trace: Vec<f64>,
}

/// Friendliness seeding followed by alternation.
pub fn distill(
    ts: &TrainingSet,
    frames: &[FeatureMap],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let report = average_friendliness(frames)?;
    let (seed, prune) = match cfg.target_channels {
        Some(c) => (report.top(c)?, None),
        None => {
            let out = prune_with_report(report.clone(), ts, cfg.prune)?;
            (out.selection.clone(), Some(out))
        }
    };
    let alt = alternate(ts, &seed, &report.ranking, cfg.max_rounds)?;
    Ok(DistillOutcome {
        filter: alt.filter,
        selection: alt.selection,
        seed,
        report,
        prune,
        loss_trace: alt.loss_trace,
    })
}
