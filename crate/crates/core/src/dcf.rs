//! Multi-channel correlation filter restricted to a channel selection:
//! frequency-domain ridge regression, its loss, response maps, and peak
//! localization.
//!
//! For a selection of `c` channels the per-bin normal equations are
//!
//! ```text
//! ((λ/c) I + Σ_i β_i f_i(k) f_i(k)ᴴ) h(k) = Σ_i β_i f_i(k) conj(y(k))
//! ```
//!
//! where `f_i(k)` stacks the selected channel spectra of sample `i` at bin
//! `k`. The bins are independent, so the solve is `m` small `c x c` systems.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dft2, idft2, ComplexPlane, FeatureMap, Plane};

/// Real-valued correlation output.
pub type ResponseMap = Plane;

/// Default ridge regularizer.
pub const DEFAULT_LAMBDA: f64 = 1e-2;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Binary channel mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelSelection {
    mask: Vec<bool>,
}

impl ChannelSelection {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn full(d: usize) -> Self {
        Self {
            mask: vec![true; d],
        }
    }

    pub fn empty(d: usize) -> Self {
        Self {
            mask: vec![false; d],
        }
    }

    pub fn from_indices(d: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = vec![false; d];
        for &l in indices {
            if l >= d {
                return Err(Error::InvalidParameter(format!(
                    "channel {l} out of range for {d} channels"
                )));
            }
            mask[l] = true;
        }
        Ok(Self { mask })
    }

    /// Channel count `d`.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Selected count `c`.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, l: usize) -> bool {
        self.mask.get(l).copied().unwrap_or(false)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Selected channel indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(l, &b)| b.then_some(l))
            .collect()
    }

    pub fn with(&self, l: usize, on: bool) -> Self {
        let mut mask = self.mask.clone();
        mask[l] = on;
        Self { mask }
    }
}

/// Frequency-domain filter over an ascending list of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqFilter {
    planes: Vec<ComplexPlane>,
    channels: Vec<usize>,
}

impl FreqFilter {
    pub fn new(planes: Vec<ComplexPlane>, channels: Vec<usize>) -> Result<Self> {
        if planes.len() != channels.len() {
            return Err(Error::InconsistentSelection(format!(
                "{} planes for {} channel indices",
                planes.len(),
                channels.len()
            )));
        }
        if channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InconsistentSelection(
                "channel indices must be strictly increasing".into(),
            ));
        }
        if let Some(first) = planes.first() {
            if let Some(bad) = planes.iter().find(|p| p.dims() != first.dims()) {
                return Err(Error::DimensionMismatch {
                    expected: first.dims(),
                    actual: bad.dims(),
                });
            }
        }
        Ok(Self { planes, channels })
    }

    pub fn planes(&self) -> &[ComplexPlane] {
        &self.planes
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.planes.first().map(|p| p.dims())
    }

    /// Plane for original channel `l`, if present.
    pub fn plane_for(&self, l: usize) -> Option<&ComplexPlane> {
        self.channels
            .binary_search(&l)
            .ok()
            .map(|pos| &self.planes[pos])
    }

    pub fn plane_for_mut(&mut self, l: usize) -> Option<&mut ComplexPlane> {
        self.channels
            .binary_search(&l)
            .ok()
            .map(|pos| &mut self.planes[pos])
    }

    /// Spatial-domain filter planes.
    pub fn spatial(&self) -> Result<Vec<Plane>> {
        self.planes.iter().map(idft2).collect()
    }

    /// Planes for every selected channel, failing if one is missing.
    fn planes_for(&self, sel: &ChannelSelection) -> Result<Vec<(usize, &ComplexPlane)>> {
        sel.indices()
            .into_iter()
            .map(|l| {
                self.plane_for(l).map(|p| (l, p)).ok_or_else(|| {
                    Error::InconsistentSelection(format!(
                        "channel {l} is selected but the filter has no plane for it"
                    ))
                })
            })
            .collect()
    }
}

/// Training samples with a shared label, per-sample weights, and the ridge
/// parameter. Channel spectra are computed once at construction.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    samples: Vec<FeatureMap>,
    spectra: Vec<Vec<ComplexPlane>>,
    label: Plane,
    label_hat: ComplexPlane,
    weights: Vec<f64>,
    lambda: f64,
}

impl TrainingSet {
    pub fn new(samples: Vec<FeatureMap>, label: Plane, lambda: f64) -> Result<Self> {
        let weights = vec![1.0; samples.len()];
        Self::with_weights(samples, label, weights, lambda)
    }

    pub fn with_weights(
        samples: Vec<FeatureMap>,
        label: Plane,
        weights: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidParameter("training set needs a sample".into()))?;
        let (dims, d) = (first.dims(), first.channel_count());
        for s in &samples {
            if s.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: s.dims(),
                });
            }
            if s.channel_count() != d {
                return Err(Error::ChannelMismatch {
                    expected: d,
                    actual: s.channel_count(),
                });
            }
        }
        if label.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: label.dims(),
            });
        }
        if weights.len() != samples.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} samples",
                weights.len(),
                samples.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "sample weights must be positive, got {w}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        let spectra = samples.iter().map(FeatureMap::spectra).collect();
        let label_hat = dft2(&label);
        Ok(Self {
            samples,
            spectra,
            label,
            label_hat,
            weights,
            lambda,
        })
    }

    pub fn samples(&self) -> &[FeatureMap] {
        &self.samples
    }

    pub fn spectra(&self) -> &[Vec<ComplexPlane>] {
        &self.spectra
    }

    pub fn label(&self) -> &Plane {
        &self.label
    }

    pub fn label_spectrum(&self) -> &ComplexPlane {
        &self.label_hat
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.samples[0].channel_count()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.samples[0].dims()
    }

    /// Number of frequency bins `m`.
    pub fn bins(&self) -> usize {
        let (h, w) = self.dims();
        h * w
    }

    /// Training set restricted to the listed samples.
    pub fn subset(&self, which: &[usize]) -> TrainingSet {
        TrainingSet {
            samples: which.iter().map(|&i| self.samples[i].clone()).collect(),
            spectra: which.iter().map(|&i| self.spectra[i].clone()).collect(),
            label: self.label.clone(),
            label_hat: self.label_hat.clone(),
            weights: which.iter().map(|&i| self.weights[i]).collect(),
            lambda: self.lambda,
        }
    }

    fn check_selection(&self, sel: &ChannelSelection) -> Result<()> {
        if sel.len() != self.channel_count() {
            return Err(Error::ChannelMismatch {
                expected: self.channel_count(),
                actual: sel.len(),
            });
        }
        Ok(())
    }
}

/// Per-bin normal equations `G(k) h(k) = b(k)` for a fixed channel set.
///
/// `gram` holds `m` row-major `c x c` Hermitian blocks, `rhs` holds `m`
/// length-`c` vectors. Running averages of these accumulators are what the
/// tracker keeps as its model.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    dims: (usize, usize),
    c: usize,
    gram: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

impl NormalEquations {
    pub fn zeros(dims: (usize, usize), c: usize) -> Self {
        let m = dims.0 * dims.1;
        Self {
            dims,
            c,
            gram: vec![ZERO; m * c * c],
            rhs: vec![ZERO; m * c],
        }
    }

    /// Accumulators for one weighted sample, given its selected spectra.
    pub fn from_sample(spectra: &[&ComplexPlane], label_hat: &ComplexPlane, weight: f64) -> Self {
        let mut eq = Self::zeros(label_hat.dims(), spectra.len());
        eq.add_sample(spectra, label_hat, weight);
        eq
    }

    pub fn from_training_set(ts: &TrainingSet, sel: &ChannelSelection) -> Result<Self> {
        ts.check_selection(sel)?;
        let idx = sel.indices();
        let mut eq = Self::zeros(ts.dims(), idx.len());
        for (spec, &w) in ts.spectra.iter().zip(&ts.weights) {
            let chosen: Vec<&ComplexPlane> = idx.iter().map(|&l| &spec[l]).collect();
            eq.add_sample(&chosen, &ts.label_hat, w);
        }
        Ok(eq)
    }

    pub fn channel_count(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn gram(&self) -> &[Complex64] {
        &self.gram
    }

    pub fn rhs(&self) -> &[Complex64] {
        &self.rhs
    }

    /// `G += w f fᴴ`, `b += w f conj(y)` at every bin.
    pub fn add_sample(&mut self, spectra: &[&ComplexPlane], label_hat: &ComplexPlane, weight: f64) {
        let c = self.c;
        debug_assert_eq!(spectra.len(), c);
        let y = label_hat.as_slice();
        let cols: Vec<&[Complex64]> = spectra.iter().map(|p| p.as_slice()).collect();
        self.gram
            .par_chunks_mut(c * c)
            .zip(self.rhs.par_chunks_mut(c))
            .enumerate()
            .with_min_len(64)
            .for_each(|(k, (g, b))| {
                let yk = y[k].conj() * weight;
                for a in 0..c {
                    let fa = cols[a][k];
                    b[a] += fa * yk;
                    let wfa = fa * weight;
                    for bcol in 0..c {
                        g[a * c + bcol] += wfa * cols[bcol][k].conj();
                    }
                }
            });
    }

    /// `self = (1 - eta) * self + eta * other`.
    pub fn blend(&mut self, other: &NormalEquations, eta: f64) -> Result<()> {
        if self.c != other.c || self.dims != other.dims {
            return Err(Error::InconsistentSelection(
                "cannot blend accumulators of different shapes".into(),
            ));
        }
        let keep = 1.0 - eta;
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a = *a * keep + *b * eta;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a = *a * keep + *b * eta;
        }
        Ok(())
    }

    /// Solves `(G(k) + reg I) h(k) = b(k)` at every bin.
    ///
    /// Cholesky is used when `reg > 0`; otherwise (or if Cholesky breaks
    /// down) a partially pivoted elimination. Returns one plane per channel.
    pub fn solve(&self, reg: f64) -> Result<Vec<ComplexPlane>> {
        let c = self.c;
        if c == 0 {
            return Err(Error::EmptySelection);
        }
        let m = self.dims.0 * self.dims.1;
        let mut out = vec![ZERO; m * c];
        let ok: Vec<bool> = out
            .par_chunks_mut(c)
            .zip(self.gram.par_chunks(c * c))
            .zip(self.rhs.par_chunks(c))
            .with_min_len(32)
            .map(|((x, g), b)| solve_bin(g, b, c, reg, x))
            .collect();
        if let Some(bin) = ok.iter().position(|v| !v) {
            return Err(Error::Singular { bin });
        }
        let (h, w) = self.dims;
        (0..c)
            .map(|j| {
                let mut plane: Vec<Complex64> = (0..m).map(|k| out[k * c + j]).collect();
                hermitian_symmetrize(&mut plane, h, w);
                ComplexPlane::new(h, w, plane)
            })
            .collect()
    }
}

/// Replaces `x(k)` by `(x(k) + conj(x(-k))) / 2`, the nearest spectrum of a
/// real signal. Ill-conditioned bins otherwise leave roundoff asymmetry
/// between `k` and `-k` that shows up as an imaginary response.
fn hermitian_symmetrize(x: &mut [Complex64], h: usize, w: usize) {
    for r in 0..h {
        let nr = (h - r) % h;
        for c in 0..w {
            let nc = (w - c) % w;
            let (i, j) = (r * w + c, nr * w + nc);
            if i < j {
                let avg = (x[i] + x[j].conj()) * 0.5;
                x[i] = avg;
                x[j] = avg.conj();
            } else if i == j {
                x[i].im = 0.0;
            }
        }
    }
}

/// Solves one `c x c` system into `x`. Returns false if singular.
fn solve_bin(g: &[Complex64], b: &[Complex64], c: usize, reg: f64, x: &mut [Complex64]) -> bool {
    let mut a = g.to_vec();
    for i in 0..c {
        a[i * c + i] += reg;
    }
    if reg > 0.0 && cholesky_solve(&mut a.clone(), b, c, x) {
        return true;
    }
    lu_solve(&mut a, b, c, x)
}

fn cholesky_solve(a: &mut [Complex64], b: &[Complex64], c: usize, x: &mut [Complex64]) -> bool {
    // Lower factor in place: A = L Lᴴ.
    for j in 0..c {
        let mut diag = a[j * c + j].re;
        for k in 0..j {
            diag -= a[j * c + k].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * c + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..c {
            let mut s = a[i * c + j];
            for k in 0..j {
                s -= a[i * c + k] * a[j * c + k].conj();
            }
            a[i * c + j] = s / ljj;
        }
    }
    // L z = b
    for i in 0..c {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * c + k] * x[k];
        }
        x[i] = s / a[i * c + i].re;
    }
    // Lᴴ x = z
    for i in (0..c).rev() {
        let mut s = x[i];
        for k in i + 1..c {
            s -= a[k * c + i].conj() * x[k];
        }
        x[i] = s / a[i * c + i].re;
    }
    true
}

fn lu_solve(a: &mut [Complex64], b: &[Complex64], c: usize, x: &mut [Complex64]) -> bool {
    let scale = a.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    let tol = scale * 1e-12 * c as f64;
    let mut rhs = b.to_vec();
    for col in 0..c {
        let (piv, pmag) =
            (col..c)
                .map(|r| (r, a[r * c + col].norm()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pmag <= tol {
            return false;
        }
        if piv != col {
            for k in 0..c {
                a.swap(piv * c + k, col * c + k);
            }
            rhs.swap(piv, col);
        }
        let p = a[col * c + col];
        for r in col + 1..c {
            let f = a[r * c + col] / p;
            if f == ZERO {
                continue;
            }
            for k in col..c {
                let v = a[col * c + k];
                a[r * c + k] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    for i in (0..c).rev() {
        let mut s = rhs[i];
        for k in i + 1..c {
            s -= a[i * c + k] * x[k];
        }
        x[i] = s / a[i * c + i];
    }
    true
}

/// Minimizer of the selection-restricted ridge loss.
pub fn solve_filter(ts: &TrainingSet, sel: &ChannelSelection) -> Result<FreqFilter> {
    ts.check_selection(sel)?;
    let c = sel.count();
    if c == 0 {
        return Err(Error::EmptySelection);
    }
    let eq = NormalEquations::from_training_set(ts, sel)?;
    let planes = eq.solve(ts.lambda / c as f64)?;
    FreqFilter::new(planes, sel.indices())
}

/// Weighted ridge loss of `flt` on `ts` for selection `sel`.
///
/// Evaluated in the frequency domain with the `1/m` factors that make it
/// equal to the spatial-domain loss. An empty selection has no regularizer.
pub fn loss(ts: &TrainingSet, flt: &FreqFilter, sel: &ChannelSelection) -> Result<f64> {
    ts.check_selection(sel)?;
    let chosen = flt.planes_for(sel)?;
    if let Some(dims) = flt.dims() {
        if dims != ts.dims() {
            return Err(Error::DimensionMismatch {
                expected: ts.dims(),
                actual: dims,
            });
        }
    }
    let m = ts.bins();
    let y = ts.label_hat.as_slice();
    let mut data = 0.0;
    for (spec, &beta) in ts.spectra.iter().zip(&ts.weights) {
        let mut acc = 0.0;
        for k in 0..m {
            let mut r = -y[k];
            for (l, h) in &chosen {
                r += spec[*l].as_slice()[k] * h.as_slice()[k].conj();
            }
            acc += r.norm_sqr();
        }
        data += beta * acc;
    }
    let c = chosen.len();
    let reg = if c == 0 {
        0.0
    } else {
        ts.lambda / c as f64 * chosen.iter().map(|(_, h)| h.norm_sqr()).sum::<f64>()
    };
    Ok((data + reg) / m as f64)
}

/// Loss of a filter solved on all samples but the last, evaluated on the
/// last sample alone. Falls back to the training loss for a single sample.
///
/// This is the "does the model predict the next frame" score used when
/// ranking nested selections: adding channels can only lower the training
/// loss, so it cannot discriminate between selections on its own.
pub fn holdout_loss(ts: &TrainingSet, sel: &ChannelSelection) -> Result<f64> {
    let n = ts.len();
    if n < 2 {
        let flt = solve_filter(ts, sel)?;
        return loss(ts, &flt, sel);
    }
    let train: Vec<usize> = (0..n - 1).collect();
    let flt = solve_filter(&ts.subset(&train), sel)?;
    loss(&ts.subset(&[n - 1]), &flt, sel)
}

/// Response map from precomputed spectra of the selected channels, ordered
/// as in the filter restricted to `sel`.
pub fn response_from_spectra(
    spectra: &[&ComplexPlane],
    filter_planes: &[&ComplexPlane],
) -> Result<ResponseMap> {
    let first = filter_planes.first().ok_or(Error::EmptySelection)?;
    let (h, w) = first.dims();
    let mut acc = vec![ZERO; h * w];
    for (f, flt) in spectra.iter().zip(filter_planes) {
        if f.dims() != (h, w) || flt.dims() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: f.dims(),
            });
        }
        for ((a, x), y) in acc.iter_mut().zip(f.as_slice()).zip(flt.as_slice()) {
            *a += x * y.conj();
        }
    }
    idft2(&ComplexPlane::new(h, w, acc)?)
}

/// Correlation response of `f` under the selected part of `flt`.
pub fn response(f: &FeatureMap, flt: &FreqFilter, sel: &ChannelSelection) -> Result<ResponseMap> {
    if sel.len() != f.channel_count() {
        return Err(Error::ChannelMismatch {
            expected: f.channel_count(),
            actual: sel.len(),
        });
    }
    let chosen = flt.planes_for(sel)?;
    if chosen.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(dims) = flt.dims() {
        if dims != f.dims() {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: f.dims(),
            });
        }
    }
    let spectra: Vec<ComplexPlane> = chosen.iter().map(|(l, _)| dft2(f.channel(*l))).collect();
    let spec_refs: Vec<&ComplexPlane> = spectra.iter().collect();
    let planes: Vec<&ComplexPlane> = chosen.iter().map(|(_, p)| *p).collect();
    response_from_spectra(&spec_refs, &planes)
}

/// Peak of the response as a signed offset in `(-H/2, H/2] x (-W/2, W/2]`.
/// Ties go to the smallest row, then the smallest column.
pub fn locate(r: &ResponseMap) -> (isize, isize) {
    let (row, col, _) = peak(r);
    let wrap = |i: usize, n: usize| -> isize {
        if i > n / 2 {
            i as isize - n as isize
        } else {
            i as isize
        }
    };
    (wrap(row, r.height()), wrap(col, r.width()))
}

/// Argmax cell and value, first occurrence in row-major order.
pub fn peak(r: &ResponseMap) -> (usize, usize, f64) {
    let mut best = (0, r.as_slice()[0]);
    for (i, &v) in r.as_slice().iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    (best.0 / r.width(), best.0 % r.width(), best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{gaussian_label, LabelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, d: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(
            (0..d)
                .map(|_| Plane::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
        Plane::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn scalar_case_is_mosse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_map(&mut rng, 1, 6, 5);
        let y = random_plane(&mut rng, 6, 5);
        let lambda = 0.3;
        let ts = TrainingSet::new(vec![f.clone()], y.clone(), lambda).unwrap();
        let flt = solve_filter(&ts, &ChannelSelection::full(1)).unwrap();
        let fh = dft2(f.channel(0));
        let yh = dft2(&y);
        for k in 0..30 {
            let f = fh.as_slice()[k];
            let want = f * yh.as_slice()[k].conj() / (f.norm_sqr() + lambda);
            assert!((flt.planes()[0].as_slice()[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_features_give_zero_filter() {
        let zeros = FeatureMap::new(vec![Plane::zeros(4, 4).unwrap(); 3]).unwrap();
        let label = gaussian_label(&LabelConfig::new(0.1, 4, 4).unwrap(), 10.0, 10.0).unwrap();
        let ts = TrainingSet::new(vec![zeros], label, 0.1).unwrap();
        let flt = solve_filter(&ts, &ChannelSelection::full(3)).unwrap();
        assert!(flt.planes().iter().all(|p| p.norm_sqr() == 0.0));
    }

    #[test]
    fn empty_selection_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ts = TrainingSet::new(
            vec![random_map(&mut rng, 2, 4, 4)],
            random_plane(&mut rng, 4, 4),
            0.1,
        )
        .unwrap();
        assert!(matches!(
            solve_filter(&ts, &ChannelSelection::empty(2)),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn singular_system_names_first_bin() {
        // Two identical channels, one sample, no regularizer: rank one everywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_plane(&mut rng, 4, 4);
        let f = FeatureMap::new(vec![p.clone(), p]).unwrap();
        let ts = TrainingSet::new(vec![f], random_plane(&mut rng, 4, 4), 0.0).unwrap();
        match solve_filter(&ts, &ChannelSelection::full(2)) {
            Err(Error::Singular { bin }) => assert_eq!(bin, 0),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn zero_filter_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = random_map(&mut rng, 2, 5, 4);
        let zero_filter =
            FreqFilter::new(vec![ComplexPlane::zeros(5, 4).unwrap(); 2], vec![0, 1]).unwrap();
        let sel = ChannelSelection::full(2);

        let ts0 = TrainingSet::new(vec![f.clone()], Plane::zeros(5, 4).unwrap(), 0.5).unwrap();
        assert_eq!(loss(&ts0, &zero_filter, &sel).unwrap(), 0.0);

        let y = random_plane(&mut rng, 5, 4);
        let ts =
            TrainingSet::with_weights(vec![f.clone(), f], y.clone(), vec![1.0, 2.5], 0.5).unwrap();
        let want = 3.5 * y.sum_sq();
        assert!((loss(&ts, &zero_filter, &sel).unwrap() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn loss_rejects_missing_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ts = TrainingSet::new(
            vec![random_map(&mut rng, 3, 4, 4)],
            random_plane(&mut rng, 4, 4),
            0.1,
        )
        .unwrap();
        let flt = solve_filter(&ts, &ChannelSelection::from_indices(3, &[0, 1]).unwrap()).unwrap();
        let sel = ChannelSelection::from_indices(3, &[1, 2]).unwrap();
        assert!(matches!(
            loss(&ts, &flt, &sel),
            Err(Error::InconsistentSelection(_))
        ));
    }

    #[test]
    fn delta_filter_returns_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f = random_map(&mut rng, 3, 6, 6);
        let delta_hat = dft2(&Plane::delta(6, 6, 0, 0).unwrap());
        let flt = FreqFilter::new(vec![delta_hat], vec![1]).unwrap();
        let sel = ChannelSelection::from_indices(3, &[1]).unwrap();
        let r = response(&f, &flt, &sel).unwrap();
        for (a, b) in r.as_slice().iter().zip(f.channel(1).as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_fit_reproduces_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let f = random_map(&mut rng, 1, 8, 8);
        let y = gaussian_label(&LabelConfig::new(0.1, 8, 8).unwrap(), 16.0, 16.0).unwrap();
        let ts = TrainingSet::new(vec![f.clone()], y.clone(), 0.0).unwrap();
        let sel = ChannelSelection::full(1);
        let flt = solve_filter(&ts, &sel).unwrap();
        let r = response(&f, &flt, &sel).unwrap();
        for (a, b) in r.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn response_is_linear_in_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = random_map(&mut rng, 3, 5, 7);
        let y = random_plane(&mut rng, 5, 7);
        let ts = TrainingSet::new(vec![f.clone()], y, 0.1).unwrap();
        let both = ChannelSelection::from_indices(3, &[0, 2]).unwrap();
        let flt = solve_filter(&ts, &both).unwrap();
        let r = response(&f, &flt, &both).unwrap();
        let r0 = response(&f, &flt, &ChannelSelection::from_indices(3, &[0]).unwrap()).unwrap();
        let r2 = response(&f, &flt, &ChannelSelection::from_indices(3, &[2]).unwrap()).unwrap();
        for i in 0..r.len() {
            let sum = r0.as_slice()[i] + r2.as_slice()[i];
            assert!((r.as_slice()[i] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn response_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let ts = TrainingSet::new(
            vec![random_map(&mut rng, 1, 4, 4)],
            random_plane(&mut rng, 4, 4),
            0.1,
        )
        .unwrap();
        let sel = ChannelSelection::full(1);
        let flt = solve_filter(&ts, &sel).unwrap();
        let other = random_map(&mut rng, 1, 5, 4);
        assert!(matches!(
            response(&other, &flt, &sel),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn locate_conventions() {
        assert_eq!(locate(&Plane::delta(8, 8, 0, 0).unwrap()), (0, 0));
        assert_eq!(locate(&Plane::delta(8, 8, 7, 1).unwrap()), (-1, 1));
        assert_eq!(locate(&Plane::delta(8, 8, 4, 4).unwrap()), (4, 4));
        let y = gaussian_label(&LabelConfig::new(0.1, 12, 10).unwrap(), 20.0, 20.0).unwrap();
        assert_eq!(locate(&y.circshift(2, 3)), (2, 3));
        assert_eq!(locate(&y.circshift(-2, -3)), (-2, -3));
        // Ties resolve to the first cell in row-major order.
        let flat = Plane::new(3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(locate(&flat), (0, 0));
    }

    #[test]
    fn solved_filter_is_real_in_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let samples = (0..2).map(|_| random_map(&mut rng, 3, 6, 7)).collect();
        let ts = TrainingSet::new(samples, random_plane(&mut rng, 6, 7), 0.05).unwrap();
        let flt = solve_filter(&ts, &ChannelSelection::full(3)).unwrap();
        assert!(flt.spatial().is_ok());
    }

    #[test]
    fn perturbing_a_bin_never_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let samples = (0..3).map(|_| random_map(&mut rng, 3, 6, 6)).collect();
        let ts = TrainingSet::new(samples, random_plane(&mut rng, 6, 6), 0.1).unwrap();
        let sel = ChannelSelection::full(3);
        let flt = solve_filter(&ts, &sel).unwrap();
        let base = loss(&ts, &flt, &sel).unwrap();
        let eps = 1e-4;
        for trial in 0..8 {
            let ch = rng.random_range(0..3);
            let bin = rng.random_range(0..36);
            for delta in [
                Complex64::new(eps, 0.0),
                Complex64::new(-eps, 0.0),
                Complex64::new(0.0, eps),
                Complex64::new(0.0, -eps),
            ] {
                let mut p = flt.clone();
                p.plane_for_mut(ch).unwrap().as_mut_slice()[bin] += delta;
                let l = loss(&ts, &p, &sel).unwrap();
                assert!(l >= base - 1e-15 * base, "trial {trial}: {l} < {base}");
            }
        }
    }

    #[test]
    fn unselected_channels_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_map(&mut rng, 4, 5, 5);
        let y = random_plane(&mut rng, 5, 5);
        let sel = ChannelSelection::from_indices(4, &[0, 3]).unwrap();
        let ts = TrainingSet::new(vec![f.clone()], y.clone(), 0.2).unwrap();
        let mut zeroed = f.into_channels();
        zeroed[1] = Plane::zeros(5, 5).unwrap();
        zeroed[2] = Plane::zeros(5, 5).unwrap();
        let ts_z = TrainingSet::new(vec![FeatureMap::new(zeroed).unwrap()], y, 0.2).unwrap();
        let a = solve_filter(&ts, &sel).unwrap();
        let b = solve_filter(&ts_z, &sel).unwrap();
        assert_eq!(a, b);
        assert_eq!(loss(&ts, &a, &sel).unwrap(), loss(&ts_z, &b, &sel).unwrap());
    }

    #[test]
    fn blended_accumulators_match_weighted_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let samples: Vec<FeatureMap> = (0..3).map(|_| random_map(&mut rng, 2, 4, 6)).collect();
        let y = random_plane(&mut rng, 4, 6);
        let lambda = 0.05;
        let eta = 0.3;
        let sel = ChannelSelection::full(2);
        let yh = dft2(&y);
        let specs: Vec<Vec<ComplexPlane>> = samples.iter().map(FeatureMap::spectra).collect();
        let refs = |i: usize| specs[i].iter().collect::<Vec<_>>();
        let mut acc = NormalEquations::from_sample(&refs(0), &yh, 1.0);
        for i in 1..3 {
            acc.blend(&NormalEquations::from_sample(&refs(i), &yh, 1.0), eta)
                .unwrap();
        }
        let planes = acc.solve(lambda / 2.0).unwrap();
        let weights = vec![(1.0 - eta) * (1.0 - eta), eta * (1.0 - eta), eta];
        let ts = TrainingSet::with_weights(samples, y, weights, lambda).unwrap();
        let direct = solve_filter(&ts, &sel).unwrap();
        for (a, b) in planes.iter().zip(direct.planes()) {
            for (x, z) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - z).norm() < 1e-10 * z.norm().max(1.0));
            }
        }
    }

    #[test]
    fn holdout_prefers_consistent_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let base = random_plane(&mut rng, 8, 8);
        let frame = |rng: &mut ChaCha8Rng| {
            FeatureMap::new(vec![
                base.clone(),
                random_plane(rng, 8, 8).map(|v| v * 10.0),
            ])
            .unwrap()
        };
        let samples = vec![frame(&mut rng), frame(&mut rng)];
        let y = gaussian_label(&LabelConfig::new(0.1, 8, 8).unwrap(), 16.0, 16.0).unwrap();
        let ts = TrainingSet::new(samples, y, 0.01).unwrap();
        let both = holdout_loss(&ts, &ChannelSelection::full(2)).unwrap();
        let clean = holdout_loss(&ts, &ChannelSelection::from_indices(2, &[0]).unwrap()).unwrap();
        assert!(clean < both, "{clean} vs {both}");
    }
}
