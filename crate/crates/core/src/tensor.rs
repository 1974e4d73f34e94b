//! Dense real and complex planes, multi-channel feature maps, and the 2-D
//! discrete Fourier transform used by every frequency-domain routine.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/m` factor, `m = height * width`. Consequently
//! `sum |p|^2 == (1/m) * sum |dft2(p)|^2`.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Largest tolerated imaginary residue (relative to the output peak, floored
/// at 1) when an inverse transform is expected to be real.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "plane must be non-empty, got {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(Error::Dimension(format!(
            "{height}x{width} plane needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}

/// A single real channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Impulse of value 1 at `(row, col)`.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Result<Self> {
        let mut p = Self::zeros(height, width)?;
        p.data[row * width + col] = 1.0;
        Ok(p)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Circular shift: the value at `(r, c)` moves to `(r + dy, c + dx)`.
    pub fn circshift(&self, dy: isize, dx: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = vec![0.0; self.data.len()];
        for r in 0..h {
            let nr = (r + dy).rem_euclid(h);
            for c in 0..w {
                let nc = (c + dx).rem_euclid(w);
                out[(nr * w + nc) as usize] = self.data[(r * w + c) as usize];
            }
        }
        Self {
            height: self.height,
            width: self.width,
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A single complex channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexPlane {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            vec![Complex64::new(0.0, 0.0); height * width],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Element-wise `self ⊙ conj(other)`.
    pub fn mul_conj(&self, other: &ComplexPlane) -> Result<ComplexPlane> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .collect();
        Ok(ComplexPlane {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> ComplexPlane {
        ComplexPlane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }
}

/// `d` real channels sharing one `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: Vec<Plane>,
}

impl FeatureMap {
    pub fn new(channels: Vec<Plane>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Dimension("feature map needs at least one channel".into()))?;
        let dims = first.dims();
        if let Some(bad) = channels.iter().find(|p| p.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: bad.dims(),
            });
        }
        Ok(Self { channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn channel(&self, l: usize) -> &Plane {
        &self.channels[l]
    }

    pub fn channels(&self) -> &[Plane] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Plane> {
        self.channels
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureMap> {
        let channels = indices
            .iter()
            .map(|&l| {
                self.channels.get(l).cloned().ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "channel {l} out of range for {} channels",
                        self.channels.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMap::new(channels)
    }

    /// Appends the channels of `other` after those of `self`.
    pub fn concat(mut self, other: FeatureMap) -> Result<FeatureMap> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        self.channels.extend(other.channels);
        Ok(self)
    }

    pub fn circshift(&self, dy: isize, dx: isize) -> FeatureMap {
        FeatureMap {
            channels: self.channels.iter().map(|p| p.circshift(dy, dx)).collect(),
        }
    }

    /// Forward transform of every channel.
    pub fn spectra(&self) -> Vec<ComplexPlane> {
        self.channels.iter().map(dft2).collect()
    }
}

fn fft_rows_cols(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (
                planner.plan_fft_inverse(width),
                planner.plan_fft_inverse(height),
            )
        } else {
            (
                planner.plan_fft_forward(width),
                planner.plan_fft_forward(height),
            )
        };
        row_fft.process(data);
        if height > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); height];
            for c in 0..width {
                for r in 0..height {
                    column[r] = data[r * width + c];
                }
                col_fft.process(&mut column);
                for r in 0..height {
                    data[r * width + c] = column[r];
                }
            }
        }
    });
}

/// Unnormalized forward 2-D DFT.
pub fn dft2(p: &Plane) -> ComplexPlane {
    let mut data: Vec<Complex64> = p.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_rows_cols(p.height, p.width, &mut data, false);
    ComplexPlane {
        height: p.height,
        width: p.width,
        data,
    }
}

/// Inverse 2-D DFT with `1/m` normalization, keeping the complex result.
pub fn idft2_complex(q: &ComplexPlane) -> ComplexPlane {
    let mut data = q.data.clone();
    fft_rows_cols(q.height, q.width, &mut data, true);
    let inv = 1.0 / data.len() as f64;
    data.iter_mut().for_each(|z| *z *= inv);
    ComplexPlane {
        height: q.height,
        width: q.width,
        data,
    }
}

/// Inverse 2-D DFT of a spectrum expected to be conjugate-symmetric.
///
/// Fails with [`Error::ImaginaryResidue`] when the largest imaginary part
/// exceeds [`IMAG_RESIDUE_TOL`] times `max(1, max |Re|)`.
pub fn idft2(q: &ComplexPlane) -> Result<Plane> {
    let z = idft2_complex(q);
    let peak = z.data.iter().fold(1.0_f64, |m, v| m.max(v.re.abs()));
    let residue = z.data.iter().fold(0.0_f64, |m, v| m.max(v.im.abs()));
    if !(residue <= IMAG_RESIDUE_TOL * peak) {
        return Err(Error::ImaginaryResidue { residue });
    }
    Ok(Plane {
        height: q.height,
        width: q.width,
        data: z.data.into_iter().map(|v| v.re).collect(),
    })
}

/// Circular cross-correlation `c(t) = sum_x a(x) b(x - t)`, computed as
/// `idft2(dft2(a) ⊙ conj(dft2(b)))`.
pub fn circ_correlate(a: &Plane, b: &Plane) -> Result<Plane> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let prod = dft2(a).mul_conj(&dft2(b))?;
    idft2(&prod)
}
