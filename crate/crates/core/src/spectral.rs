//! Real-valued DFT over fixed-length sequences and the frequency-band filter.
//!
//! A length-`n` real signal has `n / 2 + 1` distinct DFT bins. Bin 0 is the DC
//! term and, for even `n`, bin `n / 2` is the Nyquist term; every other bin
//! stands for a conjugate pair of the full transform. A [`FrequencySplit`] with
//! cutoff `c` puts bins `0..c` in the low band and the rest in the high band.
//! Both band maps are orthogonal projections that sum to the identity.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed real-DFT tables for one sequence length.
#[derive(Debug, Clone)]
pub struct FourierPlan {
    n: usize,
    /// `cos[[k, j]] = cos(2π k j / n)`
    cos: Array2<f64>,
    /// `sin[[k, j]] = sin(2π k j / n)`
    sin: Array2<f64>,
}

/// Real-DFT bins of a signal, DC first.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSpectrum {
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    High,
}

/// Cutoff between the low and high band for sequences of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrequencySplit {
    n: usize,
    cutoff: usize,
}

impl FrequencySplit {
    pub fn new(n: usize, cutoff: usize) -> Result<Self> {
        if n < 2 || cutoff < 1 || cutoff > n / 2 {
            return Err(Error::InvalidArgument(format!(
                "frequency cutoff c={cutoff} out of range for sequence length n={n} (need 1 <= c <= {})",
                n / 2
            )));
        }
        Ok(Self { n, cutoff })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn band_of(&self, bin: usize) -> Band {
        if bin < self.cutoff {
            Band::Low
        } else {
            Band::High
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::InvalidArgument(format!(
                "signal of length {len} does not match split for n={} (c={})",
                self.n, self.cutoff
            )));
        }
        Ok(())
    }
}

/// Trainable high-band rescaler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BetaMode {
    Scalar,
    Vector,
}

impl BetaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BetaMode::Scalar => "scalar",
            BetaMode::Vector => "vector",
        }
    }
}

impl std::str::FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(BetaMode::Scalar),
            "vector" => Ok(BetaMode::Vector),
            other => Err(Error::InvalidArgument(format!(
                "beta mode must be `scalar` or `vector`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescalerBeta {
    pub mode: BetaMode,
    /// One entry in scalar mode, one per feature column in vector mode.
    pub values: Array1<f64>,
}

impl RescalerBeta {
    pub fn scalar(value: f64) -> Self {
        Self {
            mode: BetaMode::Scalar,
            values: Array1::from_elem(1, value),
        }
    }

    pub fn vector(values: Array1<f64>) -> Self {
        Self {
            mode: BetaMode::Vector,
            values,
        }
    }

    pub fn filled(mode: BetaMode, dim: usize, value: f64) -> Self {
        match mode {
            BetaMode::Scalar => Self::scalar(value),
            BetaMode::Vector => Self::vector(Array1::from_elem(dim, value)),
        }
    }

    /// The rescaler applied to feature column `d`.
    #[inline]
    pub fn at(&self, d: usize) -> f64 {
        match self.mode {
            BetaMode::Scalar => self.values[0],
            BetaMode::Vector => self.values[d],
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.mode {
            BetaMode::Scalar if self.values.len() != 1 => Err(Error::InvalidArgument(format!(
                "scalar rescaler holds {} values",
                self.values.len()
            ))),
            BetaMode::Vector if self.values.len() != dim => Err(Error::InvalidArgument(format!(
                "rescaler has {} entries but the input has {dim} feature columns",
                self.values.len()
            ))),
            _ => Ok(()),
        }
    }
}

impl FourierPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("Fourier plan needs n >= 1".into()));
        }
        let bins = n / 2 + 1;
        let mut cos = Array2::zeros((bins, n));
        let mut sin = Array2::zeros((bins, n));
        for k in 0..bins {
            for j in 0..n {
                // Reduce k*j mod n first so the angle stays small and exact.
                let angle = std::f64::consts::TAU * ((k * j) % n) as f64 / n as f64;
                cos[[k, j]] = angle.cos();
                sin[[k, j]] = angle.sin();
            }
        }
        Ok(Self { n, cos, sin })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// `X_k = Σ_j x_j e^{-2πi jk/n}` for `k = 0..=n/2`.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<RealSpectrum> {
        self.check_len(x.len())?;
        let re = self.cos.dot(&x);
        let im = self.sin.dot(&x).mapv(|v| -v);
        let mut values: Vec<Complex64> = re
            .iter()
            .zip(im.iter())
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        values[0].im = 0.0;
        if self.n % 2 == 0 {
            values[self.n / 2].im = 0.0;
        }
        Ok(RealSpectrum { values })
    }

    /// Inverse of [`forward`](Self::forward); imaginary parts of the DC and
    /// Nyquist bins are ignored.
    pub fn inverse(&self, spectrum: &RealSpectrum) -> Result<Array1<f64>> {
        if spectrum.values.len() != self.bins() {
            return Err(Error::InvalidArgument(format!(
                "spectrum has {} bins, plan for n={} expects {}",
                spectrum.values.len(),
                self.n,
                self.bins()
            )));
        }
        let n = self.n;
        let mut out = Array1::zeros(n);
        for (k, v) in spectrum.values.iter().enumerate() {
            let paired = k != 0 && !(n % 2 == 0 && k == n / 2);
            let weight = if paired { 2.0 } else { 1.0 } / n as f64;
            let (cos, sin) = (self.cos.row(k), self.sin.row(k));
            for j in 0..n {
                let term = if paired {
                    v.re * cos[j] - v.im * sin[j]
                } else {
                    v.re * cos[j]
                };
                out[j] += weight * term;
            }
        }
        Ok(out)
    }

    /// Keeps only the bins of `band`.
    pub fn band_pass(&self, x: ArrayView1<f64>, split: FrequencySplit, band: Band) -> Result<Array1<f64>> {
        self.check_split(split)?;
        split.check_len(x.len())?;
        let mut spectrum = self.forward(x)?;
        for (k, v) in spectrum.values.iter_mut().enumerate() {
            if split.band_of(k) != band {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse(&spectrum)
    }

    /// Low-frequency component: bins `0..c`.
    pub fn lfc(&self, x: ArrayView1<f64>, split: FrequencySplit) -> Result<Array1<f64>> {
        self.band_pass(x, split, Band::Low)
    }

    /// High-frequency component: bins `c..=n/2`.
    pub fn hfc(&self, x: ArrayView1<f64>, split: FrequencySplit) -> Result<Array1<f64>> {
        self.band_pass(x, split, Band::High)
    }

    /// `‖hfc(x)‖₂ / ‖lfc(x)‖₂`.
    ///
    /// Returns [`Error::UndefinedRatio`] when the low band is numerically
    /// empty (below `1e-12` of the signal norm).
    pub fn hfc_lfc_ratio(&self, x: ArrayView1<f64>, split: FrequencySplit) -> Result<f64> {
        let low = norm(self.lfc(x, split)?.view());
        let high = norm(self.hfc(x, split)?.view());
        let total = norm(x);
        if !(low > 1e-12 * total) || low == 0.0 {
            return Err(Error::UndefinedRatio);
        }
        Ok(high / low)
    }

    /// Column-wise `lfc(X[:, d]) + β_d · hfc(X[:, d])` along the sequence axis.
    pub fn apply_inductive_bias(
        &self,
        x: ArrayView2<f64>,
        split: FrequencySplit,
        beta: &RescalerBeta,
    ) -> Result<Array2<f64>> {
        self.check_split(split)?;
        split.check_len(x.nrows())?;
        beta.check_dim(x.ncols())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input contains non-finite values".into()));
        }
        let mut out = Array2::zeros(x.raw_dim());
        for (d, (col, mut dst)) in x
            .axis_iter(Axis(1))
            .zip(out.axis_iter_mut(Axis(1)))
            .enumerate()
        {
            let low = self.lfc(col, split)?;
            let high = self.hfc(col, split)?;
            let b = beta.at(d);
            dst.zip_mut_with(&low, |o, &l| *o = l);
            dst.zip_mut_with(&high, |o, &h| *o += b * h);
        }
        Ok(out)
    }

    /// Dense `n × n` matrix of the band projection, so that the band of a
    /// matrix `X` with `n` rows is `P · X`.
    pub fn band_projector(&self, split: FrequencySplit, band: Band) -> Result<Array2<f64>> {
        self.check_split(split)?;
        let n = self.n;
        let mut p = Array2::zeros((n, n));
        let mut basis = Array1::zeros(n);
        for j in 0..n {
            basis.fill(0.0);
            basis[j] = 1.0;
            let col = self.band_pass(basis.view(), split, band)?;
            p.column_mut(j).assign(&col);
        }
        Ok(p)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::InvalidArgument(format!(
                "signal of length {len} does not match plan for n={}",
                self.n
            )));
        }
        Ok(())
    }

    fn check_split(&self, split: FrequencySplit) -> Result<()> {
        if split.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "split for n={} used with plan for n={}",
                split.len(),
                self.n
            )));
        }
        Ok(())
    }
}

pub(crate) fn norm(x: ArrayView1<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
