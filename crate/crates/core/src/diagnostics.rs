//! Spectral and oversmoothing diagnostics for attention operators and
//! hidden states.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{attention_probs, AttentionMask, BsaRec, BsaRecParams};
use crate::spectral::{BetaMode, FourierPlan, FrequencySplit, RealSpectrum};

const STOCHASTIC_TOL: f64 = 1e-6;

fn check_row_stochastic(a: ArrayView2<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("attention matrix must be square, got {:?}", a.shape())));
    }
    for (i, row) in a.rows().into_iter().enumerate() {
        if row.iter().any(|&v| !(v >= -STOCHASTIC_TOL)) {
            return Err(Error::InvalidArgument(format!("row {i} has negative or non-finite entries")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument(format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Unit-norm real sinusoids spanning real-DFT bin `k`: cosine and, for
/// bins other than DC and Nyquist, sine.
fn bin_basis(n: usize, k: usize) -> Vec<Array1<f64>> {
    let angle = |j: usize| std::f64::consts::TAU * ((k * j) % n) as f64 / n as f64;
    let mut out = vec![Array1::from_shape_fn(n, |j| angle(j).cos())];
    let edge = k == 0 || (n % 2 == 0 && k == n / 2);
    if !edge {
        out.push(Array1::from_shape_fn(n, |j| angle(j).sin()));
    }
    for v in out.iter_mut() {
        let norm = v.dot(v).sqrt();
        v.mapv_inplace(|x| x / norm);
    }
    out
}

fn project_onto_bin(plan: &FourierPlan, y: ArrayView1<f64>, k: usize) -> Result<Array1<f64>> {
    let mut spectrum = plan.forward(y)?;
    for (i, v) in spectrum.values.iter_mut().enumerate() {
        if i != k {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    plan.inverse(&RealSpectrum { values: spectrum.values })
}

/// Unnormalized per-bin gain `r_k`: the RMS, over the unit sinusoids `x`
/// spanning bin `k`, of `‖band_k(A x)‖₂`.
pub fn spectral_gain(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_row_stochastic(a)?;
    let n = a.nrows();
    let plan = FourierPlan::new(n)?;
    (0..plan.bins())
        .map(|k| {
            let basis = bin_basis(n, k);
            let mut energy = 0.0;
            for x in &basis {
                let y = a.dot(x);
                let p = project_onto_bin(&plan, y.view(), k)?;
                energy += p.dot(&p);
            }
            Ok((energy / basis.len() as f64).sqrt())
        })
        .collect()
}

/// Per-bin gain normalized by the DC gain.
pub fn spectral_response(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    let gain = spectral_gain(a)?;
    let dc = gain[0];
    Ok(gain.iter().map(|g| g / dc).collect())
}

/// `hfc/lfc` energy ratio of `Aᵗ x` for `t = 1..=t_max`; `None` where the
/// low band is empty.
pub fn lowpass_decay(a: ArrayView2<f64>, x: ArrayView1<f64>, split: FrequencySplit, t_max: usize) -> Result<Vec<Option<f64>>> {
    check_row_stochastic(a)?;
    let plan = FourierPlan::new(a.nrows())?;
    if let Err(Error::UndefinedRatio) = plan.hfc_lfc_ratio(x, split) {
        return Err(Error::InvalidArgument("input signal has no low-frequency energy".into()));
    }
    let mut y = x.to_owned();
    let mut out = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        y = a.dot(&y);
        match plan.hfc_lfc_ratio(y.view(), split) {
            Ok(r) => out.push(Some(r)),
            Err(Error::UndefinedRatio) => out.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Descending singular values scaled so the largest is 1.
pub fn normalized_singular_values(x: ArrayView2<f64>) -> Vec<f64> {
    let m = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    if top > 0.0 {
        sv.iter_mut().for_each(|s| *s /= top);
    }
    sv
}

/// Mean cosine similarity over all pairs of selected, nonzero rows.
/// `None` when fewer than two such rows exist.
pub fn mean_pairwise_cosine(x: ArrayView2<f64>, rows: Option<&[bool]>) -> Option<f64> {
    let picked: Vec<Array1<f64>> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| rows.is_none_or(|r| r[*i]))
        .filter_map(|(_, row)| {
            let norm = row.dot(&row).sqrt();
            (norm > 0.0).then(|| row.mapv(|v| v / norm))
        })
        .collect();
    if picked.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            sum += picked[i].dot(&picked[j]);
            pairs += 1;
        }
    }
    Some(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileEntry {
    /// Layer index or iteration count.
    pub label: usize,
    pub singular_values: Vec<f64>,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct OversmoothingProfile {
    pub entries: Vec<ProfileEntry>,
    /// Inputs without two usable rows.
    pub skipped: usize,
}

/// Singular spectra and row cosine similarity for a sequence of matrices.
/// `valid_rows` marks non-padding rows; `None` uses all rows.
pub fn oversmoothing_profile(inputs: &[(usize, ArrayView2<f64>)], valid_rows: Option<&[bool]>) -> OversmoothingProfile {
    let mut profile = OversmoothingProfile::default();
    for (label, x) in inputs {
        let Some(cosine) = mean_pairwise_cosine(*x, valid_rows) else {
            profile.skipped += 1;
            continue;
        };
        let selected: Vec<usize> = (0..x.nrows()).filter(|&i| valid_rows.is_none_or(|r| r[i])).collect();
        let sub = Array2::from_shape_fn((selected.len(), x.ncols()), |(i, j)| x[[selected[i], j]]);
        profile.entries.push(ProfileEntry {
            label: *label,
            singular_values: normalized_singular_values(sub.view()),
            cosine,
        });
    }
    profile
}

/// `Aᵗ X` for each requested `t` (ascending or not).
pub fn attention_iterates(a: ArrayView2<f64>, x: ArrayView2<f64>, ts: &[usize]) -> Vec<Array2<f64>> {
    let max = ts.iter().copied().max().unwrap_or(0);
    let mut cur = x.to_owned();
    let mut by_t = vec![None; max + 1];
    by_t[0] = Some(cur.clone());
    for t in 1..=max {
        cur = a.dot(&cur);
        by_t[t] = Some(cur.clone());
    }
    ts.iter().map(|&t| by_t[t].clone().expect("computed")).collect()
}

/// `softmax(Q Kᵀ / √d)` with standard-normal `Q, K ∈ R^{n×d}`.
pub fn random_softmax_attention<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let q = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let k = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    attention_probs(q.view(), k.view(), &AttentionMask::open(n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSummary {
    pub layer: usize,
    pub mode: &'static str,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn beta_report(params: &BsaRecParams) -> Vec<BetaSummary> {
    params
        .layers
        .iter()
        .enumerate()
        .map(|(layer, lp)| {
            let v = &lp.beta.values;
            BetaSummary {
                layer,
                mode: match lp.beta.mode {
                    BetaMode::Scalar => "scalar",
                    BetaMode::Vector => "vector",
                },
                mean: v.mean().unwrap_or(f64::NAN),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Per layer, the spectral response of the trained attention averaged over
/// heads and the given padded sequences.
pub fn model_attention_response(model: &BsaRec, sequences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let layers = model.config().layers;
    let bins = model.config().max_len / 2 + 1;
    let mut sums = vec![vec![0.0; bins]; layers];
    let mut count = 0usize;
    for seq in sequences {
        let (_, trace) = model.forward(seq, None)?;
        for (l, lt) in trace.layers.iter().enumerate() {
            for a in &lt.attention {
                for (s, r) in sums[l].iter_mut().zip(spectral_response(a.view())?) {
                    *s += r;
                }
            }
        }
        count += 1;
    }
    let denom = (count * model.config().heads).max(1) as f64;
    Ok(sums
        .into_iter()
        .map(|row| row.into_iter().map(|s| s / denom).collect())
        .collect())
}

/// Per layer, the oversmoothing profile of hidden states (non-padding rows)
/// for one padded sequence; label 0 is the embedding output.
pub fn model_layer_profile(model: &BsaRec, seq: &[usize]) -> Result<OversmoothingProfile> {
    let (_, trace) = model.forward(seq, None)?;
    let valid: Vec<bool> = seq.iter().map(|&id| id != 0).collect();
    let mut inputs: Vec<(usize, ArrayView2<f64>)> = vec![(0, trace.embedded.view())];
    inputs.extend(trace.layers.iter().enumerate().map(|(l, lt)| (l + 1, lt.output.view())));
    Ok(oversmoothing_profile(&inputs, Some(&valid)))
}
