//! Singular spectra, spike labelling and subspace comparisons.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, orthonormality_defect, Svd};

pub fn singular_spectrum(m: &ArrayView2<f64>, k: usize) -> Result<Svd> {
    let full = m.nrows().min(m.ncols());
    if k >= full {
        linalg::svd_dense(m, full)
    } else {
        linalg::top_singular(m, k)
    }
}

/// `|uᵀv| / (‖u‖‖v‖)`.
pub fn alignment(u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!("alignment: lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (linalg::norm(u), linalg::norm(v));
    if !(nu > 0.0 && nv > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok((u.dot(v).abs() / (nu * nv)).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeLabel {
    /// `X_Bᵀr`
    Residue,
    /// `q`
    Data,
    /// `X_Bᵀy`
    Target,
    /// `ω`
    Teacher,
    Unmatched,
}

impl SpikeLabel {
    pub fn name(self) -> &'static str {
        match self {
            SpikeLabel::Residue => "residue",
            SpikeLabel::Data => "data",
            SpikeLabel::Target => "target",
            SpikeLabel::Teacher => "teacher",
            SpikeLabel::Unmatched => "unmatched",
        }
    }
}

impl fmt::Display for SpikeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub label: SpikeLabel,
    pub vector: Array1<f64>,
}

impl Candidate {
    pub fn new(label: SpikeLabel, vector: Array1<f64>) -> Self {
        Self { label, vector }
    }
}

/// How many leading singular values count as spikes.
///
/// The bulk reference is `σ_{max_spikes+1}`; leading values are spikes while
/// they exceed `factor` times that reference. Counting stops at the first
/// value that fails.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeRule {
    pub max_spikes: usize,
    pub factor: f64,
}

impl Default for SpikeRule {
    fn default() -> Self {
        Self { max_spikes: 4, factor: 1.5 }
    }
}

impl SpikeRule {
    pub fn count(&self, values: &[f64]) -> usize {
        if values.is_empty() || !(values[0] > 0.0) {
            return 0;
        }
        let floor = 1e-10 * values[0];
        let reference = values.get(self.max_spikes).copied().unwrap_or(0.0).max(floor);
        values
            .iter()
            .take(self.max_spikes)
            .take_while(|&&v| v > self.factor * reference && v > floor)
            .count()
    }
}

/// Absolute cosines between columns of `vectors` and each candidate, `k × c`.
pub fn candidate_cosines(vectors: &ArrayView2<f64>, candidates: &[Candidate]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((vectors.ncols(), candidates.len()));
    for (j, c) in candidates.iter().enumerate() {
        if c.vector.len() != vectors.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "candidate {} has length {}, vectors have length {}",
                c.label,
                c.vector.len(),
                vectors.nrows()
            )));
        }
        for (i, col) in vectors.axis_iter(Axis(1)).enumerate() {
            out[[i, j]] = alignment(&col, &c.vector.view())?;
        }
    }
    Ok(out)
}

/// Labels rows `0..count` of a cosine table in order, each candidate used once.
pub fn label_greedy(cos: &ArrayView2<f64>, labels: &[SpikeLabel], count: usize, threshold: f64) -> Vec<(SpikeLabel, f64)> {
    let mut used = vec![false; labels.len()];
    let mut out = Vec::with_capacity(count);
    for i in 0..count.min(cos.nrows()) {
        let best = (0..labels.len())
            .filter(|&j| !used[j])
            .max_by(|&a, &b| cos[[i, a]].total_cmp(&cos[[i, b]]).then(b.cmp(&a)));
        match best {
            Some(j) if cos[[i, j]] >= threshold => {
                used[j] = true;
                out.push((labels[j], cos[[i, j]]));
            }
            _ => {
                let top = (0..labels.len()).map(|j| cos[[i, j]]).fold(0.0, f64::max);
                out.push((SpikeLabel::Unmatched, top));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Spike {
    pub rank: usize,
    pub label: SpikeLabel,
    pub value: f64,
    pub alignment: f64,
}

/// Spectrum of a gradient with labelled spikes and the composite overlay lines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub singular_values: Vec<f64>,
    pub spikes: Vec<Spike>,
    /// Leading singular values of `B = S1+S12+S2(+S3)`, labelled the same way.
    pub overlays: Vec<Spike>,
    /// Best cosine of each candidate with any of the leading vectors.
    pub candidate_scores: BTreeMap<SpikeLabel, f64>,
    /// Cosine table of the leading `max_spikes` left vectors, by candidate order.
    pub cosines: Vec<Vec<f64>>,
    pub candidate_order: Vec<SpikeLabel>,
    #[serde(skip)]
    pub top_left_vectors: Array2<f64>,
}

impl SpectralReport {
    pub fn labels(&self) -> Vec<SpikeLabel> {
        self.spikes.iter().map(|s| s.label).collect()
    }

    pub fn top_label(&self) -> Option<SpikeLabel> {
        self.spikes.first().map(|s| s.label)
    }

    pub fn overlay(&self, label: SpikeLabel) -> Option<f64> {
        self.overlays.iter().find(|o| o.label == label).map(|o| o.value)
    }
}

/// Spectrum of `g` with spikes labelled against `candidates`.
///
/// Spikes are detected on the singular values of `g` and each is labelled by
/// the candidate best aligned with its left singular vector. When `b` is
/// supplied its nonzero singular values become the overlay lines.
pub fn classify_spikes(
    g: &ArrayView2<f64>,
    b: Option<&ArrayView2<f64>>,
    candidates: &[Candidate],
    threshold: f64,
    rule: SpikeRule,
) -> Result<SpectralReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let values = linalg::singular_values(g)?;
    let count = rule.count(values.as_slice().unwrap());
    let rows = rule.max_spikes.max(2).min(values.len());
    let labels: Vec<SpikeLabel> = candidates.iter().map(|c| c.label).collect();

    let top = if rows == 0 { None } else { Some(linalg::top_singular(g, rows)?) };
    let (cos, u) = match &top {
        Some(t) if t.values[0] > 0.0 => (candidate_cosines(&t.u.view(), candidates)?, t.u.clone()),
        _ => (Array2::zeros((rows, candidates.len())), Array2::zeros((g.nrows(), rows))),
    };
    let spikes = label_greedy(&cos.view(), &labels, count, threshold)
        .into_iter()
        .enumerate()
        .map(|(i, (label, alignment))| Spike { rank: i + 1, label, value: values[i], alignment })
        .collect();

    let score_rows = count.max(2).min(cos.nrows());
    let candidate_scores = labels
        .iter()
        .enumerate()
        .map(|(j, &l)| (l, (0..score_rows).map(|i| cos[[i, j]]).fold(0.0, f64::max)))
        .collect();

    let overlays = match b {
        Some(b) => overlay_lines(b, candidates, threshold)?,
        None => Vec::new(),
    };

    Ok(SpectralReport {
        singular_values: values.to_vec(),
        spikes,
        overlays,
        candidate_scores,
        cosines: cos.rows().into_iter().map(|r| r.to_vec()).collect(),
        candidate_order: labels,
        top_left_vectors: u,
    })
}

fn overlay_lines(b: &ArrayView2<f64>, candidates: &[Candidate], threshold: f64) -> Result<Vec<Spike>> {
    let k = 3.min(b.nrows().min(b.ncols()));
    if k == 0 {
        return Ok(Vec::new());
    }
    let svd = linalg::svd_subspace(b, k, 1e-12, 500).or_else(|_| linalg::svd_dense(b, k))?;
    if !(svd.values[0] > 0.0) {
        return Ok(Vec::new());
    }
    let nonzero = svd.values.iter().take_while(|&&v| v > 1e-9 * svd.values[0]).count();
    let u = svd.u.slice(s![.., ..nonzero]);
    let cos = candidate_cosines(&u, candidates)?;
    let labels: Vec<SpikeLabel> = candidates.iter().map(|c| c.label).collect();
    Ok(label_greedy(&cos.view(), &labels, nonzero, threshold)
        .into_iter()
        .enumerate()
        .map(|(i, (label, alignment))| Spike { rank: i + 1, label, value: svd.values[i], alignment })
        .collect())
}

/// Principal angles in degrees, nondecreasing.
pub fn principal_angles(u: &ArrayView2<f64>, v: &ArrayView2<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::ShapeMismatch(format!("bases live in R^{} and R^{}", u.nrows(), v.nrows())));
    }
    for defect in [orthonormality_defect(u), orthonormality_defect(v)] {
        if defect > 1e-8 {
            return Err(Error::NotOrthonormal(defect));
        }
    }
    let a = u.t().dot(v);
    let sv = linalg::singular_values(&a.view())?;
    Ok(sv.iter().map(|&c| c.clamp(0.0, 1.0).acos().to_degrees()).collect())
}

/// Filter gradient of a stride-one valid 1-D convolution from the per-window
/// gradient `g` (`m × d`, `m = d − k + 1`).
///
/// Returns `∂L/∂w_ℓ = Σ_i G_{i,i+ℓ}` and the relative distance of that vector
/// from the span of the correlations of the top-two singular pairs of `g`.
pub fn conv_filter_gradient(g: &ArrayView2<f64>, k: usize) -> Result<(Array1<f64>, f64)> {
    let (m, d) = g.dim();
    if k == 0 || k > d || m != d - k + 1 {
        return Err(Error::ShapeMismatch(format!("need m = d − k + 1, got m={m}, d={d}, k={k}")));
    }
    let correlate = |u: &ArrayView1<f64>, v: &ArrayView1<f64>| Array1::from_shape_fn(k, |l| (0..m).map(|i| u[i] * v[i + l]).sum::<f64>());
    let mut fg = Array1::zeros(k);
    for l in 0..k {
        fg[l] = (0..m).map(|i| g[[i, i + l]]).sum();
    }
    let fnorm = linalg::norm(&fg.view());
    if fnorm == 0.0 {
        return Ok((fg, 0.0));
    }
    let svd = linalg::svd_dense(g, 2)?;
    let mut basis = Array2::zeros((k, svd.values.len()));
    for t in 0..svd.values.len() {
        basis.column_mut(t).assign(&correlate(&svd.u.column(t), &svd.v.column(t)));
    }
    // Least squares through an orthonormal basis of the span.
    let mut resid = fg.clone();
    let mut ortho: Vec<Array1<f64>> = Vec::new();
    for col in basis.axis_iter(Axis(1)) {
        let mut b = col.to_owned();
        for o in &ortho {
            let c = o.dot(&b);
            b.scaled_add(-c, o);
        }
        let bn = linalg::norm(&b.view());
        if bn > 1e-12 * linalg::norm(&col) && bn > 0.0 {
            ortho.push(b / bn);
        }
    }
    for o in &ortho {
        let c = o.dot(&resid);
        resid.scaled_add(-c, o);
    }
    Ok((fg, linalg::norm(&resid.view()) / fnorm))
}
