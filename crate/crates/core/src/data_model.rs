//! Spiked anisotropic Gaussian data.
//!
//! Rows of the bulk part are `N(0, Σ̂)` with `Σ̂ = diag(1, 2^{-α}, …, d^{-α})`
//! in the standard basis. The spike adds `ζ z_i q` to row `i`, so the
//! population covariance is `Σ̂ + ζ² qqᵀ`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{EigVals, Eigh, UPLO};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::fit_line;
use crate::rng::{normal_matrix, normal_vector, unit_vector};

/// Floor on the estimated spike magnitude `ζ̂²`.
pub const SPIKE_FLOOR: f64 = 1e-12;

/// `[k^{-α}]` for `k = 1..=d`.
pub fn bulk_eigenvalues(d: usize, alpha: f64) -> Array1<f64> {
    Array1::from_shape_fn(d, |k| ((k + 1) as f64).powf(-alpha))
}

#[derive(Clone, Debug)]
pub struct SpikedDataSpec {
    pub n: usize,
    pub d: usize,
    pub nu: f64,
    pub alpha: f64,
    pub q: Array1<f64>,
    /// Switches the spike off entirely (no finite ν gives ζ = 0).
    pub zeta_zero: bool,
}

impl SpikedDataSpec {
    pub fn new(n: usize, d: usize, nu: f64, alpha: f64, q: Array1<f64>) -> Result<Self> {
        let spec = Self { n, d, nu, alpha, q, zeta_zero: false };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with `q` drawn uniformly from the sphere.
    pub fn with_random_q<R: Rng + ?Sized>(n: usize, d: usize, nu: f64, alpha: f64, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        Self::new(n, d, nu, alpha, unit_vector(d, rng))
    }

    pub fn without_spike(mut self) -> Self {
        self.zeta_zero = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter(format!("n and d must be positive (n={}, d={})", self.n, self.d)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be a finite value >= 0, got {}", self.nu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        if self.q.len() != self.d {
            return Err(Error::ShapeMismatch(format!("q has length {}, expected d={}", self.q.len(), self.d)));
        }
        let qn = self.q.dot(&self.q).sqrt();
        if (qn - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("q must be a unit vector, norm is {qn}")));
        }
        Ok(())
    }

    /// `ζ = n^ν`, or zero when the spike is switched off.
    pub fn zeta(&self) -> f64 {
        if self.zeta_zero {
            0.0
        } else {
            (self.n as f64).powf(self.nu)
        }
    }

    pub fn covariance(&self) -> SpikedCovariance {
        SpikedCovariance {
            bulk: bulk_eigenvalues(self.d, self.alpha),
            zeta: self.zeta(),
            q: self.q.clone(),
            tau2: 0.0,
        }
    }
}

/// `diag(bulk) + ζ² qqᵀ + τ² I`, kept in factored form.
#[derive(Clone, Debug)]
pub struct SpikedCovariance {
    pub bulk: Array1<f64>,
    pub zeta: f64,
    pub q: Array1<f64>,
    pub tau2: f64,
}

impl SpikedCovariance {
    pub fn with_isotropic_noise(mut self, tau2: f64) -> Self {
        self.tau2 += tau2;
        self
    }

    /// `wᵀΣw` without forming `Σ`.
    pub fn quad_form(&self, w: &ndarray::ArrayView1<f64>) -> f64 {
        let bulk: f64 = w.iter().zip(self.bulk.iter()).map(|(x, l)| x * x * l).sum();
        let proj = w.dot(&self.q);
        let ww = w.dot(w);
        bulk + self.zeta * self.zeta * proj * proj + self.tau2 * ww
    }

    pub fn dense(&self) -> Array2<f64> {
        let d = self.bulk.len();
        let mut s = Array2::from_diag(&self.bulk);
        let z2 = self.zeta * self.zeta;
        for i in 0..d {
            for j in 0..d {
                s[[i, j]] += z2 * self.q[i] * self.q[j];
            }
            s[[i, i]] += self.tau2;
        }
        s
    }
}

/// A drawn dataset together with its exact bulk/spike split.
#[derive(Clone, Debug)]
pub struct DataSample {
    pub x: Array2<f64>,
    pub x_b: Array2<f64>,
    pub z: Array1<f64>,
    pub zeta: f64,
    pub q: Array1<f64>,
}

impl DataSample {
    /// Rebuilds a sample from parts; `x` is recomputed from the split.
    pub fn from_parts(x_b: Array2<f64>, z: Array1<f64>, zeta: f64, q: Array1<f64>) -> Result<Self> {
        if x_b.nrows() != z.len() || x_b.ncols() != q.len() {
            return Err(Error::ShapeMismatch(format!(
                "X_B is {:?}, z has length {}, q has length {}",
                x_b.dim(),
                z.len(),
                q.len()
            )));
        }
        let mut x = x_b.clone();
        add_spike(&mut x, &z, zeta, &q);
        Ok(Self { x, x_b, z, zeta, q })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `‖X − X_B − ζ z qᵀ‖_F`.
    pub fn reconstruction_error(&self) -> f64 {
        let mut r = &self.x - &self.x_b;
        add_spike(&mut r, &self.z, -self.zeta, &self.q);
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Adds `N(0, τ²)` noise to `X`; the noise is booked to the bulk part.
    pub fn with_input_noise<R: Rng + ?Sized>(&self, tau2: f64, rng: &mut R) -> Result<Self> {
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau2 must be >= 0, got {tau2}")));
        }
        if tau2 == 0.0 {
            return Ok(self.clone());
        }
        let xi = normal_matrix(self.n(), self.d(), rng) * tau2.sqrt();
        Ok(Self {
            x: &self.x + &xi,
            x_b: &self.x_b + &xi,
            z: self.z.clone(),
            zeta: self.zeta,
            q: self.q.clone(),
        })
    }
}

fn add_spike(x: &mut Array2<f64>, z: &Array1<f64>, zeta: f64, q: &Array1<f64>) {
    if zeta == 0.0 {
        return;
    }
    for (mut row, &zi) in x.axis_iter_mut(Axis(0)).zip(z.iter()) {
        row.scaled_add(zeta * zi, q);
    }
}

pub fn sample_spiked_data<R: Rng + ?Sized>(spec: &SpikedDataSpec, rng: &mut R) -> Result<DataSample> {
    spec.validate()?;
    let scales = bulk_eigenvalues(spec.d, spec.alpha).mapv(f64::sqrt);
    let mut x_b = normal_matrix(spec.n, spec.d, rng);
    x_b *= &scales;
    let z = normal_vector(spec.n, rng);
    DataSample::from_parts(x_b, z, spec.zeta(), spec.q.clone())
}

/// Column-centred copy.
pub fn center(x: &ArrayView2<f64>) -> Array2<f64> {
    match x.mean_axis(Axis(0)) {
        Some(mean) => x - &mean,
        None => x.to_owned(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpikeEstimate {
    pub nu_hat: f64,
    /// `NaN` when fewer than two bulk ranks are available for the fit.
    pub alpha_hat: f64,
    pub top_eigenvalue: f64,
    pub bulk_eigenvalues: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

/// Nonzero eigenvalues of `(1/n)XᵀX`, descending.
pub fn covariance_eigenvalues(x: &ArrayView2<f64>) -> Result<Vec<f64>> {
    let (n, d) = x.dim();
    let nf = n as f64;
    // The smaller Gram matrix has the same nonzero spectrum.
    let gram = if n < d { x.dot(&x.t()) / nf } else { x.t().dot(x) / nf };
    let mut ev: Vec<f64> = match gram.eigh(UPLO::Lower) {
        Ok((vals, _)) => vals.to_vec(),
        Err(_) => gram.eigvals()?.iter().map(|c| c.re).collect(),
    };
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(ev)
}

fn median(sorted_desc: &[f64]) -> f64 {
    let k = sorted_desc.len();
    if k == 0 {
        return 0.0;
    }
    if k % 2 == 1 {
        sorted_desc[k / 2]
    } else {
        0.5 * (sorted_desc[k / 2 - 1] + sorted_desc[k / 2])
    }
}

/// Estimates `(ν, α)` from a column-centred data matrix.
///
/// `ζ̂² = max(λ₁ − median(λ₂..), floor)` and `ν̂ = log ζ̂ / log n`. The bulk
/// exponent is the negated least-squares slope of `log λ_k` on `log k` over
/// ranks `2..=⌊0.8·min(n, d)⌋`.
pub fn estimate_spike_exponent(x: &ArrayView2<f64>) -> Result<SpikeEstimate> {
    let (n, d) = x.dim();
    if n < 2 || d == 0 {
        return Err(Error::InvalidParameter(format!("need n >= 2 and d >= 1, got {n}x{d}")));
    }
    let ev = covariance_eigenvalues(x)?;
    let top = ev[0];
    if !(top > SPIKE_FLOOR) {
        return Err(Error::DegenerateSpectrum(top));
    }
    let rest = &ev[1..];
    let zeta2 = (top - median(rest)).max(SPIKE_FLOOR);
    let nu_hat = 0.5 * zeta2.ln() / (n as f64).ln();

    let upper = ((0.8 * n.min(d) as f64).floor() as usize).min(ev.len());
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for k in 2..=upper {
        let lam = ev[k - 1];
        if lam > 0.0 {
            lx.push((k as f64).ln());
            ly.push(lam.ln());
        }
    }
    let alpha_hat = match fit_line(&lx, &ly) {
        Ok(f) => -f.slope,
        Err(_) => f64::NAN,
    };
    Ok(SpikeEstimate { nu_hat, alpha_hat, top_eigenvalue: top, bulk_eigenvalues: rest.to_vec(), n, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn e1(d: usize) -> Array1<f64> {
        let mut q = Array1::zeros(d);
        q[0] = 1.0;
        q
    }

    #[test]
    fn bulk_formula() {
        assert_eq!(bulk_eigenvalues(4, 0.0).to_vec(), vec![1.0; 4]);
        let b = bulk_eigenvalues(3, 1.0);
        assert_abs_diff_eq!(b[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[2], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(bulk_eigenvalues(2, 2.0).to_vec(), vec![1.0, 0.25]);
    }

    #[test]
    fn spec_validation() {
        assert!(SpikedDataSpec::new(10, 3, -0.1, 0.0, e1(3)).is_err());
        assert!(SpikedDataSpec::new(10, 3, 0.1, -1.0, e1(3)).is_err());
        assert!(SpikedDataSpec::new(10, 3, 0.1, 0.0, array![1.0, 1.0, 0.0]).is_err());
        assert!(SpikedDataSpec::new(0, 3, 0.1, 0.0, e1(3)).is_err());
        assert!(SpikedDataSpec::new(10, 2, 0.1, 0.0, e1(3)).is_err());
    }

    #[test]
    fn reconstruction_and_zeta() {
        let mut rng = stream(3, 0, 0, Purpose::Data);
        let spec = SpikedDataSpec::with_random_q(40, 30, 0.6, 0.5, &mut rng).unwrap();
        let s = sample_spiked_data(&spec, &mut rng).unwrap();
        assert_eq!(s.zeta, 40f64.powf(0.6));
        assert!(s.reconstruction_error() < 1e-10);
    }

    #[test]
    fn zeta_zero_gives_bulk_only() {
        let mut rng = stream(3, 0, 1, Purpose::Data);
        let spec = SpikedDataSpec::new(20, 5, 0.9, 0.0, e1(5)).unwrap().without_spike();
        let s = sample_spiked_data(&spec, &mut rng).unwrap();
        assert_eq!(s.x, s.x_b);
        assert_eq!(s.zeta, 0.0);
    }

    #[test]
    fn spiked_variance_along_q() {
        // ν = 0, Σ̂ = I, q = e₁: Var(x₁) = 2 and the MC standard error is 2·√(2/n).
        let n = 100_000;
        let mut rng = stream(4, 0, 0, Purpose::Data);
        let spec = SpikedDataSpec::new(n, 3, 0.0, 0.0, e1(3)).unwrap();
        let s = sample_spiked_data(&spec, &mut rng).unwrap();
        let col = s.x.column(0);
        let var = col.dot(&col) / n as f64;
        let se = 2.0 * (2.0 / n as f64).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn scalar_variance_sum() {
        let n = 1000;
        let mut rng = stream(5, 0, 0, Purpose::Data);
        let spec = SpikedDataSpec::new(n, 1, 0.25, 0.0, array![1.0]).unwrap();
        let s = sample_spiked_data(&spec, &mut rng).unwrap();
        let want = 1.0 + (n as f64).powf(0.5);
        let var = s.x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let se = want * (2.0 / n as f64).sqrt();
        assert!((var - want).abs() < 4.0 * se, "var {var} want {want}");
    }

    #[test]
    fn center_cases() {
        let c = center(&array![[1.0], [3.0]].view());
        assert_eq!(c, array![[-1.0], [1.0]]);
        let cc = center(&c.view());
        assert!((&cc - &c).iter().all(|v| v.abs() < 1e-12));
        let k = center(&array![[5.0, 1.0], [5.0, 2.0]].view());
        assert_eq!(k.column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn quad_form_matches_dense() {
        let mut rng = stream(6, 0, 0, Purpose::Aux);
        let spec = SpikedDataSpec::with_random_q(9, 7, 0.4, 0.7, &mut rng).unwrap();
        let cov = spec.covariance().with_isotropic_noise(0.3);
        let w = unit_vector(7, &mut rng);
        let dense = cov.dense();
        assert_abs_diff_eq!(cov.quad_form(&w.view()), w.dot(&dense.dot(&w)), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_spectrum_error() {
        let x = Array2::<f64>::zeros((5, 3));
        assert!(matches!(estimate_spike_exponent(&x.view()), Err(Error::DegenerateSpectrum(_))));
    }
}
