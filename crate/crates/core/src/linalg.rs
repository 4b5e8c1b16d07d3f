//! Dense linear-algebra helpers on top of LAPACK.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, QR, SVDDC};
use serde::Serialize;

use crate::error::{Error, Result};

/// Leading singular triplets, values nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub values: Array1<f64>,
    /// Left vectors as columns.
    pub u: Array2<f64>,
    /// Right vectors as columns.
    pub v: Array2<f64>,
}

fn check_finite(m: &ArrayView2<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter("matrix has non-finite entries".into()))
    }
}

/// All singular values via divide and conquer, no vectors.
pub fn singular_values(m: &ArrayView2<f64>) -> Result<Array1<f64>> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(Array1::zeros(0));
    }
    let (_, s, _) = m.to_owned().svddc(JobSvd::None)?;
    Ok(s)
}

/// Thin SVD truncated to `k` triplets.
pub fn svd_dense(m: &ArrayView2<f64>, k: usize) -> Result<Svd> {
    check_finite(m)?;
    let (r, c) = m.dim();
    let k = k.min(r.min(c));
    let (u, s, vt) = m.to_owned().svddc(JobSvd::Some)?;
    let u = u.ok_or_else(|| Error::Linalg("gesdd returned no U".into()))?;
    let vt = vt.ok_or_else(|| Error::Linalg("gesdd returned no Vᵀ".into()))?;
    Ok(Svd {
        values: s.slice(s![..k]).to_owned(),
        u: u.slice(s![.., ..k]).to_owned(),
        v: vt.slice(s![..k, ..]).t().to_owned(),
    })
}

fn orthonormalize(m: Array2<f64>) -> Result<Array2<f64>> {
    let (q, _) = m.qr()?;
    Ok(q)
}

/// Top-`k` singular triplets by block subspace iteration with Rayleigh-Ritz.
///
/// Converges when every retained value moves by less than `tol` relative to the
/// largest one and the residual `‖Mv − σu‖` of every triplet is below
/// `sqrt(tol)·σ₁`. Returns `ConvergenceFailure` after `max_iter` sweeps.
pub fn svd_subspace(m: &ArrayView2<f64>, k: usize, tol: f64, max_iter: usize) -> Result<Svd> {
    check_finite(m)?;
    let (r, c) = m.dim();
    let k = k.min(r.min(c));
    if k == 0 {
        return Ok(Svd { values: Array1::zeros(0), u: Array2::zeros((r, 0)), v: Array2::zeros((c, 0)) });
    }
    // Oversampling helps the k-th vector when σ_k is close to σ_{k+1}.
    let p = (k + 8).min(r.min(c));
    // Deterministic start: a fixed pseudo-random sign pattern.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut v = Array2::from_shape_simple_fn((c, p), || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    v = orthonormalize(v)?;
    let mut prev: Option<Array1<f64>> = None;
    for _ in 0..max_iter {
        let u = orthonormalize(m.dot(&v))?;
        v = orthonormalize(m.t().dot(&u))?;
        // Rayleigh-Ritz on the small projected matrix.
        let small = u.t().dot(m).dot(&v);
        let (su, ss, svt) = small.svddc(JobSvd::Some)?;
        let (su, svt) = (su.unwrap(), svt.unwrap());
        let uk = u.dot(&su.slice(s![.., ..k]));
        let vk = v.dot(&svt.slice(s![..k, ..]).t());
        let vals = ss.slice(s![..k]).to_owned();
        let top = vals[0].max(f64::MIN_POSITIVE);
        if vals[0] == 0.0 {
            return Ok(Svd { values: vals, u: uk, v: vk });
        }
        let moved = prev
            .as_ref()
            .map(|p| (p - &vals).iter().fold(0.0f64, |acc, x| acc.max(x.abs())) / top)
            .unwrap_or(f64::INFINITY);
        if moved < tol {
            let res = m.dot(&vk) - &(&uk * &vals);
            let worst = res
                .axis_iter(Axis(1))
                .map(|col| col.dot(&col).sqrt())
                .fold(0.0f64, f64::max);
            if worst <= tol.sqrt() * top {
                return Ok(Svd { values: vals, u: uk, v: vk });
            }
        }
        prev = Some(vals);
        v = orthonormalize(v.dot(&svt.t()))?;
    }
    Err(Error::ConvergenceFailure(format!(
        "subspace iteration for {k} triplets did not settle in {max_iter} sweeps"
    )))
}

/// Top-`k` triplets, iterative first and dense as the fallback.
pub fn top_singular(m: &ArrayView2<f64>, k: usize) -> Result<Svd> {
    match svd_subspace(m, k, 1e-10, 300) {
        Ok(svd) => Ok(svd),
        Err(Error::ConvergenceFailure(_)) => svd_dense(m, k),
        Err(e) => Err(e),
    }
}

/// Spectral norm by power iteration on `MᵀM`.
pub fn operator_norm(m: &ArrayView2<f64>) -> f64 {
    let c = m.ncols();
    if m.is_empty() {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(c, |j| 1.0 + 0.01 * ((j * 7919) % 101) as f64);
    v /= v.dot(&v).sqrt();
    let mut sigma = 0.0;
    for _ in 0..500 {
        let mv = m.dot(&v);
        let w = m.t().dot(&mv);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = mv.dot(&mv).sqrt();
        v = w / norm;
        if (next - sigma).abs() <= 1e-9 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

pub fn frobenius(m: &ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm(v: &ArrayView1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("fit_line: {} x values vs {} y values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite coordinate".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    // A flat response is fitted perfectly by a flat line.
    let r2 = if ss_tot <= f64::EPSILON * n * my.abs().max(1.0).powi(2) { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LineFit { slope, intercept, r2 })
}

/// `scale · left · rightᵀ`, stored without densifying.
#[derive(Clone, Debug)]
pub struct RankOne {
    pub left: Array1<f64>,
    pub right: Array1<f64>,
    pub scale: f64,
}

impl RankOne {
    pub fn new(left: Array1<f64>, right: Array1<f64>, scale: f64) -> Self {
        Self { left, right, scale }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array1::zeros(rows), Array1::zeros(cols), 0.0)
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.left.len(), self.right.len())
    }

    pub fn dense(&self) -> Array2<f64> {
        let l = self.left.view().insert_axis(Axis(1));
        let r = self.right.view().insert_axis(Axis(0));
        l.dot(&r) * self.scale
    }

    /// Spectral norm, equal to the Frobenius norm for rank one.
    pub fn norm(&self) -> f64 {
        self.scale.abs() * norm(&self.left.view()) * norm(&self.right.view())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.left.clone(), self.right.clone(), self.scale * c)
    }

    pub fn add_to(&self, m: &mut Array2<f64>) {
        for (i, &l) in self.left.iter().enumerate() {
            let f = self.scale * l;
            if f != 0.0 {
                m.row_mut(i).scaled_add(f, &self.right);
            }
        }
    }
}

/// Max-abs deviation of `UᵀU` from the identity.
pub fn orthonormality_defect(u: &ArrayView2<f64>) -> f64 {
    let g = u.t().dot(u);
    let mut worst = 0.0f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, stream, Purpose};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn diagonal_values() {
        let m = array![[3.0, 0.0], [0.0, 1.0]];
        let s = singular_values(&m.view()).unwrap();
        assert_abs_diff_eq!(s[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rank_one_values() {
        let u = array![1.0, 2.0, 2.0];
        let v = array![0.0, 3.0, 4.0, 0.0];
        let r = RankOne::new(u, v, 1.0);
        let s = singular_values(&r.dense().view()).unwrap();
        assert_abs_diff_eq!(s[0], 15.0, epsilon = 1e-12);
        assert!(s[1] < 1e-12);
        assert_abs_diff_eq!(r.norm(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn subspace_matches_dense() {
        let mut rng = stream(1, 0, 0, Purpose::Aux);
        let m = normal_matrix(50, 40, &mut rng);
        let dense = svd_dense(&m.view(), 40).unwrap();
        let all = singular_values(&m.view()).unwrap();
        for (a, b) in dense.values.iter().zip(all.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let it = svd_subspace(&m.view(), 3, 1e-13, 5000).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(it.values[i], dense.values[i], epsilon = 1e-8);
            let c = it.u.column(i).dot(&dense.u.column(i)).abs();
            assert!(c > 1.0 - 1e-6, "cosine {c}");
        }
    }

    #[test]
    fn power_iteration_norm() {
        let mut rng = stream(2, 0, 0, Purpose::Aux);
        let m = normal_matrix(60, 30, &mut rng);
        let s = singular_values(&m.view()).unwrap();
        assert!((operator_norm(&m.view()) - s[0]).abs() < 1e-6 * s[0]);
    }

    #[test]
    fn line_fit_exact_and_flat() {
        let f = fit_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-12);
        let flat = fit_line(&[1.0, 2.0], &[4.0, 4.0]).unwrap();
        assert_eq!(flat.r2, 1.0);
        assert!(matches!(fit_line(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn rank_one_add_matches_dense() {
        let r = RankOne::new(array![1.0, -1.0], array![2.0, 0.5, 1.0], 0.5);
        let mut m = Array2::zeros((2, 3));
        r.add_to(&mut m);
        assert_eq!(m, r.dense());
    }
}
