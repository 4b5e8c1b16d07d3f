//! The inner-layer gradient and its exact spike decomposition.
//!
//! With `H = (raᵀ) ∘ σ′(XWᵀ)` the gradient is `G = (γ/n)XᵀH`, stored `d × m`.
//! Writing `σ′ = 1μᵀ + σ′_⊥` and `X = X_B + ζ z qᵀ` gives
//!
//! ```text
//! S1  = (γ/n)   (X_Bᵀr)(a∘μ)ᵀ
//! S12 = γζ(zᵀr/n) q (a∘μ)ᵀ
//! S2  = (γζ/n)  q [zᵀ((raᵀ)∘σ′_⊥)]
//! E   = (γ/n)   X_Bᵀ((raᵀ)∘σ′_⊥)
//! ```
//!
//! and `G = S1 + S12 + S2 + E` holds identically.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::data_model::DataSample;
use crate::error::{Error, Result};
use crate::linalg::RankOne;
use crate::loss_residue::{residue, LossKind};
use crate::network::Network;
use crate::rng::normal_matrix;

/// Forward pass quantities shared by the gradient and its pieces.
#[derive(Clone, Debug)]
pub struct ForwardState {
    /// `XWᵀ`, `n × m`.
    pub pre: Array2<f64>,
    pub preds: Array1<f64>,
    pub r: Array1<f64>,
}

pub fn forward_state(net: &Network, x: &ArrayView2<f64>, y: &ArrayView1<f64>, loss: LossKind) -> Result<ForwardState> {
    let pre = net.preactivations(x)?;
    if y.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!("y has length {}, X has {} rows", y.len(), x.nrows())));
    }
    let preds = net.forward_from(&pre);
    let r = residue(loss, &preds.view(), y)?;
    Ok(ForwardState { pre, preds, r })
}

/// `(raᵀ) ∘ M` in place.
fn scale_rows_cols(m: &mut Array2<f64>, r: &ArrayView1<f64>, a: &ArrayView1<f64>) {
    Zip::from(m.rows_mut()).and(r).for_each(|mut row, &ri| {
        Zip::from(&mut row).and(a).for_each(|v, &aj| *v *= ri * aj);
    });
}

/// `G` from a residue and pre-activations.
pub fn gradient_from(net: &Network, x: &ArrayView2<f64>, pre: &Array2<f64>, r: &ArrayView1<f64>) -> Array2<f64> {
    let act = net.activation;
    let mut h = pre.mapv(|u| act.d1(u));
    scale_rows_cols(&mut h, r, &net.a.view());
    let c = net.gamma() / x.nrows() as f64;
    x.t().dot(&h) * c
}

/// `G = (γ/n)Xᵀ[(raᵀ) ∘ σ′(XWᵀ)]`, `d × m`.
pub fn gradient(net: &Network, x: &ArrayView2<f64>, y: &ArrayView1<f64>, loss: LossKind) -> Result<Array2<f64>> {
    let st = forward_state(net, x, y, loss)?;
    Ok(gradient_from(net, x, &st.pre, &st.r.view()))
}

/// `σ′(w_jᵀx_i) − μ_j`.
pub fn sigma_prime_perp(net: &Network, x: &ArrayView2<f64>, mu: &ArrayView1<f64>) -> Result<Array2<f64>> {
    let pre = net.preactivations(x)?;
    perp_from(net, &pre, mu)
}

fn perp_from(net: &Network, pre: &Array2<f64>, mu: &ArrayView1<f64>) -> Result<Array2<f64>> {
    if mu.len() != net.m() {
        return Err(Error::ShapeMismatch(format!("mu has length {}, network m={}", mu.len(), net.m())));
    }
    let act = net.activation;
    let mut s = pre.mapv(|u| act.d1(u));
    s -= mu;
    Ok(s)
}

/// `½ sign(z) sign(Wq)ᵀ`, ties to `+1`.
pub fn relu_perp_closed_form(sample: &DataSample, w: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if w.ncols() != sample.d() {
        return Err(Error::ShapeMismatch(format!("W has {} columns, sample d={}", w.ncols(), sample.d())));
    }
    let sign = |v: f64| if v >= 0.0 { 1.0 } else { -1.0 };
    let sz = sample.z.mapv(sign);
    let sw = w.dot(&sample.q).mapv(sign);
    let l = sz.view().insert_axis(Axis(1));
    let r = sw.view().insert_axis(Axis(0));
    Ok(l.dot(&r) * 0.5)
}

#[derive(Clone, Debug)]
pub struct GradientDecomposition {
    pub g: Array2<f64>,
    pub s1: RankOne,
    pub s12: RankOne,
    pub s2: RankOne,
    pub e: Array2<f64>,
    pub mu: Array1<f64>,
    pub sigma_perp: Array2<f64>,
    pub r: Array1<f64>,
    pub preds: Array1<f64>,
}

impl GradientDecomposition {
    /// `S1 + S12 + S2` densified.
    pub fn spikes_dense(&self) -> Array2<f64> {
        let mut b = Array2::zeros(self.g.dim());
        for p in [&self.s1, &self.s12, &self.s2] {
            p.add_to(&mut b);
        }
        b
    }

    /// `‖G − (S1+S12+S2+E)‖_F / ‖G‖_F`; zero when both sides vanish.
    pub fn reconstruction_error(&self) -> f64 {
        let mut diff = &self.g - &self.e;
        for p in [&self.s1, &self.s12, &self.s2] {
            p.scaled(-1.0).add_to(&mut diff);
        }
        let num = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = self.g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// `S1 + S12` as one rank-one term with left vector `Xᵀr` direction.
    pub fn residue_composite(&self) -> RankOne {
        let left = &self.s1.left * self.s1.scale + &self.s12.left * self.s12.scale;
        RankOne::new(left, self.s1.right.clone(), 1.0)
    }

    /// `S12 + S2` as one rank-one term with left vector `q`.
    pub fn data_composite(&self) -> RankOne {
        let right = &self.s12.right * self.s12.scale + &self.s2.right * self.s2.scale;
        RankOne::new(self.s2.left.clone(), right, 1.0)
    }
}

/// Exact decomposition of the gradient on `sample.x` into its spike pieces.
pub fn decompose(
    net: &Network,
    sample: &DataSample,
    y: &ArrayView1<f64>,
    loss: LossKind,
    mu: &ArrayView1<f64>,
) -> Result<GradientDecomposition> {
    let x = sample.x.view();
    let st = forward_state(net, &x, y, loss)?;
    decompose_with(net, sample, st, mu)
}

pub fn decompose_with(net: &Network, sample: &DataSample, st: ForwardState, mu: &ArrayView1<f64>) -> Result<GradientDecomposition> {
    if sample.x_b.dim() != sample.x.dim() {
        return Err(Error::ShapeMismatch("X_B and X differ in shape".into()));
    }
    let n = sample.n() as f64;
    let gamma = net.gamma();
    let zeta = sample.zeta;
    let ForwardState { pre, preds, r } = st;

    let sigma_perp = perp_from(net, &pre, mu)?;
    let mut h_perp = sigma_perp.clone();
    scale_rows_cols(&mut h_perp, &r.view(), &net.a.view());

    let amu = &net.a * mu;
    let xbr = sample.x_b.t().dot(&r);
    let s1 = RankOne::new(xbr, amu.clone(), gamma / n);
    let s12 = RankOne::new(sample.q.clone(), amu, gamma * zeta * sample.z.dot(&r) / n);
    let s2 = RankOne::new(sample.q.clone(), sample.z.dot(&h_perp), gamma * zeta / n);
    let e = sample.x_b.t().dot(&h_perp) * (gamma / n);

    let g = gradient_from(net, &sample.x.view(), &pre, &r.view());
    Ok(GradientDecomposition { g, s1, s12, s2, e, mu: mu.to_owned(), sigma_perp, r, preds })
}

/// `λW` in the `m × d` layout of `W`.
pub fn weight_decay_gradient(w: &ArrayView2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(w.to_owned() * lambda)
}

/// Gradient of `λ(1/2n)Σ_i‖∂_W f(x_i)‖_F²` and its spike/bulk split.
///
/// All matrices are `d × m` and already carry the factor `λ`.
#[derive(Clone, Debug)]
pub struct JacobianPenaltyPieces {
    pub grad: Array2<f64>,
    pub s3: RankOne,
    pub e2: Array2<f64>,
    /// `diag(‖x_i‖²)(σ′ ⊙ σ″)`, `n × m`.
    pub psi: Array2<f64>,
    pub lambda: f64,
    /// False when `σ″` vanishes almost everywhere (relu, identity); the
    /// gradient is then exactly zero.
    pub has_curvature: bool,
}

pub fn jacobian_psi(net: &Network, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let pre = net.preactivations(x)?;
    let act = net.activation;
    let mut psi = pre.mapv(|u| {
        let (_, d1, d2) = act.eval(u);
        d1 * d2
    });
    Zip::from(psi.rows_mut()).and(x.rows()).for_each(|mut row, xi| {
        row *= xi.dot(&xi);
    });
    Ok(psi)
}

pub fn jacobian_penalty_gradient(net: &Network, sample: &DataSample, lambda: f64) -> Result<JacobianPenaltyPieces> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let (d, m) = (net.d(), net.m());
    let has_curvature = net.activation.has_curvature();
    let psi = jacobian_psi(net, &sample.x.view())?;
    if !has_curvature {
        return Ok(JacobianPenaltyPieces {
            grad: Array2::zeros((d, m)),
            s3: RankOne::zeros(d, m),
            e2: Array2::zeros((d, m)),
            psi,
            lambda,
            has_curvature,
        });
    }
    let c = lambda * net.gamma().powi(2) / sample.n() as f64;
    let grad = sample.x.t().dot(&psi) * c;
    let e2 = sample.x_b.t().dot(&psi) * c;
    let s3 = RankOne::new(sample.q.clone(), sample.z.dot(&psi), c * sample.zeta);
    Ok(JacobianPenaltyPieces { grad, s3, e2, psi, lambda, has_curvature })
}

/// The penalty value `λ(1/2n)Σ_i γ²Σ_j σ′(w_jᵀx_i)²‖x_i‖²`.
pub fn jacobian_penalty_value(net: &Network, x: &ArrayView2<f64>, lambda: f64) -> Result<f64> {
    let pre = net.preactivations(x)?;
    let act = net.activation;
    let g2 = net.gamma().powi(2);
    let mut total = 0.0;
    for (prow, xi) in pre.rows().into_iter().zip(x.rows()) {
        let s: f64 = prow.iter().map(|&u| act.d1(u).powi(2)).sum();
        total += g2 * s * xi.dot(&xi);
    }
    Ok(lambda * total / (2.0 * x.nrows() as f64))
}

/// `X + Ξ` with `Ξ_ij ~ N(0, τ²)`.
pub fn add_input_noise<R: Rng + ?Sized>(x: &ArrayView2<f64>, tau2: f64, rng: &mut R) -> Result<Array2<f64>> {
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau2 must be >= 0, got {tau2}")));
    }
    if tau2 == 0.0 {
        return Ok(x.to_owned());
    }
    Ok(x + &(normal_matrix(x.nrows(), x.ncols(), rng) * tau2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{sample_spiked_data, SpikedDataSpec};
    use crate::linalg::singular_values;
    use crate::network::{init_weights, sample_outer_weights, weight_normalize, Activation, Scaling, WeightInit};
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn setup(n: usize, d: usize, m: usize, nu: f64, act: Activation, seed: u64) -> (Network, DataSample, Array1<f64>) {
        let mut rng = stream(seed, 0, 0, Purpose::Data);
        let spec = SpikedDataSpec::with_random_q(n, d, nu, 0.3, &mut rng).unwrap();
        let s = sample_spiked_data(&spec, &mut rng).unwrap();
        let w = init_weights(WeightInit::Sphere, m, d, &spec.q.view(), None, &mut rng).unwrap();
        let net = Network::new(w, sample_outer_weights(m, &mut rng), Scaling::Ntk, act).unwrap();
        let y = crate::rng::normal_vector(n, &mut rng);
        (net, s, y)
    }

    #[test]
    fn zero_residue_gives_zero_gradient() {
        let (net, s, _) = setup(12, 5, 4, 0.2, Activation::Tanh, 1);
        let y = net.forward(&s.x.view()).unwrap();
        let g = gradient(&net, &s.x.view(), &y.view(), LossKind::Mse).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_rank_one() {
        let (net, s, y) = setup(30, 10, 7, 0.2, Activation::LinearTest, 2);
        let g = gradient(&net, &s.x.view(), &y.view(), LossKind::Mse).unwrap();
        let r = &net.forward(&s.x.view()).unwrap() - &y;
        let want = RankOne::new(s.x.t().dot(&r), net.a.clone(), net.gamma() / 30.0).dense();
        assert!((&g - &want).iter().all(|v| v.abs() < 1e-12));
        let sv = singular_values(&g.view()).unwrap();
        assert!(sv[1] <= 1e-9 * sv[0]);
    }

    #[test]
    fn decomposition_reconstructs() {
        let (net, s, y) = setup(60, 40, 30, 0.6, Activation::Swish, 3);
        let mu = Array1::from_elem(30, 0.47);
        let dec = decompose(&net, &s, &y.view(), LossKind::Mse, &mu.view()).unwrap();
        assert!(dec.reconstruction_error() < 1e-12);
        // Composites share directions with their parts.
        let rc = dec.residue_composite();
        assert_abs_diff_eq!(rc.right.dot(&dec.s12.right) / (rc.right.dot(&rc.right)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zeta_zero_and_mu_zero() {
        let (net, s, y) = setup(30, 12, 9, 0.4, Activation::Sigmoid, 4);
        let s0 = DataSample::from_parts(s.x_b.clone(), s.z.clone(), 0.0, s.q.clone()).unwrap();
        let mu = Array1::from_elem(9, 0.2);
        let dec = decompose(&net, &s0, &y.view(), LossKind::Bce, &mu.view()).unwrap();
        assert_eq!(dec.s12.norm(), 0.0);
        assert_eq!(dec.s2.norm(), 0.0);
        let mut sum = dec.e.clone();
        dec.s1.add_to(&mut sum);
        assert!((&dec.g - &sum).iter().all(|v| v.abs() < 1e-13));

        let dec = decompose(&net, &s, &y.view(), LossKind::Bce, &Array1::zeros(9).view()).unwrap();
        assert_eq!(dec.s1.norm(), 0.0);
        assert_eq!(dec.s12.norm(), 0.0);
    }

    #[test]
    fn perp_examples() {
        let (net, _, _) = setup(5, 4, 3, 0.0, Activation::Sigmoid, 5);
        let mu = ndarray::array![0.1, 0.2, 0.3];
        let p = sigma_prime_perp(&net, &Array2::zeros((1, 4)).view(), &mu.view()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(p[[0, j]], 0.25 - mu[j], epsilon = 1e-15);
        }
        let lin = Network { activation: Activation::LinearTest, ..net };
        let p = sigma_prime_perp(&lin, &Array2::ones((2, 4)).view(), &Array1::ones(3).view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_norm_and_constant_case() {
        let (net, mut s, _) = setup(20, 6, 5, 0.8, Activation::Relu, 6);
        let cf = relu_perp_closed_form(&s, &net.w.view()).unwrap();
        let sv = singular_values(&cf.view()).unwrap();
        assert_abs_diff_eq!(sv[0], 0.5 * (20.0f64 * 5.0).sqrt(), epsilon = 1e-12);
        s.z.mapv_inplace(f64::abs);
        let mut w = net.w.clone();
        for (mut row, p) in w.axis_iter_mut(Axis(0)).zip(net.w.dot(&s.q)) {
            if p < 0.0 {
                row *= -1.0;
            }
        }
        let w = weight_normalize(&w.view()).unwrap();
        let cf = relu_perp_closed_form(&s, &w.view()).unwrap();
        assert!(cf.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn weight_decay_cases() {
        let w = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        assert!(weight_decay_gradient(&w.view(), 0.0).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(weight_decay_gradient(&w.view(), 2.0).unwrap(), &w * 2.0);
        assert!(weight_decay_gradient(&w.view(), -1.0).is_err());
    }

    #[test]
    fn jacobian_split_and_zero_cases() {
        let (net, s, _) = setup(25, 8, 6, 0.5, Activation::Tanh, 7);
        let p = jacobian_penalty_gradient(&net, &s, 3.0).unwrap();
        let mut sum = p.e2.clone();
        p.s3.add_to(&mut sum);
        assert!((&p.grad - &sum).iter().all(|v| v.abs() < 1e-10));
        for act in [Activation::LinearTest, Activation::Relu] {
            let other = Network { activation: act, ..net.clone() };
            let p = jacobian_penalty_gradient(&other, &s, 3.0).unwrap();
            assert!(!p.has_curvature);
            assert!(p.grad.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn input_noise_variance() {
        let mut rng = stream(8, 0, 0, Purpose::InputNoise);
        let x = Array2::zeros((4000, 5));
        assert_eq!(add_input_noise(&x.view(), 0.0, &mut rng).unwrap(), x);
        let xn = add_input_noise(&x.view(), 0.25, &mut rng).unwrap();
        let var = xn.iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / 20_000f64).sqrt());
    }
}
