//! Two-layer network `f(x) = γ_m aᵀσ(Wx)` with unit-norm inner rows.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::SpikedCovariance;
use crate::error::{Error, Result};
use crate::rng::{normal_matrix, normal_vector, rademacher};

/// Default Monte-Carlo sample count for `μ`.
pub const MU_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "String")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Elu,
    Swish,
    Softplus,
    /// Identity map; only reachable from code, never from config strings.
    LinearTest,
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

impl Activation {
    /// The user-facing kinds, in a fixed order.
    pub const ALL: [Activation; 6] = [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Elu,
        Activation::Swish,
        Activation::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Swish => "swish",
            Activation::Softplus => "softplus",
            Activation::LinearTest => "linear_test",
        }
    }

    /// `(σ(u), σ′(u), σ″(u))`. ReLU takes `σ′(0) = 0.5`.
    #[inline]
    pub fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    (u, 1.0, 0.0)
                } else if u < 0.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    (0.0, 0.5, 0.0)
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(u);
                let d1 = s * (1.0 - s);
                (s, d1, d1 * (1.0 - 2.0 * s))
            }
            Activation::Tanh => {
                let t = u.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Activation::Elu => {
                if u > 0.0 {
                    (u, 1.0, 0.0)
                } else {
                    let e = u.exp();
                    (e - 1.0, e, e)
                }
            }
            Activation::Swish => {
                let s = sigmoid(u);
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                (u * s, s + u * s1, 2.0 * s1 + u * s2)
            }
            Activation::Softplus => {
                let s = sigmoid(u);
                (softplus(u), s, s * (1.0 - s))
            }
            Activation::LinearTest => (u, 1.0, 0.0),
        }
    }

    #[inline]
    pub fn value(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Sigmoid => sigmoid(u),
            Activation::Tanh => u.tanh(),
            Activation::Elu => {
                if u > 0.0 {
                    u
                } else {
                    u.exp_m1()
                }
            }
            Activation::Swish => u * sigmoid(u),
            Activation::Softplus => softplus(u),
            Activation::LinearTest => u,
        }
    }

    #[inline]
    pub fn d1(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if u > 0.0 {
                    1.0
                } else {
                    u.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(u);
                s + u * s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(u),
            Activation::LinearTest => 1.0,
        }
    }

    /// Whether `σ″` is continuous and not identically zero.
    pub fn has_curvature(self) -> bool {
        !matches!(self, Activation::Relu | Activation::LinearTest)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}` (expected relu, sigmoid, tanh, elu, swish or softplus)")))
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Ntk,
    Mf,
}

impl Scaling {
    pub fn gamma(self, m: usize) -> f64 {
        match self {
            Scaling::Ntk => 1.0 / (m as f64).sqrt(),
            Scaling::Mf => 1.0 / m as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scaling::Ntk => "ntk",
            Scaling::Mf => "mf",
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntk" => Ok(Scaling::Ntk),
            "mf" => Ok(Scaling::Mf),
            _ => Err(Error::Config(format!("unknown scaling `{s}` (expected ntk or mf)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    /// `m × d`, unit rows.
    pub w: Array2<f64>,
    /// Outer weights in `{−1, +1}`.
    pub a: Array1<f64>,
    pub scaling: Scaling,
    pub activation: Activation,
}

impl Network {
    pub fn new(w: Array2<f64>, a: Array1<f64>, scaling: Scaling, activation: Activation) -> Result<Self> {
        if w.nrows() != a.len() {
            return Err(Error::ShapeMismatch(format!("W has {} rows but a has length {}", w.nrows(), a.len())));
        }
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidParameter("network needs m >= 1 and d >= 1".into()));
        }
        for (j, row) in w.axis_iter(Axis(0)).enumerate() {
            let nrm = row.dot(&row).sqrt();
            if (nrm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("row {j} of W has norm {nrm}, expected 1")));
            }
        }
        if let Some(j) = a.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidParameter(format!("a[{j}] = {} is not ±1", a[j])));
        }
        Ok(Self { w, a, scaling, activation })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.scaling.gamma(self.m())
    }

    pub fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.d() {
            return Err(Error::ShapeMismatch(format!("X has {} columns, network expects d={}", x.ncols(), self.d())));
        }
        Ok(())
    }

    /// Pre-activations `XWᵀ`, `n × m`.
    pub fn preactivations(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(x.dot(&self.w.t()))
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        let pre = self.preactivations(x)?;
        Ok(self.forward_from(&pre))
    }

    pub fn forward_from(&self, pre: &Array2<f64>) -> Array1<f64> {
        let act = self.activation;
        pre.mapv(|u| act.value(u)).dot(&self.a) * self.gamma()
    }

    /// Same network with the other scaling.
    pub fn with_scaling(&self, scaling: Scaling) -> Self {
        Self { scaling, ..self.clone() }
    }
}

pub fn weight_normalize(w: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = w.to_owned();
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let nrm = row.dot(&row).sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::ZeroRow(j));
        }
        row /= nrm;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightInit {
    Sphere,
    /// Adds `c·1qᵀ` before renormalising.
    Spiked { c: f64 },
    OrthoToQ,
    /// `W_S XᵀX` renormalised.
    DataDependent,
}

pub fn init_weights<R: Rng + ?Sized>(
    mode: WeightInit,
    m: usize,
    d: usize,
    q: &ArrayView1<f64>,
    x: Option<&ArrayView2<f64>>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if q.len() != d {
        return Err(Error::ShapeMismatch(format!("q has length {}, expected d={d}", q.len())));
    }
    if mode == WeightInit::DataDependent && x.is_none() {
        return Err(Error::MissingData);
    }
    let ws = weight_normalize(&normal_matrix(m, d, rng).view())?;
    match mode {
        WeightInit::Sphere => Ok(ws),
        WeightInit::Spiked { c } => {
            let mut w = ws;
            for mut row in w.axis_iter_mut(Axis(0)) {
                row.scaled_add(c, q);
            }
            weight_normalize(&w.view())
        }
        WeightInit::OrthoToQ => {
            let mut w = ws;
            // Two passes keep |w·q| at rounding level after renormalisation.
            for _ in 0..2 {
                let proj = w.dot(q);
                for (mut row, p) in w.axis_iter_mut(Axis(0)).zip(proj.iter()) {
                    row.scaled_add(-p, q);
                }
                w = weight_normalize(&w.view())?;
            }
            Ok(w)
        }
        WeightInit::DataDependent => {
            let x = x.unwrap();
            if x.ncols() != d {
                return Err(Error::ShapeMismatch(format!("X has {} columns, expected d={d}", x.ncols())));
            }
            weight_normalize(&ws.dot(&x.t()).dot(x).view())
        }
    }
}

pub fn sample_outer_weights<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Array1<f64> {
    rademacher(m, rng)
}

/// `μ_j = E[σ′(w_jᵀx)]` for `x ~ N(0, Σ)`.
///
/// Uses that `w_jᵀx ~ N(0, w_jᵀΣw_j)`: one set of standard normal draws is
/// shared across neurons and scaled per neuron.
pub fn estimate_mu<R: Rng + ?Sized>(net: &Network, cov: &SpikedCovariance, n_samples: usize, rng: &mut R) -> Result<Array1<f64>> {
    if cov.bulk.len() != net.d() {
        return Err(Error::ShapeMismatch(format!("covariance has dimension {}, network d={}", cov.bulk.len(), net.d())));
    }
    let var = Array1::from_iter(net.w.axis_iter(Axis(0)).map(|w| cov.quad_form(&w)));
    estimate_mu_from_variances(net.activation, &var.view(), n_samples, rng)
}

/// `μ_j` for pre-activations `N(0, var_j)`.
pub fn estimate_mu_from_variances<R: Rng + ?Sized>(
    act: Activation,
    var: &ArrayView1<f64>,
    n_samples: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("mu estimation needs at least one sample".into()));
    }
    let g = normal_vector(n_samples, rng);
    let mut mu = Array1::zeros(var.len());
    Zip::from(&mut mu).and(var).par_for_each(|mu_j, &v| {
        let s = v.max(0.0).sqrt();
        *mu_j = g.iter().map(|&gi| act.d1(s * gi)).sum::<f64>() / n_samples as f64;
    });
    Ok(mu)
}

/// `μ_j` as the plain sample mean of `σ′(w_jᵀx_i)` over the rows of `x`.
pub fn empirical_mu(net: &Network, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
    let pre = net.preactivations(x)?;
    let act = net.activation;
    Ok(pre.mapv(|u| act.d1(u)).mean_axis(Axis(0)).unwrap())
}
