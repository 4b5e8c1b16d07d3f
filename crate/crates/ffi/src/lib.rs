//! C ABI over `spikegrad`.
//!
//! Objects are opaque handles created by `sg_*_new` and released with the
//! matching `sg_*_free`. Every fallible call returns an `SG_*` status code;
//! on failure the message is available from `sg_last_error_message` on the
//! same thread. Matrices are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array1, ArrayView2};
use spikegrad::data_model::{estimate_spike_exponent, sample_spiked_data, DataSample, SpikedCovariance, SpikedDataSpec};
use spikegrad::gradient_decomp::{decompose, GradientDecomposition};
use spikegrad::linalg::{operator_norm, singular_values};
use spikegrad::loss_residue::LossKind;
use spikegrad::network::{estimate_mu, init_weights, sample_outer_weights, Activation, Network, Scaling, WeightInit};
use spikegrad::rng::{stream, Purpose};
use spikegrad::Error;

pub const SG_OK: i32 = 0;
pub const SG_ERR_NULL: i32 = 1;
pub const SG_ERR_INVALID: i32 = 2;
pub const SG_ERR_IO: i32 = 3;
pub const SG_ERR_NUMERIC: i32 = 4;
pub const SG_ERR_BUFFER: i32 = 5;
pub const SG_ERR_PANIC: i32 = 6;

pub const SG_ACT_RELU: i32 = 0;
pub const SG_ACT_SIGMOID: i32 = 1;
pub const SG_ACT_TANH: i32 = 2;
pub const SG_ACT_ELU: i32 = 3;
pub const SG_ACT_SWISH: i32 = 4;
pub const SG_ACT_SOFTPLUS: i32 = 5;

pub const SG_SCALING_NTK: i32 = 0;
pub const SG_SCALING_MF: i32 = 1;

pub const SG_LOSS_MSE: i32 = 0;
pub const SG_LOSS_BCE: i32 = 1;
pub const SG_LOSS_HINGE: i32 = 2;

/// A spiked data draw together with its population covariance.
pub struct SgSample {
    sample: DataSample,
    cov: SpikedCovariance,
}

pub struct SgNetwork {
    net: Network,
}

pub struct SgDecomposition {
    dec: GradientDecomposition,
}

/// Operator norms of the gradient and its pieces.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SgComponentNorms {
    pub g: f64,
    pub s1: f64,
    pub s12: f64,
    pub s2: f64,
    pub e: f64,
    /// `‖G − (S1 + S12 + S2 + E)‖_F / ‖G‖_F`.
    pub reconstruction_error: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SgSpikeEstimate {
    pub nu_hat: f64,
    /// NaN when the bulk fit is undetermined.
    pub alpha_hat: f64,
    pub top_eigenvalue: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn code_for(e: &Error) -> i32 {
    match e.exit_code() {
        2 => SG_ERR_INVALID,
        3 => SG_ERR_IO,
        _ => SG_ERR_NUMERIC,
    }
}

fn guard<F: FnOnce() -> Result<(), (i32, String)>>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SG_OK
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            SG_ERR_PANIC
        }
    }
}

fn lib<T>(r: spikegrad::Result<T>) -> Result<T, (i32, String)> {
    r.map_err(|e| (code_for(&e), e.to_string()))
}

fn null(what: &str) -> (i32, String) {
    (SG_ERR_NULL, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (i32, String) {
    (SG_ERR_INVALID, msg.into())
}

fn activation(code: i32) -> Result<Activation, (i32, String)> {
    Ok(match code {
        SG_ACT_RELU => Activation::Relu,
        SG_ACT_SIGMOID => Activation::Sigmoid,
        SG_ACT_TANH => Activation::Tanh,
        SG_ACT_ELU => Activation::Elu,
        SG_ACT_SWISH => Activation::Swish,
        SG_ACT_SOFTPLUS => Activation::Softplus,
        _ => return Err(invalid(format!("unknown activation code {code}"))),
    })
}

fn scaling(code: i32) -> Result<Scaling, (i32, String)> {
    match code {
        SG_SCALING_NTK => Ok(Scaling::Ntk),
        SG_SCALING_MF => Ok(Scaling::Mf),
        _ => Err(invalid(format!("unknown scaling code {code}"))),
    }
}

fn loss(code: i32) -> Result<LossKind, (i32, String)> {
    match code {
        SG_LOSS_MSE => Ok(LossKind::Mse),
        SG_LOSS_BCE => Ok(LossKind::Bce),
        SG_LOSS_HINGE => Ok(LossKind::Hinge),
        _ => Err(invalid(format!("unknown loss code {code}"))),
    }
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, (i32, String)> {
    if data.is_null() {
        return Err(null("data"));
    }
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("empty {rows}x{cols} matrix")));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(ArrayView2::from_shape((rows, cols), slice).expect("length checked"))
}

unsafe fn write_values(values: &[f64], out: *mut f64, capacity: usize, written: *mut usize) -> Result<(), (i32, String)> {
    if !written.is_null() {
        *written = values.len();
    }
    if out.is_null() {
        return if capacity == 0 { Ok(()) } else { Err(null("out")) };
    }
    if capacity < values.len() {
        return Err((SG_ERR_BUFFER, format!("buffer holds {capacity} values, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Draws `X = X_B + ζ z qᵀ` with `ζ = n^ν` and bulk eigenvalues `k^{-α}`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sg_sample_new(n: usize, d: usize, nu: f64, alpha: f64, seed: u64, out: *mut *mut SgSample) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut rng = stream(seed, 0, 0, Purpose::Data);
        let spec = lib(SpikedDataSpec::with_random_q(n, d, nu, alpha, &mut rng))?;
        let sample = lib(sample_spiked_data(&spec, &mut rng))?;
        *out = Box::into_raw(Box::new(SgSample { sample, cov: spec.covariance() }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from `sg_sample_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_sample_free(s: *mut SgSample) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Copies `X` (row-major, `n × d`) into `out`. `written` receives `n·d`.
///
/// # Safety
/// `s` must be a live handle; `out` valid for `capacity` doubles or null.
#[no_mangle]
pub unsafe extern "C" fn sg_sample_data(s: *const SgSample, out: *mut f64, capacity: usize, written: *mut usize) -> i32 {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("sample"))?;
        let x = s.sample.x.as_standard_layout();
        write_values(x.as_slice().expect("standard layout"), out, capacity, written)
    })
}

/// # Safety
/// `s` must be a live handle; `n` and `d` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_sample_dims(s: *const SgSample, n: *mut usize, d: *mut usize) -> i32 {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("sample"))?;
        if n.is_null() || d.is_null() {
            return Err(null("n or d"));
        }
        *n = s.sample.n();
        *d = s.sample.d();
        Ok(())
    })
}

/// Network with unit-norm rows drawn uniformly from the sphere and `a ∈ {±1}^m`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sg_network_new(m: usize, d: usize, activation_code: i32, scaling_code: i32, seed: u64, out: *mut *mut SgNetwork) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let act = activation(activation_code)?;
        let sc = scaling(scaling_code)?;
        if m == 0 || d == 0 {
            return Err(invalid(format!("need m, d >= 1, got m={m}, d={d}")));
        }
        let mut rng = stream(seed, 0, 0, Purpose::Weights);
        let mut q = Array1::zeros(d);
        q[0] = 1.0;
        let w = lib(init_weights(WeightInit::Sphere, m, d, &q.view(), None, &mut rng))?;
        let a = sample_outer_weights(m, &mut rng);
        let net = lib(Network::new(w, a, sc, act))?;
        *out = Box::into_raw(Box::new(SgNetwork { net }));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from `sg_network_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_network_free(net: *mut SgNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Gradient decomposition for targets `y` (length `n`). `mu_samples` Monte
/// Carlo draws estimate `μ_j = E σ′(w_jᵀx)` under the sample's covariance.
///
/// # Safety
/// Handles must be live; `y` valid for `y_len` doubles; `out` for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sg_decompose(
    net: *const SgNetwork,
    sample: *const SgSample,
    y: *const f64,
    y_len: usize,
    loss_code: i32,
    mu_samples: usize,
    seed: u64,
    out: *mut *mut SgDecomposition,
) -> i32 {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        let s = sample.as_ref().ok_or_else(|| null("sample"))?;
        if y.is_null() || out.is_null() {
            return Err(null("y or out"));
        }
        let loss = loss(loss_code)?;
        let y = ndarray::ArrayView1::from(std::slice::from_raw_parts(y, y_len));
        let mut rng = stream(seed, 0, 0, Purpose::Mu);
        let mu = lib(estimate_mu(&net.net, &s.cov, mu_samples, &mut rng))?;
        let dec = lib(decompose(&net.net, &s.sample, &y, loss, &mu.view()))?;
        *out = Box::into_raw(Box::new(SgDecomposition { dec }));
        Ok(())
    })
}

/// # Safety
/// `dec` must be null or a handle from `sg_decompose` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_decomposition_free(dec: *mut SgDecomposition) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// # Safety
/// `dec` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sg_component_norms(dec: *const SgDecomposition, out: *mut SgComponentNorms) -> i32 {
    guard(|| {
        let d = &dec.as_ref().ok_or_else(|| null("decomposition"))?.dec;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = SgComponentNorms {
            g: operator_norm(&d.g.view()),
            s1: d.s1.norm(),
            s12: d.s12.norm(),
            s2: d.s2.norm(),
            e: operator_norm(&d.e.view()),
            reconstruction_error: d.reconstruction_error(),
        };
        Ok(())
    })
}

/// Singular values of the decomposition's `G`, descending.
///
/// # Safety
/// `dec` must be a live handle; `out` valid for `capacity` doubles or null.
#[no_mangle]
pub unsafe extern "C" fn sg_gradient_singular_values(dec: *const SgDecomposition, out: *mut f64, capacity: usize, written: *mut usize) -> i32 {
    guard(|| {
        let d = &dec.as_ref().ok_or_else(|| null("decomposition"))?.dec;
        let sv = lib(singular_values(&d.g.view()))?;
        write_values(sv.as_slice().expect("contiguous"), out, capacity, written)
    })
}

/// Singular values of a row-major `rows × cols` matrix, descending.
///
/// # Safety
/// `data` valid for `rows·cols` doubles; `out` valid for `capacity` doubles or null.
#[no_mangle]
pub unsafe extern "C" fn sg_singular_values(data: *const f64, rows: usize, cols: usize, out: *mut f64, capacity: usize, written: *mut usize) -> i32 {
    guard(|| {
        let m = matrix(data, rows, cols)?;
        let sv = lib(singular_values(&m))?;
        write_values(sv.as_slice().expect("contiguous"), out, capacity, written)
    })
}

/// Spike-exponent estimate for a row-major `n × d` matrix, centred by column first.
///
/// # Safety
/// `data` valid for `n·d` doubles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sg_estimate_spike_exponent(data: *const f64, n: usize, d: usize, out: *mut SgSpikeEstimate) -> i32 {
    guard(|| {
        let x = matrix(data, n, d)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let centered = spikegrad::data_model::center(&x);
        let e = lib(estimate_spike_exponent(&centered.view()))?;
        *out = SgSpikeEstimate { nu_hat: e.nu_hat, alpha_hat: e.alpha_hat, top_eigenvalue: e.top_eigenvalue };
        Ok(())
    })
}
