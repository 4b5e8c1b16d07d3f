use std::ptr;

use spikegrad_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let len = unsafe { sg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

struct Handles {
    sample: *mut SgSample,
    net: *mut SgNetwork,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            sg_sample_free(self.sample);
            sg_network_free(self.net);
        }
    }
}

fn handles(n: usize, d: usize, m: usize, act: i32) -> Handles {
    let mut sample = ptr::null_mut();
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(sg_sample_new(n, d, 0.25, 0.0, 7, &mut sample), SG_OK);
        assert_eq!(sg_network_new(m, d, act, SG_SCALING_NTK, 7, &mut net), SG_OK);
    }
    Handles { sample, net }
}

#[test]
fn decomposition_round_trip() {
    let h = handles(60, 40, 30, SG_ACT_TANH);
    let (mut n, mut d) = (0, 0);
    unsafe { assert_eq!(sg_sample_dims(h.sample, &mut n, &mut d), SG_OK) };
    assert_eq!((n, d), (60, 40));
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut dec = ptr::null_mut();
    unsafe {
        assert_eq!(sg_decompose(h.net, h.sample, y.as_ptr(), y.len(), SG_LOSS_MSE, 2000, 1, &mut dec), SG_OK);
        let mut norms = SgComponentNorms::default();
        assert_eq!(sg_component_norms(dec, &mut norms), SG_OK);
        assert!(norms.reconstruction_error < 1e-10, "{norms:?}");
        assert!(norms.g > 0.0 && norms.s1 > 0.0 && norms.e > 0.0);

        let mut written = 0;
        assert_eq!(sg_gradient_singular_values(dec, ptr::null_mut(), 0, &mut written), SG_OK);
        assert_eq!(written, 30);
        let mut sv = vec![0.0; written];
        assert_eq!(sg_gradient_singular_values(dec, sv.as_mut_ptr(), sv.len(), &mut written), SG_OK);
        assert!((sv[0] - norms.g).abs() < 1e-8 * norms.g);
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        sg_decomposition_free(dec);
    }
}

#[test]
fn singular_values_of_known_matrix() {
    let m = [3.0, 0.0, 0.0, 0.0, -4.0, 0.0];
    let mut out = [0.0; 2];
    let mut written = 0;
    unsafe {
        assert_eq!(sg_singular_values(m.as_ptr(), 2, 3, out.as_mut_ptr(), 2, &mut written), SG_OK);
        assert_eq!(written, 2);
        assert!((out[0] - 4.0).abs() < 1e-12 && (out[1] - 3.0).abs() < 1e-12);
        let mut small = [0.0; 1];
        assert_eq!(sg_singular_values(m.as_ptr(), 2, 3, small.as_mut_ptr(), 1, &mut written), SG_ERR_BUFFER);
        assert_eq!(written, 2);
        assert!(last_error().contains("2 needed"));
    }
}

#[test]
fn spike_exponent_matches_library() {
    let h = handles(400, 200, 10, SG_ACT_SIGMOID);
    let mut written = 0;
    let mut x = vec![0.0; 400 * 200];
    unsafe {
        assert_eq!(sg_sample_data(h.sample, x.as_mut_ptr(), x.len(), &mut written), SG_OK);
        let mut est = SgSpikeEstimate::default();
        assert_eq!(sg_estimate_spike_exponent(x.as_ptr(), 400, 200, &mut est), SG_OK);
        let arr = ndarray::Array2::from_shape_vec((400, 200), x).unwrap();
        let centered = spikegrad::data_model::center(&arr.view());
        let lib = spikegrad::data_model::estimate_spike_exponent(&centered.view()).unwrap();
        assert_eq!(est.nu_hat, lib.nu_hat);
        assert!((est.nu_hat - 0.25).abs() < 0.1, "{}", est.nu_hat);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(sg_network_new(5, 4, 99, SG_SCALING_MF, 0, &mut net), SG_ERR_INVALID);
        assert!(net.is_null());
        assert!(last_error().contains("activation"));
        assert_eq!(sg_network_new(5, 4, SG_ACT_RELU, SG_SCALING_MF, 0, ptr::null_mut()), SG_ERR_NULL);

        let mut norms = SgComponentNorms::default();
        assert_eq!(sg_component_norms(ptr::null(), &mut norms), SG_ERR_NULL);

        let mut sample = ptr::null_mut();
        assert_eq!(sg_sample_new(10, 0, 0.2, 0.0, 0, &mut sample), SG_ERR_INVALID);
        assert!(!last_error().is_empty());

        let h = handles(20, 6, 5, SG_ACT_SWISH);
        let y = [0.0; 3];
        let mut dec = ptr::null_mut();
        assert_ne!(sg_decompose(h.net, h.sample, y.as_ptr(), y.len(), SG_LOSS_MSE, 100, 0, &mut dec), SG_OK);
        assert!(last_error().contains("length"));

        let m = [1.0, f64::NAN];
        let mut est = SgSpikeEstimate::default();
        assert_ne!(sg_estimate_spike_exponent(m.as_ptr(), 1, 2, &mut est), SG_OK);
        assert_eq!(sg_last_error_message(ptr::null_mut(), 0), last_error().len());

        sg_sample_free(ptr::null_mut());
        sg_network_free(ptr::null_mut());
        sg_decomposition_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spikegrad.h")).unwrap();
    for name in [
        "sg_sample_new",
        "sg_network_new",
        "sg_decompose",
        "sg_component_norms",
        "sg_singular_values",
        "sg_estimate_spike_exponent",
        "sg_last_error_message",
        "typedef struct SgSample SgSample",
        "SG_ERR_BUFFER",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
