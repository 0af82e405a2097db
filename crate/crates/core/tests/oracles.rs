mod common;

use common::cases::*;

const TOL: f64 = 1e-12;

#[test]
fn gconv_spectral_matches_loops() {
    assert!(gconv_spectral_gap() < TOL);
}

#[test]
fn gconv_spatial_matches_loops() {
    assert!(gconv_spatial_gap() < TOL);
}

#[test]
fn dygconv_matches_loops() {
    assert!(dygconv_gap() < TOL);
}

#[test]
fn gru_step_matches_loops() {
    assert!(gru_step_gap() < TOL);
}

#[test]
fn dgcpm_forward_matches_loops() {
    assert!(dgcpm_forward_gap() < TOL);
}
