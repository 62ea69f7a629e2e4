//! Analytic gradients against central finite differences.

mod common;

use bsarec::spectral::BetaMode;
use bsarec::ModelConfig;
use common::{gradient_check, tiny_config};

const TOLERANCE: f64 = 1e-4;

fn check(cfg: ModelConfig, seed: u64) {
    for t in gradient_check(&cfg, seed) {
        assert!(
            t.passes(TOLERANCE),
            "{} (alpha={}, beta={}, causal_filter={}): relative error {:e}\nanalytic {:?}\nnumeric  {:?}",
            t.name,
            cfg.alpha,
            cfg.beta_mode.as_str(),
            cfg.causal_filter,
            t.rel_error,
            t.analytic,
            t.numeric
        );
    }
}

#[test]
fn gradients_match_finite_differences() {
    for mode in [BetaMode::Scalar, BetaMode::Vector] {
        for alpha in [0.0, 0.5, 1.0] {
            check(tiny_config(alpha, mode), 5);
        }
    }
}

#[test]
fn gradients_match_with_causal_filter() {
    let cfg = ModelConfig {
        causal_filter: true,
        ..tiny_config(0.5, BetaMode::Vector)
    };
    check(cfg, 8);
}

#[test]
fn gradients_match_single_layer_one_head() {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        ..tiny_config(0.3, BetaMode::Scalar)
    };
    check(cfg, 21);
}

#[test]
fn gradients_match_without_dropout() {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..tiny_config(0.7, BetaMode::Vector)
    };
    check(cfg, 2);
}

#[test]
fn beta_gradient_vanishes_at_alpha_zero() {
    let checks = gradient_check(&tiny_config(0.0, BetaMode::Vector), 5);
    for t in checks.iter().filter(|t| t.name.ends_with(".beta")) {
        assert_eq!(t.analytic_norm, 0.0, "{}", t.name);
        assert!(t.numeric_norm < 1e-9, "{}", t.name);
    }
}
