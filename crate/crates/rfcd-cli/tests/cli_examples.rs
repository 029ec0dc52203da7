//! Contract tests for the `rfcd` binary: exit codes, flag semantics, edge
//! configurations, seed stability of the Monte Carlo validation, and the
//! checked-in quadrature pins. Heavier statistical checks live in
//! `acceptance.rs`; everything here runs at toy scale.

use rfcd::forward::forward_params;
use rfcd::moments::{gaussian_moment, MomentMethod};
use rfcd::teacher::estimate_teacher_constants;
use rfcd::{Activation, ExperimentConfig, SigmaSpec};
use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rfcd")
}

fn outdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rfcd-cli-{}-{tag}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

/// Small, fast base scale shared by the exit-code tests.
const SMALL: [&str; 12] = [
    "--d", "16", "--psi-p", "4", "--psi-n", "2", "--seed", "7", "--mc-constants", "20000",
    "--mc-flow", "5000",
];

fn run(args: &[&str], out: &PathBuf) -> std::process::ExitStatus {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn rfcd")
        .status
}

fn manifest(out: &PathBuf) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join("manifest.json")).expect("manifest.json");
    serde_json::from_str(&text).expect("manifest JSON")
}

#[test]
fn modes_with_threshold_above_spectrum_exits_2() {
    let out = outdir("lam-high");
    let mut args = vec!["modes", "--lambda-th", "1e9"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert_eq!(status.code(), Some(2), "empty Gen partition must be a validation error");
}

#[test]
fn ridge_sweep_descending_grid_exits_2() {
    let out = outdir("grid-desc");
    let mut args = vec!["ridge-sweep", "--grid", "3,2,1"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert_eq!(status.code(), Some(2), "descending ridge grid must be rejected");
}

#[test]
fn psi_sweep_with_zero_samples_exits_2() {
    let out = outdir("psi-zero");
    let mut args = vec!["psi-sweep", "--psi-n-grid", "0"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert_eq!(status.code(), Some(2), "psi_n yielding n = 0 must be rejected");
}

#[test]
fn unknown_config_key_exits_2() {
    let out = outdir("bad-key");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("config.json");
    std::fs::write(&cfg, r#"{"d": 16, "psi_p": 2.0, "psi_n": 1.0, "banana": 1}"#).unwrap();
    let status = run(&["constants", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(status.code(), Some(2), "unknown config keys must be rejected, not absorbed");
}

#[test]
fn ridge_sweep_with_loose_tolerance_selects_zero() {
    let out = outdir("tau-one");
    let mut args = vec!["ridge-sweep", "--tau", "1", "--lambda-th", "1"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert!(status.success(), "sweep should succeed");
    let m = manifest(&out);
    assert_eq!(
        m["results"]["gamma_star"].as_f64(),
        Some(0.0),
        "fracBmem never exceeds 1, so tau = 1 must select the smallest grid point"
    );
}

#[test]
fn modes_with_mu1_forced_zero_reduces_to_visibility() {
    let out = outdir("mu1-zero");
    let mut args = vec!["modes", "--mu1-zero", "--lambda-th", "1"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert!(status.success(), "modes --mu1-zero should succeed");
    let csv = std::fs::read_to_string(out.join("modes.csv")).expect("modes.csv");
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 7, "modes.csv row arity");
        // alpha_i = a_i - mu1^2 b_i collapses to a_i when mu1 = 0; the printed
        // fields must agree exactly, not just numerically.
        assert_eq!(f[2], f[4], "alpha must equal the visibility a when mu1 = 0");
        let a: f64 = f[2].parse().expect("a_i field");
        assert!(a >= 0.0, "visibility a_i = {a} must be non-negative");
        rows += 1;
    }
    assert_eq!(rows, 64, "one row per mode (p = 64)");
}

#[test]
fn spectrum_with_zero_step_is_a_single_atom_at_zero() {
    let out = outdir("dt-zero");
    let mut args = vec!["spectrum", "--target", "ucd", "--dt-step", "0"];
    args.extend_from_slice(&SMALL);
    let status = run(&args, &out);
    assert!(status.success(), "spectrum at dt = 0 should succeed");
    let atoms: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("atoms.json")).expect("atoms.json"),
    )
    .expect("atoms JSON");
    let detected = atoms["detected_atoms"].as_array().expect("atom list");
    assert_eq!(detected.len(), 1, "dt = 0 collapses the whole spectrum to one atom");
    assert_eq!(detected[0]["value"].as_f64(), Some(0.0));
    assert_eq!(detected[0]["multiplicity"].as_u64(), Some(64), "all p eigenvalues at 0");
}

#[test]
fn validate_verdicts_stable_across_five_seeds() {
    for seed in 100..105u64 {
        let out = outdir(&format!("validate-{seed}"));
        let seed_s = seed.to_string();
        let args = [
            "validate",
            "--reps",
            "600",
            "--pair-samples",
            "200000",
            "--top-k",
            "3",
            "--seed",
            &seed_s,
        ];
        let status = run(&args, &out);
        assert!(status.success(), "validate failed at seed {seed}");
        let m = manifest(&out);
        for key in ["increment_pass", "decomposition_pass", "pair_pass"] {
            assert_eq!(
                m["results"][key].as_bool(),
                Some(true),
                "{key} flipped to false at seed {seed}"
            );
        }
        assert_eq!(
            m["results"]["selected_convention"].as_str(),
            Some("pf_drift"),
            "bottom-cluster convention adjudication changed at seed {seed}"
        );
    }
}

#[test]
fn strict_mode_promotes_statistical_warnings_to_exit_3() {
    let out = outdir("strict");
    // A deliberately starved Monte Carlo budget leaves > 1% relative stderr
    // on the teacher constants, which is warning-worthy; --strict makes the
    // run fail with the numerical-error exit code.
    let args = [
        "constants", "--strict", "--d", "16", "--psi-p", "2", "--psi-n", "1", "--mc-constants",
        "2000", "--mc-flow", "2000",
    ];
    let status = run(&args, &out);
    assert_eq!(status.code(), Some(3), "strict mode must escalate warnings");
}

#[test]
fn gaussian_moment_pins_match_reference_oracle() {
    let pins: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden/quadrature_pins.json"),
        )
        .expect("golden quadrature pins"),
    )
    .expect("pin JSON");

    // Unit-variance Gaussian activation moments, quadrature vs pinned values.
    // 200 nodes matches the pin generator; sech-type integrands have poles on
    // the imaginary axis, so fewer nodes leave ~1e-11 truncation residue.
    let q = MomentMethod::Quadrature { nodes: 200 };
    for (name, act) in [
        ("tanh", Activation::Tanh),
        ("identity", Activation::Identity),
        ("erf", Activation::Erf),
    ] {
        let block = &pins["gaussian_activation_moments"][name];
        let checks: [(&str, Box<dyn Fn(f64) -> f64 + Sync>); 6] = [
            ("E_sigma_prime", Box::new(move |g| act.sigma_prime(g))),
            ("E_sigma_prime_G2", Box::new(move |g| act.sigma_prime(g) * g * g)),
            ("E_sigma_prime_sq", Box::new(move |g| act.sigma_prime(g).powi(2))),
            ("E_sigma_prime_sq_G2", Box::new(move |g| act.sigma_prime(g).powi(2) * g * g)),
            ("E_sigma_sq", Box::new(move |g| act.sigma(g).powi(2))),
            ("E_sigma_G", Box::new(move |g| act.sigma(g) * g)),
        ];
        for (key, f) in checks {
            let pin = block[key].as_f64().unwrap_or_else(|| panic!("missing pin {name}/{key}"));
            let got = gaussian_moment(f, 1.0, q).expect("quadrature").value;
            assert!(
                (got - pin).abs() <= 1e-12 * pin.abs().max(1.0),
                "{name}/{key}: quadrature {got:.15e} vs pinned {pin:.15e}"
            );
        }
    }

    // Injected-noise variance pins.
    for (key, t) in [("0.01", 0.01), ("0.1", 0.1), ("1", 1.0)] {
        let pin = pins["noise_variance_delta"][key].as_f64().expect("delta pin");
        let got = forward_params(t, &SigmaSpec::Isotropic(1.0), 8).unwrap().delta_var;
        assert!(
            (got - pin).abs() <= 1e-15 * pin,
            "delta({t}): {got:.17e} vs pinned {pin:.17e}"
        );
    }
}

#[test]
fn teacher_constant_estimates_match_pinned_quadrature() {
    let pins: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden/quadrature_pins.json"),
        )
        .expect("golden quadrature pins"),
    )
    .expect("pin JSON");
    let table = pins["teacher_constants"].as_object().expect("constants table");

    for (key, block) in table {
        let act = match block["activation"].as_str().unwrap() {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            "erf" => Activation::Erf,
            other => panic!("unknown pinned activation {other}"),
        };
        let t_prime = block["t_prime"].as_f64().unwrap();
        let config = ExperimentConfig {
            d: 16,
            psi_p: 2.0,
            psi_n: 1.0,
            t_prime,
            activation: act,
            mc_constants: 200_000,
            seed: 21,
            ..ExperimentConfig::default()
        };
        let tc = estimate_teacher_constants(&config).expect("teacher constants");
        // Monte Carlo estimates against the oracle's deterministic quadrature:
        // 5 standard errors, with an absolute floor for analytically-zero
        // components. The floor is 1e-7 because the pins themselves carry the
        // generator's variance-cancellation roundoff (sqrt of ~1e-16) on
        // quantities whose true value is 0, e.g. v_t under identity.
        let cases = [
            ("a_t", tc.a_t, tc.a_t_stderr),
            ("v_t", tc.v_t, tc.v_t_stderr),
            ("b_t", tc.b_t, tc.b_t_stderr),
            ("s_t2", tc.s_t2, tc.s_t2_stderr),
            ("mu1", tc.mu1, tc.mu1_stderr),
        ];
        for (name, got, se) in cases {
            let pin = block[name].as_f64().unwrap_or_else(|| panic!("missing pin {key}/{name}"));
            let tol = (5.0 * se).max(1e-7);
            assert!(
                (got - pin).abs() <= tol,
                "{key}/{name}: MC {got:.8e} vs pinned quadrature {pin:.8e} \
                 (|diff| {:.2e} > tol {tol:.2e})",
                (got - pin).abs()
            );
        }
    }
}
