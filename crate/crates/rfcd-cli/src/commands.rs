//! Subcommand implementations: pipeline assembly, artifact emission, and
//! the Monte Carlo validation drive.

use crate::{B0Arg, TargetArg};
use ndarray::{Array1, Array2};
use rand::Rng;
use rfcd::config::BetaConvention;
use rfcd::diagnostics::{
    eigendecompose, mode_basis, mode_diagnostics, ridge_sweep as sweep_ridge, share_mem_plus,
    spectral_density, ModeDiagnostics,
};
use rfcd::error::{Error, Result};
use rfcd::features::{make_random_features, RandomFeatures};
use rfcd::flow::{
    beta_shift_for, cd_coefficients, estimate_flow_constants, BetaShift, CdCoefficients,
    FlowConstants,
};
use rfcd::operators::{
    assemble_u_cd, build_a, cd_spectrum_structured, quadratic_loss, quadratic_loss_from_energies,
    student_flow_init, student_gradient_flow,
};
use rfcd::oracle::{
    compare_spectra, empirical_a1_a0_from_law, empirical_u_cd, default_displacement_pair,
    sample_increment, validate_increment_decomposition, PairLaw,
};
use rfcd::report::{self, DynamicsRow, PsiSweepRow, RunManifest};
use rfcd::rng::{purpose, substream};
use rfcd::teacher::{
    build_teacher_curvature, estimate_teacher_constants, trace_cross_check, TeacherConstants,
    TeacherCurvature, TeacherScoreMap,
};
use rfcd::{Activation, ExperimentConfig};
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

pub struct Ctx {
    pub config: ExperimentConfig,
    out: PathBuf,
    strict: bool,
    manifest: RunManifest,
    warnings: Vec<String>,
    started: Instant,
}

impl Ctx {
    pub fn new(
        config: ExperimentConfig,
        out: PathBuf,
        strict: bool,
        threads: usize,
        invocation: Vec<String>,
    ) -> Result<Ctx> {
        std::fs::create_dir_all(&out)?;
        let manifest = RunManifest::new(invocation, config.clone(), threads);
        Ok(Ctx { config, out, strict, manifest, warnings: Vec::new(), started: Instant::now() })
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        report::write_text_atomic(&self.out.join(name), text)?;
        self.manifest.add_output(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        report::write_json_atomic(&self.out.join(name), value)?;
        self.manifest.add_output(name);
        Ok(())
    }

    fn warn(&mut self, msg: impl Into<String>) {
        let m = msg.into();
        eprintln!("warning: {m}");
        self.warnings.push(m);
    }

    fn absorb_constant_warnings(&mut self, constants: &TeacherConstants) {
        for w in constants.warnings.clone() {
            self.warn(w);
        }
        for (name, value, stderr) in [
            ("a_t", constants.a_t, constants.a_t_stderr),
            ("b_t", constants.b_t, constants.b_t_stderr),
            ("v_t", constants.v_t, constants.v_t_stderr),
            ("s_t2", constants.s_t2, constants.s_t2_stderr),
            ("mu1", constants.mu1, constants.mu1_stderr),
        ] {
            if stderr > 0.01 * value.abs() && stderr > 0.0 {
                self.warn(format!(
                    "teacher constant {name} = {value:.6e} has stderr {stderr:.2e} above 1% \
                     (raise --mc-constants)"
                ));
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        if !self.warnings.is_empty() {
            self.manifest.record("warnings", &self.warnings)?;
        }
        self.manifest.add_output("manifest.json");
        self.manifest.save(&self.out)?;
        if self.strict && !self.warnings.is_empty() {
            return Err(Error::numerical(format!(
                "strict mode: {} warning(s), first: {}",
                self.warnings.len(),
                self.warnings[0]
            )));
        }
        Ok(())
    }
}

pub struct TeacherBundle {
    pub features: Arc<RandomFeatures>,
    pub constants: TeacherConstants,
    pub curvature: Arc<TeacherCurvature>,
    pub teacher: TeacherScoreMap,
}

fn build_teacher_bundle(config: &ExperimentConfig) -> Result<TeacherBundle> {
    let features = Arc::new(make_random_features(config)?);
    let constants = estimate_teacher_constants(config)?;
    let curvature = Arc::new(build_teacher_curvature(&features, &constants, config)?);
    let teacher = TeacherScoreMap::new(features.clone(), curvature.clone(), config)?;
    Ok(TeacherBundle { features, constants, curvature, teacher })
}

pub struct FlowBundle {
    pub flow: FlowConstants,
    /// Coefficients carrying β under the configured convention.
    pub coeffs: CdCoefficients,
    pub beta_theorem: BetaShift,
    pub beta_pf: BetaShift,
}

fn build_flow_bundle(bundle: &TeacherBundle, config: &ExperimentConfig) -> Result<FlowBundle> {
    let flow = estimate_flow_constants(&bundle.teacher, config)?;
    let base = cd_coefficients(&flow, config.activation, config)?;
    let beta_theorem = beta_shift_for(
        BetaConvention::Theorem,
        &base,
        &bundle.curvature,
        &bundle.features,
        config,
    )?;
    let beta_pf = beta_shift_for(
        BetaConvention::PfDrift,
        &base,
        &bundle.curvature,
        &bundle.features,
        config,
    )?;
    let value = match config.beta_convention {
        BetaConvention::Theorem => beta_theorem.value,
        BetaConvention::PfDrift => beta_pf.value,
    };
    Ok(FlowBundle { flow, coeffs: base.with_beta(value), beta_theorem, beta_pf })
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn frac_gen_alpha_pos(diag: &ModeDiagnostics) -> f64 {
    if diag.gen.is_empty() {
        return 0.0;
    }
    let pos = diag.gen.iter().filter(|&&i| diag.alpha[i] > 0.0).count();
    pos as f64 / diag.gen.len() as f64
}

fn require_gen_modes(diag: &ModeDiagnostics, config: &ExperimentConfig) -> Result<()> {
    if diag.gen.is_empty() {
        return Err(Error::validation(format!(
            "λ_th = {} leaves no Gen modes (top eigenvalue {:.6e})",
            config.lambda_th,
            diag.lambda_u[diag.lambda_u.len() - 1]
        )));
    }
    Ok(())
}

pub fn constants(mut ctx: Ctx) -> Result<()> {
    let config = ctx.config.clone();
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    let flowb = build_flow_bundle(&bundle, &config)?;
    if flowb.beta_theorem.hutchinson {
        ctx.warn("Tr(U⁻¹S) estimated stochastically (p above the exact-solve cap)");
    }
    for (name, value, stderr) in [
        ("eta", flowb.flow.eta, flowb.flow.eta_stderr),
        ("upsilon", flowb.flow.upsilon, flowb.flow.upsilon_stderr),
        ("kappa2", flowb.flow.kappa2, flowb.flow.kappa2_stderr),
    ] {
        if stderr > 0.01 * value.abs() && stderr > 0.0 {
            ctx.warn(format!(
                "flow moment {name} = {value:.6e} has stderr {stderr:.2e} above 1% \
                 (raise --mc-flow)"
            ));
        }
    }
    let (trace_over_p, feature_second_moment, trace_rel_gap) =
        trace_cross_check(&bundle.curvature, &config)?;

    #[derive(Serialize)]
    struct ConstantsDoc<'a> {
        teacher: &'a TeacherConstants,
        flow: &'a FlowConstants,
        coefficients: &'a CdCoefficients,
        beta_theorem: &'a BetaShift,
        beta_pf_drift: &'a BetaShift,
        selected_convention: BetaConvention,
        trace_over_p: f64,
        feature_second_moment: f64,
        trace_rel_gap: f64,
    }
    ctx.write_json(
        "constants.json",
        &ConstantsDoc {
            teacher: &bundle.constants,
            flow: &flowb.flow,
            coefficients: &flowb.coeffs,
            beta_theorem: &flowb.beta_theorem,
            beta_pf_drift: &flowb.beta_pf,
            selected_convention: config.beta_convention,
            trace_over_p,
            feature_second_moment,
            trace_rel_gap,
        },
    )?;
    for (key, v) in [
        ("mu1", bundle.constants.mu1),
        ("b_t", bundle.constants.b_t),
        ("eta", flowb.flow.eta),
        ("kappa2", flowb.flow.kappa2),
        ("a1", flowb.coeffs.a1),
        ("a0", flowb.coeffs.a0),
        ("beta_theorem", flowb.beta_theorem.value),
        ("beta_pf_drift", flowb.beta_pf.value),
        ("beta", flowb.coeffs.beta),
    ] {
        ctx.manifest.record(key, v)?;
    }
    println!(
        "teacher: a_t={:.6e} b_t={:.6e} v_t={:.6e} s_t2={:.6e} mu1={:.6e}",
        bundle.constants.a_t,
        bundle.constants.b_t,
        bundle.constants.v_t,
        bundle.constants.s_t2,
        bundle.constants.mu1
    );
    println!(
        "flow: eta={:.6e} upsilon={:.6e} kappa2={:.6e}",
        flowb.flow.eta, flowb.flow.upsilon, flowb.flow.kappa2
    );
    println!(
        "step: a1={:.6e} a0={:.6e} beta[theorem]={:.6e} beta[pf-drift]={:.6e}",
        flowb.coeffs.a1, flowb.coeffs.a0, flowb.beta_theorem.value, flowb.beta_pf.value
    );
    ctx.finish()
}

pub fn spectrum(mut ctx: Ctx, target: TargetArg, bins: Option<usize>) -> Result<()> {
    let config = ctx.config.clone();
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    match target {
        TargetArg::U => {
            let eig = eigendecompose(&bundle.curvature.u)?;
            let lams = eig.lambdas.to_vec();
            let rep = spectral_density(&lams, bins, config.atom_eps, true)?;
            ctx.write_text("spectrum_u.csv", &report::spectrum_csv(&rep))?;

            #[derive(Serialize)]
            struct UAtoms<'a> {
                target: &'a str,
                atoms: &'a [rfcd::diagnostics::SpectralAtom],
                total: usize,
                discarded: usize,
                accounted_fraction: f64,
                lambda_min: f64,
                lambda_max: f64,
            }
            ctx.write_json(
                "atoms.json",
                &UAtoms {
                    target: "u",
                    atoms: &rep.atoms,
                    total: rep.total,
                    discarded: rep.discarded,
                    accounted_fraction: rep.accounted_fraction(),
                    lambda_min: lams[0],
                    lambda_max: lams[lams.len() - 1],
                },
            )?;
            ctx.manifest.record("lambda_min", lams[0])?;
            ctx.manifest.record("lambda_max", lams[lams.len() - 1])?;
            ctx.manifest.record("atom_count", rep.atoms.len())?;
            println!(
                "U spectrum: λ ∈ [{:.6e}, {:.6e}], {} atom(s), {} binned, {} discarded",
                lams[0],
                lams[lams.len() - 1],
                rep.atoms.len(),
                rep.binned,
                rep.discarded
            );
        }
        TargetArg::Ucd => {
            let flowb = build_flow_bundle(&bundle, &config)?;
            let structured = cd_spectrum_structured(
                &bundle.features,
                &bundle.curvature,
                &flowb.coeffs,
                bundle.constants.mu1,
                &config,
                0.0,
            )?;
            let all = structured.full_spectrum();
            let rep = spectral_density(&all, bins, config.atom_eps, false)?;
            ctx.write_text("spectrum_ucd.csv", &report::spectrum_csv(&rep))?;

            #[derive(Serialize)]
            struct UcdAtoms<'a> {
                target: &'a str,
                beta: f64,
                beta_theorem: f64,
                beta_pf_drift: f64,
                convention: BetaConvention,
                atom_multiplicity: usize,
                bulk_min: f64,
                bulk_max: f64,
                detected_atoms: &'a [rfcd::diagnostics::SpectralAtom],
            }
            ctx.write_json(
                "atoms.json",
                &UcdAtoms {
                    target: "ucd",
                    beta: structured.beta,
                    beta_theorem: flowb.beta_theorem.value,
                    beta_pf_drift: flowb.beta_pf.value,
                    convention: config.beta_convention,
                    atom_multiplicity: structured.atom_multiplicity,
                    bulk_min: structured.bulk[0],
                    bulk_max: structured.bulk[structured.bulk.len() - 1],
                    detected_atoms: &rep.atoms,
                },
            )?;
            ctx.manifest.record("beta", structured.beta)?;
            ctx.manifest.record("atom_multiplicity", structured.atom_multiplicity)?;
            ctx.manifest.record("bulk_min", structured.bulk[0])?;
            ctx.manifest.record("bulk_max", structured.bulk[structured.bulk.len() - 1])?;
            println!(
                "U_cd spectrum: atom at β={:.6e} ×{}, bulk ∈ [{:.6e}, {:.6e}]",
                structured.beta,
                structured.atom_multiplicity,
                structured.bulk[0],
                structured.bulk[structured.bulk.len() - 1]
            );
        }
    }
    ctx.finish()
}

pub fn modes(mut ctx: Ctx, mu1_zero: bool) -> Result<()> {
    let config = ctx.config.clone();
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    let eig = eigendecompose(&bundle.curvature.u)?;
    let mu1 = if mu1_zero { 0.0 } else { bundle.constants.mu1 };
    let diag = mode_diagnostics(&eig, &bundle.features, mu1, config.ridge_gamma, config.lambda_th)?;
    require_gen_modes(&diag, &config)?;
    let share = share_mem_plus(&diag);
    let frac_pos = frac_gen_alpha_pos(&diag);
    let a_mem: Vec<f64> = diag.mem.iter().map(|&i| diag.a[i]).collect();
    let a_gen: Vec<f64> = diag.gen.iter().map(|&i| diag.a[i]).collect();
    let frac_gen: Vec<f64> = diag.gen.iter().map(|&i| diag.frac_bmem[i]).collect();
    ctx.write_text("modes.csv", &report::modes_csv(&diag))?;

    #[derive(Serialize)]
    struct ModesSummary {
        share_mem_plus: Option<f64>,
        frac_gen_alpha_pos: f64,
        mem_count: usize,
        gen_count: usize,
        median_a_mem: Option<f64>,
        median_a_gen: Option<f64>,
        median_frac_bmem_gen: Option<f64>,
        flagged_zero_count: usize,
        mu1_used: f64,
        ridge: f64,
        lambda_th: f64,
    }
    let summary = ModesSummary {
        share_mem_plus: share,
        frac_gen_alpha_pos: frac_pos,
        mem_count: diag.mem.len(),
        gen_count: diag.gen.len(),
        median_a_mem: median(&a_mem),
        median_a_gen: median(&a_gen),
        median_frac_bmem_gen: median(&frac_gen),
        flagged_zero_count: diag.flagged_zero.iter().filter(|&&f| f).count(),
        mu1_used: mu1,
        ridge: config.ridge_gamma,
        lambda_th: config.lambda_th,
    };
    ctx.write_json("summary.json", &summary)?;
    ctx.manifest.record("share_mem_plus", share)?;
    ctx.manifest.record("frac_gen_alpha_pos", frac_pos)?;
    ctx.manifest.record("mem_count", diag.mem.len())?;
    ctx.manifest.record("gen_count", diag.gen.len())?;
    println!(
        "modes: {} Mem / {} Gen, Share⁺_mem = {}, fracGenAlphaPos = {:.4}",
        diag.mem.len(),
        diag.gen.len(),
        share.map_or("undefined".to_string(), |v| format!("{v:.4e}")),
        frac_pos
    );
    ctx.finish()
}

pub fn ridge_sweep(mut ctx: Ctx, grid: Vec<f64>, tau: f64) -> Result<()> {
    let config = ctx.config.clone();
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    let eig = eigendecompose(&bundle.curvature.u)?;
    let basis = mode_basis(&eig, &bundle.features)?;
    let rep = sweep_ridge(&basis, bundle.constants.mu1, &grid, tau, config.lambda_th)?;
    if !rep.monotone {
        ctx.warn("median Gen fracBmem is not monotone non-increasing along the grid");
    }
    ctx.write_text("ridge_sweep.csv", &report::ridge_sweep_csv(&rep))?;
    ctx.manifest.record("gamma_star", rep.gamma_star)?;
    ctx.manifest.record("tau", rep.tau)?;
    ctx.manifest.record("monotone", rep.monotone)?;
    ctx.manifest.record("medians", &rep.medians)?;
    println!(
        "ridge sweep: γ* = {} at τ = {} (medians {:?})",
        rep.gamma_star.map_or("none".to_string(), |g| format!("{g}")),
        tau,
        rep.medians.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    ctx.finish()
}

pub fn psi_sweep(mut ctx: Ctx, psi_n_grid: Vec<f64>) -> Result<()> {
    if psi_n_grid.is_empty() {
        return Err(Error::validation("psi_n grid must be non-empty"));
    }
    let config = ctx.config.clone();
    // Features and scalar teacher constants depend on (seed, d, p) only, so
    // they are shared across the sweep; the curvature depends on n.
    let features = Arc::new(make_random_features(&config)?);
    let constants = estimate_teacher_constants(&config)?;
    ctx.absorb_constant_warnings(&constants);
    let mut rows = Vec::with_capacity(psi_n_grid.len());
    for &psi_n in &psi_n_grid {
        let cfg_i = ExperimentConfig { psi_n, ..config.clone() };
        cfg_i.validate()?;
        let curvature = Arc::new(build_teacher_curvature(&features, &constants, &cfg_i)?);
        let eig = eigendecompose(&curvature.u)?;
        let diag =
            mode_diagnostics(&eig, &features, constants.mu1, cfg_i.ridge_gamma, cfg_i.lambda_th)?;
        require_gen_modes(&diag, &cfg_i)?;
        let row = PsiSweepRow {
            psi_n,
            frac_gen_alpha_pos: frac_gen_alpha_pos(&diag),
            share_mem_plus: share_mem_plus(&diag),
        };
        println!(
            "psi_n = {psi_n}: fracGenAlphaPos = {:.4}, Share⁺_mem = {}",
            row.frac_gen_alpha_pos,
            row.share_mem_plus.map_or("undefined".to_string(), |v| format!("{v:.4e}"))
        );
        rows.push(row);
    }
    ctx.write_text("psi_sweep.csv", &report::psi_sweep_csv(&rows))?;
    ctx.manifest.record("rows", &rows)?;
    ctx.finish()
}

pub fn dynamics(mut ctx: Ctx, taus: Vec<f64>, b0: B0Arg) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::validation("need at least one flow time"));
    }
    let config = ctx.config.clone();
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    let flowb = build_flow_bundle(&bundle, &config)?;
    let a = build_a(&bundle.features, &bundle.curvature, bundle.constants.mu1, 0.0)?;
    let ops = assemble_u_cd(a, &flowb.coeffs, &config, 0.0)?;
    let b0_layer = match b0 {
        B0Arg::Teacher => bundle.teacher.top_layer()?,
        B0Arg::Random => {
            let p = bundle.features.p();
            let mut stream = substream(config.seed, purpose::DYNAMICS_B0, 0);
            let mut buf = Vec::with_capacity(config.d * p);
            for _ in 0..config.d * p {
                buf.push(stream.sample::<f64, _>(rand_distr::StandardNormal));
            }
            Array2::from_shape_vec((config.d, p), buf)
                .map_err(|e| Error::validation(format!("initial layer shape: {e}")))?
        }
    };
    let state0 = student_flow_init(b0_layer, &ops)?;
    let lambdas = ops.eig()?.lambdas.clone();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let st = student_gradient_flow(&state0, &ops, tau)?;
        let direct = quadratic_loss(&st.b_tau, &ops.u_cd);
        let via_eig = quadratic_loss_from_energies(&st, &lambdas);
        let scale = direct.abs().max(via_eig.abs()).max(1e-300);
        if (direct - via_eig).abs() > 1e-8 * scale {
            return Err(Error::numerical(format!(
                "loss identity violated at τ = {tau}: direct {direct:.12e} vs eigen {via_eig:.12e}"
            )));
        }
        rows.push(DynamicsRow {
            tau,
            loss_direct: direct,
            loss_eigen_sum: via_eig,
            total_energy: st.mode_energies.sum(),
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].loss_direct <= w[0].loss_direct + 1e-12 * w[0].loss_direct.abs().max(1.0));
    if !monotone {
        ctx.warn("loss is not monotone non-increasing over the requested flow times");
    }
    ctx.write_text("dynamics.csv", &report::dynamics_csv(&rows))?;
    ctx.manifest.record("loss_initial", sorted[0].loss_direct)?;
    ctx.manifest.record("loss_final", sorted[sorted.len() - 1].loss_direct)?;
    ctx.manifest.record("monotone", monotone)?;
    println!(
        "dynamics: L({}) = {:.6e} → L({}) = {:.6e}",
        sorted[0].tau,
        sorted[0].loss_direct,
        sorted[sorted.len() - 1].tau,
        sorted[sorted.len() - 1].loss_direct
    );
    ctx.finish()
}

pub struct ValidateOpts {
    pub allow_large: bool,
    pub reps: usize,
    pub decomposition_samples: usize,
    pub pair_samples: usize,
    pub top_k: usize,
    pub scale_overridden: bool,
}

pub fn validate(mut ctx: Ctx, opts: ValidateOpts) -> Result<()> {
    let mut config = ctx.config.clone();
    if !opts.scale_overridden {
        config.d = 24;
        config.psi_p = 8.0;
        config.psi_n = 4.0;
        println!("no scale given; validating at the small oracle scale d=24, ψ_p=8, ψ_n=4");
        ctx.manifest.config = config.clone();
    }
    config.validate()?;
    let bundle = build_teacher_bundle(&config)?;
    ctx.absorb_constant_warnings(&bundle.constants);
    let flowb = build_flow_bundle(&bundle, &config)?;

    // One-step displacement concentration: E‖δx‖²/d against Δt²·κ².
    let increment = {
        let stds = config.sigma_spec.std_devs(config.d);
        let mut stream = substream(config.seed, purpose::ORACLE_INCREMENTS, u64::MAX);
        let blocks = 32;
        let per = 10_000 / blocks;
        let mut block_means = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let mut acc = 0.0;
            for _ in 0..per {
                let x_nu = Array1::from_iter(
                    stds.iter().map(|s| s * stream.sample::<f64, _>(rand_distr::StandardNormal)),
                );
                let inc = sample_increment(&x_nu, &bundle.teacher, &config, &mut stream)?;
                acc += inc.delta_x.dot(&inc.delta_x) / config.d as f64;
            }
            block_means.push(acc / per as f64);
        }
        let mean = block_means.iter().sum::<f64>() / blocks as f64;
        let var = block_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
            / (blocks as f64 - 1.0);
        let stderr = (var / blocks as f64).sqrt();
        let dt2 = config.dt_step * config.dt_step;
        let predicted = dt2 * flowb.flow.kappa2;
        let combined = (stderr * stderr + dt2 * dt2 * flowb.flow.kappa2_stderr.powi(2)).sqrt();
        let pass = (mean - predicted).abs() <= 4.0 * combined.max(f64::MIN_POSITIVE);

        #[derive(Serialize)]
        struct IncrementCheck {
            mean_sq_displacement_per_dim: f64,
            stderr: f64,
            predicted: f64,
            combined_stderr: f64,
            pass: bool,
        }
        IncrementCheck {
            mean_sq_displacement_per_dim: mean,
            stderr,
            predicted,
            combined_stderr: combined,
            pass,
        }
    };

    // Exact second-moment decomposition over the feature-row ensemble.
    let (x, dx) = default_displacement_pair(config.d, config.seed);
    let decomp = validate_increment_decomposition(
        &x,
        &dx,
        &bundle.features,
        config.activation,
        opts.decomposition_samples,
        config.seed,
        opts.allow_large,
    )?;
    let decomposition_pass = match config.activation {
        Activation::Identity => decomp.frob_rel_error <= 10.0 * decomp.noise_floor,
        _ => decomp.frob_rel_error <= 5e-2,
    };

    // Empirical (a1, a0) from the matched pair law vs quadrature. The closed
    // forms are the Δt → 0 limits and carry no Δt themselves, so the pair law
    // is sampled at a step small enough that the O(Δt·|γ|) finite-step bias
    // of the empirical ratios sits below the Monte Carlo noise.
    let pair_dt = config.dt_step.min(1e-5);
    let law = PairLaw::from_flow(flowb.flow.gamma_flow, flowb.flow.kappa2, pair_dt);
    let pair_est =
        empirical_a1_a0_from_law(&law, config.activation, opts.pair_samples, config.seed)?;
    let dist = |emp: f64, closed: f64, se: f64| {
        if se == 0.0 {
            if emp == closed {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (emp - closed).abs() / se
        }
    };
    let a1_se_distance = dist(pair_est.a1, flowb.coeffs.a1, pair_est.a1_stderr);
    let a0_se_distance = dist(pair_est.a0, flowb.coeffs.a0, pair_est.a0_stderr);
    let pair_pass = a1_se_distance <= 4.0 && a0_se_distance <= 4.0;

    // Empirical curvature vs the closed form, under both β conventions.
    let emp = empirical_u_cd(&bundle.teacher, &config, opts.reps, opts.allow_large)?;
    let a_ch = build_a(&bundle.features, &bundle.curvature, bundle.constants.mu1, 0.0)?;
    let mut coeffs_thm = flowb.coeffs;
    coeffs_thm.convention = BetaConvention::Theorem;
    coeffs_thm.beta = flowb.beta_theorem.value;
    let mut coeffs_pf = flowb.coeffs;
    coeffs_pf.convention = BetaConvention::PfDrift;
    coeffs_pf.beta = flowb.beta_pf.value;
    let ops_thm = assemble_u_cd(a_ch.clone(), &coeffs_thm, &config, 0.0)?;
    let ops_pf = assemble_u_cd(a_ch, &coeffs_pf, &config, 0.0)?;
    let cmp_thm = compare_spectra(
        &ops_thm,
        &emp,
        opts.top_k,
        config.d,
        flowb.beta_theorem.value,
        flowb.beta_pf.value,
    )?;
    let cmp_pf = compare_spectra(
        &ops_pf,
        &emp,
        opts.top_k,
        config.d,
        flowb.beta_theorem.value,
        flowb.beta_pf.value,
    )?;
    if !cmp_pf.psd_ok {
        return Err(Error::numerical(format!(
            "empirical curvature is not PSD: λ_min = {:.6e}, λ_max = {:.6e}",
            cmp_pf.empirical_min, cmp_pf.empirical_max
        )));
    }

    let doc = serde_json::json!({
        "d": config.d,
        "psi_p": config.psi_p,
        "psi_n": config.psi_n,
        "activation": config.activation,
        "increment": increment,
        "decomposition": decomp,
        "decomposition_pass": decomposition_pass,
        "pair_closed_a1": flowb.coeffs.a1,
        "pair_closed_a0": flowb.coeffs.a0,
        "pair_empirical": pair_est,
        "a1_se_distance": a1_se_distance,
        "a0_se_distance": a0_se_distance,
        "pair_pass": pair_pass,
        "spectrum_theorem": cmp_thm,
        "spectrum_pf_drift": cmp_pf,
        "selected_convention": cmp_pf.selected_convention,
    });
    ctx.write_json("validate.json", &doc)?;
    ctx.manifest.record("decomposition_error", decomp.frob_rel_error)?;
    ctx.manifest.record("decomposition_pass", decomposition_pass)?;
    ctx.manifest.record("pair_pass", pair_pass)?;
    ctx.manifest.record("increment_pass", increment.pass)?;
    ctx.manifest.record("selected_convention", cmp_pf.selected_convention)?;
    ctx.manifest.record("bottom_cluster_mean", cmp_pf.bottom_cluster_mean)?;
    println!(
        "increment: E‖δx‖²/d = {:.6e} vs {:.6e} predicted ({})",
        increment.mean_sq_displacement_per_dim,
        increment.predicted,
        if increment.pass { "pass" } else { "FAIL" }
    );
    println!(
        "decomposition: rel error {:.4e} (floor {:.4e}) ({})",
        decomp.frob_rel_error,
        decomp.noise_floor,
        if decomposition_pass { "pass" } else { "FAIL" }
    );
    println!(
        "pair coefficients: a1 off by {:.2} se, a0 by {:.2} se ({})",
        a1_se_distance,
        a0_se_distance,
        if pair_pass { "pass" } else { "FAIL" }
    );
    println!(
        "spectrum: bottom cluster {:.6e}; β[thm] ratio {:.3e}, β[pf] ratio {:.3e} → {:?}",
        cmp_pf.bottom_cluster_mean,
        cmp_pf.bottom_to_beta_theorem,
        cmp_pf.bottom_to_beta_pf_drift,
        cmp_pf.selected_convention
    );
    if !(decomposition_pass && pair_pass && increment.pass) {
        ctx.warn("one or more validation checks failed; see validate.json");
    }
    ctx.finish()
}
