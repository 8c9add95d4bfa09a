//! A fast subset of the invariant checks, runnable from the binary.

use nsedit_core::init::{gaussian_matrix, seeded_rng};
use nsedit_core::linalg::{
    nullspace_projector, regularized_correlation, regularized_correlation_with, sym_eig, whiten_columns, Matrix,
    Ridge, SymmetricMatrix, ThresholdPolicy,
};
use nsedit_core::regression::{giou, BoxLTRB};
use nsedit_core::Tensor;
use nsedit_harness::tracker::{ForcedProjector, SemanticInput};
use nsedit_harness::{gen_scene, run_tracker, Mode, PreparedSequence, StudyConfig, TrackerConfig};

use crate::error::{CliError, Result};

#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match body() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn projector_shape(seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (i, c) in [4usize, 8, 16, 32].into_iter().enumerate() {
        let mut rng = seeded_rng(seed.wrapping_add(i as u64));
        let z = whiten_columns(&gaussian_matrix::<f64>(c, 2 * c, 1.0, &mut rng))?;
        let m = regularized_correlation_with(&z, Ridge::Relative(1e-4))?;
        let p = nullspace_projector(&m, ThresholdPolicy::relative(0.2))?;
        let idem = p.idempotence_error();
        let trace_err = (p.matrix().trace() - p.retained_rank() as f64).abs();
        ok &= p.matrix().asymmetry() == 0.0 && idem <= 1e-6 && trace_err <= 1e-6;
        worst = worst.max(idem).max(trace_err);
    }
    Ok((ok, format!("worst idempotence/trace error {worst:.2e}")))
}

fn exact_null_space(seed: u64) -> Result<(bool, String)> {
    let (c, r) = (12, 4);
    let mut rng = seeded_rng(seed);
    let b = gaussian_matrix::<f64>(c, r, 1.0, &mut rng);
    let k = gaussian_matrix::<f64>(r, 3 * c, 1.0, &mut rng);
    let z = whiten_columns(&b.matmul(&k)?)?;
    let m = regularized_correlation(&z, 0.0)?;
    let p = nullspace_projector(&m, ThresholdPolicy::default())?;
    let ratio = p.matrix().matmul(z.matrix())?.frobenius_norm() / z.matrix().frobenius_norm();
    Ok((
        ratio <= 1e-8 && p.retained_rank() == c - r,
        format!("rank {} of {c}, |PZ|/|Z| = {ratio:.2e}", p.retained_rank()),
    ))
}

fn eigen_reconstruction(seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (i, n) in [3usize, 16, 48].into_iter().enumerate() {
        let a = gaussian_matrix::<f64>(n, n, 1.0, &mut seeded_rng(seed.wrapping_add(i as u64)));
        let sym = a.add(&a.transpose())?;
        let basis = sym_eig(&SymmetricMatrix::new(sym.clone(), 0.0)?)?;
        let rel = basis.reconstruct().sub(&sym)?.frobenius_norm() / sym.frobenius_norm();
        worst = worst.max(rel);
    }
    Ok((worst <= 1e-7, format!("worst relative reconstruction error {worst:.2e}")))
}

fn giou_reference() -> Result<(bool, String)> {
    let a = BoxLTRB::<f64>::new(0.0, 0.0, 2.0, 2.0)?;
    let b = BoxLTRB::new(1.0, 1.0, 3.0, 3.0)?;
    let g = giou(&a, &b)?;
    let want = 1.0 / 7.0 - 2.0 / 9.0;
    Ok(((g - want).abs() <= 1e-9 && giou(&a, &a)? == 1.0, format!("giou {g:.12}")))
}

fn gted_round_trip(seed: u64) -> Result<(bool, String)> {
    let m: Matrix<f64> = gaussian_matrix(3, 5, 1.0, &mut seeded_rng(seed));
    let t = Tensor::new(vec![3, 5], m.data().iter().map(|&v| v as f32 as f64).collect())?;
    let bytes = t.to_bytes()?;
    let back = Tensor::<f64>::from_bytes(&bytes)?;
    Ok((back == t && bytes.len() == 7 + 4 * 2 + 4 * 15, format!("{} bytes", bytes.len())))
}

fn mode_collapse(seed: u64) -> Result<(bool, String)> {
    let mut cfg = StudyConfig::default();
    cfg.scene.frames = 20;
    let model = cfg.build_model()?;
    let frames = gen_scene(&cfg.scene.sample(seed)?)?;
    let seq = PreparedSequence::new(frames, &model)?;
    let rank0 = TrackerConfig {
        eps_rel: 0.0,
        eps_abs: f64::NEG_INFINITY,
        semantic_only_input: SemanticInput::Fused,
        ..TrackerConfig::default()
    };
    let edit = run_tracker(&seq, Mode::NullspaceEdit, &rank0, &model)?;
    let sem = run_tracker(&seq, Mode::SemanticOnly, &rank0, &model)?;
    let forced = TrackerConfig {
        force_projector: ForcedProjector::Identity,
        ..TrackerConfig::default()
    };
    let ident = run_tracker(&seq, Mode::NullspaceEdit, &forced, &model)?;
    let naive = run_tracker(&seq, Mode::NaiveFusion, &TrackerConfig::default(), &model)?;
    let a = edit.trajectory_bits() == sem.trajectory_bits();
    let b = ident.trajectory_bits() == naive.trajectory_bits();
    Ok((a && b, format!("rank-0 == semantic: {a}, P=I == naive: {b}")))
}

pub fn run_checks(seed: u64) -> Vec<Check> {
    vec![
        check("projector symmetric idempotent trace=rank", || projector_shape(seed)),
        check("exact null space", || exact_null_space(seed)),
        check("eigen reconstruction", || eigen_reconstruction(seed)),
        check("giou reference value", giou_reference),
        check("gted round trip", || gted_round_trip(seed)),
        check("mode collapse identities", || mode_collapse(seed)),
    ]
}

pub fn selftest(seed: u64) -> Result<()> {
    let checks = run_checks(seed);
    for c in &checks {
        println!("{} {:<42} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} selftest check(s) failed")));
    }
    Ok(())
}
