//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nsedit_core::editing::{build_edit_context, edit_and_localize, localize, ProjectorSource};
use nsedit_core::init::{gaussian_matrix, gaussian_vec, seeded_rng};
use nsedit_core::linalg::{
    nullspace_projector, regularized_correlation, regularized_correlation_with, sym_eig, whiten_columns, Matrix,
    Ridge, SymmetricMatrix, ThresholdPolicy,
};
use nsedit_core::regression::{giou, BoxLTRB};
use nsedit_core::{FeatureKind, FeatureMap, WeightRole, WeightVector};
use nsedit_harness::bench::bench_projector;
use nsedit_harness::tracker::{ForcedProjector, SemanticInput};
use nsedit_harness::{gen_scene, run_study, run_tracker, Mode, PreparedSequence, StudyConfig, TrackerConfig};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    ensure(secs < limit_s, format!("{detail}; {secs:.2}s (limit {limit_s}s)"))
}

const CHANNELS: [usize; 5] = [4, 8, 16, 32, 64];

fn projector_suite() -> Outcome {
    let t0 = Instant::now();
    let (mut worst_idem, mut worst_trace, mut asym) = (0.0f64, 0.0f64, 0usize);
    for set in 0..200u64 {
        let c = CHANNELS[set as usize % CHANNELS.len()];
        let mut rng = seeded_rng(1000 + set);
        let n = rng.gen_range(c / 2 + 1..=4 * c);
        let eps = rng.gen_range(1e-3..0.5);
        let z = whiten_columns(&gaussian_matrix::<f64>(c, n, 1.0, &mut rng)).map_err(fail)?;
        let m = regularized_correlation_with(&z, Ridge::Relative(1e-4)).map_err(fail)?;
        let p = nullspace_projector(&m, ThresholdPolicy::relative(eps)).map_err(fail)?;
        if p.matrix().asymmetry() != 0.0 {
            asym += 1;
        }
        worst_idem = worst_idem.max(p.idempotence_error());
        worst_trace = worst_trace.max((p.matrix().trace() - p.retained_rank() as f64).abs());
    }
    let detail = format!(
        "200 sets: {asym} asymmetric, max |P^2-P|_F {worst_idem:.2e}, max |tr P - rank| {worst_trace:.2e}"
    );
    let ok = asym == 0 && worst_idem <= 1e-6 && worst_trace <= 1e-6;
    ensure(ok, detail).and_then(|d| within(t0.elapsed(), 30.0, d))
}

/// `[c, h, w]` map whose columns are combinations of the columns of `basis`.
fn span_map(basis: &Matrix<f64>, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    let k = gaussian_matrix::<f64>(basis.cols(), h * w, 1.0, &mut seeded_rng(seed));
    let z = basis.matmul(&k).expect("shapes agree");
    FeatureMap::from_vec(FeatureKind::Semantic, [basis.rows(), h, w], z.data().to_vec()).expect("dims agree")
}

/// Keeps only eigenvalues at the numerical-rank floor, i.e. the exact kernel
/// of `Z Z^T`. The default 1e-2 cut would also take genuine but weak span
/// directions once `r` approaches `C`.
const KERNEL_POLICY: ThresholdPolicy = ThresholdPolicy {
    eps_rel: 1e-9,
    eps_abs: 1e-10,
};

fn exact_null_space() -> Outcome {
    let t0 = Instant::now();
    let (mut worst_pz, mut worst_score, mut worst_trace) = (0.0f64, 0.0f64, 0.0f64);
    for set in 0..100u64 {
        let mut rng = seeded_rng(2000 + set);
        let c = CHANNELS[set as usize % CHANNELS.len()].max(4);
        let r = rng.gen_range(1..c);
        let basis = gaussian_matrix::<f64>(c, r, 1.0, &mut rng);
        let (h, w) = (4, 4 + c / 4);
        let maps: Vec<FeatureMap<f64>> = (0..3).map(|_| span_map(&basis, h, w, rng.gen())).collect();
        let refs: Vec<&FeatureMap<f64>> = maps.iter().collect();

        let stacked = nsedit_core::editing::stack_columns(&refs).map_err(fail)?;
        let z = whiten_columns(&stacked).map_err(fail)?;
        let m = regularized_correlation(&z, 0.0).map_err(fail)?;
        let p = nullspace_projector(&m, KERNEL_POLICY).map_err(fail)?;
        worst_trace = worst_trace.max((p.matrix().trace() - (c - r) as f64).abs());
        let pz = p.matrix().matmul(z.matrix()).map_err(fail)?;
        worst_pz = worst_pz.max(pz.frobenius_norm() / z.matrix().frobenius_norm());

        let w_sem = WeightVector::new(gaussian_vec(c, 1.0, &mut rng), WeightRole::Semantic).map_err(fail)?;
        let delta = WeightVector::new(gaussian_vec(c, 1.0, &mut rng), WeightRole::Perturbation).map_err(fail)?;
        let ctx = build_edit_context(
            &refs,
            w_sem.clone(),
            delta,
            Ridge::Fixed(0.0),
            KERNEL_POLICY,
            ProjectorSource::ReferencesAndCurrent,
        )
        .map_err(fail)?;
        for map in &maps {
            let edited = edit_and_localize(&ctx, map).map_err(fail)?;
            let plain = localize(&w_sem, map).map_err(fail)?;
            let num: f64 = edited.data().iter().zip(plain.data()).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = plain.data().iter().map(|v| v * v).sum();
            worst_score = worst_score.max((num / den).sqrt());
        }
    }
    let detail = format!(
        "100 sets: max |PZ|/|Z| {worst_pz:.2e}, max |tr P - (C-r)| {worst_trace:.2e}, max score change {worst_score:.2e}"
    );
    let ok = worst_pz <= 1e-8 && worst_trace <= 1e-6 && worst_score <= 1e-6;
    ensure(ok, detail).and_then(|d| within(t0.elapsed(), 30.0, d))
}

fn symmetric(m: Matrix<f64>) -> Result<SymmetricMatrix<f64>, String> {
    SymmetricMatrix::new(m.symmetrized(), 0.0).map_err(fail)
}

fn eigensolver_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded_rng(3000);
    let mut worst_root = 0.0f64;
    for i in 0..1000 {
        if i % 2 == 0 {
            let (a, b, d) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let got = sym_eig(&symmetric(Matrix::from_rows(&[[a, b], [b, d]]).map_err(fail)?)?).map_err(fail)?;
            let want = oracles::eig2(a, b, d);
            for k in 0..2 {
                worst_root = worst_root.max((got.values()[k] - want[1 - k]).abs());
            }
        } else {
            let mut m = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in r..3 {
                    let v = rng.gen_range(-5.0..5.0);
                    m[r][c] = v;
                    m[c][r] = v;
                }
            }
            let got = sym_eig(&symmetric(Matrix::from_rows(&m).map_err(fail)?)?).map_err(fail)?;
            let want = oracles::eig3(m);
            for k in 0..3 {
                worst_root = worst_root.max((got.values()[k] - want[2 - k]).abs());
            }
        }
    }
    let mut worst_rec = 0.0f64;
    for (i, n) in (1..=64).step_by(3).chain([64]).enumerate() {
        let g = gaussian_matrix::<f64>(n, n, 1.0, &mut seeded_rng(3100 + i as u64));
        let m = symmetric(g)?;
        let e = sym_eig(&m).map_err(fail)?;
        let err = e.reconstruct().sub(m.matrix()).map_err(fail)?.frobenius_norm();
        worst_rec = worst_rec.max(err / m.matrix().frobenius_norm());
    }
    let detail = format!("1000 small matrices: max root error {worst_root:.2e}; C<=64: max reconstruction {worst_rec:.2e} |M|");
    ensure(worst_root <= 1e-9 && worst_rec <= 1e-7, detail).and_then(|d| within(t0.elapsed(), 60.0, d))
}

fn giou_checks() -> Outcome {
    let bx = |v: [f64; 4]| BoxLTRB::new(v[0], v[1], v[2], v[3]).map_err(fail);
    let a = bx([0.0, 0.0, 2.0, 2.0])?;
    let b = bx([1.0, 1.0, 3.0, 3.0])?;
    let reference = giou(&a, &b).map_err(fail)?;
    let ref_err = (reference - (1.0 / 7.0 - 2.0 / 9.0)).abs();
    let mut rng = seeded_rng(4000);
    let (mut identity, mut sym, mut scale, mut oracle) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let draw = |rng: &mut dyn rand::RngCore| {
            let (l, t) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            [l, t, l + rng.gen_range(0.1..8.0), t + rng.gen_range(0.1..8.0)]
        };
        let (p, q) = (draw(&mut rng), draw(&mut rng));
        let s = rng.gen_range(0.1..10.0);
        let (bp, bq) = (bx(p)?, bx(q)?);
        let g = giou(&bp, &bq).map_err(fail)?;
        identity = identity.max((giou(&bp, &bp).map_err(fail)? - 1.0).abs());
        sym = sym.max((g - giou(&bq, &bp).map_err(fail)?).abs());
        let scaled = giou(&bx(p.map(|v| v * s))?, &bx(q.map(|v| v * s))?).map_err(fail)?;
        scale = scale.max((g - scaled).abs());
        oracle = oracle.max((g - oracles::giou(p, q)).abs());
    }
    let detail = format!(
        "reference error {ref_err:.1e}; over 10^4 pairs: identity {identity:.1e}, symmetry {sym:.1e}, \
         scale {scale:.1e}, vs oracle {oracle:.1e}"
    );
    ensure(ref_err <= 1e-9 && identity <= 1e-12 && sym <= 1e-12 && scale <= 1e-9 && oracle <= 1e-9, detail)
}

fn mode_collapse() -> Outcome {
    let cfg = StudyConfig::default();
    let model = cfg.build_model().map_err(fail)?;
    let rank0 = TrackerConfig {
        eps_rel: 0.0,
        eps_abs: f64::NEG_INFINITY,
        semantic_only_input: SemanticInput::Fused,
        ..TrackerConfig::default()
    };
    let forced = TrackerConfig {
        force_projector: ForcedProjector::Identity,
        ..TrackerConfig::default()
    };
    let (mut rank_ok, mut ident_ok) = (0, 0);
    for seed in 0..20 {
        let frames = gen_scene(&cfg.scene.sample(5000 + seed).map_err(fail)?).map_err(fail)?;
        let seq = PreparedSequence::new(frames, &model).map_err(fail)?;
        let run = |mode, tc: &TrackerConfig| run_tracker(&seq, mode, tc, &model).map_err(fail);
        let edit0 = run(Mode::NullspaceEdit, &rank0)?;
        let sem = run(Mode::SemanticOnly, &rank0)?;
        if edit0.records.iter().all(|r| r.retained_rank == 0) && edit0.trajectory_bits() == sem.trajectory_bits() {
            rank_ok += 1;
        }
        let edit_i = run(Mode::NullspaceEdit, &forced)?;
        let naive = run(Mode::NaiveFusion, &TrackerConfig::default())?;
        if edit_i.trajectory_bits() == naive.trajectory_bits() {
            ident_ok += 1;
        }
    }
    ensure(
        rank_ok == 20 && ident_ok == 20,
        format!("rank-0 == semantic_only on {rank_ok}/20, P=I == naive_fusion on {ident_ok}/20 (bitwise)"),
    )
}

fn directional() -> Outcome {
    let t0 = Instant::now();
    let cfg = StudyConfig::default();
    let result = run_study(&cfg, false).map_err(fail)?;
    let tests = result.directional_tests().map_err(fail)?;
    let mut parts = Vec::new();
    let mut all = tests.len() == 4;
    for (cmp, t) in &tests {
        let sig = t.significant(0.05);
        all &= sig;
        parts.push(format!(
            "[{} {}+/{}-/{}= p={:.1e}{}]",
            cmp.describe(),
            t.favour,
            t.against,
            t.ties,
            t.p_value,
            if sig { "" } else { " NOT SIGNIFICANT" }
        ));
    }
    let detail = format!("{} sequences, single thread: {}", cfg.study.sequences, parts.join(" "));
    ensure(all, detail).and_then(|d| within(t0.elapsed(), 180.0, d))
}

fn predictor_oracle() -> Outcome {
    let worst = (0..50).map(oracles::predictor_instance_error).fold(0.0f64, f64::max);
    ensure(worst <= 1e-6, format!("50 instances: max deviation {worst:.2e}"))
}

fn bench() -> Outcome {
    let stats = [64, 128, 256]
        .into_iter()
        .map(|c| bench_projector(c, 1024, 10, 0).map_err(fail))
        .collect::<Result<Vec<_>, _>>()?;
    let means: Vec<f64> = stats.iter().map(|s| s.mean_ms).collect();
    let monotone = means.windows(2).all(|w| w[0] < w[1]);
    let detail = format!(
        "mean ms at C=64/128/256, N=1024: {:.2} / {:.2} / {:.2} (limit 50 at C=256)",
        means[0], means[1], means[2]
    );
    ensure(means[2] <= 50.0 && monotone, detail)
}

fn track_once(bin: &str, config: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    let status = Command::new(bin)
        .args(["--jobs", jobs, "track", "--seed", "11", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(fail)?;
    ensure(status.success(), format!("nsedit track exited with {status}")).map(|_| ())
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_nsedit");
    let dir = tempfile::tempdir().map_err(fail)?;
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, "[study]\nsequences = 6\n\n[scene]\nframes = 40\n").map_err(fail)?;
    let outs: Vec<_> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    track_once(bin, &config, &outs[0], "1")?;
    track_once(bin, &config, &outs[1], "1")?;
    track_once(bin, &config, &outs[2], "3")?;
    let mut compared = 0;
    for name in ["runs.csv", "aggregate.csv"] {
        let first = std::fs::read(outs[0].join(name)).map_err(fail)?;
        for other in &outs[1..] {
            let bytes = std::fs::read(other.join(name)).map_err(fail)?;
            if bytes != first {
                return Err(format!("{name} differs between {} and {}", outs[0].display(), other.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV pairs byte-identical across 3 runs (1 and 3 worker threads)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 projector suite", projector_suite),
        ("2 exact null space", exact_null_space),
        ("3 eigensolver oracle", eigensolver_oracle),
        ("4 giou", giou_checks),
        ("5 mode collapse", mode_collapse),
        ("6 directional", directional),
        ("7 predictor oracle", predictor_oracle),
        ("8 bench", bench),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
