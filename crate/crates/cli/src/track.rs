use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nsedit_harness::study::StudyResult;
use nsedit_harness::{run_study, Mode};

use crate::cli::{RunArgs, TrackArgs};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{metadata_line, write_atomic, write_csv};

pub const DEFAULT_OUT: &str = "nsedit-out";

pub fn parse_modes(list: &str) -> Result<Vec<Mode>> {
    let modes = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Mode::parse(s).ok_or_else(|| CliError::ConfigInvalid(format!("--modes: unknown mode `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if modes.is_empty() {
        return Err(CliError::ConfigInvalid("--modes: empty list".into()));
    }
    Ok(modes)
}

/// Loads the config, applies command-line overrides and validates.
pub fn effective_config(args: &RunArgs, modes: Option<&str>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.study.seed = seed;
    }
    if let Some(list) = modes {
        cfg.study.modes = parse_modes(list)?;
    }
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg, out))
}

pub fn track(args: &TrackArgs, parallel: bool) -> Result<()> {
    let (cfg, out) = effective_config(&args.run, args.modes.as_deref())?;
    let hash = cfg.hash();
    let result = run_study(&cfg.study(), parallel)?;
    write_reports(&out, &cfg, &hash, &result)?;
    println!(
        "tracked {} sequences x {} modes into {}",
        cfg.study.sequences,
        cfg.study.modes.len(),
        out.display()
    );
    Ok(())
}

pub fn write_reports(out: &Path, cfg: &ExperimentConfig, hash: &str, result: &StudyResult) -> Result<()> {
    write_csv(&out.join("runs.csv"), &result.frame_rows(), hash)?;
    write_csv(&out.join("aggregate.csv"), &result.aggregate_rows(), hash)?;
    write_atomic(&out.join("summary.txt"), summary(cfg, hash, result)?.as_bytes())?;
    if cfg.output.timings {
        write_csv(&out.join("timings.csv"), &result.timing_rows(), hash)?;
    }
    Ok(())
}

fn summary(cfg: &ExperimentConfig, hash: &str, result: &StudyResult) -> Result<String> {
    let mut s = metadata_line(hash);
    let _ = writeln!(
        s,
        "{} sequences from seed {}, {} frames each\n",
        cfg.study.sequences, cfg.study.seed, cfg.scene.frames
    );
    let _ = writeln!(s, "{:<16} {:<11} {:>7} {:>9} {:>8}", "mode", "slice", "frames", "mean_iou", "suc_auc");
    for r in result.aggregate_rows() {
        let _ = writeln!(
            s,
            "{:<16} {:<11} {:>7} {:>9.4} {:>8.4}",
            r.mode, r.slice, r.frames, r.mean_iou, r.suc_auc
        );
    }
    let tests = result.directional_tests()?;
    if !tests.is_empty() {
        let _ = writeln!(s, "\npaired sign tests over sequences (alpha {}):", cfg.study.alpha);
        for (cmp, t) in tests {
            let verdict = if t.significant(cfg.study.alpha) { "supported" } else { "not supported" };
            let _ = writeln!(
                s,
                "  {:<45} {:>3}+ {:>3}- {:>3}= p={:.3e}  {verdict}",
                cmp.describe(),
                t.favour,
                t.against,
                t.ties,
                t.p_value
            );
        }
    }
    Ok(s)
}
