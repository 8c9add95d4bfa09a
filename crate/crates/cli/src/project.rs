use std::path::PathBuf;

use nsedit_core::editing::stack_columns;
use nsedit_core::linalg::{
    nullspace_projector, regularized_correlation_with, whiten_columns, Projector, Ridge, ThresholdPolicy,
};
use nsedit_core::{tensor_read, FeatureKind, FeatureMap};
use rayon::prelude::*;

use crate::cli::ProjectArgs;
use crate::error::{CliError, Result};
use crate::output::write_atomic;

#[derive(Debug)]
pub struct ProjectOutcome {
    pub files: usize,
    pub columns: usize,
    pub lambda: f64,
    pub projector: Projector<f64>,
}

/// Matching paths in sorted order, so the stacked column order and hence
/// the result do not depend on directory listing order.
pub fn matching_files(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in glob::glob(pattern)? {
        paths.push(entry.map_err(|e| CliError::Read {
            path: e.path().to_path_buf(),
            source: std::io::Error::new(e.error().kind(), e.error().to_string()),
        })?);
    }
    if paths.is_empty() {
        return Err(CliError::NoMatches(pattern.to_owned()));
    }
    paths.sort();
    Ok(paths)
}

pub fn estimate(args: &ProjectArgs) -> Result<ProjectOutcome> {
    let policy = ThresholdPolicy {
        eps_rel: args.eps_rel,
        eps_abs: args.eps_abs,
    };
    policy
        .validate()
        .map_err(|e| CliError::ConfigInvalid(format!("--eps-rel/--eps-abs: {e}")))?;
    let ridge = match args.lambda {
        Some(l) if !(l.is_finite() && l >= 0.0) => {
            return Err(CliError::ConfigInvalid(format!("--lambda: must be finite and nonnegative, got {l}")))
        }
        Some(l) => Ridge::Fixed(l),
        None => Ridge::Relative(1e-4),
    };
    let paths = matching_files(&args.features)?;
    let maps = paths
        .par_iter()
        .map(|p| {
            let t = tensor_read::<f64>(p)?;
            FeatureMap::new(FeatureKind::Semantic, t).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureMap<f64>> = maps.iter().collect();
    let z = stack_columns(&refs)?;
    let columns = z.cols();
    let m = regularized_correlation_with(&whiten_columns(&z)?, ridge)?;
    let lambda = m.ridge();
    let projector = nullspace_projector(&m, policy)?;
    Ok(ProjectOutcome {
        files: paths.len(),
        columns,
        lambda,
        projector,
    })
}

pub fn project(args: &ProjectArgs) -> Result<()> {
    let outcome = estimate(args)?;
    let bytes = outcome.projector.matrix().to_tensor()?.to_bytes()?;
    write_atomic(&args.out, &bytes)?;
    println!(
        "retained rank {} of {} channels ({} columns from {} files, lambda {:.6e}) -> {}",
        outcome.projector.retained_rank(),
        outcome.projector.dim(),
        outcome.columns,
        outcome.files,
        outcome.lambda,
        args.out.display()
    );
    Ok(())
}
