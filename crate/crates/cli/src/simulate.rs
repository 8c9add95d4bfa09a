use nsedit_core::FeatureMap;
use serde::Serialize;

use crate::cli::RunArgs;
use crate::error::Result;
use crate::output::{write_atomic, write_csv};
use crate::track::effective_config;

#[derive(Serialize)]
struct GtRow {
    frame: usize,
    attribute: &'static str,
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
}

/// `frame_{idx:06}_{kind}.gted`
pub fn frame_file_name(idx: usize, map: &FeatureMap<f64>) -> String {
    format!("frame_{idx:06}_{}.gted", map.kind().as_str())
}

pub fn simulate(args: &RunArgs) -> Result<()> {
    let (cfg, out) = effective_config(args, None)?;
    let spec = cfg.scene.sample(cfg.study.seed)?;
    let frames = nsedit_harness::gen_scene(&spec)?;
    let mut gt = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        for map in [&f.semantic, &f.geometric] {
            write_atomic(&out.join(frame_file_name(t, map)), &map.tensor().to_bytes()?)?;
        }
        gt.push(GtRow {
            frame: t,
            attribute: f.attribute.as_str(),
            left: f.gt.left(),
            top: f.gt.top(),
            right: f.gt.right(),
            bottom: f.gt.bottom(),
        });
    }
    write_csv(&out.join("gt.csv"), &gt, &cfg.hash())?;
    println!("wrote {} frames (seed {}) to {}", frames.len(), cfg.study.seed, out.display());
    Ok(())
}
