use nsedit_harness::bench::{bench_projector, BenchStats};

use crate::cli::BenchArgs;
use crate::error::Result;
use crate::output::{sha256_hex, write_csv};

pub fn bench(args: &BenchArgs) -> Result<Vec<BenchStats>> {
    let stats = args
        .channels
        .iter()
        .map(|&c| bench_projector(c, args.samples, args.reps, args.seed))
        .collect::<nsedit_harness::Result<Vec<_>>>()?;
    println!("{:>8} {:>8} {:>5} {:>9} {:>9} {:>9}", "channels", "samples", "reps", "mean_ms", "p50_ms", "p95_ms");
    for s in &stats {
        println!(
            "{:>8} {:>8} {:>5} {:>9.3} {:>9.3} {:>9.3}",
            s.channels, s.samples, s.reps, s.mean_ms, s.p50_ms, s.p95_ms
        );
    }
    if let Some(path) = &args.out {
        let key = format!("{:?} {} {} {}", args.channels, args.samples, args.reps, args.seed);
        write_csv(path, &stats, &sha256_hex(key.as_bytes()))?;
    }
    Ok(stats)
}
