use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{Model, INPUT_CHANNELS};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub size: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// `1000 / median_ms`.
    pub fps: f64,
    pub machine: String,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# machine: {}", self.machine)?;
        writeln!(
            f,
            "# protocol: f32, batch 1, eval mode, single thread, {} warmup + {} timed forwards",
            self.warmup, self.iterations
        )?;
        writeln!(f, "input      {0}x{0}", self.size)?;
        writeln!(f, "mean_ms    {:.3}", self.mean_ms)?;
        writeln!(f, "median_ms  {:.3}", self.median_ms)?;
        writeln!(f, "p95_ms     {:.3}", self.p95_ms)?;
        write!(f, "fps        {:.1}", self.fps)
    }
}

pub fn machine_info() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {} {}; {threads} hardware threads available",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times eval-mode forwards of a batch-1 `size x size` input.
pub fn bench(model: &Model<f32>, size: usize, iterations: usize, warmup: usize) -> Result<BenchReport> {
    if iterations < 10 {
        return Err(Error::Config(format!("bench needs at least 10 iterations, got {iterations}")));
    }
    if warmup < 3 {
        return Err(Error::Config(format!("bench needs at least 3 warmup runs, got {warmup}")));
    }
    let input = Tensor::<f32>::from_fn([1, INPUT_CHANNELS, size, size], |[_, c, y, x]| {
        ((c * 131 + y * 17 + x * 7) % 255) as f32 / 255.0
    });
    for _ in 0..warmup {
        std::hint::black_box(model.forward(&input)?);
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(model.forward(&input)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median_ms = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    Ok(BenchReport {
        size,
        iterations,
        warmup,
        mean_ms,
        median_ms,
        p95_ms: percentile(&times, 95.0),
        fps: 1000.0 / median_ms,
        machine: machine_info(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }
}
