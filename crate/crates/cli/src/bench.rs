//! Analytic operation counts and measured wall-clock of windowed versus
//! global attention over growing token grids.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swinfundus::tensor::Tensor;
use swinfundus::windowing::{
    attention_inference, flops_report, window_partition, AttentionWeights,
};
use swinfundus::{Error, Params, Result, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Token grid sides; every grid is square.
    pub sizes: Vec<usize>,
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    /// Timings keep the fastest of this many runs.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            sizes: vec![16, 32, 64, 128],
            channels: 32,
            window: 4,
            heads: 1,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub h: usize,
    pub w: usize,
    pub tokens: usize,
    pub msa_flops: u64,
    pub wmsa_flops: u64,
    pub msa_seconds: f64,
    pub wmsa_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of ln(seconds) against ln(h·w).
    pub msa_time_slope: f64,
    pub wmsa_time_slope: f64,
    /// The same fit applied to the analytic counts.
    pub msa_flops_slope: f64,
    pub wmsa_flops_slope: f64,
}

/// Least-squares slope of `ln y` on `ln x`; `None` with fewer than two
/// distinct `x` values or non-positive data.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-12 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "bench sizes must be a non-empty list of positive grid sides".into(),
            ));
        }
        if self.channels == 0 || self.window == 0 || self.heads == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument(
                "channels, window, heads and repeats must be positive".into(),
            ));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "{} channels are not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        for &s in &self.sizes {
            if s * s < self.window * self.window {
                return Err(Error::InvalidArgument(format!(
                    "window {0}x{0} exceeds the {s}x{s} grid",
                    self.window
                )));
            }
            if s % self.window != 0 {
                return Err(Error::InvalidArgument(format!(
                    "grid side {s} is not a multiple of the window {}",
                    self.window
                )));
            }
        }
        Ok(())
    }
}

fn fastest(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    let c = opts.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random = |shape: Vec<usize>, scale: f32| {
        Tensor::<f32>::from_fn(shape, |_| rng.random_range(-scale..scale))
    };
    let mut params: Params<f32> = Params::new();
    for n in ["Wq", "Wk", "Wv", "Wo"] {
        params.insert(n, random(vec![c, c], 0.2));
    }
    for n in ["bq", "bk", "bv", "bo"] {
        params.insert(n, random(vec![c], 0.2));
    }
    let g = |n: &str| params.get(n).expect("weights built above");
    let weights = AttentionWeights {
        wq: g("Wq"),
        bq: g("bq"),
        wk: g("Wk"),
        bk: g("bk"),
        wv: g("Wv"),
        bv: g("bv"),
        wo: g("Wo"),
        bo: g("bo"),
    };
    let mut rows = Vec::with_capacity(opts.sizes.len());
    for &s in &opts.sizes {
        let flops = flops_report(s as u64, s as u64, c as u64, opts.window as u64)?;
        let x = random(vec![1, s, s, c], 1.0);
        let wmsa_seconds = fastest(opts.repeats, || {
            let xw = window_partition(&Tape::new(), &x, opts.window)?;
            attention_inference(&xw, &weights, opts.heads, None).map(drop)
        })?;
        let global = x.reshaped([1, s * s, c])?;
        let msa_seconds = fastest(opts.repeats, || {
            attention_inference(&global, &weights, opts.heads, None).map(drop)
        })?;
        rows.push(BenchRow {
            h: s,
            w: s,
            tokens: s * s,
            msa_flops: flops.msa_flops,
            wmsa_flops: flops.wmsa_flops,
            msa_seconds,
            wmsa_seconds,
        });
    }
    let slope = |f: &dyn Fn(&BenchRow) -> f64| {
        log_log_slope(
            &rows
                .iter()
                .map(|r| (r.tokens as f64, f(r)))
                .collect::<Vec<_>>(),
        )
        .unwrap_or(f64::NAN)
    };
    Ok(BenchReport {
        channels: c,
        window: opts.window,
        heads: opts.heads,
        msa_time_slope: slope(&|r| r.msa_seconds),
        wmsa_time_slope: slope(&|r| r.wmsa_seconds),
        msa_flops_slope: slope(&|r| r.msa_flops as f64),
        wmsa_flops_slope: slope(&|r| r.wmsa_flops as f64),
        rows,
    })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "h,w,tokens,channels,window,msa_flops,wmsa_flops,msa_seconds,wmsa_seconds\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.9},{:.9}\n",
                r.h,
                r.w,
                r.tokens,
                self.channels,
                self.window,
                r.msa_flops,
                r.wmsa_flops,
                r.msa_seconds,
                r.wmsa_seconds
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>9} {:>16} {:>16} {:>12} {:>12}\n",
            "h x w", "MSA flops", "W-MSA flops", "MSA s", "W-MSA s"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>9} {:>16} {:>16} {:>12.6} {:>12.6}\n",
                format!("{}x{}", r.h, r.w),
                r.msa_flops,
                r.wmsa_flops,
                r.msa_seconds,
                r.wmsa_seconds
            ));
        }
        out.push_str(&format!(
            "log-log slope vs tokens: MSA {:.3} (analytic {:.3}), W-MSA {:.3} (analytic {:.3})\n",
            self.msa_time_slope, self.msa_flops_slope, self.wmsa_time_slope, self.wmsa_flops_slope
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_laws() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 8.0, 100.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(1.7)))
            .collect();
        assert!((log_log_slope(&pts).unwrap() - 1.7).abs() < 1e-12);
        assert!(log_log_slope(&[(2.0, 1.0), (2.0, 5.0)]).is_none());
        assert!(log_log_slope(&[(1.0, 0.0), (2.0, 1.0)]).is_none());
    }

    #[test]
    fn small_bench_reports_reference_counts() {
        let opts = BenchOptions {
            sizes: vec![4, 8],
            channels: 8,
            window: 4,
            heads: 2,
            repeats: 1,
            seed: 1,
        };
        let r = run_bench(&opts).unwrap();
        // M² = hw: one window covers the grid and the two formulas coincide
        assert_eq!(r.rows[0].msa_flops, r.rows[0].wmsa_flops);
        assert!(r.rows[1].msa_flops > r.rows[1].wmsa_flops);
        assert!((r.wmsa_flops_slope - 1.0).abs() < 1e-9);
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn invalid_options() {
        let base = BenchOptions::default();
        for o in [
            BenchOptions {
                sizes: vec![],
                ..base.clone()
            },
            BenchOptions {
                sizes: vec![2],
                ..base.clone()
            },
            BenchOptions {
                sizes: vec![18],
                ..base.clone()
            },
            BenchOptions {
                heads: 3,
                ..base.clone()
            },
        ] {
            assert!(run_bench(&o).is_err(), "{o:?}");
        }
    }
}
