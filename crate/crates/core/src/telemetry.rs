//! Meter sampling and series windowing.
//!
//! The validator meter reads a socket's true power once per second with
//! multiplicative Gaussian noise; usage counters are sampled noiselessly.
//! Every random stream is derived from the scenario seed plus a stream
//! label, so a test's telemetry does not depend on what ran before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::simnode::{PowerBreakdown, SocketId};

/// One meter reading of a socket.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PowerSample {
    pub t: u64,
    pub socket_id: SocketId,
    pub pkg_w: f64,
    pub dram_w: f64,
}

/// One usage reading of a container or native process.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UsageSample {
    pub t: u64,
    pub container_id: String,
    pub cpu_fraction: f64,
    /// Giga-cycles executed this tick.
    pub cycles: f64,
    pub bandwidth_gbs: f64,
    pub requested_cores: u64,
}

/// Multiplicative Gaussian meter noise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseModel {
    pub relative_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { relative_sigma: 0.002, seed: 0 }
    }
}

/// splitmix64; used to fold stream labels into per-stream seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic Gaussian stream: ChaCha12 uniforms through Box-Muller.
/// Hand-rolled transform so the byte stream is pinned by this crate alone.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    /// Derive a stream from the master seed and a stable label.
    pub fn for_stream(seed: u64, label: &str) -> Self {
        let mut h = seed;
        for b in label.as_bytes() {
            h = splitmix64(h ^ u64::from(*b));
        }
        GaussianStream { rng: ChaCha12Rng::seed_from_u64(h), spare: None }
    }

    fn next_uniform(&mut self) -> f64 {
        // 53 random bits in (0, 1]; never returns 0 so ln() is safe.
        ((self.rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// One uniform draw in (0, 1].
    pub fn next_uniform_unit(&mut self) -> f64 {
        self.next_uniform()
    }

    /// One standard normal draw.
    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Read one socket through the noisy meter: `value * (1 + eps)` with
/// `eps ~ N(0, relative_sigma^2)`, clamped at zero.
pub fn sample_socket(
    breakdown: &PowerBreakdown,
    noise: &NoiseModel,
    stream: &mut GaussianStream,
    t: u64,
) -> PowerSample {
    let mut read = |truth: f64| {
        if noise.relative_sigma == 0.0 {
            truth
        } else {
            (truth * (1.0 + noise.relative_sigma * stream.next_standard_normal())).max(0.0)
        }
    };
    PowerSample {
        t,
        socket_id: breakdown.socket_id,
        pkg_w: read(breakdown.pkg),
        dram_w: read(breakdown.dram),
    }
}

/// Means of non-overlapping windows; the partial trailing window is dropped.
pub fn aggregate_window(series: &[f64], interval_s: u64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptyInput("cannot window an empty series".into()));
    }
    if interval_s == 0 {
        return Err(Error::InputDomain("window interval must be >= 1 s".into()));
    }
    let n = interval_s as usize;
    Ok(series
        .chunks_exact(n)
        .map(|w| w.iter().sum::<f64>() / n as f64)
        .collect())
}

/// Raw power-sample dump: `t,socket,pkg_w,dram_w`.
pub fn dump_power_csv<W: Write>(out: &mut W, samples: &[PowerSample]) -> Result<()> {
    writeln!(out, "t,socket,pkg_w,dram_w")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            s.t,
            s.socket_id,
            crate::report::fmt_sig(s.pkg_w),
            crate::report::fmt_sig(s.dram_w)
        )?;
    }
    Ok(())
}

/// Raw usage-sample dump: `t,container,cpu_fraction,cycles,bandwidth_gbs`.
pub fn dump_usage_csv<W: Write>(out: &mut W, samples: &[UsageSample]) -> Result<()> {
    writeln!(out, "t,container,cpu_fraction,cycles,bandwidth_gbs")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.t,
            s.container_id,
            crate::report::fmt_sig(s.cpu_fraction),
            crate::report::fmt_sig(s.cycles),
            crate::report::fmt_sig(s.bandwidth_gbs)
        )?;
    }
    Ok(())
}
