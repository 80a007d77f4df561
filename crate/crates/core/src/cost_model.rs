//! Analytic bit costs: the vector-quantizer baseline, bitrate conversion and
//! the sweep of per-format costs over the event count.

use std::fmt::Write as _;

use crate::codec::{cost_report, cost_report_with_mode, width, CostMode, CostReport, StorageFormat};
use crate::error::{Error, Result};

/// Dense integer codebook representation: `q` codebooks of `k` entries over
/// `t_z` latent steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VqConfig {
    pub q: u64,
    pub k: u64,
    pub t_z: u64,
}

impl VqConfig {
    pub fn new(q: u64, k: u64, t_z: u64) -> Result<Self> {
        if q == 0 || k == 0 || t_z == 0 {
            return Err(Error::Domain(format!("VQ config must be positive, got ({q},{k},{t_z})")));
        }
        Ok(Self { q, k, t_z })
    }
}

/// `q · t_z · ⌈log2 k⌉`.
pub fn vq_cost(cfg: VqConfig) -> u64 {
    cfg.q * cfg.t_z * width(cfg.k) as u64
}

pub fn bitrate(bits: f64, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration must be positive, got {duration_s}")));
    }
    Ok(bits / duration_s)
}

/// Latent steps per second for a given sample rate and downsampling factor.
pub fn steps_per_second(sample_rate: f64, hop: usize) -> f64 {
    sample_rate / hop as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegimeTable {
    pub n: u64,
    pub t: u64,
    pub rows: Vec<CostReport>,
}

/// Maximal run of consecutive rows sharing the same best format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    pub format: StorageFormat,
    pub s_start: u64,
    pub s_end: u64,
}

impl RegimeTable {
    pub const CSV_HEADER: &'static str = "S,bits_dense,bits_coo,bits_time,bits_units,best";

    pub fn regimes(&self) -> Vec<Regime> {
        let mut out: Vec<Regime> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some(r) if r.format == row.best => r.s_end = row.s,
                _ => out.push(Regime {
                    format: row.best,
                    s_start: row.s,
                    s_end: row.s,
                }),
            }
        }
        out
    }

    /// First `S` of every regime after the first.
    pub fn boundaries(&self) -> Vec<u64> {
        self.regimes().iter().skip(1).map(|r| r.s_start).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 32);
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.s, r.bits_dense, r.bits_coo, r.bits_time, r.bits_units, r.best
            )
            .unwrap();
        }
        s
    }

    /// Log-scaled line plot of the four cost curves.
    pub fn to_svg(&self, overlay_nominal: bool) -> String {
        let (w, h, margin) = (800.0, 500.0, 60.0);
        let s_max = self.rows.last().map(|r| r.s).unwrap_or(1).max(1) as f64;
        let bit_max = self
            .rows
            .iter()
            .flat_map(|r| StorageFormat::ALL.map(|f| r.bits(f)))
            .max()
            .unwrap_or(1)
            .max(1) as f64;
        let x = |s: u64| margin + (s as f64 / s_max) * (w - 2.0 * margin);
        let y = |b: u64| h - margin - ((1.0 + b as f64).log10() / (1.0 + bit_max).log10()) * (h - 2.0 * margin);
        let colours = ["#444444", "#1f77b4", "#d62728", "#2ca02c"];
        let mut svg = String::new();
        writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
        writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="20" font-size="14" text-anchor="middle">storage cost vs events, N={} T={}</text>"#,
            w / 2.0,
            self.n,
            self.t
        )
        .unwrap();
        let stride = (self.rows.len() / 2000).max(1);
        let mut curves: Vec<(String, Vec<u64>, &str)> = StorageFormat::ALL
            .iter()
            .zip(colours)
            .map(|(f, c)| (f.name().to_string(), self.rows.iter().map(|r| r.bits(*f)).collect(), c))
            .collect();
        if overlay_nominal {
            for (f, c) in StorageFormat::ALL[2..].iter().zip(&colours[2..]) {
                let nominal: Vec<u64> = self
                    .rows
                    .iter()
                    .map(|r| cost_report_with_mode(self.n, self.t, r.s, CostMode::Nominal).bits(*f))
                    .collect();
                curves.push((format!("{} (nominal)", f.name()), nominal, c));
            }
        }
        for (k, (name, bits, colour)) in curves.iter().enumerate() {
            let points: Vec<String> = self
                .rows
                .iter()
                .zip(bits)
                .step_by(stride)
                .map(|(r, &b)| format!("{:.1},{:.1}", x(r.s), y(b)))
                .collect();
            let dash = if name.contains("nominal") { r#" stroke-dasharray="4 3""# } else { "" };
            writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
                points.join(" ")
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="12" fill="{colour}">{name}</text>"#,
                w - margin - 100.0,
                margin + 16.0 * k as f64
            )
            .unwrap();
        }
        for regime in self.regimes() {
            writeln!(
                svg,
                r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="silver" stroke-dasharray="2 2"/>"#,
                x(regime.s_start),
                margin,
                h - margin
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">S (events)</text>"#,
            w / 2.0,
            h - 20.0
        )
        .unwrap();
        svg.push_str("</svg>\n");
        svg
    }
}

/// Exact-mode cost rows for each requested `S`, sorted by `S`.
pub fn regime_sweep(n: u64, t: u64, s_values: impl IntoIterator<Item = u64>) -> Result<RegimeTable> {
    if n == 0 || t == 0 {
        return Err(Error::Shape(format!("dimensions must be positive, got {n}x{t}")));
    }
    let mut s_values: Vec<u64> = s_values.into_iter().collect();
    if let Some(&bad) = s_values.iter().find(|&&s| s > n * t) {
        return Err(Error::Domain(format!("S={bad} exceeds N*T={}", n * t)));
    }
    s_values.sort_unstable();
    s_values.dedup();
    Ok(RegimeTable {
        n,
        t,
        rows: s_values.into_iter().map(|s| cost_report(n, t, s)).collect(),
    })
}

/// Sweep over every `S` in `0..=N·T`.
pub fn full_sweep(n: u64, t: u64) -> Result<RegimeTable> {
    regime_sweep(n, t, 0..=n.saturating_mul(t))
}
