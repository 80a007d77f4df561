//! SI-SNR, unit/note cross-correlation and peak prominence.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::event_matrix::EventMatrix;

pub const SI_SNR_EPS: f64 = 1e-12;
pub const SI_SNR_CAP_DB: f64 = 100.0;
pub const PROMINENCE_EPS: f64 = 1e-12;
pub const DEFAULT_PEAK_HALF_WINDOW: usize = 10;
pub const DEFAULT_LAG_WINDOW: usize = 50;

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SNR in dB, capped at +100.
pub fn si_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Domain("empty signals".into()));
    }
    let r = centered(reference);
    let e = centered(estimate);
    let rr = dot(&r, &r);
    if rr == 0.0 {
        return Err(Error::Domain("reference has zero energy".into()));
    }
    let alpha = dot(&e, &r) / rr;
    let mut target_energy = 0.0;
    let mut noise_energy = 0.0;
    for (rv, ev) in r.iter().zip(&e) {
        let s = alpha * rv;
        target_energy += s * s;
        noise_energy += (ev - s) * (ev - s);
    }
    let db = 10.0 * (target_energy / (noise_energy + SI_SNR_EPS)).log10();
    Ok(if db.is_nan() { f64::NEG_INFINITY } else { db.min(SI_SNR_CAP_DB) })
}

/// `C[i][α][τ]` for `τ ∈ −W..=W`, averaged over paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    pub n_units: usize,
    pub n_notes: usize,
    pub window: usize,
    pub samples: usize,
    /// Raw co-occurrence counts summed over samples, `[(i·K + α)·(2W+1) + (τ+W)]`.
    pub counts: Vec<u64>,
}

impl CorrelationVolume {
    pub fn lags(&self) -> usize {
        2 * self.window + 1
    }

    fn index(&self, unit: usize, note: usize, lag: i64) -> usize {
        (unit * self.n_notes + note) * self.lags() + (lag + self.window as i64) as usize
    }

    pub fn count(&self, unit: usize, note: usize, lag: i64) -> u64 {
        self.counts[self.index(unit, note, lag)]
    }

    /// Sample-averaged correlation.
    pub fn value(&self, unit: usize, note: usize, lag: i64) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.count(unit, note, lag) as f64 / self.samples as f64
    }

    pub fn curve(&self, unit: usize, note: usize) -> Vec<f64> {
        let w = self.window as i64;
        (-w..=w).map(|lag| self.value(unit, note, lag)).collect()
    }

    /// `i,alpha,tau,C`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,alpha,tau,C\n");
        let w = self.window as i64;
        for i in 0..self.n_units {
            for a in 0..self.n_notes {
                for lag in -w..=w {
                    let _ = writeln!(out, "{i},{a},{lag},{}", self.value(i, a, lag));
                }
            }
        }
        out
    }
}

/// `C^{iα}(τ) = ⟨Σ_t z^i_t n^α_{t+τ}⟩` with zero padding outside the clip.
pub fn cross_correlation(z: &[EventMatrix], notes: &[EventMatrix], window: usize) -> Result<CorrelationVolume> {
    if z.len() != notes.len() {
        return Err(Error::Shape(format!("{} code samples vs {} note grids", z.len(), notes.len())));
    }
    let n_units = z.first().map_or(0, EventMatrix::n_units);
    let n_notes = notes.first().map_or(0, EventMatrix::n_units);
    let lags = 2 * window + 1;
    let mut counts = vec![0u64; n_units * n_notes * lags];
    for (zs, ns) in z.iter().zip(notes) {
        if zs.n_steps() != ns.n_steps() {
            return Err(Error::Shape(format!(
                "code has {} steps, note grid {}",
                zs.n_steps(),
                ns.n_steps()
            )));
        }
        if zs.n_units() != n_units || ns.n_units() != n_notes {
            return Err(Error::Shape("inconsistent unit or note counts across samples".into()));
        }
        let mut onsets: Vec<Vec<usize>> = vec![Vec::new(); n_notes];
        for &(a, t) in ns.events() {
            onsets[a].push(t);
        }
        for &(i, t) in zs.events() {
            for (a, times) in onsets.iter().enumerate() {
                let base = (i * n_notes + a) * lags;
                let lo = t.saturating_sub(window);
                let hi = t + window;
                let start = times.partition_point(|&u| u < lo);
                for &u in times[start..].iter().take_while(|&&u| u <= hi) {
                    let lag = u as i64 - t as i64;
                    counts[base + (lag + window as i64) as usize] += 1;
                }
            }
        }
    }
    Ok(CorrelationVolume {
        n_units,
        n_notes,
        window,
        samples: z.len(),
        counts,
    })
}

/// Baseline-referenced peak z-scores `φ[i][α]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProminenceMatrix {
    pub n_units: usize,
    pub n_notes: usize,
    pub half_window: usize,
    pub phi: Vec<f64>,
}

impl ProminenceMatrix {
    pub fn get(&self, unit: usize, note: usize) -> f64 {
        self.phi[unit * self.n_notes + note]
    }

    /// Population standard deviation of all entries.
    pub fn dispersion(&self) -> f64 {
        if self.phi.is_empty() {
            return 0.0;
        }
        let m = self.phi.len() as f64;
        let mean = self.phi.iter().sum::<f64>() / m;
        (self.phi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt()
    }

    /// `i,alpha,phi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,alpha,phi\n");
        for i in 0..self.n_units {
            for a in 0..self.n_notes {
                let _ = writeln!(out, "{i},{a},{}", self.get(i, a));
            }
        }
        out
    }
}

/// Peak mean over `|τ| < P` minus baseline mean over `P ≤ |τ| ≤ W`, divided
/// by the baseline standard deviation.
pub fn peak_prominence(vol: &CorrelationVolume, half_window: usize) -> Result<ProminenceMatrix> {
    if half_window == 0 || half_window > vol.window {
        return Err(Error::Domain(format!(
            "peak half-window {half_window} must be in 1..={}",
            vol.window
        )));
    }
    let p = half_window as i64;
    let w = vol.window as i64;
    let mut phi = Vec::with_capacity(vol.n_units * vol.n_notes);
    for i in 0..vol.n_units {
        for a in 0..vol.n_notes {
            let peak: Vec<f64> = (-(p - 1)..p).map(|lag| vol.value(i, a, lag)).collect();
            let base: Vec<f64> = (-w..=w)
                .filter(|lag| lag.abs() >= p)
                .map(|lag| vol.value(i, a, lag))
                .collect();
            let peak_mean = peak.iter().sum::<f64>() / peak.len() as f64;
            let base_mean = base.iter().sum::<f64>() / base.len() as f64;
            let base_std =
                (base.iter().map(|v| (v - base_mean) * (v - base_mean)).sum::<f64>() / base.len() as f64).sqrt();
            phi.push((peak_mean - base_mean) / (base_std + PROMINENCE_EPS));
        }
    }
    Ok(ProminenceMatrix {
        n_units: vol.n_units,
        n_notes: vol.n_notes,
        half_window,
        phi,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityRow {
    pub unit: usize,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityReport {
    pub anchor: usize,
    pub rows: Vec<SelectivityRow>,
}

impl SelectivityReport {
    pub fn units(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.unit).collect()
    }

    /// `unit,phi_0,...,phi_{K-1}`.
    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map_or(0, |r| r.phi.len());
        let mut out = String::from("unit");
        for a in 0..k {
            let _ = write!(out, ",phi_{a}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{}", row.unit);
            for v in &row.phi {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Top `top_k` units by prominence toward `anchor`, descending; ties by unit index.
pub fn selectivity_report(prom: &ProminenceMatrix, top_k: usize, anchor: usize) -> Result<SelectivityReport> {
    if anchor >= prom.n_notes {
        return Err(Error::Domain(format!("anchor note {anchor} out of range 0..{}", prom.n_notes)));
    }
    let mut order: Vec<usize> = (0..prom.n_units).collect();
    order.sort_by(|&a, &b| prom.get(b, anchor).total_cmp(&prom.get(a, anchor)).then(a.cmp(&b)));
    let rows = order
        .into_iter()
        .take(top_k)
        .map(|unit| SelectivityRow {
            unit,
            phi: (0..prom.n_notes).map(|a| prom.get(unit, a)).collect(),
        })
        .collect();
    Ok(SelectivityReport { anchor, rows })
}
