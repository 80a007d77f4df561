//! Binary event matrices: `n_units × n_steps` grids of 0/1 entries stored as
//! the sorted list of their non-zero coordinates.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Upper bound (exclusive) on both dimensions.
pub const MAX_DIM: usize = 1 << 32;

/// A binary `N × T` matrix. Events are kept in canonical order:
/// unit ascending, then step ascending, with no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventMatrix {
    n_units: usize,
    n_steps: usize,
    events: Vec<(usize, usize)>,
}

/// Fraction of non-zero entries, `S / (N·T)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Density(pub f64);

impl EventMatrix {
    /// Builds a matrix from arbitrary-order events. Duplicates and
    /// out-of-range coordinates are rejected.
    pub fn new(n_units: usize, n_steps: usize, mut events: Vec<(usize, usize)>) -> Result<Self> {
        check_shape(n_units, n_steps)?;
        if let Some(&(i, t)) = events.iter().find(|&&(i, t)| i >= n_units || t >= n_steps) {
            return Err(Error::Domain(format!(
                "event ({i},{t}) outside {n_units}x{n_steps}"
            )));
        }
        events.sort_unstable();
        if let Some(w) = events.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!("duplicate event {:?}", w[0])));
        }
        Ok(Self {
            n_units,
            n_steps,
            events,
        })
    }

    /// All-zero matrix.
    pub fn empty(n_units: usize, n_steps: usize) -> Result<Self> {
        check_shape(n_units, n_steps)?;
        Ok(Self {
            n_units,
            n_steps,
            events: Vec::new(),
        })
    }

    /// Events must already be canonical; only used by decoders that
    /// produce sorted, validated output.
    pub(crate) fn from_sorted_unchecked(
        n_units: usize,
        n_steps: usize,
        events: Vec<(usize, usize)>,
    ) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0] < w[1]));
        Self {
            n_units,
            n_steps,
            events,
        }
    }

    pub fn from_dense<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        check_shape(n, t)?;
        let mut events = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != t {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {t}",
                    row.len()
                )));
            }
            for (step, &bit) in row.iter().enumerate() {
                match bit {
                    0 => {}
                    1 => events.push((i, step)),
                    other => {
                        return Err(Error::Domain(format!("entry ({i},{step}) = {other} is not binary")))
                    }
                }
            }
        }
        Ok(Self {
            n_units: n,
            n_steps: t,
            events,
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut rows = vec![vec![0u8; self.n_steps]; self.n_units];
        for &(i, t) in &self.events {
            rows[i][t] = 1;
        }
        rows
    }

    /// Row-major `0.0 / 1.0` values, as consumed by the model code.
    pub fn to_f64_row_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_units * self.n_steps];
        for &(i, t) in &self.events {
            out[i * self.n_steps + t] = 1.0;
        }
        out
    }

    /// `S` uniformly chosen distinct events, reproducible per seed.
    pub fn random(seed: u64, n_units: usize, n_steps: usize, s: usize) -> Result<Self> {
        check_shape(n_units, n_steps)?;
        let cells = n_units * n_steps;
        if s > cells {
            return Err(Error::Domain(format!("S={s} exceeds N*T={cells}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, cells, s)
            .into_iter()
            .map(|c| (c / n_steps, c % n_steps))
            .collect();
        events.sort_unstable();
        Ok(Self {
            n_units,
            n_steps,
            events,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn events(&self) -> &[(usize, usize)] {
        &self.events
    }

    /// Number of events `S`.
    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn density(&self) -> Density {
        Density(self.events.len() as f64 / (self.n_units * self.n_steps) as f64)
    }

    pub fn contains(&self, unit: usize, step: usize) -> bool {
        self.events.binary_search(&(unit, step)).is_ok()
    }

    /// Number of events per unit.
    pub fn unit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_units];
        for &(i, _) in &self.events {
            counts[i] += 1;
        }
        counts
    }

    /// Events ordered step-major (step ascending, then unit ascending).
    pub fn step_major(&self) -> Vec<(usize, usize)> {
        // counting sort by step; unit order within a step is preserved
        let mut starts = vec![0usize; self.n_steps + 1];
        for &(_, t) in &self.events {
            starts[t + 1] += 1;
        }
        for t in 0..self.n_steps {
            starts[t + 1] += starts[t];
        }
        let mut by_step = vec![(0, 0); self.events.len()];
        for &(i, t) in &self.events {
            by_step[starts[t]] = (t, i);
            starts[t] += 1;
        }
        by_step
    }

    /// Text interchange: `"N T"` then one `"i t"` line per event.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.events.len() * 10);
        writeln!(s, "{} {}", self.n_units, self.n_steps).unwrap();
        for &(i, t) in &self.events {
            writeln!(s, "{i} {t}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut offset = 0;
        let mut header = None;
        let mut events = Vec::new();
        for line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += line.len();
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(Error::parse(line_offset, "expected two integers")),
            };
            let a: usize = a
                .parse()
                .map_err(|_| Error::parse(line_offset, format!("bad integer {a:?}")))?;
            let b: usize = b
                .parse()
                .map_err(|_| Error::parse(line_offset, format!("bad integer {b:?}")))?;
            if header.is_none() {
                header = Some((a, b));
            } else {
                events.push((a, b));
            }
        }
        let (n, t) = header.ok_or_else(|| Error::parse(0, "missing \"N T\" header"))?;
        Self::new(n, t, events)
    }
}

fn check_shape(n_units: usize, n_steps: usize) -> Result<()> {
    if n_units == 0 || n_steps == 0 {
        return Err(Error::Shape(format!(
            "dimensions must be positive, got {n_units}x{n_steps}"
        )));
    }
    if n_units >= MAX_DIM || n_steps >= MAX_DIM {
        return Err(Error::Shape(format!(
            "dimensions must be below 2^32, got {n_units}x{n_steps}"
        )));
    }
    Ok(())
}

/// The 5×10 example matrix with seven events used throughout the tests.
pub fn worked_example() -> EventMatrix {
    EventMatrix::from_dense(&[
        [0u8, 0, 0, 1, 0, 0, 0, 0, 0, 0],
        [1, 0, 0, 0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 1],
        [0, 1, 0, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    ])
    .unwrap()
}
