//! Bit-exact storage of event matrices in four formats, plus the
//! multi-sample `.spkm` container.
//!
//! Index fields use `width(D)` bits, the number of bits needed to address
//! `D` distinct values (`0` when `D <= 1`). Payload layouts:
//!
//! * `Dense`: `N·T` bits, unit-major (row `i`, column `t` at bit `i·T + t`).
//! * `Coo`: `S` records of `(unit: width(N), step: width(T))` in canonical order.
//! * `CompressedTime`: the `S` step indices grouped by unit, then the `N-1`
//!   interior cumulative offsets, each `width(S+1)` bits. The leading 0 and
//!   trailing `S` of the offset list are implied.
//! * `CompressedUnits`: the transpose: `S` unit indices grouped by step, then
//!   `T-1` offsets.
//!
//! Container layout (`.spkm`): a byte-aligned big-endian header
//! `"SPKM" | version: u8 | n_units: u32 | n_steps: u32 | s_max: u32 | sample_count: u32`
//! followed by bit-packed samples, each `tag: 2 bits | S: width(s_max+1) bits
//! (absent for Dense) | payload`. The last byte is zero-padded.

use std::fmt;
use std::str::FromStr;

use crate::bitio::{BitBuffer, BitCursor};
use crate::error::{Error, Result};
use crate::event_matrix::EventMatrix;

pub const STREAM_MAGIC: [u8; 4] = *b"SPKM";
pub const STREAM_VERSION: u8 = 1;
pub const STREAM_HEADER_BYTES: usize = 21;
pub const TAG_BITS: u32 = 2;

/// Bits needed to index a domain of `d` values.
pub fn width(d: u64) -> u32 {
    if d <= 1 {
        0
    } else {
        64 - (d - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StorageFormat {
    Dense = 0b00,
    Coo = 0b01,
    CompressedTime = 0b10,
    CompressedUnits = 0b11,
}

impl StorageFormat {
    pub const ALL: [StorageFormat; 4] = [
        StorageFormat::Dense,
        StorageFormat::Coo,
        StorageFormat::CompressedTime,
        StorageFormat::CompressedUnits,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::Dense),
            1 => Ok(Self::Coo),
            2 => Ok(Self::CompressedTime),
            3 => Ok(Self::CompressedUnits),
            _ => Err(Error::Corrupt(format!("format tag {tag} out of range"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Coo => "coo",
            Self::CompressedTime => "time",
            Self::CompressedUnits => "units",
        }
    }
}

impl fmt::Display for StorageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StorageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "coo" => Ok(Self::Coo),
            "time" | "compressed-time" => Ok(Self::CompressedTime),
            "units" | "compressed-units" => Ok(Self::CompressedUnits),
            other => Err(Error::Domain(format!("unknown storage format {other:?}"))),
        }
    }
}

/// How the offset list of the compressed formats is counted.
///
/// `Nominal` charges `⌈log2 S⌉` bits per offset, `Exact` charges
/// `width(S+1)`, which is what the encoder emits. The two differ by one bit
/// per offset when `S` is a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    Nominal,
    Exact,
}

pub fn cost_dense(n: u64, t: u64) -> u64 {
    n * t
}

pub fn cost_coo(n: u64, t: u64, s: u64) -> u64 {
    s * (width(n) + width(t)) as u64
}

fn offset_width(s: u64, mode: CostMode) -> u64 {
    match mode {
        // ⌈log2 S⌉ with the S <= 1 case mapped to 0
        CostMode::Nominal => width(s) as u64,
        CostMode::Exact => width(s + 1) as u64,
    }
}

pub fn cost_time(n: u64, t: u64, s: u64, mode: CostMode) -> u64 {
    s * width(t) as u64 + (n - 1) * offset_width(s, mode)
}

pub fn cost_units(n: u64, t: u64, s: u64, mode: CostMode) -> u64 {
    s * width(n) as u64 + (t - 1) * offset_width(s, mode)
}

pub fn cost(format: StorageFormat, n: u64, t: u64, s: u64, mode: CostMode) -> u64 {
    match format {
        StorageFormat::Dense => cost_dense(n, t),
        StorageFormat::Coo => cost_coo(n, t, s),
        StorageFormat::CompressedTime => cost_time(n, t, s, mode),
        StorageFormat::CompressedUnits => cost_units(n, t, s, mode),
    }
}

/// Payload bit counts of all four formats for one `(N, T, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub n: u64,
    pub t: u64,
    pub s: u64,
    pub bits_dense: u64,
    pub bits_coo: u64,
    pub bits_time: u64,
    pub bits_units: u64,
    /// Cheapest format; ties go to the lowest tag.
    pub best: StorageFormat,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "N,T,S,bits_dense,bits_coo,bits_time,bits_units,best";

    pub fn bits(&self, format: StorageFormat) -> u64 {
        match format {
            StorageFormat::Dense => self.bits_dense,
            StorageFormat::Coo => self.bits_coo,
            StorageFormat::CompressedTime => self.bits_time,
            StorageFormat::CompressedUnits => self.bits_units,
        }
    }

    pub fn best_bits(&self) -> u64 {
        self.bits(self.best)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.t,
            self.s,
            self.bits_dense,
            self.bits_coo,
            self.bits_time,
            self.bits_units,
            self.best
        )
    }
}

pub fn cost_report_with_mode(n: u64, t: u64, s: u64, mode: CostMode) -> CostReport {
    let bits = StorageFormat::ALL.map(|f| cost(f, n, t, s, mode));
    // strict `<` keeps the lowest tag on ties
    let mut best = 0;
    for k in 1..4 {
        if bits[k] < bits[best] {
            best = k;
        }
    }
    CostReport {
        n,
        t,
        s,
        bits_dense: bits[0],
        bits_coo: bits[1],
        bits_time: bits[2],
        bits_units: bits[3],
        best: StorageFormat::ALL[best],
    }
}

/// Exact-mode costs and the cheapest format.
pub fn cost_report(n: u64, t: u64, s: u64) -> CostReport {
    cost_report_with_mode(n, t, s, CostMode::Exact)
}

/// Writes the payload of `m` in `format` to `out`.
pub fn encode_into(m: &EventMatrix, format: StorageFormat, out: &mut BitBuffer) {
    let (n, t, s) = (m.n_units(), m.n_steps(), m.event_count());
    let wn = width(n as u64);
    let wt = width(t as u64);
    let wo = width(s as u64 + 1);
    // every value below is in range by construction of EventMatrix
    let mut put = |v: usize, w: u32| out.write_bits(v as u64, w).unwrap();
    match format {
        StorageFormat::Dense => {
            // rows are emitted in 64-bit words
            let mut events = m.events().iter().peekable();
            for i in 0..n {
                let mut start = 0;
                while start < t {
                    let len = (t - start).min(64);
                    let mut word = 0u64;
                    while let Some(&&(_, step)) = events.peek().filter(|e| e.0 == i && e.1 < start + len) {
                        word |= 1 << (len - 1 - (step - start));
                        events.next();
                    }
                    out.write_bits(word, len as u32).unwrap();
                    start += len;
                }
            }
        }
        StorageFormat::Coo => {
            for &(i, step) in m.events() {
                put(i, wn);
                put(step, wt);
            }
        }
        StorageFormat::CompressedTime => {
            for &(_, step) in m.events() {
                put(step, wt);
            }
            let mut cum = 0;
            for count in &m.unit_counts()[..n - 1] {
                cum += count;
                put(cum, wo);
            }
        }
        StorageFormat::CompressedUnits => {
            let by_step = m.step_major();
            let mut counts = vec![0usize; t];
            for &(step, i) in &by_step {
                put(i, wn);
                counts[step] += 1;
            }
            let mut cum = 0;
            for count in &counts[..t - 1] {
                cum += count;
                put(cum, wo);
            }
        }
    }
}

pub fn encode(m: &EventMatrix, format: StorageFormat) -> BitBuffer {
    let bits = cost(
        format,
        m.n_units() as u64,
        m.n_steps() as u64,
        m.event_count() as u64,
        CostMode::Exact,
    );
    let mut out = BitBuffer::with_capacity_bits(bits as usize);
    encode_into(m, format, &mut out);
    out
}

fn decode_dense(cur: &mut BitCursor<'_>, n: usize, t: usize) -> Result<EventMatrix> {
    let mut events = Vec::new();
    for i in 0..n {
        let mut start = 0;
        while start < t {
            let len = (t - start).min(64);
            let mut word = cur.read_bits(len as u32)?;
            while word != 0 {
                let bit = 63 - word.leading_zeros() as usize;
                events.push((i, start + len - 1 - bit));
                word &= !(1 << bit);
            }
            start += len;
        }
    }
    Ok(EventMatrix::from_sorted_unchecked(n, t, events))
}

fn read_index(cur: &mut BitCursor<'_>, w: u32, bound: usize, what: &str) -> Result<usize> {
    let v = cur.read_bits(w)? as usize;
    if v >= bound {
        return Err(Error::Corrupt(format!("{what} index {v} out of range 0..{bound}")));
    }
    Ok(v)
}

/// Reads `count - 1` interior offsets and returns the full list `[0, .., s]`.
fn read_offsets(cur: &mut BitCursor<'_>, count: usize, s: usize) -> Result<Vec<usize>> {
    let wo = width(s as u64 + 1);
    let mut offsets = Vec::with_capacity(count + 1);
    offsets.push(0);
    for _ in 1..count {
        let v = cur.read_bits(wo)? as usize;
        if v > s {
            return Err(Error::Corrupt(format!("offset {v} exceeds event count {s}")));
        }
        if v < *offsets.last().unwrap() {
            return Err(Error::Corrupt(format!("non-monotone offset {v}")));
        }
        offsets.push(v);
    }
    offsets.push(s);
    Ok(offsets)
}

/// Reads one payload of `format` from `cur`. For `Dense` the event count is
/// implied by the bitmap and `s` must agree with it.
pub fn decode(
    cur: &mut BitCursor<'_>,
    n: usize,
    t: usize,
    s: usize,
    format: StorageFormat,
) -> Result<EventMatrix> {
    if n == 0 || t == 0 {
        return Err(Error::Shape(format!("dimensions must be positive, got {n}x{t}")));
    }
    if s > n * t {
        return Err(Error::Corrupt(format!("event count {s} exceeds N*T = {}", n * t)));
    }
    let wn = width(n as u64);
    let wt = width(t as u64);
    let m = match format {
        StorageFormat::Dense => {
            let m = decode_dense(cur, n, t)?;
            if m.event_count() != s {
                return Err(Error::Corrupt(format!(
                    "dense payload holds {} events, expected {s}",
                    m.event_count()
                )));
            }
            m
        }
        StorageFormat::Coo => {
            let mut events = Vec::with_capacity(s);
            for _ in 0..s {
                let i = read_index(cur, wn, n, "unit")?;
                let step = read_index(cur, wt, t, "step")?;
                if events.last().is_some_and(|&last| last >= (i, step)) {
                    return Err(Error::Corrupt(format!(
                        "coordinate ({i},{step}) breaks canonical order"
                    )));
                }
                events.push((i, step));
            }
            EventMatrix::from_sorted_unchecked(n, t, events)
        }
        StorageFormat::CompressedTime => {
            let steps = (0..s)
                .map(|_| read_index(cur, wt, t, "step"))
                .collect::<Result<Vec<_>>>()?;
            let offsets = read_offsets(cur, n, s)?;
            let mut events = Vec::with_capacity(s);
            for i in 0..n {
                let run = &steps[offsets[i]..offsets[i + 1]];
                if run.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Corrupt(format!("unit {i} steps not strictly increasing")));
                }
                events.extend(run.iter().map(|&step| (i, step)));
            }
            EventMatrix::from_sorted_unchecked(n, t, events)
        }
        StorageFormat::CompressedUnits => {
            let units = (0..s)
                .map(|_| read_index(cur, wn, n, "unit"))
                .collect::<Result<Vec<_>>>()?;
            let offsets = read_offsets(cur, t, s)?;
            let mut events = Vec::with_capacity(s);
            for step in 0..t {
                let run = &units[offsets[step]..offsets[step + 1]];
                if run.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Corrupt(format!(
                        "step {step} units not strictly increasing"
                    )));
                }
                events.extend(run.iter().map(|&i| (i, step)));
            }
            // counting sort back to unit-major order
            let mut starts = vec![0usize; n + 1];
            for &(i, _) in &events {
                starts[i + 1] += 1;
            }
            for i in 0..n {
                starts[i + 1] += starts[i];
            }
            let mut sorted = vec![(0, 0); events.len()];
            for &(i, step) in &events {
                sorted[starts[i]] = (i, step);
                starts[i] += 1;
            }
            EventMatrix::from_sorted_unchecked(n, t, sorted)
        }
    };
    Ok(m)
}

/// Decodes a standalone payload, which must hold exactly the expected bits.
pub fn decode_payload(
    payload: &BitBuffer,
    n: usize,
    t: usize,
    s: usize,
    format: StorageFormat,
) -> Result<EventMatrix> {
    let expected = cost(format, n as u64, t as u64, s as u64, CostMode::Exact) as usize;
    if payload.len_bits() != expected {
        return Err(Error::Corrupt(format!(
            "payload has {} bits, expected {expected}",
            payload.len_bits()
        )));
    }
    let mut cur = BitCursor::with_limit(payload.as_bytes(), payload.len_bits());
    decode(&mut cur, n, t, s, format)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub n_units: u32,
    pub n_steps: u32,
    pub s_max: u32,
    pub sample_count: u32,
}

impl StreamHeader {
    pub fn to_bytes(&self) -> [u8; STREAM_HEADER_BYTES] {
        let mut out = [0u8; STREAM_HEADER_BYTES];
        out[..4].copy_from_slice(&STREAM_MAGIC);
        out[4] = self.version;
        out[5..9].copy_from_slice(&self.n_units.to_be_bytes());
        out[9..13].copy_from_slice(&self.n_steps.to_be_bytes());
        out[13..17].copy_from_slice(&self.s_max.to_be_bytes());
        out[17..21].copy_from_slice(&self.sample_count.to_be_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != STREAM_MAGIC {
            return Err(Error::BadMagic {
                expected: STREAM_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < STREAM_HEADER_BYTES {
            return Err(Error::Truncated {
                position: bytes.len() * 8,
                needed: STREAM_HEADER_BYTES * 8,
                available: bytes.len() * 8,
            });
        }
        if bytes[4] != STREAM_VERSION {
            return Err(Error::Version {
                expected: STREAM_VERSION,
                found: bytes[4],
            });
        }
        let be = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
        let header = StreamHeader {
            version: bytes[4],
            n_units: be(5),
            n_steps: be(9),
            s_max: be(13),
            sample_count: be(17),
        };
        let cells = header.n_units as u64 * header.n_steps as u64;
        if header.s_max as u64 > cells {
            return Err(Error::Corrupt(format!(
                "s_max {} exceeds N*T = {cells}",
                header.s_max
            )));
        }
        if header.sample_count > 0 && cells == 0 {
            return Err(Error::Corrupt("samples declared with an empty shape".into()));
        }
        Ok(header)
    }

    /// Width of the per-sample event-count field.
    pub fn count_width(&self) -> u32 {
        width(self.s_max as u64 + 1)
    }
}

/// Per-sample format selection policy for [`pack_stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatChoice {
    /// Cheapest exact-cost format per sample.
    Auto,
    Fixed(StorageFormat),
}

/// Tag + count field bits charged to one sample on top of its payload.
pub fn sample_overhead_bits(format: StorageFormat, s_max: u64) -> u64 {
    match format {
        StorageFormat::Dense => TAG_BITS as u64,
        _ => TAG_BITS as u64 + width(s_max + 1) as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSample {
    pub format: StorageFormat,
    pub event_count: u64,
    pub payload_bits: u64,
    pub overhead_bits: u64,
}

/// A serialized container together with per-sample accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedStream {
    pub header: StreamHeader,
    pub samples: Vec<PackedSample>,
    pub bytes: Vec<u8>,
}

impl PackedStream {
    pub fn payload_bits(&self) -> u64 {
        self.samples.iter().map(|s| s.payload_bits).sum()
    }

    /// Payload plus per-sample tag and count fields, excluding the header.
    pub fn body_bits(&self) -> u64 {
        self.samples
            .iter()
            .map(|s| s.payload_bits + s.overhead_bits)
            .sum()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub fn pack_stream(samples: &[EventMatrix], choice: FormatChoice) -> Result<PackedStream> {
    let (n, t) = match samples.first() {
        Some(m) => (m.n_units(), m.n_steps()),
        None => (0, 0),
    };
    if let Some((k, m)) = samples
        .iter()
        .enumerate()
        .find(|(_, m)| (m.n_units(), m.n_steps()) != (n, t))
    {
        return Err(Error::Shape(format!(
            "sample {k} is {}x{}, stream is {n}x{t}",
            m.n_units(),
            m.n_steps()
        )));
    }
    let s_max = samples.iter().map(|m| m.event_count()).max().unwrap_or(0);
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Domain(format!("{what} {v} does not fit in u32")))
    };
    let header = StreamHeader {
        version: STREAM_VERSION,
        n_units: to_u32(n, "n_units")?,
        n_steps: to_u32(t, "n_steps")?,
        s_max: to_u32(s_max, "s_max")?,
        sample_count: to_u32(samples.len(), "sample_count")?,
    };
    let count_width = header.count_width();
    let mut body = BitBuffer::new();
    let mut stats = Vec::with_capacity(samples.len());
    for m in samples {
        let s = m.event_count() as u64;
        let format = match choice {
            FormatChoice::Auto => cost_report(n as u64, t as u64, s).best,
            FormatChoice::Fixed(f) => f,
        };
        let before = body.len_bits();
        body.write_bits(format.tag() as u64, TAG_BITS)?;
        if format != StorageFormat::Dense {
            body.write_bits(s, count_width)?;
        }
        let overhead = (body.len_bits() - before) as u64;
        encode_into(m, format, &mut body);
        stats.push(PackedSample {
            format,
            event_count: s,
            payload_bits: (body.len_bits() - before) as u64 - overhead,
            overhead_bits: overhead,
        });
    }
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend_from_slice(body.as_bytes());
    Ok(PackedStream {
        header,
        samples: stats,
        bytes,
    })
}

pub fn unpack_stream(bytes: &[u8]) -> Result<Vec<EventMatrix>> {
    let header = StreamHeader::parse(bytes)?;
    let body = &bytes[STREAM_HEADER_BYTES..];
    let (n, t) = (header.n_units as usize, header.n_steps as usize);
    let count_width = header.count_width();
    let mut cur = BitCursor::new(body);
    let mut out = Vec::with_capacity(header.sample_count.min(1 << 16) as usize);
    for k in 0..header.sample_count {
        let format = StorageFormat::from_tag(cur.read_bits(TAG_BITS)? as u8)?;
        let m = if format == StorageFormat::Dense {
            decode_dense(&mut cur, n, t)?
        } else {
            let s = cur.read_bits(count_width)? as usize;
            if s > header.s_max as usize {
                return Err(Error::Corrupt(format!(
                    "sample {k} declares {s} events, above s_max {}",
                    header.s_max
                )));
            }
            decode(&mut cur, n, t, s, format)?
        };
        if m.event_count() > header.s_max as usize {
            return Err(Error::Corrupt(format!(
                "sample {k} holds {} events, above s_max {}",
                m.event_count(),
                header.s_max
            )));
        }
        out.push(m);
    }
    let rest = cur.remaining();
    if rest >= 8 {
        return Err(Error::Corrupt(format!("{} trailing bytes", rest / 8)));
    }
    if rest > 0 && cur.read_bits(rest as u32)? != 0 {
        return Err(Error::Corrupt("non-zero padding bits".into()));
    }
    Ok(out)
}
