//! MSB-first bit writer and reader.
//!
//! Every field is written most-significant bit first and packed without
//! alignment. The final byte is zero-filled.

use crate::error::{Error, Result};

/// Maximum width of a single field.
pub const MAX_WIDTH: u32 = 64;

/// Growable bit buffer. Unused trailing bits of the last byte are always zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitBuffer {
    payload: Vec<u8>,
    length_bits: usize,
}

impl BitBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: usize) -> Self {
        Self {
            payload: Vec::with_capacity(bits.div_ceil(8)),
            length_bits: 0,
        }
    }

    pub fn len_bits(&self) -> usize {
        self.length_bits
    }

    pub fn is_empty(&self) -> bool {
        self.length_bits == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.payload
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, width: u32) -> Result<()> {
        if width > MAX_WIDTH {
            return Err(Error::Domain(format!("field width {width} exceeds {MAX_WIDTH}")));
        }
        if width < 64 && value >> width != 0 {
            return Err(Error::Domain(format!(
                "value {value} does not fit in {width} bits"
            )));
        }
        let mut remaining = width;
        while remaining > 0 {
            let bit_in_byte = (self.length_bits % 8) as u32;
            if bit_in_byte == 0 {
                self.payload.push(0);
            }
            let free = 8 - bit_in_byte;
            let take = free.min(remaining);
            // next `take` bits of value, counted from the top of the field
            let chunk = ((value >> (remaining - take)) & ((1u64 << take) - 1)) as u8;
            let last = self.payload.len() - 1;
            self.payload[last] |= chunk << (free - take);
            remaining -= take;
            self.length_bits += take as usize;
        }
        Ok(())
    }

    pub fn write_bit(&mut self, bit: bool) {
        // width 1 always fits
        self.write_bits(bit as u64, 1).unwrap();
    }

    /// Appends every bit of `other`.
    pub fn append(&mut self, other: &BitBuffer) {
        let mut cursor = BitCursor::new(&other.payload);
        let mut left = other.length_bits;
        while left > 0 {
            let w = left.min(64) as u32;
            let v = cursor.read_bits(w).unwrap();
            self.write_bits(v, w).unwrap();
            left -= w as usize;
        }
    }

    /// Renders the buffer as a string of '0'/'1' characters.
    pub fn to_bit_string(&self) -> String {
        (0..self.length_bits)
            .map(|i| {
                if self.payload[i / 8] >> (7 - i % 8) & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }
}

/// Read position over a borrowed byte slice.
#[derive(Debug, Clone)]
pub struct BitCursor<'a> {
    source: &'a [u8],
    position_bits: usize,
    limit_bits: usize,
}

impl<'a> BitCursor<'a> {
    pub fn new(source: &'a [u8]) -> Self {
        Self {
            source,
            position_bits: 0,
            limit_bits: source.len() * 8,
        }
    }

    /// Cursor that refuses to read past `limit_bits`.
    pub fn with_limit(source: &'a [u8], limit_bits: usize) -> Self {
        Self {
            source,
            position_bits: 0,
            limit_bits: limit_bits.min(source.len() * 8),
        }
    }

    pub fn position(&self) -> usize {
        self.position_bits
    }

    pub fn remaining(&self) -> usize {
        self.limit_bits - self.position_bits
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        if width > MAX_WIDTH {
            return Err(Error::Domain(format!("field width {width} exceeds {MAX_WIDTH}")));
        }
        if width as usize > self.remaining() {
            return Err(Error::Truncated {
                position: self.position_bits,
                needed: width as usize,
                available: self.remaining(),
            });
        }
        let mut value = 0u64;
        let mut remaining = width;
        while remaining > 0 {
            let byte = self.source[self.position_bits / 8];
            let bit_in_byte = (self.position_bits % 8) as u32;
            let avail = 8 - bit_in_byte;
            let take = avail.min(remaining);
            let chunk = (byte >> (avail - take)) & (((1u16 << take) - 1) as u8);
            value = (value << take) | chunk as u64;
            remaining -= take;
            self.position_bits += take as usize;
        }
        Ok(value)
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        Ok(self.read_bits(1)? == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn writes_msb_first() {
        let mut b = BitBuffer::new();
        b.write_bits(5, 3).unwrap();
        assert_eq!(b.to_bit_string(), "101");
        assert_eq!(b.len_bits(), 3);
        assert_eq!(b.as_bytes(), &[0b1010_0000]);

        let mut b = BitBuffer::new();
        b.write_bits(200, 8).unwrap();
        assert_eq!(b.to_bit_string(), "11001000");
    }

    #[test]
    fn zero_width_is_noop() {
        let mut b = BitBuffer::new();
        b.write_bits(0, 0).unwrap();
        assert_eq!(b, BitBuffer::new());
        let mut c = BitCursor::new(&[0xff]);
        assert_eq!(c.read_bits(0).unwrap(), 0);
        assert_eq!(c.position(), 0);
    }

    #[test]
    fn rejects_oversized_value() {
        let mut b = BitBuffer::new();
        assert!(matches!(b.write_bits(8, 3), Err(Error::Domain(_))));
        assert!(matches!(b.write_bits(1, 0), Err(Error::Domain(_))));
        assert!(matches!(b.write_bits(0, 65), Err(Error::Domain(_))));
        assert!(b.is_empty());
    }

    #[test]
    fn full_width_fields() {
        let mut b = BitBuffer::new();
        b.write_bits(1, 1).unwrap();
        b.write_bits(u64::MAX, 64).unwrap();
        b.write_bits(0x8000_0000_0000_0001, 64).unwrap();
        let mut c = BitCursor::new(b.as_bytes());
        assert_eq!(c.read_bits(1).unwrap(), 1);
        assert_eq!(c.read_bits(64).unwrap(), u64::MAX);
        assert_eq!(c.read_bits(64).unwrap(), 0x8000_0000_0000_0001);
    }

    #[test]
    fn truncated_read() {
        let mut b = BitBuffer::new();
        b.write_bits(5, 3).unwrap();
        let mut c = BitCursor::with_limit(b.as_bytes(), b.len_bits());
        assert_eq!(c.read_bits(3).unwrap(), 5);
        assert!(matches!(c.read_bits(1), Err(Error::Truncated { .. })));
        let mut c = BitCursor::new(&[]);
        assert!(matches!(c.read_bits(1), Err(Error::Truncated { .. })));
    }

    #[test]
    fn append_concatenates() {
        let mut a = BitBuffer::new();
        a.write_bits(0b101, 3).unwrap();
        let mut b = BitBuffer::new();
        b.write_bits(0b0011, 4).unwrap();
        b.write_bits(0x1ff, 9).unwrap();
        a.append(&b);
        assert_eq!(a.to_bit_string(), "1010011111111111");
    }

    fn field() -> impl Strategy<Value = (u64, u32)> {
        (0u32..=64).prop_flat_map(|w| {
            let max = if w == 64 { u64::MAX } else { (1u64 << w).wrapping_sub(1) };
            (0..=max, Just(w))
        })
    }

    proptest! {
        #[test]
        fn round_trip(fields in proptest::collection::vec(field(), 0..64)) {
            let mut b = BitBuffer::new();
            for &(v, w) in &fields {
                b.write_bits(v, w).unwrap();
            }
            let total: usize = fields.iter().map(|f| f.1 as usize).sum();
            prop_assert_eq!(b.len_bits(), total);
            prop_assert!(b.as_bytes().len() * 8 >= total && b.as_bytes().len() * 8 < total + 8);
            if total % 8 != 0 {
                let last = *b.as_bytes().last().unwrap();
                prop_assert_eq!(last & ((1u8 << (8 - total % 8)) - 1), 0);
            }
            let mut again = BitBuffer::new();
            for &(v, w) in &fields {
                again.write_bits(v, w).unwrap();
            }
            prop_assert_eq!(&again, &b);
            let mut c = BitCursor::with_limit(b.as_bytes(), b.len_bits());
            for &(v, w) in &fields {
                prop_assert_eq!(c.read_bits(w).unwrap(), v);
            }
            prop_assert_eq!(c.remaining(), 0);
        }
    }
}
