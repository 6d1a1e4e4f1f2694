//! MSB-first bit packing used by the significance-map and coefficient coders.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits already used in the trailing byte (0..=7).
    fill: u8,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.fill == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().unwrap();
            *last |= 1 << (7 - self.fill);
        }
        self.fill = (self.fill + 1) % 8;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u8) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Unary code: `n` ones followed by a zero.
    pub fn push_unary(&mut self, n: u64) {
        for _ in 0..n {
            self.push_bit(true);
        }
        self.push_bit(false);
    }

    pub fn bit_len(&self) -> u64 {
        if self.fill == 0 {
            self.bytes.len() as u64 * 8
        } else {
            (self.bytes.len() as u64 - 1) * 8 + self.fill as u64
        }
    }

    /// Zero-pads to a byte boundary and returns the buffer.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    section: &'static str,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], section: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            section,
        }
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self.pos / 8;
        if byte as usize >= self.bytes.len() {
            return Err(Error::stream(self.section, "ran out of bits"));
        }
        let bit = (self.bytes[byte as usize] >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    pub fn read_bits(&mut self, width: u8) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_unary(&mut self) -> Result<u64> {
        let mut n = 0;
        while self.read_bit()? {
            n += 1;
            if n > self.bytes.len() as u64 * 8 {
                return Err(Error::stream(self.section, "unbounded unary run"));
            }
        }
        Ok(n)
    }

    pub fn bits_read(&self) -> u64 {
        self.pos
    }
}
