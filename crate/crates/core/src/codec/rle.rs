//! Run-length coding of significance rows with Golomb codes.
//!
//! Run lengths of each state are geometric under the chain model, so a
//! Golomb code with the Gallager-van Voorhis parameter derived from the
//! persistence probability is the optimal prefix code for them. The row is
//! sent as one leading state bit followed by alternating run lengths.

use crate::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Optimal Golomb modulus for geometric run lengths with continuation
/// probability `stay`: the smallest `m` with `stay^m + stay^(m+1) <= 1`.
pub fn golomb_parameter(stay: f64) -> u64 {
    if !(stay > 0.0) {
        return 1;
    }
    let stay = stay.min(1.0 - 1e-9);
    let m = ((1.0 + stay).ln() / -stay.ln()).ceil();
    (m as u64).clamp(1, 1 << 20)
}

fn minimal_binary_len(value: u64, modulus: u64) -> u8 {
    debug_assert!(value < modulus);
    if modulus == 1 {
        return 0;
    }
    let b = 64 - (modulus - 1).leading_zeros().max(0) as u8;
    let cutoff = (1u64 << b) - modulus;
    if value < cutoff {
        b - 1
    } else {
        b
    }
}

fn write_minimal_binary(writer: &mut BitWriter, value: u64, modulus: u64) {
    if modulus == 1 {
        return;
    }
    let b = 64 - (modulus - 1).leading_zeros() as u8;
    let cutoff = (1u64 << b) - modulus;
    if value < cutoff {
        writer.push_bits(value, b - 1);
    } else {
        writer.push_bits(value + cutoff, b);
    }
}

fn read_minimal_binary(reader: &mut BitReader<'_>, modulus: u64) -> Result<u64> {
    if modulus == 1 {
        return Ok(0);
    }
    let b = 64 - (modulus - 1).leading_zeros() as u8;
    let cutoff = (1u64 << b) - modulus;
    let head = reader.read_bits(b - 1)?;
    if head < cutoff {
        Ok(head)
    } else {
        let tail = reader.read_bit()? as u64;
        Ok((head << 1 | tail) - cutoff)
    }
}

fn write_golomb(writer: &mut BitWriter, value: u64, modulus: u64) {
    writer.push_unary(value / modulus);
    write_minimal_binary(writer, value % modulus, modulus);
}

fn read_golomb(reader: &mut BitReader<'_>, modulus: u64) -> Result<u64> {
    let q = reader.read_unary()?;
    Ok(q * modulus + read_minimal_binary(reader, modulus)?)
}

/// Exact code length in bits for one run of `len >= 1` in state `stay`.
pub fn golomb_run_bits(len: u64, modulus: u64) -> u64 {
    let value = len - 1;
    value / modulus + 1 + minimal_binary_len(value % modulus, modulus) as u64
}

/// Encodes one binary significance row. The Golomb moduli derive from the
/// transmitted persistence probabilities, so the decoder rebuilds them
/// without side information.
pub fn encode_runlengths_into(
    states: &[bool],
    stay_tonal: f64,
    stay_residual: f64,
    writer: &mut BitWriter,
) -> Result<()> {
    if states.is_empty() {
        return Err(Error::invalid("cannot encode an empty state row"));
    }
    let modulus = [
        golomb_parameter(stay_tonal),
        golomb_parameter(stay_residual),
    ];
    writer.push_bit(states[0]);
    let mut run_state = states[0];
    let mut run_len = 0u64;
    for &s in states {
        if s == run_state {
            run_len += 1;
        } else {
            write_golomb(writer, run_len - 1, modulus[!run_state as usize & 1]);
            run_state = s;
            run_len = 1;
        }
    }
    write_golomb(writer, run_len - 1, modulus[!run_state as usize & 1]);
    Ok(())
}

pub fn decode_runlengths_from(
    reader: &mut BitReader<'_>,
    row_len: usize,
    stay_tonal: f64,
    stay_residual: f64,
) -> Result<Vec<bool>> {
    if row_len == 0 {
        return Err(Error::invalid("cannot decode an empty state row"));
    }
    let modulus = [
        golomb_parameter(stay_tonal),
        golomb_parameter(stay_residual),
    ];
    let mut states = Vec::with_capacity(row_len);
    let mut state = reader.read_bit()?;
    while states.len() < row_len {
        let run = read_golomb(reader, modulus[!state as usize & 1])? + 1;
        if states.len() + run as usize > row_len {
            return Err(Error::stream(
                "tonal-map",
                format!(
                    "run of {run} overflows row of {row_len} at position {}",
                    states.len()
                ),
            ));
        }
        states.extend(std::iter::repeat(state).take(run as usize));
        state = !state;
    }
    Ok(states)
}

/// Convenience wrappers over a fresh buffer.
pub fn encode_runlengths(
    states: &[bool],
    stay_tonal: f64,
    stay_residual: f64,
) -> Result<(Vec<u8>, u64)> {
    let mut writer = BitWriter::new();
    encode_runlengths_into(states, stay_tonal, stay_residual, &mut writer)?;
    let bits = writer.bit_len();
    Ok((writer.into_bytes(), bits))
}

pub fn decode_runlengths(
    bytes: &[u8],
    row_len: usize,
    stay_tonal: f64,
    stay_residual: f64,
) -> Result<Vec<bool>> {
    let mut reader = BitReader::new(bytes, "tonal-map");
    decode_runlengths_from(&mut reader, row_len, stay_tonal, stay_residual)
}
