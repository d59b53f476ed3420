//! Range coding of 16-way symbols under per-symbol frequency tables.
//!
//! Every table row is quantized to 16 positive integer frequencies summing to
//! `2^16`, so encoder and decoder work on identical integer models and no
//! floating point enters the coding loop. The coder keeps a 32-bit range and
//! a 33-bit low with byte-wise carry propagation; it renormalizes one byte at
//! a time whenever the range drops below `2^24`.

use thiserror::Error;

pub const SYMBOLS: usize = 16;
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const TOP: u32 = 1 << 24;

/// Quantized frequencies of one row; entries are `>= 1` and sum to `PROB_TOTAL`.
pub type FreqRow = [u32; SYMBOLS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("probability row {row} is not finite, negative or sums to zero")]
    BadRow { row: usize },
    #[error("symbol {symbol} at index {index} is outside [0, 16)")]
    SymbolRange { index: usize, symbol: u8 },
    #[error("{symbols} symbols but {rows} table rows")]
    LengthMismatch { symbols: usize, rows: usize },
    #[error("coded chunk ended before all symbols were decoded")]
    Exhausted,
    #[error("coded chunk is corrupt or was decoded with a different table")]
    Corrupt,
}

/// Per-point 16-way symbol distributions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityTable {
    rows: Vec<[f64; SYMBOLS]>,
}

impl ProbabilityTable {
    pub fn new(rows: Vec<[f64; SYMBOLS]>) -> Result<Self, EntropyError> {
        for (row, r) in rows.iter().enumerate() {
            if !row_is_valid(r) {
                return Err(EntropyError::BadRow { row });
            }
        }
        Ok(ProbabilityTable { rows })
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityTable {
            rows: vec![[1.0 / SYMBOLS as f64; SYMBOLS]; n],
        }
    }

    pub fn rows(&self) -> &[[f64; SYMBOLS]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn quantize(&self) -> Result<Vec<FreqRow>, EntropyError> {
        quantize_probs(&self.rows)
    }
}

fn row_is_valid(row: &[f64; SYMBOLS]) -> bool {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return false;
        }
        sum += p;
    }
    sum > 0.0 && sum.is_finite()
}

/// Largest-remainder quantization of one row to `PROB_TOTAL` with a floor of
/// one count per symbol. Ties in the remainder go to the lower symbol.
pub fn quantize_row(row: &[f64; SYMBOLS]) -> Option<FreqRow> {
    if !row_is_valid(row) {
        return None;
    }
    let sum: f64 = row.iter().sum();
    let spare = (PROB_TOTAL - SYMBOLS as u32) as f64;
    let mut out = [1u32; SYMBOLS];
    let mut frac = [0f64; SYMBOLS];
    let mut assigned = 0u32;
    for i in 0..SYMBOLS {
        let exact = row[i] / sum * spare;
        let base = exact.floor();
        frac[i] = exact - base;
        out[i] += base as u32;
        assigned += base as u32;
    }
    let left = (PROB_TOTAL - SYMBOLS as u32).saturating_sub(assigned) as usize;
    debug_assert!(left <= SYMBOLS);
    if left > 0 {
        let mut order: [usize; SYMBOLS] = std::array::from_fn(|i| i);
        // stable: equal remainders keep ascending symbol order
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap());
        for &i in order.iter().take(left) {
            out[i] += 1;
        }
    }
    debug_assert_eq!(out.iter().sum::<u32>(), PROB_TOTAL);
    Some(out)
}

pub fn quantize_probs(rows: &[[f64; SYMBOLS]]) -> Result<Vec<FreqRow>, EntropyError> {
    rows.iter()
        .enumerate()
        .map(|(row, r)| quantize_row(r).ok_or(EntropyError::BadRow { row }))
        .collect()
}

/// Ideal code length in bits of a symbol with quantized frequency `freq`.
pub fn symbol_bits(freq: u32) -> f64 {
    -(freq as f64 / PROB_TOTAL as f64).log2()
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    // the very first cache byte is always zero and is never written
    leading: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            leading: true,
            out: Vec::new(),
        }
    }

    #[inline]
    pub fn encode(&mut self, symbol: usize, row: &FreqRow) {
        let mut cum = 0u32;
        for &f in &row[..symbol] {
            cum += f;
        }
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * cum as u64;
        if symbol == SYMBOLS - 1 {
            self.range -= r * cum;
        } else {
            self.range = r * row[symbol];
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xff00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                let byte = temp.wrapping_add(carry);
                if self.leading {
                    debug_assert_eq!(byte, 0);
                    self.leading = false;
                } else {
                    self.out.push(byte);
                }
                temp = 0xff;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xff) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00ff_ffff) << 8;
    }

    /// Flushes the full 32-bit low so the decoder ends with a zero residual.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, EntropyError> {
        let mut dec = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8, EntropyError> {
        let b = *self.data.get(self.pos).ok_or(EntropyError::Exhausted)?;
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    pub fn decode(&mut self, row: &FreqRow) -> Result<u8, EntropyError> {
        let r = self.range >> PROB_BITS;
        let target = (self.code / r).min(PROB_TOTAL - 1);
        let mut cum = 0u32;
        let mut symbol = 0usize;
        while symbol < SYMBOLS - 1 && cum + row[symbol] <= target {
            cum += row[symbol];
            symbol += 1;
        }
        self.code -= r * cum;
        if symbol == SYMBOLS - 1 {
            self.range -= r * cum;
        } else {
            self.range = r * row[symbol];
        }
        if self.code >= self.range {
            return Err(EntropyError::Corrupt);
        }
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(symbol as u8)
    }

    /// Checks the terminator and returns the number of bytes consumed.
    pub fn finish(self) -> Result<usize, EntropyError> {
        if self.code != 0 {
            return Err(EntropyError::Corrupt);
        }
        Ok(self.pos)
    }
}

/// Arithmetic-coded symbols of one stage of one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedChunk {
    pub bytes: Vec<u8>,
    pub symbol_count: u32,
}

impl CodedChunk {
    pub fn payload_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

pub fn encode_symbols(symbols: &[u8], table: &[FreqRow]) -> Result<CodedChunk, EntropyError> {
    if symbols.len() != table.len() {
        return Err(EntropyError::LengthMismatch {
            symbols: symbols.len(),
            rows: table.len(),
        });
    }
    let mut enc = RangeEncoder::new();
    for (index, (&symbol, row)) in symbols.iter().zip(table).enumerate() {
        if symbol as usize >= SYMBOLS {
            return Err(EntropyError::SymbolRange { index, symbol });
        }
        enc.encode(symbol as usize, row);
    }
    Ok(CodedChunk {
        bytes: enc.finish(),
        symbol_count: symbols.len() as u32,
    })
}

pub fn decode_symbols(chunk: &CodedChunk, table: &[FreqRow]) -> Result<Vec<u8>, EntropyError> {
    let n = chunk.symbol_count as usize;
    if n != table.len() {
        return Err(EntropyError::LengthMismatch {
            symbols: n,
            rows: table.len(),
        });
    }
    let mut dec = RangeDecoder::new(&chunk.bytes)?;
    let mut out = Vec::with_capacity(n);
    for row in table {
        out.push(dec.decode(row)?);
    }
    if dec.finish()? != chunk.bytes.len() {
        return Err(EntropyError::Corrupt);
    }
    Ok(out)
}
