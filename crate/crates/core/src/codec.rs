//! Box-level message codec.
//!
//! A message carries exactly `k_max` records of six fields `(x, y, w, l, yaw,
//! score)`. Each field is quantized with a b-bit zero-point quantizer
//!
//! ```text
//! s = (v_max - v_min) / (q_max - q_min)
//! z = round(q_min - v_min / s)
//! q = clip(round(v / s) + z, q_min, q_max)      v' = s * (q - z)
//! ```
//!
//! with `q_min = 0`, `q_max = 2^b - 1` and `round` = half away from zero. The
//! top `k_max` boxes by score are kept (ties: lower input index first) and the
//! rest of the message is zero-padded. A record whose `w` and `l` codes are
//! both zero is padding.
//!
//! Wire layout (no header, no checksum): records in order, fields in the order
//! above. 16- and 32-bit codes are little-endian; 4-bit codes are packed two
//! per byte, earlier field in the low nibble. 32-bit fields carry the raw
//! IEEE-754 single-precision bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{score_order, wrap_angle, BoxBEV};
use crate::raster::GridSpec;

pub const FIELD_NAMES: [&str; 6] = ["x", "y", "w", "l", "yaw", "score"];
pub const FIELD_COUNT: usize = 6;

const W: usize = 2;
const L: usize = 3;
const YAW: usize = 4;

pub const DEFAULT_W_RANGE: [f64; 2] = [0.0, 12.75];
pub const DEFAULT_L_RANGE: [f64; 2] = [0.0, 25.5];
pub const DEFAULT_K_MAX: usize = 20;
pub const DEFAULT_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub v_min: f64,
    pub v_max: f64,
    /// 4, 8 or 16 for integer codes; 32 passes the value through as `f32`.
    pub bits: u8,
    /// Angular field: `v_max - v_min` is one full period and decoded values
    /// are wrapped back into the range.
    #[serde(default)]
    pub periodic: bool,
}

impl FieldSpec {
    pub fn new(v_min: f64, v_max: f64, bits: u8) -> Self {
        Self { v_min, v_max, bits, periodic: false }
    }

    pub fn angle(bits: u8) -> Self {
        Self { v_min: -std::f64::consts::PI, v_max: std::f64::consts::PI, bits, periodic: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bits, 4 | 8 | 16 | 32) {
            return Err(Error::config(format!("unsupported field width {} bits", self.bits)));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_max > self.v_min) {
            return Err(Error::config(format!("field range [{}, {}] is empty", self.v_min, self.v_max)));
        }
        Ok(())
    }

    pub fn is_passthrough(&self) -> bool {
        self.bits == 32
    }

    pub fn q_max(&self) -> u32 {
        if self.is_passthrough() {
            u32::MAX
        } else {
            (1u32 << self.bits) - 1
        }
    }

    /// Quantization step `s_v`.
    pub fn scale(&self) -> f64 {
        (self.v_max - self.v_min) / self.q_max() as f64
    }

    /// Zero point `z_v`.
    pub fn zero_point(&self) -> i64 {
        (0.0 - self.v_min / self.scale()).round() as i64
    }
}

/// Field value to code. Out-of-range values clip; NaN maps to code 0.
pub fn quantize_field(v: f64, f: &FieldSpec) -> u32 {
    if f.is_passthrough() {
        return (v as f32).to_bits();
    }
    let q_max = f.q_max();
    let z = f.zero_point();
    let raw = (v / f.scale()).round();
    if raw.is_nan() {
        return 0;
    }
    let q = (raw + z as f64).clamp(0.0, q_max as f64) as u32;
    if f.periodic && q == 0 && (f.scale() * (0 - z) as f64) < f.v_min {
        // Code 0 then sits a full period below code q_max; keep the one inside the range.
        return q_max;
    }
    q
}

pub fn dequantize_field(code: u32, f: &FieldSpec) -> Result<f64> {
    if f.is_passthrough() {
        let v = f32::from_bits(code);
        if !v.is_finite() {
            return Err(Error::decode(format!("non-finite pass-through value {v}")));
        }
        return Ok(v as f64);
    }
    if code > f.q_max() {
        return Err(Error::decode(format!("code {code} exceeds {}-bit range", f.bits)));
    }
    Ok(f.scale() * (code as i64 - f.zero_point()) as f64)
}

/// Field quantizers for `(x, y, w, l, yaw, score)` plus the record cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSchema {
    pub fields: [FieldSpec; FIELD_COUNT],
    pub k_max: usize,
}

impl MessageSchema {
    /// Default ranges: x and y span the sender's detection range, `w ∈ [0, 12.75]`,
    /// `l ∈ [0, 25.5]`, yaw over one turn, score in `[0, 1]`.
    pub fn for_grid(grid: &GridSpec, bits: u8, k_max: usize) -> Self {
        Self {
            fields: [
                FieldSpec::new(grid.x_min, grid.x_max, bits),
                FieldSpec::new(grid.y_min, grid.y_max, bits),
                FieldSpec::new(DEFAULT_W_RANGE[0], DEFAULT_W_RANGE[1], bits),
                FieldSpec::new(DEFAULT_L_RANGE[0], DEFAULT_L_RANGE[1], bits),
                FieldSpec::angle(bits),
                FieldSpec::new(0.0, 1.0, bits),
            ],
            k_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fields.iter().try_for_each(FieldSpec::validate)
    }

    /// Common width of all fields, if there is one.
    pub fn uniform_bits(&self) -> Option<u8> {
        let b = self.fields[0].bits;
        self.fields.iter().all(|f| f.bits == b).then_some(b)
    }

    pub fn record_bits(&self) -> u64 {
        self.fields.iter().map(|f| f.bits as u64).sum()
    }

    pub fn payload_bits(&self) -> u64 {
        self.k_max as u64 * self.record_bits()
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }
}

/// Bits per second for one message per frame at `rate_hz`.
pub fn bandwidth_bps(schema: &MessageSchema, rate_hz: f64) -> Result<f64> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::config(format!("message rate must be positive, got {rate_hz}")));
    }
    Ok(schema.payload_bits() as f64 * rate_hz)
}

pub type Record = [u32; FIELD_COUNT];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxMessage {
    pub records: Vec<Record>,
}

impl BoxMessage {
    pub fn padding_records(&self) -> usize {
        self.records.iter().filter(|r| is_padding(r)).count()
    }
}

fn is_padding(r: &Record) -> bool {
    r[W] == 0 && r[L] == 0
}

fn box_fields(b: &BoxBEV) -> [f64; FIELD_COUNT] {
    [b.x, b.y, b.w, b.l, wrap_angle(b.yaw), b.score]
}

pub fn encode_message(boxes: &[BoxBEV], schema: &MessageSchema) -> BoxMessage {
    let mut records: Vec<Record> = score_order(boxes)
        .into_iter()
        .take(schema.k_max)
        .map(|i| {
            let vals = box_fields(&boxes[i]);
            std::array::from_fn(|k| quantize_field(vals[k], &schema.fields[k]))
        })
        .collect();
    records.resize(schema.k_max, [0; FIELD_COUNT]);
    BoxMessage { records }
}

/// Dequantizes all non-padding records.
pub fn decode_message(m: &BoxMessage, schema: &MessageSchema) -> Result<Vec<BoxBEV>> {
    if m.records.len() != schema.k_max {
        return Err(Error::decode(format!("message has {} records, schema expects {}", m.records.len(), schema.k_max)));
    }
    let mut boxes = Vec::new();
    for r in m.records.iter().filter(|r| !is_padding(r)) {
        let mut v = [0.0; FIELD_COUNT];
        for k in 0..FIELD_COUNT {
            v[k] = dequantize_field(r[k], &schema.fields[k])?;
        }
        boxes.push(BoxBEV::new(v[0], v[1], v[2], v[3], wrap_angle(v[YAW]), v[5]));
    }
    Ok(boxes)
}

fn wire_bits(schema: &MessageSchema) -> Result<u8> {
    schema.uniform_bits().ok_or_else(|| Error::config("wire format needs one bit width for all fields"))
}

pub fn serialize(m: &BoxMessage, schema: &MessageSchema) -> Result<Vec<u8>> {
    let bits = wire_bits(schema)?;
    let codes = m.records.iter().flatten().copied();
    let mut out = Vec::with_capacity((m.records.len() * FIELD_COUNT * bits as usize).div_ceil(8));
    match bits {
        4 => {
            let codes: Vec<u32> = codes.collect();
            for pair in codes.chunks(2) {
                let lo = pair[0] & 0xF;
                let hi = pair.get(1).map_or(0, |c| c & 0xF);
                out.push((lo | hi << 4) as u8);
            }
        }
        8 => out.extend(codes.map(|c| c as u8)),
        16 => codes.for_each(|c| out.extend_from_slice(&(c as u16).to_le_bytes())),
        32 => codes.for_each(|c| out.extend_from_slice(&c.to_le_bytes())),
        _ => return Err(Error::config(format!("unsupported field width {bits} bits"))),
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8], schema: &MessageSchema) -> Result<BoxMessage> {
    let bits = wire_bits(schema)?;
    let expect = schema.payload_bytes();
    if bytes.len() != expect {
        return Err(Error::decode(format!("payload is {} bytes, schema expects {expect}", bytes.len())));
    }
    let n = schema.k_max * FIELD_COUNT;
    let codes: Vec<u32> = match bits {
        4 => (0..n).map(|i| ((bytes[i / 2] >> (4 * (i % 2))) & 0xF) as u32).collect(),
        8 => bytes.iter().map(|&b| b as u32).collect(),
        16 => bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect(),
        32 => bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        _ => return Err(Error::config(format!("unsupported field width {bits} bits"))),
    };
    let records = codes.chunks_exact(FIELD_COUNT).map(|c| std::array::from_fn(|k| c[k])).collect();
    Ok(BoxMessage { records })
}
