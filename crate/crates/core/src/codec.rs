//! Rate coding of real inputs into spike trains, and spike-count decoding.
//!
//! Encoding is Bernoulli per step driven by a counter-based SplitMix64
//! generator, so any (seed, sample, input, step) can be evaluated
//! independently and in any order:
//!
//! ```text
//! stream = mix64(mix64(seed ^ sample * K1) ^ input * K2)
//! u(t)   = mix64(stream + (t + 1) * GOLDEN) >> 11, scaled by 2^-53
//! fires  = u(t) < value
//! ```
//!
//! `mix64` is the SplitMix64 output finalizer and `GOLDEN` its increment.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const K_SAMPLE: u64 = 0xD1B5_4A32_D192_ED03;
const K_INPUT: u64 = 0xA24B_AED4_963E_E407;

const MAGIC: &[u8; 4] = b"SPKT";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("rate {0} is outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("spike window must be at least one step")]
    ZeroWindow,
    #[error("cannot decode an empty count vector")]
    EmptyCounts,
}

#[derive(Debug, Error)]
pub enum TrainFileError {
    #[error("not a spike-train file (bad magic)")]
    BadMagic,
    #[error("unsupported spike-train file version {0}")]
    Version(u16),
    #[error("record {index} names input {input} but the file has {n_inputs} inputs")]
    BadRecord { index: usize, input: u16, n_inputs: u16 },
    #[error("spike-train file is truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Independent stream for one input of one sample.
    pub fn stream(self, sample: u64, input: u64) -> RngSeed {
        RngSeed(mix64(mix64(self.0 ^ sample.wrapping_mul(K_SAMPLE)) ^ input.wrapping_mul(K_INPUT)))
    }

    /// Uniform in [0, 1) for step `t`.
    pub fn uniform(self, t: u64) -> f64 {
        let bits = mix64(self.0.wrapping_add(t.wrapping_add(1).wrapping_mul(GOLDEN)));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    bits: Vec<bool>,
}

impl SpikeTrain {
    pub fn new(bits: Vec<bool>) -> Self {
        SpikeTrain { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.bits[t]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Little-endian bit packing: step t is bit t % 8 of byte t / 8.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (t, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            out[t / 8] |= 1 << (t % 8);
        }
        out
    }

    pub fn from_packed(bytes: &[u8], steps: usize) -> Self {
        SpikeTrain { bits: (0..steps).map(|t| bytes[t / 8] & (1 << (t % 8)) != 0).collect() }
    }
}

pub fn rate_encode(value: f64, steps: usize, seed: RngSeed) -> Result<SpikeTrain, CodecError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(CodecError::ValueOutOfRange(value));
    }
    if steps == 0 {
        return Err(CodecError::ZeroWindow);
    }
    Ok(SpikeTrain { bits: (0..steps as u64).map(|t| seed.uniform(t) < value).collect() })
}

/// Trains for every input of one sample.
pub fn encode_sample(values: &[f64], steps: usize, seed: RngSeed, sample: u64) -> Result<Vec<SpikeTrain>, CodecError> {
    values.iter().enumerate().map(|(i, &v)| rate_encode(v, steps, seed.stream(sample, i as u64))).collect()
}

/// Per step, the indices of the inputs that fire. All trains must have the same length.
pub fn active_inputs(trains: &[SpikeTrain]) -> Vec<Vec<usize>> {
    let steps = trains.first().map_or(0, SpikeTrain::len);
    (0..steps).map(|t| (0..trains.len()).filter(|&i| trains[i].get(t)).collect()).collect()
}

/// Argmax with ties going to the lowest index.
pub fn decode_spikes(counts: &[u32]) -> Result<usize, CodecError> {
    let mut best: Option<(usize, u32)> = None;
    for (i, &c) in counts.iter().enumerate() {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((i, c));
        }
    }
    best.map(|(i, _)| i).ok_or(CodecError::EmptyCounts)
}

/// Spike-train fixture: every input train of a set of samples.
///
/// ```text
/// "SPKT" | version u16 | T u16 | n_inputs u16 | n_samples u32
/// per sample, per input: sample_id u32 | input_index u16 | ceil(T/8) bytes
/// ```
/// All integers little-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainFile {
    pub steps: u16,
    pub n_inputs: u16,
    pub samples: Vec<(u32, Vec<SpikeTrain>)>,
}

impl TrainFile {
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.steps.to_le_bytes())?;
        w.write_all(&self.n_inputs.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u32).to_le_bytes())?;
        for (id, trains) in &self.samples {
            for (i, train) in trains.iter().enumerate() {
                w.write_all(&id.to_le_bytes())?;
                w.write_all(&(i as u16).to_le_bytes())?;
                w.write_all(&train.to_packed())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrainFileError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TrainFileError> {
            let s = buf.get(at..at + n).ok_or(TrainFileError::Truncated)?;
            at += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(TrainFileError::BadMagic);
        }
        let u16_at = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]);
        let version = u16_at(take(2)?);
        if version != FORMAT_VERSION {
            return Err(TrainFileError::Version(version));
        }
        let steps = u16_at(take(2)?);
        let n_inputs = u16_at(take(2)?);
        let b = take(4)?;
        let n_samples = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let row = (steps as usize).div_ceil(8);
        let mut samples = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            let mut trains = Vec::with_capacity(n_inputs as usize);
            let mut id = 0;
            for i in 0..n_inputs {
                let b = take(4)?;
                id = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                let input = u16_at(take(2)?);
                if input != i {
                    return Err(TrainFileError::BadRecord {
                        index: s * n_inputs as usize + i as usize,
                        input,
                        n_inputs,
                    });
                }
                trains.push(SpikeTrain::from_packed(take(row)?, steps as usize));
            }
            samples.push((id, trains));
        }
        Ok(TrainFile { steps, n_inputs, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_extremes() {
        let s = RngSeed(42);
        assert_eq!(rate_encode(0.0, 50, s).unwrap().count(), 0);
        assert_eq!(rate_encode(1.0, 50, s).unwrap().count(), 50);
        assert_eq!(rate_encode(1.5, 50, s), Err(CodecError::ValueOutOfRange(1.5)));
        assert_eq!(rate_encode(0.5, 0, s), Err(CodecError::ZeroWindow));
    }

    #[test]
    fn half_rate_concentrates() {
        for seed in 0..5 {
            let train = rate_encode(0.5, 10_000, RngSeed(seed)).unwrap();
            let rate = train.count() as f64 / 10_000.0;
            assert!((rate - 0.5).abs() <= 0.02, "seed {seed}: rate {rate}");
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_spikes(&[0, 5, 3]), Ok(1));
        assert_eq!(decode_spikes(&[4, 4]), Ok(0));
        assert_eq!(decode_spikes(&[]), Err(CodecError::EmptyCounts));
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(mix64(GOLDEN), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(GOLDEN.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn train_file_round_trip() {
        let seed = RngSeed(9);
        let samples =
            (0..3u32).map(|s| (s * 10, encode_sample(&[0.0, 0.3, 0.9, 1.0], 13, seed, s as u64).unwrap())).collect();
        let file = TrainFile { steps: 13, n_inputs: 4, samples };
        let mut bytes = Vec::new();
        file.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SPKT");
        assert_eq!(bytes.len(), 14 + 12 * (6 + 2));
        assert_eq!(TrainFile::read_from(&bytes[..]).unwrap(), file);
        assert!(matches!(TrainFile::read_from(&bytes[..bytes.len() - 1]), Err(TrainFileError::Truncated)));
        assert!(matches!(TrainFile::read_from(&b"NOPE"[..]), Err(TrainFileError::BadMagic)));
    }

    proptest! {
        #[test]
        fn encoding_is_deterministic(value in 0.0f64..=1.0, steps in 1usize..200, seed: u64) {
            prop_assert_eq!(rate_encode(value, steps, RngSeed(seed)), rate_encode(value, steps, RngSeed(seed)));
        }

        #[test]
        fn argmax_is_scale_invariant(counts in prop::collection::vec(0u32..1000, 1..20), k in 1u32..100) {
            let scaled: Vec<u32> = counts.iter().map(|c| c * k).collect();
            prop_assert_eq!(decode_spikes(&counts), decode_spikes(&scaled));
        }

        #[test]
        fn packing_round_trips(bits in prop::collection::vec(any::<bool>(), 1..100)) {
            let t = SpikeTrain::new(bits.clone());
            prop_assert_eq!(SpikeTrain::from_packed(&t.to_packed(), bits.len()), t);
        }
    }
}
