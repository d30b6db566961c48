//! Deterministic pseudo-random source for the stochastic link effects.
//!
//! Every stochastic decision an instance makes (loss, duplication,
//! jitter) is drawn from one seeded SplitMix64 stream, so a fixed seed
//! plus a fixed packet sequence reproduces the exact same outcome
//! sequence on any platform. The jitter transform uses only IEEE-exact
//! operations (no libm calls), keeping results bit-identical across
//! architectures.

/// Per-purpose draw counters, for auditing replay stability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrawCounts {
    pub loss: u64,
    pub duplication: u64,
    pub jitter: u64,
}

/// Seeded SplitMix64 generator with per-purpose draw accounting.
///
/// SplitMix64 (Vigna's canonical constants) is used directly as the
/// output stream; the first output for seed 0 is 0xE220A8397B1DCDAF,
/// matching the reference implementation.
#[derive(Debug, Clone)]
pub struct EffectsRng {
    state: u64,
    counts: DrawCounts,
}

impl EffectsRng {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            counts: DrawCounts::default(),
        }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform 32-bit draw (top half of the 64-bit output).
    pub fn draw_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform 32-bit draw charged to the loss counter.
    pub fn draw_loss(&mut self) -> u32 {
        self.counts.loss += 1;
        self.draw_u32()
    }

    /// Uniform 32-bit draw charged to the duplication counter.
    pub fn draw_duplication(&mut self) -> u32 {
        self.counts.duplication += 1;
        self.draw_u32()
    }

    /// Effective one-way delay: `delay_us + round(jitter_us * z)` with
    /// `z` approximately standard normal, clamped at zero.
    ///
    /// `z` is the sum of 12 uniform [0,1) variates minus 6 (mean 0,
    /// variance exactly 1, support [-6, 6]). The zero-jitter path is a
    /// fixed passthrough and consumes no draws. A nonzero jitter always
    /// consumes exactly 12 draws, so replay is stable.
    pub fn sample_jitter(&mut self, delay_us: u64, jitter_us: u64) -> u64 {
        if jitter_us == 0 {
            return delay_us;
        }
        self.counts.jitter += 1;
        let mut sum = 0.0f64;
        for _ in 0..12 {
            // 53-bit uniform in [0, 1); conversion and addition are IEEE-exact.
            sum += (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        }
        let z = sum - 6.0;
        let offset = (jitter_us as f64 * z).round() as i64;
        if offset >= 0 {
            delay_us.saturating_add(offset as u64)
        } else {
            delay_us.saturating_sub(offset.unsigned_abs())
        }
    }

    pub fn draw_counts(&self) -> DrawCounts {
        self.counts
    }
}

/// Threshold rule for scaled 32-bit probabilities: a value of
/// `u32::MAX` always triggers (exact 100%), otherwise the event
/// triggers when the uniform draw falls below the value (exact 0%
/// for a zero value).
pub fn scaled_prob_triggers(prob: u32, draw: u32) -> bool {
    prob == u32::MAX || draw < prob
}
