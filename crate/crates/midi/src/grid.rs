//! Quantization of ticks, durations, velocities, and tempi onto the
//! discrete grids the tokenizer uses.
//!
//! Time is measured in grid steps of a twelfth of a quarter note, which
//! represents straight sixteenths and eighth/sixteenth triplets exactly.

/// Grid steps per quarter note.
pub const STEPS_PER_QUARTER: u64 = 12;

/// Grid steps in a whole note.
pub const STEPS_PER_WHOLE: u64 = 4 * STEPS_PER_QUARTER;

/// Number of within-measure onset positions the beat attribute can take.
pub const BEAT_POSITIONS: usize = 192;

/// Number of duration bins.
pub const DURATION_BINS: usize = 64;

/// Number of velocity bins.
pub const VELOCITY_BINS: usize = 32;

/// Number of tempo bins.
pub const TEMPO_BINS: usize = 32;

const TEMPO_MIN: f64 = 20.0;
const TEMPO_MAX: f64 = 240.0;

/// Converts between MIDI ticks and grid steps for one file's resolution.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub ticks_per_quarter: u32,
}

impl Grid {
    pub fn new(ticks_per_quarter: u32) -> Self {
        Grid { ticks_per_quarter }
    }

    /// Nearest grid step to a tick position.
    pub fn step_of_tick(&self, tick: u64) -> u64 {
        let tpq = self.ticks_per_quarter as u64;
        (tick * STEPS_PER_QUARTER + tpq / 2) / tpq
    }

    /// Duration in grid steps, never rounded below one step.
    pub fn steps_of_duration(&self, ticks: u64) -> u64 {
        self.step_of_tick(ticks).max(1)
    }

    /// Tick position of a grid step. Exact when the resolution is a
    /// multiple of twelve, rounded otherwise.
    pub fn tick_of_step(&self, step: u64) -> u64 {
        let tpq = self.ticks_per_quarter as u64;
        (step * tpq + STEPS_PER_QUARTER / 2) / STEPS_PER_QUARTER
    }
}

/// Length of one measure in grid steps.
pub fn measure_len_steps(numerator: u8, denominator: u8) -> u64 {
    let num = numerator.max(1) as u64;
    let den = denominator.max(1) as u64;
    ((STEPS_PER_WHOLE * num + den / 2) / den).max(1)
}

/// Bin index for a duration in grid steps.
///
/// Durations up to one whole note get a bin per step so they survive a
/// round trip exactly; longer ones fall into coarser six- and
/// twelve-step bins, capped at four whole notes.
pub fn duration_bin(steps: u64) -> usize {
    let s = steps.max(1);
    if s <= 48 {
        (s - 1) as usize
    } else if s <= 96 {
        48 + ((s - 49) / 6) as usize
    } else if s <= 192 {
        56 + ((s - 97) / 12) as usize
    } else {
        DURATION_BINS - 1
    }
}

/// Representative duration in grid steps for a bin.
pub fn duration_steps(bin: usize) -> u64 {
    let b = bin.min(DURATION_BINS - 1) as u64;
    if b < 48 {
        b + 1
    } else if b < 56 {
        48 + 6 * (b - 48 + 1)
    } else {
        96 + 12 * (b - 56 + 1)
    }
}

/// Bin index for a MIDI velocity.
pub fn velocity_bin(velocity: u8) -> usize {
    (velocity.min(127) / 4) as usize
}

/// Representative MIDI velocity for a bin, the midpoint of its range.
pub fn velocity_value(bin: usize) -> u8 {
    (bin.min(VELOCITY_BINS - 1) * 4 + 2) as u8
}

/// Bin index for a tempo, log-spaced over 20 to 240 BPM.
pub fn tempo_bin(bpm: f64) -> usize {
    let clamped = bpm.clamp(TEMPO_MIN, TEMPO_MAX);
    let frac = (clamped / TEMPO_MIN).ln() / (TEMPO_MAX / TEMPO_MIN).ln();
    ((frac * TEMPO_BINS as f64) as usize).min(TEMPO_BINS - 1)
}

/// Representative tempo for a bin, the geometric midpoint of its range.
pub fn tempo_bpm(bin: usize) -> f64 {
    let b = bin.min(TEMPO_BINS - 1) as f64;
    TEMPO_MIN * (TEMPO_MAX / TEMPO_MIN).powf((b + 0.5) / TEMPO_BINS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_63_rounds_to_62() {
        assert_eq!(velocity_value(velocity_bin(63)), 62);
    }

    #[test]
    fn velocity_bins_cover_full_range() {
        for v in 0u8..=127 {
            let bin = velocity_bin(v);
            assert!(bin < VELOCITY_BINS);
            assert!((velocity_value(bin) as i16 - v as i16).abs() <= 2);
        }
    }

    #[test]
    fn tempo_125_lands_in_bin_23() {
        assert_eq!(tempo_bin(125.0), 23);
    }

    #[test]
    fn tempo_bin_representative_stays_in_bin() {
        for bin in 0..TEMPO_BINS {
            assert_eq!(tempo_bin(tempo_bpm(bin)), bin, "bin {bin}");
        }
    }

    #[test]
    fn tempo_bins_clamp_out_of_range() {
        assert_eq!(tempo_bin(5.0), 0);
        assert_eq!(tempo_bin(500.0), TEMPO_BINS - 1);
    }

    #[test]
    fn short_durations_round_trip_exactly() {
        for steps in 1u64..=48 {
            assert_eq!(duration_steps(duration_bin(steps)), steps);
        }
    }

    #[test]
    fn long_durations_round_trip_within_half_bin() {
        for steps in 49u64..=192 {
            let bin = duration_bin(steps);
            let repr = duration_steps(bin);
            let width = if steps <= 96 { 6 } else { 12 };
            assert!(
                (repr as i64 - steps as i64).unsigned_abs() < width,
                "steps {steps} -> bin {bin} -> {repr}"
            );
        }
    }

    #[test]
    fn duration_bins_are_monotone() {
        let mut last = 0;
        for steps in 1u64..=300 {
            let bin = duration_bin(steps);
            assert!(bin >= last);
            last = bin;
        }
        assert_eq!(last, DURATION_BINS - 1);
    }

    #[test]
    fn oversized_duration_clamps_to_last_bin() {
        assert_eq!(duration_bin(10_000), DURATION_BINS - 1);
        assert_eq!(duration_steps(DURATION_BINS - 1), 192);
    }

    #[test]
    fn measure_lengths_for_common_signatures() {
        assert_eq!(measure_len_steps(4, 4), 48);
        assert_eq!(measure_len_steps(3, 4), 36);
        assert_eq!(measure_len_steps(6, 8), 36);
        assert_eq!(measure_len_steps(2, 2), 48);
    }

    #[test]
    fn grid_round_trips_steps_at_standard_resolution() {
        let grid = Grid::new(480);
        for step in 0u64..200 {
            assert_eq!(grid.step_of_tick(grid.tick_of_step(step)), step);
        }
    }

    #[test]
    fn grid_rounds_to_nearest_step() {
        let grid = Grid::new(480);
        // One step is 40 ticks at 480 tpq.
        assert_eq!(grid.step_of_tick(19), 0);
        assert_eq!(grid.step_of_tick(21), 1);
        assert_eq!(grid.steps_of_duration(1), 1);
    }
}
