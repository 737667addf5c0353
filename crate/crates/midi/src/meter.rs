//! Measure boundaries in grid steps, derived from a score's time
//! signature map.

use crate::grid::{measure_len_steps, Grid};
use crate::score::Score;

/// One measure: where it starts and how long it is, in grid steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureSpan {
    pub start: u64,
    pub len: u64,
}

/// Precomputed measure spans covering a score.
///
/// A time signature change always starts a new measure at its own tick,
/// cutting the previous measure short if the change is not aligned.
#[derive(Debug, Clone)]
pub struct MeterMap {
    spans: Vec<MeasureSpan>,
}

impl MeterMap {
    /// Build spans covering grid steps `0..=max_step`.
    pub fn build(score: &Score, grid: Grid, max_step: u64) -> Self {
        let mut sigs: Vec<(u64, u8, u8)> = score
            .time_signatures
            .iter()
            .map(|ts| (grid.step_of_tick(ts.tick), ts.numerator, ts.denominator))
            .collect();
        sigs.sort_by_key(|&(step, _, _)| step);
        if sigs.first().map_or(true, |&(step, _, _)| step > 0) {
            sigs.insert(0, (0, 4, 4));
        }

        let mut spans = Vec::new();
        let mut cursor = 0u64;
        for (i, &(sig_step, num, den)) in sigs.iter().enumerate() {
            let region_end = sigs.get(i + 1).map(|&(s, _, _)| s);
            if let Some(end) = region_end {
                if end <= sig_step {
                    continue;
                }
            }
            let len = measure_len_steps(num, den);
            cursor = cursor.max(sig_step);
            loop {
                let full_end = cursor + len;
                let end = region_end.map_or(full_end, |e| e.min(full_end));
                if end > cursor {
                    spans.push(MeasureSpan { start: cursor, len: end - cursor });
                }
                cursor = end;
                if region_end == Some(cursor) || (region_end.is_none() && cursor > max_step) {
                    break;
                }
            }
        }
        MeterMap { spans }
    }

    pub fn spans(&self) -> &[MeasureSpan] {
        &self.spans
    }

    /// Measure index and offset within the measure for a grid step.
    ///
    /// Steps past the last span are folded into it.
    pub fn locate(&self, step: u64) -> (usize, u64) {
        let idx = match self.spans.binary_search_by_key(&step, |s| s.start) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        (idx, step - self.spans[idx].start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::TimeSignature;

    #[test]
    fn uniform_four_four_measures() {
        let score = Score::empty(480);
        let map = MeterMap::build(&score, Grid::new(480), 100);
        assert_eq!(map.spans()[0], MeasureSpan { start: 0, len: 48 });
        assert_eq!(map.spans()[1], MeasureSpan { start: 48, len: 48 });
        assert_eq!(map.locate(0), (0, 0));
        assert_eq!(map.locate(47), (0, 47));
        assert_eq!(map.locate(48), (1, 0));
        assert_eq!(map.locate(60), (1, 12));
    }

    #[test]
    fn signature_change_starts_new_measure() {
        let mut score = Score::empty(480);
        // Switch to 3/4 at tick 480 * 4 (step 48).
        score
            .time_signatures
            .push(TimeSignature { tick: 1920, numerator: 3, denominator: 4 });
        let map = MeterMap::build(&score, Grid::new(480), 130);
        assert_eq!(map.spans()[0], MeasureSpan { start: 0, len: 48 });
        assert_eq!(map.spans()[1], MeasureSpan { start: 48, len: 36 });
        assert_eq!(map.spans()[2], MeasureSpan { start: 84, len: 36 });
    }

    #[test]
    fn unaligned_change_cuts_measure_short() {
        let mut score = Score::empty(480);
        // Change lands mid-measure at step 24.
        score
            .time_signatures
            .push(TimeSignature { tick: 960, numerator: 3, denominator: 4 });
        let map = MeterMap::build(&score, Grid::new(480), 80);
        assert_eq!(map.spans()[0], MeasureSpan { start: 0, len: 24 });
        assert_eq!(map.spans()[1], MeasureSpan { start: 24, len: 36 });
    }

    #[test]
    fn steps_past_the_end_fold_into_last_measure() {
        let score = Score::empty(480);
        let map = MeterMap::build(&score, Grid::new(480), 10);
        let last = map.spans().len() - 1;
        let (idx, _) = map.locate(10_000);
        assert_eq!(idx, last);
    }
}
