use serde::{Deserialize, Serialize};

use super::TimelineError;
use crate::bus::{is_token, Millis};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub name: String,
    pub step_ms: Millis,
    #[serde(default)]
    pub offset_ms: Millis,
    /// Carries the real-time release contract in wall-clock mode.
    #[serde(default)]
    pub rt: bool,
}

impl ScheduleEntry {
    pub fn new(name: impl Into<String>, step_ms: Millis) -> Self {
        ScheduleEntry {
            name: name.into(),
            step_ms,
            offset_ms: 0,
            rt: false,
        }
    }

    pub fn with_offset(mut self, offset_ms: Millis) -> Self {
        self.offset_ms = offset_ms;
        self
    }

    pub fn realtime(mut self) -> Self {
        self.rt = true;
        self
    }

    pub fn is_due(&self, t: Millis) -> bool {
        t >= self.offset_ms && (t - self.offset_ms).is_multiple_of(self.step_ms)
    }

    /// Number of releases in `[0, horizon]`.
    pub fn ticks_within(&self, horizon: Millis) -> u64 {
        if horizon < self.offset_ms {
            0
        } else {
            (horizon - self.offset_ms) / self.step_ms + 1
        }
    }
}

/// Participant step sizes resolved onto a common integer-millisecond grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    entries: Vec<ScheduleEntry>,
    macro_tick: Millis,
    hyperperiod: Millis,
    horizon: Millis,
    warnings: Vec<String>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Builds the schedule. Entries are kept in the within-tick execution order:
/// ascending step size, ties broken by name.
pub fn build_schedule(
    mut entries: Vec<ScheduleEntry>,
    horizon: Millis,
) -> Result<StepSchedule, TimelineError> {
    if entries.is_empty() {
        return Err(TimelineError::EmptySchedule);
    }
    let mut names = std::collections::BTreeSet::new();
    for e in &entries {
        if !is_token(&e.name) {
            return Err(TimelineError::InvalidName(e.name.clone()));
        }
        if e.step_ms == 0 {
            return Err(TimelineError::ZeroStep(e.name.clone()));
        }
        if !names.insert(e.name.as_str()) {
            return Err(TimelineError::DuplicateEntry(e.name.clone()));
        }
    }

    let macro_tick = entries
        .iter()
        .fold(0, |g, e| gcd(gcd(g, e.step_ms), e.offset_ms));
    let hyperperiod = entries.iter().try_fold(1u64, |l, e| {
        (l / gcd(l, e.step_ms))
            .checked_mul(e.step_ms)
            .ok_or(TimelineError::HyperperiodOverflow)
    })?;

    let mut warnings = Vec::new();
    let mut horizon_aligned = horizon;
    if !horizon.is_multiple_of(macro_tick) {
        horizon_aligned = (horizon / macro_tick + 1) * macro_tick;
        let msg = format!(
            "horizon {horizon} ms is not a multiple of the {macro_tick} ms macro tick; rounded up to {horizon_aligned} ms"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    entries.sort_by(|a, b| a.step_ms.cmp(&b.step_ms).then_with(|| a.name.cmp(&b.name)));
    Ok(StepSchedule {
        entries,
        macro_tick,
        hyperperiod,
        horizon: horizon_aligned,
        warnings,
    })
}

impl StepSchedule {
    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn macro_tick(&self) -> Millis {
        self.macro_tick
    }

    pub fn hyperperiod(&self) -> Millis {
        self.hyperperiod
    }

    pub fn horizon(&self) -> Millis {
        self.horizon
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Names of the participants released at `t`, in execution order.
    pub fn due_at(&self, t: Millis) -> Result<Vec<&str>, TimelineError> {
        if !t.is_multiple_of(self.macro_tick) {
            return Err(TimelineError::Misaligned {
                t,
                macro_tick: self.macro_tick,
            });
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| e.is_due(t))
            .map(|e| e.name.as_str())
            .collect())
    }

    /// Macro-tick instants from 0 through the horizon. Empty for a zero horizon.
    pub fn ticks(&self) -> impl Iterator<Item = Millis> {
        let n = if self.horizon == 0 {
            0
        } else {
            self.horizon / self.macro_tick + 1
        };
        let tick = self.macro_tick;
        (0..n).map(move |k| k * tick)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(name: &str, step: u64) -> ScheduleEntry {
        ScheduleEntry::new(name, step)
    }

    #[test]
    fn single_participant() {
        let s = build_schedule(vec![e("A", 1000)], 1000).unwrap();
        assert_eq!((s.macro_tick(), s.hyperperiod()), (1000, 1000));
    }

    #[test]
    fn gcd_and_lcm() {
        let s = build_schedule(vec![e("A", 100), e("B", 250)], 1000).unwrap();
        assert_eq!((s.macro_tick(), s.hyperperiod()), (50, 500));
    }

    #[test]
    fn offsets_enter_the_macro_tick() {
        let s = build_schedule(vec![e("A", 100).with_offset(50), e("B", 100)], 1000).unwrap();
        assert_eq!((s.macro_tick(), s.hyperperiod()), (50, 100));
    }

    #[test]
    fn due_sets() {
        let s = build_schedule(vec![e("B", 250), e("A", 100)], 1000).unwrap();
        assert_eq!(s.due_at(0).unwrap(), vec!["A", "B"]);
        assert_eq!(s.due_at(200).unwrap(), vec!["A"]);
        assert_eq!(s.due_at(250).unwrap(), vec!["B"]);
        assert_eq!(s.due_at(500).unwrap(), vec!["A", "B"]);
        assert!(matches!(s.due_at(30), Err(TimelineError::Misaligned { .. })));
    }

    #[test]
    fn offset_participant_not_due_before_offset() {
        let s = build_schedule(vec![e("A", 100).with_offset(50), e("B", 100)], 1000).unwrap();
        assert_eq!(s.due_at(0).unwrap(), vec!["B"]);
        assert_eq!(s.due_at(50).unwrap(), vec!["A"]);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(matches!(build_schedule(vec![], 10), Err(TimelineError::EmptySchedule)));
        assert!(matches!(
            build_schedule(vec![e("A", 0)], 10),
            Err(TimelineError::ZeroStep(_))
        ));
        assert!(matches!(
            build_schedule(vec![e("A", 10), e("A", 20)], 10),
            Err(TimelineError::DuplicateEntry(_))
        ));
    }

    #[test]
    fn unaligned_horizon_is_rounded_up_with_warning() {
        let s = build_schedule(vec![e("A", 100)], 950).unwrap();
        assert_eq!(s.horizon(), 1000);
        assert_eq!(s.warnings().len(), 1);
        let s = build_schedule(vec![e("A", 100)], 1000).unwrap();
        assert!(s.warnings().is_empty());
    }

    #[test]
    fn rt_tick_count_formula() {
        let rt = e("rt", 10).realtime();
        assert_eq!(rt.ticks_within(2000), 201);
        assert_eq!(rt.clone().with_offset(5).ticks_within(2000), 200);
        assert_eq!(rt.with_offset(3000).ticks_within(2000), 0);
    }

    proptest! {
        // Within-tick order is a pure function of (step, name), independent of
        // the order entries were supplied in.
        #[test]
        fn order_independent_of_input_order(steps in proptest::collection::vec(1u64..50, 1..6), seed in any::<u64>()) {
            let entries: Vec<_> = steps.iter().enumerate().map(|(i, s)| e(&format!("p{i}"), s * 10)).collect();
            let mut shuffled = entries.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = ((seed >> (i % 32)) as usize + i * 7) % n;
                shuffled.swap(i, j);
            }
            let a = build_schedule(entries, 1000).unwrap();
            let b = build_schedule(shuffled, 1000).unwrap();
            for t in (0..=a.hyperperiod().min(5000)).step_by(a.macro_tick() as usize) {
                prop_assert_eq!(a.due_at(t).unwrap(), b.due_at(t).unwrap());
            }
        }
    }
}
