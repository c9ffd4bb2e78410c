//! Runtime trajectory sequencer.
//!
//! A sequence is an ordered chain of elements, each wrapping one segment.
//! Elements are `Single` (consumed once) or `Cyclic` (rewound until aborted).
//! A volatile element can interrupt whatever is playing; when it finishes, the
//! interrupted element resumes at the local time where it was paused, and the
//! volatile leaves no trace in the chain. Evaluation is pull-based: guidance
//! calls [`TrajectorySequence::evaluate`] with monotonically non-decreasing
//! time and the cursor advances as segments complete.

use super::segment::{
    fillet_duration, transfer_segment, FlatOutput, TrajError, TrajectorySegment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Single,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceElement {
    pub segment: TrajectorySegment,
    pub kind: ElementKind,
    started_at: Option<f64>,
}

impl SequenceElement {
    pub fn new(segment: TrajectorySegment, kind: ElementKind) -> Self {
        Self {
            segment,
            kind,
            started_at: None,
        }
    }

    pub fn single(segment: TrajectorySegment) -> Self {
        Self::new(segment, ElementKind::Single)
    }

    pub fn cyclic(segment: TrajectorySegment) -> Self {
        Self::new(segment, ElementKind::Cyclic)
    }
}

#[derive(Debug, Clone)]
enum ResumeTo {
    Element { paused_elapsed: f64 },
    Hold,
}

#[derive(Debug, Clone)]
struct VolatileEntry {
    segment: TrajectorySegment,
    started_at: f64,
    resume: ResumeTo,
}

/// Parameters for auto-generated bridge transfers.
#[derive(Debug, Clone, Copy)]
pub struct BridgeParams {
    pub accel_max: f64,
    pub min_duration: f64,
}

impl Default for BridgeParams {
    fn default() -> Self {
        Self {
            accel_max: 2.0,
            min_duration: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySequence {
    elements: Vec<SequenceElement>,
    cursor: usize,
    volatile: Option<VolatileEntry>,
    hold: Option<FlatOutput>,
    last_t: Option<f64>,
    bridge: BridgeParams,
}

impl TrajectorySequence {
    pub fn new(elements: Vec<SequenceElement>) -> Self {
        Self {
            elements,
            cursor: 0,
            volatile: None,
            hold: None,
            last_t: None,
            bridge: BridgeParams::default(),
        }
    }

    pub fn with_bridge_params(mut self, bridge: BridgeParams) -> Self {
        self.bridge = bridge;
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Index of the element the cursor points at.
    pub fn current_index(&self) -> usize {
        self.cursor
    }

    /// True once every element has been consumed and the terminal hold is
    /// active.
    pub fn is_finished(&self) -> bool {
        self.hold.is_some() && self.volatile.is_none()
    }

    pub fn volatile_active(&self) -> bool {
        self.volatile.is_some()
    }

    pub fn elements(&self) -> &[SequenceElement] {
        &self.elements
    }

    pub fn append(&mut self, element: SequenceElement) {
        // Appending to a finished sequence revives it at the new element.
        if self.hold.is_some() {
            self.hold = None;
            self.cursor = self.elements.len();
        }
        self.elements.push(element);
    }

    /// Drop every element after the current one.
    pub fn truncate_after_current(&mut self) {
        if self.cursor + 1 < self.elements.len() {
            self.elements.truncate(self.cursor + 1);
        }
    }

    /// Evaluate the reference at global time `t` (non-decreasing between
    /// calls), advancing the cursor past completed elements.
    pub fn evaluate(&mut self, t: f64) -> FlatOutput {
        let t = match self.last_t {
            Some(prev) if t < prev => prev,
            _ => t,
        };
        self.last_t = Some(t);

        if let Some(v) = &self.volatile {
            let local = t - v.started_at;
            if local < v.segment.duration() {
                return v.segment.evaluate(local);
            }
            // Volatile complete: restore whatever it interrupted, shifting its
            // clock so local time continues where it was paused.
            let v = self.volatile.take().expect("volatile present");
            match v.resume {
                ResumeTo::Hold => {}
                ResumeTo::Element { paused_elapsed } => {
                    if let Some(el) = self.elements.get_mut(self.cursor) {
                        el.started_at = Some(t - paused_elapsed);
                    }
                }
            }
        }

        if let Some(hold) = &self.hold {
            return *hold;
        }

        loop {
            if self.cursor >= self.elements.len() {
                let out = self
                    .elements
                    .last()
                    .map(|el| el.segment.evaluate(el.segment.duration()).frozen())
                    .unwrap_or_else(|| FlatOutput::hover(crate::Vec3::zeros(), 0.0));
                self.hold = Some(out);
                return out;
            }
            let cursor = self.cursor;
            let el = &mut self.elements[cursor];
            let started = *el.started_at.get_or_insert(t);
            let local = t - started;
            let dur = el.segment.duration();
            if local < dur {
                return el.segment.evaluate(local);
            }
            match el.kind {
                ElementKind::Cyclic => {
                    // Rewind in whole periods so phase is preserved exactly.
                    let periods = (local / dur).floor();
                    el.started_at = Some(started + periods * dur);
                }
                ElementKind::Single => {
                    let end_time = started + dur;
                    self.cursor += 1;
                    if let Some(next) = self.elements.get_mut(self.cursor) {
                        next.started_at = Some(end_time);
                    }
                }
            }
        }
    }

    /// Interrupt the current element with `segment`. Fails if a volatile is
    /// already active.
    pub fn insert_volatile(&mut self, segment: TrajectorySegment, t: f64) -> Result<(), TrajError> {
        if self.volatile.is_some() {
            return Err(TrajError::VolatileActive);
        }
        let resume = if self.hold.is_some() || self.cursor >= self.elements.len() {
            ResumeTo::Hold
        } else {
            let el = &self.elements[self.cursor];
            let paused_elapsed = el.started_at.map(|s| (t - s).max(0.0)).unwrap_or(0.0);
            ResumeTo::Element { paused_elapsed }
        };
        self.volatile = Some(VolatileEntry {
            segment,
            started_at: t,
            resume,
        });
        Ok(())
    }

    /// Reference at `t` without advancing any bookkeeping.
    pub fn peek(&self, t: f64) -> FlatOutput {
        if let Some(v) = &self.volatile {
            return v.segment.evaluate(t - v.started_at);
        }
        if let Some(hold) = &self.hold {
            return *hold;
        }
        match self.elements.get(self.cursor) {
            Some(el) => el.segment.evaluate(t - el.started_at.unwrap_or(t)),
            None => FlatOutput::hover(crate::Vec3::zeros(), 0.0),
        }
    }

    /// Stop repeating the current cyclic element: the cursor moves on to the
    /// next element, reached through an auto-generated transfer from the
    /// instantaneous reference. Returns false (and changes nothing) if the
    /// current element is not cyclic.
    pub fn abort_cyclic(&mut self, t: f64) -> Result<bool, TrajError> {
        if self.volatile.is_some() {
            return Err(TrajError::VolatileActive);
        }
        let Some(el) = self.elements.get(self.cursor) else {
            return Ok(false);
        };
        if el.kind != ElementKind::Cyclic || self.hold.is_some() {
            log::warn!("abort_cyclic called on a non-cyclic element; ignored");
            return Ok(false);
        }
        let local = el.started_at.map(|s| (t - s).max(0.0)).unwrap_or(0.0);
        let here = el.segment.evaluate(local);
        self.divert(t, here)
    }

    /// Transfer segment from `here` to `target` sized by the bridge rule.
    fn bridge_segment(
        &self,
        here: &FlatOutput,
        target: &FlatOutput,
    ) -> Result<TrajectorySegment, TrajError> {
        let dv = (target.velocity - here.velocity).norm().max(
            // A pure position offset still needs a sane bridge duration.
            (target.position - here.position).norm() / 4.0,
        );
        let dur = fillet_duration(dv, self.bridge.accel_max, self.bridge.min_duration);
        transfer_segment(here, target, dur)
    }

    /// Bridge from the flat output `here` into the next upcoming element (or a
    /// terminal hold when there is none), abandoning the current element.
    fn divert(&mut self, t: f64, here: FlatOutput) -> Result<bool, TrajError> {
        let next_start = self
            .elements
            .get(self.cursor + 1)
            .map(|n| n.segment.evaluate(0.0));
        let target = next_start.unwrap_or_else(|| here.frozen());
        let mut bridge_el = SequenceElement::single(self.bridge_segment(&here, &target)?);
        bridge_el.started_at = Some(t);
        self.elements.insert(self.cursor + 1, bridge_el);
        self.cursor += 1;
        Ok(true)
    }

    /// Abandon the current element and everything after it, bridge to `tail`.
    ///
    /// Used by autopilots for mission aborts and search exits: whatever is
    /// playing (cyclic or not) stops, and the reference transfers smoothly to
    /// the first element of `tail`.
    pub fn replace_upcoming(
        &mut self,
        t: f64,
        tail: Vec<SequenceElement>,
    ) -> Result<(), TrajError> {
        if self.volatile.is_some() {
            return Err(TrajError::VolatileActive);
        }
        let here = self.peek(t);
        self.hold = None;
        self.elements.truncate(self.cursor.min(self.elements.len()));
        self.cursor = self.elements.len();
        match tail.first() {
            None => {
                self.hold = Some(here.frozen());
            }
            Some(head) => {
                let target = head.segment.evaluate(0.0);
                let mut bridge_el = SequenceElement::single(self.bridge_segment(&here, &target)?);
                bridge_el.started_at = Some(t);
                self.elements.push(bridge_el);
                self.elements.extend(tail);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn hover_seg(z: f64, dur: f64) -> TrajectorySegment {
        TrajectorySegment::hover(Vec3::new(0.0, 0.0, z), 0.0, dur).unwrap()
    }

    #[test]
    fn advances_through_singles_and_holds() {
        let mut seq = TrajectorySequence::new(vec![
            SequenceElement::single(hover_seg(1.0, 2.0)),
            SequenceElement::single(hover_seg(2.0, 2.0)),
        ]);
        assert_eq!(seq.evaluate(0.0).position.z, 1.0);
        assert_eq!(seq.evaluate(1.9).position.z, 1.0);
        assert_eq!(seq.evaluate(2.1).position.z, 2.0);
        assert_eq!(seq.current_index(), 1);
        // Past the end: terminal hold, zero rates.
        let out = seq.evaluate(10.0);
        assert_eq!(out.position.z, 2.0);
        assert_eq!(out.velocity.norm(), 0.0);
        assert!(seq.is_finished());
        assert_eq!(seq.evaluate(100.0).position.z, 2.0);
    }

    #[test]
    fn cyclic_rewinds_until_aborted_then_advances() {
        // One circular-ish loop approximated by a CV segment is enough to
        // exercise rewind bookkeeping.
        let loop_seg =
            TrajectorySegment::constant_velocity(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 1.0, 0.0, 0.0)
                .unwrap();
        let mut seq = TrajectorySequence::new(vec![
            SequenceElement::cyclic(loop_seg),
            SequenceElement::single(hover_seg(5.0, 2.0)),
        ]);
        seq.evaluate(0.0); // seed the sequence clock
        // Rewound twice: local time wraps at 1.0.
        assert!((seq.evaluate(0.25).position.x - 0.25).abs() < 1e-12);
        assert!((seq.evaluate(1.25).position.x - 0.25).abs() < 1e-12);
        assert!((seq.evaluate(2.25).position.x - 0.25).abs() < 1e-12);
        assert_eq!(seq.current_index(), 0);

        assert!(seq.abort_cyclic(2.25).unwrap());
        // Bridge transfer is playing now; the cursor no longer points at the
        // cyclic element.
        assert!(seq.current_index() > 0);
        let bridged = seq.evaluate(2.3);
        assert!(bridged.position.z < 5.0 + 1e-9);
        // Eventually lands on the follow-up element.
        let settled = seq.evaluate(30.0);
        assert_eq!(settled.position.z, 5.0);
    }

    #[test]
    fn abort_cyclic_on_single_is_a_noop() {
        let mut seq = TrajectorySequence::new(vec![SequenceElement::single(hover_seg(1.0, 2.0))]);
        seq.evaluate(0.5);
        assert!(!seq.abort_cyclic(0.5).unwrap());
        assert_eq!(seq.len(), 1);
    }

    #[test]
    fn volatile_pauses_and_resumes_original_clock() {
        let ramp =
            TrajectorySegment::constant_velocity(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 10.0, 0.0, 0.0)
                .unwrap();
        let mut seq = TrajectorySequence::new(vec![SequenceElement::single(ramp)]);
        seq.evaluate(0.0); // seed the sequence clock
        assert!((seq.evaluate(3.0).position.x - 3.0).abs() < 1e-12);

        let segments_before: Vec<_> = seq.elements().iter().map(|e| e.segment.clone()).collect();
        let det = hover_seg(9.0, 2.0);
        seq.insert_volatile(det, 3.0).unwrap();
        // A second volatile is rejected while one is active.
        assert!(matches!(
            seq.insert_volatile(hover_seg(1.0, 1.0), 3.5),
            Err(TrajError::VolatileActive)
        ));
        assert_eq!(seq.evaluate(4.0).position.z, 9.0);
        // Volatile over: the ramp resumes at paused local time 3.0 even though
        // global time is 5.5.
        let resumed = seq.evaluate(5.5);
        assert!((resumed.position.x - 3.0).abs() < 1e-9);
        // And the chain itself is untouched by the volatile episode.
        let segments_after: Vec<_> = seq.elements().iter().map(|e| e.segment.clone()).collect();
        assert_eq!(segments_after, segments_before);
        assert!(!seq.volatile_active());
    }

    #[test]
    fn replace_upcoming_bridges_to_tail() {
        let loop_seg =
            TrajectorySegment::constant_velocity(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 4.0, 0.0, 0.0)
                .unwrap();
        let mut seq = TrajectorySequence::new(vec![
            SequenceElement::cyclic(loop_seg),
            SequenceElement::single(hover_seg(1.0, 1.0)),
        ]);
        seq.evaluate(0.0); // seed the sequence clock
        seq.evaluate(1.0);
        let tail = vec![SequenceElement::single(hover_seg(7.0, 3.0))];
        seq.replace_upcoming(1.0, tail).unwrap();
        let out = seq.evaluate(20.0);
        assert_eq!(out.position.z, 7.0);
        // The old follow-up element is gone.
        assert!(seq
            .elements()
            .iter()
            .all(|el| el.segment.evaluate(0.0).position.z != 1.0));
    }

    #[test]
    fn empty_sequence_holds_origin() {
        let mut seq = TrajectorySequence::new(vec![]);
        let out = seq.evaluate(1.0);
        assert_eq!(out.position.norm(), 0.0);
        assert!(seq.is_finished());
    }
}
