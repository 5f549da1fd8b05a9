//! Frame buffering during interactive mask selection and catch-up propagation
//! to the live head of the stream.

use std::collections::VecDeque;
use std::sync::Mutex;

use thiserror::Error;

use crate::mask::BinaryMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("a selection is already pending")]
    SelectionAlreadyPending,
    #[error("no selection is pending")]
    NoPendingSelection,
    #[error("the stream has no frames")]
    EmptyStream,
    #[error("frame index {got} is not after head {head}")]
    NonIncreasingIndex { got: usize, head: usize },
    #[error("frame {0} is no longer buffered")]
    MissingFrame(usize),
    #[error("propagator failed at frame {frame}: {message}")]
    PropagatorFailure { frame: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error("propagate called before seed")]
    NotSeeded,
    #[error("{0}")]
    Failed(String),
}

/// Video object mask propagator: seed once, then propagate frame by frame.
pub trait MaskPropagator<F> {
    fn seed(&mut self, index: usize, frame: &F, mask: &BinaryMask) -> Result<(), PropagatorError>;
    fn propagate(&mut self, index: usize, frame: &F) -> Result<BinaryMask, PropagatorError>;
}

#[derive(Debug, Clone)]
pub struct BufferedFrame<F> {
    pub index: usize,
    pub frame: F,
    pub masks: Option<Vec<BinaryMask>>,
}

#[derive(Debug)]
struct Inner<F> {
    frames: VecDeque<BufferedFrame<F>>,
    t0: Option<usize>,
    overflow_events: usize,
}

/// Ring buffer of recent frames shared between the stream producer and the
/// selection consumer. `F` is whatever cheap handle the caller uses for an
/// image (an `Arc`, an index, a path).
#[derive(Debug)]
pub struct FrameBuffer<F> {
    capacity: usize,
    inner: Mutex<Inner<F>>,
}

pub const DEFAULT_CATCH_UP_SAMPLES: usize = 6;
const FINAL_HOP_RETRIES: usize = 3;

/// Result of [`FrameBuffer::catch_up`].
#[derive(Debug, Clone, PartialEq)]
pub struct CatchUp {
    pub mask: BinaryMask,
    /// Frame the returned mask belongs to.
    pub head: usize,
    /// Every frame the propagator visited after the seed, in order.
    pub visited: Vec<usize>,
    /// Sample count actually used (doubled after a failure).
    pub k_used: usize,
    /// The stream head had not moved past `head` when catch-up returned.
    pub converged: bool,
}

/// `k` indices sampled uniformly from `(t0, head]`, always ending at `head`.
/// Consecutive gaps differ by at most one frame.
pub fn uniform_samples(t0: usize, head: usize, k: usize) -> Vec<usize> {
    let n = head.saturating_sub(t0);
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    (1..=k).map(|i| t0 + i * n / k).collect()
}

impl<F: Clone> FrameBuffer<F> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(2),
            inner: Mutex::new(Inner { frames: VecDeque::new(), t0: None, overflow_events: 0 }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner<F>> {
        // a panicking holder cannot leave the deque half-updated
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head(&self) -> Option<usize> {
        self.lock().frames.back().map(|f| f.index)
    }

    pub fn t0(&self) -> Option<usize> {
        self.lock().t0
    }

    pub fn overflow_events(&self) -> usize {
        self.lock().overflow_events
    }

    pub fn indices(&self) -> Vec<usize> {
        self.lock().frames.iter().map(|f| f.index).collect()
    }

    pub fn get(&self, index: usize) -> Option<BufferedFrame<F>> {
        let g = self.lock();
        g.frames.binary_search_by_key(&index, |f| f.index).ok().map(|i| g.frames[i].clone())
    }

    /// Appends the newest frame, evicting from the tail when full.
    ///
    /// While a selection is pending, frames at or after `t0` are never evicted;
    /// if they alone exceed the capacity every other pinned frame is dropped,
    /// keeping `t0` and the head.
    pub fn push(&self, index: usize, frame: F, masks: Option<Vec<BinaryMask>>) -> Result<(), StreamError> {
        let mut g = self.lock();
        if let Some(last) = g.frames.back() {
            if index <= last.index {
                return Err(StreamError::NonIncreasingIndex { got: index, head: last.index });
            }
        }
        g.frames.push_back(BufferedFrame { index, frame, masks });
        while g.frames.len() > self.capacity {
            let pinned_from = g.t0;
            match (g.frames.front(), pinned_from) {
                (Some(f), Some(t0)) if f.index >= t0 => {
                    thin_pinned(&mut g.frames);
                    g.overflow_events += 1;
                }
                _ => {
                    g.frames.pop_front();
                }
            }
        }
        Ok(())
    }

    /// Pins the current head as the selection frame `t0`.
    pub fn begin_selection(&self) -> Result<usize, StreamError> {
        let mut g = self.lock();
        if g.t0.is_some() {
            return Err(StreamError::SelectionAlreadyPending);
        }
        let head = g.frames.back().ok_or(StreamError::EmptyStream)?.index;
        g.t0 = Some(head);
        Ok(head)
    }

    /// Drops a pending selection without propagating.
    pub fn cancel_selection(&self) {
        self.lock().t0 = None;
    }

    /// Buffered frames closest to the uniform sample positions in `(t0, head]`.
    fn sampled_frames(&self, t0: usize, k: usize) -> Result<(BufferedFrame<F>, Vec<BufferedFrame<F>>), StreamError> {
        let g = self.lock();
        let seed_pos = g.frames.binary_search_by_key(&t0, |f| f.index).map_err(|_| StreamError::MissingFrame(t0))?;
        let after: Vec<&BufferedFrame<F>> = g.frames.iter().skip(seed_pos + 1).collect();
        // sample over buffer positions so thinned spans still end exactly at head
        let picks = uniform_samples(0, after.len(), k);
        let frames = picks.iter().map(|p| after[p - 1].clone()).collect();
        Ok((g.frames[seed_pos].clone(), frames))
    }

    /// Seeds `propagator` at `t0` with `selected`, propagates through `k`
    /// frames sampled uniformly up to the head, then chases the live head for
    /// up to three extra hops. A propagator failure restarts once with `2k`
    /// samples. The pending selection is cleared on success.
    pub fn catch_up<P: MaskPropagator<F> + ?Sized>(
        &self,
        selected: &BinaryMask,
        propagator: &mut P,
        k: usize,
    ) -> Result<CatchUp, StreamError> {
        let t0 = self.lock().t0.ok_or(StreamError::NoPendingSelection)?;
        let first = self.run_catch_up(t0, selected, propagator, k.max(1));
        let out = match first {
            Err(StreamError::PropagatorFailure { .. }) => self.run_catch_up(t0, selected, propagator, 2 * k.max(1)),
            other => other,
        }?;
        self.lock().t0 = None;
        Ok(out)
    }

    fn run_catch_up<P: MaskPropagator<F> + ?Sized>(
        &self,
        t0: usize,
        selected: &BinaryMask,
        propagator: &mut P,
        k: usize,
    ) -> Result<CatchUp, StreamError> {
        let fail = |frame: usize, e: PropagatorError| StreamError::PropagatorFailure { frame, message: e.to_string() };
        let (seed, samples) = self.sampled_frames(t0, k)?;
        propagator.seed(seed.index, &seed.frame, selected).map_err(|e| fail(seed.index, e))?;
        let mut mask = selected.clone();
        let mut at = t0;
        let mut visited = Vec::with_capacity(samples.len() + FINAL_HOP_RETRIES);
        for f in &samples {
            mask = propagator.propagate(f.index, &f.frame).map_err(|e| fail(f.index, e))?;
            at = f.index;
            visited.push(at);
        }
        let mut converged = false;
        for _ in 0..=FINAL_HOP_RETRIES {
            let live = {
                let g = self.lock();
                g.frames.back().map(|f| (f.index, f.frame.clone()))
            };
            match live {
                Some((idx, frame)) if idx > at => {
                    if visited.len() >= samples.len() + FINAL_HOP_RETRIES {
                        break;
                    }
                    mask = propagator.propagate(idx, &frame).map_err(|e| fail(idx, e))?;
                    at = idx;
                    visited.push(at);
                }
                _ => {
                    converged = true;
                    break;
                }
            }
        }
        Ok(CatchUp { mask, head: at, visited, k_used: k, converged })
    }
}

/// Removes every other frame of a fully pinned deque, keeping both ends.
fn thin_pinned<F>(frames: &mut VecDeque<BufferedFrame<F>>) {
    let n = frames.len();
    let mut i = 0;
    frames.retain(|_| {
        let keep = i == 0 || i == n - 1 || i % 2 == 0;
        i += 1;
        keep
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    /// Reports the frame index as a one-pixel mask.
    #[derive(Default)]
    struct IndexEcho {
        seeded: bool,
        fail_at: Option<usize>,
        calls: Vec<usize>,
    }

    fn dot(i: usize) -> BinaryMask {
        BinaryMask::from_fn(256, 1, |x, _| x as usize == i % 256)
    }

    impl MaskPropagator<usize> for IndexEcho {
        fn seed(&mut self, _index: usize, _frame: &usize, _mask: &BinaryMask) -> Result<(), PropagatorError> {
            self.seeded = true;
            self.calls.clear();
            Ok(())
        }
        fn propagate(&mut self, index: usize, _frame: &usize) -> Result<BinaryMask, PropagatorError> {
            if !self.seeded {
                return Err(PropagatorError::NotSeeded);
            }
            if self.fail_at.take_if(|f| *f == index).is_some() {
                return Err(PropagatorError::Failed("boom".into()));
            }
            self.calls.push(index);
            Ok(dot(index))
        }
    }

    fn filled(n: usize, cap: usize) -> FrameBuffer<usize> {
        let b = FrameBuffer::new(cap);
        for i in 0..n {
            b.push(i, i, None).unwrap();
        }
        b
    }

    #[test]
    fn sampling_is_uniform_and_ends_at_head() {
        for (t0, head, k) in [(100, 160, 6), (0, 7, 6), (5, 6, 6), (0, 1000, 7), (3, 50, 2)] {
            let s = uniform_samples(t0, head, k);
            assert_eq!(*s.last().unwrap(), head);
            assert!(s[0] > t0);
            let gaps: Vec<usize> =
                std::iter::once(s[0] - t0).chain(s.windows(2).map(|w| w[1] - w[0])).collect();
            let (lo, hi) = (gaps.iter().min().unwrap(), gaps.iter().max().unwrap());
            assert!(hi - lo <= 1, "{gaps:?}");
        }
        assert!(uniform_samples(4, 4, 6).is_empty());
    }

    #[test]
    fn selection_lifecycle() {
        let b = filled(101, 500);
        assert_eq!(b.begin_selection(), Ok(100));
        assert_eq!(b.begin_selection(), Err(StreamError::SelectionAlreadyPending));
        let mut p = IndexEcho::default();
        let out = b.catch_up(&dot(7), &mut p, 6).unwrap();
        // head == t0: the selected mask comes back untouched
        assert_eq!(out.mask, dot(7));
        assert_eq!(out.head, 100);
        assert!(out.visited.is_empty());
        assert!(b.t0().is_none());
        assert_eq!(b.catch_up(&dot(7), &mut p, 6).unwrap_err(), StreamError::NoPendingSelection);
        assert_eq!(FrameBuffer::<usize>::new(4).begin_selection(), Err(StreamError::EmptyStream));
    }

    #[test]
    fn catch_up_reaches_head() {
        let b = filled(101, 500);
        b.begin_selection().unwrap();
        for i in 101..=160 {
            b.push(i, i, None).unwrap();
        }
        let mut p = IndexEcho::default();
        let out = b.catch_up(&dot(100), &mut p, 6).unwrap();
        assert_eq!(out.visited, vec![110, 120, 130, 140, 150, 160]);
        assert_eq!(out.mask, dot(160));
        assert!(out.converged);
        assert_eq!(Some(out.head), b.head());
    }

    #[test]
    fn failure_retries_with_doubled_samples() {
        let b = filled(1, 500);
        b.begin_selection().unwrap();
        for i in 1..=60 {
            b.push(i, i, None).unwrap();
        }
        let mut p = IndexEcho { fail_at: Some(20), ..Default::default() };
        let out = b.catch_up(&dot(0), &mut p, 6).unwrap();
        assert_eq!(out.k_used, 12);
        assert_eq!(out.visited.len(), 12);

        struct AlwaysFails;
        impl MaskPropagator<usize> for AlwaysFails {
            fn seed(&mut self, _: usize, _: &usize, _: &BinaryMask) -> Result<(), PropagatorError> {
                Ok(())
            }
            fn propagate(&mut self, _: usize, _: &usize) -> Result<BinaryMask, PropagatorError> {
                Err(PropagatorError::Failed("no".into()))
            }
        }
        b.cancel_selection();
        b.begin_selection().unwrap();
        b.push(61, 61, None).unwrap();
        assert!(matches!(b.catch_up(&dot(0), &mut AlwaysFails, 6), Err(StreamError::PropagatorFailure { .. })));
    }

    #[test]
    fn propagate_before_seed_is_an_error() {
        let mut p = IndexEcho::default();
        assert_eq!(p.propagate(3, &3), Err(PropagatorError::NotSeeded));
    }

    #[test]
    fn indices_must_increase() {
        let b = filled(5, 10);
        assert!(matches!(b.push(4, 4, None), Err(StreamError::NonIncreasingIndex { .. })));
    }

    #[test]
    fn eviction_spares_pinned_frames() {
        let b = filled(20, 8);
        assert_eq!(b.indices(), (12..20).collect::<Vec<_>>());
        assert_eq!(b.begin_selection(), Ok(19));
        for i in 20..25 {
            b.push(i, i, None).unwrap();
        }
        // unpinned tail went first
        assert_eq!(b.indices(), (17..25).collect::<Vec<_>>());
        for i in 25..40 {
            b.push(i, i, None).unwrap();
            let idx = b.indices();
            assert!(idx.len() <= 8);
            assert!(idx.contains(&19), "t0 evicted at push {i}");
            assert_eq!(*idx.last().unwrap(), i);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(b.overflow_events() > 0);
        let mut p = IndexEcho::default();
        let out = b.catch_up(&dot(19), &mut p, 6).unwrap();
        assert_eq!(out.head, 39);
    }

    #[test]
    fn concurrent_producer_is_chased_to_the_head() {
        struct Slow(IndexEcho);
        impl MaskPropagator<usize> for Slow {
            fn seed(&mut self, i: usize, f: &usize, m: &BinaryMask) -> Result<(), PropagatorError> {
                self.0.seed(i, f, m)
            }
            fn propagate(&mut self, i: usize, f: &usize) -> Result<BinaryMask, PropagatorError> {
                std::thread::sleep(std::time::Duration::from_millis(2));
                self.0.propagate(i, f)
            }
        }
        let b = Arc::new(filled(50, 1000));
        b.begin_selection().unwrap();
        for i in 50..110 {
            b.push(i, i, None).unwrap();
        }
        let producer = {
            let b = Arc::clone(&b);
            std::thread::spawn(move || {
                for i in 110..115 {
                    b.push(i, i, None).unwrap();
                    std::thread::sleep(std::time::Duration::from_millis(1));
                }
            })
        };
        let mut p = Slow(IndexEcho::default());
        let out = b.catch_up(&dot(49), &mut p, 6).unwrap();
        producer.join().unwrap();
        assert!(out.head >= 109);
        assert!(out.visited.windows(2).all(|w| w[0] < w[1]));
        if out.converged {
            assert!(out.head <= b.head().unwrap());
        }
    }
}
