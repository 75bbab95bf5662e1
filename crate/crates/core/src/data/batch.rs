use super::corpus::SplitView;
use crate::error::{Error, Result};

/// Contiguous lane batching of one split.
///
/// The split is cut into `lanes` equal segments of `segment` bytes (the
/// remainder is dropped). Lane `b` reads its segment front to back in
/// windows of `window` inputs, so the state at the end of one window is the
/// right starting state for the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan<'a> {
    pub ids: &'a [u8],
    pub lanes: usize,
    pub window: usize,
    pub segment: usize,
    /// Windows in one pass over the split.
    pub windows: usize,
}

/// One truncation window; rows are time-major (`t * lanes + lane`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub lanes: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Window {
    pub fn input(&self, lane: usize, t: usize) -> usize {
        self.inputs[t * self.lanes + lane]
    }

    pub fn target(&self, lane: usize, t: usize) -> usize {
        self.targets[t * self.lanes + lane]
    }
}

/// `B * T * floor((len / B - 1) / T)`: targets predicted in one pass.
pub fn targets_per_epoch(len: usize, lanes: usize, window: usize) -> usize {
    if lanes == 0 || window == 0 || len / lanes == 0 {
        return 0;
    }
    lanes * window * ((len / lanes - 1) / window)
}

/// Plan the windows of a split.
pub fn make_batches<'a>(view: SplitView<'a>, lanes: usize, window: usize) -> Result<BatchPlan<'a>> {
    if lanes == 0 || window == 0 {
        return Err(Error::Config("batch lanes and window must be positive".into()));
    }
    let segment = view.len() / lanes;
    let windows = if segment == 0 { 0 } else { (segment - 1) / window };
    if windows == 0 {
        return Err(Error::Config(format!(
            "a split of {} bytes cannot fill one window of {window} steps on {lanes} lanes (needs {})",
            view.len(),
            lanes * (window + 1)
        )));
    }
    Ok(BatchPlan {
        ids: view.ids,
        lanes,
        window,
        segment,
        windows,
    })
}

impl<'a> BatchPlan<'a> {
    /// Byte range of lane `lane` within the split.
    pub fn lane_range(&self, lane: usize) -> std::ops::Range<usize> {
        lane * self.segment..(lane + 1) * self.segment
    }

    pub fn targets_per_epoch(&self) -> usize {
        self.lanes * self.window * self.windows
    }

    pub fn window(&self, index: usize) -> Window {
        assert!(index < self.windows, "window {index} of {}", self.windows);
        let (b, t) = (self.lanes, self.window);
        let mut inputs = Vec::with_capacity(b * t);
        let mut targets = Vec::with_capacity(b * t);
        for step in 0..t {
            for lane in 0..b {
                let pos = lane * self.segment + index * t + step;
                inputs.push(self.ids[pos] as usize);
                targets.push(self.ids[pos + 1] as usize);
            }
        }
        Window {
            index,
            lanes: b,
            steps: t,
            inputs,
            targets,
        }
    }

    /// Windows from `start` to the end of the pass.
    pub fn iter_from(&self, start: usize) -> Windows<'a> {
        Windows { plan: *self, next: start }
    }

    pub fn iter(&self) -> Windows<'a> {
        self.iter_from(0)
    }
}

pub struct Windows<'a> {
    plan: BatchPlan<'a>,
    next: usize,
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        if self.next >= self.plan.windows {
            return None;
        }
        let w = self.plan.window(self.next);
        self.next += 1;
        Some(w)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.plan.windows.saturating_sub(self.next);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_lane_windows() {
        let ids = [0u8, 1, 2, 3, 4];
        let plan = make_batches(SplitView::new(&ids), 1, 2).unwrap();
        let ws: Vec<Window> = plan.iter().collect();
        assert_eq!(ws.len(), 2);
        assert_eq!((ws[0].inputs.clone(), ws[0].targets.clone()), (vec![0, 1], vec![1, 2]));
        assert_eq!((ws[1].inputs.clone(), ws[1].targets.clone()), (vec![2, 3], vec![3, 4]));
    }

    #[test]
    fn two_lanes_split_the_data_in_half() {
        let ids: Vec<u8> = (0..100).collect();
        let plan = make_batches(SplitView::new(&ids), 2, 7).unwrap();
        assert_eq!(plan.lane_range(0), 0..50);
        assert_eq!(plan.lane_range(1), 50..100);
        for w in plan.iter() {
            for t in 0..w.steps {
                assert!(w.input(0, t) < 50 && w.target(0, t) < 50);
                assert!(w.input(1, t) >= 50 && w.target(1, t) < 100);
            }
        }
    }

    #[test]
    fn too_small_split_is_rejected() {
        let ids = [0u8; 9];
        assert!(matches!(make_batches(SplitView::new(&ids), 2, 4), Err(Error::Config(_))));
        assert!(make_batches(SplitView::new(&[0u8; 10]), 2, 4).is_ok());
    }

    proptest! {
        #[test]
        fn counting_formula(len in 2usize..3000, lanes in 1usize..9, window in 1usize..50) {
            let ids: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
            match make_batches(SplitView::new(&ids), lanes, window) {
                Ok(plan) => {
                    let n: usize = plan.iter().map(|w| w.targets.len()).sum();
                    prop_assert_eq!(n, targets_per_epoch(len, lanes, window));
                    prop_assert_eq!(n, plan.targets_per_epoch());
                }
                Err(_) => prop_assert_eq!(targets_per_epoch(len, lanes, window), 0),
            }
        }

        #[test]
        fn windows_within_a_lane_are_adjacent(len in 50usize..2000, lanes in 1usize..5, window in 1usize..10) {
            let ids: Vec<u8> = (0..len).map(|i| (i % 256) as u8).collect();
            if let Ok(plan) = make_batches(SplitView::new(&ids), lanes, window) {
                let ws: Vec<Window> = plan.iter().collect();
                for lane in 0..lanes {
                    let mut pos = lane * plan.segment;
                    for w in &ws {
                        for t in 0..window {
                            prop_assert_eq!(w.input(lane, t), ids[pos] as usize);
                            prop_assert_eq!(w.target(lane, t), ids[pos + 1] as usize);
                            pos += 1;
                        }
                    }
                }
            }
        }
    }
}
