use serde::{Deserialize, Serialize};

use crate::model::{Route, StopEvent, StopId, TripRun};
use crate::{Error, Result};

/// A maximal run of route stops with no AVL record inside one trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapInterval {
    /// Last reported stop before the gap (S_0); `None` for a leading gap.
    pub anchor_before: Option<StopEvent>,
    /// First reported stop after the gap (S_1); `None` for a trailing gap.
    pub anchor_after: Option<StopEvent>,
    pub missing_stops: Vec<StopId>,
    /// Route positions of `missing_stops`.
    pub positions: Vec<usize>,
}

impl GapInterval {
    pub fn unanchored(&self) -> bool {
        self.anchor_after.is_none()
    }

    pub fn len(&self) -> usize {
        self.missing_stops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing_stops.is_empty()
    }
}

/// Finds missing stops of a run; a run without any event cannot be repaired.
pub fn detect_gaps(run: &TripRun, route: &Route) -> Result<Vec<GapInterval>> {
    if run.events.is_empty() {
        return Err(Error::Unrepairable(format!("{} trip {} has no events", run.route, run.trip_index)));
    }
    let mut present: Vec<Option<&StopEvent>> = vec![None; route.stops.len()];
    let mut cursor = 0;
    for e in &run.events {
        let Some(p) = route.stops[cursor..].iter().position(|s| *s == e.stop) else {
            return Err(Error::InvalidInput(format!(
                "{} trip {} visits {} out of order",
                run.route, run.trip_index, e.stop
            )));
        };
        present[cursor + p] = Some(e);
        cursor += p + 1;
    }
    let mut gaps = Vec::new();
    let mut k = 0;
    while k < present.len() {
        if present[k].is_some() {
            k += 1;
            continue;
        }
        let start = k;
        while k < present.len() && present[k].is_none() {
            k += 1;
        }
        gaps.push(GapInterval {
            anchor_before: start.checked_sub(1).and_then(|i| present[i].cloned()),
            anchor_after: present.get(k).copied().flatten().cloned(),
            missing_stops: route.stops[start..k].to_vec(),
            positions: (start..k).collect(),
        });
    }
    Ok(gaps)
}
