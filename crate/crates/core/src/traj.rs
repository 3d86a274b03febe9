//! Trajectory types and car-following pair extraction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// One timestep of longitudinal kinematics. `x` increases along the travel
/// direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

/// A time-aligned leader/follower episode.
///
/// The gap is `dx = x_lead - x_foll - leader_length` and must stay positive;
/// `dv = v_lead - v_foll` (the IDM uses the opposite sign convention).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub pair_id: String,
    pub dt: f64,
    pub leader: Vec<TrajectorySample>,
    pub follower: Vec<TrajectorySample>,
    pub leader_length: f64,
}

impl TrajectoryPair {
    pub fn len(&self) -> usize {
        self.leader.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader.is_empty()
    }

    pub fn dx(&self, i: usize) -> f64 {
        self.leader[i].x - self.follower[i].x - self.leader_length
    }

    pub fn dv(&self, i: usize) -> f64 {
        self.leader[i].v - self.follower[i].v
    }

    /// Check the pair invariants: aligned equal-length sequences, strictly
    /// increasing constant-step timestamps, non-negative speeds, positive gap.
    pub fn validate(&self) -> Result<()> {
        if self.leader.len() != self.follower.len() {
            return Err(CoreError::Argument(format!(
                "pair {}: leader has {} samples, follower {}",
                self.pair_id,
                self.leader.len(),
                self.follower.len()
            )));
        }
        if self.len() < 2 {
            return Err(CoreError::Argument(format!(
                "pair {}: needs at least 2 samples",
                self.pair_id
            )));
        }
        if !(self.dt > 0.0) {
            return Err(CoreError::Argument(format!(
                "pair {}: dt must be positive, got {}",
                self.pair_id, self.dt
            )));
        }
        for i in 0..self.len() {
            let (l, f) = (&self.leader[i], &self.follower[i]);
            if (l.t - f.t).abs() > 1e-9 {
                return Err(CoreError::Argument(format!(
                    "pair {}: timestamps diverge at index {i}",
                    self.pair_id
                )));
            }
            if i > 0 {
                let step = l.t - self.leader[i - 1].t;
                if (step - self.dt).abs() > 1e-6 {
                    return Err(CoreError::Argument(format!(
                        "pair {}: non-uniform timestep at index {i} ({step} vs dt {})",
                        self.pair_id, self.dt
                    )));
                }
            }
            if l.v < 0.0 || f.v < 0.0 {
                return Err(CoreError::Argument(format!(
                    "pair {}: negative speed at index {i}",
                    self.pair_id
                )));
            }
            if self.dx(i) <= 0.0 {
                return Err(CoreError::Argument(format!(
                    "pair {}: non-positive gap at index {i}",
                    self.pair_id
                )));
            }
        }
        Ok(())
    }

    /// Decimate by keeping every `factor`-th sample (no filtering); trailing
    /// remainder samples are dropped. Output dt is `dt * factor`.
    pub fn downsample(&self, factor: usize) -> Result<TrajectoryPair> {
        if factor == 0 {
            return Err(CoreError::Argument("downsample factor must be >= 1".into()));
        }
        let take = |seq: &[TrajectorySample]| -> Vec<TrajectorySample> {
            seq.iter().step_by(factor).copied().collect()
        };
        Ok(TrajectoryPair {
            pair_id: self.pair_id.clone(),
            dt: self.dt * factor as f64,
            leader: take(&self.leader),
            follower: take(&self.follower),
            leader_length: self.leader_length,
        })
    }
}

/// One frame of a raw vehicle track (pre pair-extraction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackFrame {
    pub frame: u64,
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub lane: i64,
    /// Id of the vehicle ahead in the same lane; 0 when none.
    pub preceding: i64,
}

/// A contiguous-frame track of a single vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub vehicle_id: u64,
    pub dt: f64,
    pub start_frame: u64,
    pub frames: Vec<TrackFrame>,
    /// Longitudinal extent of the vehicle, used as leader length in gaps.
    pub length_m: f64,
}

impl Track {
    fn frame_index(&self, frame: u64) -> Option<usize> {
        if frame < self.start_frame {
            return None;
        }
        let i = (frame - self.start_frame) as usize;
        (i < self.frames.len()).then_some(i)
    }
}

/// Extract car-following pairs: a single unchanged leader, same lane
/// throughout, gap in (0, max_gap], duration >= min_duration.
///
/// Runs violating the gap constraint are split at the violation and the
/// surviving segments kept if still long enough.
pub fn extract_pairs(tracks: &[Track], min_duration: f64, max_gap: f64) -> Vec<TrajectoryPair> {
    let mut pairs = Vec::new();
    for follower in tracks {
        let n = follower.frames.len();
        let mut i = 0;
        while i < n {
            let lead_id = follower.frames[i].preceding;
            let lane = follower.frames[i].lane;
            let mut j = i;
            while j < n && follower.frames[j].preceding == lead_id && follower.frames[j].lane == lane
            {
                j += 1;
            }
            if lead_id > 0 {
                collect_runs(follower, tracks, i, j, min_duration, max_gap, &mut pairs);
            }
            i = j;
        }
    }
    pairs
}

fn collect_runs(
    follower: &Track,
    tracks: &[Track],
    start: usize,
    end: usize,
    min_duration: f64,
    max_gap: f64,
    out: &mut Vec<TrajectoryPair>,
) {
    let lead_id = follower.frames[start].preceding as u64;
    // The leader track may be split at frame gaps; consider each piece.
    for leader in tracks.iter().filter(|t| t.vehicle_id == lead_id) {
        let mut run_start: Option<usize> = None;
        for i in start..=end {
            let ok = i < end
                && leader
                    .frame_index(follower.frames[i].frame)
                    .map(|li| {
                        let gap = leader.frames[li].x - follower.frames[i].x - leader.length_m;
                        gap > 0.0 && gap <= max_gap
                    })
                    .unwrap_or(false);
            match (ok, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    emit_pair(follower, leader, s, i, min_duration, out);
                    run_start = None;
                }
                _ => {}
            }
        }
    }
}

fn emit_pair(
    follower: &Track,
    leader: &Track,
    start: usize,
    end: usize,
    min_duration: f64,
    out: &mut Vec<TrajectoryPair>,
) {
    let n = end - start;
    if n < 2 || (n - 1) as f64 * follower.dt < min_duration - 1e-9 {
        return;
    }
    let dt = follower.dt;
    let to_sample = |frame: &TrackFrame, k: usize| TrajectorySample {
        t: k as f64 * dt,
        x: frame.x,
        v: frame.v,
        a: frame.a,
    };
    let follower_seq: Vec<_> = (start..end)
        .map(|i| to_sample(&follower.frames[i], i - start))
        .collect();
    let leader_seq: Vec<_> = (start..end)
        .map(|i| {
            let li = leader.frame_index(follower.frames[i].frame).unwrap();
            to_sample(&leader.frames[li], i - start)
        })
        .collect();
    out.push(TrajectoryPair {
        pair_id: format!(
            "{}_{}",
            follower.vehicle_id,
            follower.start_frame + start as u64
        ),
        dt,
        leader: leader_seq,
        follower: follower_seq,
        leader_length: leader.length_m,
    });
}
