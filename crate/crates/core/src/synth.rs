//! Synthetic car-following corpus generator.
//!
//! Substitutes for licensed drone-recorded data so the full pipeline runs
//! self-contained. Leaders follow piecewise cruise/brake/recover profiles
//! with Poisson-spaced braking events; followers are driven by an IDM whose
//! parameters blend between a calm and an alert set while the leader brakes.
//! That regime split is what later makes policies calibrated on interactive
//! samples measurably more conservative than calm-sample policies, mirroring
//! what heterogeneous human data produces.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::idm::{self, IdmParams, VehicleState};
use crate::rng::{derive_seed, seeded, Rng};
use crate::traj::{TrajectoryPair, TrajectorySample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub seed: u64,
    /// Braking events per second (Poisson rate) on the leader.
    pub event_rate: f64,
    /// Episode duration in seconds.
    pub duration: f64,
    pub dt: f64,
    /// 0 disables the alert regime entirely (follower is a single fixed IDM);
    /// 1 applies the full alert parameter set during leader braking.
    pub alert_strength: f64,
    /// Amplitude (m/s) of a slow sinusoidal drift in the leader's cruise
    /// speed. Keeps calm stretches spread over a speed range instead of a
    /// single operating point, which would leave follower parameters
    /// unidentifiable from calm data.
    pub cruise_wander: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 10,
            seed: 0,
            event_rate: 0.02,
            duration: 60.0,
            dt: 0.2,
            alert_strength: 1.0,
            cruise_wander: 2.0,
        }
    }
}

/// A generated pair together with its ground-truth follower parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub pair: TrajectoryPair,
    pub calm: IdmParams,
    pub alert: IdmParams,
}

/// Piecewise leader speed profile: cruise at v_c, Poisson-timed braking
/// pulses, then constant-acceleration recovery back to v_c.
pub fn leader_profile(cfg: &SynthConfig, rng: &mut Rng) -> Vec<TrajectorySample> {
    let n = (cfg.duration / cfg.dt) as usize + 1;
    let v_cruise = 22.0 + 10.0 * rng.random::<f64>();

    // Absolute event times over the episode.
    let mut events: Vec<(f64, f64, f64)> = Vec::new(); // (onset, decel, duration)
    if cfg.event_rate > 0.0 {
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -libm::log(1.0 - u) / cfg.event_rate;
            if t >= cfg.duration {
                break;
            }
            let decel = 2.0 + 1.5 * rng.random::<f64>();
            let dur = 1.0 + 1.0 * rng.random::<f64>();
            events.push((t, decel, dur));
        }
    }
    let recover_accel = 0.8 + 0.7 * rng.random::<f64>();
    // Slow cruise drift: period 15-30 s, random phase. Tracking acceleration
    // stays well under the 0.5 m/s^2 braking threshold.
    let wander_period = 15.0 + 15.0 * rng.random::<f64>();
    let wander_phase = core::f64::consts::TAU * rng.random::<f64>();

    let mut samples = Vec::with_capacity(n);
    let mut x = 0.0;
    let mut v = v_cruise;
    let mut next_event = 0usize;
    let mut brake_until = f64::NEG_INFINITY;
    let mut brake_decel = 0.0;
    for i in 0..n {
        let t = i as f64 * cfg.dt;
        if next_event < events.len() && t >= events[next_event].0 {
            let (_, decel, dur) = events[next_event];
            brake_decel = decel;
            brake_until = t + dur;
            next_event += 1;
        }
        let target = |time: f64| {
            v_cruise
                + cfg.cruise_wander
                    * libm::sin(core::f64::consts::TAU * time / wander_period + wander_phase)
        };
        let a = if t < brake_until {
            if v > 3.0 { -brake_decel } else { 0.0 }
        } else {
            // Track the drifting target: full recovery accel when far below
            // after a brake, gentle tracking otherwise.
            ((target(t + cfg.dt) - v) / cfg.dt).clamp(-0.4, recover_accel)
        };
        samples.push(TrajectorySample { t, x, v, a });
        let v_next = (v + a * cfg.dt).max(0.0);
        x += 0.5 * (v + v_next) * cfg.dt;
        v = v_next;
    }
    samples
}

/// Close the loop behind a replayed leader with a fixed IDM.
pub fn follow_with_idm(
    leader: &[TrajectorySample],
    params: &IdmParams,
    init_gap: f64,
    init_v: f64,
    dt: f64,
) -> Vec<TrajectorySample> {
    follow_blended(leader, params, params, 0.0, init_gap, init_v, dt)
}

/// Follower with calm/alert regime blending. The alert weight tracks a
/// first-order smoothed indicator of leader maneuvering (braking or pulling
/// away; fast attack, ~2 s release), scaled by `alert_strength`.
pub fn follow_blended(
    leader: &[TrajectorySample],
    calm: &IdmParams,
    alert: &IdmParams,
    alert_strength: f64,
    init_gap: f64,
    init_v: f64,
    dt: f64,
) -> Vec<TrajectorySample> {
    let mut out = Vec::with_capacity(leader.len());
    let mut state = VehicleState {
        x: leader[0].x - init_gap,
        v: init_v,
    };
    let mut alert_w = 0.0f64;
    for (i, lead) in leader.iter().enumerate() {
        let maneuvering = if lead.a.abs() > 0.5 { 1.0 } else { 0.0 };
        // Attack within one step, release with a 2 s time constant.
        if maneuvering > alert_w {
            alert_w = maneuvering;
        } else {
            alert_w += (maneuvering - alert_w) * (dt / 2.0);
        }
        let w = alert_strength * alert_w;
        let p = IdmParams {
            v0: (1.0 - w) * calm.v0 + w * alert.v0,
            t_headway: (1.0 - w) * calm.t_headway + w * alert.t_headway,
            s0: (1.0 - w) * calm.s0 + w * alert.s0,
            a_max: (1.0 - w) * calm.a_max + w * alert.a_max,
            b: (1.0 - w) * calm.b + w * alert.b,
        };
        let gap = lead.x - state.x;
        let a = idm::idm_accel(&p, state.v, state.v - lead.v, gap)
            .map(|a| a.clamp(idm::ACCEL_MIN, idm::ACCEL_MAX))
            .unwrap_or(idm::ACCEL_MIN);
        out.push(TrajectorySample {
            t: lead.t,
            x: state.x,
            v: state.v,
            a,
        });
        if i + 1 < leader.len() {
            state = idm::kinematic_update(state, a, dt);
        }
    }
    out
}

fn draw_calm_params(v_cruise: f64, rng: &mut Rng) -> IdmParams {
    IdmParams {
        v0: v_cruise * (1.10 + 0.10 * rng.random::<f64>()),
        t_headway: 0.9 + 0.3 * rng.random::<f64>(),
        s0: 1.0 + 1.0 * rng.random::<f64>(),
        a_max: 1.0 + 0.5 * rng.random::<f64>(),
        b: 1.5 + 1.0 * rng.random::<f64>(),
    }
}

fn alert_from_calm(calm: &IdmParams) -> IdmParams {
    IdmParams {
        v0: calm.v0,
        t_headway: calm.t_headway * 1.8,
        s0: calm.s0 + 2.0,
        a_max: calm.a_max * 0.8,
        b: calm.b * 0.8,
    }
}

/// Generate a deterministic corpus; identical (config, seed) reproduces the
/// same pairs bit for bit.
pub fn synth_corpus_detailed(cfg: &SynthConfig) -> Vec<SynthPair> {
    (0..cfg.n_pairs)
        .map(|i| {
            let mut rng = seeded(derive_seed(cfg.seed, i as u64));
            let leader = leader_profile(cfg, &mut rng);
            let v_cruise = leader[0].v;
            let calm = draw_calm_params(v_cruise, &mut rng);
            let alert = alert_from_calm(&calm);
            let init_gap = calm.equilibrium_gap(v_cruise) * (1.0 + 0.1 * rng.random::<f64>());
            let follower = follow_blended(
                &leader,
                &calm,
                &alert,
                cfg.alert_strength,
                init_gap,
                v_cruise,
                cfg.dt,
            );
            SynthPair {
                pair: TrajectoryPair {
                    pair_id: format!("synth_{i:03}"),
                    dt: cfg.dt,
                    leader,
                    follower,
                    leader_length: 0.0,
                },
                calm,
                alert,
            }
        })
        .collect()
}

pub fn synth_corpus(cfg: &SynthConfig) -> Vec<TrajectoryPair> {
    synth_corpus_detailed(cfg)
        .into_iter()
        .map(|s| s.pair)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SynthConfig {
            n_pairs: 10,
            seed: 42,
            ..SynthConfig::default()
        };
        let a = synth_corpus(&cfg);
        let b = synth_corpus(&cfg);
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        let other = synth_corpus(&SynthConfig {
            seed: 43,
            ..cfg
        });
        assert_ne!(a, other);
    }

    #[test]
    fn pairs_satisfy_invariants() {
        let cfg = SynthConfig {
            n_pairs: 20,
            seed: 7,
            event_rate: 0.05,
            ..SynthConfig::default()
        };
        for pair in synth_corpus(&cfg) {
            pair.validate().unwrap();
        }
    }

    #[test]
    fn zero_event_rate_converges_to_leader_speed() {
        let cfg = SynthConfig {
            n_pairs: 5,
            seed: 3,
            event_rate: 0.0,
            duration: 120.0,
            cruise_wander: 0.0,
            ..SynthConfig::default()
        };
        for pair in synth_corpus(&cfg) {
            // Leader never accelerates.
            assert!(pair.leader.iter().all(|s| s.a == 0.0));
            // Relative speed settles near zero over the tail.
            let n = pair.len();
            for i in (n - 50)..n {
                assert!(pair.dv(i).abs() < 0.1, "dv = {}", pair.dv(i));
            }
        }
    }

    #[test]
    fn braking_event_frequency_matches_poisson_tail() {
        // P(at least one event in 60 s at 0.05/s) = 1 - exp(-3) ~ 0.95.
        let cfg = SynthConfig {
            n_pairs: 300,
            seed: 11,
            event_rate: 0.05,
            ..SynthConfig::default()
        };
        let with_brakes = synth_corpus(&cfg)
            .iter()
            .filter(|p| p.leader.iter().any(|s| s.a < -0.5))
            .count();
        let frac = with_brakes as f64 / 300.0;
        assert!(frac >= 0.90, "only {frac:.3} of pairs saw a braking event");
    }

    #[test]
    fn single_idm_follower_matches_ground_truth_replay() {
        let cfg = SynthConfig {
            n_pairs: 3,
            seed: 5,
            alert_strength: 0.0,
            event_rate: 0.03,
            ..SynthConfig::default()
        };
        for sp in synth_corpus_detailed(&cfg) {
            // Re-simulating with the stored calm params reproduces the
            // follower exactly.
            let replay = follow_with_idm(
                &sp.pair.leader,
                &sp.calm,
                sp.pair.dx(0),
                sp.pair.follower[0].v,
                cfg.dt,
            );
            for (a, b) in replay.iter().zip(&sp.pair.follower) {
                assert!((a.x - b.x).abs() < 1e-9);
            }
        }
    }
}
