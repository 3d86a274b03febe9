//! Closed-loop simulation: replay the recorded leader, drive the follower
//! with a calibrated policy, optionally switching between the interactive and
//! non-interactive policies from the online interaction intensity.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng as _;

use crate::calibrate::IdmPosterior;
use crate::error::{CoreError, Result};
use crate::gmm::{Gmm, BLOCK_DV, BLOCK_DX};
use crate::idm::{self, IdmParams, VehicleState};
use crate::interaction::{condition_pair, js_divergence, layout_of, mixture_w2, Metric};
use crate::rng::{derive_seed, seeded, Rng};
use crate::switching::SwitchConfig;
use crate::traj::{TrajectoryPair, TrajectorySample};

/// What drives the follower.
pub enum Controller<'a> {
    /// One posterior, no switching.
    Single(&'a IdmPosterior),
    /// Blend of the interactive and non-interactive policies, weighted by the
    /// online intensity through the switch rule.
    Switching {
        interactive: &'a IdmPosterior,
        non_interactive: &'a IdmPosterior,
        config: SwitchConfig,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeConfig<'a> {
    /// Joint behavior model; required for a switching controller.
    pub model: Option<&'a Gmm>,
    pub metric: Metric,
    pub n_mc: usize,
    pub seed: u64,
}

/// One simulated episode. The follower is truncated at the collision step
/// when `collision_step` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub follower: Vec<TrajectorySample>,
    /// Online intensity per step; `None` until one full history window is
    /// available, and always `None` for a single-policy controller.
    pub intensity: Vec<Option<f64>>,
    /// Interactive-policy weight applied at each step (switching only).
    pub weights: Vec<f64>,
    pub collision_step: Option<usize>,
}

impl Episode {
    pub fn collided(&self) -> bool {
        self.collision_step.is_some()
    }
}

fn sample_draw(post: &IdmPosterior, rng: &mut Rng) -> IdmParams {
    post.draws[rng.random_range(0..post.draws.len())]
}

/// Observation window ending at step `t - 1`, built from the simulated
/// follower history against the recorded leader. Matches the block order
/// (a_hist, v_foll, dv, dx) used when conditioning the joint model.
fn online_window(
    pair: &TrajectoryPair,
    sim: &[TrajectorySample],
    t: usize,
    h: usize,
) -> DVector<f64> {
    let mut w = DVector::zeros(4 * h);
    for j in 0..h {
        let i = t - h + j;
        w[j] = sim[i].a;
        w[h + j] = sim[i].v;
        w[2 * h + j] = pair.leader[i].v - sim[i].v;
        w[3 * h + j] = pair.leader[i].x - sim[i].x - pair.leader_length;
    }
    w
}

/// Simulate the follower over the full recorded leader trajectory. One
/// parameter draw per involved posterior is taken up front, so an episode is
/// a single realization; repeat with different seeds to integrate over the
/// posterior.
pub fn run_episode(
    controller: &Controller<'_>,
    pair: &TrajectoryPair,
    cfg: &EpisodeConfig<'_>,
) -> Result<Episode> {
    pair.validate()?;
    let mut rng = seeded(cfg.seed);
    let (p_int, p_non, switch) = match controller {
        Controller::Single(post) => {
            let p = sample_draw(post, &mut rng);
            (p, p, None)
        }
        Controller::Switching {
            interactive,
            non_interactive,
            config,
        } => (
            sample_draw(interactive, &mut rng),
            sample_draw(non_interactive, &mut rng),
            Some(config),
        ),
    };
    let (model, layout, marginal_joint) = match (switch, cfg.model) {
        (Some(_), Some(m)) => {
            let layout = layout_of(m)?;
            let marginal = m.marginalize(&[BLOCK_DV, BLOCK_DX])?;
            (Some(m), Some(layout), Some(marginal))
        }
        (Some(_), None) => {
            return Err(CoreError::Argument(
                "switching controller needs a behavior model".into(),
            ))
        }
        (None, _) => (None, None, None),
    };

    let n = pair.len();
    let mut follower = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut state = VehicleState {
        x: pair.follower[0].x,
        v: pair.follower[0].v,
    };
    let mut collision_step = None;

    for t in 0..n {
        let gap = pair.leader[t].x - state.x - pair.leader_length;
        if gap <= 0.0 {
            collision_step = Some(t);
            break;
        }

        let (i_t, w_t) = match (switch, &model, &layout, &marginal_joint) {
            (Some(config), Some(m), Some(layout), Some(marginal)) if t >= layout.h => {
                let window = online_window(pair, &follower, t, layout.h);
                let (f, g) = condition_pair(m, marginal, &window, layout.h).map_err(|e| {
                    CoreError::Numeric(alloc::format!(
                        "online conditioning failed at step {t}: {e}"
                    ))
                })?;
                let value = match cfg.metric {
                    Metric::Js => {
                        js_divergence(&f, &g, cfg.n_mc, derive_seed(cfg.seed, t as u64))?
                    }
                    Metric::W2 => mixture_w2(&f, &g)?,
                };
                (Some(value), config.weight(value).w_int)
            }
            _ => (None, 0.0),
        };

        let a_non = idm::idm_accel(&p_non, state.v, state.v - pair.leader[t].v, gap)?;
        let a = if w_t > 0.0 {
            let a_int = idm::idm_accel(&p_int, state.v, state.v - pair.leader[t].v, gap)?;
            w_t * a_int + (1.0 - w_t) * a_non
        } else {
            a_non
        };
        let a = a.clamp(idm::ACCEL_MIN, idm::ACCEL_MAX);

        follower.push(TrajectorySample {
            t: pair.leader[t].t,
            x: state.x,
            v: state.v,
            a,
        });
        intensity.push(i_t);
        weights.push(w_t);
        if t + 1 < n {
            state = idm::kinematic_update(state, a, pair.dt);
        }
    }

    Ok(Episode {
        follower,
        intensity,
        weights,
        collision_step,
    })
}

/// RMSE between the simulated and recorded follower gap, over the simulated
/// steps.
pub fn rmse_dx(pair: &TrajectoryPair, episode: &Episode) -> f64 {
    let mut acc = 0.0;
    let n = episode.follower.len();
    for (t, s) in episode.follower.iter().enumerate() {
        let sim_dx = pair.leader[t].x - s.x - pair.leader_length;
        let e = sim_dx - pair.dx(t);
        acc += e * e;
    }
    libm::sqrt(acc / n.max(1) as f64)
}

/// One-sided gap error: penalizes only steps where the simulated follower is
/// closer to the leader than the human was.
pub fn rmse_safe(pair: &TrajectoryPair, episode: &Episode) -> f64 {
    let mut acc = 0.0;
    let n = episode.follower.len();
    for (t, s) in episode.follower.iter().enumerate() {
        let sim_dx = pair.leader[t].x - s.x - pair.leader_length;
        let e = (pair.dx(t) - sim_dx).max(0.0);
        acc += e * e;
    }
    libm::sqrt(acc / n.max(1) as f64)
}

/// Aggregate closed-loop metrics for one pair under one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub pair_id: String,
    pub n_runs: usize,
    pub rmse_dx_mean: f64,
    pub rmse_dx_std: f64,
    pub rmse_safe_mean: f64,
    pub rmse_safe_std: f64,
    pub collisions: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Run `n_runs` episodes per pair (one posterior draw each) and aggregate.
/// Population statistics, so a single run reports a zero std.
pub fn evaluate(
    controller: &Controller<'_>,
    pairs: &[TrajectoryPair],
    cfg: &EpisodeConfig<'_>,
    n_runs: usize,
) -> Result<Vec<EvalRecord>> {
    if n_runs == 0 {
        return Err(CoreError::Argument("evaluate needs n_runs >= 1".into()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (pi, pair) in pairs.iter().enumerate() {
        let mut dx = Vec::with_capacity(n_runs);
        let mut safe = Vec::with_capacity(n_runs);
        let mut collisions = 0;
        for run in 0..n_runs {
            let run_cfg = EpisodeConfig {
                seed: derive_seed(derive_seed(cfg.seed, pi as u64), run as u64),
                ..*cfg
            };
            let episode = run_episode(controller, pair, &run_cfg)?;
            dx.push(rmse_dx(pair, &episode));
            safe.push(rmse_safe(pair, &episode));
            collisions += episode.collided() as usize;
        }
        let (dx_m, dx_s) = mean_std(&dx);
        let (safe_m, safe_s) = mean_std(&safe);
        out.push(EvalRecord {
            pair_id: pair.pair_id.clone(),
            n_runs,
            rmse_dx_mean: dx_m,
            rmse_dx_std: dx_s,
            rmse_safe_mean: safe_m,
            rmse_safe_std: safe_s,
            collisions,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::Provenance;
    use crate::gmm::{BlockSpec, FeatureLayout, BLOCK_A_FUT, BLOCK_A_HIST, BLOCK_V_FOLL};
    use crate::switching::SwitchMode;
    use crate::synth::{synth_corpus_detailed, SynthConfig};
    use alloc::string::ToString;
    use alloc::vec;
    use nalgebra::DMatrix;

    fn point_posterior(p: IdmParams) -> IdmPosterior {
        IdmPosterior {
            draws: vec![p],
            sigma_obs: vec![0.1],
            provenance: Provenance::Random,
            acceptance_rate: 0.44,
            acceptance_warning: false,
        }
    }

    fn plain_cfg(seed: u64) -> EpisodeConfig<'static> {
        EpisodeConfig {
            model: None,
            metric: Metric::Js,
            n_mc: 64,
            seed,
        }
    }

    #[test]
    fn ground_truth_policy_replays_human_follower() {
        let cfg = SynthConfig {
            n_pairs: 3,
            seed: 12,
            alert_strength: 0.0,
            event_rate: 0.04,
            ..SynthConfig::default()
        };
        for sp in synth_corpus_detailed(&cfg) {
            let post = point_posterior(sp.calm);
            let episode =
                run_episode(&Controller::Single(&post), &sp.pair, &plain_cfg(0)).unwrap();
            assert!(!episode.collided());
            assert!(rmse_dx(&sp.pair, &episode) < 1e-9);
            assert!(rmse_safe(&sp.pair, &episode) < 1e-9);
        }
    }

    /// Leader cruises then slams to a stop; the recorded human mirrors the
    /// braking instantly, keeping a constant small gap (valid data). An IDM
    /// that only reacts after the gap closes cannot survive from that gap.
    fn emergency_stop_pair(gap: f64) -> TrajectoryPair {
        let dt = 0.2;
        let mut leader = Vec::new();
        let mut x = 100.0;
        let mut v = 30.0;
        for i in 0..120 {
            let a = if i >= 10 && v > 0.0 { -9.0 } else { 0.0 };
            leader.push(TrajectorySample {
                t: i as f64 * dt,
                x,
                v,
                a,
            });
            let v_next = (v + a * dt).max(0.0);
            x += 0.5 * (v + v_next) * dt;
            v = v_next;
        }
        let follower = leader
            .iter()
            .map(|s| TrajectorySample { x: s.x - gap, ..*s })
            .collect();
        TrajectoryPair {
            pair_id: "stop".to_string(),
            dt,
            leader,
            follower,
            leader_length: 0.0,
        }
    }

    #[test]
    fn sudden_leader_stop_from_short_gap_collides() {
        let pair = emergency_stop_pair(4.0);
        let post = point_posterior(IdmParams {
            v0: 30.0,
            t_headway: 0.1,
            s0: 0.5,
            a_max: 1.5,
            b: 2.0,
        });
        let episode = run_episode(&Controller::Single(&post), &pair, &plain_cfg(0)).unwrap();
        assert!(episode.collided());
        let step = episode.collision_step.unwrap();
        assert_eq!(episode.follower.len(), step);
        assert!(step < pair.len());
    }

    #[test]
    fn rmse_oracles_on_constant_offset() {
        let dt = 0.2;
        let leader: Vec<TrajectorySample> = (0..10)
            .map(|i| TrajectorySample {
                t: i as f64 * dt,
                x: 50.0 + i as f64,
                v: 5.0,
                a: 0.0,
            })
            .collect();
        let follower = leader
            .iter()
            .map(|s| TrajectorySample { x: s.x - 30.0, ..*s })
            .collect();
        let pair = TrajectoryPair {
            pair_id: "hand".to_string(),
            dt,
            leader,
            follower,
            leader_length: 0.0,
        };
        // Hand-built episode: follower 3 m ahead of the human everywhere,
        // so the simulated gap is 3 m tighter.
        let episode = Episode {
            follower: pair
                .follower
                .iter()
                .map(|s| TrajectorySample { x: s.x + 3.0, ..*s })
                .collect(),
            intensity: vec![None; 10],
            weights: vec![0.0; 10],
            collision_step: None,
        };
        assert!((rmse_dx(&pair, &episode) - 3.0).abs() < 1e-12);
        assert!((rmse_safe(&pair, &episode) - 3.0).abs() < 1e-12);
        // The mirrored offset is farther than the human: safe error vanishes.
        let wide = Episode {
            follower: pair
                .follower
                .iter()
                .map(|s| TrajectorySample { x: s.x - 3.0, ..*s })
                .collect(),
            ..episode
        };
        assert!((rmse_dx(&pair, &wide) - 3.0).abs() < 1e-12);
        assert_eq!(rmse_safe(&pair, &wide), 0.0);
    }

    /// Minimal joint model with the car-following block layout (H=2, F=1):
    /// a single broad Gaussian, enough to exercise the switching path.
    fn tiny_model() -> Gmm {
        let layout = FeatureLayout { h: 2, f: 1 };
        let d = layout.dim();
        let mut mean = DVector::zeros(d);
        // v_foll block around 25 m/s, dx block around 30 m.
        mean[3] = 25.0;
        mean[4] = 25.0;
        mean[7] = 30.0;
        mean[8] = 30.0;
        Gmm {
            weights: vec![1.0],
            means: vec![mean],
            covs: vec![DMatrix::identity(d, d) * 25.0],
            blocks: vec![
                BlockSpec {
                    name: BLOCK_A_HIST.to_string(),
                    len: 2,
                },
                BlockSpec {
                    name: BLOCK_A_FUT.to_string(),
                    len: 1,
                },
                BlockSpec {
                    name: BLOCK_V_FOLL.to_string(),
                    len: 2,
                },
                BlockSpec {
                    name: BLOCK_DV.to_string(),
                    len: 2,
                },
                BlockSpec {
                    name: BLOCK_DX.to_string(),
                    len: 2,
                },
            ],
            scaler: None,
        }
    }

    fn synth_pair(seed: u64) -> TrajectoryPair {
        let cfg = SynthConfig {
            n_pairs: 1,
            seed,
            event_rate: 0.05,
            ..SynthConfig::default()
        };
        synth_corpus_detailed(&cfg).remove(0).pair
    }

    #[test]
    fn switching_episode_produces_bounded_weights_after_warmup() {
        let model = tiny_model();
        let pair = synth_pair(3);
        let calm = IdmParams {
            v0: 30.0,
            t_headway: 1.0,
            s0: 1.5,
            a_max: 1.2,
            b: 2.0,
        };
        let alert = IdmParams {
            v0: 26.0,
            t_headway: 2.2,
            s0: 4.0,
            a_max: 1.0,
            b: 1.6,
        };
        let p_int = point_posterior(alert);
        let p_non = point_posterior(calm);
        let controller = Controller::Switching {
            interactive: &p_int,
            non_interactive: &p_non,
            config: SwitchConfig {
                i0: 0.05,
                beta: 0.02,
                mode: SwitchMode::Soft,
            },
        };
        let cfg = EpisodeConfig {
            model: Some(&model),
            metric: Metric::Js,
            n_mc: 64,
            seed: 9,
        };
        let episode = run_episode(&controller, &pair, &cfg).unwrap();
        assert!(!episode.collided());
        assert_eq!(episode.weights.len(), pair.len());
        // Warm-up: no intensity and a pure non-interactive command.
        for t in 0..2 {
            assert!(episode.intensity[t].is_none());
            assert_eq!(episode.weights[t], 0.0);
        }
        for t in 2..pair.len() {
            let i = episode.intensity[t].unwrap();
            assert!((0.0..=crate::interaction::LN_2).contains(&i));
            assert!((0.0..=1.0).contains(&episode.weights[t]));
        }
    }

    #[test]
    fn switching_without_model_is_an_error() {
        let p = point_posterior(IdmParams {
            v0: 30.0,
            t_headway: 1.5,
            s0: 2.0,
            a_max: 1.2,
            b: 2.0,
        });
        let controller = Controller::Switching {
            interactive: &p,
            non_interactive: &p,
            config: SwitchConfig {
                i0: 0.1,
                beta: 0.02,
                mode: SwitchMode::Hard,
            },
        };
        let err = run_episode(&controller, &synth_pair(1), &plain_cfg(0));
        assert!(matches!(err, Err(CoreError::Argument(_))));
    }

    #[test]
    fn episodes_deterministic_and_seed_sensitive() {
        let pair = synth_pair(5);
        let base = IdmParams {
            v0: 30.0,
            t_headway: 1.2,
            s0: 2.0,
            a_max: 1.2,
            b: 2.0,
        };
        let wide = IdmPosterior {
            draws: (0..50)
                .map(|i| IdmParams {
                    t_headway: 0.8 + 0.02 * i as f64,
                    ..base
                })
                .collect(),
            sigma_obs: vec![0.1; 50],
            provenance: Provenance::Random,
            acceptance_rate: 0.44,
            acceptance_warning: false,
        };
        let a = run_episode(&Controller::Single(&wide), &pair, &plain_cfg(7)).unwrap();
        let b = run_episode(&Controller::Single(&wide), &pair, &plain_cfg(7)).unwrap();
        let c = run_episode(&Controller::Single(&wide), &pair, &plain_cfg(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn evaluate_aggregates_and_single_run_has_zero_std() {
        let cfg = SynthConfig {
            n_pairs: 2,
            seed: 21,
            alert_strength: 0.0,
            event_rate: 0.04,
            ..SynthConfig::default()
        };
        let detailed = synth_corpus_detailed(&cfg);
        let pairs: Vec<TrajectoryPair> = detailed.iter().map(|s| s.pair.clone()).collect();
        let post = point_posterior(detailed[0].calm);
        let records = evaluate(&Controller::Single(&post), &pairs, &plain_cfg(0), 1).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert_eq!(r.n_runs, 1);
            assert_eq!(r.rmse_dx_std, 0.0);
            assert_eq!(r.rmse_safe_std, 0.0);
        }
        // The first pair was generated by exactly this policy.
        assert!(records[0].rmse_dx_mean < 1e-9);
        assert!(records[1].rmse_dx_mean > records[0].rmse_dx_mean);
    }
}
