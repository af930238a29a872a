//! Monte-Carlo evaluation of the correction controller.
//!
//! For each generated event the controlled closed loop runs from the
//! trigger to the event end, and the departure area S (time integral of
//! |e_y|) is compared against the uncontrolled event over the identical
//! window. Untriggered events are counted but excluded from the paired
//! comparison. Per-event work is parallel; per-event seeds derive from
//! the master seed and index, so reports are identical under any worker
//! count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgm::BoundedGmm;
use crate::controller::{run_controlled, ControlOutcome, ControllerParams, SimOptions};
use crate::error::{Error, Result};
use crate::features::{DepartureEvent, Side};
use crate::synthesis::{derive_seed, generate_corpus};
use crate::vehicle::VehicleParams;

/// Trapezoidal integral of |e_y| over [t_start, t_end]. Window endpoints
/// between samples are linearly interpolated; the samples must cover the
/// window.
pub fn departure_area(t: &[f64], e_y: &[f64], t_start: f64, t_end: f64) -> Result<f64> {
    if !t_start.is_finite() || !t_end.is_finite() || t_start >= t_end {
        return Err(Error::EmptyInterval {
            start: t_start,
            end: t_end,
        });
    }
    if t.len() != e_y.len() || t.len() < 2 {
        return Err(Error::WindowNotCovered {
            start: t_start,
            end: t_end,
        });
    }
    let eps = 1e-9;
    if t[0] > t_start + eps || t[t.len() - 1] < t_end - eps {
        return Err(Error::WindowNotCovered {
            start: t_start,
            end: t_end,
        });
    }
    let value_at = |tq: f64| -> f64 {
        let i = match t.iter().position(|&ti| ti >= tq) {
            Some(0) => return e_y[0].abs(),
            Some(i) => i,
            None => return e_y[e_y.len() - 1].abs(),
        };
        let w = (tq - t[i - 1]) / (t[i] - t[i - 1]);
        (e_y[i - 1] + w * (e_y[i] - e_y[i - 1])).abs()
    };
    let mut s = 0.0;
    let mut prev_t = t_start;
    let mut prev_v = value_at(t_start);
    for i in 0..t.len() {
        if t[i] <= t_start || t[i] >= t_end {
            continue;
        }
        s += 0.5 * (prev_v + e_y[i].abs()) * (t[i] - prev_t);
        prev_t = t[i];
        prev_v = e_y[i].abs();
    }
    s += 0.5 * (prev_v + value_at(t_end)) * (t_end - prev_t);
    Ok(s)
}

/// Evaluation settings; `ts` is both the reconstruction sampling time and
/// the integrator step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_per_side: usize,
    pub ts: f64,
    pub seed: u64,
    pub sim: SimOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_per_side: 200,
            ts: 0.05,
            seed: 0,
            sim: SimOptions::default(),
        }
    }
}

/// One evaluated event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub side: Side,
    pub triggered: bool,
    pub t_trigger: Option<f64>,
    /// integral of |e_y| without control; over the paired window for
    /// triggered events, over the whole event otherwise
    pub s_uncontrolled: f64,
    pub s_controlled: Option<f64>,
    pub reduction_percent: Option<f64>,
}

/// Batch statistics for one departure side. Means and standard deviations
/// are over triggered events (the paired population).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideAggregate {
    pub side: Side,
    pub n_events: usize,
    pub n_triggered: usize,
    pub comparison_defined: bool,
    pub mean_s_uncontrolled: Option<f64>,
    pub std_s_uncontrolled: Option<f64>,
    pub mean_s_controlled: Option<f64>,
    pub std_s_controlled: Option<f64>,
    /// 100 (mean_unc - mean_ctrl) / mean_unc
    pub reduction_percent: Option<f64>,
    /// mean of per-event paired reductions
    pub mean_paired_reduction_percent: Option<f64>,
    /// standard deviation of the paired differences S_unc - S_ctrl
    pub std_paired_difference: Option<f64>,
    /// share of triggered events with S_ctrl < S_unc
    pub fraction_improved: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub n_per_side: usize,
    pub ts: f64,
    pub sim: SimOptions,
    /// hash of the resolved configuration; filled by pipeline front ends
    pub config_hash: Option<String>,
}

/// Full evaluation output; serializes deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    pub left: Option<SideAggregate>,
    pub right: Option<SideAggregate>,
    pub per_event: Vec<EventRecord>,
}

/// Runs the paired controlled/uncontrolled comparison over corpora
/// generated from the per-side models.
pub fn evaluate_batch(
    model_left: Option<&BoundedGmm>,
    model_right: Option<&BoundedGmm>,
    vehicle: &VehicleParams,
    ctrl: &ControllerParams,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    ctrl.validate(vehicle)?;
    let mut per_event = Vec::new();
    let mut left = None;
    let mut right = None;
    for (side, model) in [(Side::Left, model_left), (Side::Right, model_right)] {
        let Some(model) = model else { continue };
        let side_seed = derive_seed(cfg.seed, side_tag(side));
        let events = generate_corpus(model, cfg.n_per_side, cfg.ts, side_seed)?;
        let records: Vec<EventRecord> = events
            .par_iter()
            .map(|event| evaluate_event(event, vehicle, ctrl, &cfg.sim))
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate(side, &records);
        match side {
            Side::Left => left = Some(agg),
            Side::Right => right = Some(agg),
        }
        per_event.extend(records);
    }
    Ok(EvaluationReport {
        meta: ReportMeta {
            seed: cfg.seed,
            n_per_side: cfg.n_per_side,
            ts: cfg.ts,
            sim: cfg.sim,
            config_hash: None,
        },
        left,
        right,
        per_event,
    })
}

fn side_tag(side: Side) -> u64 {
    match side {
        Side::Left => 0x4c,
        Side::Right => 0x52,
    }
}

/// Paired comparison for one event: both arms integrate |e_y| over the
/// identical window from the trigger to the event end.
pub fn evaluate_event(
    event: &DepartureEvent,
    vehicle: &VehicleParams,
    ctrl: &ControllerParams,
    sim: &SimOptions,
) -> Result<EventRecord> {
    let times = event.rel_times();
    let t_end = *times.last().unwrap();
    let shift = sim.offset_convention.offset(ctrl, vehicle);
    let signed_shift = match event.side() {
        Side::Left => -shift,
        Side::Right => shift,
    };
    let e_y_unc: Vec<f64> = event.ys().iter().map(|y| y + signed_shift).collect();

    match run_controlled(event, vehicle, ctrl, sim)? {
        ControlOutcome::Triggered(traj) => {
            let s_ctrl = departure_area(&traj.t, &traj.e_y(), traj.t_s, t_end)?;
            let s_unc = departure_area(&times, &e_y_unc, traj.t_s, t_end)?;
            let reduction = if s_unc > 0.0 {
                Some(100.0 * (s_unc - s_ctrl) / s_unc)
            } else {
                None
            };
            Ok(EventRecord {
                event_id: event.event_id().to_string(),
                side: event.side(),
                triggered: true,
                t_trigger: Some(traj.t_s),
                s_uncontrolled: s_unc,
                s_controlled: Some(s_ctrl),
                reduction_percent: reduction,
            })
        }
        ControlOutcome::NotTriggered { t, e_y } => {
            let s_unc = departure_area(&t, &e_y, t[0], t_end)?;
            Ok(EventRecord {
                event_id: event.event_id().to_string(),
                side: event.side(),
                triggered: false,
                t_trigger: None,
                s_uncontrolled: s_unc,
                s_controlled: None,
                reduction_percent: None,
            })
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn aggregate(side: Side, records: &[EventRecord]) -> SideAggregate {
    let n_events = records.len();
    let triggered: Vec<&EventRecord> = records.iter().filter(|r| r.triggered).collect();
    let n_triggered = triggered.len();
    if n_triggered == 0 {
        return SideAggregate {
            side,
            n_events,
            n_triggered,
            comparison_defined: false,
            mean_s_uncontrolled: None,
            std_s_uncontrolled: None,
            mean_s_controlled: None,
            std_s_controlled: None,
            reduction_percent: None,
            mean_paired_reduction_percent: None,
            std_paired_difference: None,
            fraction_improved: None,
        };
    }
    let s_unc: Vec<f64> = triggered.iter().map(|r| r.s_uncontrolled).collect();
    let s_ctrl: Vec<f64> = triggered.iter().map(|r| r.s_controlled.unwrap()).collect();
    let diffs: Vec<f64> = s_unc
        .iter()
        .zip(&s_ctrl)
        .map(|(u, c)| u - c)
        .collect();
    let (mu_u, sd_u) = mean_std(&s_unc);
    let (mu_c, sd_c) = mean_std(&s_ctrl);
    let (_, sd_d) = mean_std(&diffs);
    let paired: Vec<f64> = triggered.iter().filter_map(|r| r.reduction_percent).collect();
    let improved = diffs.iter().filter(|d| **d > 0.0).count();
    SideAggregate {
        side,
        n_events,
        n_triggered,
        comparison_defined: mu_u > 0.0,
        mean_s_uncontrolled: Some(mu_u),
        std_s_uncontrolled: Some(sd_u),
        mean_s_controlled: Some(mu_c),
        std_s_controlled: Some(sd_c),
        reduction_percent: if mu_u > 0.0 {
            Some(100.0 * (mu_u - mu_c) / mu_u)
        } else {
            None
        },
        mean_paired_reduction_percent: if paired.is_empty() {
            None
        } else {
            Some(paired.iter().sum::<f64>() / paired.len() as f64)
        },
        std_paired_difference: Some(sd_d),
        fraction_improved: Some(improved as f64 / n_triggered as f64),
    }
}

/// One row of the corpus-size sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub side: Side,
    pub arm: &'static str,
    pub mean_s: f64,
    pub std_s: f64,
    /// standard error of the mean
    pub sem_s: f64,
}

/// Evaluates once per corpus size with the same master seed.
pub fn sweep_report(
    model_left: Option<&BoundedGmm>,
    model_right: Option<&BoundedGmm>,
    vehicle: &VehicleParams,
    ctrl: &ControllerParams,
    base: &EvalConfig,
    n_values: &[usize],
) -> Result<Vec<EvaluationReport>> {
    if n_values.is_empty() {
        return Err(Error::EmptyKRange);
    }
    n_values
        .iter()
        .map(|&n| {
            let cfg = EvalConfig {
                n_per_side: n,
                ..*base
            };
            evaluate_batch(model_left, model_right, vehicle, ctrl, &cfg)
        })
        .collect()
}

/// Flattens sweep reports into mean/std/sem convergence rows.
pub fn sweep_table(reports: &[EvaluationReport]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for r in reports {
        for agg in [&r.left, &r.right].into_iter().flatten() {
            if agg.n_triggered == 0 {
                continue;
            }
            let n = agg.n_triggered;
            for (arm, mean, std) in [
                (
                    "uncontrolled",
                    agg.mean_s_uncontrolled,
                    agg.std_s_uncontrolled,
                ),
                ("controlled", agg.mean_s_controlled, agg.std_s_controlled),
            ] {
                if let (Some(m), Some(s)) = (mean, std) {
                    rows.push(SweepRow {
                        n: r.meta.n_per_side,
                        side: agg.side,
                        arm,
                        mean_s: m,
                        std_s: s,
                        sem_s: s / (n as f64).sqrt(),
                    });
                }
            }
        }
    }
    rows
}
