//! Departure-event time series and their reduction to feature vectors.
//!
//! An event is a uniformly sampled series of lateral offset `y`, speed `v`,
//! and lane curvature `c`. It is reduced to eight parameters: the lateral
//! profile is fit by a parabola in travel distance (peak `d_y`, residual
//! std `sigma_y`), speed by a line in time (mean `v_bar`, slope `a_bar`,
//! residual std `sigma_v`), and curvature by a line in time (`c0`,
//! `delta_c`), plus the duration `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Departure side. Left events carry signed `y` (negative toward the left
/// boundary) and are fit as a separate population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn code(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s.trim() {
            "L" | "l" | "left" | "Left" => Some(Side::Left),
            "R" | "r" | "right" | "Right" => Some(Side::Right),
            _ => None,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// One sample of the departure time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// time (s)
    pub t: f64,
    /// lateral departure distance from lane center (m)
    pub y: f64,
    /// longitudinal speed (m/s)
    pub v: f64,
    /// lane curvature (1/m)
    pub c: f64,
}

/// Tolerance on sample spacing uniformity (s).
pub const UNIFORM_SPACING_TOL: f64 = 1e-9;

/// A uniformly sampled departure episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureEvent {
    event_id: String,
    side: Side,
    samples: Vec<TrajectorySample>,
}

impl DepartureEvent {
    pub fn new(
        event_id: impl Into<String>,
        side: Side,
        samples: Vec<TrajectorySample>,
    ) -> Result<Self> {
        let event_id = event_id.into();
        validate_samples(&event_id, &samples)?;
        Ok(DepartureEvent {
            event_id,
            side,
            samples,
        })
    }

    pub fn event_id(&self) -> &str {
        &self.event_id
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample spacing (s).
    pub fn ts(&self) -> f64 {
        self.duration() / (self.len() - 1) as f64
    }

    /// Event duration T = t_L - t_1 (s).
    pub fn duration(&self) -> f64 {
        self.samples[self.len() - 1].t - self.samples[0].t
    }

    /// Arithmetic mean of the speed samples.
    pub fn mean_speed(&self) -> f64 {
        self.samples.iter().map(|s| s.v).sum::<f64>() / self.len() as f64
    }

    /// Event-clock times (first sample rebased to 0).
    pub fn rel_times(&self) -> Vec<f64> {
        let t0 = self.samples[0].t;
        self.samples.iter().map(|s| s.t - t0).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn vs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    pub fn cs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.c).collect()
    }

    /// Longitudinal travel distance x(l) by trapezoidal integration of v
    /// over t, starting at 0.
    pub fn travel_distance(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.push(0.0);
        for w in self.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let prev = *x.last().unwrap();
            x.push(prev + 0.5 * (w[0].v + w[1].v) * dt);
        }
        x
    }

    /// The mirrored event: `y` and `c` negated, side flipped.
    pub fn mirrored(&self) -> DepartureEvent {
        let samples = self
            .samples
            .iter()
            .map(|s| TrajectorySample {
                t: s.t,
                y: -s.y,
                v: s.v,
                c: -s.c,
            })
            .collect();
        DepartureEvent {
            event_id: self.event_id.clone(),
            side: match self.side {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            },
            samples,
        }
    }
}

fn validate_samples(event_id: &str, samples: &[TrajectorySample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            event_id: event_id.to_string(),
            len: samples.len(),
        });
    }
    for (i, s) in samples.iter().enumerate() {
        for (what, v) in [("t", s.t), ("y", s.y), ("v", s.v), ("c", s.c)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample {
                    event_id: event_id.to_string(),
                    what: match what {
                        "t" => "t",
                        "y" => "y",
                        "v" => "v",
                        _ => "c",
                    },
                    index: i,
                });
            }
        }
        if s.t < 0.0 {
            return Err(Error::NonFiniteSample {
                event_id: event_id.to_string(),
                what: "t",
                index: i,
            });
        }
    }
    let mut max_dev: f64 = 0.0;
    let dt = (samples[samples.len() - 1].t - samples[0].t) / (samples.len() - 1) as f64;
    for (i, w) in samples.windows(2).enumerate() {
        let step = w[1].t - w[0].t;
        if step <= 0.0 {
            return Err(Error::NonMonotonicTime {
                event_id: event_id.to_string(),
                index: i + 1,
            });
        }
        max_dev = max_dev.max((step - dt).abs());
    }
    if max_dev > UNIFORM_SPACING_TOL {
        return Err(Error::NonUniformSampling {
            event_id: event_id.to_string(),
            max_dev,
        });
    }
    Ok(())
}

/// Resamples arbitrary strictly-increasing samples onto a uniform grid of
/// the same length by linear interpolation. Used at ingestion before the
/// uniform-spacing invariant is enforced.
pub fn resample_to_uniform(
    event_id: &str,
    samples: &[TrajectorySample],
) -> Result<Vec<TrajectorySample>> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            event_id: event_id.to_string(),
            len: samples.len(),
        });
    }
    for (i, w) in samples.windows(2).enumerate() {
        if w[1].t <= w[0].t {
            return Err(Error::NonMonotonicTime {
                event_id: event_id.to_string(),
                index: i + 1,
            });
        }
    }
    let n = samples.len();
    let t0 = samples[0].t;
    let dt = (samples[n - 1].t - t0) / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0usize;
    for i in 0..n {
        let t = if i == n - 1 {
            samples[n - 1].t
        } else {
            t0 + i as f64 * dt
        };
        while j + 2 < n && samples[j + 1].t <= t {
            j += 1;
        }
        let a = &samples[j];
        let b = &samples[j + 1];
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        out.push(TrajectorySample {
            t,
            y: a.y + w * (b.y - a.y),
            v: a.v + w * (b.v - a.v),
            c: a.c + w * (b.c - a.c),
        });
    }
    Ok(out)
}

/// The eight reduced parameters of one departure event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// duration T (s)
    pub duration: f64,
    /// peak lateral departure d_y (m); signed, negative for left events
    pub d_y: f64,
    /// lateral residual std (m)
    pub sigma_y: f64,
    /// mean speed (m/s)
    pub v_bar: f64,
    /// mean acceleration (m/s^2)
    pub a_bar: f64,
    /// speed residual std (m/s)
    pub sigma_v: f64,
    /// initial curvature (1/m)
    pub c0: f64,
    /// curvature change over the event (1/m)
    pub delta_c: f64,
}

impl FeatureVector {
    pub const DIM: usize = 8;
    pub const NAMES: [&'static str; 8] = [
        "T", "d_y", "sigma_y", "v_bar", "a_bar", "sigma_v", "c0", "delta_c",
    ];

    pub fn to_array(self) -> [f64; 8] {
        [
            self.duration,
            self.d_y,
            self.sigma_y,
            self.v_bar,
            self.a_bar,
            self.sigma_v,
            self.c0,
            self.delta_c,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> FeatureVector {
        FeatureVector {
            duration: a[0],
            d_y: a[1],
            sigma_y: a[2],
            v_bar: a[3],
            a_bar: a[4],
            sigma_v: a[5],
            c0: a[6],
            delta_c: a[7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatureVector {
                reason: "non-finite component".into(),
            });
        }
        if self.duration <= 0.0 {
            return Err(Error::InvalidFeatureVector {
                reason: format!("duration {} must be positive", self.duration),
            });
        }
        if self.sigma_y < 0.0 || self.sigma_v < 0.0 {
            return Err(Error::InvalidFeatureVector {
                reason: "residual stds must be non-negative".into(),
            });
        }
        if self.v_bar <= 0.0 {
            return Err(Error::InvalidFeatureVector {
                reason: format!("v_bar {} must be positive", self.v_bar),
            });
        }
        Ok(())
    }
}

/// Outcome of the consistency filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

/// Which criterion failed. Duration takes precedence when both do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Duration,
    Speed,
}

/// Duration must lie in [0.5 s, 10 s] and mean speed must exceed 5 m/s.
pub fn filter_event(event: &DepartureEvent) -> Result<FilterDecision> {
    validate_samples(event.event_id(), event.samples())?;
    let t = event.duration();
    if !(0.5..=10.0).contains(&t) {
        return Ok(FilterDecision::Reject(RejectReason::Duration));
    }
    if event.mean_speed() <= 5.0 {
        return Ok(FilterDecision::Reject(RejectReason::Speed));
    }
    Ok(FilterDecision::Accept)
}

/// Result of the parabolic lateral fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralFit {
    pub d_y: f64,
    pub sigma_y: f64,
    /// total travel distance (m)
    pub d_x: f64,
}

/// The parabola basis: zero at x = 0 and x = d_x, peak 1 at the midpoint.
#[inline]
pub fn parabola_basis(x: f64, d_x: f64) -> f64 {
    4.0 * x * (d_x - x) / (d_x * d_x)
}

/// Fits y(l) = d_y * phi(x(l)) by one-parameter least squares with the
/// travel distance held at its measured value, then takes the sample
/// standard deviation of the residuals.
pub fn fit_lateral(event: &DepartureEvent) -> Result<LateralFit> {
    let x = event.travel_distance();
    let d_x = *x.last().unwrap();
    if d_x <= 0.0 {
        return Err(Error::DegenerateGeometry {
            reason: format!("travel distance {d_x} must be positive"),
        });
    }
    let ys = event.ys();
    let mut s_yphi = 0.0;
    let mut s_phiphi = 0.0;
    for (xi, yi) in x.iter().zip(&ys) {
        let phi = parabola_basis(*xi, d_x);
        s_yphi += yi * phi;
        s_phiphi += phi * phi;
    }
    if s_phiphi <= 0.0 {
        return Err(Error::DegenerateGeometry {
            reason: "parabola basis vanishes at every sample".into(),
        });
    }
    let d_y = s_yphi / s_phiphi;
    let residuals: Vec<f64> = x
        .iter()
        .zip(&ys)
        .map(|(xi, yi)| yi - d_y * parabola_basis(*xi, d_x))
        .collect();
    Ok(LateralFit {
        d_y,
        sigma_y: sample_std(&residuals),
        d_x,
    })
}

/// Result of the linear speed fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityFit {
    pub v_bar: f64,
    pub a_bar: f64,
    pub sigma_v: f64,
}

/// v_bar = d_x / T exactly; the slope minimizes
/// sum |v(l) - a (t_l - T/2) - v_bar|^2.
pub fn fit_velocity(event: &DepartureEvent, d_x: f64) -> Result<VelocityFit> {
    let t = event.rel_times();
    let vs = event.vs();
    let duration = event.duration();
    let v_bar = d_x / duration;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ti, vi) in t.iter().zip(&vs) {
        let tau = ti - duration / 2.0;
        num += (vi - v_bar) * tau;
        den += tau * tau;
    }
    let a_bar = num / den;
    let residuals: Vec<f64> = t
        .iter()
        .zip(&vs)
        .map(|(ti, vi)| vi - a_bar * (ti - duration / 2.0) - v_bar)
        .collect();
    Ok(VelocityFit {
        v_bar,
        a_bar,
        sigma_v: sample_std(&residuals),
    })
}

/// Ordinary least squares of c on t: intercept c0 and total change
/// delta_c = slope * T.
pub fn fit_curvature(event: &DepartureEvent) -> Result<(f64, f64)> {
    let t = event.rel_times();
    let cs = event.cs();
    let n = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / n;
    let c_mean = cs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ti, ci) in t.iter().zip(&cs) {
        num += (ti - t_mean) * (ci - c_mean);
        den += (ti - t_mean) * (ti - t_mean);
    }
    let slope = num / den;
    let c0 = c_mean - slope * t_mean;
    Ok((c0, slope * event.duration()))
}

/// Composes the three fits into the feature vector. Deterministic for a
/// given event; time-translation invariant.
pub fn extract_features(event: &DepartureEvent) -> Result<FeatureVector> {
    let lateral = fit_lateral(event)?;
    let velocity = fit_velocity(event, lateral.d_x)?;
    let (c0, delta_c) = fit_curvature(event)?;
    Ok(FeatureVector {
        duration: event.duration(),
        d_y: lateral.d_y,
        sigma_y: lateral.sigma_y,
        v_bar: velocity.v_bar,
        a_bar: velocity.a_bar,
        sigma_v: velocity.sigma_v,
        c0,
        delta_c,
    })
}

/// Sample standard deviation about the residual mean, 1/(L-1) convention.
fn sample_std(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let ss: f64 = residuals.iter().map(|r| (r - mean) * (r - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}
