//! Event reconstruction from feature vectors and corpus generation.
//!
//! The inverse of feature extraction: given the eight reduced parameters,
//! rebuild a full departure time series. Speed is a line in time plus iid
//! Gaussian residuals, travel distance follows by trapezoidal integration,
//! the lateral profile is the parabola in travel distance plus iid
//! residuals, and curvature is reconstructed noiselessly (the feature
//! vector carries no curvature residual term).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bgm::{Bounds, BoundedGmm};
use crate::error::{Error, Result};
use crate::features::{parabola_basis, DepartureEvent, FeatureVector, Side, TrajectorySample};
use crate::qmc::QmcConfig;

/// Splitmix-style mixing of a master seed with a stream index, so
/// per-event seeds are independent of scheduling order.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reconstruction floor for the speed channel (m/s); residual draws are
/// clamped here so the speed never reverses.
pub const SPEED_FLOOR: f64 = 0.1;

/// Reconstruction with bookkeeping of clamped speed samples.
#[derive(Debug, Clone)]
pub struct ReconstructedEvent {
    pub event: DepartureEvent,
    pub clamped_speed_samples: usize,
}

/// Rebuilds a time series from a feature vector on a uniform grid.
///
/// The sample count is round(T / ts) + 1; the realized duration is the
/// grid span (L - 1) * ts, which equals T whenever T is a multiple of the
/// sampling time (always true for features extracted from sampled data).
/// Deterministic given the seed; the side is inferred from the sign of
/// `d_y`.
pub fn reconstruct_event(
    xi: &FeatureVector,
    ts: f64,
    seed: u64,
    event_id: impl Into<String>,
) -> Result<DepartureEvent> {
    Ok(reconstruct_event_detailed(xi, ts, seed, event_id)?.event)
}

pub fn reconstruct_event_detailed(
    xi: &FeatureVector,
    ts: f64,
    seed: u64,
    event_id: impl Into<String>,
) -> Result<ReconstructedEvent> {
    xi.validate()?;
    if !ts.is_finite() || ts <= 0.0 || xi.duration < ts {
        return Err(Error::DurationBelowStep {
            duration: xi.duration,
            ts,
        });
    }
    let l = (xi.duration / ts).round() as usize + 1;
    let duration = (l - 1) as f64 * ts;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let times: Vec<f64> = (0..l).map(|i| i as f64 * ts).collect();

    // speed: linear skeleton plus clamped residuals
    let mut clamped = 0usize;
    let vs: Vec<f64> = times
        .iter()
        .map(|&t| {
            let skeleton = xi.a_bar * (t - duration / 2.0) + xi.v_bar;
            let eps: f64 = if xi.sigma_v > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            let v = skeleton + xi.sigma_v * eps;
            if v < SPEED_FLOOR {
                clamped += 1;
                SPEED_FLOOR
            } else {
                v
            }
        })
        .collect();

    // travel distance by trapezoid
    let mut xs = Vec::with_capacity(l);
    xs.push(0.0);
    for i in 1..l {
        let prev = xs[i - 1];
        xs.push(prev + 0.5 * (vs[i - 1] + vs[i]) * ts);
    }
    let d_x = *xs.last().unwrap();
    if d_x <= 0.0 {
        return Err(Error::DegenerateGeometry {
            reason: format!("reconstructed travel distance {d_x}"),
        });
    }

    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let eps: f64 = if xi.sigma_y > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            xi.d_y * parabola_basis(x, d_x) + xi.sigma_y * eps
        })
        .collect();

    let samples: Vec<TrajectorySample> = (0..l)
        .map(|i| TrajectorySample {
            t: times[i],
            y: ys[i],
            v: vs[i],
            c: xi.delta_c / duration * times[i] + xi.c0,
        })
        .collect();
    let side = if xi.d_y < 0.0 { Side::Left } else { Side::Right };
    Ok(ReconstructedEvent {
        event: DepartureEvent::new(event_id, side, samples)?,
        clamped_speed_samples: clamped,
    })
}

/// Aggregate diagnostics of a generated corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub events: usize,
    pub clamped_speed_samples: usize,
}

/// Samples `n_events` feature vectors from the model and reconstructs
/// each. Event ids embed the master seed and index; per-event noise uses
/// seeds derived from (seed, index), so the corpus is identical under any
/// parallel schedule.
pub fn generate_corpus(
    model: &BoundedGmm,
    n_events: usize,
    ts: f64,
    seed: u64,
) -> Result<Vec<DepartureEvent>> {
    Ok(generate_corpus_detailed(model, n_events, ts, seed)?.0)
}

pub fn generate_corpus_detailed(
    model: &BoundedGmm,
    n_events: usize,
    ts: f64,
    seed: u64,
) -> Result<(Vec<DepartureEvent>, CorpusStats)> {
    if model.dim() != FeatureVector::DIM {
        return Err(Error::DimensionMismatch {
            expected: FeatureVector::DIM,
            got: model.dim(),
        });
    }
    if n_events == 0 {
        return Ok((Vec::new(), CorpusStats::default()));
    }
    let xi = model.sample(n_events, seed)?;
    let results: Vec<ReconstructedEvent> = (0..n_events)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = xi.row(i).iter().cloned().collect();
            let fv = FeatureVector::from_array(row.try_into().expect("8 features"));
            let id = format!("ev-{seed:016x}-{i:05}");
            reconstruct_event_detailed(&fv, ts, derive_seed(seed, i as u64 + 1), id)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stats = CorpusStats {
        events: results.len(),
        ..Default::default()
    };
    let events = results
        .into_iter()
        .map(|r| {
            stats.clamped_speed_samples += r.clamped_speed_samples;
            r.event
        })
        .collect();
    Ok((events, stats))
}

/// Feature matrix (one row per vector) from a slice of feature vectors.
pub fn feature_matrix(features: &[FeatureVector]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(features.len(), FeatureVector::DIM);
    for (i, f) in features.iter().enumerate() {
        let a = f.to_array();
        for (j, v) in a.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Physically motivated default box for fitting: duration and mean speed
/// at the consistency-filter limits, non-negative residual stds, and the
/// remaining features at the data envelope plus a 10% range margin.
pub fn default_feature_bounds(data: &DMatrix<f64>) -> Result<Bounds> {
    if data.ncols() != FeatureVector::DIM || data.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: FeatureVector::DIM,
            got: data.ncols(),
        });
    }
    let mut lower = vec![0.0; FeatureVector::DIM];
    let mut upper = vec![0.0; FeatureVector::DIM];
    for j in 0..FeatureVector::DIM {
        let col = data.column(j);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let margin = 0.1 * (hi - lo).max(1e-6);
        lower[j] = lo - margin;
        upper[j] = hi + margin;
    }
    // duration: consistency-filter limits
    lower[0] = 0.5;
    upper[0] = 10.0;
    // residual stds are non-negative
    lower[2] = 0.0;
    lower[5] = 0.0;
    // mean speed: filter floor to a motorway ceiling
    lower[3] = 5.0;
    upper[3] = 60.0;
    // keep every data point strictly inside after the clamps above
    for j in [0, 2, 3, 5] {
        for &v in data.column(j).iter() {
            if v <= lower[j] {
                lower[j] = v - 1e-9 * (1.0 + v.abs());
            }
            if v >= upper[j] {
                upper[j] = v + 1e-9 * (1.0 + v.abs());
            }
        }
    }
    Bounds::new(lower, upper)
}

/// Hand-chosen three-component ground truth standing in for naturalistic
/// data: plausible urban / arterial / highway departure regimes.
pub fn demo_truth_model(side: Side) -> BoundedGmm {
    let weights = match side {
        Side::Right => vec![0.45, 0.35, 0.20],
        Side::Left => vec![0.40, 0.35, 0.25],
    };
    let means = [
        [3.5, 0.70, 0.030, 18.0, 0.15, 0.12, 1.0e-4, 4.0e-5],
        [5.5, 1.00, 0.050, 24.0, -0.10, 0.20, -8.0e-5, -3.0e-5],
        [7.5, 1.40, 0.075, 30.0, 0.05, 0.30, 1.5e-4, 6.0e-5],
    ];
    let base_var = [0.16, 0.01, 1.0e-4, 2.25, 6.4e-3, 2.5e-3, 3.6e-9, 6.25e-10];
    let scales = [1.0, 1.2, 0.9];

    let d = FeatureVector::DIM;
    let mut mean_vecs = Vec::new();
    let mut covs = Vec::new();
    for (mean, scale) in means.iter().zip(scales) {
        let mut mu = DVector::from_row_slice(mean);
        let mut cov = DMatrix::from_diagonal(&DVector::from_row_slice(&base_var)) * scale;
        // mild physical correlations: longer events drift farther,
        // faster events accelerate less
        let v01: f64 = cov[(0, 0)] * cov[(1, 1)];
        cov[(0, 1)] = 0.3 * v01.sqrt();
        cov[(1, 0)] = cov[(0, 1)];
        let v34: f64 = cov[(3, 3)] * cov[(4, 4)];
        cov[(3, 4)] = -0.2 * v34.sqrt();
        cov[(4, 3)] = cov[(3, 4)];
        if side == Side::Left {
            // mirror the lateral channel: d_y, c0, delta_c change sign
            mu[1] = -mu[1];
            mu[6] = -mu[6];
            mu[7] = -mu[7];
            let mut s = DVector::from_element(d, 1.0);
            s[1] = -1.0;
            s[6] = -1.0;
            s[7] = -1.0;
            let sm = DMatrix::from_diagonal(&s);
            cov = &sm * cov * &sm;
        }
        mean_vecs.push(mu);
        covs.push(cov);
    }
    let bounds = demo_truth_bounds(side);
    BoundedGmm::new(weights, mean_vecs, covs, bounds, QmcConfig::default())
        .expect("demo truth model is well-formed")
}

/// The box of the bundled ground truth; respects the consistency-filter
/// criteria with margin so every generated event passes the filter.
pub fn demo_truth_bounds(side: Side) -> Bounds {
    let lower = vec![0.5, 0.2, 0.001, 8.0, -0.8, 0.01, -6.0e-4, -3.0e-4];
    let upper = vec![10.0, 2.0, 0.2, 40.0, 0.8, 0.8, 6.0e-4, 3.0e-4];
    match side {
        Side::Right => Bounds::new(lower, upper).unwrap(),
        Side::Left => {
            let mut l = lower;
            let mut u = upper;
            // mirror d_y
            let (dl, du) = (l[1], u[1]);
            l[1] = -du;
            u[1] = -dl;
            Bounds::new(l, u).unwrap()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_features, filter_event, FilterDecision};
    use approx::assert_relative_eq;

    fn xi() -> FeatureVector {
        FeatureVector {
            duration: 5.0,
            d_y: 0.6,
            sigma_y: 0.03,
            v_bar: 14.0,
            a_bar: 0.2,
            sigma_v: 0.1,
            c0: 0.001,
            delta_c: 0.0004,
        }
    }

    #[test]
    fn noiseless_skeleton_shape() {
        let mut f = xi();
        f.sigma_y = 0.0;
        f.sigma_v = 0.0;
        let e = reconstruct_event(&f, 0.1, 1, "skel").unwrap();
        let ys = e.ys();
        assert_relative_eq!(ys[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(*ys.last().unwrap(), 0.0, epsilon = 1e-9);
        let max_y = ys.iter().cloned().fold(f64::MIN, f64::max);
        assert_relative_eq!(max_y, 0.6, epsilon = 1e-3);
        // v exactly linear
        let vt: Vec<(f64, f64)> = e.rel_times().into_iter().zip(e.vs()).collect();
        for (t, v) in vt {
            assert_relative_eq!(v, 0.2 * (t - 2.5) + 14.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_roundtrip_recovers_features() {
        let mut f = xi();
        f.sigma_y = 0.0;
        f.sigma_v = 0.0;
        let e = reconstruct_event(&f, 0.1, 7, "rt").unwrap();
        let g = extract_features(&e).unwrap();
        assert_relative_eq!(g.duration, f.duration, epsilon = 1e-9);
        assert_relative_eq!(g.v_bar, f.v_bar, epsilon = 1e-9);
        assert_relative_eq!(g.a_bar, f.a_bar, epsilon = 1e-9);
        assert_relative_eq!(g.c0, f.c0, epsilon = 1e-9);
        assert_relative_eq!(g.delta_c, f.delta_c, epsilon = 1e-9);
        assert_relative_eq!(g.d_y, f.d_y, epsilon = 1e-6);
        assert!(g.sigma_y < 1e-9);
        assert!(g.sigma_v < 1e-9);
    }

    #[test]
    fn lateral_noise_is_recovered_by_refit() {
        let mut f = xi();
        f.sigma_v = 0.0;
        f.sigma_y = 0.03;
        let e = reconstruct_event(&f, 0.05, 99, "noise").unwrap();
        assert!(e.len() >= 51);
        let g = extract_features(&e).unwrap();
        assert!(
            g.sigma_y > 0.02 && g.sigma_y < 0.04,
            "sigma_y = {}",
            g.sigma_y
        );
    }

    #[test]
    fn duration_below_step_is_rejected() {
        let mut f = xi();
        f.duration = 0.05;
        assert!(matches!(
            reconstruct_event(&f, 0.1, 1, "short"),
            Err(Error::DurationBelowStep { .. })
        ));
    }

    #[test]
    fn corpus_is_deterministic_and_filter_clean() {
        let model = demo_truth_model(Side::Right);
        let a = generate_corpus(&model, 50, 0.05, 42).unwrap();
        let b = generate_corpus(&model, 50, 0.05, 42).unwrap();
        assert_eq!(a.len(), 50);
        for (ea, eb) in a.iter().zip(&b) {
            assert_eq!(ea, eb);
        }
        for e in &a {
            assert_eq!(filter_event(e).unwrap(), FilterDecision::Accept);
            assert!(e.vs().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn empty_corpus() {
        let model = demo_truth_model(Side::Left);
        let c = generate_corpus(&model, 0, 0.05, 1).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn left_corpus_is_left_sided() {
        let model = demo_truth_model(Side::Left);
        let c = generate_corpus(&model, 20, 0.05, 5).unwrap();
        for e in &c {
            assert_eq!(e.side(), Side::Left);
            let f = extract_features(e).unwrap();
            assert!(f.d_y < 0.0);
        }
    }

    #[test]
    fn corpus_roundtrip_noiseless() {
        let model = demo_truth_model(Side::Right);
        let xi_mat = model.sample(200, 11).unwrap();
        for i in 0..200 {
            let mut a = [0.0; 8];
            for j in 0..8 {
                a[j] = xi_mat[(i, j)];
            }
            let mut f = FeatureVector::from_array(a);
            // zero the residual channels for an exact skeleton
            f.sigma_y = 0.0;
            f.sigma_v = 0.0;
            // snap duration to the grid so T survives the roundtrip
            let ts = 0.05;
            f.duration = (f.duration / ts).round() * ts;
            if f.duration < 0.5 {
                continue;
            }
            let e = reconstruct_event(&f, ts, derive_seed(11, i as u64), "rt").unwrap();
            let g = extract_features(&e).unwrap();
            assert_relative_eq!(g.duration, f.duration, epsilon = 1e-9);
            assert_relative_eq!(g.v_bar, f.v_bar, epsilon = 1e-9);
            assert_relative_eq!(g.a_bar, f.a_bar, epsilon = 1e-9);
            assert_relative_eq!(g.d_y, f.d_y, epsilon = 1e-6);
            assert_relative_eq!(g.c0, f.c0, epsilon = 1e-9);
            assert_relative_eq!(g.delta_c, f.delta_c, epsilon = 1e-9);
        }
    }

    #[test]
    fn default_bounds_contain_data() {
        let model = demo_truth_model(Side::Right);
        let data = model.sample(500, 3).unwrap();
        let bounds = default_feature_bounds(&data).unwrap();
        for i in 0..data.nrows() {
            let row = data.row(i).transpose();
            assert!(bounds.strictly_contains(&row), "row {i} escapes bounds");
        }
        assert_eq!(bounds.lower[0], 0.5);
        assert_eq!(bounds.upper[0], 10.0);
        assert_eq!(bounds.lower[2], 0.0);
    }
}
