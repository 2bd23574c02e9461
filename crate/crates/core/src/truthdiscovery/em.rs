use log::{debug, warn};

use super::gaussian::{weighted_fit, Gaussian};
use super::{Layout, TruthModel};
use crate::coarse::CoarseFlags;
use crate::datamodel::{DetectionConfig, FeatureMatrix};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::par;

const INIT_Q_FLAGGED: f64 = 0.01;
const INIT_Q_CLEAN: f64 = 0.99;

/// Output of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub q: Vec<f64>,
    /// Rows where both joint terms were log-zero; their posterior falls back to the prior.
    pub prior_fallbacks: usize,
}

fn clamp_beta(b: f64, eps: f64) -> f64 {
    b.clamp(eps, 1.0 - eps)
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// log p(x_i, t_i = 1) and log p(x_i, t_i = 0).
fn joint_terms(model: &TruthModel, features: &FeatureMatrix, i: usize) -> (f64, f64) {
    let k = model.layout.loc_of_row[i];
    let u = model.layout.user_of_row[i];
    let x = features.row(i);
    let beta = model.beta[u];
    let mut log_true = beta.ln() + model.theta_t[k].log_density(x);
    let mut log_false = (1.0 - beta).ln() + model.theta_f[u].log_density(x);
    if model.config.alpha_weighting {
        log_true += ln_or_neg_inf(model.alpha_t[k]);
        log_false += ln_or_neg_inf(model.alpha_f[u]);
    }
    (log_true, log_false)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Fits one component per group of rows; groups with too little mass fall back to `fallback`.
fn fit_group(
    features: &FeatureMatrix,
    groups: &[Vec<usize>],
    weight: impl Fn(usize) -> f64 + Sync + Send,
    config: &DetectionConfig,
    fallback: impl Fn(usize) -> Gaussian + Sync + Send,
) -> (Vec<Gaussian>, Vec<f64>, Vec<bool>) {
    let fitted = par::map_range(groups.len(), |g| {
        weighted_fit(
            features,
            &groups[g],
            &weight,
            config.covariance_mode,
            config.var_floor,
        )
    });
    let mut comps = Vec::with_capacity(groups.len());
    let mut masses = Vec::with_capacity(groups.len());
    let mut frozen = Vec::with_capacity(groups.len());
    for (g, f) in fitted.into_iter().enumerate() {
        match f {
            Some((gauss, mass)) => {
                comps.push(gauss);
                masses.push(mass);
                frozen.push(false);
            }
            None => {
                comps.push(fallback(g));
                masses.push(groups[g].iter().map(|&i| weight(i)).sum::<f64>().max(0.0));
                frozen.push(true);
            }
        }
    }
    (comps, masses, frozen)
}

/// Normalizes masses into mixing weights; `None` when the total is zero.
fn mixing_weights(masses: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = masses.iter().sum();
    (total > 0.0).then(|| masses.iter().map(|m| m / total).collect())
}

fn user_means(layout: &Layout, q: &[f64]) -> Vec<f64> {
    layout
        .rows_by_user
        .iter()
        .map(|rows| rows.iter().map(|&i| q[i]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Builds the starting model from coarse flags: `q = 0.01` for flagged records
/// and `0.99` otherwise, followed by weighted moment estimates.
pub fn init_model(
    dataset: &Dataset,
    features: &FeatureMatrix,
    flags: &CoarseFlags,
    config: &DetectionConfig,
) -> Result<TruthModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let layout = Layout::new(dataset, features, flags)?;
    let q: Vec<f64> = layout
        .coarse_flagged
        .iter()
        .map(|&f| if f { INIT_Q_FLAGGED } else { INIT_Q_CLEAN })
        .collect();

    let n = features.n_rows() as f64;
    let mut global_mean = vec![0.0; features.dim()];
    for row in features.rows() {
        for (m, x) in global_mean.iter_mut().zip(row) {
            *m += x / n;
        }
    }
    let global = |_: usize| {
        Gaussian::isotropic(
            global_mean.clone(),
            config.var_floor,
            config.covariance_mode,
        )
    };

    for (k, rows) in layout.rows_by_loc.iter().enumerate() {
        if rows.is_empty() {
            warn!(
                "location {} has no records; initializing from global statistics",
                layout.lids[k]
            );
        }
    }

    let (theta_t, mass_t, _) = fit_group(features, &layout.rows_by_loc, |i| q[i], config, global);
    let (theta_f, mass_f, _) = fit_group(
        features,
        &layout.rows_by_user,
        |i| 1.0 - q[i],
        config,
        global,
    );
    let k = layout.n_locs();
    let u = layout.n_users();
    let alpha_t = mixing_weights(&mass_t).unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let alpha_f = mixing_weights(&mass_f).unwrap_or_else(|| vec![1.0 / u as f64; u]);
    let beta_raw = user_means(&layout, &q);
    let beta = beta_raw
        .iter()
        .map(|&b| clamp_beta(b, config.beta_clamp))
        .collect();

    Ok(TruthModel {
        alpha_t,
        theta_t,
        alpha_f,
        theta_f,
        beta,
        beta_raw,
        q,
        ll_trace: Vec::new(),
        iters: 0,
        prior_fallbacks: 0,
        layout,
        config: config.clone(),
    })
}

/// Posterior `Q_i(1) = beta L^T / (beta L^T + (1 - beta) L^F)`, evaluated in log space.
pub fn e_step(model: &TruthModel, features: &FeatureMatrix) -> EStep {
    let per_row = par::map_range(features.n_rows(), |i| {
        let (a, b) = joint_terms(model, features, i);
        let norm = log_add_exp(a, b);
        if norm == f64::NEG_INFINITY || norm.is_nan() {
            (model.beta[model.layout.user_of_row[i]], true)
        } else {
            ((a - norm).exp().clamp(0.0, 1.0), false)
        }
    });
    let prior_fallbacks = per_row.iter().filter(|(_, f)| *f).count();
    EStep {
        q: per_row.into_iter().map(|(q, _)| q).collect(),
        prior_fallbacks,
    }
}

/// Closed-form parameter updates given posteriors `q`.
///
/// Truthful components use weights `q`, falsified ones `1 - q`. A component
/// whose weight total is below [`super::MIN_MASS`] keeps its previous parameters.
pub fn m_step(model: &TruthModel, features: &FeatureMatrix, q: &[f64]) -> TruthModel {
    let config = &model.config;
    let layout = &model.layout;
    let (theta_t, mass_t, _) = fit_group(
        features,
        &layout.rows_by_loc,
        |i| q[i],
        config,
        |k| model.theta_t[k].clone(),
    );
    let (theta_f, mass_f, _) = fit_group(
        features,
        &layout.rows_by_user,
        |i| 1.0 - q[i],
        config,
        |u| model.theta_f[u].clone(),
    );
    let alpha_t = mixing_weights(&mass_t).unwrap_or_else(|| model.alpha_t.clone());
    let alpha_f = mixing_weights(&mass_f).unwrap_or_else(|| model.alpha_f.clone());
    let beta_raw = user_means(layout, q);
    let beta = beta_raw
        .iter()
        .map(|&b| clamp_beta(b, config.beta_clamp))
        .collect();
    TruthModel {
        alpha_t,
        theta_t,
        alpha_f,
        theta_f,
        beta,
        beta_raw,
        q: q.to_vec(),
        ll_trace: model.ll_trace.clone(),
        iters: model.iters,
        prior_fallbacks: model.prior_fallbacks,
        layout: model.layout.clone(),
        config: model.config.clone(),
    }
}

/// Observed-data log-likelihood `sum_i log(beta L^T_i + (1 - beta) L^F_i)`.
pub fn log_likelihood(model: &TruthModel, features: &FeatureMatrix) -> Result<f64> {
    let terms = par::map_range(features.n_rows(), |i| {
        let (a, b) = joint_terms(model, features, i);
        log_add_exp(a, b)
    });
    let mut total = 0.0;
    for (i, t) in terms.into_iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::Numeric {
                row: Some(i),
                detail: format!("log-likelihood term is {t}"),
            });
        }
        total += t;
    }
    Ok(total)
}

/// Jensen lower bound `J(Q, Theta) = sum_i sum_t Q_i(t) log(p(x_i, t) / Q_i(t))`,
/// with `0 log(0 / .) = 0`.
pub fn lower_bound(model: &TruthModel, features: &FeatureMatrix, q: &[f64]) -> f64 {
    fn term(q: f64, log_joint: f64) -> f64 {
        if q <= 0.0 {
            0.0
        } else {
            q * (log_joint - q.ln())
        }
    }
    let terms = par::map_range(features.n_rows(), |i| {
        let (a, b) = joint_terms(model, features, i);
        term(q[i], a) + term(1.0 - q[i], b)
    });
    terms.into_iter().sum()
}

/// Runs EM from [`init_model`] until the relative log-likelihood change drops
/// to `ll_tol` or `max_iters` updates have been made. The returned posteriors
/// are consistent with the returned parameters.
pub fn fit(
    dataset: &Dataset,
    features: &FeatureMatrix,
    flags: &CoarseFlags,
    config: &DetectionConfig,
) -> Result<TruthModel> {
    let mut model = init_model(dataset, features, flags, config)?;
    let mut ll = log_likelihood(&model, features)?;
    let mut trace = vec![ll];
    let mut iters = 0;
    while iters < config.max_iters {
        let post = e_step(&model, features);
        model = m_step(&model, features, &post.q);
        iters += 1;
        let next = log_likelihood(&model, features)?;
        trace.push(next);
        let converged = (next - ll).abs() <= config.ll_tol * next.abs();
        ll = next;
        if converged {
            break;
        }
    }
    let post = e_step(&model, features);
    model.q = post.q;
    model.prior_fallbacks = post.prior_fallbacks;
    model.ll_trace = trace;
    model.iters = iters;
    debug!("EM finished after {iters} iterations, log-likelihood {ll:.6}");
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Fingerprint, Record, Tag, TagTopology};
    use std::collections::BTreeSet;

    fn topo(k: u64) -> TagTopology {
        let tags = (1..=k)
            .map(|l| Tag::new(l, l as f64 * 5.0, 0.0, format!("t{l}")))
            .collect();
        TagTopology::new(tags, ["corp".to_string()]).unwrap()
    }

    /// Dataset plus a feature matrix built directly from `rows` (rid = position + 1).
    fn instance(k: u64, cells: &[(u64, u64, Vec<f64>)]) -> (Dataset, FeatureMatrix) {
        let records = cells
            .iter()
            .enumerate()
            .map(|(i, (uid, lid, _))| Record {
                rid: i as u64 + 1,
                uid: *uid,
                lid: *lid,
                ts_ms: i as i64 * 60_000,
                fingerprint: Fingerprint::default(),
                payload: Vec::new(),
            })
            .collect();
        let d = Dataset::new(records, topo(k), "t").unwrap();
        let rows = cells.iter().map(|c| c.2.clone()).collect();
        let f = FeatureMatrix::from_rows(vec![], rows, (1..=cells.len() as u64).collect()).unwrap();
        (d, f)
    }

    fn flags(rids: &[u64]) -> CoarseFlags {
        CoarseFlags {
            flagged: rids.iter().copied().collect::<BTreeSet<_>>(),
            reason: rids
                .iter()
                .map(|&r| (r, crate::coarse::FlagReason::SpeedAnomaly))
                .collect(),
        }
    }

    #[test]
    fn init_without_flags() {
        let cells: Vec<_> = (0..20)
            .map(|i| (1 + i % 2, 1 + i / 10, vec![i as f64, 0.0]))
            .collect();
        let (d, f) = instance(2, &cells);
        let m = init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        assert!(m.q.iter().all(|&q| q == 0.99));
        assert!(m.beta.iter().all(|&b| (b - 0.99).abs() < 1e-12));
        assert!((m.alpha_t[0] - 0.5).abs() < 1e-12 && (m.alpha_t[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn init_flagged_user_clamped() {
        let cells = vec![
            (1, 1, vec![0.0, 0.0]),
            (1, 1, vec![1.0, 0.0]),
            (2, 1, vec![5.0, 5.0]),
        ];
        let (d, f) = instance(1, &cells);
        let cfg = DetectionConfig {
            beta_clamp: 0.05,
            ..Default::default()
        };
        let m = init_model(&d, &f, &flags(&[1, 2]), &cfg).unwrap();
        assert_eq!(m.beta_raw[0], 0.01);
        assert_eq!(m.beta[0], 0.05);
        assert!((m.beta[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn empty_location_gets_global_component() {
        let cells = vec![(1, 1, vec![0.0, 0.0]), (1, 1, vec![2.0, 4.0])];
        let (d, f) = instance(2, &cells);
        let m = init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        assert_eq!(m.theta_t[1].mean, vec![1.0, 2.0]);
        assert_eq!(m.alpha_t[1], 0.0);
    }

    #[test]
    fn e_step_symmetry_and_hand_value() {
        // one user, one location, 1-D-like: T ~ N(0, 1), F ~ N(3, 1), beta = 0.5
        let cells = vec![(1, 1, vec![0.0, 0.0])];
        let (d, f) = instance(1, &cells);
        let mut m =
            init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        m.beta = vec![0.5];
        m.alpha_t = vec![1.0];
        m.alpha_f = vec![1.0];
        m.theta_t = vec![Gaussian::diagonal(vec![0.0, 0.0], vec![1.0, 1.0])];
        m.theta_f = vec![Gaussian::diagonal(vec![3.0, 0.0], vec![1.0, 1.0])];
        let q = e_step(&m, &f).q[0];
        assert!((q - 1.0 / (1.0 + (-4.5f64).exp())).abs() < 1e-15);

        m.theta_f = m.theta_t.clone();
        assert!((e_step(&m, &f).q[0] - 0.5).abs() < 1e-15);

        m.beta = vec![1.0 - 1e-4];
        m.theta_f = vec![Gaussian::diagonal(vec![3.0, 0.0], vec![1.0, 1.0])];
        let lt = (-0.5f64 * 0.0).exp();
        let lf = (-4.5f64).exp();
        let bound = (1.0 - 1e-4) * lt / ((1.0 - 1e-4) * lt + 1e-4 * lf);
        assert!(e_step(&m, &f).q[0] >= bound - 1e-15);
    }

    #[test]
    fn e_step_prior_fallback_on_double_underflow() {
        let cells = vec![(1, 1, vec![0.0, 0.0])];
        let (d, f) = instance(1, &cells);
        let mut m =
            init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        m.alpha_t = vec![0.0];
        m.alpha_f = vec![0.0];
        let post = e_step(&m, &f);
        assert_eq!(post.prior_fallbacks, 1);
        assert_eq!(post.q[0], m.beta[0]);
    }

    #[test]
    fn m_step_beta_and_frozen_components() {
        let cells = vec![
            (1, 1, vec![0.0, 0.0]),
            (1, 1, vec![2.0, 0.0]),
            (1, 1, vec![9.0, 9.0]),
        ];
        let (d, f) = instance(1, &cells);
        let m = init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        let next = m_step(&m, &f, &[1.0, 0.0, 1.0]);
        assert!((next.beta[0] - 2.0 / 3.0).abs() < 1e-15);

        let all_true = m_step(&m, &f, &[1.0, 1.0, 1.0]);
        assert_eq!(all_true.theta_f, m.theta_f);
        assert_eq!(all_true.alpha_f, m.alpha_f);
    }

    #[test]
    fn m_step_hand_moments() {
        let cells = vec![(1, 1, vec![0.0, 5.0]), (1, 1, vec![2.0, 5.0])];
        let (d, f) = instance(1, &cells);
        let m = init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        let next = m_step(&m, &f, &[1.0, 1.0]);
        assert_eq!(next.theta_t[0].mean, vec![1.0, 5.0]);
        // variances 1 and 0, floored at 1
        assert_eq!(
            next.theta_t[0].cov,
            super::super::Covariance::Diagonal(vec![1.0, 1.0])
        );
    }

    #[test]
    fn single_record_converges_fast() {
        let cells = vec![(1, 1, vec![-40.0, 48.0])];
        let (d, f) = instance(1, &cells);
        let m = fit(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        assert!(m.iters <= 2);
        assert_eq!(m.q.len(), 1);
        assert!(m.q[0].is_finite());
    }

    #[test]
    fn log_likelihood_single_record_by_hand() {
        let cells = vec![(1, 1, vec![1.0, 0.0])];
        let (d, f) = instance(1, &cells);
        let mut m =
            init_model(&d, &f, &CoarseFlags::default(), &DetectionConfig::default()).unwrap();
        m.beta = vec![0.25];
        m.alpha_t = vec![1.0];
        m.alpha_f = vec![1.0];
        m.theta_t = vec![Gaussian::diagonal(vec![0.0, 0.0], vec![1.0, 1.0])];
        m.theta_f = vec![Gaussian::diagonal(vec![0.0, 0.0], vec![4.0, 4.0])];
        let two_pi = 2.0 * std::f64::consts::PI;
        let pt = (-0.5f64).exp() / two_pi;
        let pf = (-0.5f64 / 4.0).exp() / (two_pi * 4.0);
        let expected = (0.25 * pt + 0.75 * pf).ln();
        assert!((log_likelihood(&m, &f).unwrap() - expected).abs() < 1e-12);
        // hard posteriors make the entropy term vanish
        let j = lower_bound(&m, &f, &[1.0]);
        assert!((j - (0.25f64 * pt).ln()).abs() < 1e-12);
        // tight right after an E-step
        let q = e_step(&m, &f).q;
        assert!((lower_bound(&m, &f, &q) - expected).abs() < 1e-12);
    }
}
