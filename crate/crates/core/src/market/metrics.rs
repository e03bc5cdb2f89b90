use serde::{Deserialize, Serialize};

use super::{Session, NUM_FEATURE_VALUES};
use crate::error::{Error, Result};

/// Aggregate outcome statistics of a set of sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sessions: usize,
    pub page_views: usize,
    /// Purchases per page view.
    pub r2p: f64,
    /// Summed purchase price; zero when no prices are recorded.
    pub tt: f64,
    /// Number of purchases.
    pub tv: f64,
    pub mean_session_length: f64,
    pub action_norm_mean: f64,
    pub action_norm_std: f64,
    pub action_norm_p50: f64,
    pub action_norm_p90: f64,
}

impl Metrics {
    /// CSV with header `metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("sessions", self.sessions as f64),
            ("page_views", self.page_views as f64),
            ("r2p", self.r2p),
            ("tt", self.tt),
            ("tv", self.tv),
            ("mean_session_length", self.mean_session_length),
            ("action_norm_mean", self.action_norm_mean),
            ("action_norm_std", self.action_norm_std),
            ("action_norm_p50", self.action_norm_p50),
            ("action_norm_p90", self.action_norm_p90),
        ] {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn compute_metrics(sessions: &[Session]) -> Result<Metrics> {
    if sessions.is_empty() {
        return Err(Error::invalid("metrics need at least one session"));
    }
    let mut pv = 0usize;
    let mut buys = 0usize;
    let mut tt = 0.0;
    for s in sessions {
        for st in &s.steps {
            pv += 1;
            if st.reward == 1 {
                buys += 1;
                tt += st.price.unwrap_or(0.0);
            }
        }
    }
    if pv == 0 {
        return Err(Error::invalid("sessions contain no page views"));
    }
    let mut norms: Vec<f64> = sessions.iter().filter_map(|s| s.steps.first()).map(|st| st.action.norm()).collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    norms.sort_by(f64::total_cmp);
    Ok(Metrics {
        sessions: sessions.len(),
        page_views: pv,
        r2p: buys as f64 / pv as f64,
        tt,
        tv: buys as f64,
        mean_session_length: pv as f64 / sessions.len() as f64,
        action_norm_mean: mean,
        action_norm_std: var.sqrt(),
        action_norm_p50: quantile(&norms, 0.5),
        action_norm_p90: quantile(&norms, 0.9),
    })
}

/// `(page views, purchases)` per categorical feature value, indexed as
/// [`super::CustomerProfile::feature_values`].
pub fn feature_r2p(sessions: &[Session]) -> [(usize, usize); NUM_FEATURE_VALUES] {
    let mut out = [(0usize, 0usize); NUM_FEATURE_VALUES];
    for s in sessions {
        let buys = s.steps.iter().filter(|st| st.reward == 1).count();
        for v in s.profile.feature_values() {
            out[v].0 += s.steps.len();
            out[v].1 += buys;
        }
    }
    out
}
