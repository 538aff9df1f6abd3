//! Behavioral score of a query: a weighted sum of its add-to-cart, click and
//! impression counts, and a least-squares fit of the weights against future
//! add-to-carts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::{aggregate_events, EventKind, QueryStats, RawEvent};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub atc: f64,
    pub clicks: f64,
    pub impressions: f64,
}

impl Weights {
    pub const fn new(atc: f64, clicks: f64, impressions: f64) -> Self {
        Self { atc, clicks, impressions }
    }

    pub fn is_finite(&self) -> bool {
        self.atc.is_finite() && self.clicks.is_finite() && self.impressions.is_finite()
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.atc, self.clicks, self.impressions)
    }
}

/// Parses `"a,b,c"`.
impl FromStr for Weights {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ScoringError::BadWeights(s.to_string()))?;
        match parts[..] {
            [a, b, c] => {
                let w = Weights::new(a, b, c);
                if w.is_finite() {
                    Ok(w)
                } else {
                    Err(ScoringError::BadWeights(s.to_string()))
                }
            }
            _ => Err(ScoringError::BadWeights(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("weights must be three finite numbers \"a,b,c\", got {0:?}")]
    BadWeights(String),
    #[error("events span {span} days, need at least {needed}")]
    InsufficientSpan { span: u32, needed: u32 },
    #[error("normal matrix is singular: features carry too little signal")]
    Singular,
    #[error("no events")]
    NoEvents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub query: String,
    pub stats: QueryStats,
    pub score: f64,
}

pub fn score(stats: &QueryStats, w: &Weights) -> f64 {
    w.atc * stats.atc as f64 + w.clicks * stats.clicks as f64 + w.impressions * stats.impressions as f64
}

pub fn score_all(stats: Vec<QueryStats>, w: &Weights) -> Vec<ScoredQuery> {
    stats.into_iter().map(|s| ScoredQuery { query: s.query.clone(), score: score(&s, w), stats: s }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitOptions {
    /// Length of the feature window ending at the split day.
    pub history_days: u32,
    /// Length of the target window right after the split day.
    pub target_days: u32,
    /// Clamp negative fitted weights to zero.
    pub clamp_nonnegative: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { history_days: 350, target_days: 14, clamp_nonnegative: false }
    }
}

/// One training row: (atc, clicks, impressions) features and the target.
pub type TrainingRow = ([f64; 3], f64);

/// Builds one row per query seen in either window.
///
/// The split day `T` is placed `target_days` before the last event day. Features
/// are counted over `(T - history_days, T]`; the target is the number of
/// add-to-carts in `(T, T + target_days]`.
pub fn training_rows(events: &[RawEvent], opts: &FitOptions) -> Result<Vec<TrainingRow>, ScoringError> {
    let first = events.iter().map(|e| e.day).min().ok_or(ScoringError::NoEvents)?;
    let last = events.iter().map(|e| e.day).max().ok_or(ScoringError::NoEvents)?;
    let span = last - first + 1;
    let needed = opts.history_days + opts.target_days;
    if span < needed {
        return Err(ScoringError::InsufficientSpan { span, needed });
    }
    let split = last - opts.target_days;
    let history = aggregate_events(events, (split + 1 - opts.history_days)..=split);
    let target = aggregate_events(events, (split + 1)..=last);

    let mut rows: BTreeMap<&str, TrainingRow> = BTreeMap::new();
    for s in &history {
        rows.entry(&s.query).or_insert(([0.0; 3], 0.0)).0 =
            [s.atc as f64, s.clicks as f64, s.impressions as f64];
    }
    for s in &target {
        rows.entry(&s.query).or_insert(([0.0; 3], 0.0)).1 = s.atc as f64;
    }
    Ok(rows.into_values().collect())
}

/// Ordinary least squares for `target ~ a*atc + b*clicks + c*impressions`
/// (no intercept), solved through the 3x3 normal equations.
pub fn solve_least_squares(rows: &[TrainingRow]) -> Result<Weights, ScoringError> {
    let mut gram = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (x, y) in rows {
        for i in 0..3 {
            rhs[i] += x[i] * y;
            for j in 0..3 {
                gram[i][j] += x[i] * x[j];
            }
        }
    }
    let sol = solve3(gram, rhs).ok_or(ScoringError::Singular)?;
    Ok(Weights::new(sol[0], sol[1], sol[2]))
}

/// Gaussian elimination with partial pivoting. `None` when the matrix is
/// numerically singular relative to its largest diagonal entry.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = (0..3).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let tol = scale * 1e-12;
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Fits the score weights so that the score predicts near-future add-to-carts.
/// Negative weights are kept unless `clamp_nonnegative` is set.
pub fn fit_weights(events: &[RawEvent], opts: &FitOptions) -> Result<Weights, ScoringError> {
    let rows = training_rows(events, opts)?;
    let mut w = solve_least_squares(&rows)?;
    if opts.clamp_nonnegative {
        w.atc = w.atc.max(0.0);
        w.clicks = w.clicks.max(0.0);
        w.impressions = w.impressions.max(0.0);
    }
    Ok(w)
}

/// Expands per-query counts into individual events on `day`.
pub fn events_from_counts(query: &str, day: u32, counts: [u64; 3]) -> Vec<RawEvent> {
    let kinds = [EventKind::Atc, EventKind::Click, EventKind::Impression];
    kinds.iter().zip(counts).flat_map(|(&k, n)| (0..n).map(move |_| RawEvent::new(day, query, k))).collect()
}
