//! Agreement and significance statistics: Fleiss' kappa, tie-aware Spearman
//! rho, the chi-square test against a uniform null, dataset summaries and
//! preference tables.
//!
//! Standard deviations are population standard deviations throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_by_turn, OptionFamily, PreferenceAnnotation, RewriteOption, SalienceAnnotation};
use crate::salience::{self, SalienceRecord};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("count matrix: {0}")]
    InvalidMatrix(String),
    #[error("kappa undefined: all ratings fall in one category")]
    Degenerate,
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("constant input has no ranking")]
    ConstantInput,
    #[error("empty input")]
    Empty,
    #[error("no entity appears in two consecutive turns")]
    NoPairs,
}

/// Items x categories; each cell counts raters choosing that category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    rows: Vec<Vec<u32>>,
    raters: u32,
}

impl CountMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self, StatsError> {
        if rows.len() < 2 {
            return Err(StatsError::InvalidMatrix(format!(
                "need at least 2 items, got {}",
                rows.len()
            )));
        }
        let width = rows[0].len();
        if width < 2 {
            return Err(StatsError::InvalidMatrix("need at least 2 categories".into()));
        }
        let raters: u32 = rows[0].iter().sum();
        if raters < 2 {
            return Err(StatsError::InvalidMatrix("need at least 2 raters per item".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(StatsError::InvalidMatrix(format!("row {i} has {} columns, expected {width}", r.len())));
            }
            let s: u32 = r.iter().sum();
            if s != raters {
                return Err(StatsError::InvalidMatrix(format!(
                    "row {i} sums to {s}, expected {raters} (unequal raters per item)"
                )));
            }
        }
        Ok(Self { rows, raters })
    }

    /// One row per annotation over the label categories {0, 1, 2}.
    pub fn from_annotations(annotations: &[SalienceAnnotation]) -> Result<Self, StatsError> {
        let rows = annotations
            .iter()
            .map(|a| {
                let mut row = vec![0u32; 3];
                for &l in &a.labels {
                    row[l as usize] += 1;
                }
                row
            })
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }
}

pub fn fleiss_kappa(m: &CountMatrix) -> Result<f64, StatsError> {
    let n = m.raters as f64;
    let items = m.rows.len() as f64;
    let cats = m.rows[0].len();

    let p_bar = m
        .rows
        .iter()
        .map(|r| r.iter().map(|&c| (c as f64) * (c as f64 - 1.0)).sum::<f64>() / (n * (n - 1.0)))
        .sum::<f64>()
        / items;

    let p_e: f64 = (0..cats)
        .map(|j| {
            let col: u32 = m.rows.iter().map(|r| r[j]).sum();
            let p = col as f64 / (items * n);
            p * p
        })
        .sum();

    if (1.0 - p_e).abs() < 1e-15 {
        return Err(StatsError::Degenerate);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: xs.len() });
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
///
/// Power series for x < a + 1, Lentz continued fraction otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        let tiny = f64::MIN_POSITIVE / GAMMA_EPS;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (log_prefix.exp() * h).clamp(0.0, 1.0)
    }
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: u32) -> f64 {
    regularized_gamma_q(df as f64 / 2.0, statistic / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub df: u32,
    pub p: f64,
}

/// Goodness-of-fit test of `counts` against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquareResult, StatsError> {
    if counts.len() < 2 {
        return Err(StatsError::Empty);
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let k = counts.len() as f64;
    let expected = total as f64 / k;
    let chi2 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let df = counts.len() as u32 - 1;
    Ok(ChiSquareResult {
        chi2,
        df,
        p: chi_square_sf(chi2, df),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: xs.len(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub answers: usize,
    pub entities: usize,
    pub entities_per_answer: MeanStd,
    /// Over entities, of each entity's mean label.
    pub entity_score: MeanStd,
    /// Share of raw labels equal to 0, 1 and 2.
    pub label_share: [f64; 3],
    pub salient_ratio: MeanStd,
    /// `None` when no entity spans consecutive turns.
    pub turn_drift: Option<MeanStd>,
}

pub fn dataset_stats(annotations: &[SalienceAnnotation]) -> Result<DatasetSummary, StatsError> {
    if annotations.is_empty() {
        return Err(StatsError::Empty);
    }
    let records: Vec<SalienceRecord> = annotations
        .iter()
        .map(SalienceRecord::from_annotation)
        .collect::<Result<_, _>>()
        .map_err(|_| StatsError::Empty)?;
    let groups = group_by_turn(annotations);

    let per_answer: Vec<f64> = groups.iter().map(|(_, g)| g.len() as f64).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();

    let mut label_counts = [0usize; 3];
    for a in annotations {
        for &l in &a.labels {
            label_counts[l as usize] += 1;
        }
    }
    let total_labels: usize = label_counts.iter().sum();
    let label_share = label_counts.map(|c| c as f64 / total_labels as f64);

    let mut by_turn: BTreeMap<_, Vec<SalienceRecord>> = BTreeMap::new();
    for r in &records {
        by_turn.entry(r.turn.clone()).or_default().push(r.clone());
    }
    let ratios: Vec<f64> = groups
        .iter()
        .map(|(k, _)| salience::salient_ratio(&by_turn[k]).expect("groups are non-empty"))
        .collect();

    let turn_drift = match salience::turn_salience_drift(&records) {
        Ok(d) => Some(d),
        Err(StatsError::NoPairs) => None,
        Err(e) => return Err(e),
    };

    Ok(DatasetSummary {
        answers: groups.len(),
        entities: records.len(),
        entities_per_answer: MeanStd::of(&per_answer).expect("non-empty"),
        entity_score: MeanStd::of(&scores).expect("non-empty"),
        label_share,
        salient_ratio: MeanStd::of(&ratios).expect("non-empty"),
        turn_drift,
    })
}

/// Mean Spearman rho between annotator slots sharing a QA pair.
///
/// Label position `k` of every entity in a turn is taken to be the same
/// worker. For each turn, rho is averaged over all slot pairs with a
/// defined (non-constant) correlation; the result averages those per-turn
/// means. Turns with fewer than 2 entities or ragged label lists are skipped.
pub fn mean_pairwise_spearman(annotations: &[SalienceAnnotation]) -> Result<MeanStd, StatsError> {
    let mut per_turn = Vec::new();
    for (_, group) in group_by_turn(annotations) {
        if group.len() < 2 {
            continue;
        }
        let slots = group[0].labels.len();
        if group.iter().any(|a| a.labels.len() != slots) {
            continue;
        }
        let mut rhos = Vec::new();
        for a in 0..slots {
            for b in a + 1..slots {
                let xs: Vec<f64> = group.iter().map(|r| r.labels[a] as f64).collect();
                let ys: Vec<f64> = group.iter().map(|r| r.labels[b] as f64).collect();
                if let Ok(rho) = spearman_rho(&xs, &ys) {
                    rhos.push(rho);
                }
            }
        }
        if let Some(m) = MeanStd::of(&rhos) {
            per_turn.push(m.mean);
        }
    }
    MeanStd::of(&per_turn).ok_or(StatsError::Empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    /// One row per (inline variant, follow-up variant) combination.
    Subtype,
    /// One row per number of rewritten entities.
    TopN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_variant: Option<RewriteOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup_variant: Option<RewriteOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<u8>,
    pub original: u64,
    pub inline: u64,
    pub followup: u64,
    pub test: ChiSquareResult,
}

impl PreferenceRow {
    pub fn counts(&self) -> [u64; 3] {
        [self.original, self.inline, self.followup]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub group_by: GroupBy,
    pub rows: Vec<PreferenceRow>,
    pub total: PreferenceRow,
}

fn option_label(o: RewriteOption) -> &'static str {
    match o {
        RewriteOption::Original => "original",
        RewriteOption::InlinedefWiki => "wiki",
        RewriteOption::InlinedefNatural => "natural",
        RewriteOption::FollowupQuestion => "question",
        RewriteOption::FollowupOffer => "offer",
    }
}

fn make_row(condition: String, counts: [u64; 3]) -> PreferenceRow {
    let test = chi_square_uniform(&counts).unwrap_or(ChiSquareResult {
        chi2: 0.0,
        df: 2,
        p: 1.0,
    });
    PreferenceRow {
        condition,
        inline_variant: None,
        followup_variant: None,
        top_n: None,
        original: counts[0],
        inline: counts[1],
        followup: counts[2],
        test,
    }
}

fn column(o: RewriteOption) -> usize {
    match o.family() {
        OptionFamily::Original => 0,
        OptionFamily::Inline => 1,
        OptionFamily::Followup => 2,
    }
}

/// Count choices per condition, with a chi-square test on every row and on
/// the marginal totals. Records without one option of each family are
/// ignored. Row order: wiki before natural, offer before question; top-N
/// ascending.
pub fn aggregate_preferences(records: &[PreferenceAnnotation], group_by: GroupBy) -> PreferenceTable {
    type Meta = (Option<RewriteOption>, Option<RewriteOption>, Option<u8>);
    // sort key -> counts, and sort key -> (inline, followup, top_n)
    let mut groups: BTreeMap<(u8, u8, u8), [u64; 3]> = BTreeMap::new();
    let rank = |o: RewriteOption| match o {
        RewriteOption::InlinedefWiki | RewriteOption::FollowupOffer => 0,
        _ => 1,
    };
    let mut total = [0u64; 3];
    let mut meta: BTreeMap<(u8, u8, u8), Meta> = BTreeMap::new();
    for r in records {
        let Some((inline, followup)) = r.variants() else {
            continue;
        };
        if r.choice >= r.options_shown.len() {
            continue;
        }
        let key = match group_by {
            GroupBy::Subtype => (rank(inline), rank(followup), 0),
            GroupBy::TopN => (0, 0, r.top_n),
        };
        let col = column(r.chosen());
        groups.entry(key).or_insert([0; 3])[col] += 1;
        total[col] += 1;
        meta.entry(key).or_insert(match group_by {
            GroupBy::Subtype => (Some(inline), Some(followup), None),
            GroupBy::TopN => (None, None, Some(r.top_n)),
        });
    }
    let rows = groups
        .into_iter()
        .map(|(key, counts)| {
            let (inline, followup, top_n) = meta[&key];
            let condition = match (inline, followup, top_n) {
                (Some(i), Some(f), _) => format!("{}/{}", option_label(i), option_label(f)),
                (_, _, Some(n)) => format!("top {n}"),
                _ => unreachable!("every group records its metadata"),
            };
            PreferenceRow {
                inline_variant: inline,
                followup_variant: followup,
                top_n,
                ..make_row(condition, counts)
            }
        })
        .collect();
    PreferenceTable {
        group_by,
        rows,
        total: make_row("total".into(), total),
    }
}
