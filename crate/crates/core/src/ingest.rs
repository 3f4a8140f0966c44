//! Behavioral log parsing, spam filtering and planted synthetic datasets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::io::{open_lines, write_atomic};

pub const SECONDS_PER_DAY: u64 = 86_400;

/// One click. `trigger` is the item whose product detail page was open, if any.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClickEvent {
    pub user: String,
    pub trigger: Option<String>,
    pub clicked: String,
    pub timestamp: u64,
}

/// A click on a search result page; `query` is stored normalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SearchEvent {
    pub user: String,
    pub query: String,
    pub clicked: String,
    pub timestamp: u64,
}

/// A (trigger, clicked) pair observed after the training window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FutureClick {
    pub user: String,
    pub trigger: String,
    pub clicked: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpamPolicy {
    pub max_clicks_per_user_per_day: u32,
    pub max_clicks_per_user_item_pair: u32,
}

impl Default for SpamPolicy {
    fn default() -> Self {
        Self { max_clicks_per_user_per_day: 200, max_clicks_per_user_item_pair: 3 }
    }
}

impl SpamPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_clicks_per_user_per_day == 0 || self.max_clicks_per_user_item_pair == 0 {
            return Err(Error::Config("spam policy thresholds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Events parsed from a log plus the number of rows that could not be parsed.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub events: Vec<T>,
    pub skipped: usize,
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_query(q: &str) -> String {
    q.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

fn parse_rows<T>(path: &Path, min_cols: usize, mut parse: impl FnMut(&[&str]) -> Option<T>) -> Result<Parsed<T>> {
    let mut events = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for line in open_lines(path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        total += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        match (cols.len() >= min_cols).then(|| parse(&cols)).flatten() {
            Some(ev) => events.push(ev),
            None => skipped += 1,
        }
    }
    if total > 0 && skipped * 2 > total {
        return Err(Error::Format(format!("{}: {skipped} of {total} rows malformed", path.display())));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed rows", path.display());
    }
    Ok(Parsed { events, skipped })
}

fn parse_click_row(cols: &[&str]) -> Option<ClickEvent> {
    let user = cols[0].trim();
    let trigger = cols[1].trim();
    let clicked = cols[2].trim();
    let timestamp = cols[3].trim().parse::<u64>().ok()?;
    if user.is_empty() || clicked.is_empty() || trigger == clicked {
        return None;
    }
    Some(ClickEvent {
        user: user.to_string(),
        trigger: (!trigger.is_empty()).then(|| trigger.to_string()),
        clicked: clicked.to_string(),
        timestamp,
    })
}

fn parse_search_row(cols: &[&str]) -> Option<SearchEvent> {
    let user = cols[0].trim();
    let query = normalize_query(cols[1]);
    let clicked = cols[2].trim();
    let timestamp = cols[3].trim().parse::<u64>().ok()?;
    if user.is_empty() || query.is_empty() || clicked.is_empty() {
        return None;
    }
    Some(SearchEvent { user: user.into(), query, clicked: clicked.into(), timestamp })
}

/// Parses `user \t trigger_or_empty \t clicked \t timestamp` rows.
pub fn parse_click_log(path: &Path) -> Result<Parsed<ClickEvent>> {
    parse_rows(path, 4, parse_click_row)
}

/// Parses `user \t query \t clicked \t timestamp` rows.
pub fn parse_search_log(path: &Path) -> Result<Parsed<SearchEvent>> {
    parse_rows(path, 4, parse_search_row)
}

/// Parses `user \t trigger \t clicked` rows.
pub fn parse_future_clicks(path: &Path) -> Result<Parsed<FutureClick>> {
    parse_rows(path, 3, |cols| {
        let (u, t, c) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
        (!u.is_empty() && !t.is_empty() && !c.is_empty() && t != c).then(|| FutureClick {
            user: u.into(),
            trigger: t.into(),
            clicked: c.into(),
        })
    })
}

pub fn write_click_log(path: &Path, events: &[ClickEvent]) -> Result<()> {
    write_atomic(path, |w| {
        for e in events {
            let trigger = e.trigger.as_deref().unwrap_or("");
            writeln!(w, "{}\t{}\t{}\t{}", e.user, trigger, e.clicked, e.timestamp)?;
        }
        Ok(())
    })
}

pub fn write_search_log(path: &Path, events: &[SearchEvent]) -> Result<()> {
    write_atomic(path, |w| {
        for e in events {
            writeln!(w, "{}\t{}\t{}\t{}", e.user, e.query, e.clicked, e.timestamp)?;
        }
        Ok(())
    })
}

pub fn write_future_clicks(path: &Path, pairs: &[FutureClick]) -> Result<()> {
    write_atomic(path, |w| {
        for p in pairs {
            writeln!(w, "{}\t{}\t{}", p.user, p.trigger, p.clicked)?;
        }
        Ok(())
    })
}

/// Drops every event of a user who exceeds the daily cap on any UTC day, then keeps at
/// most `max_clicks_per_user_item_pair` of each repeated (user, trigger, clicked) triple,
/// earliest first. Surviving events keep their input order.
pub fn filter_spam(events: &[ClickEvent], policy: &SpamPolicy) -> Vec<ClickEvent> {
    let mut per_day: HashMap<(&str, u64), u32> = HashMap::new();
    for e in events {
        *per_day.entry((e.user.as_str(), e.timestamp / SECONDS_PER_DAY)).or_default() += 1;
    }
    let spammers: std::collections::HashSet<&str> =
        per_day.iter().filter(|(_, &n)| n > policy.max_clicks_per_user_per_day).map(|((u, _), _)| *u).collect();

    // Earliest occurrences win the pair cap; stable sort keeps file order among equal times.
    let mut order: Vec<usize> = (0..events.len()).filter(|&i| !spammers.contains(events[i].user.as_str())).collect();
    order.sort_by_key(|&i| events[i].timestamp);
    let mut seen: HashMap<(&str, Option<&str>, &str), u32> = HashMap::new();
    let mut keep = vec![false; events.len()];
    for i in order {
        let e = &events[i];
        let n = seen.entry((e.user.as_str(), e.trigger.as_deref(), e.clicked.as_str())).or_default();
        if *n < policy.max_clicks_per_user_item_pair {
            *n += 1;
            keep[i] = true;
        }
    }
    events.iter().zip(keep).filter(|&(_e, k)| k).map(|(e, _k)| e.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_clusters: usize,
    pub n_users: usize,
    /// Number of training-window product-page clicks.
    pub n_events: usize,
    pub intra_cluster_prob: f64,
    /// Fraction of items with no training-window activity at all.
    pub tail_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_clusters: 10,
            n_users: 20_000,
            n_events: 500_000,
            intra_cluster_prob: 0.9,
            tail_fraction: 0.2,
            rng_seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_items < 2 || self.n_clusters == 0 || self.n_users == 0 || self.n_events == 0 {
            return bad("n_items >= 2 and n_clusters, n_users, n_events >= 1 required");
        }
        if self.n_clusters > self.n_items {
            return bad("n_clusters must not exceed n_items");
        }
        if !(0.0..=1.0).contains(&self.intra_cluster_prob) {
            return bad("intra_cluster_prob must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.tail_fraction) {
            return bad("tail_fraction must lie in [0, 1)");
        }
        if self.intra_cluster_prob < 0.5 {
            log::warn!("intra_cluster_prob < 0.5: planted cluster structure will be weak");
        }
        Ok(())
    }
}

/// Everything a synthetic run produces. Training-window events never touch
/// `tail_items`; the inference window does (see [`TailGroup`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub clicks: Vec<ClickEvent>,
    pub searches: Vec<SearchEvent>,
    /// Clicks from the days after training, used for the relaxed inference graph.
    pub inference_clicks: Vec<ClickEvent>,
    pub inference_searches: Vec<SearchEvent>,
    pub features: Vec<FeatureRow>,
    pub clusters: BTreeMap<String, usize>,
    pub tail_items: BTreeMap<String, TailGroup>,
    pub future_clicks: Vec<FutureClick>,
}

/// How a withheld item shows up in the inference window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TailGroup {
    /// Product-page clicks next to seed items.
    Clicked,
    /// Search co-clicks only; reachable through search co-click edges.
    SearchOnly,
    /// No activity before the future window.
    Unseen,
}

const TRAIN_DAYS: u64 = 30;
const INFERENCE_DAYS: u64 = 7;
const NON_PDP_FRACTION: f64 = 0.05;
const BOT_DAILY_CLICKS: usize = 250;
const QUERIES_PER_CLUSTER: usize = 4;
const FUTURE_TAIL_SHARE: f64 = 0.5;

struct Planted {
    cluster_of: Vec<usize>,
    /// Non-withheld members of each cluster with cumulative popularity weights.
    seeds: Vec<Vec<usize>>,
    seed_cum: Vec<Vec<f64>>,
    all_seeds: Vec<usize>,
    tails: Vec<Vec<(usize, TailGroup)>>,
    members: Vec<Vec<usize>>,
}

impl Planted {
    fn popular_seed(&self, c: usize, rng: &mut ChaCha8Rng) -> usize {
        let cum = &self.seed_cum[c];
        let x = rng.gen::<f64>() * cum[cum.len() - 1];
        let i = cum.partition_point(|&v| v <= x).min(cum.len() - 1);
        self.seeds[c][i]
    }

    fn cross_seed(&self, c: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let others = self.all_seeds.len() - self.seeds[c].len();
        if others == 0 {
            return None;
        }
        loop {
            let v = self.all_seeds[rng.gen_range(0..self.all_seeds.len())];
            if self.cluster_of[v] != c {
                return Some(v);
            }
        }
    }

    /// A seed partner for `anchor` in cluster `c`: same cluster with probability `p`.
    fn partner(&self, c: usize, anchor: usize, p: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
        if rng.gen::<f64>() < p || self.all_seeds.len() == self.seeds[c].len() {
            if self.seeds[c].len() < 2 && self.seeds[c].first() == Some(&anchor) {
                return None;
            }
            for _ in 0..64 {
                let v = self.popular_seed(c, rng);
                if v != anchor {
                    return Some(v);
                }
            }
            None
        } else {
            self.cross_seed(c, rng)
        }
    }
}

fn item_id(i: usize) -> String {
    format!("it{i:05}")
}

/// Generates a planted-cluster dataset. The same spec always yields the same bundle.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.n_items;
    let k = spec.n_clusters;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut cluster_of = vec![0usize; n];
    let mut members = vec![Vec::new(); k];
    for (pos, &item) in perm.iter().enumerate() {
        cluster_of[item] = pos % k;
        members[pos % k].push(item);
    }

    // Largest-remainder allocation of exactly round(tail_fraction * n) withheld items,
    // leaving at least one seed per cluster.
    let total_tail = ((spec.tail_fraction * n as f64).round() as usize).min(n - k);
    let quotas: Vec<f64> = members.iter().map(|m| m.len() as f64 * total_tail as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..k).collect();
    rest.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut missing = total_tail - alloc.iter().sum::<usize>();
    for &c in rest.iter().cycle().take(4 * k) {
        if missing == 0 {
            break;
        }
        if alloc[c] + 1 < members[c].len() {
            alloc[c] += 1;
            missing -= 1;
        }
    }

    let mut seeds = vec![Vec::new(); k];
    let mut tails = vec![Vec::new(); k];
    for c in 0..k {
        let mut m = members[c].clone();
        m.shuffle(&mut rng);
        let t = alloc[c];
        for (j, &item) in m[..t].iter().enumerate() {
            let frac = j as f64 / t as f64;
            let group = if frac < 0.4 {
                TailGroup::Clicked
            } else if frac < 0.7 {
                TailGroup::SearchOnly
            } else {
                TailGroup::Unseen
            };
            tails[c].push((item, group));
        }
        seeds[c] = m[t..].to_vec();
    }
    // Zipf-like popularity over a random ranking of each cluster's seeds.
    let seed_cum: Vec<Vec<f64>> = seeds
        .iter()
        .map(|s| {
            let mut acc = 0.0;
            (0..s.len())
                .map(|r| {
                    acc += 1.0 / ((r + 1) as f64).powf(0.7);
                    acc
                })
                .collect()
        })
        .collect();
    let mut all_seeds: Vec<usize> = seeds.iter().flatten().copied().collect();
    all_seeds.sort_unstable();
    let planted = Planted { cluster_of, seeds, seed_cum, all_seeds, tails, members };

    let home: Vec<usize> = (0..spec.n_users).map(|_| rng.gen_range(0..k)).collect();
    let user_id = |u: usize| format!("u{u:06}");
    let p = spec.intra_cluster_prob;
    let train_span = TRAIN_DAYS * SECONDS_PER_DAY;

    // Training window: product-page clicks, a few non-PDP clicks and a handful of bots.
    let n_bot_events = spec.n_events / 50;
    let n_bots = n_bot_events / BOT_DAILY_CLICKS;
    let n_normal = spec.n_events - n_bots * BOT_DAILY_CLICKS;
    let mut clicks = Vec::with_capacity(spec.n_events);
    for _ in 0..n_normal {
        let u = rng.gen_range(0..spec.n_users);
        let c = home[u];
        let ts = rng.gen_range(0..train_span);
        let b = planted.popular_seed(c, &mut rng);
        if rng.gen::<f64>() < NON_PDP_FRACTION {
            clicks.push(ClickEvent { user: user_id(u), trigger: None, clicked: item_id(b), timestamp: ts });
            continue;
        }
        if let Some(a) = planted.partner(c, b, p, &mut rng) {
            clicks.push(ClickEvent { user: user_id(u), trigger: Some(item_id(b)), clicked: item_id(a), timestamp: ts });
        }
    }
    for bot in 0..n_bots {
        let day = rng.gen_range(0..TRAIN_DAYS);
        for _ in 0..BOT_DAILY_CLICKS {
            let c = rng.gen_range(0..k);
            let b = planted.popular_seed(c, &mut rng);
            if let Some(a) = planted.partner(c, b, p, &mut rng) {
                clicks.push(ClickEvent {
                    user: format!("bot{bot:04}"),
                    trigger: Some(item_id(b)),
                    clicked: item_id(a),
                    timestamp: day * SECONDS_PER_DAY + rng.gen_range(0..SECONDS_PER_DAY),
                });
            }
        }
    }
    clicks.sort_by_key(|a| a.timestamp);

    let query = |c: usize, rng: &mut ChaCha8Rng| format!("kw{c} q{}", rng.gen_range(0..QUERIES_PER_CLUSTER));

    // Training-window searches: groups of 2-3 clicks under one (user, query).
    let mut searches = Vec::new();
    while searches.len() < spec.n_events / 5 {
        let u = rng.gen_range(0..spec.n_users);
        let c = home[u];
        let q = query(c, &mut rng);
        let ts = rng.gen_range(0..train_span);
        let first = planted.popular_seed(c, &mut rng);
        let mut group = vec![first];
        for _ in 0..rng.gen_range(1..=2) {
            if let Some(a) = planted.partner(c, first, p, &mut rng) {
                group.push(a);
            }
        }
        for (j, it) in group.into_iter().enumerate() {
            searches.push(SearchEvent {
                user: user_id(u),
                query: q.clone(),
                clicked: item_id(it),
                timestamp: ts + j as u64,
            });
        }
    }
    searches.sort_by_key(|a| a.timestamp);

    // Inference window: latest behavior, including withheld items.
    let inf_start = train_span;
    let inf_span = INFERENCE_DAYS * SECONDS_PER_DAY;
    let clicked_tails: Vec<Vec<usize>> = planted
        .tails
        .iter()
        .map(|t| t.iter().filter(|(_, g)| *g == TailGroup::Clicked).map(|(i, _)| *i).collect())
        .collect();
    let searched_tails: Vec<Vec<usize>> = planted
        .tails
        .iter()
        .map(|t| t.iter().filter(|(_, g)| *g != TailGroup::Unseen).map(|(i, _)| *i).collect())
        .collect();
    let mut inference_clicks = Vec::new();
    for _ in 0..spec.n_events / 10 {
        let u = rng.gen_range(0..spec.n_users);
        let c = home[u];
        let ts = inf_start + rng.gen_range(0..inf_span);
        let (x, y) = if rng.gen::<bool>() && !clicked_tails[c].is_empty() {
            let t = clicked_tails[c][rng.gen_range(0..clicked_tails[c].len())];
            let s = if rng.gen::<f64>() < p {
                planted.popular_seed(c, &mut rng)
            } else {
                match planted.cross_seed(c, &mut rng) {
                    Some(s) => s,
                    None => continue,
                }
            };
            if rng.gen::<bool>() {
                (s, t)
            } else {
                (t, s)
            }
        } else {
            let b = planted.popular_seed(c, &mut rng);
            match planted.partner(c, b, p, &mut rng) {
                Some(a) => (b, a),
                None => continue,
            }
        };
        inference_clicks.push(ClickEvent {
            user: user_id(u),
            trigger: Some(item_id(x)),
            clicked: item_id(y),
            timestamp: ts,
        });
    }
    inference_clicks.sort_by_key(|a| a.timestamp);

    let mut inference_searches = Vec::new();
    while inference_searches.len() < spec.n_events / 20 {
        let u = rng.gen_range(0..spec.n_users);
        let c = home[u];
        let q = query(c, &mut rng);
        let ts = inf_start + rng.gen_range(0..inf_span);
        let mut group = vec![planted.popular_seed(c, &mut rng)];
        if !searched_tails[c].is_empty() && rng.gen::<f64>() < p {
            group.push(searched_tails[c][rng.gen_range(0..searched_tails[c].len())]);
        } else if let Some(a) = planted.partner(c, group[0], p, &mut rng) {
            group.push(a);
        }
        for (j, it) in group.into_iter().enumerate() {
            inference_searches.push(SearchEvent {
                user: user_id(u),
                query: q.clone(),
                clicked: item_id(it),
                timestamp: ts + j as u64,
            });
        }
    }
    inference_searches.sort_by_key(|a| a.timestamp);

    // Future window: pairs the retrieval evaluation should recover.
    let mut future_clicks = Vec::new();
    for _ in 0..spec.n_events / 20 {
        let u = rng.gen_range(0..spec.n_users);
        let c = home[u];
        let b = planted.popular_seed(c, &mut rng);
        let a = if rng.gen::<f64>() < p {
            if !planted.tails[c].is_empty() && rng.gen::<f64>() < FUTURE_TAIL_SHARE {
                planted.tails[c][rng.gen_range(0..planted.tails[c].len())].0
            } else {
                match planted.partner(c, b, 1.0, &mut rng) {
                    Some(a) => a,
                    None => continue,
                }
            }
        } else {
            let other = loop {
                let v = rng.gen_range(0..n);
                if planted.cluster_of[v] != c || k == 1 {
                    break v;
                }
            };
            if other == b {
                continue;
            }
            other
        };
        future_clicks.push(FutureClick { user: user_id(u), trigger: item_id(b), clicked: item_id(a) });
    }

    let features = synthetic_features(&planted, n, &mut rng);
    let clusters = (0..n).map(|i| (item_id(i), planted.cluster_of[i])).collect();
    let tail_items = planted.tails.iter().flatten().map(|&(i, g)| (item_id(i), g)).collect();
    Ok(SyntheticBundle {
        clicks,
        searches,
        inference_clicks,
        inference_searches,
        features,
        clusters,
        tail_items,
        future_clicks,
    })
}

const PRETRAINED_DIM: usize = 8;

/// Content features correlated with, but not identifying, the planted cluster: pairs of
/// clusters share a category and its brands, and the pretrained vector is a noisy copy
/// of a per-cluster direction.
fn synthetic_features(planted: &Planted, n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureRow> {
    let k = planted.members.len();
    let directions: Vec<Vec<f64>> =
        (0..k).map(|_| (0..PRETRAINED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = planted.cluster_of[i];
            let cat = c / 2;
            let base = 5.0 * (1 + cat % 4) as f64;
            let pretrained = directions[c].iter().map(|d| 0.5 * d + rng.gen_range(-0.5..0.5)).collect();
            FeatureRow {
                item: item_id(i),
                sparse: vec![
                    format!("d{}/c{cat}", cat / 2),
                    format!("b{cat}_{}", rng.gen_range(0..6)),
                    format!("s{}", rng.gen_range(0..50)),
                ],
                dense: vec![
                    (base * rng.gen_range(0.7..1.3) * 100.0).round() / 100.0,
                    (rng.gen_range(3.0..5.0) * 10.0f64).round() / 10.0,
                ],
                pretrained: Some(pretrained),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn click(u: &str, t: Option<&str>, c: &str, ts: u64) -> ClickEvent {
        ClickEvent { user: u.into(), trigger: t.map(Into::into), clicked: c.into(), timestamp: ts }
    }

    #[test]
    fn parses_rows_and_counts_malformed() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "u1\tB\tA\t100\nu1\t\tA\t100\nu2\tC\tA\t7\nbroken row\n").unwrap();
        let parsed = parse_click_log(f.path()).unwrap();
        assert_eq!(parsed.skipped, 1);
        assert_eq!(parsed.events[0], click("u1", Some("B"), "A", 100));
        assert_eq!(parsed.events[1], click("u1", None, "A", 100));
        assert_eq!(parsed.events.len(), 3);
    }

    #[test]
    fn mostly_malformed_file_is_fatal() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "a\nb\nu1\tB\tA\t1\n").unwrap();
        assert!(matches!(parse_click_log(f.path()), Err(Error::Format(_))));
        assert!(matches!(parse_click_log(Path::new("/nonexistent/x.tsv")), Err(Error::Io { .. })));
    }

    #[test]
    fn search_queries_are_normalized() {
        assert_eq!(normalize_query("  Red   SHOE\tsale "), "red shoe sale");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "u1\t  Red Shoe \tA\t5\nu1\t   \tA\t5\nu1\tx\tB\t6\n").unwrap();
        let parsed = parse_search_log(f.path()).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.events[0].query, "red shoe");
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn spam_filter_rules() {
        let policy = SpamPolicy { max_clicks_per_user_per_day: 10, max_clicks_per_user_item_pair: 3 };
        let few: Vec<_> = (0..5).map(|i| click("u", Some("B"), &format!("A{i}"), i)).collect();
        assert_eq!(filter_spam(&few, &policy), few);

        let policy = SpamPolicy { max_clicks_per_user_per_day: 1000, max_clicks_per_user_item_pair: 2000 };
        let mut bot: Vec<_> = (0..1001).map(|i| click("bot", Some("B"), "A", i)).collect();
        bot.push(click("human", Some("B"), "A", 5));
        let out = filter_spam(&bot, &policy);
        assert_eq!(out, vec![click("human", Some("B"), "A", 5)]);

        let policy = SpamPolicy { max_clicks_per_user_per_day: 100, max_clicks_per_user_item_pair: 3 };
        let repeated: Vec<_> = (0..7).rev().map(|i| click("u", Some("B"), "A", 10 + i)).collect();
        let out = filter_spam(&repeated, &policy);
        let mut ts: Vec<u64> = out.iter().map(|e| e.timestamp).collect();
        ts.sort();
        assert_eq!(ts, vec![10, 11, 12]);
        assert!(filter_spam(&[], &policy).is_empty());
    }

    #[test]
    fn daily_cap_uses_utc_days() {
        let policy = SpamPolicy { max_clicks_per_user_per_day: 2, max_clicks_per_user_item_pair: 10 };
        let spread = vec![
            click("u", Some("B"), "A", SECONDS_PER_DAY - 2),
            click("u", Some("B"), "C", SECONDS_PER_DAY - 1),
            click("u", Some("B"), "D", SECONDS_PER_DAY),
        ];
        assert_eq!(filter_spam(&spread, &policy).len(), 3);
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_items: 200,
            n_clusters: 5,
            n_users: 500,
            n_events: 20_000,
            intra_cluster_prob: 0.9,
            tail_fraction: 0.2,
            rng_seed: 42,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(generate_synthetic(&small_spec()).unwrap(), generate_synthetic(&small_spec()).unwrap());
    }

    #[test]
    fn synthetic_pure_clusters_at_probability_one() {
        let spec = SyntheticSpec { intra_cluster_prob: 1.0, ..small_spec() };
        let b = generate_synthetic(&spec).unwrap();
        for e in &b.clicks {
            if let Some(t) = &e.trigger {
                assert_eq!(b.clusters[t], b.clusters[&e.clicked]);
            }
        }
    }

    #[test]
    fn synthetic_withholds_exact_tail_count() {
        let spec = SyntheticSpec { n_items: 1000, n_events: 30_000, ..small_spec() };
        let b = generate_synthetic(&spec).unwrap();
        let mut active = std::collections::BTreeSet::new();
        for e in &b.clicks {
            active.insert(e.clicked.clone());
            if let Some(t) = &e.trigger {
                active.insert(t.clone());
            }
        }
        for e in &b.searches {
            active.insert(e.clicked.clone());
        }
        let idle: Vec<_> = b.clusters.keys().filter(|i| !active.contains(*i)).collect();
        assert_eq!(b.tail_items.len(), 200);
        assert_eq!(idle.len(), 200);
        assert!(idle.iter().all(|i| b.tail_items.contains_key(*i)));
        assert!(b.future_clicks.iter().any(|f| b.tail_items.contains_key(&f.clicked)));
        assert!(b.inference_clicks.iter().any(|e| b.tail_items.contains_key(&e.clicked)));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SyntheticSpec { n_clusters: 500, n_items: 10, ..small_spec() };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn events() -> impl Strategy<Value = Vec<ClickEvent>> {
            prop::collection::vec((0u8..4, prop::option::of(0u8..3), 3u8..6, 0u64..(3 * SECONDS_PER_DAY)), 0..80)
                .prop_map(|v| {
                    v.into_iter()
                        .map(|(u, t, c, ts)| {
                            click(&format!("u{u}"), t.map(|t| format!("i{t}")).as_deref(), &format!("i{c}"), ts)
                        })
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn filter_is_idempotent_subset(evs in events(), day in 1u32..20, pair in 1u32..4) {
                let policy = SpamPolicy { max_clicks_per_user_per_day: day, max_clicks_per_user_item_pair: pair };
                let once = filter_spam(&evs, &policy);
                prop_assert_eq!(filter_spam(&once, &policy), once.clone());
                let mut pool = evs.clone();
                for e in &once {
                    let pos = pool.iter().position(|x| x == e);
                    prop_assert!(pos.is_some());
                    pool.remove(pos.unwrap());
                }
            }
        }
    }
}
