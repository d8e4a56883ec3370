//! Pairwise accuracy with confidence intervals and stratified breakdowns,
//! ablation variants and window-size sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dedup_current, episode_similarity, Dataset};
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::persona::WindowConfig;
use crate::reward::{train, Model, PersonaMode, TrainConfig};

/// Lower edges of the default history-size bins: 1–5, 6–15, 16–40, 41+.
pub const DEFAULT_HISTORY_EDGES: [usize; 4] = [1, 6, 16, 41];

/// Normal-approximation 95% half-width for an accuracy `p` over `n` items.
pub fn ci_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Median of `values`; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Stable 64-bit FNV-1a digest of the config's JSON form.
pub fn config_fingerprint(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

impl Stratum {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            count: 0,
            correct: 0,
            accuracy: None,
        }
    }

    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
    }

    fn finish(&mut self) {
        self.accuracy = (self.count > 0).then(|| self.correct as f64 / self.count as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub accuracy: f64,
    pub ci_half_width: f64,
    pub count: usize,
    pub correct: usize,
    /// Split point between the "low" and "high" similarity strata.
    pub similarity_median: Option<f64>,
    /// `low`, `high`, and `no_history` for users without history.
    pub similarity: Vec<Stratum>,
    pub history: Vec<Stratum>,
    pub seeds: Vec<SeedResult>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn stratum(&self, name: &str) -> Option<&Stratum> {
        self.similarity.iter().chain(&self.history).find(|s| s.name == name)
    }

    /// Accuracy of the high-similarity stratum minus that of the low one.
    pub fn similarity_drop(&self) -> Option<f64> {
        Some(self.stratum("high")?.accuracy? - self.stratum("low")?.accuracy?)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub history_edges: Vec<usize>,
    pub label: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            history_edges: DEFAULT_HISTORY_EDGES.to_vec(),
            label: "eval".into(),
        }
    }
}

fn history_bin_names(edges: &[usize]) -> Vec<String> {
    edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| match edges.get(i + 1) {
            Some(&next) if next == lo + 1 => lo.to_string(),
            Some(&next) => format!("{lo}-{}", next - 1),
            None => format!("{lo}+"),
        })
        .collect()
}

struct Scored {
    hit: bool,
    similarity: Option<f64>,
    history_len: usize,
}

/// Scores every current item of `ds` (duplicates within a user removed)
/// and aggregates accuracy overall and per stratum.
pub fn evaluate_with(model: &Model, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    model.check_dataset(ds)?;
    if opts.history_edges.is_empty() || opts.history_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("history bin edges must be non-empty and increasing".into()));
    }
    let users: Vec<_> = ds.users().collect();
    let items = dedup_current(&users);
    let per_user: Vec<Vec<Scored>> = users
        .par_iter()
        .map(|u| -> Result<Vec<Scored>> {
            let state = model.persona_state(&u.history, ds)?;
            let mut out = Vec::new();
            for t in &items[&u.user_id] {
                let e = ds.episode_embedding(&t.episode_id)?;
                let r1 = model.reward_pooled(&state.pooled, e, ds.response_embedding(&t.chosen)?)?;
                let r2 = model.reward_pooled(&state.pooled, e, ds.response_embedding(&t.rejected)?)?;
                let similarity = if u.history.is_empty() {
                    None
                } else {
                    Some(episode_similarity(u, e, ds)?)
                };
                out.push(Scored {
                    hit: model.decide(r1, r2) == t.label,
                    similarity,
                    history_len: u.history.len(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let scored: Vec<Scored> = per_user.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::Integrity("evaluation set has no current comparisons".into()));
    }

    let sims: Vec<f64> = scored.iter().filter_map(|s| s.similarity).collect();
    let split = median(&sims);
    let mut low = Stratum::new("low");
    let mut high = Stratum::new("high");
    let mut none = Stratum::new("no_history");
    let names = history_bin_names(&opts.history_edges);
    let mut bins: Vec<Stratum> = names.into_iter().map(Stratum::new).collect();
    let mut below = Stratum::new(format!("0-{}", opts.history_edges[0].saturating_sub(1)));
    let mut correct = 0;
    for s in &scored {
        correct += usize::from(s.hit);
        match (s.similarity, split) {
            (Some(x), Some(m)) if x >= m => high.add(s.hit),
            (Some(_), Some(_)) => low.add(s.hit),
            _ => none.add(s.hit),
        }
        match opts.history_edges.iter().rposition(|&lo| s.history_len >= lo) {
            Some(i) => bins[i].add(s.hit),
            None => below.add(s.hit),
        }
    }
    let mut similarity = vec![low, high];
    if none.count > 0 {
        similarity.push(none);
    }
    if below.count > 0 {
        bins.insert(0, below);
    }
    similarity.iter_mut().chain(bins.iter_mut()).for_each(Stratum::finish);

    let count = scored.len();
    let accuracy = correct as f64 / count as f64;
    Ok(EvalReport {
        label: opts.label.clone(),
        accuracy,
        ci_half_width: ci_half_width(accuracy, count),
        count,
        correct,
        similarity_median: split,
        similarity,
        history: bins,
        seeds: vec![SeedResult {
            seed: model.config.seed,
            accuracy,
        }],
        fingerprint: config_fingerprint(&model.config),
    })
}

pub fn evaluate(model: &Model, ds: &Dataset) -> Result<EvalReport> {
    evaluate_with(model, ds, &EvalOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoVq,
    NoAbduction,
    PersonaFree,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::NoVq, Self::NoAbduction, Self::PersonaFree];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoVq => "no_vq",
            Self::NoAbduction => "no_abduction",
            Self::PersonaFree => "persona_free",
        }
    }

    /// The training config this variant runs with.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        match self {
            Self::Full => cfg.clone(),
            Self::NoVq => TrainConfig {
                persona_mode: PersonaMode::Continuous,
                ..cfg.clone()
            },
            Self::NoAbduction => TrainConfig {
                encoder_kind: EncoderKind::IdentityChosen,
                ..cfg.clone()
            },
            Self::PersonaFree => cfg.persona_free(),
        }
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trains `variant` on `train` and evaluates it on `test`.
pub fn run_ablation(
    variant: AblationVariant,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, EvalReport)> {
    let model = train(train_set, validation, &variant.apply(cfg))?;
    let report = evaluate_with(
        &model,
        test,
        &EvalOptions {
            label: variant.as_str().into(),
            ..EvalOptions::default()
        },
    )?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_len: usize,
    pub accuracy: f64,
    pub ci_half_width: f64,
}

/// Retrains once per window length with the config's seed.
pub fn window_sweep(
    cfg: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    test: &Dataset,
    sizes: &[usize],
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::Config("window sweep needs at least one size".into()));
    }
    sizes
        .par_iter()
        .map(|&l| {
            let cfg = TrainConfig {
                window: WindowConfig::new(l),
                ..cfg.clone()
            };
            let model = train(train_set, validation, &cfg)?;
            let r = evaluate(&model, test)?;
            Ok(SweepRow {
                window_len: l,
                accuracy: r.accuracy,
                ci_half_width: r.ci_half_width,
            })
        })
        .collect()
}

/// Runs `job` once per seed (in parallel) and folds the results into one
/// report: strata and counts from the median-accuracy run, every seed's
/// accuracy listed.
pub fn multi_seed<F>(seeds: &[u64], job: F) -> Result<EvalReport>
where
    F: Fn(u64) -> Result<EvalReport> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let reports: Vec<EvalReport> = seeds.par_iter().map(|&s| job(s)).collect::<Result<_>>()?;
    let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let med = median(&accs).expect("non-empty");
    let pick = reports
        .iter()
        .min_by(|a, b| (a.accuracy - med).abs().total_cmp(&(b.accuracy - med).abs()))
        .expect("non-empty");
    let mut out = pick.clone();
    out.accuracy = med;
    out.seeds = seeds
        .iter()
        .zip(&accs)
        .map(|(&seed, &accuracy)| SeedResult { seed, accuracy })
        .collect();
    Ok(out)
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Human-readable table: one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mut strata: Vec<String> = Vec::new();
    for r in reports {
        for s in r.similarity.iter().chain(&r.history) {
            if !strata.contains(&s.name) {
                strata.push(s.name.clone());
            }
        }
    }
    let _ = write!(out, "{:<14} {:>7} {:>7} {:>6}", "run", "acc%", "±ci", "n");
    for s in &strata {
        let _ = write!(out, " {s:>10}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{:<14} {:>7.2} {:>7.2} {:>6}",
            r.label,
            100.0 * r.accuracy,
            100.0 * r.ci_half_width,
            r.count
        );
        for s in &strata {
            let _ = write!(out, " {:>10}", pct(r.stratum(s).and_then(|x| x.accuracy)));
        }
        out.push('\n');
    }
    out
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>6} {:>8} {:>7}\n", "L", "acc%", "±ci");
    for r in rows {
        let _ = writeln!(out, "{:>6} {:>8.2} {:>7.2}", r.window_len, 100.0 * r.accuracy, 100.0 * r.ci_half_width);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, WorldSpec};

    #[test]
    fn ci_examples() {
        assert_eq!(ci_half_width(1.0, 100), 0.0);
        assert!((ci_half_width(0.6, 400) - 0.048_01).abs() < 1e-4);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn bin_names() {
        assert_eq!(history_bin_names(&DEFAULT_HISTORY_EDGES), ["1-5", "6-15", "16-40", "41+"]);
        assert_eq!(history_bin_names(&[1, 2]), ["1", "2+"]);
    }

    #[test]
    fn variants_parse() {
        for v in AblationVariant::ALL {
            assert_eq!(v.as_str().parse::<AblationVariant>().unwrap(), v);
        }
        assert!("no_such".parse::<AblationVariant>().is_err());
    }

    fn tiny_world() -> crate::simulator::World {
        generate(&WorldSpec {
            train_users: 12,
            validation_users: 3,
            test_users: 8,
            history_min: 0,
            history_max: 20,
            current_per_user: 6,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn strata_add_up_and_repeat() {
        let w = tiny_world();
        let cfg = TrainConfig {
            epochs: 2,
            codebook_size: 8,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        let model = train(&w.train, None, &cfg).unwrap();
        let r = evaluate(&model, &w.test).unwrap();
        let r2 = evaluate(&model, &w.test).unwrap();
        assert_eq!(r, r2);
        for group in [&r.similarity, &r.history] {
            let n: usize = group.iter().map(|s| s.count).sum();
            let c: usize = group.iter().map(|s| s.correct).sum();
            assert_eq!((n, c), (r.count, r.correct));
        }
        let swapped = evaluate(&model, &w.test.with_swapped_duplicates()).unwrap();
        assert_eq!(swapped.accuracy, r.accuracy);
        assert!(render_table(&[r]).contains("eval"));
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let w = tiny_world();
        let model = Model::init(&w.train, &TrainConfig { codebook_size: 4, hidden_dim: 4, ..TrainConfig::default() }).unwrap();
        let empty = w.test.filter_users(|_| false);
        assert!(evaluate(&model, &empty).is_err());
    }

    #[test]
    fn sweep_needs_sizes() {
        let w = tiny_world();
        assert!(window_sweep(&TrainConfig::default(), &w.train, None, &w.test, &[]).is_err());
    }

    #[test]
    fn no_vq_differs_only_in_quantization() {
        let w = tiny_world();
        let cfg = TrainConfig { codebook_size: 4, hidden_dim: 4, ..TrainConfig::default() };
        let full = Model::init(&w.train, &AblationVariant::Full.apply(&cfg)).unwrap();
        let no_vq = Model::init(&w.train, &AblationVariant::NoVq.apply(&cfg)).unwrap();
        assert_eq!(full.encoder, no_vq.encoder);
        assert_eq!(full.projector, no_vq.projector);
        assert_eq!(full.head, no_vq.head);
        assert_eq!(
            TrainConfig { persona_mode: PersonaMode::Quantized, ..no_vq.config.clone() },
            full.config
        );
    }

    #[test]
    fn windows_longer_than_every_history_collapse_to_one() {
        let w = tiny_world();
        let cfg = TrainConfig { epochs: 2, codebook_size: 4, hidden_dim: 4, ..TrainConfig::default() };
        let rows = window_sweep(&cfg, &w.train, None, &w.test, &[20]).unwrap();
        assert_eq!(rows.len(), 1);

        // Every length at or past the longest history pools the whole
        // history into a single window, so the runs coincide.
        let rows = window_sweep(&cfg, &w.train, None, &w.test, &[20, 25, 400]).unwrap();
        assert!(rows.windows(2).all(|r| r[0].accuracy == r[1].accuracy));
        let model = train(&w.train, None, &TrainConfig { window: WindowConfig::new(20), ..cfg }).unwrap();
        let user = w.test.users().find(|u| !u.history.is_empty()).unwrap();
        let windows = model.rationale_windows(&user.history, &w.test).unwrap();
        let rationales = crate::encoder::encode_history(&model.encoder, &user.history, &w.test).unwrap();
        let mean = crate::numerics::mean_of(rationales.iter().map(|r| r.vector.as_slice())).unwrap();
        assert_eq!(windows.len(), 1);
        for (a, b) in windows[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
