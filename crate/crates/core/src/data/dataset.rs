//! Users, pairwise feedback, splits, and the line-delimited feedback file.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    History,
    Current,
}

/// One observed comparison between two responses of an episode.
///
/// `label == 1` means `chosen` was preferred over `rejected`; `label == 0`
/// means the opposite. The field names follow the file format, where the
/// first response is always called `chosen`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeedbackTriple {
    pub user_id: String,
    pub episode_id: String,
    pub chosen: String,
    pub rejected: String,
    pub label: u8,
}

impl FeedbackTriple {
    /// Same comparison with the two responses swapped and the label flipped.
    pub fn swapped(&self) -> Self {
        Self {
            user_id: self.user_id.clone(),
            episode_id: self.episode_id.clone(),
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            label: 1 - self.label,
        }
    }
}

/// One line of the feedback file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub user_id: String,
    pub episode_id: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub label: u8,
    pub split: Split,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserHistory {
    pub user_id: String,
    /// Observable past feedback, oldest first.
    pub history: Vec<FeedbackTriple>,
    /// Evaluation targets.
    pub current: Vec<FeedbackTriple>,
}

/// All users of one split together with the embedding tables they refer to.
///
/// Record order from the feedback file is retained, so writing a loaded
/// dataset reproduces its file byte for byte.
#[derive(Debug, Clone)]
pub struct Dataset {
    split: Option<Split>,
    users: IndexMap<String, UserHistory>,
    order: Vec<(usize, Role, usize)>,
    episodes: Arc<EmbeddingTable>,
    responses: Arc<EmbeddingTable>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.users == other.users
            && self.order == other.order
            && *self.episodes == *other.episodes
            && *self.responses == *other.responses
    }
}

impl Dataset {
    pub fn new(
        split: Option<Split>,
        episodes: Arc<EmbeddingTable>,
        responses: Arc<EmbeddingTable>,
    ) -> Self {
        Self {
            split,
            users: IndexMap::new(),
            order: Vec::new(),
            episodes,
            responses,
        }
    }

    pub fn split(&self) -> Option<Split> {
        self.split
    }

    pub fn episodes(&self) -> &EmbeddingTable {
        &self.episodes
    }

    pub fn responses(&self) -> &EmbeddingTable {
        &self.responses
    }

    pub fn episode_table(&self) -> &Arc<EmbeddingTable> {
        &self.episodes
    }

    pub fn response_table(&self) -> &Arc<EmbeddingTable> {
        &self.responses
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &UserHistory> {
        self.users.values()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserHistory> {
        self.users.get(user_id)
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn num_records(&self) -> usize {
        self.order.len()
    }

    pub fn num_current(&self) -> usize {
        self.users.values().map(|u| u.current.len()).sum()
    }

    /// Appends one triple. Referential checks happen in [`validate`](Self::validate).
    pub fn push(&mut self, triple: FeedbackTriple, role: Role) {
        let entry = self.users.entry(triple.user_id.clone());
        let user_idx = entry.index();
        let user = entry.or_insert_with(|| UserHistory {
            user_id: triple.user_id.clone(),
            ..Default::default()
        });
        let list = match role {
            Role::History => &mut user.history,
            Role::Current => &mut user.current,
        };
        self.order.push((user_idx, role, list.len()));
        list.push(triple);
    }

    pub fn episode_embedding(&self, episode_id: &str) -> Result<&[f64]> {
        self.episodes.require(episode_id, "episode")
    }

    pub fn response_embedding(&self, response_id: &str) -> Result<&[f64]> {
        self.responses.require(response_id, "response")
    }

    /// Checks every referential and structural invariant.
    pub fn validate(&self) -> Result<()> {
        for user in self.users.values() {
            for t in user.history.iter().chain(&user.current) {
                self.validate_triple(t)?;
            }
            let history_eps: HashSet<&str> =
                user.history.iter().map(|t| t.episode_id.as_str()).collect();
            if let Some(t) = user
                .current
                .iter()
                .find(|t| history_eps.contains(t.episode_id.as_str()))
            {
                return Err(Error::Integrity(format!(
                    "user {:?}: episode {:?} appears in both history and current",
                    user.user_id, t.episode_id
                )));
            }
        }
        Ok(())
    }

    fn validate_triple(&self, t: &FeedbackTriple) -> Result<()> {
        if t.chosen == t.rejected {
            return Err(Error::Integrity(format!(
                "user {:?}, episode {:?}: chosen and rejected are both {:?}",
                t.user_id, t.episode_id, t.chosen
            )));
        }
        if t.label > 1 {
            return Err(Error::Integrity(format!(
                "user {:?}, episode {:?}: label {} is not 0 or 1",
                t.user_id, t.episode_id, t.label
            )));
        }
        self.episode_embedding(&t.episode_id)?;
        self.response_embedding(&t.chosen)?;
        self.response_embedding(&t.rejected)?;
        Ok(())
    }

    /// Feedback records in file order.
    pub fn records(&self) -> impl Iterator<Item = FeedbackRecord> + '_ {
        let split = self.split.unwrap_or(Split::Train);
        self.order.iter().map(move |&(u, role, i)| {
            let user = &self.users[u];
            let t = match role {
                Role::History => &user.history[i],
                Role::Current => &user.current[i],
            };
            FeedbackRecord {
                user_id: t.user_id.clone(),
                episode_id: t.episode_id.clone(),
                chosen_id: t.chosen.clone(),
                rejected_id: t.rejected.clone(),
                label: t.label,
                split,
                role,
            }
        })
    }

    /// Serialized feedback file contents (one JSON object per line).
    pub fn feedback_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_feedback(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.feedback_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Parses feedback lines against already loaded embedding tables.
    pub fn from_feedback_str(
        text: &str,
        source: &Path,
        episodes: Arc<EmbeddingTable>,
        responses: Arc<EmbeddingTable>,
    ) -> Result<Self> {
        let mut split = None;
        let mut ds = Dataset::new(None, episodes, responses);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeedbackRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: source.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
            match split {
                None => split = Some(rec.split),
                Some(s) if s != rec.split => {
                    return Err(Error::Parse {
                        path: source.to_path_buf(),
                        line: lineno + 1,
                        message: format!("split {} in a {s} file", rec.split),
                    })
                }
                Some(_) => {}
            }
            ds.push(
                FeedbackTriple {
                    user_id: rec.user_id,
                    episode_id: rec.episode_id,
                    chosen: rec.chosen_id,
                    rejected: rec.rejected_id,
                    label: rec.label,
                },
                rec.role,
            );
        }
        ds.split = split;
        ds.validate()?;
        Ok(ds)
    }

    /// Loads a feedback file together with its embedding files and checks
    /// every referential invariant.
    pub fn load(feedback: &Path, episodes: &Path, responses: &Path) -> Result<Self> {
        let episodes = Arc::new(EmbeddingTable::read(episodes)?);
        let responses = Arc::new(EmbeddingTable::read(responses)?);
        Self::load_with_tables(feedback, episodes, responses)
    }

    pub fn load_with_tables(
        feedback: &Path,
        episodes: Arc<EmbeddingTable>,
        responses: Arc<EmbeddingTable>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(feedback).map_err(|e| Error::io(feedback, e))?;
        Self::from_feedback_str(&text, feedback, episodes, responses)
    }

    /// Copy in which every user keeps only their `max_history` most recent
    /// history items.
    pub fn with_history_limit(&self, max_history: usize) -> Self {
        let mut out = Dataset::new(self.split, self.episodes.clone(), self.responses.clone());
        for user in self.users.values() {
            let skip = user.history.len().saturating_sub(max_history);
            for t in &user.history[skip..] {
                out.push(t.clone(), Role::History);
            }
            for t in &user.current {
                out.push(t.clone(), Role::Current);
            }
        }
        out
    }

    /// Copy whose current items are followed by their swapped-and-flipped
    /// twins.
    pub fn with_swapped_duplicates(&self) -> Self {
        let mut out = Dataset::new(self.split, self.episodes.clone(), self.responses.clone());
        for user in self.users.values() {
            for t in &user.history {
                out.push(t.clone(), Role::History);
            }
            for t in &user.current {
                out.push(t.clone(), Role::Current);
            }
            for t in &user.current {
                out.push(t.swapped(), Role::Current);
            }
        }
        out
    }

    /// Copy restricted to the given users (in this dataset's order).
    pub fn filter_users(&self, keep: impl Fn(&UserHistory) -> bool) -> Self {
        let mut out = Dataset::new(self.split, self.episodes.clone(), self.responses.clone());
        for user in self.users.values().filter(|u| keep(u)) {
            for t in &user.history {
                out.push(t.clone(), Role::History);
            }
            for t in &user.current {
                out.push(t.clone(), Role::Current);
            }
        }
        out
    }
}

/// One user found in two splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitViolation {
    pub user_id: String,
    pub first: Split,
    pub second: Split,
}

/// Lists every user present in more than one of the three splits, pair by
/// pair: (train, validation), (train, test), (validation, test).
pub fn split_disjointness_check(
    train: &Dataset,
    validation: &Dataset,
    test: &Dataset,
) -> Vec<SplitViolation> {
    let named = [
        (Split::Train, train),
        (Split::Validation, validation),
        (Split::Test, test),
    ];
    let mut out = Vec::new();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            let (a_split, a) = named[i];
            let (b_split, b) = named[j];
            for uid in a.user_ids().filter(|u| b.user(u).is_some()) {
                out.push(SplitViolation {
                    user_id: uid.to_owned(),
                    first: a_split,
                    second: b_split,
                });
            }
        }
    }
    out
}

/// Maximum cosine similarity between `episode` and the episodes of the
/// user's history.
pub fn episode_similarity(history: &UserHistory, episode: &[f64], dataset: &Dataset) -> Result<f64> {
    if history.history.is_empty() {
        return Err(Error::UndefinedSimilarity(format!(
            "user {:?} has no history",
            history.user_id
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for t in &history.history {
        let past = dataset.episode_embedding(&t.episode_id)?;
        if past.len() != episode.len() {
            return Err(Error::Shape(format!(
                "episode dim {} vs {}",
                past.len(),
                episode.len()
            )));
        }
        best = best.max(cosine(past, episode));
    }
    Ok(best)
}

/// Removes repeated current items per user, keyed by
/// `(user, episode, chosen, rejected)`. First occurrence wins.
pub fn dedup_current(users: &[&UserHistory]) -> HashMap<String, Vec<FeedbackTriple>> {
    users
        .iter()
        .map(|u| {
            let mut seen = HashSet::new();
            let items = u
                .current
                .iter()
                .filter(|t| seen.insert((&t.episode_id, &t.chosen, &t.rejected)))
                .cloned()
                .collect();
            (u.user_id.clone(), items)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::path::PathBuf;

    fn tables() -> (Arc<EmbeddingTable>, Arc<EmbeddingTable>) {
        let mut eps = EmbeddingTable::new(2);
        eps.insert("e1", &[1.0, 0.0]).unwrap();
        eps.insert("e2", &[0.0, 1.0]).unwrap();
        eps.insert("e3", &[1.0, 1.0]).unwrap();
        let mut resp = EmbeddingTable::new(3);
        for (i, id) in ["r1", "r2", "r3", "r4"].iter().enumerate() {
            resp.insert(*id, &[i as f64, 1.0, -1.0]).unwrap();
        }
        (Arc::new(eps), Arc::new(resp))
    }

    fn line(user: &str, ep: &str, c: &str, r: &str, label: u8, role: &str) -> String {
        format!(
            r#"{{"user_id":"{user}","episode_id":"{ep}","chosen_id":"{c}","rejected_id":"{r}","label":{label},"split":"train","role":"{role}"}}"#
        )
    }

    fn parse(text: &str) -> Result<Dataset> {
        let (e, r) = tables();
        Dataset::from_feedback_str(text, &PathBuf::from("mem"), e, r)
    }

    #[test]
    fn empty_file_has_no_users() {
        let ds = parse("").unwrap();
        assert_eq!(ds.num_users(), 0);
        assert_eq!(ds.split(), None);
    }

    #[test]
    fn counts_and_round_trip() {
        let text = [
            line("u1", "e1", "r1", "r2", 1, "history"),
            line("u1", "e2", "r3", "r4", 0, "history"),
            line("u1", "e3", "r1", "r3", 1, "current"),
        ]
        .join("\n")
            + "\n";
        let ds = parse(&text).unwrap();
        let u = ds.user("u1").unwrap();
        assert_eq!(u.history.len(), 2);
        assert_eq!(u.current.len(), 1);
        assert_eq!(ds.split(), Some(Split::Train));
        assert_eq!(ds.feedback_jsonl(), text);
    }

    #[test]
    fn interleaved_order_round_trips() {
        let text = [
            line("u2", "e1", "r1", "r2", 1, "current"),
            line("u1", "e2", "r3", "r4", 0, "history"),
            line("u2", "e3", "r1", "r3", 1, "history"),
        ]
        .join("\n")
            + "\n";
        assert_eq!(parse(&text).unwrap().feedback_jsonl(), text);
    }

    #[test]
    fn unknown_response_is_integrity_error() {
        let err = parse(&line("u1", "e1", "r1", "nope", 1, "history")).unwrap_err();
        assert!(matches!(&err, Error::Integrity(m) if m.contains("nope")), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", line("u1", "e1", "r1", "r2", 1, "history"));
        match parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_label_and_self_comparison_rejected() {
        assert!(parse(&line("u1", "e1", "r1", "r2", 2, "history")).is_err());
        assert!(parse(&line("u1", "e1", "r1", "r1", 1, "history")).is_err());
    }

    #[test]
    fn history_current_overlap_rejected() {
        let text = [
            line("u1", "e1", "r1", "r2", 1, "history"),
            line("u1", "e1", "r3", "r4", 1, "current"),
        ]
        .join("\n");
        assert!(matches!(parse(&text), Err(Error::Integrity(_))));
    }

    #[test]
    fn mixed_splits_rejected() {
        let text = format!(
            "{}\n{}",
            line("u1", "e1", "r1", "r2", 1, "history"),
            line("u2", "e2", "r1", "r2", 1, "history").replace("train", "test")
        );
        assert!(matches!(parse(&text), Err(Error::Parse { line: 2, .. })));
    }

    fn users(ids: &[&str]) -> Dataset {
        let (e, r) = tables();
        let mut ds = Dataset::new(None, e, r);
        for id in ids {
            ds.push(
                FeedbackTriple {
                    user_id: id.to_string(),
                    episode_id: "e1".into(),
                    chosen: "r1".into(),
                    rejected: "r2".into(),
                    label: 1,
                },
                Role::History,
            );
        }
        ds
    }

    #[test]
    fn disjointness() {
        assert!(split_disjointness_check(&users(&["a"]), &users(&["b"]), &users(&["c"])).is_empty());

        let v = split_disjointness_check(&users(&["u1", "x"]), &users(&["y"]), &users(&["u1"]));
        assert_eq!(
            v,
            vec![SplitViolation {
                user_id: "u1".into(),
                first: Split::Train,
                second: Split::Test
            }]
        );

        let same = users(&["a", "b", "c"]);
        let v = split_disjointness_check(&same, &same, &same);
        assert_eq!(v.len(), 9);
        for pair in v.chunks(3) {
            assert_eq!(pair.iter().map(|x| x.user_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        }
    }

    #[test]
    fn similarity_cases() {
        let text = [
            line("u1", "e1", "r1", "r2", 1, "history"),
            line("u1", "e2", "r3", "r4", 0, "history"),
        ]
        .join("\n");
        let ds = parse(&text).unwrap();
        let u = ds.user("u1").unwrap();
        assert_abs_diff_eq!(episode_similarity(u, &[1.0, 0.0], &ds).unwrap(), 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(episode_similarity(u, &[h, h], &ds).unwrap(), h, epsilon = 1e-12);

        let only_e1 = parse(&line("u1", "e1", "r1", "r2", 1, "history")).unwrap();
        let u = only_e1.user("u1").unwrap();
        assert_eq!(episode_similarity(u, &[0.0, 3.0], &only_e1).unwrap(), 0.0);

        let empty = UserHistory::default();
        assert!(matches!(
            episode_similarity(&empty, &[1.0, 0.0], &ds),
            Err(Error::UndefinedSimilarity(_))
        ));
    }

    #[test]
    fn history_limit_keeps_most_recent() {
        let text = [
            line("u1", "e1", "r1", "r2", 1, "history"),
            line("u1", "e2", "r3", "r4", 0, "history"),
            line("u1", "e3", "r1", "r3", 1, "current"),
        ]
        .join("\n");
        let ds = parse(&text).unwrap().with_history_limit(1);
        let u = ds.user("u1").unwrap();
        assert_eq!(u.history.len(), 1);
        assert_eq!(u.history[0].episode_id, "e2");
        assert_eq!(u.current.len(), 1);
    }

    #[test]
    fn dedup_drops_repeats() {
        let text = [
            line("u1", "e3", "r1", "r2", 1, "current"),
            line("u1", "e3", "r1", "r2", 0, "current"),
            line("u1", "e3", "r2", "r1", 0, "current"),
        ]
        .join("\n");
        let ds = parse(&text).unwrap();
        let d = dedup_current(&[ds.user("u1").unwrap()]);
        assert_eq!(d["u1"].len(), 2);
    }
}
