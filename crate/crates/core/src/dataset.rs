//! Rating ingestion, binarization, and the temporal train/test split.
//!
//! Two public MovieLens layouts are supported: tab-separated ratings with a
//! pipe-separated user file (ml-100k), and `::`-separated ratings and user
//! files (ml-1m). Ids are opaque strings throughout; dense indices exist only
//! inside [`RatingGraph`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Opaque user identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub String);

/// Opaque item identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_owned())
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId(s.to_owned())
    }
}

/// Binary target label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// 1 for Female, 0 for Male.
    #[inline]
    pub fn indicator<S: Scalar>(self) -> S {
        match self {
            Gender::Female => S::one(),
            Gender::Male => S::zero(),
        }
    }

    #[inline]
    pub fn is_female(self) -> bool {
        matches!(self, Gender::Female)
    }
}

/// Polarity of a binarized rating. Unobserved pairs are absent from the
/// graph; there is deliberately no third value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryRating {
    /// Rating of 4 or 5.
    Positive,
    /// Rating of 1, 2 or 3.
    Negative,
}

impl BinaryRating {
    /// Binarize a 1–5 star rating; 4 is inclusive on the positive side.
    #[inline]
    pub fn from_stars(rating: u8) -> Self {
        if rating >= 4 {
            BinaryRating::Positive
        } else {
            BinaryRating::Negative
        }
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        matches!(self, BinaryRating::Positive)
    }
}

/// One parsed rating line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub user: UserId,
    pub item: ItemId,
    /// Star rating in 1..=5.
    pub rating: u8,
    /// Seconds; nonnegative.
    pub timestamp: i64,
}

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    /// Tab-separated ratings, pipe-separated user file with gender in the
    /// third field (ml-100k `u.data` / `u.user`).
    #[serde(rename = "ml-100k", alias = "tab-separated", alias = "tab")]
    Ml100k,
    /// `::`-separated ratings and user files with gender in the second field
    /// (ml-1m `ratings.dat` / `users.dat`).
    #[serde(rename = "ml-1m", alias = "double-colon", alias = "pipe-double-colon")]
    Ml1m,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml-100k" | "tab" | "tab-separated" => Ok(DatasetFormat::Ml100k),
            "ml-1m" | "double-colon" | "pipe-double-colon" => Ok(DatasetFormat::Ml1m),
            other => Err(DatasetError::UnknownFormat(other.to_owned())),
        }
    }
}

impl DatasetFormat {
    fn split_rating_line(self, line: &str) -> Vec<&str> {
        match self {
            DatasetFormat::Ml100k => line.split('\t').collect(),
            DatasetFormat::Ml1m => line.split("::").collect(),
        }
    }

    fn split_label_line(self, line: &str) -> Vec<&str> {
        match self {
            DatasetFormat::Ml100k => line.split('|').collect(),
            DatasetFormat::Ml1m => line.split("::").collect(),
        }
    }

    fn gender_field(self) -> usize {
        match self {
            DatasetFormat::Ml100k => 2,
            DatasetFormat::Ml1m => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line_no}: malformed line {content:?}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line_no: usize,
        content: String,
        reason: String,
    },
    #[error("{path}:{line_no}: duplicate user id {user}")]
    DuplicateUser {
        path: PathBuf,
        line_no: usize,
        user: UserId,
    },
    #[error("duplicate rating for user {user} and item {item}")]
    DuplicateEdge { user: UserId, item: ItemId },
    #[error("unknown dataset format {0:?} (expected ml-100k or ml-1m)")]
    UnknownFormat(String),
    #[error("record list is empty")]
    EmptyRecords,
    #[error("label cutoff {label_cutoff_ts} exceeds rating cutoff {rating_cutoff_ts}")]
    CutoffOrder {
        label_cutoff_ts: i64,
        rating_cutoff_ts: i64,
    },
    #[error("{count} rated user(s) missing from the label file, first few: {sample:?}")]
    MissingLabels { count: usize, sample: Vec<UserId> },
    #[error("test user {0} also carries a training label")]
    SplitOverlap(UserId),
}

/// Load ratings in file order. Order matters downstream: the temporal split
/// is defined over the earliest ratings of the file.
pub fn load_ratings(path: &Path, format: DatasetFormat) -> Result<Vec<RatingRecord>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: path.to_owned(),
            line_no,
            content: line.clone(),
            reason,
        };
        let fields = format.split_rating_line(&line);
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected 4 fields, got {}",
                fields.len()
            )));
        }
        let rating: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("rating {:?} is not an integer", fields[2])))?;
        if !(1..=5).contains(&rating) {
            return Err(malformed(format!("rating {rating} outside 1..=5")));
        }
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("timestamp {:?} is not an integer", fields[3])))?;
        if timestamp < 0 {
            return Err(malformed(format!("timestamp {timestamp} is negative")));
        }
        records.push(RatingRecord {
            user: UserId(fields[0].to_owned()),
            item: ItemId(fields[1].to_owned()),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

/// Load the user gender file. `F` maps to Female and `M` to Male; anything
/// else is an error, as is a repeated user id.
pub fn load_user_labels(
    path: &Path,
    format: DatasetFormat,
) -> Result<BTreeMap<UserId, Gender>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut labels = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: path.to_owned(),
            line_no,
            content: line.clone(),
            reason,
        };
        let fields = format.split_label_line(&line);
        let gender_field = format.gender_field();
        if fields.len() <= gender_field {
            return Err(malformed(format!(
                "expected at least {} fields, got {}",
                gender_field + 1,
                fields.len()
            )));
        }
        let user = UserId(fields[0].to_owned());
        let gender = match fields[gender_field].trim() {
            "F" => Gender::Female,
            "M" => Gender::Male,
            other => return Err(malformed(format!("gender {other:?} not in {{M, F}}"))),
        };
        if labels.insert(user.clone(), gender).is_some() {
            return Err(DatasetError::DuplicateUser {
                path: path.to_owned(),
                line_no,
                user,
            });
        }
    }
    Ok(labels)
}

/// Dense user index within one [`RatingGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserIdx(pub u32);

/// Dense item index within one [`RatingGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemIdx(pub u32);

/// Sparse bipartite graph of binarized ratings with adjacency on both sides.
///
/// Indices are assigned in first-appearance order of the edge list, so a
/// graph built from the same records is always identical.
#[derive(Debug, Clone)]
pub struct RatingGraph {
    user_ids: Vec<UserId>,
    item_ids: Vec<ItemId>,
    user_index: HashMap<UserId, UserIdx>,
    item_index: HashMap<ItemId, ItemIdx>,
    user_edges: Vec<Vec<(ItemIdx, BinaryRating)>>,
    item_edges: Vec<Vec<(UserIdx, BinaryRating)>>,
    n_edges: usize,
}

impl RatingGraph {
    /// Build from (user, item, rating) edges; a repeated (user, item) pair is
    /// an error.
    pub fn from_edges<I>(edges: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = (UserId, ItemId, BinaryRating)>,
    {
        let mut graph = RatingGraph {
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            user_edges: Vec::new(),
            item_edges: Vec::new(),
            n_edges: 0,
        };
        let mut seen: BTreeSet<(UserIdx, ItemIdx)> = BTreeSet::new();
        for (user, item, polarity) in edges {
            let u = graph.intern_user(user);
            let i = graph.intern_item(item);
            if !seen.insert((u, i)) {
                return Err(DatasetError::DuplicateEdge {
                    user: graph.user_ids[u.0 as usize].clone(),
                    item: graph.item_ids[i.0 as usize].clone(),
                });
            }
            graph.user_edges[u.0 as usize].push((i, polarity));
            graph.item_edges[i.0 as usize].push((u, polarity));
            graph.n_edges += 1;
        }
        Ok(graph)
    }

    fn intern_user(&mut self, user: UserId) -> UserIdx {
        if let Some(&idx) = self.user_index.get(&user) {
            return idx;
        }
        let idx = UserIdx(self.user_ids.len() as u32);
        self.user_index.insert(user.clone(), idx);
        self.user_ids.push(user);
        self.user_edges.push(Vec::new());
        idx
    }

    fn intern_item(&mut self, item: ItemId) -> ItemIdx {
        if let Some(&idx) = self.item_index.get(&item) {
            return idx;
        }
        let idx = ItemIdx(self.item_ids.len() as u32);
        self.item_index.insert(item.clone(), idx);
        self.item_ids.push(item);
        self.item_edges.push(Vec::new());
        idx
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn user_idx(&self, user: &UserId) -> Option<UserIdx> {
        self.user_index.get(user).copied()
    }

    pub fn item_idx(&self, item: &ItemId) -> Option<ItemIdx> {
        self.item_index.get(item).copied()
    }

    pub fn user_id(&self, user: UserIdx) -> &UserId {
        &self.user_ids[user.0 as usize]
    }

    pub fn item_id(&self, item: ItemIdx) -> &ItemId {
        &self.item_ids[item.0 as usize]
    }

    /// Edges of one user, in insertion order.
    pub fn user_edges(&self, user: UserIdx) -> &[(ItemIdx, BinaryRating)] {
        &self.user_edges[user.0 as usize]
    }

    /// Edges of one item, in insertion order.
    pub fn item_edges(&self, item: ItemIdx) -> &[(UserIdx, BinaryRating)] {
        &self.item_edges[item.0 as usize]
    }

    pub fn degree(&self, user: UserIdx) -> usize {
        self.user_edges[user.0 as usize].len()
    }

    pub fn users(&self) -> impl Iterator<Item = UserIdx> + '_ {
        (0..self.user_ids.len()).map(|i| UserIdx(i as u32))
    }

    pub fn items(&self) -> impl Iterator<Item = ItemIdx> + '_ {
        (0..self.item_ids.len()).map(|i| ItemIdx(i as u32))
    }
}

/// Gender labels whose reads are counted, so the harness can prove that no
/// training or tuning path touched the test labels.
#[derive(Debug)]
pub struct AuditedLabels {
    map: BTreeMap<UserId, Gender>,
    reads: AtomicU64,
}

impl AuditedLabels {
    pub fn new(map: BTreeMap<UserId, Gender>) -> Self {
        AuditedLabels {
            map,
            reads: AtomicU64::new(0),
        }
    }

    /// Look up a label. Every call is recorded.
    pub fn get(&self, user: &UserId) -> Option<Gender> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.map.get(user).copied()
    }

    /// Number of label reads so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Ids only; not counted as a label access.
    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.map.keys()
    }
}

impl Clone for AuditedLabels {
    fn clone(&self) -> Self {
        AuditedLabels {
            map: self.map.clone(),
            reads: AtomicU64::new(self.reads()),
        }
    }
}

/// Output of the temporal split: evidence graph, training labels, and the
/// held-out test users with their audited labels.
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub train_graph: RatingGraph,
    pub train_labels: BTreeMap<UserId, Gender>,
    pub test_users: BTreeSet<UserId>,
    pub test_labels: AuditedLabels,
}

impl LabeledSplit {
    /// Assemble a split directly (fixtures, generic data). Training labels
    /// may include zero-degree users; test users must not carry a training
    /// label.
    pub fn new(
        train_graph: RatingGraph,
        train_labels: BTreeMap<UserId, Gender>,
        test_users: BTreeSet<UserId>,
        test_labels: BTreeMap<UserId, Gender>,
    ) -> Result<Self, DatasetError> {
        for user in &test_users {
            if train_labels.contains_key(user) {
                return Err(DatasetError::SplitOverlap(user.clone()));
            }
        }
        Ok(LabeledSplit {
            train_graph,
            train_labels,
            test_users,
            test_labels: AuditedLabels::new(test_labels),
        })
    }
}

/// Split records by timestamp: everything at or before `rating_cutoff_ts`
/// becomes evidence, users who rated at or before `label_cutoff_ts` keep
/// their labels for training, and the remaining evidence users form the test
/// set.
pub fn temporal_split(
    records: &[RatingRecord],
    labels: &BTreeMap<UserId, Gender>,
    rating_cutoff_ts: i64,
    label_cutoff_ts: i64,
) -> Result<LabeledSplit, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyRecords);
    }
    if label_cutoff_ts > rating_cutoff_ts {
        return Err(DatasetError::CutoffOrder {
            label_cutoff_ts,
            rating_cutoff_ts,
        });
    }

    let window: Vec<&RatingRecord> = records
        .iter()
        .filter(|r| r.timestamp <= rating_cutoff_ts)
        .collect();

    let mut early_users: BTreeSet<UserId> = BTreeSet::new();
    let mut window_users: BTreeSet<UserId> = BTreeSet::new();
    for record in &window {
        window_users.insert(record.user.clone());
        if record.timestamp <= label_cutoff_ts {
            early_users.insert(record.user.clone());
        }
    }

    let missing: Vec<UserId> = window_users
        .iter()
        .filter(|u| !labels.contains_key(*u))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingLabels {
            count: missing.len(),
            sample: missing.into_iter().take(8).collect(),
        });
    }

    let train_graph = RatingGraph::from_edges(window.iter().map(|r| {
        (
            r.user.clone(),
            r.item.clone(),
            BinaryRating::from_stars(r.rating),
        )
    }))?;

    let train_labels: BTreeMap<UserId, Gender> =
        early_users.iter().map(|u| (u.clone(), labels[u])).collect();
    let test_users: BTreeSet<UserId> = window_users.difference(&early_users).cloned().collect();
    let test_labels: BTreeMap<UserId, Gender> =
        test_users.iter().map(|u| (u.clone(), labels[u])).collect();

    LabeledSplit::new(train_graph, train_labels, test_users, test_labels)
}
