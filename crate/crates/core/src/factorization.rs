//! Logistic matrix factorization of the binarized rating matrix, and the
//! stacked logistic regression that predicts gender from a user's learned
//! bias and latent features.
//!
//! The factorization sees only edges, never gender labels; gender enters
//! optionally through the seeded initialization (training users only) and
//! through the stacked head. Test users appear in the factorization because
//! their ratings are evidence, not targets.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Gender, ItemIdx, RatingGraph, UserId, UserIdx};
use crate::metrics::Prediction;
use crate::model::{GenderPredictor, PredictError};
use crate::optim::{
    derive_seed, sgd_minimize, GradAccum, Objective, OptimError, SgdConfig, TermMode,
};
use crate::scalar::{ln2, s, sigmoid, Scalar};

const MF_INIT_TAG: u64 = 0x6d665f69;
const MF_HOLDOUT_TAG: u64 = 0x6d665f68;

#[derive(Debug, Error)]
pub enum MfError {
    #[error("no training labels")]
    EmptyLabels,
    #[error("labeled user {0} has no ratings in the factorized graph")]
    LabeledUserMissing(UserId),
    #[error("l2 grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// One observed binarized rating: (user, item, is positive).
pub type MfEdge = (UserIdx, ItemIdx, bool);

/// Trained factorization: global bias, per-user and per-item biases, and
/// latent factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel<S: Scalar> {
    pub mu: S,
    pub b_user: Vec<S>,
    pub b_item: Vec<S>,
    /// User factors, row-major `n_users x n_factors`.
    pub p: Vec<S>,
    /// Item factors, row-major `n_items x n_factors`.
    pub q: Vec<S>,
    pub n_factors: usize,
}

impl<S: Scalar> MfModel<S> {
    pub fn user_bias(&self, user: UserIdx) -> S {
        self.b_user
            .get(user.0 as usize)
            .copied()
            .unwrap_or_else(S::zero)
    }

    pub fn item_bias(&self, item: ItemIdx) -> S {
        self.b_item
            .get(item.0 as usize)
            .copied()
            .unwrap_or_else(S::zero)
    }

    pub fn user_factors(&self, user: UserIdx) -> &[S] {
        let start = user.0 as usize * self.n_factors;
        self.p.get(start..start + self.n_factors).unwrap_or(&[])
    }

    pub fn item_factors(&self, item: ItemIdx) -> &[S] {
        let start = item.0 as usize * self.n_factors;
        self.q.get(start..start + self.n_factors).unwrap_or(&[])
    }

    pub fn n_users(&self) -> usize {
        self.b_user.len()
    }
}

/// Probability that the (user, item) rating is positive. Components missing
/// from the model contribute zero.
pub fn predict_edge<S: Scalar>(model: &MfModel<S>, user: UserIdx, item: ItemIdx) -> S {
    let mut z = model.mu + model.user_bias(user) + model.item_bias(item);
    let pu = model.user_factors(user);
    let qi = model.item_factors(item);
    for (a, b) in pu.iter().zip(qi.iter()) {
        z += *a * *b;
    }
    sigmoid(z)
}

/// Mean base-2 edge log loss of a model over the given edges.
pub fn edge_log_loss<S: Scalar>(model: &MfModel<S>, edges: &[MfEdge]) -> S {
    let mut total = S::zero();
    for &(u, i, positive) in edges {
        let p = predict_edge(model, u, i);
        total += if positive {
            -p.max(s(1e-12)).log2()
        } else {
            -(S::one() - p).max(s(1e-12)).log2()
        };
    }
    total / s(edges.len().max(1) as f64)
}

/// Initialization mode for the latent features.
#[derive(Debug, Clone, Copy)]
pub enum MfInit<'a> {
    /// Everything uniform in (-0.1, 0.1).
    Random,
    /// Feature 0 of P set to +2 (Female) or -2 (Male) for labeled training
    /// users; everything else uniform in (-0.1, 0.1).
    GenderSeeded(&'a BTreeMap<UserId, Gender>),
}

// Flat parameter layout: [mu | b_user | b_item | P | Q].
struct MfLayout {
    n_users: usize,
    n_items: usize,
    n_factors: usize,
}

impl MfLayout {
    fn dimension(&self) -> usize {
        1 + self.n_users + self.n_items + self.n_factors * (self.n_users + self.n_items)
    }
    #[inline]
    fn b_user(&self, u: usize) -> usize {
        1 + u
    }
    #[inline]
    fn b_item(&self, i: usize) -> usize {
        1 + self.n_users + i
    }
    #[inline]
    fn p(&self, u: usize, f: usize) -> usize {
        1 + self.n_users + self.n_items + u * self.n_factors + f
    }
    #[inline]
    fn q(&self, i: usize, f: usize) -> usize {
        1 + self.n_users + self.n_items + (self.n_users + i) * self.n_factors + f
    }
}

/// L2-regularized base-2 log loss of edge polarity predictions; one term per
/// observed edge, regularizing the parameters that edge touches.
pub struct MfObjective {
    edges: Vec<MfEdge>,
    layout: MfLayout,
    l2: f64,
}

impl MfObjective {
    pub fn new(graph: &RatingGraph, n_factors: usize, l2: f64) -> Self {
        Self::with_edges(graph, all_edges(graph), n_factors, l2)
    }

    pub fn with_edges(graph: &RatingGraph, edges: Vec<MfEdge>, n_factors: usize, l2: f64) -> Self {
        MfObjective {
            edges,
            layout: MfLayout {
                n_users: graph.n_users(),
                n_items: graph.n_items(),
                n_factors,
            },
            l2,
        }
    }
}

/// Every edge of the graph in canonical (user-major) order.
pub fn all_edges(graph: &RatingGraph) -> Vec<MfEdge> {
    let mut edges = Vec::with_capacity(graph.n_edges());
    for u in graph.users() {
        for &(i, polarity) in graph.user_edges(u) {
            edges.push((u, i, polarity.is_positive()));
        }
    }
    edges
}

impl<S: Scalar> Objective<S> for MfObjective {
    fn dimension(&self) -> usize {
        self.layout.dimension()
    }

    fn num_terms(&self) -> usize {
        self.edges.len()
    }

    fn description(&self) -> String {
        format!("logistic MF edge loss, {} factors", self.layout.n_factors)
    }

    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        _mode: TermMode,
        mut grad: Option<&mut GradAccum<S>>,
    ) -> S {
        let lay = &self.layout;
        let inv = S::one() / s::<S>(terms.len() as f64);
        let lam = s::<S>(self.l2);
        let two = s::<S>(2.0);
        let mut total = S::zero();
        for &t in terms {
            let (user, item, positive) = self.edges[t];
            let (u, i) = (user.0 as usize, item.0 as usize);
            let bu = params[lay.b_user(u)];
            let bi = params[lay.b_item(i)];
            let mut z = params[0] + bu + bi;
            let mut reg = bu * bu + bi * bi;
            for f in 0..lay.n_factors {
                let pf = params[lay.p(u, f)];
                let qf = params[lay.q(i, f)];
                z += pf * qf;
                reg += pf * pf + qf * qf;
            }
            let data_loss = if positive { softplus(-z) } else { softplus(z) } / ln2::<S>();
            total += data_loss + lam * reg;
            if let Some(g) = grad.as_deref_mut() {
                let y = if positive { S::one() } else { S::zero() };
                let err = (sigmoid(z) - y) / ln2::<S>() * inv;
                g.add(0, err);
                g.add(lay.b_user(u), err + two * lam * bu * inv);
                g.add(lay.b_item(i), err + two * lam * bi * inv);
                for f in 0..lay.n_factors {
                    let pf = params[lay.p(u, f)];
                    let qf = params[lay.q(i, f)];
                    g.add(lay.p(u, f), err * qf + two * lam * pf * inv);
                    g.add(lay.q(i, f), err * pf + two * lam * qf * inv);
                }
            }
        }
        total * inv
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Initial flat parameter vector for the given graph and init mode.
fn init_mf_params<S: Scalar>(
    graph: &RatingGraph,
    n_factors: usize,
    seed: u64,
    init: MfInit<'_>,
) -> Vec<S> {
    let layout = MfLayout {
        n_users: graph.n_users(),
        n_items: graph.n_items(),
        n_factors,
    };
    let mut params = vec![S::zero(); layout.dimension()];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[MF_INIT_TAG]));
    for u in 0..layout.n_users {
        for f in 0..n_factors {
            params[layout.p(u, f)] = s(rng.random_range(-0.1..0.1));
        }
    }
    for i in 0..layout.n_items {
        for f in 0..n_factors {
            params[layout.q(i, f)] = s(rng.random_range(-0.1..0.1));
        }
    }
    if let MfInit::GenderSeeded(labels) = init {
        if n_factors > 0 {
            for (user, gender) in labels {
                if let Some(idx) = graph.user_idx(user) {
                    params[layout.p(idx.0 as usize, 0)] = match gender {
                        Gender::Female => s(2.0),
                        Gender::Male => s(-2.0),
                    };
                }
            }
        }
    }
    params
}

fn model_from_params<S: Scalar>(params: &[S], layout: &MfLayout) -> MfModel<S> {
    let p_start = 1 + layout.n_users + layout.n_items;
    let q_start = p_start + layout.n_users * layout.n_factors;
    MfModel {
        mu: params[0],
        b_user: params[1..1 + layout.n_users].to_vec(),
        b_item: params[1 + layout.n_users..p_start].to_vec(),
        p: params[p_start..q_start].to_vec(),
        q: params[q_start..].to_vec(),
        n_factors: layout.n_factors,
    }
}

/// Factorize the binarized rating matrix by SGD on the edge log loss. Only
/// ratings are read; labels appear solely through a gender-seeded init.
pub fn train_logistic_mf<S: Scalar>(
    graph: &RatingGraph,
    n_factors: usize,
    cfg: &SgdConfig,
    init: MfInit<'_>,
) -> Result<MfModel<S>, MfError> {
    let objective = MfObjective::new(graph, n_factors, cfg.l2_penalty);
    let init_params = init_mf_params::<S>(graph, n_factors, cfg.seed, init);
    let run = sgd_minimize(&objective, &init_params, cfg)?;
    Ok(model_from_params(&run.params, &objective.layout))
}

/// Pick the edge-level L2 penalty on a deterministic 80/20 edge holdout,
/// then refit on every edge with the winner. Returns the model, the chosen
/// penalty, and the holdout edge log loss per grid point.
pub fn train_logistic_mf_l2_grid<S: Scalar>(
    graph: &RatingGraph,
    n_factors: usize,
    cfg: &SgdConfig,
    init: MfInit<'_>,
    l2_grid: &[f64],
) -> Result<(MfModel<S>, f64, Vec<f64>), MfError> {
    if l2_grid.is_empty() {
        return Err(MfError::EmptyGrid);
    }
    let edges = all_edges(graph);
    let mut order: Vec<usize> = (0..edges.len()).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[MF_HOLDOUT_TAG]));
    order.shuffle(&mut rng);
    let n_val = (edges.len() / 5).max(1);
    let val_edges: Vec<MfEdge> = order[..n_val].iter().map(|&i| edges[i]).collect();
    let fit_edges: Vec<MfEdge> = order[n_val..].iter().map(|&i| edges[i]).collect();

    let mut scores = Vec::with_capacity(l2_grid.len());
    for &l2 in l2_grid {
        let objective = MfObjective::with_edges(graph, fit_edges.clone(), n_factors, l2);
        let init_params = init_mf_params::<S>(graph, n_factors, cfg.seed, init);
        let probe_cfg = SgdConfig {
            l2_penalty: l2,
            ..*cfg
        };
        let run = sgd_minimize(&objective, &init_params, &probe_cfg)?;
        let model = model_from_params::<S>(&run.params, &objective.layout);
        scores.push(
            edge_log_loss(&model, &val_edges)
                .to_f64()
                .unwrap_or(f64::INFINITY),
        );
    }
    let mut best = 0;
    for (i, &score) in scores.iter().enumerate() {
        if score < scores[best] {
            best = i;
        }
    }
    let chosen = l2_grid[best];
    let final_cfg = SgdConfig {
        l2_penalty: chosen,
        ..*cfg
    };
    let model = train_logistic_mf(graph, n_factors, &final_cfg, init)?;
    Ok((model, chosen, scores))
}

/// Logistic regression over a user's MF bias and latent features.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedGenderModel<S: Scalar> {
    pub bias: S,
    pub w_bias: S,
    pub w_factors: Vec<S>,
}

/// L2-regularized base-2 log loss of the stacked head over labeled users;
/// the intercept is not regularized.
pub struct StackedObjective<S: Scalar> {
    /// (b_u, P_u, is_female) per labeled user.
    features: Vec<(S, Vec<S>, bool)>,
    n_factors: usize,
    l2: f64,
}

impl<S: Scalar> StackedObjective<S> {
    pub fn new(
        mf: &MfModel<S>,
        graph: &RatingGraph,
        labels: &BTreeMap<UserId, Gender>,
        l2: f64,
    ) -> Result<Self, MfError> {
        let mut features = Vec::with_capacity(labels.len());
        for (user, gender) in labels {
            let idx = graph
                .user_idx(user)
                .filter(|idx| (idx.0 as usize) < mf.n_users())
                .ok_or_else(|| MfError::LabeledUserMissing(user.clone()))?;
            features.push((
                mf.user_bias(idx),
                mf.user_factors(idx).to_vec(),
                gender.is_female(),
            ));
        }
        Ok(StackedObjective {
            features,
            n_factors: mf.n_factors,
            l2,
        })
    }
}

impl<S: Scalar> Objective<S> for StackedObjective<S> {
    fn dimension(&self) -> usize {
        2 + self.n_factors
    }

    fn num_terms(&self) -> usize {
        self.features.len()
    }

    fn description(&self) -> String {
        "stacked gender log loss".to_owned()
    }

    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        _mode: TermMode,
        mut grad: Option<&mut GradAccum<S>>,
    ) -> S {
        let inv = S::one() / s::<S>(terms.len() as f64);
        let lam = s::<S>(self.l2);
        let two = s::<S>(2.0);
        let mut total = S::zero();
        for &t in terms {
            let (b_u, p_u, female) = &self.features[t];
            let mut z = params[0] + params[1] * *b_u;
            for (f, pf) in p_u.iter().enumerate() {
                z += params[2 + f] * *pf;
            }
            let data_loss = if *female { softplus(-z) } else { softplus(z) } / ln2::<S>();
            let mut reg = params[1] * params[1];
            for f in 0..self.n_factors {
                reg += params[2 + f] * params[2 + f];
            }
            total += data_loss + lam * reg;
            if let Some(g) = grad.as_deref_mut() {
                let y = if *female { S::one() } else { S::zero() };
                let err = (sigmoid(z) - y) / ln2::<S>() * inv;
                g.add(0, err);
                g.add(1, err * *b_u + two * lam * params[1] * inv);
                for (f, pf) in p_u.iter().enumerate() {
                    g.add(2 + f, err * *pf + two * lam * params[2 + f] * inv);
                }
            }
        }
        total * inv
    }
}

/// Fit the stacked gender head on the labeled users' MF features.
pub fn train_stacked_gender<S: Scalar>(
    mf: &MfModel<S>,
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
) -> Result<StackedGenderModel<S>, MfError> {
    train_stacked_impl(mf, graph, labels, cfg, None)
}

/// As [`train_stacked_gender`], but an external monitor picks the best
/// iterate.
pub fn train_stacked_gender_monitored<S: Scalar>(
    mf: &MfModel<S>,
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: &dyn Fn(&StackedGenderModel<S>) -> S,
) -> Result<StackedGenderModel<S>, MfError> {
    train_stacked_impl(mf, graph, labels, cfg, Some(monitor))
}

fn train_stacked_impl<S: Scalar>(
    mf: &MfModel<S>,
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: Option<crate::optim::Monitor<'_, StackedGenderModel<S>, S>>,
) -> Result<StackedGenderModel<S>, MfError> {
    if labels.is_empty() {
        return Err(MfError::EmptyLabels);
    }
    let objective = StackedObjective::new(mf, graph, labels, cfg.l2_penalty)?;
    let init = vec![S::zero(); 2 + mf.n_factors];
    let run = match monitor {
        None => sgd_minimize(&objective, &init, cfg)?,
        Some(monitor) => {
            let adapter = |params: &[S]| {
                monitor(&StackedGenderModel {
                    bias: params[0],
                    w_bias: params[1],
                    w_factors: params[2..].to_vec(),
                })
            };
            crate::optim::sgd_minimize_monitored(&objective, &init, cfg, &adapter)?
        }
    };
    Ok(StackedGenderModel {
        bias: run.params[0],
        w_bias: run.params[1],
        w_factors: run.params[2..].to_vec(),
    })
}

/// Gender probability of a user already present in the factorization.
pub fn predict_gender_mf<S: Scalar>(
    stacked: &StackedGenderModel<S>,
    mf: &MfModel<S>,
    user: UserIdx,
) -> Prediction<S> {
    let mut z = stacked.bias + stacked.w_bias * mf.user_bias(user);
    for (wf, pf) in stacked.w_factors.iter().zip(mf.user_factors(user)) {
        z += *wf * *pf;
    }
    Prediction::clipped(sigmoid(z))
}

/// Factorization plus stacked head, bound together for the harness.
pub struct MfStackedPredictor<S: Scalar> {
    pub mf: MfModel<S>,
    pub stacked: StackedGenderModel<S>,
}

impl<S: Scalar> GenderPredictor<S> for MfStackedPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        let idx = graph
            .user_idx(user)
            .filter(|idx| (idx.0 as usize) < self.mf.n_users())
            .ok_or_else(|| PredictError::UserNotInModel(user.clone()))?;
        Ok(predict_gender_mf(&self.stacked, &self.mf, idx))
    }
}
