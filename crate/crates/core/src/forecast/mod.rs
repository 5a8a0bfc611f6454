//! Federated usage forecasting with similarity-gated aggregation.
//!
//! Every client trains the broadcast LSTM on its own windows and reports only
//! a [`LocalUpdate`]: the parameter delta, its training-set size, and the mean
//! usage signature of its training window. The server keeps the largest group
//! of clients whose signatures are pairwise similar (cosine ≥ τ) and folds
//! their deltas into the global model weighted by data size. Raw series never
//! cross the [`FederatedClient`] boundary.

pub mod lstm;
mod select;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ClientId;
use crate::trace::{WindowedDataset, FEATURES};

pub use lstm::{batch_loss, loss_and_gradient, lstm_forward, LstmParams, LstmShape, OutputHead};
pub use select::{cosine_similarity, select_similar, Selection};

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_LOCAL_EPOCHS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("empty training split")]
    EmptyTrainingSet,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("zero vector in cosine similarity")]
    ZeroVector,
    #[error("federation needs at least two clients, got {0}")]
    TooFewClients(usize),
    #[error("round {round}, client {client}: {source}")]
    Round {
        round: usize,
        client: ClientId,
        #[source]
        source: Box<ForecastError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `f64::INFINITY` disables it.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            epochs: DEFAULT_LOCAL_EPOCHS,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

/// Per-epoch training loss. `increases` lists epochs whose loss rose more
/// than 1% above the previous epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub increases: Vec<usize>,
}

impl TrainingCurve {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub client_id: ClientId,
    pub delta: Vec<f64>,
    pub data_size: usize,
    pub usage_signature: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

fn train_pairs(data: &WindowedDataset) -> Vec<(&[[f64; FEATURES]], &[f64])> {
    data.train().map(|(w, t)| (w.as_slice(), t.as_slice())).collect()
}

fn test_pairs(data: &WindowedDataset) -> Vec<(&[[f64; FEATURES]], &[f64])> {
    data.test().map(|(w, t)| (w.as_slice(), t.as_slice())).collect()
}

/// Mini-batch Adam on the training split, starting from `init`. The delta is
/// `θ_after − θ_before`.
pub fn train_local(
    data: &WindowedDataset,
    init: &LstmParams,
    config: &TrainConfig,
) -> Result<(LocalUpdate, TrainingCurve), ForecastError> {
    let pairs = train_pairs(data);
    if pairs.is_empty() {
        return Err(ForecastError::EmptyTrainingSet);
    }
    let shape = init.shape();
    if shape.input_size != FEATURES {
        return Err(ForecastError::DimensionMismatch {
            expected: shape.input_size,
            got: FEATURES,
        });
    }
    if shape.output_size != data.spec.output_len() {
        return Err(ForecastError::DimensionMismatch {
            expected: shape.output_size,
            got: data.spec.output_len(),
        });
    }
    let mut params = init.clone();
    let mut adam = Adam::new(shape.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (data.client_id.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = TrainingCurve {
        initial_loss: batch_loss(&params, &pairs),
        ..Default::default()
    };
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| pairs[i]).collect();
            let (_, mut grad) = loss_and_gradient(&params, &batch);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(ForecastError::DivergedTraining { epoch, loss: f64::NAN });
            }
            if norm > config.clip_norm {
                let k = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(params.as_flat_mut(), &grad, config);
        }
        let loss = batch_loss(&params, &pairs);
        if !loss.is_finite() || !params.is_finite() {
            return Err(ForecastError::DivergedTraining { epoch, loss });
        }
        let prev = curve.epoch_losses.last().copied().unwrap_or(curve.initial_loss);
        if loss > prev * 1.01 {
            curve.increases.push(epoch);
        }
        curve.epoch_losses.push(loss);
    }
    let delta = params
        .as_flat()
        .iter()
        .zip(init.as_flat())
        .map(|(a, b)| a - b)
        .collect();
    Ok((
        LocalUpdate {
            client_id: data.client_id,
            delta,
            data_size: pairs.len(),
            usage_signature: data.train_signature(),
        },
        curve,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub theta: LstmParams,
    pub round: usize,
    pub selected_clients: Vec<ClientId>,
}

impl GlobalModel {
    pub fn new(theta: LstmParams) -> Self {
        Self {
            theta,
            round: 0,
            selected_clients: Vec::new(),
        }
    }
}

/// How selected deltas are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// `|D_k| / Σ_selected |D_j|`; weights sum to one.
    Normalized,
    /// `|D_k| / |D|` with `|D|` the data size over all clients, selected or
    /// not; weights sum to at most one.
    Literal { total_data_size: usize },
}

pub fn aggregation_weights(selected: &[LocalUpdate], weighting: Weighting) -> Vec<f64> {
    let denom = match weighting {
        Weighting::Normalized => selected.iter().map(|u| u.data_size).sum::<usize>(),
        Weighting::Literal { total_data_size } => total_data_size,
    } as f64;
    if denom <= 0.0 {
        return vec![0.0; selected.len()];
    }
    selected.iter().map(|u| u.data_size as f64 / denom).collect()
}

/// `θ ← θ + Σ w_k Δθ_k`; increments the round and records the selection.
pub fn aggregate(global: &GlobalModel, selected: &[LocalUpdate], weighting: Weighting) -> Result<GlobalModel, ForecastError> {
    let n = global.theta.shape().param_count();
    for u in selected {
        if u.delta.len() != n {
            return Err(ForecastError::DimensionMismatch {
                expected: n,
                got: u.delta.len(),
            });
        }
    }
    let weights = aggregation_weights(selected, weighting);
    let mut theta = global.theta.clone();
    for (u, w) in selected.iter().zip(&weights) {
        for (t, d) in theta.as_flat_mut().iter_mut().zip(&u.delta) {
            *t += w * d;
        }
    }
    let mut ids: Vec<ClientId> = selected.iter().map(|u| u.client_id).collect();
    ids.sort_unstable();
    Ok(GlobalModel {
        theta,
        round: global.round + 1,
        selected_clients: ids,
    })
}

/// Forecast error over `m` scalar (actual, predicted) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub mean_abs_error: f64,
    pub mse: f64,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub accuracy_pct: f64,
}

impl ForecastReport {
    /// Accuracy is `100 · (1 − MAE / range)` clamped to [0, 100], where range
    /// is the spread of the actuals (1.0 when the actuals are constant).
    pub fn from_pairs(actual: Vec<f64>, predicted: Vec<f64>) -> Result<Self, ForecastError> {
        if actual.is_empty() {
            return Err(ForecastError::EmptyTestSet);
        }
        if actual.len() != predicted.len() {
            return Err(ForecastError::DimensionMismatch {
                expected: actual.len(),
                got: predicted.len(),
            });
        }
        let m = actual.len() as f64;
        let mae = actual.iter().zip(&predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / m;
        let mse = actual.iter().zip(&predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / m;
        let (lo, hi) = actual
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let range = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
        let accuracy_pct = (100.0 * (1.0 - mae / range)).clamp(0.0, 100.0);
        Ok(Self {
            mean_abs_error: mae,
            mse,
            actual,
            predicted,
            accuracy_pct,
        })
    }

    /// `|mean(predicted) − mean(actual)|`.
    pub fn calibration(&self) -> f64 {
        let m = self.actual.len().max(1) as f64;
        (self.predicted.iter().sum::<f64>() / m - self.actual.iter().sum::<f64>() / m).abs()
    }

    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a ForecastReport>) -> Result<Self, ForecastError> {
        let (mut a, mut p) = (Vec::new(), Vec::new());
        for r in reports {
            a.extend_from_slice(&r.actual);
            p.extend_from_slice(&r.predicted);
        }
        Self::from_pairs(a, p)
    }
}

pub fn evaluate_params(theta: &LstmParams, test: &WindowedDataset) -> Result<ForecastReport, ForecastError> {
    let pairs = test_pairs(test);
    if pairs.is_empty() {
        return Err(ForecastError::EmptyTestSet);
    }
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    for (window, target) in pairs {
        let y = lstm_forward(theta, window)?;
        if y.len() != target.len() {
            return Err(ForecastError::DimensionMismatch {
                expected: target.len(),
                got: y.len(),
            });
        }
        actual.extend_from_slice(target);
        predicted.extend(y);
    }
    ForecastReport::from_pairs(actual, predicted)
}

/// Evaluates the global model on the test split of `test`.
pub fn evaluate(global: &GlobalModel, test: &WindowedDataset) -> Result<ForecastReport, ForecastError> {
    evaluate_params(&global.theta, test)
}

/// What a federation participant exposes to the server.
pub trait FederatedClient: Sync {
    fn client_id(&self) -> ClientId;
    fn local_update(&self, broadcast: &LstmParams, round: usize) -> Result<(LocalUpdate, TrainingCurve), ForecastError>;
    /// Client-side evaluation of a model on the client's private test split.
    fn evaluate(&self, theta: &LstmParams) -> Result<ForecastReport, ForecastError>;
}

/// A client holding its own windowed data.
#[derive(Debug, Clone)]
pub struct LocalSite {
    data: WindowedDataset,
    train: TrainConfig,
}

impl LocalSite {
    pub fn new(data: WindowedDataset, train: TrainConfig) -> Self {
        Self { data, train }
    }

    pub fn train_len(&self) -> usize {
        self.data.train_len()
    }
}

impl FederatedClient for LocalSite {
    fn client_id(&self) -> ClientId {
        self.data.client_id
    }

    fn local_update(&self, broadcast: &LstmParams, round: usize) -> Result<(LocalUpdate, TrainingCurve), ForecastError> {
        let cfg = TrainConfig {
            seed: self.train.seed.wrapping_add((round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)),
            ..self.train
        };
        train_local(&self.data, broadcast, &cfg)
    }

    fn evaluate(&self, theta: &LstmParams) -> Result<ForecastReport, ForecastError> {
        evaluate_params(theta, &self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    /// Similarity threshold; `-1` admits every client (plain federated
    /// averaging).
    pub tau: f64,
    pub normalized_weights: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            tau: DEFAULT_TAU,
            normalized_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub client_count: usize,
    pub selected: Vec<ClientId>,
    pub fallback: bool,
    /// Pooled over every client's test split.
    pub pooled: ForecastReport,
    pub per_client: Vec<(ClientId, ForecastReport)>,
    /// Mean local training loss per epoch across clients.
    pub mean_epoch_loss: Vec<f64>,
    pub calibration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationOutcome {
    pub global: GlobalModel,
    pub rounds: Vec<RoundReport>,
    pub calibration: Vec<f64>,
    /// Locally trained parameters of clients left out of the last round's
    /// similar group.
    pub local_models: BTreeMap<ClientId, LstmParams>,
}

impl FederationOutcome {
    /// The model a client forecasts with.
    pub fn model_for(&self, client: ClientId) -> &LstmParams {
        self.local_models.get(&client).unwrap_or(&self.global.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub global: GlobalModel,
    pub report: RoundReport,
    pub local_models: BTreeMap<ClientId, LstmParams>,
}

/// One broadcast → local train → select → aggregate round.
///
/// Clients outside the similar group keep `broadcast + own delta` as their
/// model; they are evaluated with it.
pub fn federation_round<C: FederatedClient>(
    clients: &[C],
    global: &GlobalModel,
    config: &FederationConfig,
) -> Result<RoundOutcome, ForecastError> {
    let round = global.round;
    let results: Vec<Result<(LocalUpdate, TrainingCurve), ForecastError>> =
        clients.par_iter().map(|c| c.local_update(&global.theta, round)).collect();
    let mut updates = Vec::with_capacity(clients.len());
    let mut curves = Vec::with_capacity(clients.len());
    for (c, r) in clients.iter().zip(results) {
        let (u, curve) = r.map_err(|e| ForecastError::Round {
            round,
            client: c.client_id(),
            source: Box::new(e),
        })?;
        updates.push(u);
        curves.push(curve);
    }
    let selection = select_similar(&updates, config.tau);
    let (chosen, rest): (Vec<LocalUpdate>, Vec<LocalUpdate>) =
        updates.iter().cloned().partition(|u| selection.clients.contains(&u.client_id));
    let weighting = if config.normalized_weights {
        Weighting::Normalized
    } else {
        Weighting::Literal {
            total_data_size: updates.iter().map(|u| u.data_size).sum(),
        }
    };
    let next = aggregate(global, &chosen, weighting)?;
    let mut local_models = BTreeMap::new();
    for u in rest {
        let mut theta = global.theta.clone();
        for (t, d) in theta.as_flat_mut().iter_mut().zip(&u.delta) {
            *t += d;
        }
        local_models.insert(u.client_id, theta);
    }

    let evals: Vec<Result<ForecastReport, ForecastError>> = clients
        .par_iter()
        .map(|c| c.evaluate(local_models.get(&c.client_id()).unwrap_or(&next.theta)))
        .collect();
    let mut per_client = Vec::with_capacity(clients.len());
    for (c, r) in clients.iter().zip(evals) {
        let report = r.map_err(|e| ForecastError::Round {
            round,
            client: c.client_id(),
            source: Box::new(e),
        })?;
        per_client.push((c.client_id(), report));
    }
    let pooled = ForecastReport::pooled(per_client.iter().map(|(_, r)| r))?;
    let epochs = curves.iter().map(|c| c.epoch_losses.len()).max().unwrap_or(0);
    let mean_epoch_loss = (0..epochs)
        .map(|e| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c.epoch_losses.get(e).copied()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();
    let calibration = pooled.calibration();
    let report = RoundReport {
        round: next.round,
        client_count: clients.len(),
        selected: selection.clients,
        fallback: selection.fallback,
        pooled,
        per_client,
        mean_epoch_loss,
        calibration,
    };
    Ok(RoundOutcome {
        global: next,
        report,
        local_models,
    })
}

/// Runs `config.rounds` federation rounds starting from `global`.
pub fn continue_federation<C: FederatedClient>(
    clients: &[C],
    global: GlobalModel,
    config: &FederationConfig,
) -> Result<FederationOutcome, ForecastError> {
    if clients.len() < 2 {
        return Err(ForecastError::TooFewClients(clients.len()));
    }
    let mut global = global;
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut local_models = BTreeMap::new();
    for _ in 0..config.rounds {
        let out = federation_round(clients, &global, config)?;
        global = out.global;
        local_models = out.local_models;
        rounds.push(out.report);
    }
    let calibration = rounds.iter().map(|r| r.calibration).collect();
    Ok(FederationOutcome {
        global,
        rounds,
        calibration,
        local_models,
    })
}

/// Runs `config.rounds` federation rounds from `init`.
pub fn run_federation<C: FederatedClient>(
    clients: &[C],
    init: LstmParams,
    config: &FederationConfig,
) -> Result<FederationOutcome, ForecastError> {
    continue_federation(clients, GlobalModel::new(init), config)
}

pub const CHECKPOINT_FORMAT: &str = "twinsched-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    round: usize,
    shape: LstmShape,
    w_gates: Vec<f64>,
    b_gates: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

/// JSON checkpoint with a shape header.
pub fn checkpoint_to_json(model: &GlobalModel) -> String {
    let t = &model.theta;
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        round: model.round,
        shape: t.shape(),
        w_gates: t.w_gates().to_vec(),
        b_gates: t.b_gates().to_vec(),
        w_out: t.w_out().to_vec(),
        b_out: t.b_out().to_vec(),
    };
    serde_json::to_string(&ck).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<GlobalModel, ForecastError> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ForecastError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(ForecastError::Checkpoint(format!("unsupported {} v{}", ck.format, ck.version)));
    }
    let mut flat = ck.w_gates;
    flat.extend(ck.b_gates);
    flat.extend(ck.w_out);
    flat.extend(ck.b_out);
    let theta = LstmParams::from_flat(ck.shape, flat)?;
    Ok(GlobalModel {
        theta,
        round: ck.round,
        selected_clients: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{window_rows, WindowSpec};

    fn dataset(client: u32, rows: Vec<[f64; FEATURES]>, w: usize) -> WindowedDataset {
        window_rows(ClientId(client), &rows, &WindowSpec::new(w, 1)).unwrap()
    }

    fn update(client: u32, delta: Vec<f64>, size: usize) -> LocalUpdate {
        LocalUpdate {
            client_id: ClientId(client),
            delta,
            data_size: size,
            usage_signature: vec![1.0],
        }
    }

    fn scalar_model(v: f64) -> GlobalModel {
        // Output bias is the last parameter of a 1-output model; use a model
        // whose flat vector has a single entry by treating theta generically.
        let shape = LstmShape::new(1, 0, 1);
        GlobalModel::new(LstmParams::from_flat(shape, vec![v]).unwrap())
    }

    #[test]
    fn equal_weight_mean() {
        let g = scalar_model(0.0);
        let next = aggregate(&g, &[update(0, vec![2.0], 5), update(1, vec![4.0], 5)], Weighting::Normalized).unwrap();
        assert_eq!(next.theta.as_flat(), &[3.0]);
        assert_eq!(next.round, 1);
        assert_eq!(next.selected_clients, vec![ClientId(0), ClientId(1)]);
    }

    #[test]
    fn literal_weight_uses_total_size() {
        let g = scalar_model(0.5);
        let next = aggregate(&g, &[update(2, vec![4.0], 1)], Weighting::Literal { total_data_size: 4 }).unwrap();
        assert_eq!(next.theta.as_flat(), &[1.5]);
    }

    #[test]
    fn aggregate_rejects_bad_delta() {
        let g = scalar_model(0.0);
        assert!(matches!(
            aggregate(&g, &[update(0, vec![1.0, 2.0], 1)], Weighting::Normalized),
            Err(ForecastError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let ups = vec![update(0, vec![0.0], 3), update(1, vec![0.0], 7), update(2, vec![0.0], 11)];
        let w = aggregation_weights(&ups, Weighting::Normalized);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let lit = aggregation_weights(&ups[..1], Weighting::Literal { total_data_size: 21 });
        assert!(lit[0] < 1.0);
    }

    #[test]
    fn report_metrics() {
        let r = ForecastReport::from_pairs(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mean_abs_error, r.mse, r.accuracy_pct), (0.0, 0.0, 100.0));
        let r = ForecastReport::from_pairs(vec![0.0, 0.0], vec![1.0, -1.0]).unwrap();
        assert_eq!((r.mean_abs_error, r.mse), (1.0, 1.0));
        let r = ForecastReport::from_pairs(vec![2.0, 4.0], vec![1.0, 6.0]).unwrap();
        assert_eq!((r.mean_abs_error, r.mse), (1.5, 2.5));
        assert_eq!(r.accuracy_pct, 25.0);
        assert_eq!(r.calibration(), 0.5);
        assert_eq!(ForecastReport::from_pairs(vec![], vec![]), Err(ForecastError::EmptyTestSet));
    }

    #[test]
    fn zero_epochs_zero_delta() {
        let rows: Vec<[f64; 3]> = (0..30).map(|i| [0.3 + 0.01 * (i % 5) as f64, 0.4, 0.1]).collect();
        let ds = dataset(0, rows, 4);
        let init = LstmParams::init(LstmShape::new(3, 4, 1), 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (u, curve) = train_local(&ds, &init, &cfg).unwrap();
        assert!(u.delta.iter().all(|d| *d == 0.0));
        assert!(curve.epoch_losses.is_empty());
        assert_eq!(u.data_size, ds.train_len());
    }

    #[test]
    fn empty_training_split_rejected() {
        let rows: Vec<[f64; 3]> = (0..5).map(|_| [0.3, 0.4, 0.1]).collect();
        let ds = dataset(0, rows, 4);
        assert_eq!(ds.train_len(), 0);
        let init = LstmParams::init(LstmShape::new(3, 4, 1), 1);
        assert_eq!(
            train_local(&ds, &init, &TrainConfig::default()).unwrap_err(),
            ForecastError::EmptyTrainingSet
        );
    }

    #[test]
    fn training_reduces_loss() {
        let rows: Vec<[f64; 3]> = (0..80)
            .map(|i| {
                let x = 0.5 + 0.3 * (i as f64 * 0.4).sin();
                [x, 0.4, 0.1]
            })
            .collect();
        let ds = dataset(0, rows, 6);
        let init = LstmParams::init(LstmShape::new(3, 6, 1), 4);
        let (_, curve) = train_local(&ds, &init, &TrainConfig::default()).unwrap();
        assert!(curve.final_loss() < curve.initial_loss * 0.5, "{curve:?}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut g = GlobalModel::new(LstmParams::init(LstmShape::new(3, 5, 2), 11));
        g.round = 7;
        let text = checkpoint_to_json(&g);
        let back = checkpoint_from_json(&text).unwrap();
        assert_eq!(back.theta, g.theta);
        assert_eq!(back.round, 7);
        assert_eq!(checkpoint_to_json(&back), text);
        assert!(checkpoint_from_json("{\"format\":\"x\"}").is_err());
    }

    #[test]
    fn federation_needs_two_clients() {
        let rows: Vec<[f64; 3]> = (0..30).map(|_| [0.3, 0.4, 0.1]).collect();
        let site = LocalSite::new(dataset(0, rows, 4), TrainConfig::default());
        let init = LstmParams::init(LstmShape::new(3, 4, 1), 1);
        assert_eq!(
            run_federation(&[site], init, &FederationConfig::default()).unwrap_err(),
            ForecastError::TooFewClients(1)
        );
    }
}
