//! ERM, adversarial debiasing, and fair mixup trainers.
//!
//! Trainers never see the true sensitive column: the training-set type
//! carries features and targets only, and any group signal (true or proxy)
//! arrives as a separate label vector. Parameter initialization, batch
//! order, mixup interpolation and adversary initialization each draw from
//! independent seeded streams, so disabling one term leaves the rest of the
//! trajectory untouched.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::metrics::GroupProvenance;
use crate::nncore::{bce_grad, derive_seed, Adam, AdamConfig, ParamSet, TrainConfig};

/// Features and targets only; the sensitive column is absent by type.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
}

impl TrainSet {
    pub fn new(x: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape(
                "train_set",
                format!("{} rows", x.nrows()),
                format!("{} labels", y.len()),
            ));
        }
        Ok(TrainSet { x, y })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Erm,
    AdvDeb,
    FairMixup,
}

/// Which fairness notion fair mixup regularizes toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricVariant {
    Dp,
    Eo,
}

/// How batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStream {
    /// Shuffled minibatches over all rows.
    Plain,
    /// Same-size per-group draws each step (per group and class for eo).
    GroupPaired,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MitigationConfig {
    pub algorithm: Algorithm,
    /// Fair-mixup trade-off weight.
    pub lambda: f64,
    /// Adversary weight.
    pub alpha: f64,
    pub variant: MetricVariant,
    pub hidden: usize,
    pub stream: BatchStream,
    pub train: TrainConfig,
}

impl MitigationConfig {
    pub fn erm(seed: u64) -> Self {
        MitigationConfig {
            algorithm: Algorithm::Erm,
            lambda: 0.0,
            alpha: 0.0,
            variant: MetricVariant::Dp,
            hidden: 64,
            stream: BatchStream::Plain,
            train: TrainConfig {
                epochs: 20,
                batch_size: 256,
                learning_rate: 1e-3,
                seed,
            },
        }
    }

    pub fn adversarial(seed: u64, alpha: f64) -> Self {
        MitigationConfig {
            algorithm: Algorithm::AdvDeb,
            alpha,
            ..Self::erm(seed)
        }
    }

    pub fn fair_mixup(seed: u64, lambda: f64, variant: MetricVariant) -> Self {
        MitigationConfig {
            algorithm: Algorithm::FairMixup,
            lambda,
            variant,
            stream: BatchStream::GroupPaired,
            ..Self::erm(seed)
        }
    }

    /// Default lambda by variant: 0.5 for dp, 2.5 for eo.
    pub fn default_lambda(variant: MetricVariant) -> f64 {
        match variant {
            MetricVariant::Dp => 0.5,
            MetricVariant::Eo => 2.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be > 0".into()));
        }
        Ok(())
    }
}

fn validate_groups(groups: &[u8], n: usize) -> Result<()> {
    if groups.len() != n {
        return Err(Error::shape(
            "group_labels",
            format!("{n}"),
            format!("{}", groups.len()),
        ));
    }
    let mut present = [false; 2];
    for &g in groups {
        if g > 1 {
            return Err(Error::Schema(format!("group label {g} outside {{0,1}}")));
        }
        present[g as usize] = true;
    }
    if !present[0] || !present[1] {
        let missing = usize::from(present[0]);
        return Err(Error::Undefined(format!("group {missing} is absent from the train set")));
    }
    Ok(())
}

/// One step's worth of row indices.
enum StepBatch {
    Plain(Vec<usize>),
    /// (group0 rows, group1 rows); for eo, one pair per class.
    Paired(Vec<(Vec<usize>, Vec<usize>)>),
}

/// Deterministic batch scheduler shared by all trainers.
struct Scheduler {
    rng: ChaCha8Rng,
    stream: BatchStream,
    variant: MetricVariant,
    batch: usize,
    n: usize,
    /// Row pools: [group][class] for eo, [group][0] for dp.
    pools: Vec<Vec<Vec<usize>>>,
}

impl Scheduler {
    fn new(
        cfg: &MitigationConfig,
        n: usize,
        y: &[u8],
        groups: Option<&[u8]>,
    ) -> Result<Self> {
        let pools = match (cfg.stream, groups) {
            (BatchStream::Plain, _) => Vec::new(),
            (BatchStream::GroupPaired, None) => {
                return Err(Error::Config("group-paired stream needs group labels".into()))
            }
            (BatchStream::GroupPaired, Some(g)) => {
                validate_groups(g, n)?;
                match cfg.variant {
                    MetricVariant::Dp => {
                        let mut pools = vec![vec![Vec::new()]; 2];
                        for (i, &gi) in g.iter().enumerate() {
                            pools[gi as usize][0].push(i);
                        }
                        pools
                    }
                    MetricVariant::Eo => {
                        let mut pools = vec![vec![Vec::new(), Vec::new()]; 2];
                        for (i, (&gi, &yi)) in g.iter().zip(y).enumerate() {
                            pools[gi as usize][yi as usize].push(i);
                        }
                        for (gi, by_class) in pools.iter().enumerate() {
                            for (yi, pool) in by_class.iter().enumerate() {
                                if pool.is_empty() {
                                    return Err(Error::Undefined(format!(
                                        "group {gi} has no rows with label {yi}"
                                    )));
                                }
                            }
                        }
                        pools
                    }
                }
            }
        };
        Ok(Scheduler {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "clf-batches")),
            stream: cfg.stream,
            variant: cfg.variant,
            batch: cfg.train.batch_size,
            n,
            pools,
        })
    }

    /// Draws `count` rows from a pool; without replacement when it is large
    /// enough, with replacement otherwise.
    fn draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if pool.len() >= count {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            for i in 0..count {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            idx[..count].iter().map(|&i| pool[i]).collect()
        } else {
            (0..count).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        }
    }

    /// The batches of one epoch.
    fn epoch(&mut self) -> Vec<StepBatch> {
        match self.stream {
            BatchStream::Plain => {
                let mut order: Vec<usize> = (0..self.n).collect();
                for i in 0..order.len() {
                    let j = self.rng.gen_range(i..order.len());
                    order.swap(i, j);
                }
                order
                    .chunks(self.batch)
                    .map(|c| StepBatch::Plain(c.to_vec()))
                    .collect()
            }
            BatchStream::GroupPaired => {
                let per_step = match self.variant {
                    MetricVariant::Dp => 2 * self.batch,
                    MetricVariant::Eo => 4 * self.batch,
                };
                let steps = self.n.div_ceil(per_step).max(1);
                (0..steps)
                    .map(|_| {
                        let pairs = match self.variant {
                            MetricVariant::Dp => vec![(
                                Self::draw(&self.pools[0][0], self.batch, &mut self.rng),
                                Self::draw(&self.pools[1][0], self.batch, &mut self.rng),
                            )],
                            MetricVariant::Eo => (0..2)
                                .map(|c| {
                                    (
                                        Self::draw(&self.pools[0][c], self.batch, &mut self.rng),
                                        Self::draw(&self.pools[1][c], self.batch, &mut self.rng),
                                    )
                                })
                                .collect(),
                        };
                        StepBatch::Paired(pairs)
                    })
                    .collect()
            }
        }
    }
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

fn gather_labels(y: &[u8], rows: &[usize]) -> Array1<f64> {
    Array1::from_iter(rows.iter().map(|&r| y[r] as f64))
}

/// Adversary: a logistic head reading the predictor's logit.
struct AdversaryState {
    u: Array2<f64>,
    c: Array2<f64>,
    opt: Adam,
}

impl AdversaryState {
    fn new(seed: u64, lr: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "adversary-params"));
        AdversaryState {
            u: Array2::from_elem((1, 1), rng.gen_range(-0.5..0.5)),
            c: Array2::zeros((1, 1)),
            opt: Adam::new(AdamConfig::with_lr(lr)),
        }
    }

    fn probs(&self, logits: &Array1<f64>) -> Array1<f64> {
        logits.mapv(|z| 1.0 / (1.0 + (-(self.u[[0, 0]] * z + self.c[[0, 0]])).exp()))
    }

    /// One minimization step of BCE(adversary(logit), group).
    fn update(&mut self, logits: &Array1<f64>, groups: &Array1<f64>) -> Result<f64> {
        let a = self.probs(logits);
        let (loss, d_za) = bce_grad(&a.view(), &groups.view())?;
        if !loss.is_finite() {
            return Err(Error::Numeric("adversary diverged".into()));
        }
        let d_u = Array2::from_elem((1, 1), d_za.iter().zip(logits.iter()).map(|(d, z)| d * z).sum());
        let d_c = Array2::from_elem((1, 1), d_za.sum());
        self.opt.step(
            &mut [&mut self.u, &mut self.c],
            &[d_u, d_c],
            &["adversary.u".into(), "adversary.c".into()],
        )?;
        Ok(loss)
    }
}

fn init_classifier(cfg: &MitigationConfig, input_dim: usize, provenance: GroupProvenance) -> ClassifierModel {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "clf-params"));
    ClassifierModel::new(input_dim, cfg.hidden, &mut rng, provenance)
}

fn add_scaled(acc: &mut [Array2<f64>], other: &[Array2<f64>], scale: f64) {
    for (a, o) in acc.iter_mut().zip(other) {
        a.scaled_add(scale, o);
    }
}

/// Core loop shared by the three algorithms.
fn fit(
    train: &TrainSet,
    groups: Option<&[u8]>,
    cfg: &MitigationConfig,
    provenance: GroupProvenance,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::Config("empty train set".into()));
    }
    if let Some(g) = groups {
        validate_groups(g, train.n_rows())?;
    }
    let mut model = init_classifier(cfg, train.x.ncols(), provenance);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.train.learning_rate));
    let names = model.param_names();
    let mut scheduler = Scheduler::new(cfg, train.n_rows(), &train.y, groups)?;
    let mut mix_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "mixup-t"));
    let mut adversary = match cfg.algorithm {
        Algorithm::AdvDeb => Some(AdversaryState::new(cfg.train.seed, cfg.train.learning_rate)),
        _ => None,
    };

    for epoch in 0..cfg.train.epochs {
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for batch in scheduler.epoch() {
            let (rows_flat, pairs): (Vec<usize>, Option<Vec<(Vec<usize>, Vec<usize>)>>) = match batch {
                StepBatch::Plain(rows) => (rows, None),
                StepBatch::Paired(pairs) => {
                    let flat = pairs
                        .iter()
                        .flat_map(|(a, b)| a.iter().chain(b.iter()).copied())
                        .collect();
                    (flat, Some(pairs))
                }
            };
            let xb = gather(&train.x, &rows_flat);
            let yb = gather_labels(&train.y, &rows_flat);
            let cache = model.forward(&xb)?;
            let (sup_loss, mut d_z2) = bce_grad(&cache.s.view(), &yb.view())?;
            let mut loss = sup_loss;

            if let Some(adv) = adversary.as_mut() {
                let gb = gather_labels(groups.expect("validated above"), &rows_flat);
                let adv_loss = adv.update(&cache.z2, &gb)?;
                if cfg.alpha != 0.0 {
                    // Predictor maximizes the adversary's BCE: subtract the
                    // adversary's logit-gradient, scaled by alpha.
                    let a = adv.probs(&cache.z2);
                    let (_, d_adv) = bce_grad(&a.view(), &gb.view())?;
                    let u = adv.u[[0, 0]];
                    d_z2.zip_mut_with(&d_adv, |dz, &da| *dz -= cfg.alpha * da * u);
                    loss -= cfg.alpha * adv_loss;
                }
            }

            let mut grads = model.backward_from_logits(&xb, &cache, &d_z2);

            if cfg.algorithm == Algorithm::FairMixup && cfg.lambda > 0.0 {
                let pairs = pairs.as_ref().ok_or_else(|| {
                    Error::Config("fair mixup requires the group-paired stream".into())
                })?;
                for (rows0, rows1) in pairs {
                    let x0 = gather(&train.x, rows0);
                    let x1 = gather(&train.x, rows1);
                    let t: f64 = mix_rng.gen_range(0.0..1.0);
                    let x_mix = &x0 * t + &x1 * (1.0 - t);
                    let direction = &x1 - &x0;
                    let (pgrads, pvalue) = model.mixup_penalty(&x_mix, &direction)?;
                    add_scaled(&mut grads, &pgrads, cfg.lambda);
                    loss += cfg.lambda * pvalue;
                }
            }

            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "{:?} training diverged at epoch {epoch}",
                    cfg.algorithm
                )));
            }
            opt.step(&mut model.params_mut(), &grads, &names)?;
            epoch_loss += loss;
            steps += 1;
        }
        model.loss_curve.push(epoch_loss / steps.max(1) as f64);
    }
    Ok(model)
}

/// Plain empirical risk minimization; no group signal.
pub fn train_erm(train: &TrainSet, cfg: &MitigationConfig) -> Result<ClassifierModel> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Erm;
    fit(train, None, &cfg, GroupProvenance::None)
}

/// ERM over an externally supplied stream configuration (used to compare
/// trainers parameter-for-parameter on a shared batch stream).
pub fn train_erm_on_stream(
    train: &TrainSet,
    groups: &[u8],
    cfg: &MitigationConfig,
    provenance: GroupProvenance,
) -> Result<ClassifierModel> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Erm;
    fit(train, Some(groups), &cfg, provenance)
}

/// Minimax adversarial debiasing: the predictor minimizes
/// BCE(score, y) - alpha * BCE(adversary(logit), group) while the adversary
/// minimizes its own BCE; updates alternate every batch.
pub fn train_adversarial(
    train: &TrainSet,
    groups: &[u8],
    cfg: &MitigationConfig,
    provenance: GroupProvenance,
) -> Result<ClassifierModel> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::AdvDeb;
    fit(train, Some(groups), &cfg, provenance)
}

/// Fair mixup: per step, same-size batches from each group are interpolated
/// at t ~ U(0,1) and the loss adds lambda times the absolute directional
/// derivative of the mean prediction along (x1 - x0) at the mixed batch.
pub fn train_fair_mixup(
    train: &TrainSet,
    groups: &[u8],
    cfg: &MitigationConfig,
    provenance: GroupProvenance,
) -> Result<ClassifierModel> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::FairMixup;
    cfg.stream = BatchStream::GroupPaired;
    fit(train, Some(groups), &cfg, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;
    use crate::metrics::{spd, PredictionSet};

    fn synthetic_train(n: usize, corr: f64, seed: u64) -> (TrainSet, Vec<u8>) {
        let table = make_synthetic(n, corr, seed).unwrap();
        let groups = table.s.clone();
        (TrainSet::new(table.x, table.y).unwrap(), groups)
    }

    fn max_param_gap(a: &ClassifierModel, b: &ClassifierModel) -> f64 {
        a.params()
            .iter()
            .zip(b.params())
            .map(|(pa, pb)| {
                pa.iter()
                    .zip(pb.iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn quick(seed: u64) -> MitigationConfig {
        MitigationConfig {
            train: TrainConfig {
                epochs: 3,
                batch_size: 32,
                learning_rate: 1e-3,
                seed,
            },
            ..MitigationConfig::erm(seed)
        }
    }

    #[test]
    fn separable_toy_data_is_learned() {
        let mut x = Array2::zeros((200, 2));
        let mut y = vec![0u8; 200];
        for i in 0..200 {
            let cls = i % 2;
            x[[i, 0]] = if cls == 1 { 2.0 } else { -2.0 };
            x[[i, 1]] = ((i / 2) as f64 * 0.01).sin();
            y[i] = cls as u8;
        }
        let train = TrainSet::new(x, y).unwrap();
        let cfg = MitigationConfig {
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 1e-2,
                seed: 0,
            },
            ..MitigationConfig::erm(0)
        };
        let model = train_erm(&train, &cfg).unwrap();
        let hard = model.predict_hard(&train.x).unwrap();
        let acc = hard
            .iter()
            .zip(&train.y)
            .filter(|(a, b)| a == b)
            .count() as f64
            / 200.0;
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn alpha_zero_matches_erm_exactly() {
        let (train, groups) = synthetic_train(400, 1.0, 5);
        let mut cfg = quick(7);
        cfg.stream = BatchStream::GroupPaired;
        let erm = train_erm_on_stream(&train, &groups, &cfg, GroupProvenance::True).unwrap();
        let mut adv_cfg = cfg.clone();
        adv_cfg.alpha = 0.0;
        let adv = train_adversarial(&train, &groups, &adv_cfg, GroupProvenance::True).unwrap();
        assert!(max_param_gap(&erm, &adv) <= 1e-9);
    }

    #[test]
    fn lambda_zero_matches_erm_exactly() {
        let (train, groups) = synthetic_train(400, 1.0, 6);
        let mut cfg = quick(8);
        cfg.stream = BatchStream::GroupPaired;
        let erm = train_erm_on_stream(&train, &groups, &cfg, GroupProvenance::True).unwrap();
        let mut fm_cfg = cfg.clone();
        fm_cfg.lambda = 0.0;
        let fm = train_fair_mixup(&train, &groups, &fm_cfg, GroupProvenance::True).unwrap();
        assert!(max_param_gap(&erm, &fm) <= 1e-9);
    }

    #[test]
    fn mixup_endpoints_interpolate_exactly() {
        let x0 = Array2::from_elem((2, 3), 1.0);
        let x1 = Array2::from_elem((2, 3), 5.0);
        let at = |t: f64| &x0 * t + &x1 * (1.0 - t);
        assert_eq!(at(0.0), x1);
        assert_eq!(at(1.0), x0);
    }

    #[test]
    fn absent_group_errors() {
        let (train, _) = synthetic_train(100, 0.5, 1);
        let groups = vec![0u8; 100];
        let cfg = MitigationConfig::fair_mixup(1, 0.5, MetricVariant::Dp);
        assert!(train_fair_mixup(&train, &groups, &cfg, GroupProvenance::True).is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        let (train, groups) = synthetic_train(100, 0.5, 2);
        let mut cfg = MitigationConfig::fair_mixup(1, 0.5, MetricVariant::Dp);
        cfg.lambda = -1.0;
        assert!(train_fair_mixup(&train, &groups, &cfg, GroupProvenance::True).is_err());
    }

    #[test]
    fn mixup_reduces_spd_on_biased_synthetic_data() {
        let mut erm_spds = Vec::new();
        let mut fm_spds = Vec::new();
        for seed in 0..5 {
            let (train, groups) = synthetic_train(2000, 1.0, 100 + seed);
            let (test_table, _) = {
                let t = make_synthetic(2000, 1.0, 900 + seed).unwrap();
                (t, ())
            };
            let mut cfg = MitigationConfig::erm(seed);
            cfg.train.epochs = 8;
            let erm = train_erm(&train, &cfg).unwrap();
            let mut fm_cfg = MitigationConfig::fair_mixup(seed, 2.0, MetricVariant::Dp);
            fm_cfg.train.epochs = 8;
            let fm = train_fair_mixup(&train, &groups, &fm_cfg, GroupProvenance::True).unwrap();
            for (model, out) in [(&erm, &mut erm_spds), (&fm, &mut fm_spds)] {
                let scores = model.predict(&test_table.x).unwrap();
                let set = PredictionSet::from_scores(
                    scores.to_vec(),
                    test_table.y.clone(),
                    test_table.s.clone(),
                )
                .unwrap();
                out.push(spd(&set).unwrap());
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&fm_spds) < mean(&erm_spds),
            "fair mixup SPD {} vs ERM {}",
            mean(&fm_spds),
            mean(&erm_spds)
        );
    }
}
