//! Harmonized adversarial training loop.
//!
//! Each iteration draws a source and a target mini-batch, computes both
//! losses and their gradients, derives `(tau1, tau2)` from the configured
//! method, and takes one SGD step on `tau1 * L_dom + tau2 * L_cls`. The
//! generator and classifier descend; the discriminator ascends `L_dom`,
//! scaled by `tau1` when `discriminator_weighted` is set.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::analysis::{GradientTrace, TraceEntry};
use crate::error::{Error, Result};
use crate::harmonizer::{harmonize, GradientPair, HarmonizeMethod};
use crate::matrix::Matrix;
use crate::metrics::{discriminability_jw, mmd_rbf};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use crate::scenario::Dataset;
use crate::toynet::{Batch, Dims, LossGrads, Scope, ToyNetwork};
use crate::vecmath::{angle, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: HarmonizeMethod,
    pub eta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scope: Scope,
    pub eval_every: usize,
    pub discriminator_weighted: bool,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    /// Keep every step's `(g1, g2)` for offline replay.
    pub record_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: HarmonizeMethod::none(),
            eta: 0.05,
            iterations: 500,
            batch_size: 32,
            seed: 0,
            scope: Scope::FullTheta,
            eval_every: 50,
            discriminator_weighted: true,
            hidden_dim: 16,
            feature_dim: 2,
            record_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        HarmonizeMethod::new(self.method.kind, self.method.lambda)?;
        Ok(())
    }

    pub fn dims(&self, data: &Dataset) -> Dims {
        Dims {
            input_dim: data.meta.input_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
            num_classes: data.meta.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub loss_dom: f64,
    pub loss_cls: f64,
    pub inner_product: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub conflict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// `None` when the dataset has no labeled target rows.
    pub final_accuracy: Option<f64>,
    pub obtuse_fraction: f64,
}

impl TrainReport {
    pub fn from_records(records: Vec<StepRecord>, final_accuracy: Option<f64>) -> Self {
        let conflicts = records.iter().filter(|r| r.conflict).count();
        let obtuse_fraction = if records.is_empty() { 0.0 } else { conflicts as f64 / records.len() as f64 };
        Self { records, final_accuracy, obtuse_fraction }
    }

    /// One [`StepRecord`] per line.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("<report>", e))?;
        }
        Ok(())
    }
}

/// Everything a single step computed, for callers that drive the loop.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub grads: LossGrads,
    /// The pair `tau` was derived from (restricted to `theta_g` under
    /// [`Scope::SharedOnly`]).
    pub pair: GradientPair,
    /// Full-length update handed to [`ToyNetwork::apply_update`].
    pub update: ParamVector,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub report: TrainReport,
    pub network: ToyNetwork,
    pub trace: Option<GradientTrace>,
}

/// Full-length update `tau1 * g_dom + tau2 * g_cls`, with the discriminator
/// block replaced by `d_weight * g_dom`.
pub fn combined_update(grads: &LossGrads, dims: &Dims, tau1: f64, tau2: f64, d_weight: f64) -> ParamVector {
    let mut u = grads.g_dom.lincomb(tau1, tau2, &grads.g_cls).expect("gradients share a layout").into_vec();
    let d = dims.layout().discriminator;
    for (ui, gi) in u[d.clone()].iter_mut().zip(&grads.g_dom.as_slice()[d]) {
        *ui = d_weight * gi;
    }
    ParamVector::new(u).expect("finite gradients give a finite update")
}

/// Fraction of labeled target rows classified correctly.
pub fn evaluate(net: &ToyNetwork, data: &Dataset) -> Result<f64> {
    let (x, y) = data.labeled_target();
    if y.is_empty() {
        return Err(Error::MissingLabels);
    }
    let pred = net.predict(&x)?;
    let hits = pred.iter().zip(&y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / y.len() as f64)
}

fn abort(iter: usize, what: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NumericalAbort { iter, what },
        other => other,
    }
}

fn sample_rows(rng: &mut Rng, x: &Matrix, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..x.rows())).collect()
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    net: ToyNetwork,
    source_rng: Rng,
    target_rng: Rng,
    iter: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let net = ToyNetwork::init(cfg.seed, cfg.dims(data))?;
        Ok(Self {
            source_rng: rng::stream(cfg.seed, "batching/source"),
            target_rng: rng::stream(cfg.seed, "batching/target"),
            cfg,
            data,
            net,
            iter: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &ToyNetwork {
        &self.net
    }

    /// Number of steps taken so far.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.iterations
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let n = self.cfg.batch_size;
        let si = sample_rows(&mut self.source_rng, &self.data.source_x, n);
        let ti = sample_rows(&mut self.target_rng, &self.data.target_x, n);
        Batch::new(
            self.data.source_x.select_rows(&si),
            si.iter().map(|&i| self.data.source_y[i]).collect(),
            self.data.target_x.select_rows(&ti),
        )
    }

    fn eval_metrics(&self, record: &mut StepRecord) -> Result<()> {
        record.target_accuracy = match evaluate(&self.net, self.data) {
            Ok(a) => Some(a),
            Err(Error::MissingLabels) => None,
            Err(e) => return Err(e),
        };
        let fs = self.net.features(&self.data.source_x)?;
        let ft = self.net.features(&self.data.target_x)?;
        record.mmd = Some(mmd_rbf(&fs, &ft)?);
        // J(W) is undefined for degenerate label sets; leave it out then
        record.jw = discriminability_jw(&fs, &self.data.source_y).ok();
        Ok(())
    }

    /// Runs one iteration and returns what it computed.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let iter = self.iter;
        let batch = self.next_batch()?;
        let grads = self.net.loss_grads(&batch).map_err(abort(iter, "gradient"))?;
        if !grads.loss_dom.is_finite() || !grads.loss_cls.is_finite() {
            return Err(Error::NumericalAbort { iter, what: "loss" });
        }
        let dims = *self.net.dims();
        let pair = grads.pair(&dims, self.cfg.scope);
        let h = harmonize(self.cfg.method, &pair)?;
        if !h.tau1.is_finite() || !h.tau2.is_finite() {
            return Err(Error::NumericalAbort { iter, what: "tau" });
        }
        let d_weight = if self.cfg.discriminator_weighted && !self.cfg.method.kind.is_sign_flip() { h.tau1 } else { 1.0 };
        let update = combined_update(&grads, &dims, h.tau1, h.tau2, d_weight);
        self.net.apply_update(&update, self.cfg.eta).map_err(abort(iter, "parameters"))?;
        self.iter += 1;

        let mut record = StepRecord {
            iter,
            loss_dom: grads.loss_dom,
            loss_cls: grads.loss_cls,
            inner_product: h.inner_product,
            tau1: h.tau1,
            tau2: h.tau2,
            conflict: h.conflict,
            angle_before: angle(pair.g1(), pair.g2()).ok(),
            target_accuracy: None,
            mmd: None,
            jw: None,
        };
        if self.iter.is_multiple_of(self.cfg.eval_every) || self.is_done() {
            self.eval_metrics(&mut record)?;
        }
        Ok(StepOutcome { record, grads, pair, update })
    }

    pub fn run(mut self) -> Result<TrainRun> {
        let mut records = Vec::with_capacity(self.cfg.iterations);
        let mut trace = self.cfg.record_gradients.then(GradientTrace::default);
        while !self.is_done() {
            let out = self.step()?;
            if let Some(t) = trace.as_mut() {
                t.push(TraceEntry::full(out.record.iter as u64, &out.pair))?;
            }
            records.push(out.record);
        }
        let final_accuracy = match evaluate(&self.net, self.data) {
            Ok(a) => Some(a),
            Err(Error::MissingLabels) => None,
            Err(e) => return Err(e),
        };
        Ok(TrainRun { report: TrainReport::from_records(records, final_accuracy), network: self.net, trace })
    }
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainReport> {
    Ok(Trainer::new(cfg.clone(), data)?.run()?.report)
}

/// Trains one run per seed. `make_data` builds each seed's dataset; the
/// config's own seed is replaced by the run seed.
pub fn train_seeds<F>(exec: Execution, cfg: &TrainConfig, seeds: &[u64], make_data: F) -> Result<Vec<TrainRun>>
where
    F: Fn(u64) -> Result<Dataset> + Sync + Send,
{
    par::try_map(exec, seeds, |&seed| {
        let data = make_data(seed)?;
        let cfg = TrainConfig { seed, ..cfg.clone() };
        Trainer::new(cfg, &data)?.run()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonizer::{gh_aggregate, MethodKind};
    use crate::scenario::{make_blobs, BlobSpec};

    fn data(seed: u64) -> Dataset {
        make_blobs(&BlobSpec { seed, per_class: 50, ..BlobSpec::default() }).unwrap()
    }

    fn cfg(kind: MethodKind) -> TrainConfig {
        TrainConfig { method: HarmonizeMethod::of(kind), iterations: 60, eval_every: 20, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { eta: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { iterations: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let parsed: TrainConfig = serde_json::from_str(r#"{"method": {"kind": "ghpp-weighted", "lambda": 0.25}}"#).unwrap();
        assert_eq!(parsed.method.lambda, 0.25);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"method": {"kind": "gh", "lambda": 2}}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"etaa": 1}"#).is_err());
    }

    #[test]
    fn deterministic() {
        let d = data(3);
        let a = train(&cfg(MethodKind::Gh), &d).unwrap();
        let b = train(&cfg(MethodKind::Gh), &d).unwrap();
        assert_eq!(a, b);
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        a.write_jsonl(&mut ja).unwrap();
        b.write_jsonl(&mut jb).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn report_shape() {
        let r = train(&cfg(MethodKind::None), &data(1)).unwrap();
        assert_eq!(r.records.len(), 60);
        let evals: Vec<usize> = r.records.iter().filter(|s| s.mmd.is_some()).map(|s| s.iter).collect();
        assert_eq!(evals, vec![19, 39, 59]);
        assert_eq!(r.records[59].target_accuracy, r.final_accuracy);
        let conflicts = r.records.iter().filter(|s| s.conflict).count();
        assert_eq!(r.obtuse_fraction, conflicts as f64 / 60.0);
        assert!(r.records.iter().all(|s| s.tau1 == 1.0 && s.tau2 == 1.0));
        let line = serde_json::to_string(&r.records[0]).unwrap();
        assert!(!line.contains("mmd") && !line.contains("target_accuracy"));
    }

    #[test]
    fn gh_update_is_the_aggregate() {
        let d = data(5);
        let mut t = Trainer::new(cfg(MethodKind::Gh), &d).unwrap();
        let mut conflicts = 0;
        while !t.is_done() {
            let out = t.step().unwrap();
            let agg = gh_aggregate(&out.pair);
            let diff = out.update.sub(&agg).unwrap().norm();
            assert!(diff <= 1e-9 * agg.norm().max(1e-300), "iter {}: {diff}", out.record.iter);
            if out.record.conflict {
                conflicts += 1;
            } else {
                assert_eq!((out.record.tau1, out.record.tau2), (1.0, 1.0));
                let plain = combined_update(&out.grads, t.network().dims(), 1.0, 1.0, 1.0);
                assert_eq!(out.update, plain);
            }
        }
        assert!(conflicts > 0);
    }

    #[test]
    fn discriminator_weighting() {
        let d = data(2);
        let base = cfg(MethodKind::GhppWeighted);
        let mut weighted = Trainer::new(base.clone(), &d).unwrap();
        let mut plain = Trainer::new(TrainConfig { discriminator_weighted: false, ..base }, &d).unwrap();
        let dl = weighted.network().dims().layout().discriminator;
        for _ in 0..30 {
            let a = weighted.step().unwrap();
            let b = plain.step().unwrap();
            let gd = &a.grads.g_dom.as_slice()[dl.clone()];
            let ud = &a.update.as_slice()[dl.clone()];
            assert!(gd.iter().zip(ud).all(|(g, u)| *u == a.record.tau1 * g));
            let gd = &b.grads.g_dom.as_slice()[dl.clone()];
            assert_eq!(&b.update.as_slice()[dl.clone()], gd);
        }
    }

    #[test]
    fn shared_scope_trains() {
        let c = TrainConfig { scope: Scope::SharedOnly, ..cfg(MethodKind::Gh) };
        let d = data(4);
        let mut t = Trainer::new(c, &d).unwrap();
        let out = t.step().unwrap();
        assert_eq!(out.pair.len(), t.network().dims().generator_len());
        assert_eq!(out.update.len(), t.network().dims().total_len());
    }

    #[test]
    fn divergence_aborts() {
        let c = TrainConfig { eta: 1e308, ..cfg(MethodKind::None) };
        let err = train(&c, &data(0)).unwrap_err();
        assert!(matches!(err, Error::NumericalAbort { .. }), "{err}");
    }

    #[test]
    fn evaluate_constant_classifier_gives_majority_fraction() {
        let mut d = data(0);
        // drop 30 class-1 target labels so class 0 is the majority
        let mut dropped = 0;
        for y in d.target_y.iter_mut() {
            if *y == Some(1) && dropped < 30 {
                *y = None;
                dropped += 1;
            }
        }
        let dims = Dims { input_dim: 2, hidden_dim: 4, feature_dim: 2, num_classes: 2 };
        let net = ToyNetwork::init(0, dims).unwrap();
        let c = ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let net = ToyNetwork::from_parts(dims, net.theta_g().clone(), net.theta_d().clone(), c).unwrap();
        assert_eq!(evaluate(&net, &d).unwrap(), 50.0 / 70.0);
        d.target_y.iter_mut().for_each(|y| *y = None);
        assert!(matches!(evaluate(&net, &d), Err(Error::MissingLabels)));
    }

    #[test]
    fn untrained_net_is_near_chance() {
        let accs: Vec<f64> = (0..10)
            .map(|s| {
                let d = data(s);
                let net = ToyNetwork::init(s, TrainConfig::default().dims(&d)).unwrap();
                evaluate(&net, &d).unwrap()
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn seeds_parallel_equal_sequential() {
        let c = cfg(MethodKind::Gh);
        let seeds = [0, 1, 2];
        let mk = |s| Ok(data(s));
        let a = train_seeds(Execution::Sequential, &c, &seeds, mk).unwrap();
        let b = train_seeds(Execution::Parallel, &c, &seeds, mk).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.report, y.report);
        }
    }
}
