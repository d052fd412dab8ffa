//! The toy pipeline end to end.
//!
//! Build steps turn a synthetic dataset into a registered deployment
//! (train, quantize, calibrate, policy). The run loop takes raw windows
//! through standardization, the quantized forward pass, the calibrated
//! confidence, the policy, latent commitment, batched proving, verification
//! and the audit log. Commitment and proving are separate steps so they can
//! run on different hosts.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{AuditLog, EntryFields, SigningKey};
use crate::calibrate::{
    ece, fit_temperature, max_softmax, select_threshold, CalibrationProfile, ConfidenceTable, CoverageRiskCurve,
    DEFAULT_ECE_BINS, DEFAULT_LAMBDA,
};
use crate::encoder::quant::BITS;
use crate::encoder::{forward_quantized, quantize_model, train_toy, FloatModel, ModelConfig, QuantOutput, QuantizedModel, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::policy::{argmax, decide, to_fixed, ActionRecord, Context, Decision, Node, PolicyTree, Predicate};
use crate::signal::{standardize, Dataset, DatasetSpec, Standardization, Window};
use crate::zkp::circuit::FamilyCounts;
use crate::zkp::wire::encode_proof;
use crate::zkp::{
    commit_latent, prove_batch, verify_batch, Circuit, Felt, InstanceWitness, ModelIdentity, Proof, ProveParams,
    Registry, RegistryEntry, Statement, Verdict, VerifyParams,
};

/// Confidence at or above which the default policy escalates to `deny`.
pub const DENY_CONFIDENCE: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainConfig,
    /// Validation windows used to calibrate quantization ranges.
    pub calib_windows: usize,
    pub lambda: f64,
    pub ece_bins: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            dataset: DatasetSpec { n_windows: 1000, snr_db: f64::INFINITY, ..DatasetSpec::default() },
            model: ModelConfig::default(),
            model_seed: 1,
            train: TrainConfig::default(),
            calib_windows: 200,
            lambda: DEFAULT_LAMBDA,
            ece_bins: DEFAULT_ECE_BINS,
        }
    }
}

/// A split cast to `f64` and standardized with the training statistics.
pub fn standardized(ds: &Dataset, split: &str) -> Result<Vec<Window<f64>>> {
    ds.split(split)?.iter().map(|w| standardize(&w.cast::<f64>(), &ds.stats)).collect()
}

pub fn train_float(ds: &Dataset, cfg: &BuildConfig) -> Result<(FloatModel<f64>, TrainReport)> {
    let train = standardized(ds, "train")?;
    let model_cfg = ModelConfig { n_classes: ds.spec.n_classes, ..cfg.model };
    let mut m = FloatModel::new(model_cfg, cfg.model_seed)?;
    let report = train_toy(&mut m, &train, &cfg.train)?;
    Ok((m, report))
}

/// Quantizes against the first `calib_windows` validation windows.
pub fn quantize(m: &FloatModel<f64>, ds: &Dataset, calib_windows: usize) -> Result<QuantizedModel> {
    let val = standardized(ds, "val")?;
    quantize_model(m, BITS, &val[..calib_windows.clamp(1, val.len())])
}

/// Quantized logits and labels of a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub logits_q: Vec<Vec<i32>>,
    pub labels: Vec<usize>,
}

impl Scores {
    pub fn of(qm: &QuantizedModel, windows: &[Window<f64>]) -> Result<Self> {
        let logits_q = windows
            .iter()
            .map(|w| Ok(forward_quantized(qm, w)?.logits_q))
            .collect::<Result<_>>()?;
        Ok(Scores { logits_q, labels: windows.iter().map(|w| w.label).collect() })
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits_q.iter().map(|l| argmax(l)).collect()
    }

    pub fn correct(&self) -> Vec<bool> {
        self.predictions().iter().zip(&self.labels).map(|(p, y)| p == y).collect()
    }

    pub fn dequantized(&self, qm: &QuantizedModel) -> Vec<Vec<f64>> {
        self.logits_q.iter().map(|l| qm.dequantize(l)).collect()
    }

    /// Confidences `u_q / 128` the policy sees.
    pub fn confidences(&self, table: &ConfidenceTable) -> Result<Vec<f64>> {
        self.logits_q
            .iter()
            .map(|l| Ok(crate::policy::from_fixed(table.confidence(l)?.0)))
            .collect()
    }

    /// Coverage-risk curve of these windows under a profile's temperature.
    pub fn curve(&self, qm: &QuantizedModel, profile: &CalibrationProfile) -> Result<CoverageRiskCurve> {
        let table = ConfidenceTable::build(qm.cfg().n_classes, profile.temperature(), qm.head.logit_scale)?;
        let u = self.confidences(&table)?;
        Ok(select_threshold(&u, &self.predictions(), &self.labels, qm.cfg().n_classes, profile.lambda())?.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: CalibrationProfile,
    pub curve: CoverageRiskCurve,
    pub accuracy: f64,
    /// ECE of the unscaled softmax and of the calibrated confidence.
    pub ece_raw: f64,
    pub ece_calibrated: f64,
}

/// Fits the temperature on dequantized logits, then selects the threshold
/// on the fixed-point confidences the circuit recomputes.
pub fn calibrate_scores(
    qm: &QuantizedModel,
    scores: &Scores,
    lambda: f64,
    ece_bins: usize,
    dataset_checksum: &str,
) -> Result<Calibration> {
    let k = qm.cfg().n_classes;
    let logits = scores.dequantized(qm);
    let temperature = fit_temperature(&logits, &scores.labels)?;
    let table = ConfidenceTable::build(k, temperature, qm.head.logit_scale)?;
    let u = scores.confidences(&table)?;
    let correct = scores.correct();
    let (tau, curve) = select_threshold(&u, &scores.predictions(), &scores.labels, k, lambda)?;
    let profile = CalibrationProfile::new(temperature, tau, lambda, ece_bins, dataset_checksum, qm.h_theta())?;
    Ok(Calibration {
        profile,
        curve,
        accuracy: correct.iter().filter(|c| **c).count() as f64 / correct.len().max(1) as f64,
        ece_raw: ece(&max_softmax(&logits, 1.0), &correct, ece_bins)?,
        ece_calibrated: ece(&u, &correct, ece_bins)?,
    })
}

/// Default policy over one context flag ("armed"): class 0 is idle and
/// allowed; any activity in an armed zone raises an alarm; confident
/// activity elsewhere is denied.
pub fn default_tree(n_classes: usize) -> Result<PolicyTree> {
    let root = Node::split(
        Predicate::ClassEq { class: 0 },
        Node::leaf(Decision::Allow, &["idle"]),
        Node::split(
            Predicate::FlagEq { flag: 0, value: true },
            Node::leaf(Decision::Alarm, &["activity", "armed-zone"]),
            Node::split(
                Predicate::ConfidenceGe { threshold_fp: to_fixed(DENY_CONFIDENCE)? },
                Node::leaf(Decision::Deny, &["activity", "high-confidence"]),
                Node::leaf(Decision::Allow, &["activity"]),
            ),
        ),
    );
    PolicyTree::new(root, n_classes, 1)
}

/// Every artifact of a toy build.
#[derive(Clone, Debug)]
pub struct Built {
    pub dataset: Dataset,
    pub float: FloatModel<f64>,
    pub train: TrainReport,
    pub calibration: Calibration,
    pub deployment: Deployment,
}

pub fn build_toy(cfg: &BuildConfig) -> Result<Built> {
    let dataset = Dataset::generate(&cfg.dataset)?;
    let (float, train) = train_float(&dataset, cfg)?;
    let model = quantize(&float, &dataset, cfg.calib_windows)?;
    let scores = Scores::of(&model, &standardized(&dataset, "val")?)?;
    let calibration = calibrate_scores(&model, &scores, cfg.lambda, cfg.ece_bins, &dataset.manifest().checksum())?;
    let tree = default_tree(dataset.spec.n_classes)?;
    let deployment = Deployment::new(model, dataset.stats.clone(), calibration.profile.clone(), tree)?;
    Ok(Built { dataset, float, train, calibration, deployment })
}

/// A quantized model frozen with its statistics, profile and policy.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub model: QuantizedModel,
    pub stats: Standardization,
    pub profile: CalibrationProfile,
    pub tree: PolicyTree,
    table: ConfidenceTable,
}

/// Outputs of one window before commitment.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub out: QuantOutput,
    pub u_q: u32,
    pub class: usize,
    pub record: ActionRecord,
}

/// A committed window: the public statement and the prover's secrets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Committed {
    pub statement: Statement,
    pub latent: Vec<i32>,
    pub flags: Vec<bool>,
    pub r: Felt,
    pub record: ActionRecord,
    pub u_q: u32,
    pub class: usize,
    pub label: Option<usize>,
}

impl Committed {
    pub fn witness(&self) -> InstanceWitness {
        InstanceWitness { latent: self.latent.clone(), flags: self.flags.clone(), r: self.r }
    }
}

impl Deployment {
    pub fn new(model: QuantizedModel, stats: Standardization, profile: CalibrationProfile, tree: PolicyTree) -> Result<Self> {
        if profile.model_hash() != model.h_theta() {
            return Err(Error::Parameter("profile was calibrated for a different model".into()));
        }
        if tree.n_classes != model.cfg().n_classes {
            return Err(Error::Parameter("policy and model disagree on the class count".into()));
        }
        let table = ConfidenceTable::build(model.cfg().n_classes, profile.temperature(), model.head.logit_scale)?;
        Ok(Deployment { model, stats, profile, tree, table })
    }

    pub fn identity(&self) -> ModelIdentity {
        self.model.identity()
    }

    pub fn h_theta(&self) -> Felt {
        self.model.h_theta()
    }

    pub fn register(&self, registry: &mut Registry) -> Result<RegistryEntry> {
        registry.register(&self.identity(), &self.profile, &self.tree)
    }

    pub fn table(&self) -> &ConfidenceTable {
        &self.table
    }

    /// Standardizes a raw window and decides under threshold `tau_fp`.
    pub fn infer(&self, w: &Window<f32>, ctx: &Context, tau_fp: u32) -> Result<Inference> {
        let x = standardize(&w.cast::<f64>(), &self.stats)?;
        let out = forward_quantized(&self.model, &x)?;
        let (u_q, _) = self.table.confidence(&out.logits_q)?;
        let record = decide(&out.logits_q, u_q, tau_fp, ctx, &self.tree)?;
        Ok(Inference { class: argmax(&out.logits_q), u_q, record, out })
    }

    /// Commits to the latent and context flags with fresh randomness.
    pub fn commit(
        &self,
        inf: &Inference,
        ctx: &Context,
        tau_fp: u32,
        label: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Committed> {
        let r = Felt::new(rng.random::<u64>());
        let nonce = Felt::new(rng.random::<u64>());
        let c = commit_latent(&inf.out.latent.z, &ctx.flags, r)?;
        Ok(Committed {
            statement: Statement {
                c,
                h_theta: self.h_theta(),
                tau_fp,
                t_win: inf.out.latent.t_win,
                nonce,
                action: inf.record.decision,
            },
            latent: inf.out.latent.z.clone(),
            flags: ctx.flags.clone(),
            r,
            record: inf.record.clone(),
            u_q: inf.u_q,
            class: inf.class,
            label,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunInput {
    pub window: Window<f32>,
    pub ctx: Context,
}

impl RunInput {
    /// Context for a window: its zone, with the "armed" flag set when the
    /// zone is listed.
    pub fn new(window: Window<f32>, target: &str, armed_zones: &[String]) -> Self {
        let ctx = Context {
            zone: window.zone.clone(),
            target: target.to_string(),
            flags: vec![armed_zones.contains(&window.zone)],
        };
        RunInput { window, ctx }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub batch: usize,
    /// `None` uses the default for each batch's constraint count.
    pub openings: Option<usize>,
    pub seed: u64,
    pub site_id: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { batch: 1, openings: None, seed: 0, site_id: "site-0".into() }
    }
}

/// Commits every window in order. Randomness depends only on the seed and
/// the window position, never on batching.
pub fn commit_windows(dep: &Deployment, inputs: &[RunInput], seed: u64, tau_fp: u32) -> Result<Vec<Committed>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    inputs
        .iter()
        .map(|x| {
            let inf = dep.infer(&x.window, &x.ctx, tau_fp)?;
            dep.commit(&inf, &x.ctx, tau_fp, Some(x.window.label), &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BatchProof {
    /// Index of the first window covered.
    pub first: usize,
    pub statements: Vec<Statement>,
    pub proof: Proof,
    pub bytes: Vec<u8>,
    pub prove_time: Duration,
    /// Decision-constraint instances committed by this proof.
    pub c4_instances: usize,
}

/// Proves committed windows in consecutive batches of `batch`.
pub fn prove_committed(
    circuit: &Circuit,
    committed: &[Committed],
    batch: usize,
    openings: Option<usize>,
    seed: u64,
) -> Result<Vec<BatchProof>> {
    if batch == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    committed
        .chunks(batch)
        .enumerate()
        .map(|(i, chunk)| {
            let statements: Vec<Statement> = chunk.iter().map(|c| c.statement.clone()).collect();
            let witnesses: Vec<InstanceWitness> = chunk.iter().map(Committed::witness).collect();
            let params = ProveParams { openings, salt_seed: seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) };
            let t0 = Instant::now();
            let proof = prove_batch(circuit, &statements, &witnesses, &params)?;
            let prove_time = t0.elapsed();
            let c4_instances = statements.iter().map(|s| FamilyCounts::of(circuit.shape(s.action)).c4).sum();
            Ok(BatchProof { first: i * batch, bytes: encode_proof(&proof), statements, proof, prove_time, c4_instances })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub windows: usize,
    pub abstained: usize,
    pub abstain_rate: f64,
    pub coverage: f64,
    pub risk: f64,
    pub proofs: usize,
    pub proofs_accepted: usize,
    pub proof_acceptance: f64,
    pub reject_reasons: Vec<String>,
    pub c4_instances: usize,
    pub c4_per_window: usize,
    pub proof_bytes: usize,
    pub proof_bytes_per_window: f64,
    pub prove_ms_per_window: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub committed: Vec<Committed>,
    pub proofs: Vec<BatchProof>,
    pub verdicts: Vec<Verdict>,
    pub summary: RunSummary,
}

/// Runs windows through the registered deployment, proving every window
/// (abstentions use the layout without decision constraints), verifying
/// each batch and appending one audit entry per window.
pub fn run(
    dep: &Deployment,
    registry: &Registry,
    inputs: &[RunInput],
    opts: &RunOptions,
    log: &mut AuditLog,
    key: &SigningKey,
    clock: &mut dyn FnMut() -> u64,
) -> Result<RunReport> {
    let reg = registry
        .lookup(dep.h_theta())
        .map_err(|_| Error::Unregistered(dep.h_theta().to_hex()))?;
    let committed = commit_windows(dep, inputs, opts.seed, dep.profile.tau_fp())?;
    let proofs = prove_committed(&reg.circuit, &committed, opts.batch, opts.openings, opts.seed)?;
    let verdicts: Vec<Verdict> = proofs
        .iter()
        .map(|p| verify_batch(&p.proof, &p.statements, registry, &VerifyParams::default()))
        .collect();
    for (p, v) in proofs.iter().zip(&verdicts) {
        for (j, c) in committed[p.first..p.first + p.statements.len()].iter().enumerate() {
            log.append(
                EntryFields {
                    ts: clock(),
                    site_id: opts.site_id.clone(),
                    zone: c.record.zone.clone(),
                    action: c.record.clone(),
                    u: c.record.confidence,
                    class: c.class,
                    label: c.label,
                    c: c.statement.c,
                    h_theta: c.statement.h_theta,
                    t_win: c.statement.t_win,
                    pi_size: p.bytes.len(),
                    batch: p.statements.len(),
                    verified: v.accepted,
                },
                key,
            )
            .map_err(|e| Error::Append(format!("window {}: {e}", p.first + j)))?;
        }
    }
    let summary = summarize_run(&reg.circuit, &committed, &proofs, &verdicts);
    Ok(RunReport { committed, proofs, verdicts, summary })
}

fn summarize_run(circuit: &Circuit, committed: &[Committed], proofs: &[BatchProof], verdicts: &[Verdict]) -> RunSummary {
    let n = committed.len();
    let abstained = committed.iter().filter(|c| c.record.decision == Decision::Abstain).count();
    let accepted: Vec<&Committed> = committed.iter().filter(|c| c.record.decision != Decision::Abstain).collect();
    let labelled = accepted.iter().filter(|c| c.label.is_some()).count();
    let wrong = accepted.iter().filter(|c| c.label.is_some_and(|y| y != c.class)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let proof_bytes: usize = proofs.iter().map(|p| p.bytes.len()).sum();
    let prove_time: Duration = proofs.iter().map(|p| p.prove_time).sum();
    let mut reject_reasons: Vec<String> =
        verdicts.iter().filter_map(|v| v.reason.map(|r| r.as_str().to_string())).collect();
    reject_reasons.sort();
    reject_reasons.dedup();
    RunSummary {
        windows: n,
        abstained,
        abstain_rate: ratio(abstained, n),
        coverage: ratio(n - abstained, n),
        risk: ratio(wrong, labelled),
        proofs: proofs.len(),
        proofs_accepted: verdicts.iter().filter(|v| v.accepted).count(),
        proof_acceptance: ratio(verdicts.iter().filter(|v| v.accepted).count(), verdicts.len()),
        reject_reasons,
        c4_instances: proofs.iter().map(|p| p.c4_instances).sum(),
        c4_per_window: FamilyCounts::of(&circuit.full).c4,
        proof_bytes,
        proof_bytes_per_window: ratio(proof_bytes, n),
        prove_ms_per_window: if n == 0 { 0.0 } else { prove_time.as_secs_f64() * 1e3 / n as f64 },
    }
}
