//! Subcommand implementations over the artifact layout in [`crate::config`].

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use zksense::audit::attack::{attack_replay, attack_rollback, attack_tamper_threshold, Archived, AttackKind, Outcome};
use zksense::audit::{parse_entries, summarize, verify_chain, Anchor, AuditLog, SigningKey};
use zksense::calibrate::CalibrationProfile;
use zksense::encoder::{serial, FloatModel, QuantizedModel};
use zksense::pipeline::{self, calibrate_scores, commit_windows, prove_committed, Committed, Deployment, RunInput, RunOptions, Scores};
use zksense::policy::PolicyTree;
use zksense::signal::{load_dataset, save_dataset, Dataset, Manifest};
use zksense::zkp::wire::{decode_proof, statements_from_json, statements_to_json};
use zksense::zkp::{verify_batch, Felt, Registry, VerifyParams};

use crate::config::{Config, Paths};
use crate::plot::coverage_risk_svg;
use crate::AttackArg;

pub struct Ctx {
    pub cfg: Config,
    pub fixed_time: Option<u64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn mix(seed: u64, i: u64) -> u64 {
    seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Ctx {
    fn paths(&self) -> Paths {
        self.cfg.paths()
    }

    fn dataset(&self) -> Result<(Dataset, Manifest)> {
        load_dataset(&self.paths().dataset()).context("loading dataset (run `generate` first)")
    }

    fn float(&self) -> Result<FloatModel<f64>> {
        Ok(serde_json::from_str(&read(&self.paths().float_model())?)?)
    }

    fn model(&self) -> Result<QuantizedModel> {
        serial::load(&self.paths().model()).context("loading quantized model (run `quantize` first)")
    }

    fn profile(&self) -> Result<CalibrationProfile> {
        Ok(CalibrationProfile::from_json(&read(&self.paths().profile())?)?)
    }

    fn tree(&self) -> Result<PolicyTree> {
        let tree: PolicyTree = serde_json::from_str(&read(&self.paths().tree())?)?;
        tree.validate()?;
        Ok(tree)
    }

    fn registry(&self) -> Result<Registry> {
        let path = self.paths().registry();
        if !path.exists() {
            return Ok(Registry::new());
        }
        Ok(Registry::load(&path)?)
    }

    fn key(&self) -> Result<SigningKey> {
        let path = self.cfg.key_path();
        SigningKey::load(&path).with_context(|| format!("loading signing key {}", path.display()))
    }

    /// Loads every artifact and checks they belong together and are registered.
    fn deployment(&self) -> Result<(Deployment, Registry, Dataset)> {
        let (ds, manifest) = self.dataset()?;
        let model = self.model()?;
        let profile = self.profile()?;
        if profile.dataset_checksum() != manifest.checksum() {
            bail!("profile was calibrated on a different dataset");
        }
        let registry = self.registry()?;
        if registry.lookup(model.h_theta()).is_err() {
            bail!("unregistered model {}: run `register` first", model.h_theta());
        }
        let dep = Deployment::new(model, ds.stats.clone(), profile, self.tree()?)?;
        Ok((dep, registry, ds))
    }

    fn inputs(&self, ds: &Dataset) -> Result<Vec<RunInput>> {
        let run = &self.cfg.run;
        let windows = ds.split(&run.split)?;
        let n = run.windows.unwrap_or(windows.len()).min(windows.len());
        Ok(windows[..n].iter().cloned().map(|w| RunInput::new(w, &run.target, &run.armed_zones)).collect())
    }

    fn now(&self) -> u64 {
        self.fixed_time.unwrap_or_else(|| {
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
        })
    }

    pub fn init(&self, path: &Path, force: bool) -> Result<()> {
        if path.exists() && !force {
            bail!("{} exists (use --force to overwrite)", path.display());
        }
        fs::write(path, self.cfg.to_toml()?)?;
        println!("wrote config {}", path.display());
        let key_path = self.cfg.key_path();
        if key_path.exists() && !force {
            println!("kept existing key {}", key_path.display());
        } else {
            if let Some(dir) = key_path.parent() {
                fs::create_dir_all(dir)?;
            }
            let seed = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
            let bytes = SigningKey::generate(mix(seed, std::process::id() as u64));
            fs::write(&key_path, hex::encode(&bytes))?;
            println!("wrote signing key {}", key_path.display());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<()> {
        let ds = Dataset::generate(&self.cfg.build.dataset)?;
        let manifest = save_dataset(&self.paths().dataset(), &ds)?;
        for (name, meta) in &manifest.splits {
            println!("{name}: {} windows", meta.count);
        }
        println!("dataset checksum {}", manifest.checksum());
        Ok(())
    }

    pub fn train_toy(&self) -> Result<()> {
        let (ds, _) = self.dataset()?;
        let (m, report) = pipeline::train_float(&ds, &self.cfg.build)?;
        write_json(&self.paths().float_model(), &m)?;
        write_json(&self.paths().train_report(), &report)?;
        println!(
            "trained {} steps: final loss {:.4}, train accuracy {:.3}",
            report.losses.len(),
            report.losses.last().copied().unwrap_or(f64::NAN),
            report.train_accuracy
        );
        Ok(())
    }

    pub fn quantize(&self) -> Result<()> {
        let (ds, _) = self.dataset()?;
        let qm = pipeline::quantize(&self.float()?, &ds, self.cfg.build.calib_windows)?;
        serial::save(&qm, &self.paths().model())?;
        write_json(&self.paths().quant_meta(), &qm.meta)?;
        for l in &qm.meta.luts {
            println!("table {:<14} max error {:.4} of range ({} codes visited)", l.name, l.relative, l.visited);
        }
        println!("argmax agreement {:.4} on {} windows", qm.meta.argmax_agreement, qm.meta.calib_windows);
        println!("model hash {}", qm.h_theta());
        Ok(())
    }

    pub fn calibrate(&self) -> Result<()> {
        let (ds, manifest) = self.dataset()?;
        let qm = self.model()?;
        let b = &self.cfg.build;
        let val = Scores::of(&qm, &pipeline::standardized(&ds, "val")?)?;
        let cal = calibrate_scores(&qm, &val, b.lambda, b.ece_bins, &manifest.checksum())?;
        fs::write(self.paths().profile(), cal.profile.canonical_json())?;
        write_json(&self.paths().calibration(), &cal)?;
        fs::write(self.paths().curve("val", "csv"), cal.curve.to_csv())?;
        let mut curves = vec![("val".to_string(), cal.curve.clone())];
        for split in ["test", "shifted"] {
            let scores = Scores::of(&qm, &pipeline::standardized(&ds, split)?)?;
            let curve = scores.curve(&qm, &cal.profile)?;
            fs::write(self.paths().curve(split, "csv"), curve.to_csv())?;
            curves.push((split.to_string(), curve));
        }
        let named: Vec<(&str, _)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
        fs::write(self.paths().curve("shifted", "svg"), coverage_risk_svg(&named))?;
        println!(
            "temperature {:.4}, threshold {:.4} (fixed point {}), val accuracy {:.3}, ECE {:.4} -> {:.4}",
            cal.profile.temperature(),
            cal.profile.tau_reg(),
            cal.profile.tau_fp(),
            cal.accuracy,
            cal.ece_raw,
            cal.ece_calibrated
        );
        println!("wrote {}", self.paths().curve("shifted", "svg").display());
        Ok(())
    }

    pub fn register(&self, tree_path: Option<&Path>) -> Result<()> {
        let qm = self.model()?;
        let profile = self.profile()?;
        let tree = match tree_path {
            Some(p) => serde_json::from_str(&read(p)?)?,
            None => pipeline::default_tree(qm.cfg().n_classes)?,
        };
        let mut registry = self.registry()?;
        let entry = registry.register(&qm.identity(), &profile, &tree)?;
        registry.save(&self.paths().registry())?;
        write_json(&self.paths().tree(), &tree)?;
        println!("registered {} (backbone {}, head {}) at tau_fp {}", entry.h_theta, entry.backbone_hash, entry.head_hash, entry.tau_fp);
        Ok(())
    }

    pub fn run(&self, save_proofs: bool) -> Result<()> {
        let (dep, registry, ds) = self.deployment()?;
        let inputs = self.inputs(&ds)?;
        let key = self.key()?;
        let path = self.paths().audit();
        if path.exists() {
            fs::remove_file(&path)?;
        }
        let mut log = AuditLog::open(&path)?;
        let run = &self.cfg.run;
        let opts = RunOptions { batch: run.batch, openings: run.openings, seed: run.seed, site_id: run.site_id.clone() };
        let report = pipeline::run(&dep, &registry, &inputs, &opts, &mut log, &key, &mut || self.now())?;
        log.anchor().save(&self.paths().anchor())?;
        if save_proofs {
            self.write_proofs(report.proofs.iter().map(|p| (p.statements.as_slice(), p.bytes.as_slice())))?;
        }
        let from_log = summarize(&parse_entries(&log.text())?);
        write_json(&self.paths().summary(), &serde_json::json!({ "run": report.summary, "audit": from_log }))?;
        let s = &report.summary;
        println!(
            "{} windows: coverage {:.3}, risk {:.3}, abstain rate {:.3}",
            s.windows, s.coverage, s.risk, s.abstain_rate
        );
        println!(
            "{} proofs, {} accepted; {:.0} bytes and {:.2} ms per window; {} decision constraints",
            s.proofs, s.proofs_accepted, s.proof_bytes_per_window, s.prove_ms_per_window, s.c4_instances
        );
        for r in &s.reject_reasons {
            println!("REJECT {r}");
        }
        Ok(())
    }

    fn write_proofs<'a>(&self, proofs: impl Iterator<Item = (&'a [zksense::zkp::Statement], &'a [u8])>) -> Result<()> {
        let dir = self.paths().proofs();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let mut n = 0;
        for (i, (statements, bytes)) in proofs.enumerate() {
            fs::write(dir.join(format!("batch-{i:04}.statements.json")), statements_to_json(statements)?)?;
            fs::write(dir.join(format!("batch-{i:04}.zkpf")), bytes)?;
            n += 1;
        }
        println!("wrote {n} proofs to {}", dir.display());
        Ok(())
    }

    pub fn commit(&self) -> Result<()> {
        let (dep, _, ds) = self.deployment()?;
        let inputs = self.inputs(&ds)?;
        let committed = commit_windows(&dep, &inputs, self.cfg.run.seed, dep.profile.tau_fp())?;
        write_json(&self.paths().commits(), &committed)?;
        let abstained = committed.iter().filter(|c| c.statement.action == zksense::policy::Decision::Abstain).count();
        println!("committed {} windows ({abstained} abstained) to {}", committed.len(), self.paths().commits().display());
        Ok(())
    }

    pub fn prove(&self) -> Result<()> {
        let committed: Vec<Committed> = serde_json::from_str(&read(&self.paths().commits())?)?;
        let Some(first) = committed.first() else {
            bail!("no committed windows");
        };
        let registry = self.registry()?;
        let reg = registry
            .lookup(first.statement.h_theta)
            .map_err(|_| anyhow::anyhow!("unregistered model {}", first.statement.h_theta))?;
        let run = &self.cfg.run;
        let proofs = prove_committed(&reg.circuit, &committed, run.batch, run.openings, run.seed)?;
        self.write_proofs(proofs.iter().map(|p| (p.statements.as_slice(), p.bytes.as_slice())))
    }

    pub fn verify(&self, pair: Option<(&Path, &Path)>) -> Result<()> {
        let registry = self.registry()?;
        let pairs: Vec<(std::path::PathBuf, std::path::PathBuf)> = match pair {
            Some((s, p)) => vec![(s.to_path_buf(), p.to_path_buf())],
            None => {
                let dir = self.paths().proofs();
                let mut v: Vec<_> = fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "zkpf"))
                    .map(|p| (p.with_extension("statements.json"), p))
                    .collect();
                v.sort();
                v
            }
        };
        let (mut accepted, mut total) = (0, 0);
        for (s, p) in &pairs {
            let statements = statements_from_json(&read(s)?)?;
            let verdict = match decode_proof(&fs::read(p)?) {
                Ok(proof) => verify_batch(&proof, &statements, &registry, &VerifyParams::default()),
                Err(_) => zksense::zkp::Verdict { accepted: false, reason: Some(zksense::zkp::RejectReason::BadFormat), warnings: vec![] },
            };
            total += 1;
            if verdict.accepted {
                accepted += 1;
                println!("ACCEPT {}", p.display());
            } else {
                println!("REJECT {} {}", p.display(), verdict.reason.map_or("unknown", |r| r.as_str()));
            }
            for w in &verdict.warnings {
                println!("  warning: {w}");
            }
        }
        println!("{accepted}/{total} accepted");
        Ok(())
    }

    pub fn audit_verify(&self, log: Option<&Path>, use_anchor: bool) -> Result<()> {
        let path = log.map(Path::to_path_buf).unwrap_or_else(|| self.paths().audit());
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let anchor = if use_anchor && self.paths().anchor().exists() { Some(Anchor::load(&self.paths().anchor())?) } else { None };
        let report = verify_chain(&bytes, &self.key()?, anchor.as_ref());
        match report.first_bad {
            None => println!("OK {} entries", report.entries),
            Some(i) => println!("TAMPERED first bad entry {i} ({} valid before it)", report.entries),
        }
        Ok(())
    }

    pub fn attack(&self, kind: AttackArg, trials: Option<usize>) -> Result<()> {
        let (dep, registry, ds) = self.deployment()?;
        let trials = trials.unwrap_or(self.cfg.attack.trials);
        let inputs = self.inputs(&ds)?;
        if inputs.is_empty() {
            bail!("no windows in split {}", self.cfg.run.split);
        }
        let pick = |i: usize| std::slice::from_ref(&inputs[i % inputs.len()]);
        let seed = self.cfg.run.seed;
        let kinds = match kind {
            AttackArg::Replay => vec![AttackKind::Replay],
            AttackArg::TamperThreshold => vec![AttackKind::TamperThreshold],
            AttackArg::Rollback => vec![AttackKind::Rollback],
            AttackArg::All => vec![AttackKind::Replay, AttackKind::TamperThreshold, AttackKind::Rollback],
        };
        let mut outcomes = Vec::new();
        for k in kinds {
            let mut out = Outcome::new(k);
            match k {
                AttackKind::Replay => {
                    let circuit = &registry.lookup(dep.h_theta())?.circuit;
                    for i in 0..trials {
                        let committed = commit_windows(&dep, pick(i), mix(seed, i as u64), dep.profile.tau_fp())?;
                        let p = prove_committed(circuit, &committed, 1, None, mix(seed, i as u64))?.remove(0);
                        let past = Archived { statements: p.statements, proof: p.proof };
                        let nonces = [Felt::new(mix(seed ^ 0xA5, i as u64))];
                        out.record(&attack_replay(&registry, &past, 1 + i as u64, &nonces)?);
                    }
                }
                AttackKind::TamperThreshold => {
                    let tau = self.cfg.attack.tampered_tau;
                    for i in 0..trials {
                        out.record(&attack_tamper_threshold(&dep, &registry, pick(i), tau, mix(seed, i as u64))?);
                    }
                }
                AttackKind::Rollback => {
                    let old = self.older_deployment(&dep, &ds)?;
                    for i in 0..trials {
                        out.record(&attack_rollback(&old, &registry, pick(i), mix(seed, i as u64))?);
                    }
                }
            }
            for (reason, n) in &out.reasons {
                println!("REJECT {} {reason} x{n}", k.as_str());
            }
            println!("attack {}: attempted {}, accepted {}", k.as_str(), out.attempted, out.accepted);
            outcomes.push(out);
        }
        write_json(&self.paths().attack(), &outcomes)
    }

    /// A previous build of the model: the same float weights quantized on a
    /// different calibration set, with its own calibration.
    fn older_deployment(&self, current: &Deployment, ds: &Dataset) -> Result<Deployment> {
        let n = (self.cfg.build.calib_windows / 2).max(1);
        let qm = pipeline::quantize(&self.float()?, ds, n)?;
        if qm.h_theta() == current.h_theta() {
            bail!("older build hashes like the registered model");
        }
        let val = Scores::of(&qm, &pipeline::standardized(ds, "val")?)?;
        let b = &self.cfg.build;
        let cal = calibrate_scores(&qm, &val, b.lambda, b.ece_bins, current.profile.dataset_checksum())?;
        Ok(Deployment::new(qm, ds.stats.clone(), cal.profile, current.tree.clone())?)
    }
}
