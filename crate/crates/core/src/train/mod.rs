//! Mini-batch SGD over BPR quadruplets with seeded shuffling, scheduled
//! checkpoints, exact resume and a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{dataset_digest, sample_quadruplets, Dataset, Quadruplet};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::model::{
    checkpoint_bytes, checkpoint_digest, load_checkpoint, Architecture, FrozenModel, ModalityMask, ModelConfig, ModelParams,
};
use crate::rng::{self, Rng, RngState};

/// Stream labels for seeds derived from `TrainConfig::seed`.
const INIT_STREAM: u64 = 0x696e_6974;
const TRAIN_STREAM: u64 = 0x7472_6169;
const VALID_STREAM: u64 = 0x7661_6c69;
const PROBE_STREAM: u64 = 0x7072_6f62;

/// Quadruplets in the fixed training probe used for the per-epoch loss.
const PROBE_SIZE: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total epochs; on resume, training continues until this many are done.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub mu: f64,
    pub lambda_reg: f64,
    pub latent_dim: usize,
    pub modality_mask: ModalityMask,
    /// Write `checkpoints/epoch_NNNN.ckpt` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    /// Validation AUC every this many epochs; the last epoch is always
    /// evaluated.
    pub eval_every: usize,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.05,
            seed: 0,
            negatives_per_positive: 1,
            mu: 0.5,
            lambda_reg: 1e-4,
            latent_dim: 20,
            modality_mask: ModalityMask::FULL,
            checkpoint_every: 0,
            eval_every: 1,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives_per_positive", self.negatives_per_positive),
            ("latent_dim", self.latent_dim),
            ("eval_every", self.eval_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !self.modality_mask.visual && !self.modality_mask.text {
            return Err(Error::InvalidConfig("at least one modality must be enabled".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            attr_dim: data.schema().total_dim(),
            n_users: data.n_users(),
            n_bottoms: data.n_bottoms(),
            latent_dim: self.latent_dim,
            mu: self.mu,
            lambda_reg: self.lambda_reg,
            modality_mask: self.modality_mask,
            architecture: self.architecture.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over this epoch's SGD batches (absent for epoch 0).
    pub train_loss: Option<f64>,
    /// Loss on the fixed training probe after the epoch.
    pub probe_loss: f64,
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedRng {
    seed: [u8; 32],
    stream: u64,
    word_pos_hi: u64,
    word_pos_lo: u64,
}

impl From<RngState> for SavedRng {
    fn from(s: RngState) -> Self {
        SavedRng {
            seed: s.seed,
            stream: s.stream,
            word_pos_hi: (s.word_pos >> 64) as u64,
            word_pos_lo: s.word_pos as u64,
        }
    }
}

impl From<&SavedRng> for RngState {
    fn from(s: &SavedRng) -> Self {
        RngState {
            seed: s.seed,
            stream: s.stream,
            word_pos: ((s.word_pos_hi as u128) << 64) | s.word_pos_lo as u128,
        }
    }
}

/// Trainer state stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainState {
    config: TrainConfig,
    train_sha256: String,
    epochs_completed: usize,
    rng: SavedRng,
    history: Vec<EpochStats>,
}

/// Run summary written to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub train_sha256: String,
    pub valid_sha256: Option<String>,
    pub topology: String,
    pub history: Vec<EpochStats>,
    pub checkpoint_sha256: String,
}

pub struct Trainer<'a> {
    train: &'a Dataset,
    valid: Option<&'a Dataset>,
    config: TrainConfig,
    params: ModelParams,
    rng: Rng,
    train_sha256: String,
    epochs_completed: usize,
    history: Vec<EpochStats>,
    probe: Vec<Quadruplet>,
    valid_quads: Vec<Quadruplet>,
}

fn fixed_sets(train: &Dataset, valid: Option<&Dataset>, config: &TrainConfig) -> Result<(Vec<Quadruplet>, Vec<Quadruplet>)> {
    let mut probe = sample_quadruplets(train, 1, rng::mix(config.seed, &[PROBE_STREAM]))?;
    probe.shuffle(&mut rng::seeded(rng::mix(config.seed, &[PROBE_STREAM, 1])));
    probe.truncate(PROBE_SIZE);
    if probe.is_empty() {
        return Err(Error::InvalidData("training set has no outfits".into()));
    }
    let valid_quads = match valid {
        Some(v) => sample_quadruplets(v, 1, rng::mix(config.seed, &[VALID_STREAM]))?,
        None => Vec::new(),
    };
    Ok((probe, valid_quads))
}

impl<'a> Trainer<'a> {
    /// Fresh run: seeded initialization, then epoch-0 statistics.
    pub fn new(train: &'a Dataset, valid: Option<&'a Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_split(train, valid)?;
        let params = ModelParams::new(
            config.model_config(train),
            &mut rng::seeded(rng::mix(config.seed, &[INIT_STREAM])),
        )?;
        let (probe, valid_quads) = fixed_sets(train, valid, &config)?;
        let mut trainer = Trainer {
            train,
            valid,
            rng: rng::seeded(rng::mix(config.seed, &[TRAIN_STREAM])),
            train_sha256: dataset_digest(train),
            config,
            params,
            epochs_completed: 0,
            history: Vec::new(),
            probe,
            valid_quads,
        };
        let stats = trainer.stats(0, None, true)?;
        trainer.history.push(stats);
        Ok(trainer)
    }

    /// Restores parameters, RNG position and history from a checkpoint.
    /// `config` may change the epoch target and optimization settings, but
    /// the topology must match.
    pub fn resume(checkpoint: &Path, train: &'a Dataset, valid: Option<&'a Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_split(train, valid)?;
        let ckpt = load_checkpoint(checkpoint)?;
        let state: TrainState = ckpt
            .state
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))
            .and_then(|s| {
                serde_json::from_value(s).map_err(|e| Error::Checkpoint(format!("training state: {e}")))
            })?;
        let mut params = ckpt.params;
        let wanted = config.model_config(train);
        if wanted.topology() != params.config.topology() {
            return Err(Error::Topology(format!(
                "checkpoint has {}, configuration needs {}",
                params.config.topology(),
                wanted.topology()
            )));
        }
        if wanted.architecture != params.config.architecture {
            return Err(Error::InvalidConfig(
                "architecture settings differ from the checkpoint".into(),
            ));
        }
        params.config = wanted;
        let train_sha256 = dataset_digest(train);
        if train_sha256 != state.train_sha256 {
            return Err(Error::InvalidData("training data differs from the checkpointed run".into()));
        }
        let (probe, valid_quads) = fixed_sets(train, valid, &config)?;
        Ok(Trainer {
            train,
            valid,
            config,
            params,
            rng: RngState::from(&state.rng).restore(),
            train_sha256,
            epochs_completed: state.epochs_completed,
            history: state.history,
            probe,
            valid_quads,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    fn stats(&self, epoch: usize, train_loss: Option<f64>, eval: bool) -> Result<EpochStats> {
        let probe_loss = self.params.batch_loss(&self.probe, self.train)?;
        let valid_auc = match self.valid {
            Some(v) if eval && !self.valid_quads.is_empty() => {
                Some(auc(&FrozenModel::new(&self.params, v)?, &self.valid_quads)?)
            }
            _ => None,
        };
        Ok(EpochStats {
            epoch,
            train_loss,
            probe_loss,
            valid_auc,
        })
    }

    pub fn run_epoch(&mut self) -> Result<&EpochStats> {
        let epoch = self.epochs_completed + 1;
        let epoch_seed: u64 = self.rng.random();
        let mut quads = sample_quadruplets(self.train, self.config.negatives_per_positive, epoch_seed)?;
        quads.shuffle(&mut rng::seeded(rng::mix(epoch_seed, &[1])));
        let mut total = 0.0;
        for (b, batch) in quads.chunks(self.config.batch_size).enumerate() {
            let loss = self.params.bpr_loss(batch, self.train).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            self.params.sgd_step(self.config.learning_rate);
            total += loss * batch.len() as f64;
        }
        self.epochs_completed = epoch;
        let eval = epoch % self.config.eval_every == 0 || epoch >= self.config.epochs;
        let stats = self.stats(epoch, Some(total / quads.len() as f64), eval)?;
        self.history.push(stats);
        Ok(self.history.last().expect("just pushed"))
    }

    fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            train_sha256: self.train_sha256.clone(),
            epochs_completed: self.epochs_completed,
            rng: RngState::capture(&self.rng).into(),
            history: self.history.clone(),
        }
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let state = serde_json::to_value(self.state()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        checkpoint_bytes(&self.params, Some(&state))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_file(path, &self.checkpoint_bytes()?)
    }

    /// Trains up to `config.epochs`, writing scheduled checkpoints, the final
    /// checkpoint `model.ckpt` and `manifest.json` under `out_dir`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        while self.epochs_completed < self.config.epochs {
            self.run_epoch()?;
            let e = self.epochs_completed;
            if let Some(dir) = out_dir {
                if self.config.checkpoint_every > 0 && e % self.config.checkpoint_every == 0 {
                    self.save_checkpoint(&dir.join("checkpoints").join(format!("epoch_{e:04}.ckpt")))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            let bytes = self.checkpoint_bytes()?;
            write_file(&dir.join(MODEL_FILE), &bytes)?;
            let manifest = RunManifest {
                config: self.config.clone(),
                seed: self.config.seed,
                train_sha256: self.train_sha256.clone(),
                valid_sha256: self.valid.map(dataset_digest),
                topology: self.params.config.topology(),
                history: self.history.clone(),
                checkpoint_sha256: checkpoint_digest(&bytes),
            };
            let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
            text.push('\n');
            write_file(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        }
        Ok(())
    }
}

pub const MODEL_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_split(train: &Dataset, valid: Option<&Dataset>) -> Result<()> {
    if let Some(v) = valid {
        if v.n_users() != train.n_users() || v.n_bottoms() != train.n_bottoms() || v.n_tops() != train.n_tops() {
            return Err(Error::InvalidData(
                "validation set must share the training set's users and items".into(),
            ));
        }
    }
    Ok(())
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Fresh training run.
pub fn train(train: &Dataset, valid: Option<&Dataset>, config: TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(train, valid, config)?;
    t.run(out_dir)?;
    Ok(TrainOutcome {
        history: t.history.clone(),
        params: t.into_params(),
    })
}

/// Continues a checkpointed run until `config.epochs`.
pub fn resume(
    checkpoint: &Path,
    train: &Dataset,
    valid: Option<&Dataset>,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::resume(checkpoint, train, valid, config)?;
    t.run(out_dir)?;
    Ok(TrainOutcome {
        history: t.history.clone(),
        params: t.into_params(),
    })
}

/// Path of the final checkpoint inside an output directory.
pub fn model_path(out_dir: &Path) -> PathBuf {
    out_dir.join(MODEL_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_dataset, SynthSpec};
    use crate::eval::Scorer;
    use crate::nnet::Parameterized;

    fn small_arch() -> Architecture {
        Architecture {
            hidden: vec![16, 8],
            maps_per_width: 4,
            text_dim: 8,
            embed_dim: 32,
            l_max: 10,
            ..Architecture::default()
        }
    }

    fn data(seed: u64) -> (Dataset, Dataset) {
        let spec = SynthSpec {
            users: 10,
            tops: 20,
            bottoms: 20,
            outfits_per_user: 5,
            noise: 0.0,
            ..SynthSpec::default()
        };
        let (d, _) = generate_synthetic(&spec, seed).unwrap();
        split_dataset(&d, 0.8, seed).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 11,
            latent_dim: 4,
            architecture: small_arch(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (tr, va) = data(1);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..config() };
        let mut t = Trainer::new(&tr, Some(&va), cfg).unwrap();
        let before = t.params().clone();
        t.run(None).unwrap();
        let mut a = Vec::new();
        before.visit_params(&mut |_, v, _| a.push(v.clone()));
        let mut i = 0;
        t.params().visit_params(&mut |_, v, _| {
            assert_eq!(*v, a[i]);
            i += 1;
        });
    }

    #[test]
    fn loss_descends_on_fifty_outfits() {
        let (tr, va) = data(2);
        assert_eq!(tr.total_outfits() + va.total_outfits(), 50);
        let out = train(&tr, Some(&va), TrainConfig { learning_rate: 0.2, ..config() }, None).unwrap();
        assert_eq!(out.history.len(), 3);
        assert!(out.history[2].probe_loss < out.history[0].probe_loss, "{:?}", out.history);
    }

    #[test]
    fn identical_runs_identical_bytes() {
        let (tr, va) = data(3);
        let mut a = Trainer::new(&tr, Some(&va), config()).unwrap();
        let mut b = Trainer::new(&tr, Some(&va), config()).unwrap();
        a.run(None).unwrap();
        b.run(None).unwrap();
        assert_eq!(a.checkpoint_bytes().unwrap(), b.checkpoint_bytes().unwrap());
    }

    #[test]
    fn split_run_matches_straight_run() {
        let (tr, va) = data(4);
        let dir = tempfile::tempdir().unwrap();
        let straight = dir.path().join("straight");
        let part = dir.path().join("part");
        Trainer::new(&tr, Some(&va), TrainConfig { epochs: 4, ..config() })
            .unwrap()
            .run(Some(&straight))
            .unwrap();
        Trainer::new(&tr, Some(&va), TrainConfig { epochs: 2, ..config() })
            .unwrap()
            .run(Some(&part))
            .unwrap();
        let resumed = dir.path().join("resumed");
        resume(&model_path(&part), &tr, Some(&va), TrainConfig { epochs: 4, ..config() }, Some(&resumed)).unwrap();
        assert_eq!(fs::read(model_path(&straight)).unwrap(), fs::read(model_path(&resumed)).unwrap());
        assert_eq!(
            fs::read(straight.join(MANIFEST_FILE)).unwrap(),
            fs::read(resumed.join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn resume_without_extra_epochs_keeps_scores() {
        let (tr, va) = data(5);
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(&tr, Some(&va), config()).unwrap();
        t.run(Some(dir.path())).unwrap();
        let r = Trainer::resume(&model_path(dir.path()), &tr, Some(&va), config()).unwrap();
        let (a, b) = (FrozenModel::new(t.params(), &va).unwrap(), FrozenModel::new(r.params(), &va).unwrap());
        for q in &t.valid_quads {
            assert_eq!(a.score(q.user, q.top, q.neg).to_bits(), b.score(q.user, q.top, q.neg).to_bits());
        }
        assert_eq!(r.epochs_completed(), 2);
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let (tr, va) = data(6);
        let dir = tempfile::tempdir().unwrap();
        train(&tr, Some(&va), TrainConfig { latent_dim: 20, ..config() }, Some(dir.path())).unwrap();
        let err = Trainer::resume(&model_path(dir.path()), &tr, Some(&va), TrainConfig { latent_dim: 32, ..config() })
            .err()
            .unwrap();
        assert!(matches!(err, Error::Topology(_)), "{err}");
    }

    #[test]
    fn scheduled_checkpoints_and_manifest() {
        let (tr, va) = data(7);
        let dir = tempfile::tempdir().unwrap();
        train(&tr, Some(&va), TrainConfig { epochs: 4, checkpoint_every: 2, ..config() }, Some(dir.path())).unwrap();
        assert!(dir.path().join("checkpoints/epoch_0002.ckpt").exists());
        assert!(dir.path().join("checkpoints/epoch_0004.ckpt").exists());
        let m: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.history.len(), 5);
        assert_eq!(m.train_sha256, dataset_digest(&tr));
    }

    #[test]
    fn config_from_toml() {
        let cfg: TrainConfig = toml::from_str(
            "epochs = 3\nmu = 0.25\n[modality_mask]\nvisual = true\ntext = false\n[architecture]\nhidden = [32]\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.modality_mask, ModalityMask::VISUAL_ONLY);
        assert_eq!(cfg.architecture.hidden, vec![32]);
        assert_eq!(cfg.architecture.text_dim, 512);
        assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    }
}
