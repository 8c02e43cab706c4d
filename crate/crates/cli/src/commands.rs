use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use outfit_rank::dataset::{
    generate_synthetic, load_dataset, sample_quadruplets, split_dataset, write_dataset, Dataset, SynthSpec,
};
use outfit_rank::eval::{auc, baseline_score, mrr, rank_candidates, BaselineKind, MetricsReport, Scorer};
use outfit_rank::interpret::{attribute_correlation, emit_reports, explain_user, CartConfig, CorrelationQuery, Reports};
use outfit_rank::model::{checkpoint_digest, fused_gradcheck, load_checkpoint, Architecture, FrozenModel, ModalityMask, ScoreBreakdown};
use outfit_rank::train::{self, TrainConfig, MANIFEST_FILE, MODEL_FILE};

use crate::{BaselineArg, DataArgs, EvalArgs, ExplainArgs, GenArgs, GradcheckArgs, MaskArg, Preset, RankArgs, TrainArgs};

/// Problems with flags or config files; reported with exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn error_class(e: &anyhow::Error) -> &'static str {
    if e.downcast_ref::<ConfigError>().is_some() {
        return "config";
    }
    match e.chain().find_map(|c| c.downcast_ref::<outfit_rank::Error>()) {
        Some(core) => core.class(),
        None => "runtime",
    }
}

const SCHEMA_FILE: &str = "schema.json";
const ITEMS_FILE: &str = "items.jsonl";
const USERS_FILE: &str = "users.jsonl";
const TRAIN_USERS_FILE: &str = "train_users.jsonl";
const TEST_USERS_FILE: &str = "test_users.jsonl";
const TRUTH_FILE: &str = "truth.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    spec.users = a.users;
    spec.tops = a.tops;
    spec.bottoms = a.bottoms;
    spec.outfits_per_user = a.outfits;
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    let (data, truth) = generate_synthetic(&spec, a.seed)?;
    let (train, test) = split_dataset(&data, a.train_fraction, a.seed)?;
    create_out(&a.out)?;
    let (items, schema) = (a.out.join(ITEMS_FILE), a.out.join(SCHEMA_FILE));
    write_dataset(&data, &items, &a.out.join(USERS_FILE), &schema)?;
    write_dataset(&train, &items, &a.out.join(TRAIN_USERS_FILE), &schema)?;
    write_dataset(&test, &items, &a.out.join(TEST_USERS_FILE), &schema)?;
    write_json(&a.out.join(TRUTH_FILE), &truth)?;
    println!(
        "users={} tops={} bottoms={} outfits={} train={} test={}",
        data.n_users(),
        data.n_tops(),
        data.n_bottoms(),
        data.total_outfits(),
        train.total_outfits(),
        test.total_outfits()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_split(d: &DataArgs, users: &Path) -> Result<Dataset> {
    Ok(load_dataset(&d.data.join(ITEMS_FILE), users, &d.data.join(SCHEMA_FILE))?)
}

fn load_train(d: &DataArgs) -> Result<Dataset> {
    load_split(d, &d.train_users.clone().unwrap_or_else(|| d.data.join(TRAIN_USERS_FILE)))
}

/// The test split, when one is given or present next to the items.
fn load_test(d: &DataArgs) -> Result<Option<Dataset>> {
    match &d.test_users {
        Some(p) => load_split(d, p).map(Some),
        None => {
            let p = d.data.join(TEST_USERS_FILE);
            if p.exists() {
                load_split(d, &p).map(Some)
            } else {
                Ok(None)
            }
        }
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { c.$field = v; })*};
    }
    set!(epochs, batch_size, learning_rate, seed, mu, lambda_reg, latent_dim, negatives_per_positive, checkpoint_every, eval_every);
    if let Some(m) = a.mask {
        c.modality_mask = match m {
            MaskArg::Full => ModalityMask::FULL,
            MaskArg::VisualOnly => ModalityMask::VISUAL_ONLY,
            MaskArg::TextOnly => ModalityMask::TEXT_ONLY,
        };
    }
    if let Some(p) = a.preset {
        c.architecture = match p {
            Preset::Standard => Architecture::default(),
            Preset::Desk => Architecture::desk(),
        };
    }
    c.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(c)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let config = train_config(&a)?;
    let train_data = load_train(&a.data)?;
    let valid = load_test(&a.data)?;
    create_out(&a.out)?;
    let outcome = match &a.resume {
        Some(ckpt) => train::resume(ckpt, &train_data, valid.as_ref(), config, Some(&a.out))?,
        None => train::train(&train_data, valid.as_ref(), config, Some(&a.out))?,
    };
    for s in &outcome.history {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        println!(
            "epoch={} train_loss={} probe_loss={:.6} valid_auc={}",
            s.epoch,
            fmt(s.train_loss),
            s.probe_loss,
            fmt(s.valid_auc)
        );
    }
    println!("checkpoint={}", a.out.join(MODEL_FILE).display());
    println!("manifest={}", a.out.join(MANIFEST_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn baseline_kind(b: BaselineArg) -> BaselineKind {
    match b {
        BaselineArg::PopT => BaselineKind::PopT,
        BaselineArg::PopU => BaselineKind::PopU,
        BaselineArg::Rand => BaselineKind::Rand,
    }
}

fn report(
    name: &str,
    scorer: &dyn Scorer,
    test: &Dataset,
    a: &EvalArgs,
    digest: Option<String>,
) -> Result<MetricsReport> {
    let quads = sample_quadruplets(test, a.negatives, a.seed)?;
    let m = mrr(scorer, test, a.candidates, a.seed)?;
    Ok(MetricsReport {
        scorer: name.to_string(),
        auc: auc(scorer, &quads)?,
        mrr: m.mrr,
        candidates: a.candidates,
        n_quadruplets: quads.len(),
        n_queries: m.n_queries,
        seed: a.seed,
        checkpoint_sha256: digest,
    })
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    if a.candidates < 2 {
        return Err(config_error("--candidates must be at least 2"));
    }
    if a.negatives == 0 {
        return Err(config_error("--negatives must be at least 1"));
    }
    let train_data = load_train(&a.data)?;
    let test = load_test(&a.data)?.ok_or_else(|| config_error("no test split found; pass --test-users"))?;
    let mut reports = Vec::new();
    if a.baseline.is_none() {
        if let Some(path) = &a.checkpoint {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let ckpt = load_checkpoint(path)?;
            let model = FrozenModel::new(&ckpt.params, &test)?;
            reports.push(report("model", &model, &test, &a, Some(checkpoint_digest(&bytes)))?);
        }
    }
    let kinds = match a.baseline {
        Some(b) => vec![baseline_kind(b)],
        None => vec![BaselineKind::PopT, BaselineKind::PopU, BaselineKind::Rand],
    };
    for k in kinds {
        let scorer = baseline_score(k, &train_data, a.seed);
        reports.push(report(k.name(), &scorer, &test, &a, None)?);
    }
    println!("{:<8} {:>8} {:>8} {:>6} {:>8}", "scorer", "AUC", "MRR", "T", "quads");
    for r in &reports {
        println!(
            "{:<8} {:>8.4} {:>8.4} {:>6} {:>8}",
            r.scorer, r.auc, r.mrr, r.candidates, r.n_quadruplets
        );
    }
    create_out(&a.out)?;
    write_json(&a.out.join("metrics.json"), &reports)?;
    Ok(ExitCode::SUCCESS)
}

fn user_index(d: &Dataset, id: &str) -> Result<usize> {
    d.user_index(id).ok_or_else(|| config_error(format!("unknown user {id:?}")))
}

fn top_index(d: &Dataset, id: &str) -> Result<usize> {
    d.top_index(id).ok_or_else(|| config_error(format!("unknown top {id:?}")))
}

#[derive(Serialize)]
struct RankedBottom {
    rank: usize,
    bottom_id: String,
    #[serde(flatten)]
    breakdown: ScoreBreakdown,
}

#[derive(Serialize)]
struct RankingFile {
    user_id: String,
    top_id: String,
    candidates: Vec<RankedBottom>,
}

pub fn rank(a: RankArgs) -> Result<ExitCode> {
    let data = load_train(&a.data)?;
    let (m, i) = (user_index(&data, &a.user)?, top_index(&data, &a.top)?);
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = FrozenModel::new(&ckpt.params, &data)?;
    let all: Vec<usize> = (0..data.n_bottoms()).collect();
    let ranking = rank_candidates(&model, &data, m, i, &all, None);
    let candidates = ranking
        .candidates
        .iter()
        .enumerate()
        .map(|(r, c)| {
            Ok(RankedBottom {
                rank: r + 1,
                bottom_id: c.bottom_id.clone(),
                breakdown: model.breakdown(m, i, c.bottom)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    println!("user={} top={} mu={}", a.user, a.top, ckpt.params.config.mu);
    println!("{:>4} {:<12} {:>10} {:>10} {:>10}", "rank", "bottom", "p", "s", "c");
    for c in candidates.iter().take(a.limit) {
        let b = &c.breakdown;
        println!(
            "{:>4} {:<12} {:>10.5} {:>10.5} {:>10.5}",
            c.rank, c.bottom_id, b.p_mij, b.s_ij, b.c_mj
        );
    }
    create_out(&a.out)?;
    write_json(
        &a.out.join("ranking.json"),
        &RankingFile {
            user_id: a.user,
            top_id: a.top,
            candidates,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn explain(a: ExplainArgs) -> Result<ExitCode> {
    let data = load_train(&a.data)?;
    let m = user_index(&data, &a.user)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = FrozenModel::new(&ckpt.params, &data)?;
    let cart = CartConfig {
        max_depth: a.max_depth,
        min_samples_split: a.min_samples_split,
    };
    let importance = explain_user(&model, &data, m, a.samples, a.seed, cart)?;
    let history = data.user_outfits(m);
    let top = match &a.top {
        Some(id) => top_index(&data, id)?,
        None => history.first().map(|o| o.top).ok_or_else(|| anyhow!("user {} has no outfits", a.user))?,
    };
    let all: Vec<usize> = (0..data.n_bottoms()).collect();
    let bottoms: Vec<usize> = rank_candidates(&model, &data, m, top, &all, None)
        .candidates
        .iter()
        .take(a.bottoms)
        .map(|c| c.bottom)
        .collect();
    let mut context: Vec<usize> = history.iter().map(|o| o.top).filter(|&t| t != top).collect();
    context.sort_unstable();
    context.dedup();
    let query = CorrelationQuery {
        context_tops: context,
        top_k: a.top_k,
        bottom_k: a.bottom_k,
        ..CorrelationQuery::new(m, top, bottoms)
    };
    let correlation = attribute_correlation(&model, &data, &query)?;
    println!("top importances for user {}:", a.user);
    for (f, w) in importance.ranked(10) {
        let l = &importance.labels[f];
        println!("  {:<4} {:<10} {:<16} {:.4}", l.role.name(), l.group, l.element, w);
    }
    let sums = correlation.column_sums();
    if let Some(c) = (0..sums.len()).max_by(|&x, &y| sums[x].total_cmp(&sums[y]).then(y.cmp(&x))) {
        println!("strongest bottom element: {} (column sum {:.4})", correlation.col_labels[c], sums[c]);
    }
    let written = emit_reports(
        &Reports {
            importance: Some(importance),
            correlation: Some(correlation),
        },
        &a.out,
    )?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GradcheckRow {
    seed: u64,
    max_relative_error: f64,
    worst: Option<String>,
    n_params: usize,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for k in 0..a.instances {
        let seed = a.seed + k;
        let r = fused_gradcheck(seed)?;
        println!(
            "seed={seed} params={} max_relative_error={:.3e}",
            r.n_params, r.max_relative_error
        );
        worst = worst.max(r.max_relative_error);
        rows.push(GradcheckRow {
            seed,
            max_relative_error: r.max_relative_error,
            worst: r.worst.map(|(name, i)| format!("{name}[{i}]")),
            n_params: r.n_params,
        });
    }
    if let Some(out) = &a.out {
        create_out(out)?;
        write_json(&out.join("gradcheck.json"), &rows)?;
    }
    let pass = worst < a.tolerance;
    println!("max_relative_error={worst:.3e} tolerance={:e} {}", a.tolerance, if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
