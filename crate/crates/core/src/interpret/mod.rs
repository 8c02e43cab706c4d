//! Attribute-level explanations of a scorer: regression-tree importances over
//! quadruplet attribute vectors, and element co-activation correlations.

mod cart;
mod correlation;

pub use cart::{fit_cart, CartConfig, RegressionTree, TreeNode};
pub use correlation::{attribute_correlation, CorrelationMatrix, CorrelationQuery};

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Top,
    Pos,
    Neg,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Top => "top",
            Role::Pos => "pos",
            Role::Neg => "neg",
        }
    }
}

/// Meaning of one CART input column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLabel {
    pub role: Role,
    pub dim: usize,
    pub group: String,
    pub element: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub user: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub labels: Vec<FeatureLabel>,
    pub importances: Vec<f64>,
    pub tree: Vec<TreeNode>,
}

impl ImportanceReport {
    /// The `k` most important features with nonzero importance, ties to the
    /// lower index.
    pub fn ranked(&self, k: usize) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .importances
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Samples `n_samples` quadruplets from user `user`'s history and fits a
/// regression tree from `[attr(top); attr(pos); attr(neg)]` to the score
/// difference `p(pos) - p(neg)`.
pub fn explain_user(
    scorer: &dyn Scorer,
    data: &Dataset,
    user: usize,
    n_samples: usize,
    seed: u64,
    cart: CartConfig,
) -> Result<ImportanceReport> {
    if user >= data.n_users() {
        return Err(Error::IndexOutOfRange(format!("user {user} of {}", data.n_users())));
    }
    let history = data.user_outfits(user);
    if history.is_empty() {
        return Err(Error::InvalidData(format!("user {user} has no outfits")));
    }
    let n_b = data.n_bottoms();
    if n_b < 2 {
        return Err(Error::InvalidData("explanations need at least 2 bottoms".into()));
    }
    let mut r = rng::seeded(seed);
    let mut inputs = Vec::with_capacity(n_samples);
    let mut targets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let o = history[r.random_range(0..history.len())];
        let k = r.random_range(0..n_b - 1);
        let neg = if k >= o.bottom { k + 1 } else { k };
        let mut x = data.top(o.top).attr_vec.clone();
        x.extend_from_slice(&data.bottom(o.bottom).attr_vec);
        x.extend_from_slice(&data.bottom(neg).attr_vec);
        inputs.push(x);
        targets.push(scorer.score(user, o.top, o.bottom) - scorer.score(user, o.top, neg));
    }
    let tree = fit_cart(&inputs, &targets, cart)?;
    let schema = data.schema();
    let labels = [Role::Top, Role::Pos, Role::Neg]
        .iter()
        .flat_map(|&role| {
            (0..schema.total_dim()).map(move |dim| {
                let l = schema.label(dim).expect("dimension inside schema");
                FeatureLabel {
                    role,
                    dim,
                    group: l.group,
                    element: l.element,
                }
            })
        })
        .collect();
    Ok(ImportanceReport {
        user,
        n_samples,
        seed,
        labels,
        importances: tree.importances,
        tree: tree.nodes,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Reports {
    pub importance: Option<ImportanceReport>,
    pub correlation: Option<CorrelationMatrix>,
}

pub const CORRELATION_FILE: &str = "correlation.csv";
pub const IMPORTANCE_FILE: &str = "importance.json";

/// Writes `correlation.csv` (tops on rows, bottom elements as columns) and
/// `importance.json` under `out_dir`; returns the paths written.
pub fn emit_reports(reports: &Reports, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.importance.is_none() && reports.correlation.is_none() {
        return Err(Error::InvalidData("no reports to write".into()));
    }
    if let Some(m) = &reports.correlation {
        if m.is_empty() {
            return Err(Error::InvalidData("correlation matrix is empty".into()));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if let Some(m) = &reports.correlation {
        let path = out_dir.join(CORRELATION_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let header = std::iter::once("top\\bottom".to_string()).chain(m.col_labels.iter().cloned());
        w.write_record(header).map_err(|e| csv_error(&path, e))?;
        for (label, row) in m.row_labels.iter().zip(&m.values) {
            let cells = std::iter::once(label.clone()).chain(row.iter().map(|v| v.to_string()));
            w.write_record(cells).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if let Some(r) = &reports.importance {
        let path = out_dir.join(IMPORTANCE_FILE);
        let mut text = serde_json::to_string_pretty(r).map_err(|e| Error::InvalidData(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    malformed(path, line, e.to_string())
}

fn malformed(path: &Path, line: usize, message: String) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Reads back a matrix written by [`emit_reports`]: row labels, column
/// labels and values.
pub fn read_correlation_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let cols: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().skip(1).map(String::from).collect();
    let (mut rows, mut values) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| malformed(path, line, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != cols.len() {
            return Err(malformed(path, line, "ragged row".into()));
        }
        values.push(row);
    }
    Ok((rows, cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthSpec};

    fn data() -> Dataset {
        let spec = SynthSpec {
            users: 3,
            tops: 40,
            bottoms: 40,
            outfits_per_user: 20,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec, 9).unwrap().0
    }

    struct BottomElement<'a>(&'a Dataset, usize);

    impl Scorer for BottomElement<'_> {
        fn score(&self, _: usize, _: usize, j: usize) -> f64 {
            self.0.bottom(j).attr_vec[self.1]
        }
    }

    struct Constant;

    impl Scorer for Constant {
        fn score(&self, _: usize, _: usize, _: usize) -> f64 {
            0.7
        }
    }

    #[test]
    fn single_bottom_element_is_top_feature() {
        let d = data();
        let dim = 11;
        let r = explain_user(&BottomElement(&d, dim), &d, 1, 300, 4, CartConfig::default()).unwrap();
        let (best, _) = r.ranked(1)[0];
        let label = &r.labels[best];
        assert!(matches!(label.role, Role::Pos | Role::Neg), "{label:?}");
        assert_eq!(label.dim, dim);
        assert_eq!(label.element, "style_3");
        assert_eq!(r.labels.len(), 3 * d.schema().total_dim());
    }

    #[test]
    fn constant_scorer_gives_zero_importances() {
        let d = data();
        let r = explain_user(&Constant, &d, 0, 100, 1, CartConfig::default()).unwrap();
        assert_eq!(r.tree.len(), 1);
        assert!(r.importances.iter().all(|&v| v == 0.0));
        assert!(r.ranked(3).is_empty());
    }

    #[test]
    fn same_seed_same_report() {
        let d = data();
        let s = BottomElement(&d, 3);
        let a = explain_user(&s, &d, 2, 200, 8, CartConfig::default()).unwrap();
        let b = explain_user(&s, &d, 2, 200, 8, CartConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_user_is_rejected() {
        let d = data();
        assert!(explain_user(&Constant, &d, 3, 100, 1, CartConfig::default()).is_err());
    }

    #[test]
    fn emitted_matrix_round_trips() {
        let d = data();
        let s = BottomElement(&d, 9);
        let q = CorrelationQuery {
            context_tops: (1..10).collect(),
            ..CorrelationQuery::new(0, 0, (0..25).collect())
        };
        let m = attribute_correlation(&s, &d, &q).unwrap();
        let importance = explain_user(&s, &d, 0, 100, 2, CartConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_reports(
            &Reports {
                importance: Some(importance.clone()),
                correlation: Some(m.clone()),
            },
            dir.path(),
        )
        .unwrap();
        assert_eq!(paths.len(), 2);
        let (rows, cols, values) = read_correlation_csv(&dir.path().join(CORRELATION_FILE)).unwrap();
        assert_eq!(rows, m.row_labels);
        assert_eq!(cols, m.col_labels);
        assert_eq!(values, m.values);
        let back: ImportanceReport =
            serde_json::from_slice(&fs::read(dir.path().join(IMPORTANCE_FILE)).unwrap()).unwrap();
        assert_eq!(back, importance);
    }

    #[test]
    fn empty_matrix_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let m = CorrelationMatrix {
            row_dims: vec![],
            col_dims: vec![1],
            row_labels: vec![],
            col_labels: vec!["x".into()],
            values: vec![],
            zero_variance: vec![],
            sample_count: 0,
        };
        let r = Reports {
            importance: None,
            correlation: Some(m),
        };
        assert!(emit_reports(&r, dir.path()).is_err());
        assert!(!dir.path().join(CORRELATION_FILE).exists());
        assert!(emit_reports(&Reports::default(), dir.path()).is_err());
    }
}
