//! Mutation-effect probing: difference features, a ridge probe fit on 80%
//! of the single mutants, Spearman per mutation-count bucket, and the
//! cross-model comparison tables.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distillation::{train_chain, TrainOptions};
use crate::error::{Error, Result};
use crate::inference::infer_chain_set;
use crate::numerics::{ridge_loocv, spearman};
use crate::store::{EmbeddingMatrix, EmbeddingSet};

pub const MIN_SINGLES: usize = 100;
pub const TRAIN_FRACTION: f64 = 0.8;

/// Nine log-spaced points from 1e-3 to 1e3.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-3.0 + 0.75 * i as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    /// 0-based residue index.
    pub position: usize,
    pub wt_aa: char,
    pub mut_aa: char,
}

impl Mutation {
    pub fn new(position: usize, wt_aa: char, mut_aa: char) -> Self {
        Self { position, wt_aa, mut_aa }
    }

    /// Parses `A123C` with a 1-based position.
    pub fn parse(token: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad mutation token {token:?}"));
        let mut chars = token.chars();
        let wt_aa = chars.next().filter(char::is_ascii_alphabetic).ok_or_else(bad)?;
        let mut_aa = chars.next_back().filter(char::is_ascii_alphabetic).ok_or_else(bad)?;
        let pos: usize = chars.as_str().parse().map_err(|_| bad())?;
        if pos == 0 {
            return Err(bad());
        }
        Ok(Self::new(pos - 1, wt_aa, mut_aa))
    }

    pub fn token(&self) -> String {
        format!("{}{}{}", self.wt_aa, self.position + 1, self.mut_aa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub mutations: Vec<Mutation>,
    pub score: f64,
    pub mut_seq_id: String,
}

impl Variant {
    pub fn mutant_code(&self) -> String {
        self.mutations.iter().map(Mutation::token).collect::<Vec<_>>().join(":")
    }

    pub fn positions(&self) -> Vec<usize> {
        self.mutations.iter().map(|m| m.position).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmsDataset {
    pub name: String,
    pub wt_seq_id: String,
    pub variants: Vec<Variant>,
}

impl DmsDataset {
    pub fn n_singles(&self) -> usize {
        self.variants.iter().filter(|v| v.mutations.len() == 1).count()
    }

    /// Checks per-variant invariants against a wild type of length `wt_len`.
    pub fn validate_shape(&self, wt_len: usize) -> Result<()> {
        let mut ids = HashSet::new();
        for v in &self.variants {
            if v.mutations.is_empty() {
                return Err(Error::InvalidArgument(format!("{}: variant without mutations", v.mut_seq_id)));
            }
            if !ids.insert(v.mut_seq_id.as_str()) {
                return Err(Error::Duplicate(v.mut_seq_id.clone()));
            }
            let mut seen = HashSet::new();
            for m in &v.mutations {
                if m.position >= wt_len {
                    return Err(Error::InvalidArgument(format!(
                        "{}: position {} outside wild type of length {wt_len}",
                        v.mut_seq_id,
                        m.position + 1
                    )));
                }
                if !seen.insert(m.position) {
                    return Err(Error::InvalidArgument(format!(
                        "{}: position {} mutated twice",
                        v.mut_seq_id,
                        m.position + 1
                    )));
                }
            }
            if !v.score.is_finite() {
                return Err(Error::InvalidArgument(format!("{}: non-finite score", v.mut_seq_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    mutant: String,
    score: f64,
    mut_seq_id: String,
}

pub fn read_variants_csv(path: &Path) -> Result<Vec<Variant>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mutations = row
            .mutant
            .split(':')
            .map(|t| Mutation::parse(t.trim()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), line + 2)))?;
        out.push(Variant {
            mutations,
            score: row.score,
            mut_seq_id: row.mut_seq_id,
        });
    }
    Ok(out)
}

pub fn write_variants_csv(ds: &DmsDataset, path: &Path) -> Result<()> {
    let wrap = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["mutant", "score", "mut_seq_id"]).map_err(wrap)?;
    for v in &ds.variants {
        w.write_record([v.mutant_code(), format!("{:?}", v.score), v.mut_seq_id.clone()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// On-disk description of a DMS dataset: its variant CSV and one embedding
/// manifest per model level, all relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub name: String,
    pub wt_seq_id: String,
    pub csv: String,
    pub levels: IndexMap<String, String>,
}

impl DatasetFile {
    pub fn read(path: &Path) -> Result<(Self, DmsDataset)> {
        let file: DatasetFile = crate::artifact::read_json(path)?;
        let csv = file.resolve(path, &file.csv);
        let variants = read_variants_csv(&csv)?;
        let ds = DmsDataset {
            name: file.name.clone(),
            wt_seq_id: file.wt_seq_id.clone(),
            variants,
        };
        Ok((file, ds))
    }

    pub fn resolve(&self, dataset_path: &Path, rel: &str) -> PathBuf {
        let base = dataset_path.parent().unwrap_or_else(|| Path::new("."));
        base.join(rel)
    }

    /// Manifest path for `tag`.
    pub fn level_manifest(&self, dataset_path: &Path, tag: &str) -> Result<PathBuf> {
        self.levels
            .get(tag)
            .map(|rel| self.resolve(dataset_path, rel))
            .ok_or_else(|| Error::MissingLevel(tag.to_string()))
    }
}

/// Mean over `positions` of `mut.row(p) - wt.row(p)`.
pub fn variant_feature(wt: &EmbeddingMatrix, mutant: &EmbeddingMatrix, positions: &[usize]) -> Result<Vec<f64>> {
    if wt.k() != mutant.k() {
        return Err(Error::DimMismatch(format!(
            "{} has k={}, {} has k={}",
            wt.seq_id(),
            wt.k(),
            mutant.seq_id(),
            mutant.k()
        )));
    }
    if wt.n() != mutant.n() {
        return Err(Error::LengthMismatch(format!(
            "{} has n={}, {} has n={}",
            wt.seq_id(),
            wt.n(),
            mutant.seq_id(),
            mutant.n()
        )));
    }
    if positions.is_empty() {
        return Err(Error::InvalidArgument("no mutated positions".into()));
    }
    let mut acc = vec![0.0; wt.k()];
    for &p in positions {
        if p >= wt.n() {
            return Err(Error::InvalidArgument(format!(
                "position {p} outside sequence of length {}",
                wt.n()
            )));
        }
        for ((a, m), w) in acc.iter_mut().zip(mutant.row(p)).zip(wt.row(p)) {
            *a += *m as f64 - *w as f64;
        }
    }
    let n = positions.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub mutation_count: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub spearman: Option<f64>,
    /// Why `spearman` is undefined, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model_tag: String,
    pub split_seed: u64,
    pub alpha: f64,
    pub n_train: usize,
    /// Variants used to fit the probe, in split order.
    pub train_ids: Vec<String>,
    pub buckets: Vec<BucketResult>,
}

impl EvalReport {
    pub fn bucket(&self, mutation_count: usize) -> Option<&BucketResult> {
        self.buckets.iter().find(|b| b.mutation_count == mutation_count)
    }

    pub fn rho(&self, mutation_count: usize) -> Option<f64> {
        self.bucket(mutation_count).and_then(|b| b.spearman)
    }
}

pub fn eval_dms(ds: &DmsDataset, embeddings: &EmbeddingSet, alpha_grid: &[f64], split_seed: u64) -> Result<EvalReport> {
    let singles = ds.n_singles();
    if singles < MIN_SINGLES {
        return Err(Error::TooFewSingles {
            name: ds.name.clone(),
            count: singles,
            required: MIN_SINGLES,
        });
    }
    let wt = embeddings
        .get(&ds.wt_seq_id)
        .ok_or_else(|| Error::MissingEmbedding(ds.wt_seq_id.clone()))?;
    ds.validate_shape(wt.n())?;

    let k = embeddings.k();
    let mut features = DMatrix::zeros(ds.variants.len(), k);
    for (i, v) in ds.variants.iter().enumerate() {
        let mutant = embeddings
            .get(&v.mut_seq_id)
            .ok_or_else(|| Error::MissingEmbedding(v.mut_seq_id.clone()))?;
        let f = variant_feature(wt, mutant, &v.positions())?;
        features.row_mut(i).copy_from_slice(&f);
    }

    let mut single_idx: Vec<usize> = (0..ds.variants.len())
        .filter(|&i| ds.variants[i].mutations.len() == 1)
        .collect();
    single_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = (TRAIN_FRACTION * singles as f64).floor() as usize;
    let (train, held_out) = single_idx.split_at(n_train);

    let x_train = DMatrix::from_fn(n_train, k, |r, c| features[(train[r], c)]);
    let y_train: Vec<f64> = train.iter().map(|&i| ds.variants[i].score).collect();
    let fit = ridge_loocv(&x_train, &y_train, alpha_grid)?;

    let train_set: HashSet<usize> = train.iter().copied().collect();
    let counts: BTreeSet<usize> = ds.variants.iter().map(|v| v.mutations.len()).collect();
    let mut buckets = Vec::with_capacity(counts.len());
    for count in counts {
        let test: Vec<usize> = if count == 1 {
            held_out.to_vec()
        } else {
            (0..ds.variants.len())
                .filter(|&i| ds.variants[i].mutations.len() == count && !train_set.contains(&i))
                .collect()
        };
        let preds: Vec<f64> = test
            .iter()
            .map(|&i| fit.predict_row(features.row(i).clone_owned().as_slice()))
            .collect();
        let truth: Vec<f64> = test.iter().map(|&i| ds.variants[i].score).collect();
        let (rho, note) = if test.len() < 2 {
            (None, Some(format!("{} test variant(s); need at least 2", test.len())))
        } else {
            match spearman(&preds, &truth) {
                Ok(r) => (Some(r), None),
                Err(Error::UndefinedCorrelation(why)) => (None, Some(format!("undefined correlation: {why}"))),
                Err(e) => return Err(e),
            }
        };
        if let Some(n) = &note {
            log::warn!("{} / {}: {count}-mutation bucket undefined ({n})", ds.name, embeddings.model_tag());
        }
        buckets.push(BucketResult {
            mutation_count: count,
            n_train: if count == 1 { n_train } else { 0 },
            n_test: test.len(),
            spearman: rho,
            note,
        });
    }

    Ok(EvalReport {
        dataset: ds.name.clone(),
        model_tag: embeddings.model_tag().to_string(),
        split_seed,
        alpha: fit.alpha,
        n_train,
        train_ids: train.iter().map(|&i| ds.variants[i].mut_seq_id.clone()).collect(),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketComparison {
    pub mutation_count: usize,
    /// `win_rate[a][b]`: percentage of datasets (among those where both are
    /// defined) on which model `a` has strictly higher rho than model `b`.
    pub win_rate: Vec<Vec<Option<f64>>>,
    pub mean: Vec<Option<f64>>,
    /// Sample standard deviation; zero for a single dataset.
    pub std: Vec<Option<f64>>,
    pub n_datasets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub split_seed: u64,
    pub buckets: Vec<BucketComparison>,
}

pub fn compare_models(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.split_seed != first.split_seed) {
        return Err(Error::InvalidArgument(format!(
            "mixed split seeds: {} ({}/{}) vs {}",
            r.split_seed, r.model_tag, r.dataset, first.split_seed
        )));
    }
    let mut models: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for r in reports {
        if !models.contains(&r.model_tag) {
            models.push(r.model_tag.clone());
        }
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    let mut cells: IndexMap<(usize, usize), &EvalReport> = IndexMap::new();
    for r in reports {
        let key = (
            models.iter().position(|m| *m == r.model_tag).expect("collected"),
            datasets.iter().position(|d| *d == r.dataset).expect("collected"),
        );
        if cells.insert(key, r).is_some() {
            return Err(Error::Duplicate(format!("{} / {}", r.model_tag, r.dataset)));
        }
    }
    for (m, model) in models.iter().enumerate() {
        for (d, ds) in datasets.iter().enumerate() {
            if !cells.contains_key(&(m, d)) {
                return Err(Error::InvalidArgument(format!("missing report for {model} on {ds}")));
            }
        }
    }
    let counts: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.buckets.iter().map(|b| b.mutation_count))
        .collect();

    let nm = models.len();
    let buckets = counts
        .into_iter()
        .map(|count| {
            let rho = |m: usize, d: usize| cells[&(m, d)].rho(count);
            let mut win_rate = vec![vec![None; nm]; nm];
            for (a, row) in win_rate.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    if a == b {
                        continue;
                    }
                    let mut both = 0usize;
                    let mut wins = 0usize;
                    for d in 0..datasets.len() {
                        if let (Some(ra), Some(rb)) = (rho(a, d), rho(b, d)) {
                            both += 1;
                            wins += usize::from(ra > rb);
                        }
                    }
                    if both > 0 {
                        *cell = Some(100.0 * wins as f64 / both as f64);
                    }
                }
            }
            let mut mean = Vec::with_capacity(nm);
            let mut std = Vec::with_capacity(nm);
            let mut n_datasets = Vec::with_capacity(nm);
            for m in 0..nm {
                let vals: Vec<f64> = (0..datasets.len()).filter_map(|d| rho(m, d)).collect();
                n_datasets.push(vals.len());
                if vals.is_empty() {
                    mean.push(None);
                    std.push(None);
                    continue;
                }
                let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                mean.push(Some(mu));
                std.push(Some(sd));
            }
            BucketComparison {
                mutation_count: count,
                win_rate,
                mean,
                std,
                n_datasets,
            }
        })
        .collect();
    Ok(ComparisonTable {
        models,
        datasets,
        split_seed: first.split_seed,
        buckets,
    })
}

fn render_grid(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let ncols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            let pad = widths[j] - c.chars().count();
            if j == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header));
    let total: usize = widths.iter().sum::<usize>() + 2 * (ncols - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
}

impl ComparisonTable {
    /// Win-rate matrices per bucket followed by a mean ± std table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for b in &self.buckets {
            let _ = writeln!(
                out,
                "% of datasets where the row model outperforms the column model ({}-mutation variants)",
                b.mutation_count
            );
            let mut header = vec![String::new()];
            header.extend(self.models.iter().cloned());
            let rows: Vec<Vec<String>> = self
                .models
                .iter()
                .enumerate()
                .map(|(a, m)| {
                    let mut row = vec![m.clone()];
                    row.extend(b.win_rate[a].iter().enumerate().map(|(j, c)| match c {
                        _ if j == a => "-".to_string(),
                        Some(v) => format!("{v:.2}%"),
                        None => "n/a".to_string(),
                    }));
                    row
                })
                .collect();
            render_grid(&mut out, &header, &rows);
            out.push('\n');
        }
        let _ = writeln!(out, "Test Spearman correlation (mean ± std over {} datasets)", self.datasets.len());
        let mut header = vec!["model".to_string()];
        header.extend(self.buckets.iter().map(|b| format!("{}-mut", b.mutation_count)));
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .enumerate()
            .map(|(m, name)| {
                let mut row = vec![name.clone()];
                row.extend(self.buckets.iter().map(|b| match (b.mean[m], b.std[m]) {
                    (Some(mu), Some(sd)) => format!("{mu:.3} ± {sd:.3}"),
                    _ => "n/a".to_string(),
                }));
                row
            })
            .collect();
        render_grid(&mut out, &header, &rows);
        out
    }
}

/// Level indices into a hierarchy, at least two, strictly increasing. Two
/// entries describe a direct pair.
pub type ChainConfig = Vec<usize>;

pub fn config_label(tags: &[String], config: &[usize]) -> String {
    let names: Vec<&str> = config.iter().map(|&i| tags[i].as_str()).collect();
    format!("rd: {}", names.join("→"))
}

/// One DMS dataset with its embeddings at every family level.
#[derive(Debug, Clone)]
pub struct LeveledDataset {
    pub dataset: DmsDataset,
    pub sets: Vec<EmbeddingSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<String>,
    pub datasets: Vec<String>,
    /// Single-mutant test rho per (config, dataset).
    pub cells: Vec<Vec<Option<f64>>>,
}

impl StudyTable {
    pub fn render(&self) -> String {
        let mut header = vec!["config".to_string()];
        header.extend(self.datasets.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .zip(&self.cells)
            .map(|(label, cells)| {
                let mut row = vec![label.clone()];
                row.extend(cells.iter().map(|c| c.map_or("n/a".into(), |v| format!("{v:.3}"))));
                row
            })
            .collect();
        let mut out = String::new();
        render_grid(&mut out, &header, &rows);
        out
    }
}

/// Trains each configuration on `family`, embeds every dataset through it
/// and tabulates single-mutant test rho.
pub fn chain_config_study(
    family: &[EmbeddingSet],
    datasets: &[LeveledDataset],
    configs: &[ChainConfig],
    opts: &TrainOptions,
    alpha_grid: &[f64],
    split_seed: u64,
) -> Result<StudyTable> {
    let tags: Vec<String> = family.iter().map(|s| s.model_tag().to_string()).collect();
    let mut rows = Vec::with_capacity(configs.len());
    let mut cells = Vec::with_capacity(configs.len());
    for config in configs {
        if config.len() < 2 || config.windows(2).any(|w| w[0] >= w[1]) || config.iter().any(|&i| i >= family.len()) {
            return Err(Error::InvalidArgument(format!(
                "invalid chain config {config:?} for {} levels",
                family.len()
            )));
        }
        let chosen: Vec<EmbeddingSet> = config.iter().map(|&i| family[i].clone()).collect();
        let chain = train_chain(&chosen, opts)?;
        let mut row = Vec::with_capacity(datasets.len());
        for d in datasets {
            if d.sets.len() != family.len() {
                return Err(Error::MissingLevel(format!(
                    "{} has {} levels, family has {}",
                    d.dataset.name,
                    d.sets.len(),
                    family.len()
                )));
            }
            let per_level: Vec<&EmbeddingSet> = config.iter().map(|&i| &d.sets[i]).collect();
            let rd = infer_chain_set(&chain, &per_level)?;
            let report = eval_dms(&d.dataset, &rd, alpha_grid, split_seed)?;
            row.push(report.rho(1));
        }
        rows.push(config_label(&tags, config));
        cells.push(row);
    }
    Ok(StudyTable {
        rows,
        datasets: datasets.iter().map(|d| d.dataset.name.clone()).collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_dms, gen_family, DmsSpec, FamilySpec};

    fn emb(id: &str, rows: &[&[f32]]) -> EmbeddingMatrix {
        let k = rows[0].len();
        EmbeddingMatrix::new(id, rows.len(), k, rows.concat()).unwrap()
    }

    #[test]
    fn feature_examples() {
        let wt = emb("wt", &[&[1.0, 2.0], &[3.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(variant_feature(&wt, &wt, &[0, 2]).unwrap(), vec![0.0, 0.0]);
        let m1 = emb("m", &[&[2.0, 1.0], &[3.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(variant_feature(&wt, &m1, &[0]).unwrap(), vec![1.0, -1.0]);
        let m2 = emb("m", &[&[3.0, 2.0], &[3.0, 6.0], &[0.0, 0.0]]);
        assert_eq!(variant_feature(&wt, &m2, &[0, 1]).unwrap(), vec![1.0, 1.0]);
        assert!(variant_feature(&wt, &m2, &[3]).is_err());
        let short = emb("s", &[&[0.0, 0.0]]);
        assert!(matches!(variant_feature(&wt, &short, &[0]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn mutation_tokens() {
        let m = Mutation::parse("A123C").unwrap();
        assert_eq!(m, Mutation::new(122, 'A', 'C'));
        assert_eq!(m.token(), "A123C");
        for bad in ["", "A0C", "123", "AxC", "A12"] {
            assert!(Mutation::parse(bad).is_err(), "{bad}");
        }
    }

    fn fixture(spec: &DmsSpec) -> (DmsDataset, Vec<EmbeddingSet>) {
        let (_, truth) = gen_family(&FamilySpec { n_seqs: 5, ..FamilySpec::default() }).unwrap();
        let fx = gen_dms(&truth, spec).unwrap();
        (fx.dataset, fx.sets)
    }

    #[test]
    fn planted_signal_is_recovered_from_top_level() {
        let (ds, sets) = fixture(&DmsSpec { noise: 0.0, ..DmsSpec::default() });
        let rep = eval_dms(&ds, &sets[2], &default_alpha_grid(), 0).unwrap();
        assert!(rep.rho(1).unwrap() >= 0.99, "{rep:?}");
        assert_eq!(rep.n_train, 240);
        assert_eq!(rep.bucket(1).unwrap().n_test, 60);
        assert_eq!(rep.bucket(2).unwrap().n_test, 80);
    }

    #[test]
    fn split_bookkeeping_and_determinism() {
        let (ds, sets) = fixture(&DmsSpec::default());
        let a = eval_dms(&ds, &sets[1], &default_alpha_grid(), 7).unwrap();
        let b = eval_dms(&ds, &sets[1], &default_alpha_grid(), 7).unwrap();
        assert_eq!(a, b);
        let singles: HashSet<&str> = ds
            .variants
            .iter()
            .filter(|v| v.mutations.len() == 1)
            .map(|v| v.mut_seq_id.as_str())
            .collect();
        assert!(a.train_ids.iter().all(|id| singles.contains(id.as_str())));
        let c = eval_dms(&ds, &sets[1], &default_alpha_grid(), 8).unwrap();
        assert_ne!(a.train_ids, c.train_ids);
    }

    #[test]
    fn positive_affine_rescaling_preserves_rho() {
        let (ds, sets) = fixture(&DmsSpec::default());
        let mut scaled = ds.clone();
        for v in scaled.variants.iter_mut() {
            v.score = 3.0 * v.score - 2.0;
        }
        let a = eval_dms(&ds, &sets[2], &default_alpha_grid(), 0).unwrap();
        let b = eval_dms(&scaled, &sets[2], &default_alpha_grid(), 0).unwrap();
        assert_eq!(a.train_ids, b.train_ids);
        assert_eq!(a.alpha, b.alpha);
        for (x, y) in a.buckets.iter().zip(&b.buckets) {
            assert!((x.spearman.unwrap() - y.spearman.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_rejects_99_singles() {
        let (ds, sets) = fixture(&DmsSpec { mut_counts: vec![(1, 99), (2, 10)], ..DmsSpec::default() });
        let err = eval_dms(&ds, &sets[0], &default_alpha_grid(), 0).unwrap_err();
        assert!(matches!(err, Error::TooFewSingles { count: 99, .. }));
        let (ds, sets) = fixture(&DmsSpec { mut_counts: vec![(1, 100)], ..DmsSpec::default() });
        assert!(eval_dms(&ds, &sets[0], &default_alpha_grid(), 0).is_ok());
    }

    #[test]
    fn constant_scores_mark_buckets_undefined() {
        let (ds, sets) = fixture(&DmsSpec { signal: 0.0, ..DmsSpec::default() });
        let rep = eval_dms(&ds, &sets[0], &default_alpha_grid(), 0).unwrap();
        assert_eq!(rep.buckets.len(), 3);
        for b in &rep.buckets {
            assert!(b.spearman.is_none());
            assert!(b.note.as_deref().unwrap().contains("undefined"));
        }
    }

    #[test]
    fn missing_embedding_is_reported() {
        let (ds, sets) = fixture(&DmsSpec::default());
        let mut partial = EmbeddingSet::new("p", sets[0].k());
        for m in sets[0].iter().take(50) {
            partial.insert(m.clone()).unwrap();
        }
        assert!(matches!(
            eval_dms(&ds, &partial, &default_alpha_grid(), 0),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let (ds, _) = fixture(&DmsSpec::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        write_variants_csv(&ds, &path).unwrap();
        assert_eq!(read_variants_csv(&path).unwrap(), ds.variants);
    }

    fn report(model: &str, dataset: &str, rho1: Option<f64>) -> EvalReport {
        EvalReport {
            dataset: dataset.into(),
            model_tag: model.into(),
            split_seed: 0,
            alpha: 1.0,
            n_train: 80,
            train_ids: vec![],
            buckets: vec![BucketResult {
                mutation_count: 1,
                n_train: 80,
                n_test: 20,
                spearman: rho1,
                note: None,
            }],
        }
    }

    #[test]
    fn comparison_win_rates() {
        let mut reports = Vec::new();
        for (d, (a, b)) in [(0.9, 0.5), (0.8, 0.7), (0.6, 0.1), (0.7, 0.6)].iter().enumerate() {
            reports.push(report("A", &format!("d{d}"), Some(*a)));
            reports.push(report("B", &format!("d{d}"), Some(*b)));
        }
        let t = compare_models(&reports).unwrap();
        assert_eq!(t.buckets[0].win_rate[0][1], Some(100.0));
        assert_eq!(t.buckets[0].win_rate[1][0], Some(0.0));
        let mean_a = t.buckets[0].mean[0].unwrap();
        assert!((mean_a - 0.75).abs() < 1e-12);
        let sd_a = t.buckets[0].std[0].unwrap();
        assert!((sd_a - (0.05f64 / 3.0).sqrt()).abs() < 1e-12);
        let text = t.render();
        assert!(text.contains("100.00%"), "{text}");
        assert!(text.contains("0.750 ± 0.129"), "{text}");
    }

    #[test]
    fn comparison_percent_format() {
        let mut reports = Vec::new();
        for d in 0..14 {
            reports.push(report("A", &format!("d{d}"), Some(if d == 0 { 0.1 } else { 0.9 })));
            reports.push(report("B", &format!("d{d}"), Some(0.5)));
        }
        let text = compare_models(&reports).unwrap().render();
        assert!(text.contains("92.86%"), "{text}");
        assert!(text.contains("7.14%"), "{text}");
    }

    #[test]
    fn ties_count_for_neither() {
        let reports = vec![report("A", "d", Some(0.5)), report("B", "d", Some(0.5))];
        let t = compare_models(&reports).unwrap();
        assert_eq!(t.buckets[0].win_rate[0][1], Some(0.0));
        assert_eq!(t.buckets[0].win_rate[1][0], Some(0.0));
        assert_eq!(t.buckets[0].mean[0], t.buckets[0].mean[1]);
    }

    #[test]
    fn comparison_errors() {
        let reports = vec![report("A", "d0", Some(0.5)), report("B", "d1", Some(0.5))];
        assert!(compare_models(&reports).is_err());
        let mut other = report("B", "d0", Some(0.1));
        other.split_seed = 3;
        assert!(compare_models(&[report("A", "d0", Some(0.5)), other]).is_err());
        assert!(compare_models(&[]).is_err());
    }

    #[test]
    fn study_single_cell_and_labels() {
        let spec = FamilySpec { n_seqs: 60, ..FamilySpec::default() };
        let (family, truth) = gen_family(&spec).unwrap();
        let fx = gen_dms(&truth, &DmsSpec::default()).unwrap();
        let ld = LeveledDataset { dataset: fx.dataset, sets: fx.sets };
        let t = chain_config_study(&family, &[ld], &[vec![0, 1, 2]], &TrainOptions::default(), &default_alpha_grid(), 0).unwrap();
        assert_eq!(t.rows, vec!["rd: m1→m2→m3".to_string()]);
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.cells[0].len(), 1);
        assert!(t.cells[0][0].is_some());
        assert!(chain_config_study(&family, &[], &[vec![1, 0]], &TrainOptions::default(), &default_alpha_grid(), 0).is_err());
    }
}
