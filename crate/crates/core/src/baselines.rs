//! Reference points for reverse distillation: PCA on the concatenated level
//! embeddings, and the PCR versus OLS mapping ablation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, BlockRef, FORMAT_VERSION};
use crate::distillation::{train_pair, MappingMode, TrainOptions};
use crate::error::{Error, Result};
use crate::evaluation::{eval_dms, LeveledDataset};
use crate::inference::infer_chain_set;
use crate::distillation::ChainMap;
use crate::numerics::{self, center_columns, frobenius_sq, hstack, matmul};
use crate::store::{stack, validate_aligned, EmbeddingMatrix, EmbeddingSet};

/// PCA projection of `[H_1, ..., H_t]`. Carries no prefix widths: its
/// coordinates are not nested across output widths.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaConcatMap {
    pub level_tags: Vec<String>,
    pub input_dims: Vec<usize>,
    pub mean: DVector<f64>,
    /// `sum(input_dims) x k_target`, orthonormal columns.
    pub projection: DMatrix<f64>,
    pub k_target: usize,
    /// Covariance eigenvalues of the kept components.
    pub eigenvalues: Vec<f64>,
}

fn concat_stacked(sets: &[&EmbeddingSet]) -> Result<DMatrix<f64>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no embedding sets to concatenate".into()))?;
    for s in &sets[1..] {
        let report = validate_aligned(first, s);
        if !report.aligned {
            return Err(Error::Misaligned(format!(
                "{} vs {}: {}",
                first.model_tag(),
                s.model_tag(),
                report.describe()
            )));
        }
    }
    let mut acc = stack(first)?.values;
    for s in &sets[1..] {
        acc = hstack(&acc, &stack(s)?.values);
    }
    Ok(acc)
}

pub fn train_pca_concat(sets: &[&EmbeddingSet], k_target: usize) -> Result<PcaConcatMap> {
    let c = concat_stacked(sets)?;
    let total = c.ncols();
    let model = numerics::pca(&c)?;
    let available = model.components.ncols();
    if k_target == 0 || k_target > total || k_target > available {
        return Err(Error::InvalidArgument(format!(
            "k_target {k_target} outside [1, {}]",
            total.min(available)
        )));
    }
    Ok(PcaConcatMap {
        level_tags: sets.iter().map(|s| s.model_tag().to_string()).collect(),
        input_dims: sets.iter().map(|s| s.k()).collect(),
        mean: model.mean,
        projection: model.components.columns(0, k_target).into_owned(),
        k_target,
        eigenvalues: model.eigenvalues[..k_target].to_vec(),
    })
}

impl PcaConcatMap {
    pub fn total_dim(&self) -> usize {
        self.input_dims.iter().sum()
    }

    /// Scores of concatenated rows.
    pub fn transform(&self, concat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if concat.ncols() != self.total_dim() {
            return Err(Error::DimMismatch(format!(
                "expected {} concatenated columns, got {}",
                self.total_dim(),
                concat.ncols()
            )));
        }
        Ok(matmul(&center_columns(concat, &self.mean), &self.projection))
    }

    /// Maps scores back to the concatenated space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = matmul(scores, &self.projection.transpose());
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        out
    }
}

pub fn infer_pca_concat(map: &PcaConcatMap, per_level: &[&EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    if per_level.len() != map.input_dims.len() {
        return Err(Error::DimMismatch(format!(
            "{} level embeddings for a {}-level map",
            per_level.len(),
            map.input_dims.len()
        )));
    }
    let first = per_level[0];
    let mut concat = DMatrix::zeros(first.n(), 0);
    for (m, (&k, tag)) in per_level.iter().zip(map.input_dims.iter().zip(&map.level_tags)) {
        if m.k() != k {
            return Err(Error::DimMismatch(format!("{tag} ({}): expected k={k}, got {}", m.seq_id(), m.k())));
        }
        if m.n() != first.n() {
            return Err(Error::LengthMismatch(format!("{tag} ({}): n={} vs {}", m.seq_id(), m.n(), first.n())));
        }
        concat = hstack(&concat, &m.to_f64());
    }
    EmbeddingMatrix::from_f64(first.seq_id(), &map.transform(&concat)?)
}

/// Per-entry MSE of the best affine reconstruction of the concatenated
/// training space from `representation` (rows aligned with `sets`).
pub fn affine_reconstruction_mse(sets: &[&EmbeddingSet], representation: &DMatrix<f64>) -> Result<f64> {
    let c = concat_stacked(sets)?;
    if representation.nrows() != c.nrows() {
        return Err(Error::LengthMismatch(format!(
            "representation has {} rows, concatenation has {}",
            representation.nrows(),
            c.nrows()
        )));
    }
    let fit = numerics::ols_fit(representation, &c)?;
    let resid = &c - fit.apply(representation);
    Ok(frobenius_sq(&resid) / (c.nrows() * c.ncols()) as f64)
}

/// Per-entry MSE of the PCA reconstruction of the concatenated training space.
pub fn pca_concat_reconstruction_mse(map: &PcaConcatMap, sets: &[&EmbeddingSet]) -> Result<f64> {
    let c = concat_stacked(sets)?;
    let recon = map.reconstruct(&map.transform(&c)?);
    Ok(frobenius_sq(&(&c - recon)) / (c.nrows() * c.ncols()) as f64)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaConcatMeta {
    format_version: u32,
    kind: String,
    level_tags: Vec<String>,
    input_dims: Vec<usize>,
    k_target: usize,
    eigenvalues: Vec<f64>,
    mean: BlockRef,
    projection: BlockRef,
}

pub fn save_pca_concat(map: &PcaConcatMap, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = PcaConcatMeta {
        format_version: FORMAT_VERSION,
        kind: "pca_concat".into(),
        level_tags: map.level_tags.clone(),
        input_dims: map.input_dims.clone(),
        k_target: map.k_target,
        eigenvalues: map.eigenvalues.clone(),
        mean: artifact::write_block(dir, "mean", &artifact::column(&map.mean))?,
        projection: artifact::write_block(dir, "projection", &map.projection)?,
    };
    artifact::write_json(&dir.join("meta.json"), &meta)
}

pub fn load_pca_concat(dir: impl AsRef<Path>) -> Result<PcaConcatMap> {
    let dir = dir.as_ref();
    let meta: PcaConcatMeta = artifact::read_json(&dir.join("meta.json"))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            context: dir.display().to_string(),
            expected: FORMAT_VERSION,
            found: meta.format_version,
        });
    }
    if meta.level_tags.len() != meta.input_dims.len() {
        return Err(Error::Metadata(format!("{}: level_tags and input_dims differ in length", dir.display())));
    }
    let total: usize = meta.input_dims.iter().sum();
    let mean = artifact::read_block(dir, &meta.mean, (total, 1))?;
    let projection = artifact::read_block(dir, &meta.projection, (total, meta.k_target))?;
    Ok(PcaConcatMap {
        level_tags: meta.level_tags,
        input_dims: meta.input_dims,
        mean: artifact::as_vector(&mean),
        projection,
        k_target: meta.k_target,
        eigenvalues: meta.eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub pcr_rho: Option<f64>,
    pub ols_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub small_tag: String,
    pub large_tag: String,
    pub pcr_rank: usize,
    pub rows: Vec<AblationRow>,
    /// Datasets with strictly higher single-mutant rho under PCR, in percent
    /// of datasets where both are defined.
    pub pcr_win_rate: f64,
    pub ties: usize,
}

/// Trains a pair map in both modes and compares single-mutant test rho on
/// every dataset. Dataset level sets are matched to the pair by model tag.
pub fn ablate_pcr_vs_ols(
    set_r: &EmbeddingSet,
    set_p: &EmbeddingSet,
    datasets: &[LeveledDataset],
    opts: &TrainOptions,
    alpha_grid: &[f64],
    split_seed: u64,
) -> Result<AblationReport> {
    let pcr = train_pair(set_r, set_p, &TrainOptions { mode: MappingMode::Pcr, ..*opts })?;
    let ols = train_pair(set_r, set_p, &TrainOptions { mode: MappingMode::Ols, rank_override: None, ..*opts })?;
    let pcr_chain = ChainMap::from_pair(pcr.clone())?;
    let ols_chain = ChainMap::from_pair(ols)?;
    let find = |d: &'_ LeveledDataset, tag: &str| -> Result<usize> {
        d.sets
            .iter()
            .position(|s| s.model_tag() == tag)
            .ok_or_else(|| Error::MissingLevel(format!("{tag} in dataset {}", d.dataset.name)))
    };
    let mut rows = Vec::with_capacity(datasets.len());
    let (mut wins, mut both, mut ties) = (0usize, 0usize, 0usize);
    for d in datasets {
        let inputs = [&d.sets[find(d, set_r.model_tag())?], &d.sets[find(d, set_p.model_tag())?]];
        let pcr_rho = eval_dms(&d.dataset, &infer_chain_set(&pcr_chain, &inputs)?, alpha_grid, split_seed)?.rho(1);
        let ols_rho = eval_dms(&d.dataset, &infer_chain_set(&ols_chain, &inputs)?, alpha_grid, split_seed)?.rho(1);
        if let (Some(a), Some(b)) = (pcr_rho, ols_rho) {
            both += 1;
            wins += usize::from(a > b);
            ties += usize::from(a == b);
        }
        rows.push(AblationRow {
            dataset: d.dataset.name.clone(),
            pcr_rho,
            ols_rho,
        });
    }
    Ok(AblationReport {
        small_tag: set_r.model_tag().to_string(),
        large_tag: set_p.model_tag().to_string(),
        pcr_rank: pcr.r_j,
        rows,
        pcr_win_rate: if both > 0 { 100.0 * wins as f64 / both as f64 } else { 0.0 },
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distillation::train_chain_detailed;
    use crate::synthetic::{gen_family, FamilySpec};

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    #[test]
    fn duplicated_level_concentrates_variance() {
        let spec = FamilySpec { level_dims: vec![1], shared_rank: 1, n_seqs: 30, ..FamilySpec::default() };
        let (sets, _) = gen_family(&spec).unwrap();
        let mut twin = sets[0].clone();
        twin = EmbeddingSet::from_matrices("twin", 1, twin.iter().cloned()).unwrap();
        let map = train_pca_concat(&[&sets[0], &twin], 2).unwrap();
        let w = map.projection.column(0);
        assert!((w[0].abs() - w[1].abs()).abs() < 1e-12);
        assert!((w[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(map.eigenvalues[1] < 1e-12 * map.eigenvalues[0]);
    }

    #[test]
    fn full_rank_is_lossless() {
        let (sets, _) = gen_family(&FamilySpec { n_seqs: 40, ..FamilySpec::default() }).unwrap();
        let refs: Vec<&EmbeddingSet> = sets.iter().collect();
        let map = train_pca_concat(&refs, 56).unwrap();
        let gram = map.projection.transpose() * &map.projection;
        assert!(max_abs(&(gram - DMatrix::identity(56, 56))) < 1e-8);
        let c = concat_stacked(&refs).unwrap();
        assert!(max_abs(&(map.reconstruct(&map.transform(&c).unwrap()) - &c)) < 1e-8);
        assert!(train_pca_concat(&refs, 57).is_err());
        assert!(train_pca_concat(&refs, 0).is_err());
    }

    #[test]
    fn explained_variance_matches_eigen_oracle() {
        let (sets, _) = gen_family(&FamilySpec { n_seqs: 40, ..FamilySpec::default() }).unwrap();
        let refs = [&sets[0], &sets[1]];
        let map = train_pca_concat(&refs, 10).unwrap();
        let c = concat_stacked(&refs).unwrap();
        let centered = center_columns(&c, &numerics::column_means(&c));
        let cov = centered.transpose() * &centered / (c.nrows() - 1) as f64;
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in map.eigenvalues.iter().zip(&eig) {
            assert!((a - b).abs() <= 1e-9 * eig[0], "{a} vs {b}");
        }
    }

    #[test]
    fn inference_width_and_inverse() {
        let (sets, _) = gen_family(&FamilySpec { n_seqs: 40, ..FamilySpec::default() }).unwrap();
        let refs: Vec<&EmbeddingSet> = sets.iter().collect();
        for k in [5, 16, 56] {
            let map = train_pca_concat(&refs, k).unwrap();
            let m = sets[0].iter().next().unwrap();
            let inputs: Vec<&EmbeddingMatrix> = sets.iter().map(|s| s.get(m.seq_id()).unwrap()).collect();
            let out = infer_pca_concat(&map, &inputs).unwrap();
            assert_eq!(out.k(), k);
            if k == 56 {
                let concat = inputs.iter().fold(DMatrix::zeros(m.n(), 0), |acc, e| hstack(&acc, &e.to_f64()));
                let scores = map.transform(&concat).unwrap();
                assert!(max_abs(&(map.reconstruct(&scores) - concat)) < 1e-8);
            }
        }
        let map = train_pca_concat(&refs, 8).unwrap();
        let m = sets[0].iter().next().unwrap();
        assert!(infer_pca_concat(&map, &[m, m, m]).is_err());
    }

    #[test]
    fn baseline_beats_constrained_reconstruction() {
        for seed in [21, 22, 23] {
            let (sets, _) = gen_family(&FamilySpec { seed, ..FamilySpec::default() }).unwrap();
            let refs: Vec<&EmbeddingSet> = sets.iter().collect();
            let t = train_chain_detailed(&sets, &TrainOptions::default()).unwrap();
            let rd = t.accumulators.last().unwrap();
            let rd_mse = affine_reconstruction_mse(&refs, rd).unwrap();
            let map = train_pca_concat(&refs, rd.ncols()).unwrap();
            let base = pca_concat_reconstruction_mse(&map, &refs).unwrap();
            assert!(base <= rd_mse * (1.0 + 1e-12), "{base} > {rd_mse}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (sets, _) = gen_family(&FamilySpec { n_seqs: 20, ..FamilySpec::default() }).unwrap();
        let refs: Vec<&EmbeddingSet> = sets.iter().collect();
        let map = train_pca_concat(&refs, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::distillation::save_artifact(&crate::distillation::Artifact::PcaConcat(map.clone()), dir.path()).unwrap();
        let back = crate::distillation::load_artifact(dir.path()).unwrap();
        assert_eq!(back, crate::distillation::Artifact::PcaConcat(map));
        assert!(back.into_chain().is_err());
    }
}
