//! Applying trained maps to new sequences.
//!
//! Every stage only appends columns, so the first `k_j` columns of a chain's
//! output are exactly what the chain truncated at level `j` produces.

use std::path::Path;

use nalgebra::DMatrix;

use crate::distillation::{ChainMap, PairMap};
use crate::error::{Error, Result};
use crate::numerics::hstack;
use crate::store::{save_set, EmbeddingMatrix, EmbeddingSet, Manifest};

/// Reverse-distilled embedding of one sequence with its declared prefix
/// widths.
#[derive(Debug, Clone, PartialEq)]
pub struct MatryoshkaEmbedding {
    pub seq_id: String,
    /// `n x k_top`.
    pub values: DMatrix<f64>,
    pub level_dims: Vec<usize>,
    pub chain_hash: String,
}

impl MatryoshkaEmbedding {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    /// First `k` columns at full precision. `k` must be a declared width.
    pub fn prefix_values(&self, k: usize) -> Result<DMatrix<f64>> {
        if !self.level_dims.contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "prefix width {k} is not a declared level width {:?}",
                self.level_dims
            )));
        }
        Ok(self.values.columns(0, k).into_owned())
    }

    pub fn to_embedding(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_f64(self.seq_id.clone(), &self.values)
    }

    pub fn check_hash(&self, expected: &str) -> Result<()> {
        if self.chain_hash != expected {
            return Err(Error::HashMismatch {
                expected: expected.to_string(),
                found: self.chain_hash.clone(),
            });
        }
        Ok(())
    }
}

/// First `k` columns as an EMB1-ready matrix.
pub fn prefix(e: &MatryoshkaEmbedding, k: usize) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_f64(e.seq_id.clone(), &e.prefix_values(k)?)
}

fn check_stage_input(stage: &PairMap, acc: &DMatrix<f64>, next: &EmbeddingMatrix) -> Result<()> {
    if acc.ncols() != stage.k_r {
        return Err(Error::DimMismatch(format!(
            "{}: stage expects {} input columns, got {}",
            stage.small_tag,
            stage.k_r,
            acc.ncols()
        )));
    }
    if next.k() != stage.k_p {
        return Err(Error::DimMismatch(format!(
            "{} ({}): expected k={}, got {}",
            stage.large_tag,
            next.seq_id(),
            stage.k_p,
            next.k()
        )));
    }
    if next.n() != acc.nrows() {
        return Err(Error::LengthMismatch(format!(
            "{} ({}): n={} but the smallest level has n={}",
            stage.large_tag,
            next.seq_id(),
            next.n(),
            acc.nrows()
        )));
    }
    Ok(())
}

pub fn infer_chain(chain: &ChainMap, per_level: &[&EmbeddingMatrix]) -> Result<MatryoshkaEmbedding> {
    let levels = chain.hierarchy.levels();
    if per_level.len() < levels.len() {
        return Err(Error::MissingLevel(levels[per_level.len()].0.clone()));
    }
    if per_level.len() > levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} level embeddings supplied for a {}-level chain",
            per_level.len(),
            levels.len()
        )));
    }
    let first = per_level[0];
    if first.k() != levels[0].1 {
        return Err(Error::DimMismatch(format!(
            "{} ({}): expected k={}, got {}",
            levels[0].0,
            first.seq_id(),
            levels[0].1,
            first.k()
        )));
    }
    if let Some(other) = per_level.iter().find(|m| m.seq_id() != first.seq_id()) {
        return Err(Error::Misaligned(format!(
            "level inputs disagree on seq_id: {:?} vs {:?}",
            first.seq_id(),
            other.seq_id()
        )));
    }
    let mut acc = first.to_f64();
    for (stage, next) in chain.stages.iter().zip(&per_level[1..]) {
        check_stage_input(stage, &acc, next)?;
        let projected = stage.project_residual(&acc, &next.to_f64());
        acc = hstack(&acc, &projected);
    }
    Ok(MatryoshkaEmbedding {
        seq_id: first.seq_id().to_string(),
        values: acc,
        level_dims: chain.level_dims(),
        chain_hash: chain.chain_hash(),
    })
}

pub fn infer_pair(map: &PairMap, h_r: &EmbeddingMatrix, h_p: &EmbeddingMatrix) -> Result<MatryoshkaEmbedding> {
    infer_chain(&ChainMap::from_pair(map.clone())?, &[h_r, h_p])
}

pub fn rd_tag(chain: &ChainMap) -> String {
    format!("rd.{}", chain.top_tag())
}

/// Runs [`infer_chain`] over every sequence of the first level's set.
pub fn infer_chain_set(chain: &ChainMap, per_level: &[&EmbeddingSet]) -> Result<EmbeddingSet> {
    let levels = chain.hierarchy.levels();
    if per_level.len() < levels.len() {
        return Err(Error::MissingLevel(levels[per_level.len()].0.clone()));
    }
    for (set, (tag, k)) in per_level.iter().zip(levels) {
        if set.k() != *k {
            return Err(Error::DimMismatch(format!(
                "level {tag} expects dim {k}, set {:?} has {}",
                set.model_tag(),
                set.k()
            )));
        }
        if set.model_tag() != tag {
            log::debug!("level {tag} fed from set {:?}", set.model_tag());
        }
    }
    let mut out = EmbeddingSet::new(rd_tag(chain), chain.top_dim());
    for m in per_level[0].iter() {
        let inputs = per_level
            .iter()
            .map(|set| set.get(m.seq_id()).ok_or_else(|| Error::MissingEmbedding(format!("{} in {}", m.seq_id(), set.model_tag()))))
            .collect::<Result<Vec<_>>>()?;
        let e = infer_chain(chain, &inputs)?;
        out.insert(e.to_embedding()?)?;
    }
    Ok(out)
}

/// Saves rd embeddings with the prefix widths, level tags and chain hash
/// recorded in the manifest.
pub fn save_rd_set(set: &EmbeddingSet, chain: &ChainMap, dir: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
    let manifest_path = manifest_path.as_ref();
    let mut manifest = save_set(set, dir, manifest_path)?;
    manifest.level_dims = Some(chain.level_dims());
    manifest.level_tags = Some(chain.hierarchy.tags().iter().map(|t| t.to_string()).collect());
    manifest.chain_hash = Some(chain.chain_hash());
    manifest.write(manifest_path)?;
    Ok(manifest)
}

/// Narrows every rd embedding in `set` to its first `k` columns.
pub fn prefix_set(set: &EmbeddingSet, manifest: &Manifest, k: usize) -> Result<EmbeddingSet> {
    let dims = manifest
        .level_dims
        .as_ref()
        .ok_or_else(|| Error::Metadata("manifest declares no level_dims".into()))?;
    let idx = dims.iter().position(|&d| d == k).ok_or_else(|| {
        Error::InvalidArgument(format!("prefix width {k} is not a declared level width {dims:?}"))
    })?;
    let tag = manifest
        .level_tags
        .as_ref()
        .and_then(|t| t.get(idx).cloned())
        .unwrap_or_else(|| format!("{}@{k}", set.model_tag()));
    let mut out = EmbeddingSet::new(tag, k);
    for m in set.iter() {
        let mut values = Vec::with_capacity(m.n() * k);
        for i in 0..m.n() {
            values.extend_from_slice(&m.row(i)[..k]);
        }
        out.insert(EmbeddingMatrix::new(m.seq_id(), m.n(), k, values)?)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distillation::{save_artifact, load_artifact, train_chain, train_pair, Artifact, TrainOptions};
    use crate::store::stack;
    use crate::synthetic::{gen_family, FamilySpec};

    fn bits(m: &DMatrix<f64>) -> Vec<u64> {
        m.iter().map(|v| v.to_bits()).collect()
    }

    fn family(seed: u64) -> Vec<EmbeddingSet> {
        gen_family(&FamilySpec { seed, n_seqs: 60, ..FamilySpec::default() }).unwrap().0
    }

    #[test]
    fn pair_output_prefix_is_input() {
        let sets = family(21);
        let map = train_pair(&sets[0], &sets[1], &TrainOptions::default()).unwrap();
        let h_r = sets[0].iter().next().unwrap();
        let h_p = sets[1].get(h_r.seq_id()).unwrap();
        let e = infer_pair(&map, h_r, h_p).unwrap();
        assert_eq!(e.k(), 16);
        assert_eq!(e.level_dims, vec![8, 16]);
        assert_eq!(prefix(&e, 8).unwrap(), *h_r);
        assert_eq!(e.prefix_values(16).unwrap(), e.values);
        assert!(prefix(&e, 7).is_err());
    }

    #[test]
    fn held_out_sequence_matches_manual_composition() {
        let sets = family(21);
        let map = train_pair(&sets[0], &sets[1], &TrainOptions::default()).unwrap();
        let other = family(99);
        let h_r = other[0].iter().nth(3).unwrap();
        let h_p = other[1].get(h_r.seq_id()).unwrap();
        let e = infer_pair(&map, h_r, h_p).unwrap();
        let x = h_r.to_f64();
        let reg = &map.regressor;
        let mut pred = DMatrix::zeros(x.nrows(), map.k_p);
        for i in 0..x.nrows() {
            let centered = x.row(i) - reg.input_mean.transpose();
            let row = centered * &reg.weights + reg.output_mean.transpose();
            pred.set_row(i, &row);
        }
        let manual = (h_p.to_f64() - pred) * &map.v_res;
        let got = e.values.columns(8, 8).into_owned();
        assert!((got - manual).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn two_level_chain_equals_pair() {
        let sets = family(21);
        let chain = train_chain(&sets[..2], &TrainOptions::default()).unwrap();
        let h_r = sets[0].iter().next().unwrap();
        let h_p = sets[1].get(h_r.seq_id()).unwrap();
        let a = infer_chain(&chain, &[h_r, h_p]).unwrap();
        let b = infer_pair(&chain.stages[0], h_r, h_p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nested_chain_prefixes_are_bitwise_exact() {
        let sets = gen_family(&FamilySpec { seed: 23, ..FamilySpec::default() }).unwrap().0;
        let chain = train_chain(&sets, &TrainOptions::default()).unwrap();
        let sub = train_chain(&sets[..2], &TrainOptions::default()).unwrap();
        assert_eq!(sub.stages[0], chain.stages[0]);
        for m in sets[0].iter().take(20) {
            let inputs: Vec<&EmbeddingMatrix> = sets.iter().map(|s| s.get(m.seq_id()).unwrap()).collect();
            let full = infer_chain(&chain, &inputs).unwrap();
            let two = infer_chain(&sub, &inputs[..2]).unwrap();
            assert_eq!(bits(&full.prefix_values(16).unwrap()), bits(&two.values));
            assert_eq!(prefix(&full, 8).unwrap(), *m);
            let truncated = infer_chain(&chain.truncate(2).unwrap(), &inputs[..2]).unwrap();
            assert_eq!(truncated, two);
        }
    }

    #[test]
    fn batched_and_per_sequence_agree() {
        let sets = family(21);
        let chain = train_chain(&sets, &TrainOptions::default()).unwrap();
        let out = infer_chain_set(&chain, &[&sets[0], &sets[1], &sets[2]]).unwrap();
        assert_eq!(out.model_tag(), "rd.m3");
        assert_eq!(out.k(), 32);
        // Training accumulators are computed on the stacked matrix.
        let acc = crate::distillation::train_chain_detailed(&sets, &TrainOptions::default())
            .unwrap()
            .accumulators
            .pop()
            .unwrap();
        let stacked = stack(&out).unwrap().values;
        let narrowed = acc.map(|v| v as f32 as f64);
        assert_eq!(bits(&stacked), bits(&narrowed));
    }

    #[test]
    fn missing_level_is_named() {
        let sets = family(21);
        let chain = train_chain(&sets, &TrainOptions::default()).unwrap();
        let m = sets[0].iter().next().unwrap();
        let p = sets[1].get(m.seq_id()).unwrap();
        let err = infer_chain(&chain, &[m, p]).unwrap_err();
        assert!(err.to_string().contains("m3"), "{err}");
        assert!(matches!(infer_chain_set(&chain, &[&sets[0]]), Err(Error::MissingLevel(t)) if t == "m2"));
        assert!(matches!(infer_chain(&chain, &[m, m, p]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn loaded_artifact_is_transparent() {
        let sets = family(21);
        let chain = train_chain(&sets, &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_artifact(&Artifact::Chain(chain.clone()), dir.path()).unwrap();
        let loaded = load_artifact(dir.path()).unwrap().into_chain().unwrap();
        let refs = [&sets[0], &sets[1], &sets[2]];
        assert_eq!(infer_chain_set(&chain, &refs).unwrap(), infer_chain_set(&loaded, &refs).unwrap());
        let m = sets[0].iter().next().unwrap();
        let inputs: Vec<&EmbeddingMatrix> = sets.iter().map(|s| s.get(m.seq_id()).unwrap()).collect();
        let e = infer_chain(&loaded, &inputs).unwrap();
        assert!(e.check_hash(&chain.chain_hash()).is_ok());
        assert!(e.check_hash("0000").is_err());
    }

    #[test]
    fn prefix_set_recovers_level_one() {
        let sets = family(21);
        let chain = train_chain(&sets, &TrainOptions::default()).unwrap();
        let out = infer_chain_set(&chain, &[&sets[0], &sets[1], &sets[2]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_rd_set(&out, &chain, dir.path().join("emb"), dir.path().join("rd.json")).unwrap();
        assert_eq!(manifest.level_dims, Some(vec![8, 16, 32]));
        let p = prefix_set(&out, &manifest, 8).unwrap();
        assert_eq!(p.model_tag(), "m1");
        assert!(p.iter().zip(sets[0].iter()).all(|(a, b)| a == b));
        assert!(prefix_set(&out, &manifest, 9).is_err());
    }
}
