//! Seeded generators for embedding families with planted structure and for
//! DMS datasets scored by a planted linear functional.
//!
//! Every level shares one latent matrix `F` per sequence. Level `i` reads
//! the first `m_i = s + k_i - k_1` latent columns and mixes them through
//! orthonormal rows `Q_i[:, ..m_i]^T`:
//!
//! ```text
//! H_i = F[:, ..m_i] * Q_i[:, ..m_i]^T + sigma * N_i
//! ```
//!
//! Columns `m_{i-1}..m_i` of `Q_i` form the planted residual basis of level
//! `i`; they are orthogonal to the image of the latents the smaller level
//! already carries.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{write_variants_csv, DatasetFile, DmsDataset, Mutation, Variant};
use crate::numerics::matmul;
use crate::store::{save_set, EmbeddingMatrix, EmbeddingSet};

pub const AMINO_ACIDS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub level_dims: Vec<usize>,
    /// Defaults to `m1, m2, ...` when empty.
    pub level_tags: Vec<String>,
    pub n_seqs: usize,
    /// Inclusive range of per-sequence lengths.
    pub seq_len_range: (usize, usize),
    pub shared_rank: usize,
    /// Variance of the residual latents new at each level after the first.
    /// A single value applies to every level.
    pub residual_energy: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            level_dims: vec![8, 16, 32],
            level_tags: Vec::new(),
            n_seqs: 200,
            seq_len_range: (10, 30),
            shared_rank: 4,
            residual_energy: vec![1.0],
            noise_sigma: 0.05,
            seed: 21,
        }
    }
}

impl FamilySpec {
    pub fn tags(&self) -> Vec<String> {
        if self.level_tags.is_empty() {
            (1..=self.level_dims.len()).map(|i| format!("m{i}")).collect()
        } else {
            self.level_tags.clone()
        }
    }

    fn energy(&self, level: usize) -> f64 {
        match self.residual_energy.as_slice() {
            [e] => *e,
            all => all[level - 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.level_dims.is_empty() || self.level_dims[0] == 0 {
            return bad("level_dims must be nonempty and positive".into());
        }
        if self.level_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NonIncreasingDims(format!("{:?}", self.level_dims)));
        }
        if !self.level_tags.is_empty() && self.level_tags.len() != self.level_dims.len() {
            return bad(format!(
                "level_tags has {} entries for {} levels",
                self.level_tags.len(),
                self.level_dims.len()
            ));
        }
        if self.shared_rank == 0 || self.shared_rank > self.level_dims[0] {
            return bad(format!(
                "shared_rank {} outside [1, {}]",
                self.shared_rank, self.level_dims[0]
            ));
        }
        let levels = self.level_dims.len();
        if self.residual_energy.len() != 1 && self.residual_energy.len() + 1 != levels {
            return bad(format!(
                "residual_energy needs 1 or {} entries, got {}",
                levels - 1,
                self.residual_energy.len()
            ));
        }
        if self.residual_energy.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("residual_energy entries must be finite and >= 0".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("seq_len_range ({lo}, {hi}) is empty"));
        }
        if self.n_seqs == 0 {
            return bad("n_seqs must be positive".into());
        }
        Ok(())
    }
}

/// The generative model behind a family, shared with [`gen_dms`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub level_tags: Vec<String>,
    pub level_dims: Vec<usize>,
    /// Latent columns read by each level.
    pub latent_dims: Vec<usize>,
    /// Standard deviation of each latent column.
    pub latent_scales: Vec<f64>,
    /// `Q_i[:, ..m_i]`, one `k_i x m_i` matrix per level.
    pub mixing: Vec<DMatrix<f64>>,
    pub noise_sigma: f64,
}

impl PlantedTruth {
    /// Planted residual basis of level `i >= 1`, `k_i x (k_i - k_{i-1})`.
    pub fn residual_basis(&self, level: usize) -> DMatrix<f64> {
        let from = self.latent_dims[level - 1];
        let width = self.latent_dims[level] - from;
        self.mixing[level].columns(from, width).into_owned()
    }

    /// Image of the latents already carried by level `i - 1`.
    pub fn shared_basis(&self, level: usize) -> DMatrix<f64> {
        self.mixing[level].columns(0, self.latent_dims[level - 1]).into_owned()
    }

    pub fn top_latent_dim(&self) -> usize {
        *self.latent_dims.last().expect("at least one level")
    }

    /// Noise-free embedding of scaled latents `f` at `level`.
    fn mix(&self, f: &DMatrix<f64>, level: usize) -> DMatrix<f64> {
        let m = self.latent_dims[level];
        matmul(&f.columns(0, m).into_owned(), &self.mixing[level].transpose())
    }

    fn embed(&self, f: &DMatrix<f64>, level: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut h = self.mix(f, level);
        add_noise(&mut h, self.noise_sigma, rng);
        h
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn add_noise(h: &mut DMatrix<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                let z: f64 = StandardNormal.sample(rng);
                h[(i, j)] += sigma * z;
            }
        }
    }
}

/// Uniformly random `k x k` orthogonal matrix.
fn random_orthogonal(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian(k, k, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn scaled_latents(rows: usize, scales: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut f = gaussian(rows, scales.len(), rng);
    for (j, s) in scales.iter().enumerate() {
        f.column_mut(j).scale_mut(*s);
    }
    f
}

fn to_embedding(seq_id: &str, h: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_f64(seq_id, h)
}

pub fn gen_family(spec: &FamilySpec) -> Result<(Vec<EmbeddingSet>, PlantedTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k1 = spec.level_dims[0];
    let latent_dims: Vec<usize> = spec
        .level_dims
        .iter()
        .map(|k| spec.shared_rank + k - k1)
        .collect();
    let mut latent_scales = vec![1.0; spec.shared_rank];
    for level in 1..spec.level_dims.len() {
        let width = latent_dims[level] - latent_dims[level - 1];
        latent_scales.extend(std::iter::repeat_n(spec.energy(level).sqrt(), width));
    }
    let mixing = spec
        .level_dims
        .iter()
        .zip(&latent_dims)
        .map(|(&k, &m)| random_orthogonal(k, &mut rng).columns(0, m).into_owned())
        .collect();
    let tags = spec.tags();
    let truth = PlantedTruth {
        level_tags: tags.clone(),
        level_dims: spec.level_dims.clone(),
        latent_dims,
        latent_scales,
        mixing,
        noise_sigma: spec.noise_sigma,
    };

    let mut sets: Vec<EmbeddingSet> = tags
        .iter()
        .zip(&spec.level_dims)
        .map(|(t, &k)| EmbeddingSet::new(t.clone(), k))
        .collect();
    let (lo, hi) = spec.seq_len_range;
    for s in 0..spec.n_seqs {
        let n = rng.random_range(lo..=hi);
        let f = scaled_latents(n, &truth.latent_scales, &mut rng);
        let id = format!("seq{s:04}");
        for (level, set) in sets.iter_mut().enumerate() {
            let h = truth.embed(&f, level, &mut rng);
            set.insert(to_embedding(&id, &h)?)?;
        }
    }
    Ok((sets, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmsSpec {
    pub name: String,
    pub seq_len: usize,
    /// `(mutation count, number of variants)` pairs.
    pub mut_counts: Vec<(usize, usize)>,
    /// Score noise standard deviation relative to the clean score spread.
    pub noise: f64,
    /// Scale of the planted functional; zero yields constant scores.
    pub signal: f64,
    pub seed: u64,
}

impl Default for DmsSpec {
    fn default() -> Self {
        Self {
            name: "dms".into(),
            seq_len: 60,
            mut_counts: vec![(1, 300), (2, 80), (3, 40)],
            noise: 0.01,
            signal: 1.0,
            seed: 31,
        }
    }
}

impl DmsSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.seq_len == 0 {
            return bad("seq_len must be positive".into());
        }
        if self.mut_counts.is_empty() || self.mut_counts.iter().all(|(_, n)| *n == 0) {
            return bad("mut_counts requests no variants".into());
        }
        let mut seen = HashSet::new();
        for &(c, n) in &self.mut_counts {
            if c == 0 || c > self.seq_len {
                return bad(format!("mutation count {c} outside [1, {}]", self.seq_len));
            }
            if !seen.insert(c) {
                return bad(format!("mutation count {c} listed twice"));
            }
            if c == 1 && n > self.seq_len * (AMINO_ACIDS.len() - 1) {
                return bad(format!(
                    "{n} distinct single mutants requested but only {} exist",
                    self.seq_len * (AMINO_ACIDS.len() - 1)
                ));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0 && self.signal.is_finite()) {
            return bad("noise must be >= 0 and signal finite".into());
        }
        Ok(())
    }
}

/// A generated DMS dataset with embeddings of the wild type and every
/// mutant at each family level.
#[derive(Debug, Clone)]
pub struct DmsFixture {
    pub dataset: DmsDataset,
    pub sets: Vec<EmbeddingSet>,
    /// Planted functional over scaled latents.
    pub functional: Vec<f64>,
}

pub fn gen_dms(truth: &PlantedTruth, spec: &DmsSpec) -> Result<DmsFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.seq_len;
    let m = truth.top_latent_dim();
    let wt_seq: Vec<u8> = (0..n)
        .map(|_| AMINO_ACIDS[rng.random_range(0..AMINO_ACIDS.len())])
        .collect();
    let functional: Vec<f64> = (0..m)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.signal * z
        })
        .collect();
    // Latent shift of every (position, substitute) pair, in scaled latent units.
    let mut shifts = vec![vec![0.0; m]; n * AMINO_ACIDS.len()];
    for row in shifts.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * truth.latent_scales[j];
        }
    }
    let shift = |p: usize, aa: u8| {
        let a = AMINO_ACIDS.iter().position(|&x| x == aa).expect("known amino acid");
        &shifts[p * AMINO_ACIDS.len() + a]
    };

    let f_wt = scaled_latents(n, &truth.latent_scales, &mut rng);
    let wt_levels: Vec<DMatrix<f64>> = (0..truth.level_dims.len())
        .map(|level| truth.embed(&f_wt, level, &mut rng))
        .collect();

    let mut mutation_sets: Vec<Vec<Mutation>> = Vec::new();
    for &(count, how_many) in &spec.mut_counts {
        if count == 1 {
            let mut all: Vec<(usize, u8)> = (0..n)
                .flat_map(|p| {
                    let wt = wt_seq[p];
                    AMINO_ACIDS.iter().filter(move |&&a| a != wt).map(move |&a| (p, a))
                })
                .collect();
            all.shuffle(&mut rng);
            for &(p, a) in &all[..how_many] {
                mutation_sets.push(vec![Mutation::new(p, wt_seq[p] as char, a as char)]);
            }
        } else {
            for _ in 0..how_many {
                let mut positions: Vec<usize> = rand::seq::index::sample(&mut rng, n, count).into_vec();
                positions.sort_unstable();
                let muts = positions
                    .into_iter()
                    .map(|p| {
                        let choices: Vec<u8> = AMINO_ACIDS.iter().copied().filter(|&a| a != wt_seq[p]).collect();
                        let a = choices[rng.random_range(0..choices.len())];
                        Mutation::new(p, wt_seq[p] as char, a as char)
                    })
                    .collect();
                mutation_sets.push(muts);
            }
        }
    }

    let wt_id = format!("{}_wt", spec.name);
    let mut sets: Vec<EmbeddingSet> = truth
        .level_tags
        .iter()
        .zip(&truth.level_dims)
        .map(|(t, &k)| EmbeddingSet::new(t.clone(), k))
        .collect();
    for (set, h) in sets.iter_mut().zip(&wt_levels) {
        set.insert(to_embedding(&wt_id, h)?)?;
    }

    let mut clean = Vec::with_capacity(mutation_sets.len());
    let mut variants = Vec::with_capacity(mutation_sets.len());
    for (i, muts) in mutation_sets.into_iter().enumerate() {
        let mut f = f_wt.clone();
        let mut score = 0.0;
        for mu in &muts {
            let d = shift(mu.position, mu.mut_aa as u8);
            for j in 0..m {
                f[(mu.position, j)] += d[j];
                score += functional[j] * d[j];
            }
        }
        let id = format!("{}_v{i:05}", spec.name);
        for (level, set) in sets.iter_mut().enumerate() {
            let mut h = wt_levels[level].clone();
            let fresh = truth.embed(&f, level, &mut rng);
            for mu in &muts {
                h.set_row(mu.position, &fresh.row(mu.position));
            }
            set.insert(to_embedding(&id, &h)?)?;
        }
        clean.push(score);
        variants.push(Variant {
            mutations: muts,
            score: 0.0,
            mut_seq_id: id,
        });
    }

    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let spread = (clean.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / clean.len() as f64).sqrt();
    for (v, s) in variants.iter_mut().zip(&clean) {
        let z: f64 = StandardNormal.sample(&mut rng);
        v.score = s + spec.noise * spread * z;
    }

    let dataset = DmsDataset {
        name: spec.name.clone(),
        wt_seq_id: wt_id,
        variants,
    };
    dataset.validate_shape(n)?;
    Ok(DmsFixture {
        dataset,
        sets,
        functional,
    })
}

/// Writes each level as `<dir>/<tag>/manifest.json` plus EMB1 files and
/// returns the manifest paths in level order.
pub fn write_levels(sets: &[EmbeddingSet], dir: &Path) -> Result<Vec<PathBuf>> {
    sets.iter()
        .map(|set| {
            let level_dir = dir.join(set.model_tag());
            let manifest = level_dir.join("manifest.json");
            save_set(set, &level_dir, &manifest)?;
            Ok(manifest)
        })
        .collect()
}

/// Materializes a DMS fixture as `dataset.json`, `variants.csv` and one
/// manifest per level under `dir`. Returns the `dataset.json` path.
pub fn write_dms_fixture(fixture: &DmsFixture, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("variants.csv");
    write_variants_csv(&fixture.dataset, &csv_path)?;
    let mut levels = IndexMap::new();
    for set in &fixture.sets {
        let manifest = write_levels(std::slice::from_ref(set), dir)?.remove(0);
        let rel = manifest.strip_prefix(dir).expect("manifest under dir");
        levels.insert(set.model_tag().to_string(), rel.to_string_lossy().into_owned());
    }
    let file = DatasetFile {
        name: fixture.dataset.name.clone(),
        wt_seq_id: fixture.dataset.wt_seq_id.clone(),
        csv: "variants.csv".into(),
        levels,
    };
    let path = dir.join("dataset.json");
    crate::artifact::write_json(&path, &file)?;
    Ok(path)
}
