//! Training reverse-distillation maps.
//!
//! A [`PairMap`] predicts a larger model's embedding from a smaller one's
//! (principal component regression by default) and keeps the top
//! `k_p - k_r` right singular vectors of what remains unexplained. A
//! [`ChainMap`] repeats this along a model hierarchy, each stage regressing
//! from the accumulated embedding built so far.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{self, BlockRef, FORMAT_VERSION};
use crate::baselines::PcaConcatMap;
use crate::error::{Error, Result};
use crate::numerics::{self, frobenius_sq, matmul, AffineMap};
use crate::store::{stack, validate_aligned, EmbeddingSet, ModelHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    #[default]
    Pcr,
    Ols,
}

impl fmt::Display for MappingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MappingMode::Pcr => "pcr",
            MappingMode::Ols => "ols",
        })
    }
}

impl std::str::FromStr for MappingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcr" => Ok(MappingMode::Pcr),
            "ols" => Ok(MappingMode::Ols),
            other => Err(Error::InvalidArgument(format!(
                "mapping mode must be pcr or ols, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainOptions {
    pub mode: MappingMode,
    /// Fixed PCR rank instead of the Johnstone selection.
    pub rank_override: Option<usize>,
    /// Seeds the completion of `v_res` when the residual has too few rows.
    pub seed: u64,
}

/// Trained decomposition between a smaller and a larger embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMap {
    pub small_tag: String,
    pub large_tag: String,
    pub k_r: usize,
    pub k_p: usize,
    pub mode: MappingMode,
    pub rank_override: Option<usize>,
    pub seed: u64,
    pub regressor: AffineMap,
    /// `k_p x (k_p - k_r)`, orthonormal columns.
    pub v_res: DMatrix<f64>,
    /// Principal components kept by the regressor (`k_r` in OLS mode).
    pub r_j: usize,
    pub residual_singular_values: Vec<f64>,
    pub train_mse: f64,
    pub train_rows: usize,
    /// Trailing `v_res` columns filled in by seeded completion because the
    /// residual had fewer than `k_p - k_r` singular directions.
    pub completed_columns: usize,
    pub config_hash: String,
}

pub fn config_hash(
    mode: MappingMode,
    r_j: usize,
    seed: u64,
    k_r: usize,
    k_p: usize,
    small_tag: &str,
    large_tag: &str,
) -> String {
    let text = format!("revdistill/v{FORMAT_VERSION}|{mode}|r{r_j}|s{seed}|{k_r}->{k_p}|{small_tag}->{large_tag}");
    artifact::sha256_hex(text.as_bytes())[..32].to_string()
}

impl PairMap {
    pub fn residual_dim(&self) -> usize {
        self.k_p - self.k_r
    }

    pub fn predict(&self, h_r: &DMatrix<f64>) -> DMatrix<f64> {
        self.regressor.apply(h_r)
    }

    pub fn residual(&self, h_r: &DMatrix<f64>, h_p: &DMatrix<f64>) -> DMatrix<f64> {
        h_p - self.predict(h_r)
    }

    /// `(h_p - predict(h_r)) * v_res`, the residual coordinates appended to
    /// `h_r` in the distilled embedding.
    pub fn project_residual(&self, h_r: &DMatrix<f64>, h_p: &DMatrix<f64>) -> DMatrix<f64> {
        matmul(&self.residual(h_r, h_p), &self.v_res)
    }

    fn expected_hash(&self) -> String {
        config_hash(
            self.mode,
            self.r_j,
            self.seed,
            self.k_r,
            self.k_p,
            &self.small_tag,
            &self.large_tag,
        )
    }

    /// Digest of configuration and every learned number.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        artifact::hash_matrix(&mut h, &artifact::column(&self.regressor.input_mean));
        artifact::hash_matrix(&mut h, &self.regressor.weights);
        artifact::hash_matrix(&mut h, &artifact::column(&self.regressor.output_mean));
        artifact::hash_matrix(&mut h, &self.v_res);
        hex::encode(h.finalize())
    }
}

fn stages_hash<'a>(stages: impl IntoIterator<Item = &'a PairMap>) -> String {
    let mut h = Sha256::new();
    h.update(b"chain");
    for s in stages {
        h.update(s.fingerprint().as_bytes());
    }
    hex::encode(h.finalize())[..32].to_string()
}

/// Ordered stages of a chained decomposition over a model hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMap {
    pub hierarchy: ModelHierarchy,
    pub stages: Vec<PairMap>,
}

impl ChainMap {
    pub fn from_pair(map: PairMap) -> Result<Self> {
        let hierarchy = ModelHierarchy::new(vec![
            (map.small_tag.clone(), map.k_r),
            (map.large_tag.clone(), map.k_p),
        ])?;
        Ok(Self {
            hierarchy,
            stages: vec![map],
        })
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.hierarchy.dims()
    }

    pub fn top_dim(&self) -> usize {
        *self.level_dims().last().expect("hierarchy is nonempty")
    }

    pub fn top_tag(&self) -> &str {
        &self.hierarchy.levels().last().expect("hierarchy is nonempty").0
    }

    /// The chain restricted to its first `levels` levels.
    pub fn truncate(&self, levels: usize) -> Result<Self> {
        if levels < 2 || levels > self.hierarchy.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-level chain to {levels} levels",
                self.hierarchy.len()
            )));
        }
        Ok(Self {
            hierarchy: self.hierarchy.truncate(levels),
            stages: self.stages[..levels - 1].to_vec(),
        })
    }

    /// Binds embeddings to the exact artifact that produced them.
    pub fn chain_hash(&self) -> String {
        stages_hash(&self.stages)
    }

    fn validate(&self) -> Result<()> {
        let dims = self.hierarchy.dims();
        if self.stages.len() + 1 != dims.len() {
            return Err(Error::Metadata(format!(
                "{} stages for {} levels",
                self.stages.len(),
                dims.len()
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.k_r != dims[i] || s.k_p != dims[i + 1] {
                return Err(Error::DimMismatch(format!(
                    "stage {} maps {}->{} but hierarchy requires {}->{}",
                    i + 1,
                    s.k_r,
                    s.k_p,
                    dims[i],
                    dims[i + 1]
                )));
            }
        }
        Ok(())
    }
}

/// Fits one stage on stacked matrices. Returns the map and the projected
/// training residual `R * v_res`.
pub fn fit_pair_matrices(
    h_r: &DMatrix<f64>,
    h_p: &DMatrix<f64>,
    small_tag: &str,
    large_tag: &str,
    opts: &TrainOptions,
) -> Result<(PairMap, DMatrix<f64>)> {
    let (l, k_r) = h_r.shape();
    let k_p = h_p.ncols();
    if h_p.nrows() != l {
        return Err(Error::LengthMismatch(format!(
            "{small_tag} has {l} rows, {large_tag} has {}",
            h_p.nrows()
        )));
    }
    if k_r >= k_p {
        return Err(Error::NonIncreasingDims(format!(
            "{small_tag} ({k_r}) -> {large_tag} ({k_p})"
        )));
    }
    if let Some(r) = opts.rank_override {
        if r == 0 || r > k_r {
            return Err(Error::InvalidArgument(format!(
                "rank_override {r} outside [1, {k_r}]"
            )));
        }
        if opts.mode == MappingMode::Ols {
            return Err(Error::InvalidArgument(
                "rank_override applies to pcr mode only".into(),
            ));
        }
    }
    if l < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rows, got {l}")));
    }
    if l <= k_p {
        log::warn!(
            "{small_tag}->{large_tag}: only {l} training rows for {k_p} output dims; residual basis may be completed"
        );
    }

    let pca = numerics::pca(h_r)?;
    if pca.eigenvalues.first().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::Degenerate(format!("{small_tag} embeddings have zero variance")));
    }
    let (regressor, r_j) = match opts.mode {
        MappingMode::Ols => (numerics::ols_fit(h_r, h_p)?, k_r),
        MappingMode::Pcr => {
            let r = match opts.rank_override {
                Some(r) => r,
                None => numerics::johnstone_rank(&pca.eigenvalues, l, k_r)?,
            };
            if r == 0 {
                log::warn!("{small_tag}->{large_tag}: no component above the noise edge; regressor is intercept-only");
                let regressor = AffineMap {
                    input_mean: pca.mean.clone(),
                    weights: DMatrix::zeros(k_r, k_p),
                    output_mean: numerics::column_means(h_p),
                };
                (regressor, 0)
            } else {
                (numerics::pcr_fit_with(&pca, h_r, h_p, r)?, r)
            }
        }
    };

    let residual = h_p - regressor.apply(h_r);
    let dec = numerics::svd(&residual)?;
    let d = k_p - k_r;
    let available = dec.v.ncols().min(d);
    let mut v_res = DMatrix::zeros(k_p, d);
    v_res.columns_mut(0, available).copy_from(&dec.v.columns(0, available));
    let completed_columns = d - available;
    if completed_columns > 0 {
        complete_orthonormal(&mut v_res, available, opts.seed);
    }

    let projected = matmul(&residual, &v_res);
    let reconstructed = matmul(&projected, &v_res.transpose());
    let train_mse = frobenius_sq(&(&residual - reconstructed)) / (l * k_p) as f64;

    let config_hash = config_hash(opts.mode, r_j, opts.seed, k_r, k_p, small_tag, large_tag);
    let map = PairMap {
        small_tag: small_tag.to_string(),
        large_tag: large_tag.to_string(),
        k_r,
        k_p,
        mode: opts.mode,
        rank_override: opts.rank_override,
        seed: opts.seed,
        regressor,
        v_res,
        r_j,
        residual_singular_values: dec.s,
        train_mse,
        train_rows: l,
        completed_columns,
        config_hash,
    };
    Ok((map, projected))
}

/// Fills columns `from..` of `q` with seeded Gaussian directions, Gram–Schmidt
/// orthonormalized against every earlier column.
fn complete_orthonormal(q: &mut DMatrix<f64>, from: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = q.nrows();
    let mut j = from;
    while j < q.ncols() {
        let mut v = nalgebra::DVector::from_fn(rows, |_, _| StandardNormal.sample(&mut rng));
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&v);
                v.axpy(-proj, &q.column(i).into_owned(), 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        q.set_column(j, &(v / norm));
        j += 1;
    }
}

fn check_pair_inputs(set_r: &EmbeddingSet, set_p: &EmbeddingSet) -> Result<()> {
    let report = validate_aligned(set_r, set_p);
    if !report.aligned {
        return Err(Error::Misaligned(format!(
            "{} vs {}: {}",
            set_r.model_tag(),
            set_p.model_tag(),
            report.describe()
        )));
    }
    if set_r.k() >= set_p.k() {
        return Err(Error::NonIncreasingDims(format!(
            "{} ({}) -> {} ({})",
            set_r.model_tag(),
            set_r.k(),
            set_p.model_tag(),
            set_p.k()
        )));
    }
    Ok(())
}

pub fn train_pair(set_r: &EmbeddingSet, set_p: &EmbeddingSet, opts: &TrainOptions) -> Result<PairMap> {
    check_pair_inputs(set_r, set_p)?;
    let h_r = stack(set_r)?;
    let h_p = stack(set_p)?;
    let (map, _) = fit_pair_matrices(
        &h_r.values,
        &h_p.values,
        set_r.model_tag(),
        set_p.model_tag(),
        opts,
    )?;
    Ok(map)
}

/// A trained chain together with the stacked accumulator after every stage.
#[derive(Debug, Clone)]
pub struct ChainTraining {
    pub chain: ChainMap,
    /// `accumulators[i]` has width `k_{i+1}`; `accumulators[0]` is the
    /// stacked level-1 embedding.
    pub accumulators: Vec<DMatrix<f64>>,
}

pub fn train_chain(sets: &[EmbeddingSet], opts: &TrainOptions) -> Result<ChainMap> {
    Ok(train_chain_detailed(sets, opts)?.chain)
}

pub fn train_chain_detailed(sets: &[EmbeddingSet], opts: &TrainOptions) -> Result<ChainTraining> {
    if sets.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a chain needs at least 2 levels, got {}",
            sets.len()
        )));
    }
    let hierarchy = ModelHierarchy::new(
        sets.iter()
            .map(|s| (s.model_tag().to_string(), s.k()))
            .collect(),
    )?;
    for s in &sets[1..] {
        let report = validate_aligned(&sets[0], s);
        if !report.aligned {
            return Err(Error::Misaligned(format!(
                "{} vs {}: {}",
                sets[0].model_tag(),
                s.model_tag(),
                report.describe()
            )));
        }
    }
    let mut acc = stack(&sets[0])?.values;
    let mut accumulators = vec![acc.clone()];
    let mut stages = Vec::with_capacity(sets.len() - 1);
    for w in sets.windows(2) {
        let target = stack(&w[1])?.values;
        let (map, projected) =
            fit_pair_matrices(&acc, &target, w[0].model_tag(), w[1].model_tag(), opts)?;
        acc = numerics::hstack(&acc, &projected);
        accumulators.push(acc.clone());
        stages.push(map);
    }
    Ok(ChainTraining {
        chain: ChainMap { hierarchy, stages },
        accumulators,
    })
}

/// `||R - R Q Q^T||_F^2 / (L k)` for a residual `R` and orthonormal `Q`.
pub fn projection_mse(residual: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let (l, k) = residual.shape();
    let approx = matmul(&matmul(residual, q), &q.transpose());
    frobenius_sq(&(residual - approx)) / (l * k) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    pub rows: usize,
    /// `||R||^2 / (L k_p)` with `R` the regression residual.
    pub mse_before_projection: f64,
    /// Residual energy left after projecting onto `v_res`, per entry.
    pub mse_after_projection: f64,
    /// Share of `||R||^2` captured by each `v_res` column.
    pub captured_fraction: Vec<f64>,
}

pub fn reconstruction_report(map: &PairMap, set_r: &EmbeddingSet, set_p: &EmbeddingSet) -> Result<ReconReport> {
    if set_r.k() != map.k_r || set_p.k() != map.k_p {
        return Err(Error::DimMismatch(format!(
            "map is {}->{}, sets are {}->{}",
            map.k_r,
            map.k_p,
            set_r.k(),
            set_p.k()
        )));
    }
    check_pair_inputs(set_r, set_p)?;
    let h_r = stack(set_r)?.values;
    let h_p = stack(set_p)?.values;
    let residual = map.residual(&h_r, &h_p);
    let l = residual.nrows();
    let total = frobenius_sq(&residual);
    let projected = matmul(&residual, &map.v_res);
    let captured_fraction = projected
        .column_iter()
        .map(|c| if total > 0.0 { c.norm_squared() / total } else { 0.0 })
        .collect();
    Ok(ReconReport {
        rows: l,
        mse_before_projection: total / (l * map.k_p) as f64,
        mse_after_projection: projection_mse(&residual, &map.v_res),
        captured_fraction,
    })
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairMeta {
    format_version: u32,
    kind: String,
    small_tag: String,
    large_tag: String,
    k_r: usize,
    k_p: usize,
    mode: MappingMode,
    rank_override: Option<usize>,
    seed: u64,
    r_j: usize,
    residual_singular_values: Vec<f64>,
    train_mse: f64,
    train_rows: usize,
    completed_columns: usize,
    config_hash: String,
    chain_hash: String,
    blocks: PairBlocks,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairBlocks {
    input_mean: BlockRef,
    weights: BlockRef,
    output_mean: BlockRef,
    v_res: BlockRef,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainMeta {
    format_version: u32,
    kind: String,
    levels: Vec<(String, usize)>,
    stages: Vec<String>,
    chain_hash: String,
}

/// Any artifact this toolkit persists.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Pair(PairMap),
    Chain(ChainMap),
    PcaConcat(PcaConcatMap),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Pair(_) => "pair",
            Artifact::Chain(_) => "chain",
            Artifact::PcaConcat(_) => "pca_concat",
        }
    }

    /// Pair artifacts are viewed as single-stage chains.
    pub fn into_chain(self) -> Result<ChainMap> {
        match self {
            Artifact::Pair(p) => ChainMap::from_pair(p),
            Artifact::Chain(c) => Ok(c),
            Artifact::PcaConcat(_) => Err(Error::InvalidArgument(
                "pca_concat artifacts have no reverse-distillation chain".into(),
            )),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_pair(map: &PairMap, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let blocks = PairBlocks {
        input_mean: artifact::write_block(dir, "input_mean", &artifact::column(&map.regressor.input_mean))?,
        weights: artifact::write_block(dir, "weights", &map.regressor.weights)?,
        output_mean: artifact::write_block(dir, "output_mean", &artifact::column(&map.regressor.output_mean))?,
        v_res: artifact::write_block(dir, "v_res", &map.v_res)?,
    };
    let meta = PairMeta {
        format_version: FORMAT_VERSION,
        kind: "pair".into(),
        small_tag: map.small_tag.clone(),
        large_tag: map.large_tag.clone(),
        k_r: map.k_r,
        k_p: map.k_p,
        mode: map.mode,
        rank_override: map.rank_override,
        seed: map.seed,
        r_j: map.r_j,
        residual_singular_values: map.residual_singular_values.clone(),
        train_mse: map.train_mse,
        train_rows: map.train_rows,
        completed_columns: map.completed_columns,
        config_hash: map.config_hash.clone(),
        chain_hash: stages_hash([map]),
        blocks,
    };
    artifact::write_json(&dir.join("meta.json"), &meta)
}

pub fn load_pair(dir: impl AsRef<Path>) -> Result<PairMap> {
    let dir = dir.as_ref();
    let header = artifact::read_header(dir)?;
    if header.kind != "pair" {
        return Err(Error::Metadata(format!(
            "{}: expected a pair artifact, found {:?}",
            dir.display(),
            header.kind
        )));
    }
    let meta: PairMeta = artifact::read_json(&dir.join("meta.json"))?;
    if meta.k_r == 0 || meta.k_r >= meta.k_p {
        return Err(Error::Metadata(format!(
            "{}: invalid dims {} -> {}",
            dir.display(),
            meta.k_r,
            meta.k_p
        )));
    }
    let expected = config_hash(
        meta.mode,
        meta.r_j,
        meta.seed,
        meta.k_r,
        meta.k_p,
        &meta.small_tag,
        &meta.large_tag,
    );
    if expected != meta.config_hash {
        return Err(Error::HashMismatch {
            expected,
            found: meta.config_hash,
        });
    }
    let (k_r, k_p) = (meta.k_r, meta.k_p);
    let input_mean = artifact::read_block(dir, &meta.blocks.input_mean, (k_r, 1))?;
    let weights = artifact::read_block(dir, &meta.blocks.weights, (k_r, k_p))?;
    let output_mean = artifact::read_block(dir, &meta.blocks.output_mean, (k_p, 1))?;
    let v_res = artifact::read_block(dir, &meta.blocks.v_res, (k_p, k_p - k_r))?;
    let map = PairMap {
        small_tag: meta.small_tag,
        large_tag: meta.large_tag,
        k_r,
        k_p,
        mode: meta.mode,
        rank_override: meta.rank_override,
        seed: meta.seed,
        regressor: AffineMap {
            input_mean: artifact::as_vector(&input_mean),
            weights,
            output_mean: artifact::as_vector(&output_mean),
        },
        v_res,
        r_j: meta.r_j,
        residual_singular_values: meta.residual_singular_values,
        train_mse: meta.train_mse,
        train_rows: meta.train_rows,
        completed_columns: meta.completed_columns,
        config_hash: meta.config_hash,
    };
    debug_assert_eq!(map.expected_hash(), map.config_hash);
    let found = stages_hash([&map]);
    if found != meta.chain_hash {
        return Err(Error::HashMismatch {
            expected: meta.chain_hash,
            found,
        });
    }
    Ok(map)
}

pub fn save_chain(chain: &ChainMap, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let mut names = Vec::with_capacity(chain.stages.len());
    for (i, stage) in chain.stages.iter().enumerate() {
        let name = format!("stage_{}", i + 1);
        save_pair(stage, dir.join(&name))?;
        names.push(name);
    }
    let meta = ChainMeta {
        format_version: FORMAT_VERSION,
        kind: "chain".into(),
        levels: chain.hierarchy.levels().to_vec(),
        stages: names,
        chain_hash: chain.chain_hash(),
    };
    artifact::write_json(&dir.join("meta.json"), &meta)
}

pub fn load_chain(dir: impl AsRef<Path>) -> Result<ChainMap> {
    let dir = dir.as_ref();
    let meta: ChainMeta = artifact::read_json(&dir.join("meta.json"))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            context: dir.display().to_string(),
            expected: FORMAT_VERSION,
            found: meta.format_version,
        });
    }
    let hierarchy = ModelHierarchy::new(meta.levels)?;
    let stages = meta
        .stages
        .iter()
        .map(|name| load_pair(dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let chain = ChainMap { hierarchy, stages };
    chain.validate()?;
    let found = chain.chain_hash();
    if found != meta.chain_hash {
        return Err(Error::HashMismatch {
            expected: meta.chain_hash,
            found,
        });
    }
    Ok(chain)
}

pub fn save_artifact(artifact: &Artifact, dir: impl AsRef<Path>) -> Result<()> {
    match artifact {
        Artifact::Pair(p) => save_pair(p, dir),
        Artifact::Chain(c) => save_chain(c, dir),
        Artifact::PcaConcat(m) => crate::baselines::save_pca_concat(m, dir),
    }
}

pub fn load_artifact(dir: impl AsRef<Path>) -> Result<Artifact> {
    let dir = dir.as_ref();
    let header = artifact::read_header(dir)?;
    match header.kind.as_str() {
        "pair" => load_pair(dir).map(Artifact::Pair),
        "chain" => load_chain(dir).map(Artifact::Chain),
        "pca_concat" => crate::baselines::load_pca_concat(dir).map(Artifact::PcaConcat),
        other => Err(Error::Metadata(format!(
            "{}: unknown artifact kind {other:?}",
            dir.display()
        ))),
    }
}
