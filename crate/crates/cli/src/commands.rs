use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use revdistill::artifact::write_json;
use revdistill::baselines::{ablate_pcr_vs_ols, infer_pca_concat, PcaConcatMap};
use revdistill::distillation::{
    load_artifact, save_artifact, train_chain as fit_chain, Artifact, ChainMap, MappingMode, PairMap,
    TrainOptions,
};
use revdistill::evaluation::{
    chain_config_study, compare_models, default_alpha_grid, eval_dms, DatasetFile, DmsDataset, EvalReport,
    LeveledDataset,
};
use revdistill::inference::{infer_chain_set, prefix_set, save_rd_set};
use revdistill::store::{load_set, save_set, EmbeddingMatrix, EmbeddingSet, Manifest};
use revdistill::synthetic::{gen_dms, gen_family, write_dms_fixture, write_levels, DmsSpec, FamilySpec};

use crate::config::required;
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn parse_mode(mode: Option<&str>) -> Result<MappingMode, CliError> {
    mode.map_or(Ok(MappingMode::Pcr), |m| m.parse().map_err(|e: revdistill::Error| validation(format!("`mode`: {e}"))))
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| validation(format!("{}: {e}", dir.display())))
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Level widths, ascending.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_seqs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_rank: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_energy: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Family seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_datasets: Option<usize>,
    /// Seed of the first DMS dataset; dataset `i` uses `dms_seed + i`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dms_seed: Option<u64>,
    /// Score noise relative to the clean score spread.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dms_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wt_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub singles: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doubles: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triples: Option<usize>,
}

#[derive(Debug, Serialize)]
struct FixtureIndex {
    levels: Vec<String>,
    datasets: Vec<String>,
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let out = required(a.out.clone(), "out")?;
    let d = FamilySpec::default();
    let spec = FamilySpec {
        level_dims: a.dims.clone().unwrap_or(d.level_dims),
        level_tags: Vec::new(),
        n_seqs: a.n_seqs.unwrap_or(d.n_seqs),
        seq_len_range: (a.min_len.unwrap_or(d.seq_len_range.0), a.max_len.unwrap_or(d.seq_len_range.1)),
        shared_rank: a.shared_rank.unwrap_or(d.shared_rank),
        residual_energy: a.residual_energy.map_or(d.residual_energy, |e| vec![e]),
        noise_sigma: a.noise_sigma.unwrap_or(d.noise_sigma),
        seed: a.seed.unwrap_or(d.seed),
    };
    let (sets, truth) = gen_family(&spec)?;
    let family_dir = out.join("family");
    create_dir(&family_dir)?;
    let manifests = write_levels(&sets, &family_dir)?;

    let dd = DmsSpec::default();
    let counts = [
        (1, a.singles.unwrap_or(dd.mut_counts[0].1)),
        (2, a.doubles.unwrap_or(dd.mut_counts[1].1)),
        (3, a.triples.unwrap_or(dd.mut_counts[2].1)),
    ];
    let mut datasets = Vec::new();
    for i in 0..a.n_datasets.unwrap_or(4) {
        let dspec = DmsSpec {
            name: format!("dms_{i:02}"),
            seq_len: a.wt_len.unwrap_or(dd.seq_len),
            mut_counts: counts.iter().copied().filter(|(_, n)| *n > 0).collect(),
            noise: a.dms_noise.unwrap_or(dd.noise),
            signal: dd.signal,
            seed: a.dms_seed.unwrap_or(dd.seed) + i as u64,
        };
        let fixture = gen_dms(&truth, &dspec)?;
        let path = write_dms_fixture(&fixture, &out.join("dms").join(&dspec.name))?;
        datasets.push(path);
    }
    let index = FixtureIndex {
        levels: manifests.iter().map(|p| relative(p, &out)).collect(),
        datasets: datasets.iter().map(|p| relative(p, &out)).collect(),
    };
    write_json(&out.join("fixtures.json"), &index)?;
    for p in &manifests {
        println!("level manifest: {}", p.display());
    }
    for p in &datasets {
        println!("dataset: {}", p.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPairArgs {
    /// Manifest of the smaller model's embeddings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub small: Option<PathBuf>,
    /// Manifest of the larger model's embeddings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub large: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `pcr` (default) or `ols`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Fixed PCR rank instead of automatic selection.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn train_options(mode: Option<&str>, rank: Option<usize>, seed: Option<u64>) -> Result<TrainOptions, CliError> {
    Ok(TrainOptions {
        mode: parse_mode(mode)?,
        rank_override: rank,
        seed: seed.unwrap_or(0),
    })
}

fn print_stage(i: usize, s: &PairMap) {
    let head: Vec<String> = s.residual_singular_values.iter().take(6).map(|v| format!("{v:.4}")).collect();
    println!(
        "stage {i} {}->{} ({}->{}): mode={} r_j={} train_mse={:.6e} residual spectrum head=[{}]{}",
        s.small_tag,
        s.large_tag,
        s.k_r,
        s.k_p,
        s.mode,
        s.r_j,
        s.train_mse,
        head.join(", "),
        if s.completed_columns > 0 {
            format!(" completed_columns={}", s.completed_columns)
        } else {
            String::new()
        }
    );
}

pub fn train_pair(a: &TrainPairArgs) -> CmdResult {
    let small = load_set(required(a.small.clone(), "small")?)?;
    let large = load_set(required(a.large.clone(), "large")?)?;
    let out = required(a.out.clone(), "out")?;
    let opts = train_options(a.mode.as_deref(), a.rank, a.seed)?;
    let map = revdistill::distillation::train_pair(&small, &large, &opts)?;
    print_stage(1, &map);
    let hash = ChainMap::from_pair(map.clone())?.chain_hash();
    save_artifact(&Artifact::Pair(map), &out)?;
    println!("chain_hash: {hash}");
    println!("artifact: {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainChainArgs {
    /// Level manifests, smallest first.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn load_sets(paths: &[PathBuf]) -> Result<Vec<EmbeddingSet>, CliError> {
    paths.iter().map(|p| load_set(p).map_err(CliError::from)).collect()
}

pub fn train_chain(a: &TrainChainArgs) -> CmdResult {
    let sets = load_sets(&required(a.levels.clone(), "levels")?)?;
    let out = required(a.out.clone(), "out")?;
    let opts = train_options(a.mode.as_deref(), a.rank, a.seed)?;
    let chain = fit_chain(&sets, &opts)?;
    for (i, s) in chain.stages.iter().enumerate() {
        print_stage(i + 1, s);
    }
    println!("chain_hash: {}", chain.chain_hash());
    save_artifact(&Artifact::Chain(chain), &out)?;
    println!("artifact: {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferArgs {
    /// Artifact directory (pair, chain or pca_concat).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
    /// Level manifests, smallest first.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<PathBuf>>,
    /// Dataset file whose level manifests supply the inputs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Output directory for EMB1 files and `manifest.json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Refuse to run unless the artifact's chain hash equals this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_hash: Option<String>,
}

fn input_sets(tags: &[String], levels: Option<&[PathBuf]>, dataset: Option<&Path>) -> Result<Vec<EmbeddingSet>, CliError> {
    match (levels, dataset) {
        (Some(paths), None) => load_sets(paths),
        (None, Some(ds)) => {
            let (file, _) = DatasetFile::read(ds)?;
            tags.iter()
                .map(|t| load_set(file.level_manifest(ds, t)?).map_err(CliError::from))
                .collect()
        }
        _ => Err(validation("exactly one of `levels` or `dataset` is required")),
    }
}

fn infer_pca(map: &PcaConcatMap, sets: &[EmbeddingSet]) -> Result<EmbeddingSet, CliError> {
    let mut out = EmbeddingSet::new(format!("pca_concat.{}", map.k_target), map.k_target);
    for m in sets[0].iter() {
        let inputs = sets
            .iter()
            .map(|s| s.get(m.seq_id()).ok_or_else(|| revdistill::Error::MissingEmbedding(m.seq_id().to_string())))
            .collect::<Result<Vec<&EmbeddingMatrix>, _>>()?;
        out.insert(infer_pca_concat(map, &inputs)?)?;
    }
    Ok(out)
}

pub fn infer(a: &InferArgs) -> CmdResult {
    let art_dir = required(a.artifact.clone(), "artifact")?;
    let out = required(a.out.clone(), "out")?;
    let artifact = load_artifact(&art_dir)?;
    if let Artifact::PcaConcat(map) = &artifact {
        if a.expect_hash.is_some() {
            return Err(validation("`expect_hash` does not apply to pca_concat artifacts"));
        }
        let sets = input_sets(&map.level_tags, a.levels.as_deref(), a.dataset.as_deref())?;
        let set = infer_pca(map, &sets)?;
        save_set(&set, &out, out.join("manifest.json"))?;
        println!("wrote {} embeddings to {}", set.len(), out.display());
        return Ok(());
    }
    let chain = artifact.into_chain()?;
    let hash = chain.chain_hash();
    if let Some(expected) = &a.expect_hash {
        if *expected != hash {
            return Err(revdistill::Error::HashMismatch {
                expected: expected.clone(),
                found: hash,
            }
            .into());
        }
    }
    let tags: Vec<String> = chain.hierarchy.tags().iter().map(|t| t.to_string()).collect();
    let sets = input_sets(&tags, a.levels.as_deref(), a.dataset.as_deref())?;
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let rd = infer_chain_set(&chain, &refs)?;
    save_rd_set(&rd, &chain, &out, out.join("manifest.json"))?;
    println!("wrote {} embeddings ({}, k={}) to {}", rd.len(), rd.model_tag(), rd.k(), out.display());
    println!("chain_hash: {hash}");
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixArgs {
    /// Manifest of rd embeddings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Declared level width to keep.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn prefix(a: &PrefixArgs) -> CmdResult {
    let input = required(a.input.clone(), "input")?;
    let k = required(a.k, "k")?;
    let out = required(a.out.clone(), "out")?;
    let manifest = Manifest::read(&input)?;
    let set = load_set(&input)?;
    let narrowed = prefix_set(&set, &manifest, k)?;
    save_set(&narrowed, &out, out.join("manifest.json"))?;
    println!("wrote {} embeddings ({}, k={k}) to {}", narrowed.len(), narrowed.model_tag(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Dataset file; repeat for several datasets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Vec<PathBuf>>,
    /// Manifest of embeddings to score (single dataset only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Score a raw level named in the dataset file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    /// Embed each dataset through this artifact first.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
    /// Report path (single dataset).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Directory receiving `<dataset>__<model>.json` reports.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Ridge regularization grid.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
}

enum Source {
    Manifest(PathBuf),
    Level(String),
    Artifact(Box<Artifact>),
}

fn source_embeddings(source: &Source, ds_path: &Path, file: &DatasetFile) -> Result<EmbeddingSet, CliError> {
    match source {
        Source::Manifest(p) => Ok(load_set(p)?),
        Source::Level(tag) => Ok(load_set(file.level_manifest(ds_path, tag)?)?),
        Source::Artifact(art) => {
            if let Artifact::PcaConcat(map) = art.as_ref() {
                let sets = input_sets(&map.level_tags, None, Some(ds_path))?;
                return infer_pca(map, &sets);
            }
            let chain = art.clone().into_chain()?;
            let tags: Vec<String> = chain.hierarchy.tags().iter().map(|t| t.to_string()).collect();
            let sets = input_sets(&tags, None, Some(ds_path))?;
            let refs: Vec<&EmbeddingSet> = sets.iter().collect();
            Ok(infer_chain_set(&chain, &refs)?)
        }
    }
}

fn alpha_grid(alphas: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    match alphas {
        None => Ok(default_alpha_grid()),
        Some(g) if g.is_empty() || g.iter().any(|a| !(a.is_finite() && *a > 0.0)) => {
            Err(validation("`alphas` must be a nonempty list of positive numbers"))
        }
        Some(g) => Ok(g.to_vec()),
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let datasets = required(a.dataset.clone(), "dataset")?;
    if datasets.is_empty() {
        return Err(validation("missing required field `dataset`"));
    }
    let source = match (&a.embeddings, &a.level, &a.artifact) {
        (Some(m), None, None) => {
            if datasets.len() != 1 {
                return Err(validation("`embeddings` applies to a single dataset"));
            }
            Source::Manifest(m.clone())
        }
        (None, Some(t), None) => Source::Level(t.clone()),
        (None, None, Some(p)) => Source::Artifact(Box::new(load_artifact(p)?)),
        _ => return Err(validation("exactly one of `embeddings`, `level` or `artifact` is required")),
    };
    let grid = alpha_grid(a.alphas.as_deref())?;
    let seed = a.split_seed.unwrap_or(0);
    let single_out = match (&a.out, &a.out_dir) {
        (Some(p), None) if datasets.len() == 1 => Some(p.clone()),
        (Some(_), None) => return Err(validation("`out` applies to a single dataset; use `out_dir`")),
        (None, Some(_)) => None,
        _ => return Err(validation("exactly one of `out` or `out_dir` is required")),
    };

    let reports: Vec<Result<EvalReport, CliError>> = datasets
        .par_iter()
        .map(|ds_path| {
            let (file, ds) = DatasetFile::read(ds_path)?;
            let emb = source_embeddings(&source, ds_path, &file)?;
            Ok(eval_dms(&ds, &emb, &grid, seed)?)
        })
        .collect();
    for r in reports {
        let r = r?;
        let path = match (&single_out, &a.out_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => {
                create_dir(dir)?;
                dir.join(format!("{}__{}.json", r.dataset, r.model_tag))
            }
            (None, None) => unreachable!("checked above"),
        };
        write_json(&path, &r)?;
        let cells: Vec<String> = r
            .buckets
            .iter()
            .map(|b| match b.spearman {
                Some(rho) => format!("{}-mut rho={rho:.4} (n={})", b.mutation_count, b.n_test),
                None => format!("{}-mut undefined (n={})", b.mutation_count, b.n_test),
            })
            .collect();
        println!("{} / {}: alpha={:.4e} {}", r.dataset, r.model_tag, r.alpha, cells.join(", "));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    /// Report files or directories of reports.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<PathBuf>>,
    /// Rendered text table.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Comparison table as JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

fn expand_reports(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| validation(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn compare(a: &CompareArgs) -> CmdResult {
    let paths = expand_reports(&required(a.reports.clone(), "reports")?)?;
    let reports: Vec<EvalReport> = paths
        .par_iter()
        .map(|p| revdistill::artifact::read_json(p).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let table = compare_models(&reports)?;
    let text = table.render();
    print!("{text}");
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        fs::write(out, &text).map_err(|e| validation(format!("{}: {e}", out.display())))?;
    }
    if let Some(json) = &a.json {
        write_json(json, &table)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub small: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub large: Option<PathBuf>,
    /// Dataset file; repeat for several datasets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    /// Report path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn leveled(paths: &[PathBuf], tags: &[&str]) -> Result<Vec<LeveledDataset>, CliError> {
    paths
        .par_iter()
        .map(|p| {
            let (file, dataset): (DatasetFile, DmsDataset) = DatasetFile::read(p)?;
            let sets = tags
                .iter()
                .map(|t| load_set(file.level_manifest(p, t)?).map_err(CliError::from))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LeveledDataset { dataset, sets })
        })
        .collect()
}

pub fn ablate(a: &AblateArgs) -> CmdResult {
    let small = load_set(required(a.small.clone(), "small")?)?;
    let large = load_set(required(a.large.clone(), "large")?)?;
    let datasets = leveled(&required(a.dataset.clone(), "dataset")?, &[small.model_tag(), large.model_tag()])?;
    let grid = alpha_grid(a.alphas.as_deref())?;
    let opts = TrainOptions { seed: a.seed.unwrap_or(0), ..TrainOptions::default() };
    let report = ablate_pcr_vs_ols(&small, &large, &datasets, &opts, &grid, a.split_seed.unwrap_or(0))?;
    for r in &report.rows {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!("{}: pcr rho={} ols rho={}", r.dataset, f(r.pcr_rho), f(r.ols_rho));
    }
    println!(
        "PCR (r_j={}) wins {:.2}% of datasets ({} ties)",
        report.pcr_rank, report.pcr_win_rate, report.ties
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
}

fn describe_pair(prefix: &str, s: &PairMap) {
    println!("{prefix}small_tag: {}", s.small_tag);
    println!("{prefix}large_tag: {}", s.large_tag);
    println!("{prefix}k_r: {}", s.k_r);
    println!("{prefix}k_p: {}", s.k_p);
    println!("{prefix}r_j: {}", s.r_j);
    println!("{prefix}mode: {}", s.mode);
    println!("{prefix}seed: {}", s.seed);
    println!("{prefix}train_rows: {}", s.train_rows);
    println!("{prefix}train_mse: {:.6e}", s.train_mse);
    println!("{prefix}completed_columns: {}", s.completed_columns);
    println!("{prefix}config_hash: {}", s.config_hash);
}

pub fn inspect(a: &InspectArgs) -> CmdResult {
    let dir = required(a.artifact.clone(), "artifact")?;
    let artifact = load_artifact(&dir)?;
    println!("kind: {}", artifact.kind());
    match &artifact {
        Artifact::Pair(p) => {
            describe_pair("", p);
            println!("chain_hash: {}", ChainMap::from_pair(p.clone())?.chain_hash());
        }
        Artifact::Chain(c) => {
            let levels: Vec<String> = c.hierarchy.levels().iter().map(|(t, k)| format!("{t}:{k}")).collect();
            println!("levels: {}", levels.join(" -> "));
            println!("chain_hash: {}", c.chain_hash());
            for (i, s) in c.stages.iter().enumerate() {
                println!("stage {}:", i + 1);
                describe_pair("  ", s);
            }
        }
        Artifact::PcaConcat(m) => {
            println!("level_tags: {}", m.level_tags.join(", "));
            let dims: Vec<String> = m.input_dims.iter().map(usize::to_string).collect();
            println!("input_dims: {}", dims.join(", "));
            println!("k_target: {}", m.k_target);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyArgs {
    /// Family level manifests, smallest first.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<PathBuf>>,
    /// Dataset file; repeat for several datasets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Vec<PathBuf>>,
    /// Chain configuration as level tags joined by `:`; repeatable.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Study table as JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn study(a: &StudyArgs) -> CmdResult {
    let family = load_sets(&required(a.levels.clone(), "levels")?)?;
    let tags: Vec<&str> = family.iter().map(|s| s.model_tag()).collect();
    let configs = required(a.chain.clone(), "chain")?
        .iter()
        .map(|c| {
            c.split(':')
                .map(|t| {
                    tags.iter()
                        .position(|x| *x == t.trim())
                        .ok_or_else(|| validation(format!("`chain`: unknown level {t:?} in {c:?}")))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let datasets = leveled(&required(a.dataset.clone(), "dataset")?, &tags)?;
    let opts = train_options(a.mode.as_deref(), None, a.seed)?;
    let table = chain_config_study(&family, &datasets, &configs, &opts, &default_alpha_grid(), a.split_seed.unwrap_or(0))?;
    print!("{}", table.render());
    if let Some(out) = &a.out {
        write_json(out, &table)?;
    }
    Ok(())
}
