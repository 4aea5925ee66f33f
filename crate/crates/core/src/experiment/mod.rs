//! Declarative experiment runs. A TOML config fully determines every metric
//! table; each run lands in a fresh directory named by kind, config hash and
//! start time, next to a `manifest.toml` describing what was written.

mod plot;
mod selftest;

pub use plot::{plot, PlotKind};
pub use selftest::{selftest, SelftestResult};

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gnn::{
    benchmark_inference, benchmark_layers, train_beamformer, write_curve_csv, write_latency_csv, BeamformerModel,
    HybridModelConfig, TrainConfig,
};
use crate::semcom::{
    evaluate_over_snr, generate_corpus, load_corpus, train_jscd, write_jscd_curve_csv, write_snr_csv, CorpusConfig,
    JscdModelConfig, JscdTrainConfig,
};
use crate::ssm::{benchmark_scan, write_scan_csv};
use crate::wireless::{oracle_beamforming, sample_channel, ChannelRealization, NetworkConfig, OracleConfig, NOISELESS};

pub const MANIFEST: &str = "manifest.toml";

/// Channel seeds of the three splits start at these offsets within a run
/// seed's block, so the splits never share a realization.
const SPLIT_STRIDE: u64 = 1 << 32;
const VAL_OFFSET: u64 = 1 << 30;
const TEST_OFFSET: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Beamforming,
    Jscd,
    ScanBench,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Beamforming => "beamforming",
            ExperimentKind::Jscd => "jscd",
            ExperimentKind::ScanBench => "scan-bench",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub beamforming: BeamformingExperiment,
    #[serde(default)]
    pub jscd: JscdExperiment,
    #[serde(default)]
    pub scan_bench: ScanBenchExperiment,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamVariant {
    Hybrid,
    PureGat,
}

impl BeamVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BeamVariant::Hybrid => "hybrid",
            BeamVariant::PureGat => "pure-gat",
        }
    }

    /// The hybrid layout as given, or the same sizes with attention at every
    /// layer.
    pub fn model_config(&self, hybrid: &HybridModelConfig) -> HybridModelConfig {
        match self {
            BeamVariant::Hybrid => hybrid.clone(),
            BeamVariant::PureGat => HybridModelConfig {
                attention_layers: (0..hybrid.layers).collect(),
                mamba_layers: vec![],
                ..hybrid.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformingExperiment {
    pub network: NetworkConfig,
    pub train_channels: usize,
    pub val_channels: usize,
    pub test_channels: usize,
    pub variants: Vec<BeamVariant>,
    pub model: HybridModelConfig,
    pub train: TrainConfig,
    pub oracle: OracleConfig,
    /// User counts for the latency tables; empty skips timing.
    pub latency_users: Vec<usize>,
    pub latency_repeats: usize,
}

impl Default for BeamformingExperiment {
    fn default() -> Self {
        BeamformingExperiment {
            network: NetworkConfig::default(),
            train_channels: 50_000,
            val_channels: 500,
            test_channels: 1000,
            variants: vec![BeamVariant::Hybrid, BeamVariant::PureGat],
            model: HybridModelConfig::hybrid(),
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            oracle: OracleConfig::default(),
            latency_users: vec![16, 32, 64, 128, 256],
            latency_repeats: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JscdExperiment {
    /// One sentence per line; when absent the built-in grammar generates
    /// `corpus.sentences` sentences.
    pub corpus_path: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub test_sentences: usize,
    pub val_sentences: usize,
    pub model: JscdModelConfig,
    pub train: JscdTrainConfig,
    /// Mamba variant and a baseline trained from the same seed.
    pub train_baseline: bool,
    pub snrs_db: Vec<f64>,
    pub include_noiseless: bool,
    /// Noise seeds of the evaluation; sentences are scored once per seed.
    pub eval_seeds: Vec<u64>,
    /// Evaluated prefix of the test split.
    pub eval_sentences: usize,
}

impl Default for JscdExperiment {
    fn default() -> Self {
        JscdExperiment {
            corpus_path: None,
            corpus: CorpusConfig::default(),
            test_sentences: 2000,
            val_sentences: 200,
            model: JscdModelConfig::default(),
            train: JscdTrainConfig::default(),
            train_baseline: true,
            snrs_db: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0],
            include_noiseless: true,
            eval_seeds: vec![1],
            eval_sentences: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanBenchExperiment {
    pub lengths: Vec<usize>,
    pub d: usize,
    pub n: usize,
    pub repeats: usize,
}

impl Default for ScanBenchExperiment {
    fn default() -> Self {
        ScanBenchExperiment { lengths: vec![256, 512, 1024, 2048, 4096, 8192], d: 8, n: 16, repeats: 5 }
    }
}

impl ExperimentConfig {
    /// Parse errors carry the line and column of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match self.kind {
            ExperimentKind::Beamforming => {
                let b = &self.beamforming;
                b.network.validate().map_err(|e| Error::Config(e.to_string()))?;
                if b.variants.is_empty() || b.train_channels == 0 || b.val_channels == 0 || b.test_channels == 0 {
                    return Err(Error::Config("beamforming needs variants and nonempty splits".into()));
                }
                if b.train_channels as u64 >= VAL_OFFSET || b.val_channels as u64 >= VAL_OFFSET {
                    return Err(Error::Config("split sizes exceed the per-seed channel block".into()));
                }
                b.model.validate()
            }
            ExperimentKind::Jscd => {
                let j = &self.jscd;
                if j.eval_seeds.is_empty() || j.eval_sentences == 0 || j.eval_sentences > j.test_sentences {
                    return Err(Error::Config("jscd evaluation needs seeds and 1..=test_sentences sentences".into()));
                }
                if j.snrs_db.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config(
                        "SNRs must be finite; use include_noiseless for the clean channel".into(),
                    ));
                }
                j.model.validate()
            }
            ExperimentKind::ScanBench => {
                let s = &self.scan_bench;
                if s.lengths.is_empty() || s.repeats == 0 || s.d == 0 || s.n == 0 {
                    return Err(Error::Config("scan bench needs lengths, repeats and positive sizes".into()));
                }
                Ok(())
            }
        }
    }

    /// SHA-256 over the canonical TOML of everything except the output
    /// directory, as lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() };
        let text = toml::to_string(&canonical).expect("configs always serialize");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One file written by a run. Timing tables vary between reruns; every
/// other table is a pure function of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub file: String,
    pub seed: u64,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub build: String,
    pub seeds: Vec<u64>,
    pub tables: Vec<TableEntry>,
    pub checkpoints: Vec<String>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl RunReport {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let mut r: RunReport = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        r.dir = dir.to_path_buf();
        Ok(r)
    }

    /// Metric tables, excluding timing.
    pub fn metric_tables(&self) -> impl Iterator<Item = &TableEntry> {
        self.tables.iter().filter(|t| t.deterministic)
    }
}

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_VERSION"), option_env!("MAMBA_WIRELESS_GIT").unwrap_or("unknown"))
}

/// Create `<output>/<kind>-<hash12>-<unixsecs>`, bumping the suffix rather
/// than reusing an existing directory.
fn fresh_dir(config: &ExperimentConfig, started: u64) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir)?;
    let stem = format!("{}-{}-{started}", config.kind.name(), &config.hash()[..12]);
    for attempt in 0.. {
        let name = if attempt == 0 { stem.clone() } else { format!("{stem}.{attempt}") };
        let dir = config.output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the attempt counter is unbounded")
}

struct Outputs<'a> {
    dir: &'a Path,
    tables: Vec<TableEntry>,
    checkpoints: Vec<String>,
}

impl Outputs<'_> {
    fn seed_dir(&self, seed: u64) -> Result<PathBuf> {
        let d = self.dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn table(&mut self, seed: u64, name: &str, deterministic: bool) -> Result<File> {
        let path = self.seed_dir(seed)?.join(name);
        self.tables.push(TableEntry { file: format!("seed-{seed}/{name}"), seed, deterministic });
        Ok(File::create(path)?)
    }

    fn table_path(&mut self, seed: u64, name: &str) -> Result<PathBuf> {
        let path = self.seed_dir(seed)?.join(name);
        self.tables.push(TableEntry { file: format!("seed-{seed}/{name}"), seed, deterministic: true });
        Ok(path)
    }

    fn checkpoint(&mut self, seed: u64, name: &str) -> Result<PathBuf> {
        let path = self.seed_dir(seed)?.join(name);
        self.checkpoints.push(format!("seed-{seed}/{name}"));
        Ok(path)
    }
}

/// Run `config` to completion. Artifacts written before a failure stay on
/// disk; the manifest is written last and only on success.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let dir = fresh_dir(config, started)?;
    fs::write(dir.join("config.toml"), toml::to_string(config).expect("configs always serialize"))?;
    let mut out = Outputs { dir: &dir, tables: Vec::new(), checkpoints: Vec::new() };
    for &seed in &config.seeds {
        match config.kind {
            ExperimentKind::Beamforming => run_beamforming(&config.beamforming, seed, &mut out)?,
            ExperimentKind::Jscd => run_jscd(&config.jscd, seed, &mut out)?,
            ExperimentKind::ScanBench => {
                let s = &config.scan_bench;
                let rows = benchmark_scan(&s.lengths, s.d, s.n, s.repeats, seed)?;
                write_scan_csv(out.table(seed, "scan_latency.csv", false)?, &rows)?;
            }
        }
    }
    let report = RunReport {
        kind: config.kind,
        config_hash: config.hash(),
        started_unix: started,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        build: build_id(),
        seeds: config.seeds.clone(),
        tables: out.tables,
        checkpoints: out.checkpoints,
        dir: dir.clone(),
    };
    fs::write(dir.join(MANIFEST), toml::to_string(&report).expect("reports always serialize"))?;
    Ok(report)
}

/// Read, validate and run a config file. Nothing is created on disk when
/// the file does not parse.
pub fn run_path(path: impl AsRef<Path>) -> Result<RunReport> {
    run(&ExperimentConfig::from_path(path)?)
}

fn channels(network: &NetworkConfig, base: u64, n: usize) -> Vec<ChannelRealization> {
    (0..n as u64).into_par_iter().map(|i| sample_channel(network, base + i)).collect()
}

pub fn oracle_values(
    channels: &[ChannelRealization],
    network: &NetworkConfig,
    oracle: &OracleConfig,
) -> Result<Vec<f64>> {
    channels.par_iter().map(|h| oracle_beamforming(h, network, oracle).map(|r| r.ee)).collect()
}

#[derive(Serialize)]
struct QualityRow<'a> {
    variant: &'a str,
    #[serde(rename = "K")]
    k: usize,
    channels: usize,
    mean_ee: f64,
    oracle_mean_ee: f64,
    ratio_to_oracle: f64,
    best_epoch: usize,
}

fn run_beamforming(b: &BeamformingExperiment, seed: u64, out: &mut Outputs) -> Result<()> {
    let base = seed.wrapping_mul(SPLIT_STRIDE);
    let train = channels(&b.network, base, b.train_channels);
    let val = channels(&b.network, base + VAL_OFFSET, b.val_channels);
    let test = channels(&b.network, base + TEST_OFFSET, b.test_channels);
    let val_oracle = oracle_values(&val, &b.network, &b.oracle)?;
    let test_oracle = oracle_values(&test, &b.network, &b.oracle)?;
    let oracle_mean = test_oracle.iter().sum::<f64>() / test.len() as f64;

    let mut quality = csv::Writer::from_writer(out.table(seed, "quality.csv", true)?);
    let mut models: Vec<(BeamVariant, BeamformerModel)> = Vec::new();
    for &variant in &b.variants {
        let tc = TrainConfig { seed: b.train.seed ^ seed, ..b.train.clone() };
        let trained =
            train_beamformer(&train, &val, Some(&val_oracle), &b.network, variant.model_config(&b.model), &tc)?;
        write_curve_csv(out.table_path(seed, &format!("curve_{}.csv", variant.name()))?, &trained.curve)?;
        trained.model.save(out.checkpoint(seed, &format!("{}.ck", variant.name()))?)?;
        let ee = trained.model.evaluate(&test, &b.network)?;
        let mean_ee = ee.iter().sum::<f64>() / test.len() as f64;
        quality.serialize(QualityRow {
            variant: variant.name(),
            k: b.network.k,
            channels: test.len(),
            mean_ee,
            oracle_mean_ee: oracle_mean,
            ratio_to_oracle: mean_ee / oracle_mean,
            best_epoch: trained.best_epoch,
        })?;
        quality.flush()?;
        models.push((variant, trained.model));
    }

    if !b.latency_users.is_empty() {
        let named: Vec<(&str, &BeamformerModel)> = models.iter().map(|(v, m)| (v.name(), m)).collect();
        let rows = benchmark_inference(&named, &b.latency_users, b.latency_repeats, seed)?;
        write_latency_csv(out.table(seed, "latency.csv", false)?, &rows)?;
        let mut layer_rows = Vec::new();
        for (_, m) in &models {
            for r in benchmark_layers(m, &b.latency_users, b.latency_repeats, seed)? {
                if !layer_rows.iter().any(|x: &crate::gnn::LatencyRow| x.model == r.model && x.k == r.k) {
                    layer_rows.push(r);
                }
            }
        }
        write_latency_csv(out.table(seed, "layer_latency.csv", false)?, &layer_rows)?;
    }
    Ok(())
}

fn run_jscd(j: &JscdExperiment, seed: u64, out: &mut Outputs) -> Result<()> {
    let corpus = match &j.corpus_path {
        Some(p) => load_corpus(p, j.corpus.min_words, j.corpus.max_words)?,
        None => generate_corpus(&CorpusConfig { seed: j.corpus.seed ^ seed, ..j.corpus.clone() })?,
    };
    if corpus.len() <= j.test_sentences + j.val_sentences {
        return Err(Error::Config(format!(
            "corpus of {} sentences leaves nothing to train on after {} test and {} validation",
            corpus.len(),
            j.test_sentences,
            j.val_sentences
        )));
    }
    let (test, rest) = corpus.split_at(j.test_sentences);
    let (val, train) = rest.split_at(j.val_sentences);
    let eval_set = &test[..j.eval_sentences];
    let mut snrs = j.snrs_db.clone();
    if j.include_noiseless {
        snrs.push(NOISELESS);
    }

    let mut variants = vec![("mamba", j.model.clone())];
    if j.train_baseline {
        variants.insert(0, ("baseline", j.model.baseline()));
    }
    let mut rows = Vec::new();
    for (name, model_config) in variants {
        let tc = JscdTrainConfig { seed: j.train.seed ^ seed, ..j.train.clone() };
        let trained = train_jscd(train, val, model_config, &tc)?;
        write_jscd_curve_csv(out.table_path(seed, &format!("curve_{name}.csv"))?, &trained.curve)?;
        trained.model.save(out.checkpoint(seed, &format!("{name}.ck"))?)?;
        rows.extend(evaluate_over_snr(name, &trained.model, &trained.vocab, eval_set, &snrs, &j.eval_seeds)?);
    }
    write_snr_csv(out.table_path(seed, "bleu.csv")?, &rows)?;
    Ok(())
}
