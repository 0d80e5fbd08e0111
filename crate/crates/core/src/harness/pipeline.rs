//! Stage orchestration over the on-disk artifact store.
//!
//! ```text
//! {root}/calibration/{label}.json
//! {root}/{dataset}/data/                      generated samples
//! {root}/{dataset}/intersection.json          explained test samples
//! {root}/{dataset}/{arch}/seed{k}/            checkpoint, training_report.json
//! {root}/{dataset}/{arch}/seed{k}/maps/       attr_{method}_{arch}_test.f32, index.json
//! {root}/scores/{dataset}/{arch}/seed{k}.csv  one row per explained sample
//! {root}/report/                              aggregate.csv, report.json, boxplots.svg, failures.json
//! ```
//!
//! Every stage checks for an up-to-date artifact before computing, so a
//! rerun over an existing root only redoes what is missing or stale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, read_scores, write_scores, CellKey, ScoreRow};
use super::config::{BenchmarkConfig, DatasetConfig};
use super::report::{emit_report, ArtifactRef, BenchmarkReport, CalibrationEntry, CellFailure, WHISKER_CONVENTION};
use crate::datagen::{build_dataset, load_dataset, load_manifest, save_dataset, Dataset, ImageGrid, ScenarioSpec};
use crate::error::{Error, Result};
use crate::explain::{explain_batch, ImportanceMap, Method};
use crate::io_util::{read_json, sha256_hex, write_atomic, write_json};
use crate::metrics::score_all;
use crate::models::{
    calibrate_snr, correctly_predicted_intersection, load_model, save_model, train, ArchKind, ArchitectureSpec,
    Calibration, Classifier, TrainedModel, TrainingConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Calibrate,
    Generate,
    Train,
    Explain,
    Score,
    Report,
}

/// What a run produced. Failures are per cell; the rest of the run went on.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: Option<BenchmarkReport>,
    pub failures: Vec<CellFailure>,
}

/// One trained model slot: `(dataset, arch, seed index)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub dataset: String,
    pub arch: ArchKind,
    pub seed_index: u64,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/seed{}", self.dataset, self.arch.id(), self.seed_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CalibrationKey {
    template: ScenarioSpec,
    arch: ArchKind,
    alphas: Vec<f64>,
    trials: usize,
    threshold: f64,
    training: TrainingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CalibrationFile {
    key: CalibrationKey,
    result: Calibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Intersection {
    models: Vec<String>,
    correct: usize,
    cap: Option<usize>,
    sample_ids: Vec<usize>,
}

/// Everything an attribution map file depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MapKey {
    method: String,
    model_digest: String,
    sample_ids: Vec<usize>,
    seed: u64,
    hyperparameters: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MapEntry {
    key: MapKey,
    file: String,
    side: usize,
    sha256: String,
    signed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ScoreSidecar {
    maps: Vec<String>,
    csv_sha256: String,
}

/// A dataset that made it through calibration and generation.
struct ReadyDataset {
    config: DatasetConfig,
    data: Dataset,
}

pub struct Pipeline {
    config: BenchmarkConfig,
    root: PathBuf,
    verbose: bool,
    failures: Mutex<Vec<CellFailure>>,
}

fn params_digest(model: &TrainedModel) -> String {
    let mut bytes = Vec::new();
    for p in model.network.params() {
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

fn encode_maps(maps: &[ImportanceMap]) -> Vec<u8> {
    maps.iter().flat_map(|m| m.grid.data().iter().flat_map(|&v| (v as f32).to_le_bytes())).collect()
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

impl Pipeline {
    pub fn new(config: BenchmarkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            root: config.output_root.clone(),
            config,
            verbose: false,
            failures: Mutex::new(Vec::new()),
        })
    }

    /// Progress lines on stderr.
    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.config
    }

    fn log(&self, stage: &str, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{stage}] {}", msg.as_ref());
        }
    }

    fn fail(&self, stage: &str, cell: impl ToString, error: &Error) {
        self.log(stage, format!("{} failed: {error}", cell.to_string()));
        self.failures.lock().expect("failure log").push(CellFailure {
            stage: stage.to_string(),
            cell: cell.to_string(),
            error: error.to_string(),
        });
    }

    pub fn model_dir(&self, cell: &Cell) -> PathBuf {
        self.root.join(&cell.dataset).join(cell.arch.id()).join(format!("seed{}", cell.seed_index))
    }

    pub fn scores_path(&self, cell: &Cell) -> PathBuf {
        self.root
            .join("scores")
            .join(&cell.dataset)
            .join(cell.arch.id())
            .join(format!("seed{}.csv", cell.seed_index))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Runs every stage up to and including `until`.
    pub fn run(&self, until: Stage) -> Result<RunOutcome> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let (calibrations, specs) = self.calibrate_all();
        let mut report = None;
        if until >= Stage::Generate {
            let datasets = self.generate_all(specs);
            if until >= Stage::Train {
                let models = self.train_all(&datasets);
                if until >= Stage::Explain {
                    let explained = self.explain_all(&datasets, &models);
                    if until >= Stage::Score {
                        self.score_all(&datasets, &explained);
                    }
                }
            }
            if until >= Stage::Report {
                let r = self.build_report(calibrations)?;
                emit_report(&r, &self.report_dir())?;
                report = Some(r);
            }
        }
        let mut failures = self.failures.lock().expect("failure log").clone();
        failures.sort_by(|a, b| (&a.stage, &a.cell).cmp(&(&b.stage, &b.cell)));
        if until < Stage::Report {
            write_json(&self.report_dir().join("failures.json"), &failures)?;
        }
        Ok(RunOutcome { report, failures })
    }

    /// Rebuilds the report from whatever score files exist, computing
    /// nothing upstream.
    pub fn report_only(&self) -> Result<BenchmarkReport> {
        let calibrations = self
            .config
            .datasets
            .iter()
            .filter(|d| d.alpha.is_none())
            .filter_map(|d| {
                let file: CalibrationFile = read_json(&self.calibration_path(d)).ok()?;
                Some(CalibrationEntry {
                    dataset: d.label(),
                    calibration: file.result,
                })
            })
            .collect();
        let report = self.build_report(calibrations)?;
        emit_report(&report, &self.report_dir())?;
        Ok(report)
    }

    fn calibration_path(&self, d: &DatasetConfig) -> PathBuf {
        self.root.join("calibration").join(format!("{}.json", d.label()))
    }

    fn calibrate_all(&self) -> (Vec<CalibrationEntry>, Vec<(DatasetConfig, ScenarioSpec)>) {
        let mut entries = Vec::new();
        let mut specs = Vec::new();
        for d in &self.config.datasets {
            let alpha = match d.alpha {
                Some(a) => a,
                None => match self.calibrate(d) {
                    Ok(c) => {
                        let a = c.chosen_alpha;
                        entries.push(CalibrationEntry {
                            dataset: d.label(),
                            calibration: c,
                        });
                        a
                    }
                    Err(e) => {
                        self.fail("calibrate", d.label(), &e);
                        continue;
                    }
                },
            };
            specs.push((d.clone(), d.spec(alpha, self.config.seed)));
        }
        (entries, specs)
    }

    fn calibrate(&self, d: &DatasetConfig) -> Result<Calibration> {
        let c = self.config.calibration.as_ref().expect("validated: calibration present");
        let mut template = d.spec(c.alphas[0], self.config.seed);
        if let Some(n) = c.n_samples {
            template.n_samples = n;
        }
        let mut training = self.config.training(d.scenario, template.side, self.config.seed);
        if let Some(e) = c.epochs.or(self.config.epochs) {
            training.epochs = e;
        }
        let key = CalibrationKey {
            template: template.clone(),
            arch: c.arch,
            alphas: c.alphas.clone(),
            trials: c.trials,
            threshold: c.threshold,
            training: training.clone(),
        };
        let path = self.calibration_path(d);
        if let Ok(file) = read_json::<CalibrationFile>(&path) {
            if file.key == key {
                self.log("calibrate", format!("{} cached", d.label()));
                return Ok(file.result);
            }
        }
        self.log("calibrate", format!("{}: {} alphas x {} trials", d.label(), c.alphas.len(), c.trials));
        let result = calibrate_snr(&template, c.arch, &c.alphas, c.trials, c.threshold, &training)?;
        write_json(&path, &CalibrationFile { key, result: result.clone() })?;
        Ok(result)
    }

    fn generate_all(&self, specs: Vec<(DatasetConfig, ScenarioSpec)>) -> Vec<ReadyDataset> {
        let results: Vec<Option<ReadyDataset>> = specs
            .into_par_iter()
            .map(|(config, spec)| match self.ensure_dataset(&spec) {
                Ok(data) => Some(ReadyDataset { config, data }),
                Err(e) => {
                    self.fail("generate", spec.dataset_name(), &e);
                    None
                }
            })
            .collect();
        results.into_iter().flatten().collect()
    }

    fn ensure_dataset(&self, spec: &ScenarioSpec) -> Result<Dataset> {
        let dir = self.root.join(spec.dataset_name()).join("data");
        if let Ok(manifest) = load_manifest(&dir) {
            if manifest.spec == *spec {
                if let Ok(data) = load_dataset(&dir) {
                    self.log("generate", format!("{} cached", spec.dataset_name()));
                    return Ok(data);
                }
            }
        }
        self.log("generate", format!("{} ({} samples)", spec.dataset_name(), spec.n_samples));
        let data = build_dataset(spec)?;
        save_dataset(&data, &dir)?;
        Ok(data)
    }

    fn cells(&self, datasets: &[ReadyDataset]) -> Vec<(usize, Cell)> {
        let mut cells = Vec::new();
        for (i, d) in datasets.iter().enumerate() {
            for arch in self.config.architectures_for(d.config.scenario) {
                for k in 0..self.config.trainings as u64 {
                    cells.push((
                        i,
                        Cell {
                            dataset: d.data.name(),
                            arch,
                            seed_index: k,
                        },
                    ));
                }
            }
        }
        cells
    }

    fn train_all(&self, datasets: &[ReadyDataset]) -> Vec<(usize, Cell, TrainedModel)> {
        let cells = self.cells(datasets);
        let trained: Vec<Option<(usize, Cell, TrainedModel)>> = cells
            .into_par_iter()
            .map(|(i, cell)| match self.ensure_model(&datasets[i].data, &cell) {
                Ok(m) => Some((i, cell, m)),
                Err(e) => {
                    self.fail("train", &cell, &e);
                    None
                }
            })
            .collect();
        trained.into_iter().flatten().collect()
    }

    fn ensure_model(&self, data: &Dataset, cell: &Cell) -> Result<TrainedModel> {
        let arch = ArchitectureSpec::new(cell.arch, data.side());
        let seed = self.config.seed.wrapping_add(cell.seed_index);
        let training = self.config.training(data.spec.scenario, data.side(), seed);
        let dir = self.model_dir(cell);
        if let Ok(model) = load_model(&dir) {
            let r = &model.report;
            if r.config == training && r.arch == arch && r.dataset == data.name() {
                self.log("train", format!("{cell} cached"));
                return Ok(model);
            }
        }
        self.log("train", format!("{cell}: {} epochs", training.epochs));
        let model = train(&arch, data, &training)?;
        self.log(
            "train",
            format!("{cell}: test accuracy {:.4} (best epoch {})", model.report.test_accuracy, model.report.best_epoch),
        );
        save_model(&model, &dir)?;
        Ok(model)
    }

    /// Explains the correctly-predicted intersection of each dataset with
    /// every model trained on it. Returns the cells whose maps are complete.
    fn explain_all(&self, datasets: &[ReadyDataset], models: &[(usize, Cell, TrainedModel)]) -> Vec<(usize, Cell)> {
        let mut jobs: Vec<(usize, &Cell, &TrainedModel, Vec<usize>)> = Vec::new();
        for (i, d) in datasets.iter().enumerate() {
            let mine: Vec<&(usize, Cell, TrainedModel)> = models.iter().filter(|(j, _, _)| *j == i).collect();
            if mine.is_empty() {
                continue;
            }
            match self.intersection(d, &mine) {
                Ok(ids) => jobs.extend(mine.iter().map(|(_, c, m)| (i, c, m, ids.clone()))),
                Err(e) => self.fail("explain", d.data.name(), &e),
            }
        }
        let done: Vec<Option<(usize, Cell)>> = jobs
            .into_par_iter()
            .map(|(i, cell, model, ids)| match self.ensure_maps(&datasets[i].data, cell, model, &ids) {
                Ok(()) => Some((i, cell.clone())),
                Err(e) => {
                    self.fail("explain", cell, &e);
                    None
                }
            })
            .collect();
        done.into_iter().flatten().collect()
    }

    fn intersection(&self, d: &ReadyDataset, models: &[&(usize, Cell, TrainedModel)]) -> Result<Vec<usize>> {
        let classifiers: Vec<&dyn Classifier> = models.iter().map(|(_, _, m)| m as &dyn Classifier).collect();
        let correct = correctly_predicted_intersection(&classifiers, &d.data.test)?;
        let total = correct.len();
        let mut ids = correct;
        if let Some(cap) = self.config.max_samples {
            ids.truncate(cap);
        }
        let record = Intersection {
            models: models.iter().map(|(_, c, _)| c.to_string()).collect(),
            correct: total,
            cap: self.config.max_samples,
            sample_ids: ids.clone(),
        };
        let path = self.root.join(d.data.name()).join("intersection.json");
        if read_json::<Intersection>(&path).ok().as_ref() != Some(&record) {
            write_json(&path, &record)?;
        }
        self.log("explain", format!("{}: {} of {} test samples explained", d.data.name(), ids.len(), d.data.test.len()));
        Ok(ids)
    }

    fn maps_dir(&self, cell: &Cell) -> PathBuf {
        self.model_dir(cell).join("maps")
    }

    fn read_index(&self, cell: &Cell) -> BTreeMap<String, MapEntry> {
        read_json(&self.maps_dir(cell).join("index.json")).unwrap_or_default()
    }

    fn ensure_maps(&self, data: &Dataset, cell: &Cell, model: &TrainedModel, ids: &[usize]) -> Result<()> {
        let dir = self.maps_dir(cell);
        let mut index = self.read_index(cell);
        let digest = params_digest(model);
        let seed = self.config.seed.wrapping_add(cell.seed_index);
        let params = &self.config.method_params;
        let samples: Vec<(usize, &crate::datagen::LabeledSample)> = ids.iter().map(|&i| (i, &data.test[i])).collect();
        for method in self.config.parsed_methods() {
            let key = MapKey {
                method: method.id().to_string(),
                model_digest: digest.clone(),
                sample_ids: ids.to_vec(),
                seed,
                hyperparameters: params.resolved(method, data.side())?,
            };
            let file = format!("attr_{}_{}_test.f32", method.id(), cell.arch.id());
            if let Some(entry) = index.get(method.id()) {
                if entry.key == key {
                    if let Ok(bytes) = std::fs::read(dir.join(&file)) {
                        if sha256_hex(&bytes) == entry.sha256 {
                            continue;
                        }
                    }
                }
            }
            self.log("explain", format!("{cell}: {} on {} samples", method.id(), ids.len()));
            let maps = explain_batch(&model.network, &[method], &samples, &data.test, params, seed)?;
            let bytes = encode_maps(&maps);
            write_atomic(&dir.join(&file), &bytes)?;
            index.insert(
                method.id().to_string(),
                MapEntry {
                    key,
                    file,
                    side: data.side(),
                    sha256: sha256_hex(&bytes),
                    signed: method.is_signed(),
                },
            );
            write_json(&dir.join("index.json"), &index)?;
        }
        Ok(())
    }

    /// Reads the maps of `method` back as they were persisted.
    fn load_maps(&self, cell: &Cell, entry: &MapEntry) -> Result<Vec<ImportanceMap>> {
        let path = self.maps_dir(cell).join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Checksum {
                path: path.clone(),
                expected: entry.sha256.clone(),
                found: sha256_hex(&bytes),
            });
        }
        let d = entry.side * entry.side;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if values.len() != d * entry.key.sample_ids.len() {
            return Err(Error::Length {
                path,
                expected: d * entry.key.sample_ids.len() * 4,
                found: bytes.len(),
            });
        }
        values
            .chunks(d.max(1))
            .zip(&entry.key.sample_ids)
            .map(|(chunk, &id)| {
                Ok(ImportanceMap {
                    grid: ImageGrid::new(entry.side, chunk.to_vec())?,
                    method: entry.key.method.clone(),
                    sample_id: id,
                    signed: entry.signed,
                    provenance: entry.key.hyperparameters.clone(),
                })
            })
            .collect()
    }

    fn score_all(&self, datasets: &[ReadyDataset], cells: &[(usize, Cell)]) {
        cells.par_iter().for_each(|(i, cell)| {
            if let Err(e) = self.ensure_scores(&datasets[*i].data, cell) {
                self.fail("score", cell, &e);
            }
        });
    }

    fn ensure_scores(&self, data: &Dataset, cell: &Cell) -> Result<()> {
        let index = self.read_index(cell);
        let methods = self.config.parsed_methods();
        let entries: Vec<&MapEntry> = methods
            .iter()
            .map(|m| {
                index
                    .get(m.id())
                    .ok_or_else(|| Error::InvalidArgument(format!("no {} maps for {cell}", m.id())))
            })
            .collect::<Result<_>>()?;
        let inputs: Vec<String> = entries.iter().map(|e| e.sha256.clone()).collect();
        let path = self.scores_path(cell);
        let sidecar_path = path.with_extension("json");
        if let (Ok(side), Ok(bytes)) = (read_json::<ScoreSidecar>(&sidecar_path), std::fs::read(&path)) {
            if side.maps == inputs && side.csv_sha256 == sha256_hex(&bytes) {
                self.log("score", format!("{cell} cached"));
                return Ok(());
            }
        }
        let mut rows = Vec::new();
        for entry in entries {
            let maps = self.load_maps(cell, entry)?;
            let masks: Vec<&crate::datagen::Mask> = maps.iter().map(|m| &data.test[m.sample_id].mask).collect();
            for r in score_all(&maps, &masks)? {
                rows.push(ScoreRow {
                    scenario: data.spec.scenario.to_string(),
                    background: data.spec.background.to_string(),
                    arch: cell.arch.to_string(),
                    method: r.method,
                    sample_id: r.sample_id,
                    emd: r.emd,
                    ima: r.ima,
                    precision: r.precision,
                    degenerate_flag: r.degenerate,
                });
            }
        }
        self.log("score", format!("{cell}: {} rows", rows.len()));
        write_scores(&path, &rows)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        write_json(
            &sidecar_path,
            &ScoreSidecar {
                maps: inputs,
                csv_sha256: sha256_hex(&bytes),
            },
        )
    }

    /// Aggregates the score files of every configured cell.
    fn build_report(&self, calibrations: Vec<CalibrationEntry>) -> Result<BenchmarkReport> {
        let mut rows = Vec::new();
        let mut artifacts = Vec::new();
        let mut expected = Vec::new();
        let mut notes = Vec::new();
        let methods = self.config.parsed_methods();
        let calibrated: BTreeMap<String, f64> =
            calibrations.iter().map(|c| (c.dataset.clone(), c.calibration.chosen_alpha)).collect();
        for d in &self.config.datasets {
            let alpha = match d.alpha.or_else(|| calibrated.get(&d.label()).copied()) {
                Some(a) => a,
                None => {
                    notes.push(format!("{}: no alpha available, dataset omitted", d.label()));
                    continue;
                }
            };
            let spec = d.spec(alpha, self.config.seed);
            let name = spec.dataset_name();
            for arch in &self.config.architectures {
                if !self.config.architectures_for(d.scenario).contains(arch) {
                    notes.push(format!("{name}: {arch} skipped for a non-linear scenario"));
                }
            }
            for arch in self.config.architectures_for(d.scenario) {
                for m in &methods {
                    expected.push(CellKey {
                        dataset: name.clone(),
                        scenario: spec.scenario.to_string(),
                        background: spec.background.to_string(),
                        arch: arch.to_string(),
                        method: m.id().to_string(),
                    });
                }
                for k in 0..self.config.trainings as u64 {
                    let cell = Cell {
                        dataset: name.clone(),
                        arch,
                        seed_index: k,
                    };
                    let path = self.scores_path(&cell);
                    let Ok(bytes) = std::fs::read(&path) else { continue };
                    artifacts.push(ArtifactRef {
                        path: rel(&self.root, &path),
                        sha256: sha256_hex(&bytes),
                    });
                    let report_path = self.model_dir(&cell).join("training_report.json");
                    if let Ok(b) = std::fs::read(&report_path) {
                        artifacts.push(ArtifactRef {
                            path: rel(&self.root, &report_path),
                            sha256: sha256_hex(&b),
                        });
                    }
                    rows.extend(read_scores(&path)?.into_iter().map(|r| (name.clone(), r)));
                }
            }
            if let Ok(ix) = read_json::<Intersection>(&self.root.join(&name).join("intersection.json")) {
                if ix.cap.is_some_and(|c| c < ix.correct) {
                    notes.push(format!("{name}: explained {} of {} correctly predicted samples", ix.sample_ids.len(), ix.correct));
                }
            }
        }
        let mut failures = self.failures.lock().expect("failure log").clone();
        failures.sort_by(|a, b| (&a.stage, &a.cell).cmp(&(&b.stage, &b.cell)));
        notes.dedup();
        Ok(BenchmarkReport {
            convention: WHISKER_CONVENTION.to_string(),
            cells: aggregate(&rows, &expected, &self.config.metrics),
            calibrations,
            artifacts,
            failures,
            notes,
        })
    }
}

/// All method ids, for help text.
pub fn method_ids() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.id()).collect()
}
