//! The end-to-end pipeline over one data directory. Each stage reads the
//! artifacts of earlier stages and writes only its own, so the CLI
//! subcommands are thin wrappers over these functions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjacency::{
    candidates_for, compute_adjacency, read_adjacency_tsv, write_adjacency_tsv, CandidateFilter, CandidateId,
    MergeCandidate, Workflow,
};
use crate::error::{Error, Result};
use crate::evalkit::{effort_value, pr_curve, review_precision, Assessment, PrCurve, ReviewAssessment, Reviewer};
use crate::evidence::{
    candidate_features, extract_evidence, read_features, write_evidence_bin, write_features, EvidenceTensor,
    FeatureParams, FeatureRecord, PointIndex, SynapseGraph, DEFAULT_CONTEXT_EDGE, DEFAULT_EDGE, DEFAULT_N_POINTS,
    DEFAULT_POINT_FACTOR, DEFAULT_PROX_RADIUS_NM, DEFAULT_TOP_K,
};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl, write_text};
use crate::models::{
    cnn_train, fusion_input, fusion_train, score, train_log_csv, CnnConfig, Fingerprint, ModelBundle, TrainHyper,
    DEFAULT_LAMBDA, FEATURE_LAYOUT_VERSION,
};
use crate::synapse::{read_synapses, SiteIndex, SynapseRecord};
use crate::synth::{generate, read_truth, write_ground_truth, SynthConfig, TruthTables, FRAGMENTS_DIR, GRAY_DIR, SYNAPSES_FILE};
use crate::taskserve::{SliceSource, TaskCandidate, TaskService};
use crate::volume::{read_gray_volume, read_label_volume, GrayVolume, LabelVolume};
use crate::workflow::{
    calibrate_threshold, completeness_counts, one_sided_z, orphan_link_run, triage as rank_triage, wilson_upper,
    BodyState, Clock, CompletenessCounts, DecisionLog, LogicalClock, OrphanPolicy, OrphanRun, Verdict,
};

pub const CORPUS_FILE: &str = "corpus.json";
pub const VOLUMES_DIR: &str = "volumes";
pub const ADJACENCY_FILE: &str = "adjacency.tsv";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const EVIDENCE_BIN_FILE: &str = "evidence.bin";
pub const EVIDENCE_INDEX_FILE: &str = "evidence.idx";
pub const CNN_MODEL_FILE: &str = "cnn.aprf";
pub const MODEL_FILE: &str = "model.aprf";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const TRIAGE_FILE: &str = "triage.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const ORPHAN_RUN_FILE: &str = "orphan_run.json";
pub const COMPLETENESS_FILE: &str = "completeness_report.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";
pub const PR_CURVE_CNN_FILE: &str = "pr_curve_cnn.csv";
pub const PR_CURVE_BASELINE_FILE: &str = "pr_curve_baseline.csv";
pub const EFFORT_VALUE_FILE: &str = "effort_value.csv";
pub const REVIEW_PRECISION_FILE: &str = "review_precision.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";

/// Start of the logical clock used for automated decisions (2024-01-01 UTC).
pub const DECISION_EPOCH_UNIX: i64 = 1_704_067_200;

/// Stage seed: first eight bytes of `sha256(seed_le ‖ name)`.
pub fn stage_seed(seed: u64, name: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub train_volumes: u32,
    pub calibration_volumes: u32,
    /// Template for every volume; `seed` and `id_base` are assigned per volume.
    pub synth: SynthConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_volumes: 3,
            calibration_volumes: 3,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjacencyConfig {
    pub factor: u32,
    pub block_edge: u32,
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        AdjacencyConfig {
            factor: 1,
            block_edge: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    pub min_contact: u64,
    /// Balanced: half true merges, half not.
    pub train_count: usize,
    /// Uniform sample of the test volume's candidates.
    pub test_count: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            min_contact: 1,
            train_count: 2000,
            test_count: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub evidence_edge: u32,
    pub prox_radius_nm: f64,
    pub context_edge: u32,
    pub point_factor: u32,
    pub n_points: usize,
    pub top_k: usize,
    /// Also write every evidence cube to `evidence.bin` (large).
    pub write_evidence_bin: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            evidence_edge: DEFAULT_EDGE,
            prox_radius_nm: DEFAULT_PROX_RADIUS_NM,
            context_edge: DEFAULT_CONTEXT_EDGE,
            point_factor: DEFAULT_POINT_FACTOR,
            n_points: DEFAULT_N_POINTS,
            top_k: DEFAULT_TOP_K,
            write_evidence_bin: false,
        }
    }
}

impl FeatureConfig {
    pub fn params(&self) -> FeatureParams {
        FeatureParams {
            context_edge: self.context_edge,
            point_factor: self.point_factor,
            n_points: self.n_points,
            top_k: self.top_k,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnStageConfig {
    /// `seed` is replaced by a stage seed.
    pub network: CnnConfig,
    /// `seed` is replaced by a stage seed.
    pub train: TrainHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriageConfig {
    pub budget: f64,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig { budget: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub target_error: f64,
    pub confidence: f64,
    /// Orphan proposals drawn from the calibration volumes.
    pub sample_size: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            target_error: 0.03,
            confidence: 0.95,
            sample_size: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrphanConfig {
    pub weight_min: u64,
    pub weight_max: u64,
    pub passes: u32,
}

impl Default for OrphanConfig {
    fn default() -> Self {
        OrphanConfig {
            weight_min: 10,
            weight_max: 100,
            passes: 1,
        }
    }
}

/// Simulated reviewers for the sampled-review analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Chance a reviewer answers indeterminate.
    pub reviewer_indeterminate: f64,
    /// Chance a determinate answer is wrong.
    pub reviewer_error: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            reviewer_indeterminate: 0.1,
            reviewer_error: 0.03,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub corpus: CorpusConfig,
    pub adjacency: AdjacencyConfig,
    pub candidates: CandidateConfig,
    pub features: FeatureConfig,
    pub cnn: CnnStageConfig,
    pub fusion: FusionConfig,
    pub triage: TriageConfig,
    pub calibrate: CalibrateConfig,
    pub orphan: OrphanConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidArgument("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("a data directory is required (--data-dir)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.data_dir()?;
        self.corpus.synth.validate()?;
        self.cnn.network.validate()?;
        if self.cnn.network.input_edge != self.features.evidence_edge as usize {
            return Err(Error::InvalidArgument(format!(
                "cnn input_edge {} must equal features.evidence_edge {}",
                self.cnn.network.input_edge, self.features.evidence_edge
            )));
        }
        crate::volume::check_factor(self.adjacency.factor)?;
        if self.adjacency.block_edge == 0 {
            return Err(Error::InvalidArgument("adjacency.block_edge must be >= 1".into()));
        }
        if self.corpus.train_volumes == 0 || self.corpus.calibration_volumes == 0 {
            return Err(Error::InvalidArgument(
                "corpus.train_volumes and corpus.calibration_volumes must be >= 1".into(),
            ));
        }
        if self.candidates.train_count < 2 || self.candidates.test_count == 0 || self.calibrate.sample_size == 0 {
            return Err(Error::InvalidArgument("candidate counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.triage.budget) {
            return Err(Error::InvalidArgument(format!("triage budget {} outside [0, 1]", self.triage.budget)));
        }
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.reviewer_indeterminate) || !(0.0..=1.0).contains(&e.reviewer_error) {
            return Err(Error::InvalidArgument("reviewer probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Fusion,
    Calibration,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub name: String,
    pub role: Role,
    pub seed: u64,
    pub id_base: u64,
}

/// `corpus.json`: the generated volumes and their roles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub volumes: Vec<VolumeEntry>,
}

impl Corpus {
    pub fn volume_dir(&self, data_dir: &Path, name: &str) -> PathBuf {
        data_dir.join(VOLUMES_DIR).join(name)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &VolumeEntry> {
        self.volumes.iter().filter(move |v| v.role == role)
    }

    pub fn single(&self, role: Role) -> Result<&VolumeEntry> {
        self.with_role(role)
            .next()
            .ok_or_else(|| Error::InvalidManifest(format!("corpus has no {role:?} volume")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// CNN training set.
    Train,
    /// Fusion training set.
    Fusion,
    /// Labeled sample for threshold calibration.
    Calibration,
    /// Held-out evaluation sample.
    Test,
    /// The rest of the test volume; scored for orphan linking and review.
    Pool,
}

/// One line of `candidates.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub volume: String,
    pub split: Split,
    pub label: bool,
    pub candidate: MergeCandidate,
}

/// One line of `scores.jsonl`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub candidate_id: CandidateId,
    pub baseline: f64,
    pub cnn: f64,
    pub fusion: f64,
}

/// A validated configuration bound to its data directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub seed: u64,
}

/// Everything a stage needs from one generated volume.
pub struct LoadedVolume {
    pub fragments: LabelVolume,
    pub gray: Option<GrayVolume>,
    pub synapses: Vec<SynapseRecord>,
    pub truth: TruthTables,
}

impl LoadedVolume {
    pub fn load(dir: &Path, with_gray: bool) -> Result<Self> {
        Ok(LoadedVolume {
            fragments: read_label_volume(&dir.join(FRAGMENTS_DIR))?,
            gray: if with_gray {
                Some(read_gray_volume(&dir.join(GRAY_DIR))?)
            } else {
                None
            },
            synapses: read_synapses(&dir.join(SYNAPSES_FILE))?,
            truth: read_truth(dir)?,
        })
    }

    /// Unmerged fragments with identified flags and synapse weights.
    pub fn initial_bodies(&self) -> Result<BodyState> {
        initial_bodies(&self.truth, &self.synapses)
    }

    /// Cell types known for identified fragments only.
    pub fn identified_types(&self) -> HashMap<u64, u32> {
        let all = self.truth.fragment_types();
        self.truth
            .identified_fragments
            .iter()
            .filter_map(|f| all.get(f).map(|&t| (*f, t)))
            .collect()
    }

    pub fn evidence(&self, cands: &[&MergeCandidate], fc: &FeatureConfig) -> Result<Vec<EvidenceTensor>> {
        let gray = self
            .gray
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("volume loaded without grayscale".into()))?;
        let sites = SiteIndex::new(&self.synapses, 16);
        cands
            .par_iter()
            .map(|c| extract_evidence(gray, &self.fragments, &sites, c, fc.evidence_edge, fc.prox_radius_nm))
            .collect()
    }
}

pub fn initial_bodies(truth: &TruthTables, synapses: &[SynapseRecord]) -> Result<BodyState> {
    let mut bodies = BodyState::new(truth.fragment_to_neuron.keys().copied());
    for &f in &truth.identified_fragments {
        bodies.set_identified(f, true)?;
    }
    bodies.add_synapses(synapses)?;
    Ok(bodies)
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    log::info!("{stage} finished in {:.1}s", t.elapsed().as_secs_f64());
    out
}

fn label_set(records: &[CandidateRecord], split: Split) -> HashSet<CandidateId> {
    records
        .iter()
        .filter(|r| r.split == split && r.label)
        .map(|r| r.candidate.id)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub budget: f64,
    pub candidates: usize,
    pub selected: usize,
    pub captured_value: Option<f64>,
    /// Every test candidate, highest fusion score first.
    pub order: Vec<CandidateId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_error: f64,
    pub confidence: f64,
    /// Orphans in the calibration volumes with at least one candidate edge.
    pub proposals_available: usize,
    pub sample_size: usize,
    pub sample_correct: usize,
    pub tau: Option<f64>,
    /// Sample items at or above `tau`, and how many of them are wrong.
    pub accepted_in_sample: usize,
    pub errors_in_sample: usize,
    pub wilson_upper: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessEntry {
    pub connections: u64,
    pub complete: u64,
    pub fraction: f64,
}

impl From<CompletenessCounts> for CompletenessEntry {
    fn from(c: CompletenessCounts) -> Self {
        CompletenessEntry {
            connections: c.connections,
            complete: c.complete,
            fraction: c.fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub volume: String,
    pub tau: Option<f64>,
    pub before: CompletenessEntry,
    pub after: CompletenessEntry,
    pub proposals: usize,
    pub accepted_merges: usize,
    /// T-bars and PSDs in fragments that became part of identified bodies.
    pub tbars_added: u64,
    pub psds_added: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuprcSummary {
    pub baseline: f64,
    pub cnn: f64,
    pub fusion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrphanSummary {
    pub tau: Option<f64>,
    pub proposals: usize,
    pub accepted: usize,
    pub accepted_errors: usize,
    pub error_rate: Option<f64>,
    pub completeness_before: f64,
    pub completeness_after: f64,
}

/// `eval_summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model_fingerprint: String,
    pub test_candidates: usize,
    pub test_positives: usize,
    pub merge_rate: f64,
    pub auprc: AuprcSummary,
    pub fusion_precision_at_recall_0_9: Option<f64>,
    pub triage_budget: f64,
    pub triage_captured_value: f64,
    pub effort_for_90_value: Option<f64>,
    pub value_at_merge_rate: f64,
    pub orphan: OrphanSummary,
    pub reviewed_proposals: usize,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed()?;
        let dir = config.data_dir()?.to_path_buf();
        Ok(Pipeline { config, dir, seed })
    }

    /// Binds a configuration to `dir` without requiring a seed, for stages
    /// that only read existing artifacts (serving).
    pub fn open(dir: PathBuf, config: RunConfig) -> Self {
        let seed = config.seed.unwrap_or_default();
        Pipeline { config, dir, seed }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        read_json(&self.path(CORPUS_FILE))
    }

    pub fn records(&self) -> Result<Vec<CandidateRecord>> {
        read_jsonl(&self.path(CANDIDATES_FILE))
    }

    pub fn scores(&self) -> Result<HashMap<CandidateId, ScoreRecord>> {
        let recs: Vec<ScoreRecord> = read_jsonl(&self.path(SCORES_FILE))?;
        Ok(recs.into_iter().map(|s| (s.candidate_id, s)).collect())
    }

    fn volume_dir(&self, name: &str) -> PathBuf {
        self.dir.join(VOLUMES_DIR).join(name)
    }

    fn load_volume(&self, name: &str, with_gray: bool) -> Result<LoadedVolume> {
        LoadedVolume::load(&self.volume_dir(name), with_gray)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<EvalSummary> {
        self.gen()?;
        self.adjacency(None)?;
        self.candidates()?;
        self.features()?;
        self.train_cnn()?;
        self.train_fusion()?;
        self.score()?;
        self.triage()?;
        self.calibrate()?;
        self.orphan_link()?;
        self.eval()
    }

    /// Generates the corpus: `train_volumes` training volumes plus one volume
    /// each for fusion training, calibration and test.
    pub fn gen(&self) -> Result<Corpus> {
        timed("gen", || {
            let c = &self.config.corpus;
            let mut plan: Vec<(String, Role)> =
                (0..c.train_volumes).map(|i| (format!("train-{i}"), Role::Train)).collect();
            plan.push(("fusion".into(), Role::Fusion));
            plan.extend((0..c.calibration_volumes).map(|i| (format!("calibration-{i}"), Role::Calibration)));
            plan.push(("test".into(), Role::Test));
            let mut volumes = Vec::new();
            for (i, (name, role)) in plan.into_iter().enumerate() {
                let cfg = SynthConfig {
                    seed: stage_seed(self.seed, &format!("gen/{name}")),
                    id_base: (i as u64 + 1) << 32,
                    ..c.synth.clone()
                };
                let (gt, gray) = generate(&cfg)?;
                write_ground_truth(&self.volume_dir(&name), &gt, &gray)?;
                log::info!("generated {name}: {} fragments", gt.fragment_to_neuron.len());
                volumes.push(VolumeEntry {
                    name,
                    role,
                    seed: cfg.seed,
                    id_base: cfg.id_base,
                });
            }
            let corpus = Corpus { volumes };
            write_json(&self.path(CORPUS_FILE), &corpus)?;
            Ok(corpus)
        })
    }

    /// Writes `adjacency.tsv` next to every volume. `factor` overrides the configured one.
    pub fn adjacency(&self, factor: Option<u32>) -> Result<()> {
        timed("adjacency", || {
            let factor = factor.unwrap_or(self.config.adjacency.factor);
            for v in &self.corpus()?.volumes {
                let dir = self.volume_dir(&v.name);
                let labels = read_label_volume(&dir.join(FRAGMENTS_DIR))?;
                let edges = compute_adjacency(&labels, factor, self.config.adjacency.block_edge)?;
                write_adjacency_tsv(&edges, &dir.join(ADJACENCY_FILE))?;
            }
            Ok(())
        })
    }

    /// Builds the labeled candidate splits in `candidates.jsonl`.
    pub fn candidates(&self) -> Result<Vec<CandidateRecord>> {
        timed("candidates", || {
            let cc = &self.config.candidates;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(self.seed, "candidates"));
            let corpus = self.corpus()?;
            let focused = CandidateFilter::Focused {
                min_contact: cc.min_contact,
            };
            let mut out: Vec<CandidateRecord> = Vec::new();
            let labeled = |name: &str, cands: Vec<MergeCandidate>, truth: &TruthTables, split: Split| {
                cands
                    .into_iter()
                    .map(|c| {
                        Ok(CandidateRecord {
                            volume: name.to_string(),
                            split,
                            label: truth.same_neuron(c.edge.a, c.edge.b)?,
                            candidate: c,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            };

            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for v in corpus.with_role(Role::Train) {
                let dir = self.volume_dir(&v.name);
                let edges = read_adjacency_tsv(&dir.join(ADJACENCY_FILE))?;
                let truth = read_truth(&dir)?;
                for r in labeled(&v.name, candidates_for(&edges, &focused, None)?, &truth, Split::Train)? {
                    if r.label {
                        pos.push(r);
                    } else {
                        neg.push(r);
                    }
                }
            }
            let half = cc.train_count / 2;
            if pos.len() < half || neg.len() < cc.train_count - half {
                return Err(Error::Infeasible(format!(
                    "training volumes hold {} true and {} false merges, need {} and {}",
                    pos.len(),
                    neg.len(),
                    half,
                    cc.train_count - half
                )));
            }
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let mut train: Vec<CandidateRecord> =
                pos.into_iter().take(half).chain(neg.into_iter().take(cc.train_count - half)).collect();
            train.sort_by_key(|r| r.candidate.id);
            out.extend(train);

            let fv = corpus.single(Role::Fusion)?;
            let dir = self.volume_dir(&fv.name);
            let edges = read_adjacency_tsv(&dir.join(ADJACENCY_FILE))?;
            let truth = read_truth(&dir)?;
            out.extend(labeled(&fv.name, candidates_for(&edges, &focused, None)?, &truth, Split::Fusion)?);

            // Every orphan edge of the calibration volumes; `calibrate` keeps
            // the best-scoring one per orphan and samples from those.
            let orphan = CandidateFilter::Orphan {
                weight: Some(self.config.orphan.weight_min..=self.config.orphan.weight_max),
            };
            for cv in corpus.with_role(Role::Calibration) {
                let vol = self.load_volume(&cv.name, false)?;
                let edges = read_adjacency_tsv(&self.volume_dir(&cv.name).join(ADJACENCY_FILE))?;
                let bodies = vol.initial_bodies()?;
                let pool = candidates_for(&edges, &orphan, Some(&bodies))?;
                out.extend(labeled(&cv.name, pool, &vol.truth, Split::Calibration)?);
            }

            let tv = corpus.single(Role::Test)?;
            let dir = self.volume_dir(&tv.name);
            let edges = read_adjacency_tsv(&dir.join(ADJACENCY_FILE))?;
            let truth = read_truth(&dir)?;
            let all = candidates_for(&edges, &focused, None)?;
            if all.len() < cc.test_count {
                return Err(Error::Infeasible(format!(
                    "test volume has {} candidates, need {}",
                    all.len(),
                    cc.test_count
                )));
            }
            let picked: HashSet<usize> = rand::seq::index::sample(&mut rng, all.len(), cc.test_count).into_iter().collect();
            let (mut test, mut rest) = (Vec::new(), Vec::new());
            for (i, c) in all.into_iter().enumerate() {
                if picked.contains(&i) {
                    test.push(c);
                } else {
                    rest.push(c);
                }
            }
            out.extend(labeled(&tv.name, test, &truth, Split::Test)?);
            out.extend(labeled(&tv.name, rest, &truth, Split::Pool)?);

            write_jsonl(&self.path(CANDIDATES_FILE), &out)?;
            Ok(out)
        })
    }

    /// Record indices grouped by volume, in corpus order.
    fn by_volume<'a>(
        &self,
        corpus: &'a Corpus,
        records: &[CandidateRecord],
        keep: impl Fn(&CandidateRecord) -> bool,
    ) -> Vec<(&'a VolumeEntry, Vec<usize>)> {
        corpus
            .volumes
            .iter()
            .map(|v| {
                let idx: Vec<usize> = records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.volume == v.name && keep(r))
                    .map(|(i, _)| i)
                    .collect();
                (v, idx)
            })
            .filter(|(_, idx)| !idx.is_empty())
            .collect()
    }

    /// Shape and connectivity features for every candidate record.
    pub fn features(&self) -> Result<()> {
        timed("features", || {
            let corpus = self.corpus()?;
            let records = self.records()?;
            let fc = &self.config.features;
            let params = fc.params();
            let seed = stage_seed(self.seed, "features");
            let mut out: Vec<Option<FeatureRecord>> = vec![None; records.len()];
            let mut cubes: Vec<(CandidateId, EvidenceTensor)> = Vec::new();
            for (v, idx) in self.by_volume(&corpus, &records, |_| true) {
                let vol = self.load_volume(&v.name, fc.write_evidence_bin)?;
                let bodies = vol.initial_bodies()?;
                let graph = SynapseGraph::new(&vol.synapses, &bodies)?;
                let types = vol.identified_types();
                let points = PointIndex::new(&vol.fragments, fc.point_factor)?;
                let feats: Vec<FeatureRecord> = idx
                    .par_iter()
                    .map(|&i| candidate_features(&points, &graph, &bodies, &types, &records[i].candidate, &params, seed))
                    .collect::<Result<_>>()?;
                for (&i, f) in idx.iter().zip(feats) {
                    out[i] = Some(f);
                }
                if fc.write_evidence_bin {
                    let cands: Vec<&MergeCandidate> = idx.iter().map(|&i| &records[i].candidate).collect();
                    let t = vol.evidence(&cands, fc)?;
                    cubes.extend(cands.iter().map(|c| c.id).zip(t));
                }
            }
            let out: Vec<FeatureRecord> = out.into_iter().map(|f| f.expect("every record grouped")).collect();
            write_features(&self.path(FEATURES_FILE), &out)?;
            if fc.write_evidence_bin {
                write_evidence_bin(&self.path(EVIDENCE_BIN_FILE), &self.path(EVIDENCE_INDEX_FILE), &cubes)?;
            }
            Ok(())
        })
    }

    fn feature_map(&self) -> Result<HashMap<CandidateId, FeatureRecord>> {
        Ok(read_features(&self.path(FEATURES_FILE))?
            .into_iter()
            .map(|f| (f.candidate_id, f))
            .collect())
    }

    /// Evidence cubes for the records selected by `keep`, in record order.
    fn evidence_for(
        &self,
        corpus: &Corpus,
        records: &[CandidateRecord],
        keep: impl Fn(&CandidateRecord) -> bool,
        mut each: impl FnMut(&[usize], Vec<EvidenceTensor>) -> Result<()>,
    ) -> Result<()> {
        for (v, idx) in self.by_volume(corpus, records, keep) {
            let vol = self.load_volume(&v.name, true)?;
            let cands: Vec<&MergeCandidate> = idx.iter().map(|&i| &records[i].candidate).collect();
            let t = vol.evidence(&cands, &self.config.features)?;
            each(&idx, t)?;
        }
        Ok(())
    }

    /// Trains the CNN on the balanced training split; writes `cnn.aprf` and `train_log.csv`.
    pub fn train_cnn(&self) -> Result<ModelBundle> {
        timed("train-cnn", || {
            let corpus = self.corpus()?;
            let records = self.records()?;
            let mut data: Vec<(EvidenceTensor, bool)> = Vec::new();
            let mut fp = Fingerprint::new();
            fp.add(&serde_json::to_vec(&(&corpus, &self.config.corpus)).map_err(|e| Error::InvalidArgument(e.to_string()))?);
            self.evidence_for(&corpus, &records, |r| r.split == Split::Train, |idx, t| {
                for (&i, t) in idx.iter().zip(t) {
                    fp.add_u64(records[i].candidate.id.0).add(&[records[i].label as u8]);
                    data.push((t, records[i].label));
                }
                Ok(())
            })?;
            let network = CnnConfig {
                seed: stage_seed(self.seed, "train-cnn/init"),
                ..self.config.cnn.network.clone()
            };
            let hyper = TrainHyper {
                seed: stage_seed(self.seed, "train-cnn"),
                ..self.config.cnn.train.clone()
            };
            let cfg_json = serde_json::to_vec(&(&network, &hyper)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            fp.add(&cfg_json);
            let (params, log) = cnn_train::<f32>(&network, &data, &hyper)?;
            write_text(&self.path(TRAIN_LOG_FILE), &train_log_csv(&log))?;
            let bundle = ModelBundle {
                cnn_config: network,
                cnn: params,
                fusion: None,
                feature_layout_version: FEATURE_LAYOUT_VERSION,
                train_fingerprint: fp.finish(),
            };
            bundle.save(&self.path(CNN_MODEL_FILE))?;
            Ok(bundle)
        })
    }

    /// Fits the fusion SVM on the fusion split; writes `model.aprf`.
    pub fn train_fusion(&self) -> Result<ModelBundle> {
        timed("train-fusion", || {
            let corpus = self.corpus()?;
            let records = self.records()?;
            let feats = self.feature_map()?;
            let mut bundle = ModelBundle::load(&self.path(CNN_MODEL_FILE))?;
            let net = bundle.network()?;
            let mut data: Vec<(Vec<f64>, bool)> = Vec::new();
            let mut fp = Fingerprint::new();
            fp.add(bundle.train_fingerprint.as_bytes());
            self.evidence_for(&corpus, &records, |r| r.split == Split::Fusion, |idx, t| {
                let probs: Vec<f64> = t.par_iter().map(|t| net.probability(t)).collect::<Result<_>>()?;
                for (&i, p) in idx.iter().zip(probs) {
                    let r = &records[i];
                    let f = feats
                        .get(&r.candidate.id)
                        .ok_or_else(|| Error::MissingFeatures(r.candidate.id.to_string()))?;
                    let baseline = r.candidate.score("baseline").unwrap_or_default();
                    fp.add_u64(r.candidate.id.0).add(&[r.label as u8]);
                    data.push((fusion_input(p, baseline, &f.shape, &f.connectivity)?, r.label));
                }
                Ok(())
            })?;
            let seed = stage_seed(self.seed, "train-fusion");
            fp.add_u64(seed).add(&self.config.fusion.lambda.to_le_bytes());
            bundle.fusion = Some(fusion_train(&data, self.config.fusion.lambda, seed)?);
            bundle.train_fingerprint = fp.finish();
            bundle.save(&self.path(MODEL_FILE))?;
            Ok(bundle)
        })
    }

    /// Scores the calibration, test and pool records; writes `scores.jsonl`.
    pub fn score(&self) -> Result<Vec<ScoreRecord>> {
        timed("score", || {
            let records = self.records()?;
            let bundle = ModelBundle::load(&self.path(MODEL_FILE))?;
            let out = self.score_where(&bundle, &records, |r| {
                matches!(r.split, Split::Calibration | Split::Test | Split::Pool)
            })?;
            write_jsonl(&self.path(SCORES_FILE), &out)?;
            Ok(out)
        })
    }

    /// Scores the records selected by `keep` with `bundle`, in record order.
    pub fn score_where(
        &self,
        bundle: &ModelBundle,
        records: &[CandidateRecord],
        keep: impl Fn(&CandidateRecord) -> bool,
    ) -> Result<Vec<ScoreRecord>> {
        let corpus = self.corpus()?;
        let feats = self.feature_map()?;
        let net = bundle.network()?;
        let mut out: Vec<Option<ScoreRecord>> = vec![None; records.len()];
        self.evidence_for(&corpus, records, keep, |idx, t| {
            let scored: Vec<ScoreRecord> = idx
                .par_iter()
                .zip(t.par_iter())
                .map(|(&i, t)| {
                    let c = &records[i].candidate;
                    let f = feats.get(&c.id);
                    let baseline = c.score("baseline").unwrap_or_default();
                    let s = score(
                        bundle,
                        &net,
                        t,
                        baseline,
                        f.map(|f| f.shape.as_slice()),
                        f.map(|f| f.connectivity.as_slice()),
                    )?;
                    Ok(ScoreRecord {
                        candidate_id: c.id,
                        baseline,
                        cnn: s.cnn,
                        fusion: s.fusion,
                    })
                })
                .collect::<Result<_>>()?;
            for (&i, s) in idx.iter().zip(scored) {
                out[i] = Some(s);
            }
            Ok(())
        })?;
        Ok(out.into_iter().flatten().collect())
    }

    /// Ranks the test split by fusion score; writes `triage.json`.
    pub fn triage(&self) -> Result<TriageReport> {
        timed("triage", || {
            let records = self.records()?;
            let scores = self.scores()?;
            let scored: Vec<(CandidateId, f64)> = records
                .iter()
                .filter(|r| r.split == Split::Test)
                .map(|r| {
                    scores
                        .get(&r.candidate.id)
                        .map(|s| (r.candidate.id, s.fusion))
                        .ok_or_else(|| Error::MissingFeatures(format!("no score for {}", r.candidate.id)))
                })
                .collect::<Result<_>>()?;
            let truth = label_set(&records, Split::Test);
            let t = rank_triage(&scored, self.config.triage.budget, Some(&truth))?;
            let report = TriageReport {
                budget: self.config.triage.budget,
                candidates: t.order.len(),
                selected: t.selected,
                captured_value: t.captured_value,
                order: t.order,
            };
            write_json(&self.path(TRIAGE_FILE), &report)?;
            Ok(report)
        })
    }

    /// Picks the orphan accept threshold; writes `calibration.json`.
    ///
    /// The labeled sample is drawn from orphan proposals: for each orphan in
    /// the calibration volumes, its best-scoring edge to an identified body,
    /// which is the edge the threshold would accept or reject.
    pub fn calibrate(&self) -> Result<CalibrationReport> {
        timed("calibrate", || {
            let records = self.records()?;
            let scores = self.scores()?;
            let cc = &self.config.calibrate;
            let corpus = self.corpus()?;
            let mut identified: HashSet<u64> = HashSet::new();
            for v in corpus.with_role(Role::Calibration) {
                identified.extend(read_truth(&self.volume_dir(&v.name))?.identified_fragments);
            }
            // orphan fragment -> (score, candidate id, correct)
            let mut best: BTreeMap<u64, (f64, CandidateId, bool)> = BTreeMap::new();
            for r in records.iter().filter(|r| r.split == Split::Calibration) {
                let c = &r.candidate;
                let s = scores
                    .get(&c.id)
                    .ok_or_else(|| Error::MissingFeatures(format!("no score for {}", c.id)))?;
                let orphan = if identified.contains(&c.edge.a) { c.edge.b } else { c.edge.a };
                let item = (s.fusion, c.id, r.label);
                match best.get(&orphan) {
                    Some(&(bs, bid, _)) if bs > item.0 || (bs == item.0 && bid < item.1) => {}
                    _ => {
                        best.insert(orphan, item);
                    }
                }
            }
            let proposals: Vec<(f64, CandidateId, bool)> = best.into_values().collect();
            let available = proposals.len();
            if available < cc.sample_size {
                log::warn!(
                    "calibration volumes hold {available} orphan proposals, fewer than the {} requested",
                    cc.sample_size
                );
            }
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(self.seed, "calibrate"));
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, available, cc.sample_size.min(available)).into_vec();
            picked.sort_unstable();
            let sample: Vec<(f64, bool)> = picked.iter().map(|&i| (proposals[i].0, proposals[i].2)).collect();
            let tau = calibrate_threshold(&sample, cc.target_error, cc.confidence)?;
            let (accepted, errors) = match tau {
                Some(t) => {
                    let above: Vec<&(f64, bool)> = sample.iter().filter(|s| s.0 >= t).collect();
                    (above.len(), above.iter().filter(|s| !s.1).count())
                }
                None => (0, 0),
            };
            if tau.is_none() {
                log::warn!("no threshold reaches the {} error target; orphan linking will accept nothing", cc.target_error);
            }
            let report = CalibrationReport {
                target_error: cc.target_error,
                confidence: cc.confidence,
                proposals_available: available,
                sample_size: sample.len(),
                sample_correct: sample.iter().filter(|s| s.1).count(),
                tau,
                accepted_in_sample: accepted,
                errors_in_sample: errors,
                wilson_upper: tau.map(|_| wilson_upper(errors as u64, accepted as u64, one_sided_z(cc.confidence))),
            };
            write_json(&self.path(CALIBRATION_FILE), &report)?;
            Ok(report)
        })
    }

    /// Orphan linking on the test volume. Writes a fresh `decisions.jsonl`,
    /// `orphan_run.json` and `completeness_report.json`.
    pub fn orphan_link(&self) -> Result<CompletenessReport> {
        timed("orphan-link", || {
            let corpus = self.corpus()?;
            let records = self.records()?;
            let scores = self.scores()?;
            let calib: CalibrationReport = read_json(&self.path(CALIBRATION_FILE))?;
            let bundle = ModelBundle::load(&self.path(MODEL_FILE))?;
            let tv = corpus.single(Role::Test)?;
            let vol = self.load_volume(&tv.name, false)?;
            let initial = vol.initial_bodies()?;
            let mut bodies = initial.clone();
            let cands: Vec<MergeCandidate> = records
                .iter()
                .filter(|r| r.volume == tv.name)
                .map(|r| MergeCandidate {
                    workflow: Workflow::Orphan,
                    ..r.candidate.clone()
                })
                .collect();
            let path = self.path(DECISIONS_FILE);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            let mut log = DecisionLog::open(&path)?;
            let run = match calib.tau {
                Some(tau) => {
                    let oc = &self.config.orphan;
                    let policy = OrphanPolicy {
                        weight_min: oc.weight_min,
                        weight_max: oc.weight_max,
                        passes: oc.passes,
                        ..OrphanPolicy::new(tau.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
                    };
                    let clock = LogicalClock::from_unix(DECISION_EPOCH_UNIX);
                    let scorer = |c: &MergeCandidate, _: &BodyState| {
                        scores
                            .get(&c.id)
                            .map(|s| s.fusion)
                            .ok_or_else(|| Error::MissingFeatures(format!("no score for {}", c.id)))
                    };
                    orphan_link_run(&mut bodies, &cands, scorer, &policy, &mut log, &bundle.source(), &clock)?
                }
                None => OrphanRun::default(),
            };
            write_json(&self.path(ORPHAN_RUN_FILE), &run)?;
            let report = completeness_report(&tv.name, calib.tau, &initial, &bodies, &vol.synapses, &run)?;
            write_json(&self.path(COMPLETENESS_FILE), &report)?;
            Ok(report)
        })
    }

    /// PR curves, effort/value, review precision and `eval_summary.json`.
    pub fn eval(&self) -> Result<EvalSummary> {
        timed("eval", || {
            let records = self.records()?;
            let scores = self.scores()?;
            let bundle = ModelBundle::load(&self.path(MODEL_FILE))?;
            let test: Vec<(&CandidateRecord, ScoreRecord)> = records
                .iter()
                .filter(|r| r.split == Split::Test)
                .map(|r| {
                    scores
                        .get(&r.candidate.id)
                        .map(|s| (r, *s))
                        .ok_or_else(|| Error::MissingFeatures(format!("no score for {}", r.candidate.id)))
                })
                .collect::<Result<_>>()?;
            let curve = |f: fn(&ScoreRecord) -> f64| -> Result<PrCurve> {
                pr_curve(&test.iter().map(|(r, s)| (f(s), r.label)).collect::<Vec<_>>())
            };
            let fusion = curve(|s| s.fusion)?;
            let cnn = curve(|s| s.cnn)?;
            let baseline = curve(|s| s.baseline)?;
            write_text(&self.path(PR_CURVE_FILE), &fusion.to_csv())?;
            write_text(&self.path(PR_CURVE_CNN_FILE), &cnn.to_csv())?;
            write_text(&self.path(PR_CURVE_BASELINE_FILE), &baseline.to_csv())?;

            let positives = test.iter().filter(|(r, _)| r.label).count();
            let merge_rate = positives as f64 / test.len() as f64;
            let scored: Vec<(CandidateId, f64)> = test.iter().map(|(r, s)| (r.candidate.id, s.fusion)).collect();
            let truth = label_set(&records, Split::Test);
            let t = rank_triage(&scored, self.config.triage.budget, Some(&truth))?;
            let ranked: Vec<bool> = t.order.iter().map(|id| truth.contains(id)).collect();
            let ev = effort_value(&ranked, merge_rate);
            write_text(&self.path(EFFORT_VALUE_FILE), &ev.to_csv())?;

            let run: OrphanRun = read_json(&self.path(ORPHAN_RUN_FILE))?;
            let report: CompletenessReport = read_json(&self.path(COMPLETENESS_FILE))?;
            let by_id: HashMap<CandidateId, &CandidateRecord> = records.iter().map(|r| (r.candidate.id, r)).collect();
            let correct = |id: &CandidateId| -> Result<bool> {
                by_id
                    .get(id)
                    .map(|r| r.label)
                    .ok_or_else(|| Error::UnknownCandidate(id.to_string()))
            };
            let mut accepted_errors = 0;
            for id in &run.accepted {
                accepted_errors += usize::from(!correct(id)?);
            }
            let reviewed: Vec<(CandidateId, f64, bool)> = run
                .proposals
                .iter()
                .map(|p| Ok((p.candidate_id, p.score, correct(&p.candidate_id)?)))
                .collect::<Result<_>>()?;
            let assessments = synthetic_reviews(&reviewed, &self.config.eval, stage_seed(self.seed, "eval/reviewers"));
            let review_scores: HashMap<CandidateId, f64> = reviewed.iter().map(|(id, s, _)| (*id, *s)).collect();
            let rp = review_precision(&assessments, &review_scores)?;
            write_text(&self.path(REVIEW_PRECISION_FILE), &rp.to_csv())?;

            let summary = EvalSummary {
                model_fingerprint: bundle.train_fingerprint.clone(),
                test_candidates: test.len(),
                test_positives: positives,
                merge_rate,
                auprc: AuprcSummary {
                    baseline: baseline.auprc,
                    cnn: cnn.auprc,
                    fusion: fusion.auprc,
                },
                fusion_precision_at_recall_0_9: fusion.precision_at_recall(0.9),
                triage_budget: self.config.triage.budget,
                triage_captured_value: t.captured_value.unwrap_or_default(),
                effort_for_90_value: ev.effort_for_90_value,
                value_at_merge_rate: ev.value_at_merge_rate,
                orphan: OrphanSummary {
                    tau: report.tau,
                    proposals: run.proposals.len(),
                    accepted: run.accepted.len(),
                    accepted_errors,
                    error_rate: (!run.accepted.is_empty()).then(|| accepted_errors as f64 / run.accepted.len() as f64),
                    completeness_before: report.before.fraction,
                    completeness_after: report.after.fraction,
                },
                reviewed_proposals: reviewed.len(),
            };
            write_json(&self.path(EVAL_SUMMARY_FILE), &summary)?;
            Ok(summary)
        })
    }
}

impl Pipeline {
    /// Review service over the test volume's candidates. Scores come from
    /// `scores.jsonl`, or from `model` when given. Decisions go to
    /// `decisions.jsonl`, whose existing entries are replayed first.
    pub fn task_service(&self, model: Option<&Path>, clock: Arc<dyn Clock>) -> Result<TaskService> {
        let corpus = self.corpus()?;
        let tv = corpus.single(Role::Test)?;
        let records: Vec<CandidateRecord> = self.records()?.into_iter().filter(|r| r.volume == tv.name).collect();
        let scores: HashMap<CandidateId, ScoreRecord> = match model {
            Some(path) => {
                let bundle = ModelBundle::load(path)?;
                let fc = FeatureConfig {
                    evidence_edge: bundle.cnn_config.input_edge as u32,
                    ..self.config.features.clone()
                };
                let p = Pipeline::open(
                    self.dir.clone(),
                    RunConfig {
                        features: fc,
                        ..self.config.clone()
                    },
                );
                p.score_where(&bundle, &records, |_| true)?
                    .into_iter()
                    .map(|s| (s.candidate_id, s))
                    .collect()
            }
            None => self.scores()?,
        };
        let mut cands = Vec::with_capacity(records.len());
        let mut labeled = Vec::new();
        for r in &records {
            let s = scores
                .get(&r.candidate.id)
                .ok_or_else(|| Error::MissingFeatures(format!("no score for {}", r.candidate.id)))?;
            if r.split == Split::Test {
                labeled.push((s.fusion, r.label));
            }
            cands.push(TaskCandidate {
                candidate: r.candidate.clone(),
                baseline: s.baseline,
                cnn: s.cnn,
                fusion: s.fusion,
            });
        }
        let vol = self.load_volume(&tv.name, true)?;
        let initial = vol.initial_bodies()?;
        let log = DecisionLog::open(&self.path(DECISIONS_FILE))?;
        let oc = &self.config.orphan;
        let mut svc = TaskService::new(cands, initial, log, clock)?.with_orphan_weight(oc.weight_min..=oc.weight_max);
        if let Ok(pr) = pr_curve(&labeled) {
            svc = svc.with_pr_curve(pr);
        }
        let sites = SiteIndex::new(&vol.synapses, 16);
        let gray = vol.gray.expect("loaded with grayscale");
        Ok(svc.with_slices(SliceSource {
            gray,
            labels: vol.fragments,
            sites,
            edge: self.config.features.evidence_edge,
            prox_radius_nm: self.config.features.prox_radius_nm,
        }))
    }
}

/// Completeness before and after, plus the synapse sites moved into
/// identified bodies, recounted fragment by fragment.
pub fn completeness_report(
    volume: &str,
    tau: Option<f64>,
    before: &BodyState,
    after: &BodyState,
    synapses: &[SynapseRecord],
    run: &OrphanRun,
) -> Result<CompletenessReport> {
    let mut own: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for s in synapses {
        own.entry(s.pre_fragment).or_default().0 += 1;
        for &p in &s.post_fragments {
            own.entry(p).or_default().1 += 1;
        }
    }
    let (mut tbars, mut psds) = (0, 0);
    for (&f, &(t, p)) in &own {
        if !before.is_identified(f)? && after.is_identified(f)? {
            tbars += t;
            psds += p;
        }
    }
    Ok(CompletenessReport {
        volume: volume.to_string(),
        tau,
        before: completeness_counts(before, synapses)?.into(),
        after: completeness_counts(after, synapses)?.into(),
        proposals: run.proposals.len(),
        accepted_merges: run.accepted.len(),
        tbars_added: tbars,
        psds_added: psds,
    })
}

/// Two simulated reviewers assess each `(id, score, truly correct)` item.
/// Each answers indeterminate with one probability, and otherwise errs with
/// another; draws are seeded per reviewer and candidate.
pub fn synthetic_reviews(items: &[(CandidateId, f64, bool)], cfg: &EvalConfig, seed: u64) -> Vec<ReviewAssessment> {
    let mut out = Vec::with_capacity(2 * items.len());
    for (k, reviewer) in [Reviewer::A, Reviewer::B].into_iter().enumerate() {
        for &(id, _, correct) in items {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id.0 ^ ((k as u64 + 1) << 56));
            let verdict = if rng.random::<f64>() < cfg.reviewer_indeterminate {
                Assessment::Indeterminate
            } else if (rng.random::<f64>() < cfg.reviewer_error) ^ correct {
                Assessment::Correct
            } else {
                Assessment::Incorrect
            };
            out.push(ReviewAssessment {
                candidate_id: id,
                reviewer,
                verdict,
            });
        }
    }
    out
}

/// Replays `decisions.jsonl` over the test volume's initial bodies.
pub fn replay_decisions(
    log: &[crate::workflow::Decision],
    records: &[CandidateRecord],
    initial: BodyState,
) -> Result<BodyState> {
    let pairs: HashMap<CandidateId, (u64, u64)> =
        records.iter().map(|r| (r.candidate.id, (r.candidate.edge.a, r.candidate.edge.b))).collect();
    crate::workflow::replay(log, &pairs, initial)
}

/// Verdict counts of a log: `(merge, no_merge, indeterminate)`.
pub fn verdict_counts(log: &[crate::workflow::Decision]) -> (usize, usize, usize) {
    log.iter().fold((0, 0, 0), |(m, n, i), d| match d.verdict {
        Verdict::Merge => (m + 1, n, i),
        Verdict::NoMerge => (m, n + 1, i),
        Verdict::Indeterminate => (m, n, i + 1),
    })
}
