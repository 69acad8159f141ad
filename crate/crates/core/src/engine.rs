//! Challenge orchestration: the 4 × 8 DGP grid, per-replicate generation from
//! hierarchical substreams, ground-truth files, and the on-disk tree
//!
//! ```text
//! <root>/X.csv
//! <root>/manifest.json
//! <root>/<family>/<bits>/dgp.csv          alpha,mu
//! <root>/<family>/<bits>/<r>.csv          z,y     (r = 1..=m)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::CovariateTable;
use crate::csvio::{self, fmt_f64};
use crate::dgp::{self, CalibratedSurfaces, ErrorFamily, ScenarioConfig, VarianceConvention};
use crate::error::{Error, Result};
use crate::nonadditive::{self, TransformParams};
use crate::rng::{Purpose, StreamKey};

pub const DEFAULT_REPLICATES: u32 = 250;
pub const DEFAULT_N: usize = 4302;
pub const COVARIATE_FILE: &str = "X.csv";
pub const GROUND_TRUTH_FILE: &str = "dgp.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_HEADER: [&str; 2] = ["alpha", "mu"];
pub const REPLICATE_HEADER: [&str; 2] = ["z", "y"];

/// Three setting bits: effect magnitude, noise level, selection strength
/// (most significant first), 1 meaning high/strong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SettingBits(u8);

impl SettingBits {
    pub const ALL: [SettingBits; 8] = [
        SettingBits(0),
        SettingBits(1),
        SettingBits(2),
        SettingBits(3),
        SettingBits(4),
        SettingBits(5),
        SettingBits(6),
        SettingBits(7),
    ];

    pub fn from_levels(high_effect: bool, high_noise: bool, strong_selection: bool) -> Self {
        SettingBits(((high_effect as u8) << 2) | ((high_noise as u8) << 1) | strong_selection as u8)
    }

    pub fn high_effect(self) -> bool {
        self.0 & 4 != 0
    }

    pub fn high_noise(self) -> bool {
        self.0 & 2 != 0
    }

    pub fn strong_selection(self) -> bool {
        self.0 & 1 != 0
    }

    pub fn as_str(self) -> &'static str {
        ["000", "001", "010", "011", "100", "101", "110", "111"][self.0 as usize]
    }
}

impl fmt::Display for SettingBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingBits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 3 || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::Config(format!("setting code {s:?} must be three characters over {{0,1}}")));
        }
        let v = s.bytes().fold(0u8, |acc, b| (acc << 1) | (b - b'0'));
        Ok(SettingBits(v))
    }
}

impl Serialize for SettingBits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SettingBits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DgpCode {
    pub family: ErrorFamily,
    pub bits: SettingBits,
}

impl DgpCode {
    pub fn config(&self) -> ScenarioConfig {
        ScenarioConfig::from_levels(
            self.bits.high_effect(),
            self.bits.high_noise(),
            self.bits.strong_selection(),
            self.family,
        )
    }

    /// `<family>/<bits>` relative to the build root.
    pub fn folder(&self) -> PathBuf {
        Path::new(self.family.folder_name()).join(self.bits.as_str())
    }

    pub fn all() -> impl Iterator<Item = DgpCode> {
        ErrorFamily::ALL
            .into_iter()
            .flat_map(|family| SettingBits::ALL.into_iter().map(move |bits| DgpCode { family, bits }))
    }
}

impl fmt::Display for DgpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family, self.bits)
    }
}

/// Folder code of a tabled configuration.
pub fn encode_setting_code(config: &ScenarioConfig) -> Result<DgpCode> {
    let (e, n, s) = config
        .levels()
        .ok_or_else(|| Error::Config("extended configuration has no setting code".into()))?;
    Ok(DgpCode {
        family: config.family,
        bits: SettingBits::from_levels(e, n, s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPolicy {
    /// One treatment vector per DGP; replicates differ only in outcome noise.
    #[default]
    FixedPerDgp,
    /// A fresh treatment vector per replicate.
    RedrawPerReplicate,
}

impl FromStr for ZPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" | "fixed_per_dgp" => Ok(ZPolicy::FixedPerDgp),
            "redraw" | "redraw_per_replicate" => Ok(ZPolicy::RedrawPerReplicate),
            other => Err(Error::Config(format!("unknown z policy {other:?} (expected fixed or redraw)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayoutOverrides {
    pub replicates: Option<u32>,
    pub n: Option<usize>,
    pub families: Option<Vec<ErrorFamily>>,
    pub settings: Option<Vec<SettingBits>>,
    pub z_policy: Option<ZPolicy>,
    /// Inclusive subset of 1..=m to materialize.
    pub replicate_range: Option<(u32, u32)>,
    pub convention: Option<VarianceConvention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeLayout {
    pub families: Vec<ErrorFamily>,
    pub settings: Vec<SettingBits>,
    pub replicates: u32,
    pub n: usize,
    pub master_seed: u64,
    pub z_policy: ZPolicy,
    pub convention: VarianceConvention,
    pub first_replicate: u32,
    pub last_replicate: u32,
}

impl ChallengeLayout {
    pub fn dgps(&self) -> Vec<DgpCode> {
        self.families
            .iter()
            .flat_map(|&family| self.settings.iter().map(move |&bits| DgpCode { family, bits }))
            .collect()
    }

    pub fn replicate_ids(&self) -> std::ops::RangeInclusive<u32> {
        self.first_replicate..=self.last_replicate
    }

    /// Relative paths of every file a build of this layout writes, manifest excluded.
    pub fn planned_files(&self) -> Vec<PathBuf> {
        let mut out = vec![PathBuf::from(COVARIATE_FILE)];
        for code in self.dgps() {
            let dir = code.folder();
            out.push(dir.join(GROUND_TRUTH_FILE));
            out.extend(self.replicate_ids().map(|r| dir.join(format!("{r}.csv"))));
        }
        out
    }

    pub fn planned_replicate_files(&self) -> usize {
        self.dgps().len() * self.replicate_ids().count()
    }
}

/// Resolves a layout; with no overrides this is all 32 DGPs × 250 replicates.
pub fn plan_challenge(master_seed: u64, overrides: &LayoutOverrides) -> Result<ChallengeLayout> {
    let replicates = overrides.replicates.unwrap_or(DEFAULT_REPLICATES);
    if replicates < 1 {
        return Err(Error::Config("replicate count must be at least 1".into()));
    }
    let n = overrides.n.unwrap_or(DEFAULT_N);
    if n < 2 {
        return Err(Error::Config(format!("unit count must be at least 2, got {n}")));
    }
    let mut families = overrides.families.clone().unwrap_or_else(|| ErrorFamily::ALL.to_vec());
    families.sort();
    families.dedup();
    let mut settings = overrides.settings.clone().unwrap_or_else(|| SettingBits::ALL.to_vec());
    settings.sort();
    settings.dedup();
    if families.is_empty() || settings.is_empty() {
        return Err(Error::Config("family and setting filters must select at least one DGP".into()));
    }
    let (first, last) = overrides.replicate_range.unwrap_or((1, replicates));
    if first < 1 || first > last || last > replicates {
        return Err(Error::Config(format!(
            "replicate range {first}..={last} is not within 1..={replicates}"
        )));
    }
    Ok(ChallengeLayout {
        families,
        settings,
        replicates,
        n,
        master_seed,
        z_policy: overrides.z_policy.unwrap_or_default(),
        convention: overrides.convention.unwrap_or_default(),
        first_replicate: first,
        last_replicate: last,
    })
}

/// Per-unit ground truth: CATE (`alpha`) and the untreated mean (`mu`).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
}

impl GroundTruth {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn to_csv_string(&self) -> String {
        csvio::render_columns(&GROUND_TRUTH_HEADER, &[&self.alpha, &self.mu])
    }
}

/// Writes `dgp.csv` into `dir`; returns the file path.
pub fn write_ground_truth(truth: &GroundTruth, dir: &Path) -> Result<PathBuf> {
    if truth.mu.len() != truth.alpha.len() {
        return Err(Error::LengthMismatch {
            what: "ground-truth mu",
            expected: truth.alpha.len(),
            found: truth.mu.len(),
        });
    }
    let path = dir.join(GROUND_TRUTH_FILE);
    csvio::write_atomic(&path, truth.to_csv_string().as_bytes())?;
    Ok(path)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut cols = csvio::read_numeric_columns(path, &GROUND_TRUTH_HEADER)?;
    let mu = cols.pop().unwrap_or_default();
    let alpha = cols.pop().unwrap_or_default();
    Ok(GroundTruth { alpha, mu })
}

/// Coordinates of the substreams a replicate was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngPath {
    pub master_seed: u64,
    pub code: DgpCode,
    pub replicate_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateData {
    pub z: Vec<u8>,
    pub y: Vec<f64>,
    pub replicate_id: u32,
    pub rng_path: RngPath,
}

impl ReplicateData {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.y.len() * 24);
        out.push_str("z,y\n");
        for (z, y) in self.z.iter().zip(&self.y) {
            out.push(if *z == 1 { '1' } else { '0' });
            out.push(',');
            out.push_str(&fmt_f64(*y));
            out.push('\n');
        }
        out
    }
}

/// Reads a `z,y` replicate file.
pub fn read_replicate(path: &Path) -> Result<(Vec<u8>, Vec<f64>)> {
    let cols = csvio::read_numeric_columns(path, &REPLICATE_HEADER)?;
    let z = cols[0]
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(Error::Validation(format!(
                    "{}: row {}: treatment indicator {v} is not 0 or 1",
                    path.display(),
                    i + 1
                )))
            }
        })
        .collect::<Result<_>>()?;
    Ok((z, cols[1].clone()))
}

/// Everything about one DGP that does not vary across replicates.
#[derive(Debug, Clone)]
pub struct DgpContext {
    pub code: DgpCode,
    pub config: ScenarioConfig,
    pub surfaces: CalibratedSurfaces,
    pub transform: Option<TransformParams>,
    pub truth: GroundTruth,
    x21: Vec<u8>,
}

impl DgpContext {
    pub fn new(table: &CovariateTable, code: DgpCode, convention: VarianceConvention) -> Result<Self> {
        Self::from_config(table, code, code.config(), convention)
    }

    /// Context for an arbitrary (possibly extended) configuration filed under `code`.
    pub fn from_config(
        table: &CovariateTable,
        code: DgpCode,
        config: ScenarioConfig,
        convention: VarianceConvention,
    ) -> Result<Self> {
        let surfaces = CalibratedSurfaces::compute(table, &config, convention)?;
        let (transform, truth) = if config.family.is_additive() {
            // The heteroskedastic family shares the additive truth.
            let truth = GroundTruth {
                alpha: surfaces.tau.clone(),
                mu: surfaces.mu.clone(),
            };
            (None, truth)
        } else {
            let params = nonadditive::compute_transform_params(
                &surfaces.mu,
                &surfaces.tau,
                &surfaces.pi,
                surfaces.sigma_y,
                convention,
            )?;
            let (alpha, mu) = params.ground_truth();
            (Some(params), GroundTruth { alpha, mu })
        };
        Ok(Self {
            code,
            config,
            surfaces,
            transform,
            truth,
            x21: table.x21_levels(),
        })
    }

    pub fn n(&self) -> usize {
        self.surfaces.n()
    }

    fn key(&self, master_seed: u64, replicate_id: u32, purpose: Purpose) -> StreamKey<'static> {
        StreamKey {
            master_seed,
            family: self.code.family.folder_name(),
            bits: self.code.bits.as_str(),
            replicate_id,
            purpose,
        }
    }

    /// Treatment vector used by `replicate_id` under `policy`.
    pub fn treatment(&self, master_seed: u64, replicate_id: u32, policy: ZPolicy) -> Vec<u8> {
        let slot = match policy {
            ZPolicy::FixedPerDgp => 0,
            ZPolicy::RedrawPerReplicate => replicate_id,
        };
        dgp::draw_treatment(&self.surfaces.pi, &mut self.key(master_seed, slot, Purpose::Treatment).stream())
    }

    pub fn generate(&self, master_seed: u64, replicate_id: u32, policy: ZPolicy) -> Result<ReplicateData> {
        if replicate_id < 1 {
            return Err(Error::Config("replicate ids start at 1".into()));
        }
        let z = self.treatment(master_seed, replicate_id, policy);
        let mut outcome = self.key(master_seed, replicate_id, Purpose::Outcome).stream();
        let y = match &self.transform {
            None => {
                let mut group = self.key(master_seed, replicate_id, Purpose::Group).stream();
                dgp::generate_additive_outcome(&self.surfaces, &z, self.config.family, &self.x21, &mut outcome, &mut group)?
            }
            Some(params) => nonadditive::generate_nonadditive_outcome(&self.surfaces, &z, params, &mut outcome)?,
        };
        Ok(ReplicateData {
            z,
            y,
            replicate_id,
            rng_path: RngPath {
                master_seed,
                code: self.code,
                replicate_id,
            },
        })
    }

    pub fn summary(&self, master_seed: u64, policy: ZPolicy) -> DgpSummary {
        let z = self.treatment(master_seed, 1, policy);
        DgpSummary {
            code: self.code,
            xi: self.config.xi,
            eta: self.config.eta,
            kappa: (self.config.kappa.0, self.config.kappa.1),
            sigma_y: self.surfaces.sigma_y,
            pi: Stats::of(&self.surfaces.pi),
            mu: Stats::of(&self.truth.mu),
            tau: Stats::of(&self.truth.alpha),
            treated_fraction: z.iter().map(|&v| f64::from(v)).sum::<f64>() / z.len() as f64,
            transform: self.transform.as_ref().map(|p| (p.a, p.b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Self {
        Stats {
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSummary {
    pub code: DgpCode,
    pub xi: f64,
    pub eta: f64,
    pub kappa: (f64, f64),
    pub sigma_y: f64,
    pub pi: Stats,
    pub mu: Stats,
    pub tau: Stats,
    pub treated_fraction: f64,
    pub transform: Option<(f64, f64)>,
}

/// One replicate from scratch. Builds the DGP context, so prefer
/// [`DgpContext::generate`] when producing many replicates.
pub fn generate_replicate(
    covariates: &CovariateTable,
    config: &ScenarioConfig,
    master_seed: u64,
    replicate_id: u32,
    z_policy: ZPolicy,
) -> Result<ReplicateData> {
    let code = encode_setting_code(config)?;
    DgpContext::new(covariates, code, VarianceConvention::default())?.generate(master_seed, replicate_id, z_policy)
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Keep existing replicate files instead of regenerating them.
    pub resume: bool,
    /// Effective run configuration echoed into the manifest.
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub root: PathBuf,
    pub dgps: usize,
    pub replicate_files: usize,
    pub ground_truth_files: usize,
    pub rows_per_file: usize,
    pub resumed_files: usize,
    /// SHA-256 of each file, keyed by `/`-separated relative path.
    pub digests: BTreeMap<String, String>,
    pub manifest_digest: String,
    pub elapsed_secs: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    layout: &'a ChallengeLayout,
    covariates: String,
    run_config: &'a Option<serde_json::Value>,
    manifest_digest: &'a str,
    files: &'a BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn rel_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Digest over the sorted `(path, digest)` list; independent of timing and
/// run configuration.
pub fn manifest_digest(digests: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, digest) in digests {
        h.update(path.as_bytes());
        h.update(b"  ");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Writes the selected part of the challenge tree under `root`. DGPs and
/// replicates are generated in parallel on the current rayon pool; the
/// result is identical to a sequential build.
pub fn build_challenge(
    layout: &ChallengeLayout,
    covariates: &CovariateTable,
    root: &Path,
    options: &BuildOptions,
) -> Result<BuildReport> {
    let start = Instant::now();
    if covariates.n() != layout.n {
        return Err(Error::Config(format!(
            "layout expects n = {} units but the covariate table has {}",
            layout.n,
            covariates.n()
        )));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let x_bytes = covariates.to_csv_string();
    csvio::write_atomic(&root.join(COVARIATE_FILE), x_bytes.as_bytes())?;
    let mut digests = BTreeMap::new();
    digests.insert(COVARIATE_FILE.to_string(), sha256_hex(x_bytes.as_bytes()));

    let contexts: Vec<DgpContext> = layout
        .dgps()
        .into_par_iter()
        .map(|code| DgpContext::new(covariates, code, layout.convention))
        .collect::<Result<_>>()?;

    let truth_digests: Vec<(String, String)> = contexts
        .par_iter()
        .map(|ctx| {
            let bytes = ctx.truth.to_csv_string();
            let rel = ctx.code.folder().join(GROUND_TRUTH_FILE);
            csvio::write_atomic(&root.join(&rel), bytes.as_bytes())?;
            Ok((rel_key(&rel), sha256_hex(bytes.as_bytes())))
        })
        .collect::<Result<_>>()?;
    digests.extend(truth_digests);

    let jobs: Vec<(usize, u32)> = (0..contexts.len())
        .flat_map(|d| layout.replicate_ids().map(move |r| (d, r)))
        .collect();
    let replicate_digests: Vec<(String, String, bool)> = jobs
        .par_iter()
        .map(|&(d, r)| {
            let ctx = &contexts[d];
            let rel = ctx.code.folder().join(format!("{r}.csv"));
            let path = root.join(&rel);
            if options.resume && path.is_file() {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                return Ok((rel_key(&rel), sha256_hex(&bytes), true));
            }
            let data = ctx.generate(layout.master_seed, r, layout.z_policy)?;
            let bytes = data.to_csv_string();
            csvio::write_atomic(&path, bytes.as_bytes())?;
            Ok((rel_key(&rel), sha256_hex(bytes.as_bytes()), false))
        })
        .collect::<Result<_>>()?;
    let resumed_files = replicate_digests.iter().filter(|(_, _, resumed)| *resumed).count();
    digests.extend(replicate_digests.into_iter().map(|(p, d, _)| (p, d)));

    let manifest_digest = manifest_digest(&digests);
    let manifest = Manifest {
        format: "selbench-manifest/1",
        layout,
        covariates: covariates.provenance().to_string(),
        run_config: &options.run_config,
        manifest_digest: &manifest_digest,
        files: &digests,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    csvio::write_atomic(&root.join(MANIFEST_FILE), json.as_bytes())?;

    Ok(BuildReport {
        root: root.to_path_buf(),
        dgps: contexts.len(),
        replicate_files: jobs.len(),
        ground_truth_files: contexts.len(),
        rows_per_file: layout.n,
        resumed_files,
        digests,
        manifest_digest,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn count_data_rows(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

/// Structural walk of a built tree: every planned file exists and every
/// per-unit file has exactly `n` data rows.
pub fn validate_build(root: &Path, layout: &ChallengeLayout) -> Result<usize> {
    let mut checked = 0;
    for rel in layout.planned_files() {
        let path = root.join(&rel);
        if !path.is_file() {
            return Err(Error::Validation(format!("missing planned file {}", path.display())));
        }
        let rows = count_data_rows(&path)?;
        if rows != layout.n {
            return Err(Error::RowCount {
                path,
                expected: layout.n,
                found: rows,
            });
        }
        checked += 1;
    }
    for code in layout.dgps() {
        let dir = root.join(code.folder());
        let truths = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name() == GROUND_TRUTH_FILE)
            .count();
        if truths != 1 {
            return Err(Error::Validation(format!("{} has {truths} ground-truth files", dir.display())));
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::TARGET_CORRELATIONS;
    use crate::synth::{synthesize_covariates, SyntheticMargins};

    fn table(n: usize) -> CovariateTable {
        synthesize_covariates(n, 17, &TARGET_CORRELATIONS, &SyntheticMargins::default()).unwrap()
    }

    #[test]
    fn setting_codes_for_tabled_cases() {
        let code = |e, n, s| encode_setting_code(&ScenarioConfig::from_levels(e, n, s, ErrorFamily::Iid)).unwrap();
        assert_eq!(code(false, false, false).bits.as_str(), "000");
        assert_eq!(code(true, true, true).bits.as_str(), "111");
        assert_eq!(code(false, true, true).bits.as_str(), "011");
        let ext = ScenarioConfig::extended(1.0, 1.0, dgp::KAPPA_WEAK, ErrorFamily::Iid).unwrap();
        assert!(encode_setting_code(&ext).is_err());
    }

    #[test]
    fn bits_parse_and_decode() {
        for b in SettingBits::ALL {
            let parsed: SettingBits = b.as_str().parse().unwrap();
            assert_eq!(parsed, b);
            let cfg = DgpCode { family: ErrorFamily::Iid, bits: b }.config();
            assert_eq!(encode_setting_code(&cfg).unwrap().bits, b);
            assert_eq!(cfg.case_number(), Some(b.0 + 1));
        }
        for bad in ["", "01", "0101", "012", "abc"] {
            assert!(bad.parse::<SettingBits>().is_err());
        }
    }

    #[test]
    fn default_plan_has_32_dgps_and_8000_replicates() {
        let plan = plan_challenge(1, &LayoutOverrides::default()).unwrap();
        assert_eq!(plan.dgps().len(), 32);
        assert_eq!(plan.planned_replicate_files(), 8000);
        assert_eq!(plan.planned_files().len(), 1 + 32 * 251);
        assert_eq!(plan, plan_challenge(1, &LayoutOverrides::default()).unwrap());
    }

    #[test]
    fn overridden_plan() {
        let o = LayoutOverrides {
            replicates: Some(5),
            ..Default::default()
        };
        assert_eq!(plan_challenge(1, &o).unwrap().planned_replicate_files(), 160);
        for bad in [
            LayoutOverrides { replicates: Some(0), ..Default::default() },
            LayoutOverrides { n: Some(1), ..Default::default() },
            LayoutOverrides { families: Some(vec![]), ..Default::default() },
            LayoutOverrides { replicate_range: Some((3, 2)), ..Default::default() },
            LayoutOverrides { replicates: Some(5), replicate_range: Some((1, 6)), ..Default::default() },
        ] {
            assert!(plan_challenge(1, &bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn fixed_policy_shares_z_across_replicates() {
        let t = table(200);
        let cfg = ScenarioConfig::from_levels(true, false, true, ErrorFamily::Iid);
        let r1 = generate_replicate(&t, &cfg, 9, 1, ZPolicy::FixedPerDgp).unwrap();
        let r2 = generate_replicate(&t, &cfg, 9, 2, ZPolicy::FixedPerDgp).unwrap();
        assert_eq!(r1.z, r2.z);
        assert_ne!(r1.y, r2.y);
        let d1 = generate_replicate(&t, &cfg, 9, 1, ZPolicy::RedrawPerReplicate).unwrap();
        let d2 = generate_replicate(&t, &cfg, 9, 2, ZPolicy::RedrawPerReplicate).unwrap();
        assert_ne!(d1.z, d2.z);
        assert!(generate_replicate(&t, &cfg, 9, 0, ZPolicy::FixedPerDgp).is_err());
    }

    #[test]
    fn ground_truth_round_trip_and_definitions() {
        let t = table(120);
        let code = DgpCode { family: ErrorFamily::Heteroskedastic, bits: "101".parse().unwrap() };
        let ctx = DgpContext::new(&t, code, VarianceConvention::Population).unwrap();
        for (i, x) in t.units().enumerate() {
            assert_eq!(ctx.truth.alpha[i], dgp::tau_additive(&x, ctx.config.xi));
            assert_eq!(ctx.truth.mu[i], dgp::mu_baseline(ctx.surfaces.pi[i], x.x43));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = write_ground_truth(&ctx.truth, dir.path()).unwrap();
        let back = read_ground_truth(&path).unwrap();
        assert_eq!(back, ctx.truth);
    }

    #[test]
    fn replicate_file_round_trip() {
        let t = table(50);
        let ctx = DgpContext::new(&t, DgpCode { family: ErrorFamily::NonAdditive, bits: SettingBits(6) }, VarianceConvention::Population).unwrap();
        let rep = ctx.generate(3, 4, ZPolicy::FixedPerDgp).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), rep.to_csv_string()).unwrap();
        let (z, y) = read_replicate(f.path()).unwrap();
        assert_eq!(z, rep.z);
        assert_eq!(y, rep.y);
    }

    #[test]
    fn smoke_build_validates() {
        let t = table(50);
        let plan = plan_challenge(
            5,
            &LayoutOverrides { replicates: Some(2), n: Some(50), ..Default::default() },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = build_challenge(&plan, &t, dir.path(), &BuildOptions::default()).unwrap();
        assert_eq!(report.replicate_files, 64);
        assert_eq!(report.digests.len(), 1 + 32 * 3);
        assert_eq!(validate_build(dir.path(), &plan).unwrap(), 1 + 32 * 3);
        assert!(dir.path().join(MANIFEST_FILE).is_file());

        // resume keeps existing files and reproduces the same digests
        let again = build_challenge(&plan, &t, dir.path(), &BuildOptions { resume: true, ..Default::default() }).unwrap();
        assert_eq!(again.resumed_files, 64);
        assert_eq!(again.manifest_digest, report.manifest_digest);

        fs::write(dir.path().join("iid/000/1.csv"), "z,y\n0,1.0\n").unwrap();
        assert!(matches!(validate_build(dir.path(), &plan), Err(Error::RowCount { .. })));
        fs::remove_file(dir.path().join("iid/000/2.csv")).unwrap();
        assert!(validate_build(dir.path(), &plan).is_err());
    }

    #[test]
    fn build_rejects_wrong_n() {
        let t = table(50);
        let plan = plan_challenge(5, &LayoutOverrides { replicates: Some(1), n: Some(60), ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(build_challenge(&plan, &t, dir.path(), &BuildOptions::default()).is_err());
    }
}
