//! Reproducible five-stage runs: relax, homogenize, fit, stretch test and
//! drape.
//!
//! A run is described by one [`RunConfig`]. Every artifact records the
//! config hash, a SHA-256 over the canonical config JSON and the bytes of
//! the pattern and material files, so a stage can tell whether its inputs
//! came from the same configuration. JSON artifacts carry it as a field, CSV
//! and OBJ artifacts as a leading `# config_hash=` comment line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fit::{fit, shell_thickness, FitConfig, FitReport, Thickness};
use crate::homogenize::{read_energy_csv, run_homogenization, sample_deformation_grid, write_energy_csv, EnergyRecord, SamplingConfig};
use crate::pattern::{estimate_yarn_radius, load_material, load_pattern, MaterialSpec, YarnPattern};
use crate::shell::{write_obj, ShellParams};
use crate::shellsim::{drape_test, stretch_tests, DrapeConfig, DrapeResult, Obstacle, StretchConfig, StretchCurve, Swatch, STANDARD_GRAVITY};
use crate::solver::{relax_patch, RelaxedPatch, SolverConfig};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const HASH_PREFIX: &str = "# config_hash=";

pub const RELAXED_FILE: &str = "relaxed.json";
pub const ENERGY_FILE: &str = "energies.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const STRETCH_FILE: &str = "stretch.json";
pub const DRAPE_FILE: &str = "drape.json";
pub const DRAPE_MESH_FILE: &str = "drape.obj";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Relax,
    Homogenize,
    Fit,
    StretchTest,
    Drape,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Relax, Stage::Homogenize, Stage::Fit, Stage::StretchTest, Stage::Drape];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Relax => "relax",
            Stage::Homogenize => "homogenize",
            Stage::Fit => "fit",
            Stage::StretchTest => "stretch-test",
            Stage::Drape => "drape",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StretchStage {
    pub swatch: Swatch,
    pub strains: Vec<f64>,
    pub cut_angles: Vec<f64>,
    pub solver: SolverConfig,
}

impl Default for StretchStage {
    fn default() -> Self {
        let base = StretchConfig::default();
        Self { swatch: base.swatch, strains: base.strains, cut_angles: vec![0.0, 45.0, 90.0], solver: base.solver }
    }
}

/// Drape settings; the areal density comes from the material and the
/// perturbation seed from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrapeStage {
    pub swatch: Swatch,
    pub cut_angle_deg: f64,
    pub obstacle: Obstacle,
    pub gravity: f64,
    pub load_steps: usize,
    pub noise: f64,
    pub solver: SolverConfig,
}

impl Default for DrapeStage {
    fn default() -> Self {
        let base = DrapeConfig::default();
        Self {
            swatch: Swatch { nx: 10, ny: 10, ..base.swatch },
            cut_angle_deg: base.cut_angle_deg,
            obstacle: base.obstacle,
            gravity: STANDARD_GRAVITY,
            load_steps: base.load_steps,
            noise: base.noise,
            solver: base.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths resolve against the config file's directory.
    pub pattern: PathBuf,
    pub material: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Yarn radius in m; estimated from the pattern and material if absent.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "one")]
    pub radius_scale: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub stretch: StretchStage,
    #[serde(default)]
    pub drape: DrapeStage,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> f64 {
    1.0
}

fn config_error(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn new(pattern: impl Into<PathBuf>, material: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            pattern: pattern.into(),
            material: material.into(),
            output_dir: output_dir.into(),
            seed: 0,
            radius: None,
            radius_scale: 1.0,
            solver: SolverConfig::default(),
            sampling: SamplingConfig::default(),
            fit: FitConfig::default(),
            stretch: StretchStage::default(),
            drape: DrapeStage::default(),
        }
    }

    /// Parse TOML or JSON by extension and resolve relative paths against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e.to_string()))?;
        let mut config: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| config_error(path.display().to_string(), e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| config_error(path.display().to_string(), e.message().to_string()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.pattern, &mut config.material, &mut config.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let nested = |prefix: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config { field, reason } => config_error(format!("{prefix}.{field}"), reason),
                other => config_error(prefix, other.to_string()),
            })
        };
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(config_error("radius", "must be positive"));
            }
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(config_error("radius_scale", "must be positive"));
        }
        nested("solver", self.solver.validate())?;
        nested("sampling", self.sampling.validate())?;
        nested("fit", self.fit.validate())?;
        nested("stretch.swatch", self.stretch.swatch.validate())?;
        nested("stretch.solver", self.stretch.solver.validate())?;
        if self.stretch.cut_angles.is_empty() || self.stretch.strains.is_empty() {
            return Err(config_error("stretch", "needs at least one cut angle and one strain"));
        }
        nested("drape", self.drape_config(1.0).validate())?;
        Ok(())
    }

    pub fn stretch_configs(&self) -> Vec<StretchConfig> {
        self.stretch
            .cut_angles
            .iter()
            .map(|&a| StretchConfig {
                swatch: self.stretch.swatch,
                cut_angle_deg: a,
                strains: self.stretch.strains.clone(),
                solver: self.stretch.solver.clone(),
            })
            .collect()
    }

    pub fn drape_config(&self, density: f64) -> DrapeConfig {
        let d = &self.drape;
        DrapeConfig {
            swatch: d.swatch,
            cut_angle_deg: d.cut_angle_deg,
            obstacle: d.obstacle,
            gravity: d.gravity,
            density,
            load_steps: d.load_steps,
            noise: d.noise,
            seed: self.seed,
            solver: d.solver.clone(),
        }
    }

    /// SHA-256 hex digest identifying the run's inputs. File paths and the
    /// output directory are left out; the input files enter by content.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.pattern = PathBuf::new();
        canonical.material = PathBuf::new();
        canonical.output_dir = PathBuf::new();
        // serde_json maps are sorted, so the text is canonical
        let json = serde_json::to_string(&serde_json::to_value(&canonical)?)?;
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        for path in [&self.pattern, &self.material] {
            let bytes = std::fs::read(path).map_err(|e| Error::Load { path: path.clone(), reason: e.to_string() })?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Relaxed-state file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub patch: RelaxedPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub thickness: Thickness,
    pub fit: FitReport,
}

impl ParamsArtifact {
    pub fn params(&self) -> &ShellParams {
        &self.fit.params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub curves: Vec<StretchCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrapeArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub result: DrapeResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<Stage, Vec<ArtifactRecord>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| Error::Load { path: path.into(), reason: e.to_string() })
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRecord> {
        self.stages.values().flatten()
    }
}

fn stretch_csv_name(angle: f64) -> String {
    format!("stretch_cut{}.csv", format!("{angle}").replace('.', "p").replace('-', "m"))
}

fn with_hash_header(hash: &str, body: &[u8]) -> Vec<u8> {
    let mut out = format!("{HASH_PREFIX}{hash}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

/// Split a `# config_hash=` header from the rest of a text artifact.
pub fn split_hash_header(text: &str) -> Option<(&str, &str)> {
    let rest = text.strip_prefix(HASH_PREFIX)?;
    let (hash, body) = rest.split_once('\n')?;
    Some((hash.trim(), body))
}

/// One configured run rooted at its output directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub hash: String,
    /// Accept upstream artifacts produced under a different config hash.
    pub force: bool,
    /// Homogenization worker threads; all cores if `None`.
    pub jobs: Option<usize>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self { config, hash, force: false, jobs: None })
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn inputs(&self) -> Result<(YarnPattern, MaterialSpec)> {
        let pattern = load_pattern(&self.config.pattern)?;
        let material = load_material(&self.config.material)?;
        Ok((pattern, material))
    }

    fn check_hash(&self, stage: Stage, file: &str, found: &str) -> Result<()> {
        if found == self.hash {
            return Ok(());
        }
        if self.force {
            log::warn!("{stage}: using {file} from config {found} under config {} (forced)", self.hash);
            return Ok(());
        }
        Err(Error::StageDependency {
            stage: stage.name().into(),
            missing: file.into(),
            reason: format!("artifact was produced by config {found}, current config is {}; rerun upstream stages or pass --force", self.hash),
        })
    }

    fn read_upstream(&self, stage: Stage, file: &str, producer: Stage) -> Result<String> {
        std::fs::read_to_string(self.path(file)).map_err(|e| Error::StageDependency {
            stage: stage.name().into(),
            missing: file.into(),
            reason: format!("{} ({e}); run `{producer}` first", self.path(file).display()),
        })
    }

    fn load_json<T: serde::de::DeserializeOwned>(&self, stage: Stage, file: &str, producer: Stage) -> Result<T> {
        let text = self.read_upstream(stage, file, producer)?;
        serde_json::from_str(&text).map_err(|e| Error::StageDependency {
            stage: stage.name().into(),
            missing: file.into(),
            reason: format!("unreadable artifact: {e}"),
        })
    }

    pub fn load_relaxed(&self, stage: Stage) -> Result<RelaxedArtifact> {
        let a: RelaxedArtifact = self.load_json(stage, RELAXED_FILE, Stage::Relax)?;
        if a.schema_version != SCHEMA_VERSION {
            return Err(Error::StageDependency {
                stage: stage.name().into(),
                missing: RELAXED_FILE.into(),
                reason: format!("schema version {} is not {SCHEMA_VERSION}", a.schema_version),
            });
        }
        self.check_hash(stage, RELAXED_FILE, &a.config_hash)?;
        Ok(a)
    }

    pub fn load_energies(&self, stage: Stage) -> Result<Vec<EnergyRecord>> {
        let text = self.read_upstream(stage, ENERGY_FILE, Stage::Homogenize)?;
        let (hash, body) = split_hash_header(&text).ok_or_else(|| Error::StageDependency {
            stage: stage.name().into(),
            missing: ENERGY_FILE.into(),
            reason: "missing config hash header".into(),
        })?;
        self.check_hash(stage, ENERGY_FILE, hash)?;
        read_energy_csv(body.as_bytes())
    }

    pub fn load_params(&self, stage: Stage) -> Result<ParamsArtifact> {
        let a: ParamsArtifact = self.load_json(stage, PARAMS_FILE, Stage::Fit)?;
        self.check_hash(stage, PARAMS_FILE, &a.config_hash)?;
        Ok(a)
    }

    pub fn load_stretch(&self, stage: Stage) -> Result<StretchArtifact> {
        let a: StretchArtifact = self.load_json(stage, STRETCH_FILE, Stage::StretchTest)?;
        self.check_hash(stage, STRETCH_FILE, &a.config_hash)?;
        Ok(a)
    }

    pub fn radius(&self, pattern: &YarnPattern, material: &MaterialSpec) -> Result<f64> {
        let base = match self.config.radius {
            Some(r) => r,
            None => estimate_yarn_radius(pattern, material)?,
        };
        Ok(base * self.config.radius_scale)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<ArtifactRecord> {
        std::fs::create_dir_all(self.output_dir())?;
        std::fs::write(self.path(name), bytes)?;
        Ok(ArtifactRecord { path: name.into(), sha256: hex::encode(Sha256::digest(bytes)) })
    }

    fn record(&self, stage: Stage, artifacts: Vec<ArtifactRecord>) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        let mut manifest = match Manifest::load(&path) {
            Ok(m) if m.config_hash == self.hash => m,
            _ => Manifest { schema_version: SCHEMA_VERSION, config_hash: self.hash.clone(), seed: self.config.seed, stages: BTreeMap::new() },
        };
        manifest.stages.insert(stage, artifacts);
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn relax(&self) -> Result<RelaxedArtifact> {
        let (pattern, material) = self.inputs()?;
        let radius = self.radius(&pattern, &material)?;
        let solver = SolverConfig { seed: self.config.seed, ..self.config.solver.clone() };
        let patch = relax_patch(&pattern, &material, radius, &solver)?;
        if !patch.report.converged {
            let r = &patch.report;
            return Err(Error::Convergence { iterations: r.iterations, displacement: r.last_displacement, residual: r.max_residual });
        }
        log::info!("relaxed {} yarns at radius {radius:.4e} m, energy {:.6e} J", patch.rest.yarns.len(), patch.energy);
        let artifact = RelaxedArtifact { schema_version: SCHEMA_VERSION, config_hash: self.hash.clone(), seed: self.config.seed, patch };
        let rec = self.write(RELAXED_FILE, serde_json::to_string_pretty(&artifact)?.as_bytes())?;
        self.record(Stage::Relax, vec![rec])?;
        Ok(artifact)
    }

    pub fn homogenize(&self) -> Result<Vec<EnergyRecord>> {
        let relaxed = self.load_relaxed(Stage::Homogenize)?;
        let samples = sample_deformation_grid(&self.config.sampling);
        let solver = SolverConfig { seed: self.config.seed, ..self.config.solver.clone() };
        let records = run_homogenization(&relaxed.patch, &samples, &solver, self.jobs)?;
        let failed: Vec<String> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.converged)
            .map(|(i, r)| format!("#{i} {}", r.sample.category))
            .collect();
        if !failed.is_empty() {
            log::warn!("{} samples did not converge and are excluded from fitting: {}", failed.len(), failed.join(", "));
        }
        let mut body = Vec::new();
        write_energy_csv(&records, &mut body)?;
        let rec = self.write(ENERGY_FILE, &with_hash_header(&self.hash, &body))?;
        self.record(Stage::Homogenize, vec![rec])?;
        Ok(records)
    }

    pub fn fit(&self) -> Result<ParamsArtifact> {
        let records = self.load_energies(Stage::Fit)?;
        let relaxed = self.load_relaxed(Stage::Fit)?;
        let thickness = shell_thickness(&relaxed.patch);
        let report = fit(&records, &self.config.fit, thickness.h)?;
        let artifact = ParamsArtifact { schema_version: SCHEMA_VERSION, config_hash: self.hash.clone(), thickness, fit: report };
        let rec = self.write(PARAMS_FILE, serde_json::to_string_pretty(&artifact)?.as_bytes())?;
        self.record(Stage::Fit, vec![rec])?;
        Ok(artifact)
    }

    pub fn stretch_test(&self) -> Result<StretchArtifact> {
        let params = *self.load_params(Stage::StretchTest)?.params();
        let curves = stretch_tests(&params, &self.config.stretch_configs())?;
        let mut records = Vec::new();
        for c in &curves {
            let mut body = Vec::new();
            c.write_csv(&mut body)?;
            records.push(self.write(&stretch_csv_name(c.cut_angle_deg), &with_hash_header(&self.hash, &body))?);
        }
        let artifact = StretchArtifact { schema_version: SCHEMA_VERSION, config_hash: self.hash.clone(), curves };
        records.insert(0, self.write(STRETCH_FILE, serde_json::to_string_pretty(&artifact)?.as_bytes())?);
        self.record(Stage::StretchTest, records)?;
        for c in artifact.curves.iter().filter(|c| c.partial) {
            let failed: Vec<String> =
                c.points.iter().filter(|p| !p.converged).map(|p| format!("{:.3}", p.strain)).collect();
            log::warn!("cut {}°: curve partial, strain points {} did not converge", c.cut_angle_deg, failed.join(", "));
        }
        Ok(artifact)
    }

    pub fn drape(&self) -> Result<DrapeArtifact> {
        let params = *self.load_params(Stage::Drape)?.params();
        let (_, material) = self.inputs()?;
        let result = drape_test(&params, &self.config.drape_config(material.rho_shell))?;
        let mut obj = Vec::new();
        write_obj(&result.positions, &result.triangles, &mut obj)?;
        let mesh = self.write(DRAPE_MESH_FILE, &with_hash_header(&self.hash, &obj))?;
        let converged = result.converged;
        let (iterations, residual) = (result.iterations, result.max_residual);
        let artifact = DrapeArtifact { schema_version: SCHEMA_VERSION, config_hash: self.hash.clone(), result };
        let meta = self.write(DRAPE_FILE, serde_json::to_string_pretty(&artifact)?.as_bytes())?;
        self.record(Stage::Drape, vec![meta, mesh])?;
        if !converged {
            return Err(Error::Convergence { iterations, displacement: f64::NAN, residual });
        }
        Ok(artifact)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Relax => self.relax().map(drop),
            Stage::Homogenize => self.homogenize().map(drop),
            Stage::Fit => self.fit().map(drop),
            Stage::StretchTest => self.stretch_test().map(drop),
            Stage::Drape => self.drape().map(drop),
        }
    }

    /// Run every stage in order and return the manifest.
    pub fn run_all(&self) -> Result<Manifest> {
        for stage in Stage::ALL {
            log::info!("stage {stage}");
            self.run_stage(stage)?;
        }
        Manifest::load(&self.path(MANIFEST_FILE))
    }
}

/// Plot-ready CSV tables gathered from finished runs, each labelled.
pub fn export_bundle(runs: &[(String, PathBuf)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut curves = String::from("run,radius,h,cut_angle_deg,strain,force_N,compression_ratio\n");
    let mut params = String::from("run,radius,h,crimp_factor,s00,s01,s11,s22,b00,b11,b22,b01,membrane_spd\n");
    let mut energies = String::from("run,category,I11,I22,I12,II11,II22,II12,energy_density,converged\n");
    for (label, dir) in runs {
        let load = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| Error::StageDependency {
                stage: "export".into(),
                missing: dir.join(name).display().to_string(),
                reason: e.to_string(),
            })
        };
        let relaxed: RelaxedArtifact = serde_json::from_str(&load(RELAXED_FILE)?)?;
        let fitted: ParamsArtifact = serde_json::from_str(&load(PARAMS_FILE)?)?;
        let stretch: StretchArtifact = serde_json::from_str(&load(STRETCH_FILE)?)?;
        let energy_text = load(ENERGY_FILE)?;
        let (_, body) = split_hash_header(&energy_text).unwrap_or(("", &energy_text));
        let radius = relaxed.patch.radius;
        let h = fitted.thickness.h;
        for c in &stretch.curves {
            for p in c.points.iter().filter(|p| p.converged) {
                writeln!(curves, "{label},{radius:e},{h:e},{},{},{:e},{:e}", c.cut_angle_deg, p.strain, p.force, p.compression_ratio).unwrap();
            }
        }
        let g = fitted.fit.params.coefficients();
        write!(params, "{label},{radius:e},{h:e},{:e}", fitted.thickness.crimp_factor).unwrap();
        for v in g {
            write!(params, ",{v:e}").unwrap();
        }
        writeln!(params, ",{}", fitted.fit.membrane_spd).unwrap();
        for r in read_energy_csv(body.as_bytes())? {
            let (i, ii) = (r.sample.first_form, r.sample.second_form);
            writeln!(
                energies,
                "{label},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.sample.category,
                i[(0, 0)],
                i[(1, 1)],
                i[(0, 1)],
                ii[(0, 0)],
                ii[(1, 1)],
                ii[(0, 1)],
                r.energy_density,
                r.converged
            )
            .unwrap();
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, text) in [("stretch_curves.csv", curves), ("fit_params.csv", params), ("energies.csv", energies)] {
        let path = out_dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
