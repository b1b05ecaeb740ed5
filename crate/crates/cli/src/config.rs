//! Pipeline configuration: defaults, TOML file, command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttvbake_core::bake::BakeConfig;
use ttvbake_core::camera::{FovSetting, OrbitParams, Resolution, DEFAULT_FOV_MARGIN, DEFAULT_FRAMES};
use ttvbake_core::fusion::{
    BakePlan, ConfidenceUpdate, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_COVERAGE_TARGET, DEFAULT_MAX_ITERATIONS,
};
use ttvbake_core::mesh::rotation_grid;

/// Bad configuration or command-line input; maps to exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Orbit radius.
    pub r: f64,
    /// Camera height.
    pub z: f64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Fixed vertical field of view in radians; automatic when absent.
    pub fov_y: Option<f64>,
    pub fov_margin: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let orbit = OrbitParams::default();
        TrajectoryConfig {
            r: orbit.radius,
            z: orbit.height,
            frames: DEFAULT_FRAMES,
            width: orbit.resolution.width,
            height: orbit.resolution.height,
            fov_y: None,
            fov_margin: DEFAULT_FOV_MARGIN,
        }
    }
}

impl TrajectoryConfig {
    pub fn orbit(&self) -> OrbitParams {
        self.orbit_at(self.r, self.z)
    }

    pub fn orbit_at(&self, r: f64, z: f64) -> OrbitParams {
        OrbitParams {
            radius: r,
            height: z,
            frames: self.frames,
            resolution: Resolution::new(self.width, self.height),
            fov: match self.fov_y {
                Some(fov_y) => FovSetting::Fixed { fov_y },
                None => FovSetting::Auto { margin: self.fov_margin },
            },
            bound_radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BakeSettings {
    pub atlas_width: usize,
    pub atlas_height: usize,
    pub penalty_scale: f64,
    pub confidence_threshold: f64,
}

impl Default for BakeSettings {
    fn default() -> Self {
        let b = BakeConfig::default();
        BakeSettings {
            atlas_width: b.atlas_width,
            atlas_height: b.atlas_height,
            penalty_scale: b.penalty_scale,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl BakeSettings {
    pub fn bake_config(&self) -> BakeConfig {
        BakeConfig {
            atlas_width: self.atlas_width,
            atlas_height: self.atlas_height,
            penalty_scale: self.penalty_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub coverage_target: f64,
    pub max_iterations: usize,
    pub yaw_degrees: Vec<f64>,
    pub pitch_degrees: Vec<f64>,
    pub confidence_update: ConfidenceUpdate,
    /// Plan file from `ttvbake plan`; replaces the settings above.
    pub plan: Option<PathBuf>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            coverage_target: DEFAULT_COVERAGE_TARGET,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            yaw_degrees: (0..8).map(|k| 45.0 * k as f64).collect(),
            pitch_degrees: vec![-45.0, 0.0, 45.0],
            confidence_update: ConfidenceUpdate::default(),
            plan: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Renders a known texture; needs `generator.texture`.
    #[default]
    Oracle,
    /// Directory exchange with an external process.
    Fs,
    /// Job server over HTTP.
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Ground-truth texture for the oracle: an atlas directory or an image.
    pub texture: Option<PathBuf>,
    pub exchange: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_seconds: f64,
    pub prompt: String,
    pub reference_image: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Oracle,
            texture: None,
            exchange: None,
            endpoint: None,
            timeout_seconds: 1800.0,
            prompt: String::new(),
            reference_image: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub r_range: [f64; 2],
    pub z_range: [f64; 2],
    pub random_rotation: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            r_range: [2.0, 3.0],
            z_range: [0.0, 1.5],
            random_rotation: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub trajectory: TrajectoryConfig,
    pub bake: BakeSettings,
    pub refine: RefineConfig,
    pub generator: GeneratorConfig,
    pub dataset: DatasetConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        Err(usage(msg()))
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.mesh);
        resolve(base, &mut cfg.output);
        resolve(base, &mut cfg.refine.plan);
        resolve(base, &mut cfg.generator.texture);
        resolve(base, &mut cfg.generator.exchange);
        resolve(base, &mut cfg.generator.reference_image);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn require_mesh(&self) -> anyhow::Result<&Path> {
        let mesh = self.mesh.as_deref().ok_or_else(|| usage("no mesh given (--mesh or `mesh` in the config)"))?;
        check(mesh.is_file(), || format!("mesh {} does not exist", mesh.display()))?;
        Ok(mesh)
    }

    pub fn require_output(&self) -> anyhow::Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| usage("no output directory given (--output or `output` in the config)"))
    }

    /// Range checks on every numeric field.
    pub fn validate(&self) -> anyhow::Result<()> {
        let t = &self.trajectory;
        check(t.r.is_finite() && t.r > 0.0, || format!("trajectory.r must be positive, got {}", t.r))?;
        check(t.z.is_finite(), || "trajectory.z must be finite".into())?;
        check((1..=10_000).contains(&t.frames), || format!("trajectory.frames must be in 1..=10000, got {}", t.frames))?;
        check(
            (1..=8192).contains(&t.width) && (1..=8192).contains(&t.height),
            || format!("frame resolution {}x{} outside 1..=8192", t.width, t.height),
        )?;
        check(t.fov_margin.is_finite() && t.fov_margin >= 1.0, || {
            format!("trajectory.fov_margin must be at least 1, got {}", t.fov_margin)
        })?;
        if let Some(f) = t.fov_y {
            check(f > 0.0 && f < std::f64::consts::PI, || format!("trajectory.fov_y must be in (0, pi), got {f}"))?;
        }
        t.orbit().build().map_err(|e| usage(format!("trajectory: {e}")))?;

        let b = &self.bake;
        check(
            (1..=16_384).contains(&b.atlas_width) && (1..=16_384).contains(&b.atlas_height),
            || format!("atlas resolution {}x{} outside 1..=16384", b.atlas_width, b.atlas_height),
        )?;
        check(b.penalty_scale.is_finite() && b.penalty_scale >= 0.0, || {
            format!("bake.penalty_scale must be non-negative, got {}", b.penalty_scale)
        })?;
        check(b.confidence_threshold.is_finite() && b.confidence_threshold > 0.0, || {
            format!("bake.confidence_threshold must be positive, got {}", b.confidence_threshold)
        })?;

        let r = &self.refine;
        check(r.coverage_target > 0.0 && r.coverage_target <= 1.0, || {
            format!("refine.coverage_target must be in (0, 1], got {}", r.coverage_target)
        })?;
        check(r.max_iterations >= 1, || "refine.max_iterations must be at least 1".into())?;
        check(!r.yaw_degrees.is_empty() && !r.pitch_degrees.is_empty(), || {
            "rotation candidate grid is empty".into()
        })?;
        check(
            r.yaw_degrees.iter().chain(&r.pitch_degrees).all(|a| a.is_finite()),
            || "rotation candidate angles must be finite".into(),
        )?;
        if let Some(p) = &r.plan {
            check(p.is_file(), || format!("plan file {} does not exist", p.display()))?;
        }

        let g = &self.generator;
        check(g.timeout_seconds.is_finite() && g.timeout_seconds > 0.0, || {
            format!("generator.timeout_seconds must be positive, got {}", g.timeout_seconds)
        })?;

        let d = &self.dataset;
        check(d.r_range[0] <= d.r_range[1] && d.z_range[0] <= d.z_range[1], || {
            "dataset ranges must be ordered [low, high]".into()
        })?;
        check(d.r_range[0] > 0.0 && d.z_range.iter().all(|z| z.is_finite()), || {
            "dataset.r_range must be positive and z_range finite".into()
        })?;
        Ok(())
    }

    /// The progressive-loop plan: the plan file when configured, otherwise
    /// assembled from the trajectory and refine sections.
    pub fn bake_plan(&self) -> anyhow::Result<BakePlan> {
        if let Some(path) = &self.refine.plan {
            let plan = BakePlan::load(path).map_err(|e| usage(e.to_string()))?;
            plan.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
            return Ok(plan);
        }
        Ok(BakePlan {
            orbit: self.trajectory.orbit(),
            coverage_target: self.refine.coverage_target,
            confidence_threshold: self.bake.confidence_threshold,
            max_iterations: self.refine.max_iterations,
            confidence_update: self.refine.confidence_update,
            candidates: rotation_grid(&self.refine.yaw_degrees, &self.refine.pitch_degrees),
            passes: Vec::new(),
        })
    }
}

/// Command-line overrides; every flag wins over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    /// Input mesh (OBJ, glTF or GLB).
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Output directory (a file for `plan`).
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Orbit radius.
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    /// Camera height.
    #[arg(long = "camera-height", global = true)]
    pub camera_height: Option<f64>,
    /// Frames per orbit.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    /// Square frame resolution in pixels.
    #[arg(long, global = true)]
    pub resolution: Option<u32>,
    /// Vertical field of view in radians, or `auto`.
    #[arg(long, global = true)]
    pub fov: Option<String>,
    /// Square atlas resolution in texels.
    #[arg(long = "atlas-resolution", global = true)]
    pub atlas_resolution: Option<usize>,
    /// Gain on the depth-edge penalty.
    #[arg(long = "penalty-scale", global = true)]
    pub penalty_scale: Option<f64>,
    /// Confidence a texel needs to count as known.
    #[arg(long = "confidence-threshold", global = true)]
    pub confidence_threshold: Option<f64>,
    /// Stop the progressive loop at this coverage.
    #[arg(long = "coverage-target", global = true)]
    pub coverage_target: Option<f64>,
    /// Generator calls allowed in the progressive loop.
    #[arg(long = "max-iterations", global = true)]
    pub max_iterations: Option<usize>,
    /// Appearance generator.
    #[arg(long, global = true, value_enum)]
    pub generator: Option<GeneratorKind>,
    /// Ground-truth texture for the oracle generator.
    #[arg(long, global = true)]
    pub texture: Option<PathBuf>,
    /// Exchange directory for the fs generator.
    #[arg(long, global = true)]
    pub exchange: Option<PathBuf>,
    /// Base URL of the http generator.
    #[arg(long, global = true, env = "TTVBAKE_GENERATOR_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Generator timeout in seconds.
    #[arg(long, global = true, env = "TTVBAKE_GENERATOR_TIMEOUT")]
    pub timeout: Option<f64>,
    /// Text prompt passed to the generator.
    #[arg(long, global = true)]
    pub prompt: Option<String>,
    /// Bake plan file; replaces the refine settings.
    #[arg(long, global = true)]
    pub plan: Option<PathBuf>,
}

impl Overrides {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut PipelineConfig) -> anyhow::Result<()> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if self.mesh.is_some() {
            cfg.mesh.clone_from(&self.mesh);
        }
        if self.output.is_some() {
            cfg.output.clone_from(&self.output);
        }
        set(&mut cfg.seed, &self.seed);
        let t = &mut cfg.trajectory;
        set(&mut t.r, &self.radius);
        set(&mut t.z, &self.camera_height);
        set(&mut t.frames, &self.frames);
        if let Some(res) = self.resolution {
            t.width = res;
            t.height = res;
        }
        match self.fov.as_deref() {
            None => {}
            Some("auto") => t.fov_y = None,
            Some(s) => {
                t.fov_y = Some(s.parse().map_err(|_| usage(format!("--fov expects radians or `auto`, got {s:?}")))?)
            }
        }
        if let Some(res) = self.atlas_resolution {
            cfg.bake.atlas_width = res;
            cfg.bake.atlas_height = res;
        }
        set(&mut cfg.bake.penalty_scale, &self.penalty_scale);
        set(&mut cfg.bake.confidence_threshold, &self.confidence_threshold);
        set(&mut cfg.refine.coverage_target, &self.coverage_target);
        set(&mut cfg.refine.max_iterations, &self.max_iterations);
        if self.plan.is_some() {
            cfg.refine.plan.clone_from(&self.plan);
        }
        let g = &mut cfg.generator;
        set(&mut g.kind, &self.generator);
        if self.texture.is_some() {
            g.texture.clone_from(&self.texture);
        }
        if self.exchange.is_some() {
            g.exchange.clone_from(&self.exchange);
        }
        if self.endpoint.is_some() {
            g.endpoint.clone_from(&self.endpoint);
        }
        set(&mut g.timeout_seconds, &self.timeout);
        set(&mut g.prompt, &self.prompt);
        Ok(())
    }
}
