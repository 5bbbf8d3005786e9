use std::path::PathBuf;

use clap::Args;
use gmop::model::fingerprint;
use gmop::scene::{generate_synthetic, save_scenes, GeneratorConfig, Preset, Template};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{write_manifest, MANIFEST};
use crate::config::ConfigFile;
use crate::error::CliError;

pub const SCENES: &str = "scenes.jsonl";

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Output directory for scenes.jsonl and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated templates, or "balanced" for the four road templates
    #[arg(long)]
    pub template: Option<String>,
    /// Number of scenes
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub min_agents: Option<usize>,
    #[arg(long)]
    pub max_agents: Option<usize>,
    /// Positional noise standard deviation in meters
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub headway_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub out: PathBuf,
    pub template: String,
    pub n: usize,
    pub seed: u64,
    pub preset: Preset,
    pub min_agents: usize,
    pub max_agents: usize,
    pub noise_std: f64,
    pub headway_s: f64,
    pub speed_jitter: f64,
    pub future_speed_change: f64,
    pub random_pose: bool,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            out: PathBuf::from("data"),
            template: Template::CrossingIntersection.name().to_string(),
            n: 200,
            seed: 0,
            preset: Preset::InteractionLike,
            min_agents: g.min_agents,
            max_agents: g.max_agents,
            noise_std: g.noise_std,
            headway_s: g.headway_s,
            speed_jitter: g.speed_jitter,
            future_speed_change: g.future_speed_change,
            random_pose: g.random_pose,
        }
    }
}

pub fn parse_templates(spec: &str) -> Result<Vec<Template>, CliError> {
    if spec.trim() == "balanced" {
        return Ok(vec![
            Template::CrossingIntersection,
            Template::Merge,
            Template::RoundaboutEntry,
            Template::IndependentLanes,
        ]);
    }
    let names: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(CliError::Usage("no template given".into()));
    }
    names
        .into_iter()
        .map(|n| {
            n.parse::<Template>().map_err(|_| {
                let known: Vec<&str> = Template::ALL.iter().map(|t| t.name()).collect();
                CliError::Usage(format!("unknown template {n:?} (known: {}, balanced)", known.join(", ")))
            })
        })
        .collect()
}

impl GenerateSettings {
    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        let templates = parse_templates(&self.template)?;
        let cfg = GeneratorConfig {
            templates: templates.into_iter().map(|t| (t, 1.0)).collect(),
            min_agents: self.min_agents,
            max_agents: self.max_agents,
            noise_std: self.noise_std,
            headway_s: self.headway_s,
            speed_jitter: self.speed_jitter,
            future_speed_change: self.future_speed_change,
            random_pose: self.random_pose,
            ..GeneratorConfig::default()
        }
        .with_preset(self.preset);
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(args: &GenerateArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: GenerateSettings = file.resolve("generate", args)?;
    if settings.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let generator = settings.generator()?;
    let scenes = generate_synthetic(&generator, settings.n, settings.seed)?;
    let path = settings.out.join(SCENES);
    std::fs::create_dir_all(&settings.out)?;
    save_scenes(&scenes, &path)?;
    let mut mix = serde_json::Map::new();
    for s in &scenes {
        let name = s.annotations.as_ref().map_or("unknown", |a| a.template.as_str());
        let count = mix.get(name).and_then(|v| v.as_u64()).unwrap_or(0);
        mix.insert(name.to_string(), json!(count + 1));
    }
    let bytes = std::fs::read(&path)?;
    write_manifest(
        &settings.out.join(MANIFEST),
        "generate",
        &settings,
        json!({
            "scenes": SCENES,
            "count": scenes.len(),
            "seed": settings.seed,
            "n_past": generator.n_past,
            "n_future": generator.n_future,
            "sampling_hz": generator.sampling_hz,
            "template_mix": mix,
            "fingerprint": format!("{:016x}", fingerprint(&bytes)),
        }),
    )?;
    println!(
        "wrote {} scenes to {} (n_past {}, n_future {}, {} Hz)",
        scenes.len(),
        path.display(),
        generator.n_past,
        generator.n_future,
        generator.sampling_hz
    );
    Ok(())
}
