//! Experiment configuration: a JSON file where every field is optional and
//! the defaults reproduce the standard benchmark (6 species, 4 intensities,
//! 200/30/60 samples per class, eta 1.0, m 5, alpha 0.7, gamma 0.8 -> 0.3,
//! tenfold fused expansion).

use std::fs;
use std::path::{Path, PathBuf};

use hail_core::inference::RoutingMode;
use hail_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

pub const KNOWN_METHODS: [&str; 7] =
    ["hail", "hail_noproto", "finetune", "lwf", "ewc", "icarl_nme", "joint_upper"];

/// Which raw modality streams reach fusion; the disabled one is zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Av,
    Audio,
    Visual,
}

impl Default for Modality {
    fn default() -> Self {
        Modality::Av
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingChoice {
    Prototype,
    Oracle,
}

impl From<RoutingChoice> for RoutingMode {
    fn from(value: RoutingChoice) -> Self {
        match value {
            RoutingChoice::Prototype => RoutingMode::Prototype,
            RoutingChoice::Oracle => RoutingMode::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_species: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_val: usize,
    pub samples_per_class_test: usize,
    pub d: usize,
    pub frames: usize,
    pub spatial: usize,
    pub audio_noise: Vec<f64>,
    pub visual_noise: Vec<f64>,
    pub species_rotation_strength: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let base = SynthConfig::default();
        SynthSection {
            n_species: base.n_species,
            samples_per_class_train: base.samples_per_class_train,
            samples_per_class_val: base.samples_per_class_val,
            samples_per_class_test: base.samples_per_class_test,
            d: base.d,
            frames: base.frames,
            spatial: base.spatial,
            audio_noise: base.audio_noise,
            visual_noise: base.visual_noise,
            species_rotation_strength: base.species_rotation_strength,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_species: self.n_species,
            samples_per_class_train: self.samples_per_class_train,
            samples_per_class_val: self.samples_per_class_val,
            samples_per_class_test: self.samples_per_class_test,
            d: self.d,
            frames: self.frames,
            spatial: self.spatial,
            audio_noise: self.audio_noise.clone(),
            visual_noise: self.visual_noise.clone(),
            species_rotation_strength: self.species_rotation_strength,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HailSection {
    pub eta: f64,
    pub m: usize,
    pub alpha: f64,
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub expansion_ratio: usize,
    pub modality_ratio: usize,
    pub lambda_sim: f64,
    pub routing: RoutingChoice,
    pub use_prototype_augmentation: bool,
}

impl Default for HailSection {
    fn default() -> Self {
        HailSection {
            eta: 1.0,
            m: 5,
            alpha: 0.7,
            gamma_max: 0.8,
            gamma_min: 0.3,
            expansion_ratio: 10,
            modality_ratio: 1,
            lambda_sim: 0.1,
            routing: RoutingChoice::Prototype,
            use_prototype_augmentation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub fusion_steps: usize,
    pub fusion_lr: f64,
    pub balancer_steps: usize,
    pub balancer_lr: f64,
    pub head_steps: usize,
    pub head_lr: f64,
    pub lwf_lambda: f64,
    pub lwf_temperature: f64,
    pub ewc_lambda: f64,
    pub icarl_budget: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            fusion_steps: 60,
            fusion_lr: 0.05,
            balancer_steps: 80,
            balancer_lr: 0.2,
            head_steps: 150,
            head_lr: 0.5,
            lwf_lambda: 0.5,
            lwf_temperature: 2.0,
            ewc_lambda: 50.0,
            icarl_budget: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub modality: Modality,
    pub synth: SynthSection,
    pub hail: HailSection,
    pub training: TrainingSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![
                "hail".into(),
                "finetune".into(),
                "lwf".into(),
                "ewc".into(),
                "icarl_nme".into(),
                "joint_upper".into(),
            ],
            seeds: vec![1, 2, 3],
            modality: Modality::Av,
            synth: SynthSection::default(),
            hail: HailSection::default(),
            training: TrainingSection::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("methods list is empty".into()));
        }
        for m in &self.methods {
            if !KNOWN_METHODS.contains(&m.as_str()) {
                return Err(BenchError::UnknownMethod(m.clone()));
            }
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("seeds list is empty".into()));
        }
        // Synthetic parameters are validated once more at generation time;
        // catching them here keeps failures ahead of any work.
        self.synth.to_core(0).validate().map_err(BenchError::Core)?;
        if !(0.0..=1.0).contains(&self.hail.alpha) {
            return Err(BenchError::Config(format!("alpha {} outside [0, 1]", self.hail.alpha)));
        }
        if self.hail.m == 0 {
            return Err(BenchError::Config("m must be >= 1".into()));
        }
        if self.hail.expansion_ratio == 0 || self.hail.modality_ratio == 0 {
            return Err(BenchError::Config("expansion ratios must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_the_full_default_config() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.hail.eta, 1.0);
        assert_eq!(cfg.hail.m, 5);
        assert_eq!(cfg.hail.alpha, 0.7);
        assert_eq!(cfg.hail.gamma_max, 0.8);
        assert_eq!(cfg.hail.gamma_min, 0.3);
        assert_eq!(cfg.hail.expansion_ratio, 10);
        assert_eq!(cfg.synth.n_species, 6);
        assert_eq!(cfg.synth.samples_per_class_train, 200);
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"methods": ["hail"], "hail": {"m": 1}, "synth": {"n_species": 2, "audio_noise": [0.1, 0.1], "visual_noise": [0.2, 0.2]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec!["hail"]);
        assert_eq!(cfg.hail.m, 1);
        assert_eq!(cfg.hail.eta, 1.0);
        assert_eq!(cfg.synth.n_species, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_method_and_unknown_key_are_rejected() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"methods": ["gradient_episodic_memory"]}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(BenchError::UnknownMethod(_))));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"mehtods": []}"#).is_err());
    }
}
