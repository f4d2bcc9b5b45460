//! The full hierarchical learner: one struct that runs the per-species
//! stage flow (general head update, species heads, modality gate, prototype
//! bank maintenance) and answers queries through the blended two-level
//! read-out. Implements the same learner contract as the baselines so the
//! harness can treat everything uniformly.

use crate::error::{CoreError, Result};
use crate::inference::{predict_expanded, train_balancer, Prediction, RoutingMode};
use crate::learner::{IncrementalLearner, SampleView, StageFeatures};
use crate::model::{one_hot, HailModel};
use crate::prototype::PrototypeBank;
use crate::seeding::derive_seed;

/// Knobs that belong to the stage loop rather than the model itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineSettings {
    pub routing: RoutingMode,
    /// When false, the general head is refit on each stage's own data only;
    /// the ablation that shows why the prototype-augmented update exists.
    pub use_prototype_augmentation: bool,
    pub balancer_steps: usize,
    pub balancer_lr: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            routing: RoutingMode::Prototype,
            use_prototype_augmentation: true,
            balancer_steps: 80,
            balancer_lr: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HailPipeline {
    model: HailModel,
    bank: PrototypeBank,
    settings: PipelineSettings,
    stages_learned: usize,
    seed: u64,
    last_lambda_p: Option<f64>,
}

impl HailPipeline {
    pub fn new(
        model: HailModel,
        m: usize,
        alpha: f64,
        settings: PipelineSettings,
        seed: u64,
    ) -> Result<Self> {
        Ok(HailPipeline {
            model,
            bank: PrototypeBank::new(m, alpha)?,
            settings,
            stages_learned: 0,
            seed,
            last_lambda_p: None,
        })
    }

    /// Reassembles a pipeline from checkpointed state.
    pub fn from_parts(
        model: HailModel,
        bank: PrototypeBank,
        settings: PipelineSettings,
        stages_learned: usize,
        seed: u64,
    ) -> Self {
        HailPipeline { model, bank, settings, stages_learned, seed, last_lambda_p: None }
    }

    pub fn model(&self) -> &HailModel {
        &self.model
    }

    pub fn bank(&self) -> &PrototypeBank {
        &self.bank
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn stages_learned(&self) -> usize {
        self.stages_learned
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mixing weight chosen by the most recent augmented update, if any.
    pub fn last_lambda_p(&self) -> Option<f64> {
        self.last_lambda_p
    }

    /// Full prediction record for one sample's precomputed features.
    pub fn predict_sample(&self, sample: SampleView<'_>) -> Result<Prediction> {
        if self.stages_learned == 0 {
            return Err(CoreError::NoSpeciesLearned);
        }
        predict_expanded(
            &self.model,
            &self.bank,
            sample.fused,
            sample.audio,
            sample.visual,
            self.stages_learned - 1,
            self.settings.routing,
            sample.species_hint,
        )
    }
}

impl IncrementalLearner for HailPipeline {
    fn name(&self) -> &'static str {
        if self.settings.use_prototype_augmentation {
            "hail"
        } else {
            "hail_noproto"
        }
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        let train = &stage.train;
        let y = one_hot(&train.labels);
        let stage_idx = self.stages_learned as u64;

        // General intensity head: closed-form first fit, then the
        // prototype-augmented re-solve (or a plain refit for the ablation).
        if self.model.w_av.is_none() {
            self.model.fit_general(&train.fused, &y)?;
            self.last_lambda_p = None;
        } else if self.settings.use_prototype_augmentation {
            self.last_lambda_p = Some(self.model.incremental_update(&train.fused, &y, &self.bank)?);
        } else {
            self.model.fit_general(&train.fused, &y)?;
            self.last_lambda_p = None;
        }

        // Species-specific modality heads and their balancing gate.
        self.model.fit_species(stage.species_id, &train.audio, &train.visual, &y)?;
        let heads = self.model.species_heads[&stage.species_id].clone();
        train_balancer(
            &mut self.model.balancer,
            stage.species_id,
            &train.audio,
            &train.visual,
            &train.labels,
            &heads.w_audio,
            &heads.w_visual,
            self.settings.balancer_steps,
            self.settings.balancer_lr,
        )?;

        // Prototype bank: the general tier is clustered once and then EMA
        // blended; the species tier is built once per species and frozen.
        if self.bank.has_general() {
            self.bank.ema_update(
                &train.fused,
                &train.labels,
                derive_seed(self.seed, 100 + stage_idx),
            )?;
        } else {
            self.bank.build_general(&train.fused, &train.labels, derive_seed(self.seed, 100))?;
        }
        self.bank.build_species(
            stage.species_id,
            &train.audio,
            &train.visual,
            &train.labels,
            derive_seed(self.seed, 200 + stage_idx),
        )?;

        self.stages_learned += 1;
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        Ok(self.predict_sample(sample)?.probs)
    }

    fn retained_bytes(&self) -> usize {
        self.model.byte_len() + self.bank.byte_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionParams;
    use crate::inference::GammaSchedule;
    use crate::learner::extract_stage;
    use crate::linalg::{ridge_solve, Matrix, RidgeConfig};
    use crate::synth::{generate, SynthConfig};

    fn tiny_setup() -> (Vec<crate::synth::SpeciesStage>, FusionParams, HailModel) {
        let cfg = SynthConfig {
            n_species: 2,
            samples_per_class_train: 10,
            samples_per_class_val: 3,
            samples_per_class_test: 5,
            d: 12,
            frames: 2,
            spatial: 2,
            audio_noise: vec![0.2, 0.2],
            visual_noise: vec![0.2, 0.2],
            species_rotation_strength: 0.5,
            seed: 9,
        };
        let stages = generate(&cfg).unwrap();
        let fusion = FusionParams::seeded(cfg.d, 77);
        let gamma = GammaSchedule::new(0.8, 0.3, 1).unwrap();
        let model = HailModel::new(cfg.d, 4, 1, gamma, RidgeConfig::default(), 5).unwrap();
        (stages, fusion, model)
    }

    #[test]
    fn stage_flow_populates_every_tier() {
        let (stages, fusion, model) = tiny_setup();
        let mut pipe =
            HailPipeline::new(model, 3, 0.7, PipelineSettings::default(), 11).unwrap();
        assert!(pipe.predict_sample_err_is_unlearned());

        for stage in &stages {
            let feats = extract_stage(stage, &fusion, pipe.model()).unwrap();
            pipe.learn_species(&feats).unwrap();
        }
        assert_eq!(pipe.stages_learned(), 2);
        assert!(pipe.model().w_av.is_some());
        assert_eq!(pipe.model().species_order, vec![0, 1]);
        assert_eq!(pipe.bank().species_ids(), vec![0, 1]);
        assert!(pipe.last_lambda_p().is_some());

        let feats = extract_stage(&stages[0], &fusion, pipe.model()).unwrap();
        let view = SampleView {
            fused: feats.test.fused.row(0),
            audio: feats.test.audio.row(0),
            visual: feats.test.visual.row(0),
            species_hint: None,
        };
        let probs = pipe.predict(view).unwrap();
        assert_eq!(probs.len(), 4);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    impl HailPipeline {
        fn predict_sample_err_is_unlearned(&self) -> bool {
            let view = SampleView {
                fused: &[0.0],
                audio: &[0.0],
                visual: &[0.0],
                species_hint: None,
            };
            matches!(self.predict_sample(view), Err(CoreError::NoSpeciesLearned))
        }
    }

    #[test]
    fn ablation_refits_on_the_new_stage_alone() {
        let (stages, fusion, model) = tiny_setup();
        let settings =
            PipelineSettings { use_prototype_augmentation: false, ..PipelineSettings::default() };
        let mut plain = HailPipeline::new(model.clone(), 3, 0.7, settings, 11).unwrap();
        let mut full =
            HailPipeline::new(model, 3, 0.7, PipelineSettings::default(), 11).unwrap();
        assert_eq!(plain.name(), "hail_noproto");
        assert_eq!(full.name(), "hail");

        let mut second_stage: Option<Matrix> = None;
        for stage in &stages {
            let feats = extract_stage(stage, &fusion, plain.model()).unwrap();
            plain.learn_species(&feats).unwrap();
            full.learn_species(&feats).unwrap();
            if stage.species_id == 1 {
                second_stage =
                    Some(ridge_solve(&feats.train.fused, &one_hot(&feats.train.labels), RidgeConfig::default()).unwrap());
            }
        }
        let direct = second_stage.unwrap();
        assert_eq!(plain.model().w_av.as_ref().unwrap(), &direct);
        assert_ne!(full.model().w_av.as_ref().unwrap(), &direct);
        assert!(plain.last_lambda_p().is_none());
    }

    #[test]
    fn matches_the_sample_level_prediction_path() {
        let (stages, fusion, model) = tiny_setup();
        let mut pipe =
            HailPipeline::new(model, 3, 0.7, PipelineSettings::default(), 11).unwrap();
        for stage in &stages {
            let feats = extract_stage(stage, &fusion, pipe.model()).unwrap();
            pipe.learn_species(&feats).unwrap();
        }

        let pair = &stages[1].test[2];
        let feats = extract_stage(&stages[1], &fusion, pipe.model()).unwrap();
        let view = SampleView {
            fused: feats.test.fused.row(2),
            audio: feats.test.audio.row(2),
            visual: feats.test.visual.row(2),
            species_hint: None,
        };
        let from_views = pipe.predict_sample(view).unwrap();
        let from_pair = crate::inference::predict(
            pipe.model(),
            pipe.bank(),
            pair,
            &fusion,
            pipe.stages_learned() - 1,
            RoutingMode::Prototype,
            None,
        )
        .unwrap();
        assert_eq!(from_views.probs, from_pair.probs);
        assert_eq!(from_views.routed_species, from_pair.routed_species);
    }

    #[test]
    fn oracle_routing_insists_on_a_hint() {
        let (stages, fusion, model) = tiny_setup();
        let settings =
            PipelineSettings { routing: RoutingMode::Oracle, ..PipelineSettings::default() };
        let mut pipe = HailPipeline::new(model, 3, 0.7, settings, 11).unwrap();
        let feats = extract_stage(&stages[0], &fusion, pipe.model()).unwrap();
        pipe.learn_species(&feats).unwrap();

        let mut view = SampleView {
            fused: feats.test.fused.row(0),
            audio: feats.test.audio.row(0),
            visual: feats.test.visual.row(0),
            species_hint: None,
        };
        assert!(pipe.predict(view).is_err());
        view.species_hint = Some(0);
        assert!(pipe.predict(view).is_ok());
    }

    #[test]
    fn retained_state_ignores_sample_count() {
        let (stages, fusion, model) = tiny_setup();
        let bigger = {
            let cfg = SynthConfig {
                n_species: 2,
                samples_per_class_train: 40,
                samples_per_class_val: 3,
                samples_per_class_test: 5,
                d: 12,
                frames: 2,
                spatial: 2,
                audio_noise: vec![0.2, 0.2],
                visual_noise: vec![0.2, 0.2],
                species_rotation_strength: 0.5,
                seed: 10,
            };
            generate(&cfg).unwrap()
        };
        let mut small_pipe =
            HailPipeline::new(model.clone(), 3, 0.7, PipelineSettings::default(), 11).unwrap();
        let mut big_pipe =
            HailPipeline::new(model, 3, 0.7, PipelineSettings::default(), 11).unwrap();
        for (s, b) in stages.iter().zip(&bigger) {
            let fs = extract_stage(s, &fusion, small_pipe.model()).unwrap();
            small_pipe.learn_species(&fs).unwrap();
            let fb = extract_stage(b, &fusion, big_pipe.model()).unwrap();
            big_pipe.learn_species(&fb).unwrap();
        }
        assert_eq!(small_pipe.retained_bytes(), big_pipe.retained_bytes());
    }
}
