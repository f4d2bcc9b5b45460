//! The experiment loop: per seed, generate the stream, train the shared
//! fusion front end on the first species, extract expanded features once,
//! then march every configured learner through the species stages, scoring
//! each seen species' test split after every stage.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use hail_core::baselines::{Ewc, Finetune, GdConfig, IcarlNme, JointUpper, Lwf};
use hail_core::fusion::{train_fusion, FusionParams, GradMode, Intensity};
use hail_core::inference::GammaSchedule;
use hail_core::learner::{evaluate_accuracy, extract_stage, IncrementalLearner, StageFeatures};
use hail_core::linalg::{seeded_uniform_matrix, RidgeConfig};
use hail_core::metrics::AccuracyMatrix;
use hail_core::model::HailModel;
use hail_core::pipeline::{HailPipeline, PipelineSettings};
use hail_core::seeding::derive_seed;
use hail_core::synth::{generate, SpeciesStage};

use crate::config::{ExperimentConfig, Modality, RoutingChoice};
use crate::report::write_atomic;
use crate::{BenchError, Result};

/// One (method, seed) run's scores and retained-state size.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: String,
    pub seed: u64,
    pub matrix: AccuracyMatrix,
    pub storage_footprint: usize,
}

/// Everything a single seed produces.
pub struct SeedRun {
    pub outcomes: Vec<RunOutcome>,
    /// Trained pipelines for the hail-family methods, for checkpointing.
    pub pipelines: BTreeMap<String, HailPipeline>,
    pub fusion: FusionParams,
}

/// Zeroes the stream the configuration disables, in place. Fusion and the
/// modality heads degrade to the surviving stream on their own.
pub fn apply_modality_mask(stages: &mut [SpeciesStage], modality: Modality) {
    for stage in stages {
        for split in [&mut stage.train, &mut stage.val, &mut stage.test] {
            for pair in split.iter_mut() {
                match modality {
                    Modality::Av => {}
                    Modality::Audio => pair.visual.data_mut().fill(0.0),
                    Modality::Visual => pair.audio.fill(0.0),
                }
            }
        }
    }
}

/// A fresh model with this seed's expansion maps. Called once per learner so
/// every method sees identical features while owning independent heads.
pub fn seed_model(cfg: &ExperimentConfig, seed: u64) -> Result<HailModel> {
    let k_total = cfg.synth.n_species.saturating_sub(1).max(1);
    let gamma = GammaSchedule::new(cfg.hail.gamma_max, cfg.hail.gamma_min, k_total)?;
    Ok(HailModel::new(
        cfg.synth.d,
        cfg.hail.expansion_ratio,
        cfg.hail.modality_ratio,
        gamma,
        RidgeConfig { eta: cfg.hail.eta },
        derive_seed(seed, 8),
    )?)
}

/// Generates the masked stream, trains fusion on the first species' train
/// split, and extracts expanded features for every stage.
pub fn prepare_seed_data(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<SpeciesStage>, FusionParams, Vec<StageFeatures>)> {
    let mut stages = generate(&cfg.synth.to_core(seed))?;
    apply_modality_mask(&mut stages, cfg.modality);

    let start = Instant::now();
    let params = FusionParams::seeded(cfg.synth.d, derive_seed(seed, 3));
    let head = seeded_uniform_matrix(cfg.synth.d, Intensity::COUNT, 0.5, derive_seed(seed, 4));
    let (fusion, _head, _losses) = train_fusion(
        &stages[0].train,
        params,
        head,
        cfg.training.fusion_steps,
        cfg.training.fusion_lr,
        GradMode::Analytic,
        cfg.hail.lambda_sim,
    )?;
    eprintln!("[seed {seed}] fusion trained in {:?}", start.elapsed());

    let start = Instant::now();
    let probe_model = seed_model(cfg, seed)?;
    let features = stages
        .iter()
        .map(|stage| extract_stage(stage, &fusion, &probe_model))
        .collect::<hail_core::Result<Vec<_>>>()?;
    eprintln!("[seed {seed}] features extracted in {:?}", start.elapsed());
    Ok((stages, fusion, features))
}

fn gd_config(cfg: &ExperimentConfig) -> GdConfig {
    GdConfig { steps: cfg.training.head_steps, lr: cfg.training.head_lr }
}

fn build_baseline(
    name: &str,
    cfg: &ExperimentConfig,
) -> Result<Box<dyn IncrementalLearner>> {
    let gd = gd_config(cfg);
    Ok(match name {
        "finetune" => Box::new(Finetune::new(gd)?),
        "lwf" => Box::new(Lwf::new(cfg.training.lwf_lambda, cfg.training.lwf_temperature, gd)?),
        "ewc" => Box::new(Ewc::new(cfg.training.ewc_lambda, gd)?),
        "icarl_nme" => Box::new(IcarlNme::new(cfg.training.icarl_budget)?),
        "joint_upper" => Box::new(JointUpper::new(RidgeConfig { eta: cfg.hail.eta })),
        other => return Err(BenchError::UnknownMethod(other.to_string())),
    })
}

fn build_pipeline(name: &str, cfg: &ExperimentConfig, seed: u64) -> Result<HailPipeline> {
    let settings = PipelineSettings {
        routing: cfg.hail.routing.into(),
        use_prototype_augmentation: match name {
            "hail" => cfg.hail.use_prototype_augmentation,
            _ => false,
        },
        balancer_steps: cfg.training.balancer_steps,
        balancer_lr: cfg.training.balancer_lr,
    };
    let model = seed_model(cfg, seed)?;
    Ok(HailPipeline::new(model, cfg.hail.m, cfg.hail.alpha, settings, derive_seed(seed, 9))?)
}

fn partial_csv(matrix: &AccuracyMatrix, method: &str, seed: u64) -> String {
    let mut out = String::from("method,seed,stage,task,accuracy\n");
    for k in 1..=matrix.stages() {
        for j in 1..=k {
            let acc = hail_core::metrics::acc_to_f64(matrix.get(k, j).unwrap());
            out.push_str(&format!("{method},{seed},{k},{j},{acc:.6}\n"));
        }
    }
    out
}

/// Runs one learner through every stage. After stage k the learner is scored
/// on the test splits of species 1..k only. When `partial_dir` is given, the
/// accuracy rows so far are rewritten atomically after every stage.
pub fn run_stages(
    learner: &mut dyn IncrementalLearner,
    features: &[StageFeatures],
    oracle_hints: bool,
    seed: u64,
    partial_dir: Option<&Path>,
) -> Result<(AccuracyMatrix, usize)> {
    let mut matrix = AccuracyMatrix::new();
    for k in 0..features.len() {
        let start = Instant::now();
        learner.learn_species(&features[k])?;
        let mut row = Vec::with_capacity(k + 1);
        for reviewed in features.iter().take(k + 1) {
            let hint = oracle_hints.then_some(reviewed.species_id);
            row.push(evaluate_accuracy(learner, &reviewed.test, hint)?);
        }
        matrix.push_row(row)?;
        eprintln!(
            "[{} seed {seed}] stage {} learned + scored in {:?}",
            learner.name(),
            k + 1,
            start.elapsed()
        );
        if let Some(dir) = partial_dir {
            let path = dir.join(format!("{}-seed{seed}.partial.csv", learner.name()));
            write_atomic(&path, partial_csv(&matrix, learner.name(), seed).as_bytes())?;
        }
    }
    Ok((matrix, learner.retained_bytes()))
}

/// Runs every configured method on one seed's data.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, partial_dir: Option<&Path>) -> Result<SeedRun> {
    let (_stages, fusion, features) = prepare_seed_data(cfg, seed)?;
    let oracle_hints = cfg.hail.routing == RoutingChoice::Oracle;

    let mut outcomes = Vec::new();
    let mut pipelines = BTreeMap::new();
    for method in &cfg.methods {
        match method.as_str() {
            "hail" | "hail_noproto" => {
                let mut pipe = build_pipeline(method, cfg, seed)?;
                let (matrix, footprint) =
                    run_stages(&mut pipe, &features, oracle_hints, seed, partial_dir)?;
                outcomes.push(RunOutcome {
                    method: method.clone(),
                    seed,
                    matrix,
                    storage_footprint: footprint,
                });
                pipelines.insert(method.clone(), pipe);
            }
            name => {
                let mut learner = build_baseline(name, cfg)?;
                let (matrix, footprint) =
                    run_stages(learner.as_mut(), &features, oracle_hints, seed, partial_dir)?;
                outcomes.push(RunOutcome {
                    method: method.clone(),
                    seed,
                    matrix,
                    storage_footprint: footprint,
                });
            }
        }
    }
    Ok(SeedRun { outcomes, pipelines, fusion })
}

/// Full experiment: every seed, every method. Partial rows land under
/// `output_dir/partial/`, hail-family checkpoints under
/// `output_dir/checkpoints/`, and the caller is expected to follow up with
/// `report::emit_reports`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let partial_dir = cfg.output_dir.join("partial");
    std::fs::create_dir_all(&partial_dir)?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed, Some(&partial_dir))?;
        for (method, pipe) in &run.pipelines {
            let path = ckpt_dir.join(format!("{method}-seed{seed}.ckpt"));
            crate::checkpoint::save(pipe, &run.fusion, &path)?;
        }
        outcomes.extend(run.outcomes);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.methods = vec!["hail".into(), "finetune".into()];
        cfg.seeds = vec![5];
        cfg.synth.n_species = 2;
        cfg.synth.samples_per_class_train = 12;
        cfg.synth.samples_per_class_val = 3;
        cfg.synth.samples_per_class_test = 6;
        cfg.synth.d = 12;
        cfg.synth.frames = 2;
        cfg.synth.spatial = 2;
        cfg.synth.audio_noise = vec![0.3, 0.3];
        cfg.synth.visual_noise = vec![0.3, 0.3];
        cfg.hail.expansion_ratio = 4;
        cfg.training.fusion_steps = 5;
        cfg.training.head_steps = 30;
        cfg
    }

    #[test]
    fn masking_zeroes_exactly_one_stream() {
        let cfg = tiny_config();
        let mut stages = generate(&cfg.synth.to_core(1)).unwrap();
        apply_modality_mask(&mut stages, Modality::Audio);
        for pair in &stages[0].train {
            assert!(pair.visual.data().iter().all(|v| *v == 0.0));
            assert!(pair.audio.iter().any(|a| *a != 0.0));
        }
        let mut stages = generate(&cfg.synth.to_core(1)).unwrap();
        apply_modality_mask(&mut stages, Modality::Visual);
        for pair in &stages[0].train {
            assert!(pair.audio.iter().all(|a| *a == 0.0));
            assert!(pair.visual.data().iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn seed_runs_fill_triangular_matrices() {
        let cfg = tiny_config();
        let run = run_seed(&cfg, 5, None).unwrap();
        assert_eq!(run.outcomes.len(), 2);
        for outcome in &run.outcomes {
            assert_eq!(outcome.matrix.stages(), 2);
            assert!(outcome.storage_footprint > 0);
        }
        assert!(run.pipelines.contains_key("hail"));
    }

    #[test]
    fn unknown_method_fails_before_any_work() {
        let mut cfg = tiny_config();
        cfg.methods = vec!["replay_buffer".into()];
        assert!(matches!(run_experiment(&cfg), Err(BenchError::UnknownMethod(_))));
    }

    #[test]
    fn identical_seeds_reproduce_identical_matrices() {
        let cfg = tiny_config();
        let a = run_seed(&cfg, 5, None).unwrap();
        let b = run_seed(&cfg, 5, None).unwrap();
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(x.method, y.method);
            for k in 1..=x.matrix.stages() {
                for j in 1..=k {
                    assert_eq!(x.matrix.get(k, j).unwrap(), y.matrix.get(k, j).unwrap());
                }
            }
        }
    }
}
