//! Binary checkpoints for trained pipelines. The format stores every matrix
//! as raw little-endian f64 bits, so a saved and reloaded pipeline predicts
//! bit-identically. Expansion maps are stored as (dims, seed) descriptors and
//! regenerated on load, which keeps checkpoints small.

use std::collections::BTreeMap;
use std::path::Path;

use hail_core::fusion::{FusionParams, Intensity};
use hail_core::inference::{GammaSchedule, ModalityBalancer, RoutingMode};
use hail_core::linalg::{Matrix, RidgeConfig};
use hail_core::model::{HailModel, SpeciesHeads};
use hail_core::pipeline::{HailPipeline, PipelineSettings};
use hail_core::prototype::{PrototypeBank, SpeciesPrototypes};

use crate::report::write_atomic;
use crate::{BenchError, Result};

const MAGIC: &[u8; 4] = b"HAIL";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> BenchError {
    BenchError::BadCheckpoint(msg.into())
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    push_u64(buf, m.rows() as u64);
    push_u64(buf, m.cols() as u64);
    for v in m.data() {
        push_f64(buf, *v);
    }
}

/// A prototype set: count, shared dimension, then the raw vectors.
fn push_protos(buf: &mut Vec<u8>, protos: &[Vec<f64>]) {
    push_u64(buf, protos.len() as u64);
    push_u64(buf, protos.first().map_or(0, Vec::len) as u64);
    for p in protos {
        for v in p {
            push_f64(buf, *v);
        }
    }
}

pub fn save(pipe: &HailPipeline, fusion: &FusionParams, path: &Path) -> Result<()> {
    let model = pipe.model();
    let bank = pipe.bank();
    let settings = pipe.settings();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    push_u64(&mut buf, fusion.dim() as u64);
    for m in [&fusion.w_audio, &fusion.w_visual, &fusion.u_audio, &fusion.u_visual] {
        push_matrix(&mut buf, m);
    }

    buf.push(match settings.routing {
        RoutingMode::Prototype => 0,
        RoutingMode::Oracle => 1,
    });
    buf.push(settings.use_prototype_augmentation as u8);
    push_u64(&mut buf, settings.balancer_steps as u64);
    push_f64(&mut buf, settings.balancer_lr);

    push_u64(&mut buf, pipe.stages_learned() as u64);
    push_u64(&mut buf, pipe.seed());

    push_f64(&mut buf, model.gamma.gamma_max());
    push_f64(&mut buf, model.gamma.gamma_min());
    push_u64(&mut buf, model.gamma.k_total() as u64);
    push_f64(&mut buf, model.ridge.eta);

    for map in [&model.expansion_av, &model.expansion_a, &model.expansion_v] {
        push_u64(&mut buf, map.input_dim() as u64);
        push_u64(&mut buf, map.output_dim() as u64);
        push_u64(&mut buf, map.seed());
    }

    match &model.w_av {
        None => buf.push(0),
        Some(w) => {
            buf.push(1);
            push_matrix(&mut buf, w);
        }
    }

    push_u64(&mut buf, model.species_order.len() as u64);
    for id in &model.species_order {
        push_u64(&mut buf, *id);
    }

    push_u64(&mut buf, model.species_heads.len() as u64);
    for (id, heads) in &model.species_heads {
        push_u64(&mut buf, *id);
        push_matrix(&mut buf, &heads.w_audio);
        push_matrix(&mut buf, &heads.w_visual);
    }

    push_u64(&mut buf, model.balancer.weights().len() as u64);
    for (id, w) in model.balancer.weights() {
        push_u64(&mut buf, *id);
        push_matrix(&mut buf, w);
    }

    push_u64(&mut buf, bank.m() as u64);
    push_f64(&mut buf, bank.alpha());
    push_u64(&mut buf, bank.general().len() as u64);
    for (intensity, protos) in bank.general() {
        buf.push(intensity.index() as u8);
        push_protos(&mut buf, protos);
    }
    push_u64(&mut buf, bank.species().len() as u64);
    for ((species, intensity), cell) in bank.species() {
        push_u64(&mut buf, *species);
        buf.push(intensity.index() as u8);
        push_protos(&mut buf, &cell.audio);
        push_protos(&mut buf, &cell.visual);
    }

    Ok(write_atomic(path, &buf)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u64 that will be used as an element count; bounded by what the rest
    /// of the file could possibly hold, so corrupt counts fail before any
    /// large allocation.
    fn count(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem_bytes).is_none_or(|need| need > self.remaining()) {
            return Err(bad(format!("implausible count {n} at byte {}", self.pos)));
        }
        Ok(n)
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.count(1)?;
        let cols = self.count(1)?;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n * 8 <= self.remaining())
            .ok_or_else(|| bad(format!("implausible matrix {rows}x{cols}")))?;
        let data = self.f64_vec(n)?;
        Matrix::from_vec(rows, cols, data).map_err(|e| bad(format!("bad matrix: {e}")))
    }

    fn protos(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.count(1)?;
        let dim = self.count(1)?;
        if n.checked_mul(dim).is_none_or(|total| total * 8 > self.remaining()) {
            return Err(bad(format!("implausible prototype set {n}x{dim}")));
        }
        (0..n).map(|_| self.f64_vec(dim)).collect()
    }

    fn intensity(&mut self) -> Result<Intensity> {
        let tag = self.u8()?;
        Intensity::from_index(tag as usize).map_err(|_| bad(format!("bad intensity tag {tag}")))
    }
}

pub fn load(path: &Path) -> Result<(HailPipeline, FusionParams)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(bad("not a pipeline checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, this build reads {VERSION}")));
    }

    let dim = r.count(8)?;
    let mut fusion_mats = Vec::with_capacity(4);
    for _ in 0..4 {
        let m = r.matrix()?;
        if m.rows() != dim || m.cols() != dim {
            return Err(bad(format!(
                "fusion matrix is {}x{}, expected {dim}x{dim}",
                m.rows(),
                m.cols()
            )));
        }
        fusion_mats.push(m);
    }
    let u_visual = fusion_mats.pop().unwrap();
    let u_audio = fusion_mats.pop().unwrap();
    let w_visual = fusion_mats.pop().unwrap();
    let w_audio = fusion_mats.pop().unwrap();
    let fusion = FusionParams { w_audio, w_visual, u_audio, u_visual };

    let routing = match r.u8()? {
        0 => RoutingMode::Prototype,
        1 => RoutingMode::Oracle,
        tag => return Err(bad(format!("bad routing tag {tag}"))),
    };
    let use_prototype_augmentation = match r.u8()? {
        0 => false,
        1 => true,
        tag => return Err(bad(format!("bad augmentation flag {tag}"))),
    };
    let settings = PipelineSettings {
        routing,
        use_prototype_augmentation,
        balancer_steps: r.u64()? as usize,
        balancer_lr: r.f64()?,
    };

    let stages_learned = r.u64()? as usize;
    let seed = r.u64()?;

    let gamma_max = r.f64()?;
    let gamma_min = r.f64()?;
    let k_total = r.u64()? as usize;
    let gamma = GammaSchedule::new(gamma_max, gamma_min, k_total)
        .map_err(|e| bad(format!("bad gamma schedule: {e}")))?;
    let ridge = RidgeConfig { eta: r.f64()? };

    let mut expansions = Vec::with_capacity(3);
    for _ in 0..3 {
        let input = r.u64()? as usize;
        let output = r.u64()? as usize;
        let map_seed = r.u64()?;
        expansions.push(
            hail_core::expand::ExpansionMap::new(input, output, map_seed)
                .map_err(|e| bad(format!("bad expansion descriptor: {e}")))?,
        );
    }
    let expansion_v = expansions.pop().unwrap();
    let expansion_a = expansions.pop().unwrap();
    let expansion_av = expansions.pop().unwrap();

    let w_av = match r.u8()? {
        0 => None,
        1 => Some(r.matrix()?),
        tag => return Err(bad(format!("bad general-head flag {tag}"))),
    };

    let n_order = r.count(8)?;
    let species_order: Vec<u64> = (0..n_order).map(|_| r.u64()).collect::<Result<_>>()?;

    let n_heads = r.count(8)?;
    let mut species_heads = BTreeMap::new();
    for _ in 0..n_heads {
        let id = r.u64()?;
        let heads = SpeciesHeads { w_audio: r.matrix()?, w_visual: r.matrix()? };
        species_heads.insert(id, heads);
    }

    let n_gates = r.count(8)?;
    let mut balancer = ModalityBalancer::new();
    for _ in 0..n_gates {
        let id = r.u64()?;
        let w = r.matrix()?;
        balancer.set_weights(id, w).map_err(|e| bad(format!("bad gate matrix: {e}")))?;
    }

    let m = r.u64()? as usize;
    let alpha = r.f64()?;
    let n_general = r.count(8)?;
    let mut general = BTreeMap::new();
    for _ in 0..n_general {
        let intensity = r.intensity()?;
        general.insert(intensity, r.protos()?);
    }
    let n_species_protos = r.count(8)?;
    let mut species = BTreeMap::new();
    for _ in 0..n_species_protos {
        let id = r.u64()?;
        let intensity = r.intensity()?;
        let audio = r.protos()?;
        let visual = r.protos()?;
        species.insert((id, intensity), SpeciesPrototypes { audio, visual });
    }
    let bank = PrototypeBank::from_parts(m, alpha, general, species)
        .map_err(|e| bad(format!("bad prototype bank: {e}")))?;

    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }

    let model = HailModel {
        expansion_av,
        expansion_a,
        expansion_v,
        w_av,
        species_heads,
        species_order,
        gamma,
        balancer,
        ridge,
    };
    Ok((HailPipeline::from_parts(model, bank, settings, stages_learned, seed), fusion))
}
