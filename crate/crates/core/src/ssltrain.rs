//! Self-supervised training from undersampled data alone.
//!
//! The acquired lines of every shot (`g3`) are split per shot into a fixed
//! validation subset `g2` and several training subsets `g1` nested inside `g2`.
//! Training reconstructs from `g1` and scores the result on `g2`; validation
//! reconstructs from `g2` and scores on `g3`. The sampled line nearest the
//! k-space center is kept in every subset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, ComplexTensor, RngStream};
use crate::operators::{CoilSensitivities, Encoding, KSpaceData, ShotImageStack, ShotMask};
use crate::recon::{
    mirid_backward, mirid_forward, sense_recon, shot_kspace, DenoiserGradients, Denoisers, ReconConfig, ReconMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub n_g1: usize,
    pub ratio_g2: f64,
    pub ratio_g1: f64,
    pub w_nrmse: f64,
    pub w_nmae: f64,
    /// Also score the untrained nets before the first epoch.
    pub record_initial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            n_g1: 50,
            ratio_g2: 0.8,
            ratio_g1: 0.48,
            w_nrmse: 1.0,
            w_nmae: 1.0,
            record_initial: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.n_g1 == 0 || self.max_epochs == 0 {
            return Err(invalid("n_g1 and max_epochs must be >= 1"));
        }
        if !(0.0 < self.ratio_g1 && self.ratio_g1 <= self.ratio_g2 && self.ratio_g2 <= 1.0) {
            return Err(invalid("mask ratios must satisfy 0 < ratio_g1 <= ratio_g2 <= 1"));
        }
        if !(self.w_nrmse >= 0.0 && self.w_nmae >= 0.0) || self.w_nrmse + self.w_nmae == 0.0 {
            return Err(invalid("loss weights must be >= 0 and not both zero"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// One validation subset and the training subsets drawn inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMasks {
    pub g3: ShotMask,
    pub g2: ShotMask,
    pub g1: Vec<ShotMask>,
}

/// Borrowed view of the three nested masks used by one training step.
#[derive(Clone, Copy, Debug)]
pub struct MaskTriple<'a> {
    pub g1: &'a ShotMask,
    pub g2: &'a ShotMask,
    pub g3: &'a ShotMask,
}

impl SplitMasks {
    pub fn triple(&self, index: usize) -> MaskTriple<'_> {
        MaskTriple {
            g1: &self.g1[index],
            g2: &self.g2,
            g3: &self.g3,
        }
    }
}

/// Keeps `count` lines of `pool`, always including `center`.
fn draw_subset(pool: &[usize], center: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut rest: Vec<usize> = pool.iter().copied().filter(|&l| l != center).collect();
    rest.shuffle(rng);
    rest.truncate(count - 1);
    rest.push(center);
    rest.sort_unstable();
    rest
}

fn mask_from_lines(nshots: usize, ny: usize, per_shot: &[Vec<usize>]) -> Result<ShotMask> {
    let mut lines = vec![false; nshots * ny];
    for (m, ls) in per_shot.iter().enumerate() {
        for &l in ls {
            lines[m * ny + l] = true;
        }
    }
    ShotMask::new(nshots, ny, lines)
}

/// Splits the acquired lines of every shot independently.
///
/// Each shot keeps `round(ratio_g2 * n3)` lines in `g2` and
/// `round(ratio_g1 * n3)` of those in each `g1`.
pub fn split_mask(g3: &ShotMask, ratio_g2: f64, ratio_g1: f64, n_g1: usize, rng: &mut RngStream) -> Result<SplitMasks> {
    if !(0.0 < ratio_g1 && ratio_g1 <= ratio_g2 && ratio_g2 <= 1.0) {
        return Err(invalid("mask ratios must satisfy 0 < ratio_g1 <= ratio_g2 <= 1"));
    }
    let (nshots, ny) = (g3.nshots(), g3.ny());
    let mut counts = Vec::with_capacity(nshots);
    for m in 0..nshots {
        let n3 = g3.count(m) as f64;
        let n2 = (ratio_g2 * n3).round() as usize;
        let n1 = (ratio_g1 * n3).round() as usize;
        if n1 < 1 || n2 < 1 {
            return Err(invalid(format!(
                "shot {m} has {n3} lines, too few for ratios {ratio_g2}/{ratio_g1}"
            )));
        }
        counts.push((n2, n1, g3.center_line(m).expect("masks sample every shot")));
    }
    let g2_lines: Vec<Vec<usize>> = counts
        .iter()
        .enumerate()
        .map(|(m, &(n2, _, c))| draw_subset(&g3.shot_lines(m), c, n2, rng))
        .collect();
    let g2 = mask_from_lines(nshots, ny, &g2_lines)?;
    let g1 = (0..n_g1)
        .map(|_| {
            let lines: Vec<Vec<usize>> = counts
                .iter()
                .zip(&g2_lines)
                .map(|(&(_, n1, c), pool)| draw_subset(pool, c, n1, rng))
                .collect();
            mask_from_lines(nshots, ny, &lines)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitMasks { g3: g3.clone(), g2, g1 })
}

/// `w_nrmse * ||p - t|| / ||t|| + w_nmae * sum|p - t| / sum|t|` and its gradient in `p`.
///
/// Both terms are fractions, not percentages. Entries outside the loss mask
/// must already be zero in `pred` and `target`.
pub fn kspace_loss(pred: &ComplexTensor, target: &ComplexTensor, w_nrmse: f64, w_nmae: f64) -> Result<(f64, ComplexTensor)> {
    pred.ensure_same_shape(target)?;
    let t_norm = target.norm();
    let t_abs: f64 = target.data().iter().map(|v| v.norm()).sum();
    if t_norm == 0.0 {
        return Err(invalid("loss target is identically zero"));
    }
    let mut err = pred.clone();
    err.axpy(-1.0, target);
    let e_norm = err.norm();
    let e_abs: f64 = err.data().iter().map(|v| v.norm()).sum();
    let loss = w_nrmse * e_norm / t_norm + w_nmae * e_abs / t_abs;

    let c2 = if e_norm > 0.0 { w_nrmse / (e_norm * t_norm) } else { 0.0 };
    let c1 = w_nmae / t_abs;
    let grad = err
        .data()
        .iter()
        .map(|&e| {
            let a = e.norm();
            let sign = if a > 0.0 { e / a } else { e };
            e * c2 + sign * c1
        })
        .collect();
    Ok((loss, ComplexTensor::from_vec(err.shape(), grad)?))
}

fn restricted(b: &KSpaceData, mask: &ShotMask) -> Result<KSpaceData> {
    let mut out = b.clone();
    mask.apply(&mut out)?;
    Ok(out)
}

/// Reconstructs from `input` lines and scores the prediction on `target` lines.
fn scored_forward(
    b: &KSpaceData,
    input: &ShotMask,
    target: &ShotMask,
    coils: &CoilSensitivities,
    nets: &Denoisers,
    recon: &ReconConfig,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(f64, Option<DenoiserGradients>)> {
    let enc_in = Encoding::new(coils, input)?;
    let enc_out = Encoding::new(coils, target)?;
    let (x, tape) = mirid_forward(&restricted(b, input)?, &enc_in, nets, recon)?;
    let pred = enc_out.forward(&x)?;
    let (loss, grad_pred) = kspace_loss(&pred, &restricted(b, target)?, cfg.w_nrmse, cfg.w_nmae)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    if !with_grad {
        return Ok((loss, None));
    }
    let grad_x = enc_out.adjoint(&grad_pred)?;
    let grads = mirid_backward(&grad_x, &tape, &enc_in, nets, recon)?;
    Ok((loss, Some(grads)))
}

/// Loss of one training step (`g1` in, `g2` scored) with parameter gradients.
pub fn training_loss(
    b: &KSpaceData,
    masks: MaskTriple<'_>,
    coils: &CoilSensitivities,
    nets: &Denoisers,
    recon: &ReconConfig,
    cfg: &TrainConfig,
) -> Result<(f64, DenoiserGradients)> {
    let (loss, grads) = scored_forward(b, masks.g1, masks.g2, coils, nets, recon, cfg, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

/// Validation loss (`g2` in, `g3` scored).
pub fn validation_loss(
    b: &KSpaceData,
    masks: MaskTriple<'_>,
    coils: &CoilSensitivities,
    nets: &Denoisers,
    recon: &ReconConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    Ok(scored_forward(b, masks.g2, masks.g3, coils, nets, recon, cfg, false)?.0)
}

/// Normalization applied to each volume: the peak magnitude of `A^H b`.
pub fn data_scale(b: &KSpaceData, coils: &CoilSensitivities, mask: &ShotMask) -> Result<f64> {
    let s = Encoding::new(coils, mask)?.adjoint(b)?.max_abs();
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid("k-space data has no usable signal"));
    }
    Ok(s)
}

/// One normalized volume with its mask split.
#[derive(Clone, Debug)]
pub struct TrainingVolume {
    pub kspace: KSpaceData,
    pub scale: f64,
    pub masks: SplitMasks,
}

impl TrainingVolume {
    pub fn new(
        b: &KSpaceData,
        g3: &ShotMask,
        coils: &CoilSensitivities,
        cfg: &TrainConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let scale = data_scale(b, coils, g3)?;
        let kspace = restricted(b, g3)?.scaled(1.0 / scale);
        let masks = split_mask(g3, cfg.ratio_g2, cfg.ratio_g1, cfg.n_g1, rng)?;
        Ok(Self { kspace, scale, masks })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the kept weights.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|i| self.epochs[i].val_loss)
    }
}

fn mean_validation(
    volumes: &[TrainingVolume],
    coils: &CoilSensitivities,
    nets: &Denoisers,
    recon: &ReconConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    let losses = volumes
        .par_iter()
        .map(|v| validation_loss(&v.kspace, v.masks.triple(0), coils, nets, recon, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains `nets` in place with Adam, one step per (volume, g1) pair in a
/// seeded shuffled order. The weights of the best validation epoch are kept.
pub fn train(
    nets: &mut Denoisers,
    volumes: &[TrainingVolume],
    coils: &CoilSensitivities,
    recon: &ReconConfig,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    recon.validate()?;
    if volumes.is_empty() {
        return Err(invalid("no training volumes"));
    }
    if volumes.iter().any(|v| v.masks.g1.len() != cfg.n_g1) {
        return Err(shape_err("volume mask splits do not match n_g1"));
    }
    let adam = cfg.adam();
    let mut params = nets.parameters();
    let mut state = AdamState::new(params.len());
    let mut history = TrainHistory::default();
    if cfg.record_initial {
        history.initial_val_loss = Some(mean_validation(volumes, coils, nets, recon, cfg)?);
    }

    let mut order: Vec<(usize, usize)> = (0..volumes.len())
        .flat_map(|v| (0..cfg.n_g1).map(move |j| (v, j)))
        .collect();
    let mut best: Option<(f64, Denoisers)> = None;
    let mut stale = 0;
    let start = Instant::now();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &(v, j) in &order {
            let vol = &volumes[v];
            let (loss, grads) = training_loss(&vol.kspace, vol.masks.triple(j), coils, nets, recon, cfg)?;
            adam_step(&mut params, &grads.flatten(), &mut state, &adam)?;
            nets.set_parameters(&params)?;
            total += loss;
        }
        let val = mean_validation(volumes, coils, nets, recon, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss: val,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, nets.clone()));
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, kept)) = best {
        *nets = kept;
    }
    Ok(history)
}

/// Denoiser weights and reconstruction settings for one method.
///
/// Joint models hold one denoiser pair for all shots; single-shot models hold
/// one pair per shot; CG-SENSE holds none.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub mode: ReconMode,
    pub recon: ReconConfig,
    pub nets: Vec<Denoisers>,
}

impl Model {
    pub fn untrained(mode: ReconMode, recon: &ReconConfig, nshots: usize, rng: &RngStream) -> Result<Self> {
        recon.validate()?;
        let nets = match mode {
            ReconMode::Sense => Vec::new(),
            ReconMode::Mirid => vec![Denoisers::init(&recon.net_shape(nshots), &mut rng.substream(0))?],
            ReconMode::Sirid => (0..nshots)
                .map(|m| Denoisers::init(&recon.net_shape(1), &mut rng.substream(1 + m as u64)))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            mode,
            recon: ReconConfig { mode, ..recon.clone() },
            nets,
        })
    }

    /// Trains on the given volumes. Returns one history per denoiser pair.
    pub fn train(
        &mut self,
        kspace: &[&KSpaceData],
        coils: &CoilSensitivities,
        mask: &ShotMask,
        cfg: &TrainConfig,
        rng: &RngStream,
        mut on_epoch: impl FnMut(usize, &EpochRecord),
    ) -> Result<Vec<TrainHistory>> {
        cfg.validate()?;
        match self.mode {
            ReconMode::Sense => Ok(Vec::new()),
            ReconMode::Mirid => {
                let mut split_rng = rng.substream(100);
                let volumes = kspace
                    .iter()
                    .map(|b| TrainingVolume::new(b, mask, coils, cfg, &mut split_rng))
                    .collect::<Result<Vec<_>>>()?;
                let h = train(&mut self.nets[0], &volumes, coils, &self.recon, cfg, &mut rng.substream(101), |r| {
                    on_epoch(0, r)
                })?;
                Ok(vec![h])
            }
            ReconMode::Sirid => {
                let mut out = Vec::new();
                for (m, nets) in self.nets.iter_mut().enumerate() {
                    let shot_mask = mask.shot(m);
                    let mut split_rng = rng.substream(200 + 2 * m as u64);
                    let volumes = kspace
                        .iter()
                        .map(|b| TrainingVolume::new(&shot_kspace(b, m)?, &shot_mask, coils, cfg, &mut split_rng))
                        .collect::<Result<Vec<_>>>()?;
                    let mut order_rng = rng.substream(201 + 2 * m as u64);
                    out.push(train(nets, &volumes, coils, &self.recon, cfg, &mut order_rng, |r| on_epoch(m, r))?);
                }
                Ok(out)
            }
        }
    }

    /// Reconstructs one volume from all acquired lines.
    pub fn reconstruct(&self, b: &KSpaceData, coils: &CoilSensitivities, mask: &ShotMask) -> Result<ShotImageStack> {
        match self.mode {
            ReconMode::Sense => sense_recon(
                b,
                coils,
                mask,
                self.recon.sense_tikhonov,
                self.recon.cg_steps,
                self.recon.cg_tol,
            ),
            ReconMode::Mirid => infer(b, mask, coils, &self.nets[0], &self.recon),
            ReconMode::Sirid => {
                if self.nets.len() != mask.nshots() {
                    return Err(shape_err(format!("{} shot models for {} shots", self.nets.len(), mask.nshots())));
                }
                let shots = self
                    .nets
                    .iter()
                    .enumerate()
                    .map(|(m, nets)| Ok(infer(&shot_kspace(b, m)?, &mask.shot(m), coils, nets, &self.recon)?.take_slab(0)))
                    .collect::<Result<Vec<_>>>()?;
                ComplexTensor::stack(&shots)
            }
        }
    }
}

/// Full-data reconstruction with the same normalization used in training.
pub fn infer(
    b: &KSpaceData,
    mask: &ShotMask,
    coils: &CoilSensitivities,
    nets: &Denoisers,
    recon: &ReconConfig,
) -> Result<ShotImageStack> {
    let scale = data_scale(b, coils, mask)?;
    let enc = Encoding::new(coils, mask)?;
    let input = restricted(b, mask)?.scaled(1.0 / scale);
    Ok(mirid_forward(&input, &enc, nets, recon)?.0.scaled(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::draw_complex_gaussian;
    use crate::simulate::make_coil_maps;
    use num_complex::Complex64;

    fn comb_mask(nshots: usize, ny: usize, step: usize) -> ShotMask {
        let mut lines = vec![false; nshots * ny];
        for m in 0..nshots {
            for ky in (m..ny).step_by(step) {
                lines[m * ny + ky] = true;
            }
        }
        ShotMask::new(nshots, ny, lines).unwrap()
    }

    #[test]
    fn split_counts_and_nesting() {
        // 100 lines per shot, shifted between shots
        let mut lines = vec![false; 256];
        for ky in 10..110 {
            lines[ky] = true;
            lines[128 + ky + 8] = true;
        }
        let g3 = ShotMask::new(2, 128, lines).unwrap();
        let mut rng = RngStream::new(5);
        let s = split_mask(&g3, 0.8, 0.48, 20, &mut rng).unwrap();
        for m in 0..2 {
            assert_eq!(s.g2.count(m), 80);
            let c = g3.center_line(m).unwrap();
            assert!(s.g2.is_sampled(m, c));
            for g1 in &s.g1 {
                assert_eq!(g1.count(m), 48);
                assert!(g1.is_sampled(m, c));
            }
        }
        assert!(s.g2.is_subset_of(&g3));
        assert!(s.g1.iter().all(|g| g.is_subset_of(&s.g2)));
        assert_ne!(s.g1[0], s.g1[1]);
    }

    #[test]
    fn split_rejects_tiny_shots() {
        let mut lines = vec![false; 16];
        lines[8] = true;
        let g3 = ShotMask::new(1, 16, lines).unwrap();
        assert!(split_mask(&g3, 0.8, 0.48, 2, &mut RngStream::new(0)).is_err());
        assert!(split_mask(&comb_mask(1, 16, 1), 0.4, 0.5, 2, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let g3 = comb_mask(2, 64, 3);
        let a = split_mask(&g3, 0.8, 0.48, 3, &mut RngStream::new(9)).unwrap();
        let b = split_mask(&g3, 0.8, 0.48, 3, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_examples() {
        let c = |re| Complex64::new(re, 0.0);
        let t = ComplexTensor::from_vec(&[2], vec![c(3.0), c(4.0)]).unwrap();
        let (l, g) = kspace_loss(&t, &t, 1.0, 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|v| v.norm() == 0.0));
        let p = ComplexTensor::from_vec(&[2], vec![c(3.0), c(3.0)]).unwrap();
        let (l, _) = kspace_loss(&p, &t, 1.0, 0.0).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        let (l, _) = kspace_loss(&p, &t, 0.0, 1.0).unwrap();
        assert!((l - 1.0 / 7.0).abs() < 1e-15);
        assert!(kspace_loss(&p, &ComplexTensor::zeros(&[2]), 1.0, 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let mut rng = RngStream::new(3);
        let t = draw_complex_gaussian(&mut rng, &[12], 1.0).unwrap();
        let p = draw_complex_gaussian(&mut rng, &[12], 1.0).unwrap();
        let (_, g) = kspace_loss(&p, &t, 0.7, 1.3).unwrap();
        let h = 1e-6;
        for i in 0..12 {
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut up = p.clone();
                up.data_mut()[i] += dir * h;
                let mut down = p.clone();
                down.data_mut()[i] -= dir * h;
                let fd = (kspace_loss(&up, &t, 0.7, 1.3).unwrap().0 - kspace_loss(&down, &t, 0.7, 1.3).unwrap().0) / (2.0 * h);
                let an = (g.data()[i].conj() * dir).re;
                assert!((fd - an).abs() < 1e-7, "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn loss_ignores_entries_outside_target_mask() {
        let mut rng = RngStream::new(8);
        let coils = make_coil_maps(2, 16, 16).unwrap();
        let g2 = comb_mask(1, 16, 2);
        let enc = Encoding::new(&coils, &g2).unwrap();
        let x = draw_complex_gaussian(&mut rng, &[1, 16, 16], 1.0).unwrap();
        let mut b = Encoding::new(&coils, &ShotMask::full(1, 16)).unwrap().forward(&x).unwrap();
        let pred = enc.forward(&x.scaled(1.1)).unwrap();
        let before = kspace_loss(&pred, &restricted(&b, &g2).unwrap(), 1.0, 1.0).unwrap().0;
        // perturb an unsampled row of the data
        for v in &mut b.data_mut()[16..32] {
            *v += Complex64::new(5.0, -2.0);
        }
        let after = kspace_loss(&pred, &restricted(&b, &g2).unwrap(), 1.0, 1.0).unwrap().0;
        assert_eq!(before, after);
    }

    fn toy_setup() -> (CoilSensitivities, ShotMask, Vec<KSpaceData>) {
        let mut rng = RngStream::new(21);
        let coils = make_coil_maps(2, 16, 16).unwrap();
        let mask = comb_mask(2, 16, 2);
        let enc = Encoding::new(&coils, &mask).unwrap();
        let data = (0..2)
            .map(|_| enc.forward(&draw_complex_gaussian(&mut rng, &[2, 16, 16], 1.0).unwrap()).unwrap())
            .collect();
        (coils, mask, data)
    }

    fn toy_recon() -> ReconConfig {
        ReconConfig {
            unroll_count: 2,
            cg_steps: 4,
            hidden: 4,
            depth: 2,
            ..ReconConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible_and_keeps_best() {
        let (coils, mask, data) = toy_setup();
        let refs: Vec<&KSpaceData> = data.iter().collect();
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 5,
            n_g1: 2,
            lr: 1e-2,
            record_initial: true,
            ..TrainConfig::default()
        };
        let run = || {
            let rng = RngStream::new(4);
            let mut model = Model::untrained(ReconMode::Mirid, &toy_recon(), 2, &rng).unwrap();
            let h = model.train(&refs, &coils, &mask, &cfg, &rng, |_, _| {}).unwrap();
            (model, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1, m2);
        let strip = |h: &[TrainHistory]| -> Vec<(f64, f64)> {
            h[0].epochs.iter().map(|r| (r.train_loss, r.val_loss)).collect()
        };
        assert_eq!(strip(&h1), strip(&h2));
        let best = h1[0].best_val_loss().unwrap();
        assert!(h1[0].epochs.iter().all(|r| r.val_loss >= best));
        assert!(h1[0].initial_val_loss.is_some());
    }

    #[test]
    fn patience_stops_early() {
        let (coils, mask, data) = toy_setup();
        let rng = RngStream::new(4);
        let mut nets = Denoisers::init(&toy_recon().net_shape(2), &mut rng.substream(0)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 1,
            n_g1: 1,
            lr: 5.0,
            ..TrainConfig::default()
        };
        let vols: Vec<_> = data
            .iter()
            .map(|b| TrainingVolume::new(b, &mask, &coils, &cfg, &mut rng.substream(1)).unwrap())
            .collect();
        let h = train(&mut nets, &vols, &coils, &toy_recon(), &cfg, &mut rng.substream(2), |_| {}).unwrap();
        assert!(h.epochs.len() < 50);
    }

    #[test]
    fn untrained_inference_is_scale_equivariant() {
        let (coils, mask, data) = toy_setup();
        let model = Model::untrained(ReconMode::Mirid, &toy_recon(), 2, &RngStream::new(1)).unwrap();
        let a = model.reconstruct(&data[0], &coils, &mask).unwrap();
        let b = model.reconstruct(&data[0].scaled(7.0), &coils, &mask).unwrap();
        let mut d = b.clone();
        d.axpy(-7.0, &a);
        assert!(d.norm() < 1e-12 * b.norm());
    }

    #[test]
    fn single_shot_model_handles_each_shot() {
        let (coils, mask, data) = toy_setup();
        let model = Model::untrained(ReconMode::Sirid, &toy_recon(), 2, &RngStream::new(1)).unwrap();
        assert_eq!(model.nets.len(), 2);
        assert_eq!(model.nets[0].channels(), 2);
        let x = model.reconstruct(&data[0], &coils, &mask).unwrap();
        assert_eq!(x.shape(), &[2, 16, 16]);
        let sense = Model::untrained(ReconMode::Sense, &toy_recon(), 2, &RngStream::new(1)).unwrap();
        assert!(sense.nets.is_empty());
    }
}
