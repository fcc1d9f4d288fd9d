//! Synthetic multi-direction, multi-shot diffusion acquisition with known ground truth.

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{draw_complex_gaussian, ComplexTensor, RealTensor, RngStream};
use crate::operators::{CoilSensitivities, Encoding, KSpaceData, ShotMask};

/// Diffusion tensor components in the order `(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)`, mm^2/s.
pub type Tensor6 = [f64; 6];

pub fn tensor_matrix(t: &Tensor6) -> Matrix3<f64> {
    Matrix3::new(t[0], t[3], t[4], t[3], t[1], t[5], t[4], t[5], t[2])
}

fn is_psd(t: &Tensor6) -> bool {
    let scale = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    let eig = SymmetricEigen::new(tensor_matrix(t));
    eig.eigenvalues.iter().all(|&l| l >= -1e-12 * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    /// Center in normalized coordinates, `[x, y]` in `[-1, 1]`.
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
    pub s0: f64,
    pub tensor: Tensor6,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (dx, dy) = (u - self.center[0], v - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / self.semi_axes[0]).powi(2) + (yr / self.semi_axes[1]).powi(2) <= 1.0
    }
}

/// Ellipses painted in order; later ones overwrite earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomScene {
    pub ellipses: Vec<Ellipse>,
}

fn axial_tensor(axis: [f64; 3], parallel: f64, perpendicular: f64) -> Tensor6 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let a = [axis[0] / n, axis[1] / n, axis[2] / n];
    let d = parallel - perpendicular;
    [
        perpendicular + d * a[0] * a[0],
        perpendicular + d * a[1] * a[1],
        perpendicular + d * a[2] * a[2],
        d * a[0] * a[1],
        d * a[0] * a[2],
        d * a[1] * a[2],
    ]
}

fn isotropic(d: f64) -> Tensor6 {
    [d, d, d, 0.0, 0.0, 0.0]
}

impl Default for PhantomScene {
    /// Head-like scene: tissue background, two fluid-filled cavities and four
    /// fiber bundles oriented along x, y, z and an oblique in-plane axis.
    fn default() -> Self {
        let wm = |center: [f64; 2], semi_axes: [f64; 2], angle: f64, axis: [f64; 3]| Ellipse {
            center,
            semi_axes,
            angle,
            s0: 0.75,
            tensor: axial_tensor(axis, 1.7e-3, 0.3e-3),
        };
        Self {
            ellipses: vec![
                Ellipse {
                    center: [0.0, 0.0],
                    semi_axes: [0.72, 0.92],
                    angle: 0.0,
                    s0: 0.8,
                    tensor: isotropic(0.8e-3),
                },
                Ellipse {
                    center: [-0.12, 0.05],
                    semi_axes: [0.08, 0.24],
                    angle: 0.3,
                    s0: 1.0,
                    tensor: isotropic(2.5e-3),
                },
                Ellipse {
                    center: [0.12, 0.05],
                    semi_axes: [0.08, 0.24],
                    angle: -0.3,
                    s0: 1.0,
                    tensor: isotropic(2.5e-3),
                },
                wm([-0.05, -0.55], [0.4, 0.1], 0.0, [1.0, 0.0, 0.0]),
                wm([0.45, 0.05], [0.1, 0.38], 0.0, [0.0, 1.0, 0.0]),
                wm([-0.42, 0.1], [0.14, 0.2], 0.0, [0.0, 0.0, 1.0]),
                wm([0.05, 0.55], [0.32, 0.09], 0.6, [0.6f64.cos(), 0.6f64.sin(), 0.0]),
            ],
        }
    }
}

/// Rasterized phantom: `s0` is `[ny, nx]`, `tensors` is `[6, ny, nx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub s0: RealTensor,
    pub tensors: RealTensor,
}

impl Phantom {
    pub fn ny(&self) -> usize {
        self.s0.shape()[0]
    }

    pub fn nx(&self) -> usize {
        self.s0.shape()[1]
    }

    pub fn tensor_at(&self, p: usize) -> Tensor6 {
        let plane = self.ny() * self.nx();
        std::array::from_fn(|i| self.tensors.data()[i * plane + p])
    }
}

/// Normalized pixel-center coordinate in `[-1, 1]`.
fn coord(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

pub fn make_phantom(scene: &PhantomScene, ny: usize, nx: usize) -> Result<Phantom> {
    if scene.ellipses.is_empty() {
        return Err(invalid("phantom scene has no ellipses"));
    }
    if ny < 8 || nx < 8 {
        return Err(invalid(format!("phantom extents must be >= 8, got {ny}x{nx}")));
    }
    for (i, e) in scene.ellipses.iter().enumerate() {
        if e.s0 < 0.0 || !is_psd(&e.tensor) || e.semi_axes.iter().any(|&a| a <= 0.0) {
            return Err(invalid(format!("ellipse {i} needs s0 >= 0, positive axes and a PSD tensor")));
        }
    }
    let plane = ny * nx;
    let mut s0 = RealTensor::zeros(&[ny, nx]);
    let mut tensors = RealTensor::zeros(&[6, ny, nx]);
    for y in 0..ny {
        let v = coord(y, ny);
        for x in 0..nx {
            let u = coord(x, nx);
            if let Some(e) = scene.ellipses.iter().rev().find(|e| e.contains(u, v)) {
                let p = y * nx + x;
                s0.data_mut()[p] = e.s0;
                for (i, &d) in e.tensor.iter().enumerate() {
                    tensors.data_mut()[i * plane + p] = d;
                }
            }
        }
    }
    Ok(Phantom { s0, tensors })
}

/// b-value plus unit gradient directions. Volume 0 is the b=0 image; volume
/// `i >= 1` is diffusion-weighted along `directions[i - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionProtocol {
    b_value: f64,
    directions: Vec<[f64; 3]>,
}

impl DiffusionProtocol {
    pub fn new(b_value: f64, directions: Vec<[f64; 3]>) -> Result<Self> {
        if !(b_value >= 0.0) {
            return Err(invalid(format!("b-value must be >= 0, got {b_value}")));
        }
        if directions.len() < 6 {
            return Err(invalid(format!("need >= 6 directions, got {}", directions.len())));
        }
        for g in &directions {
            let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if (n - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("direction {:?} is not unit norm", g)));
            }
        }
        Ok(Self { b_value, directions })
    }

    /// `count` near-uniform directions on the upper hemisphere (Fibonacci lattice).
    pub fn hemisphere(b_value: f64, count: usize) -> Result<Self> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let dirs = (0..count)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let g = [r * phi.cos(), r * phi.sin(), z];
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                [g[0] / n, g[1] / n, g[2] / n]
            })
            .collect();
        Self::new(b_value, dirs)
    }

    pub fn b_value(&self) -> f64 {
        self.b_value
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    /// Number of acquired volumes including the b=0 one.
    pub fn volume_count(&self) -> usize {
        self.directions.len() + 1
    }

    pub fn volume_b(&self, v: usize) -> f64 {
        if v == 0 {
            0.0
        } else {
            self.b_value
        }
    }

    pub fn volume_gradient(&self, v: usize) -> [f64; 3] {
        if v == 0 {
            [0.0; 3]
        } else {
            self.directions[v - 1]
        }
    }
}

/// Monoexponential tensor signal `S0 exp(-b g^T D g)` for every protocol volume.
pub fn simulate_dwi(phantom: &Phantom, protocol: &DiffusionProtocol) -> Result<Vec<RealTensor>> {
    let plane = phantom.ny() * phantom.nx();
    for p in 0..plane {
        if !is_psd(&phantom.tensor_at(p)) {
            return Err(invalid(format!("tensor at voxel {p} is not positive semidefinite")));
        }
    }
    Ok((0..protocol.volume_count())
        .map(|v| {
            let b = protocol.volume_b(v);
            let g = protocol.volume_gradient(v);
            let data = (0..plane)
                .map(|p| {
                    let t = phantom.tensor_at(p);
                    let q = t[0] * g[0] * g[0]
                        + t[1] * g[1] * g[1]
                        + t[2] * g[2] * g[2]
                        + 2.0 * (t[3] * g[0] * g[1] + t[4] * g[0] * g[2] + t[5] * g[1] * g[2]);
                    phantom.s0.data()[p] * (-b * q).exp()
                })
                .collect();
            RealTensor::from_vec(phantom.s0.shape(), data).unwrap()
        })
        .collect())
}

/// Smooth coil profiles: Gaussian lobes on a ring outside the field of view
/// with a gentle linear phase each, normalized to unit sum-of-squares.
pub fn make_coil_maps(ncoils: usize, ny: usize, nx: usize) -> Result<CoilSensitivities> {
    if ncoils == 0 {
        return Err(invalid("need at least one coil"));
    }
    let width = 0.9;
    let mut maps = ComplexTensor::zeros(&[ncoils, ny, nx]);
    for c in 0..ncoils {
        let theta = 2.0 * std::f64::consts::PI * (c as f64 + 0.5) / ncoils as f64;
        let (cy, cx) = (1.3 * theta.sin(), 1.3 * theta.cos());
        let slab = maps.slab_mut(c);
        for y in 0..ny {
            let v = coord(y, ny);
            for x in 0..nx {
                let u = coord(x, nx);
                let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = 0.4 * std::f64::consts::PI * (theta.cos() * u + theta.sin() * v) + 0.7 * c as f64;
                slab[y * nx + x] = Complex64::from_polar(mag, phase);
            }
        }
    }
    CoilSensitivities::normalized(maps)
}

/// Unit-magnitude linear-ramp phase of one shot; shot 0 is the zero-phase reference.
pub fn make_shot_phase(
    shot_index: usize,
    nshots: usize,
    ny: usize,
    nx: usize,
    max_cycles: f64,
    rng: &mut RngStream,
) -> Result<ComplexTensor> {
    if shot_index >= nshots {
        return Err(invalid(format!("shot {shot_index} out of range for {nshots} shots")));
    }
    if !(0.0..=2.0).contains(&max_cycles) {
        return Err(invalid(format!("phase ramp must stay within 2 cycles/FOV, got {max_cycles}")));
    }
    let mut out = ComplexTensor::from_vec(&[ny, nx], vec![Complex64::new(1.0, 0.0); ny * nx])?;
    if shot_index == 0 {
        return Ok(out);
    }
    let a = rng.random_range(-max_cycles..=max_cycles);
    let b = rng.random_range(-max_cycles..=max_cycles);
    let c = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    for y in 0..ny {
        let v = (y as f64 - (ny / 2) as f64) / ny as f64;
        for x in 0..nx {
            let u = (x as f64 - (nx / 2) as f64) / nx as f64;
            out.data_mut()[y * nx + x] = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (a * u + b * v) + c);
        }
    }
    Ok(out)
}

/// Acquisition geometry and sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub ny: usize,
    pub nx: usize,
    pub ncoils: usize,
    pub nshots: usize,
    /// Per-shot acceleration.
    pub r: usize,
    /// Partial-Fourier fraction along ky, in `(0.5, 1]`.
    pub pf: f64,
    pub noise_sigma: f64,
    /// Largest shot phase-ramp slope, cycles per field of view.
    pub phase_cycles: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            ny: 64,
            nx: 64,
            ncoils: 8,
            nshots: 2,
            r: 3,
            pf: 0.75,
            noise_sigma: 0.003,
            phase_cycles: 1.0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ny < 8 || self.nx < 8 {
            return Err(invalid(format!("image extents must be >= 8, got {}x{}", self.ny, self.nx)));
        }
        if self.ncoils == 0 || self.nshots == 0 || self.r == 0 {
            return Err(invalid("ncoils, nshots and r must all be >= 1"));
        }
        if !(self.pf > 0.5 && self.pf <= 1.0) {
            return Err(invalid(format!("partial-Fourier fraction must be in (0.5, 1], got {}", self.pf)));
        }
        if self.nshots > self.r {
            return Err(invalid(format!(
                "{} shots cannot take distinct offsets modulo r = {}",
                self.nshots, self.r
            )));
        }
        if (self.pf * self.ny as f64) < self.r as f64 {
            return Err(invalid("partial-Fourier window narrower than the acceleration"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Number of phase-encode lines inside the partial-Fourier window.
    pub fn window_lines(&self) -> usize {
        ((self.pf * self.ny as f64) - 1e-9).ceil() as usize
    }
}

/// Interleaved EPI line masks: shot `m` takes `ky = offset_m (mod r)` with
/// `offset_m = floor(m r / nshots)` inside the window `ky < ceil(pf ny)`.
pub fn make_shot_masks(spec: &AcquisitionSpec) -> Result<ShotMask> {
    spec.validate()?;
    let window = spec.window_lines();
    let mut lines = vec![false; spec.nshots * spec.ny];
    for m in 0..spec.nshots {
        let offset = m * spec.r / spec.nshots;
        for ky in (offset..window).step_by(spec.r) {
            lines[m * spec.ny + ky] = true;
        }
    }
    ShotMask::new(spec.nshots, spec.ny, lines)
}

/// `b[m, c] = M_m . (fft2c(C_c . phi_m . x) + noise)`.
pub fn acquire(
    dwi: &RealTensor,
    coils: &CoilSensitivities,
    phases: &ComplexTensor,
    mask: &ShotMask,
    noise_sigma: f64,
    rng: &mut RngStream,
) -> Result<KSpaceData> {
    if !(noise_sigma >= 0.0) {
        return Err(invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let (ny, nx) = (coils.ny(), coils.nx());
    if dwi.shape() != [ny, nx] || phases.shape() != [mask.nshots(), ny, nx] {
        return Err(crate::error::shape_err(format!(
            "image {:?} / phases {:?} do not match {}x{} with {} shots",
            dwi.shape(),
            phases.shape(),
            ny,
            nx,
            mask.nshots()
        )));
    }
    let mut shots = phases.clone();
    for m in 0..mask.nshots() {
        for (s, v) in shots.slab_mut(m).iter_mut().zip(dwi.data()) {
            *s *= v;
        }
    }
    let enc = Encoding::new(coils, mask)?;
    let mut k = enc.forward(&shots)?;
    let noise = draw_complex_gaussian(rng, k.shape(), noise_sigma)?;
    for (kv, nv) in k.data_mut().iter_mut().zip(noise.data()) {
        *kv += nv;
    }
    mask.apply(&mut k)?;
    Ok(k)
}

/// One acquired volume of a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeData {
    pub truth: RealTensor,
    pub phases: ComplexTensor,
    pub kspace: KSpaceData,
}

/// A complete synthetic acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub phantom: Phantom,
    pub coils: CoilSensitivities,
    pub mask: ShotMask,
    pub protocol: DiffusionProtocol,
    pub volumes: Vec<VolumeData>,
}

/// Simulates every protocol volume; volume `v` draws from substream `v` of `seed`.
pub fn simulate_dataset(
    spec: &AcquisitionSpec,
    scene: &PhantomScene,
    protocol: &DiffusionProtocol,
    seed: u64,
) -> Result<SimulatedDataset> {
    spec.validate()?;
    let phantom = make_phantom(scene, spec.ny, spec.nx)?;
    let dwis = simulate_dwi(&phantom, protocol)?;
    let coils = make_coil_maps(spec.ncoils, spec.ny, spec.nx)?;
    let mask = make_shot_masks(spec)?;
    let base = RngStream::new(seed);
    let volumes = dwis
        .into_par_iter()
        .enumerate()
        .map(|(v, truth)| {
            let mut rng = base.substream(v as u64);
            let phases = (0..spec.nshots)
                .map(|m| make_shot_phase(m, spec.nshots, spec.ny, spec.nx, spec.phase_cycles, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let phases = ComplexTensor::stack(&phases)?;
            let kspace = acquire(&truth, &coils, &phases, &mask, spec.noise_sigma, &mut rng)?;
            Ok(VolumeData { truth, phases, kspace })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedDataset {
        phantom,
        coils,
        mask,
        protocol: protocol.clone(),
        volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ifft2c;

    fn circle(s0: f64, tensor: Tensor6, r: f64) -> PhantomScene {
        PhantomScene {
            ellipses: vec![Ellipse {
                center: [0.0, 0.0],
                semi_axes: [r, r],
                angle: 0.0,
                s0,
                tensor,
            }],
        }
    }

    #[test]
    fn centered_circle_is_binary() {
        let p = make_phantom(&circle(1.0, isotropic(1e-3), 0.5), 32, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let inside = coord(x, 32).powi(2) + coord(y, 32).powi(2) <= 0.25;
                assert_eq!(p.s0.data()[y * 32 + x], if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(p.tensors.data()[0], 0.0);
    }

    #[test]
    fn center_voxel_carries_ellipse_tensor() {
        let scene = PhantomScene::default();
        let p = make_phantom(&scene, 64, 64).unwrap();
        let e = &scene.ellipses[4];
        let x = ((e.center[0] + 1.0) * 32.0) as usize;
        let y = ((e.center[1] + 1.0) * 32.0) as usize;
        assert_eq!(p.tensor_at(y * 64 + x), e.tensor);
    }

    #[test]
    fn ellipse_area_matches_pixel_count() {
        let scene = PhantomScene {
            ellipses: vec![Ellipse {
                center: [0.1, -0.2],
                semi_axes: [0.6, 0.35],
                angle: 0.7,
                s0: 1.0,
                tensor: isotropic(1e-3),
            }],
        };
        let n = 256;
        let p = make_phantom(&scene, n, n).unwrap();
        let count = p.s0.data().iter().filter(|&&v| v > 0.0).count() as f64;
        // analytic area pi a b over the 2x2 normalized field, in pixels
        let expect = std::f64::consts::PI * 0.6 * 0.35 / 4.0 * (n * n) as f64;
        assert!((count - expect).abs() / expect < 0.02);
    }

    #[test]
    fn phantom_rejects_bad_scenes() {
        assert!(make_phantom(&PhantomScene { ellipses: vec![] }, 16, 16).is_err());
        assert!(make_phantom(&circle(1.0, [1.0, 1.0, 1.0, 5.0, 0.0, 0.0], 0.5), 16, 16).is_err());
        assert!(make_phantom(&circle(1.0, isotropic(1e-3), 0.5), 4, 16).is_err());
    }

    #[test]
    fn dwi_signal_model() {
        let iso = make_phantom(&circle(0.9, isotropic(1e-3), 0.6), 16, 16).unwrap();
        let proto = DiffusionProtocol::hemisphere(1000.0, 6).unwrap();
        let imgs = simulate_dwi(&iso, &proto).unwrap();
        assert_eq!(imgs[0], iso.s0);
        for v in 2..imgs.len() {
            for (a, b) in imgs[v].data().iter().zip(imgs[1].data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let p = 8 * 16 + 8;
        assert!((imgs[1].data()[p] / 0.9 - (-1.0f64).exp()).abs() < 1e-12);
        assert!((imgs[1].data()[p] / 0.9 - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn dwi_never_exceeds_s0() {
        let p = make_phantom(&PhantomScene::default(), 32, 32).unwrap();
        let proto = DiffusionProtocol::hemisphere(1000.0, 12).unwrap();
        for img in simulate_dwi(&p, &proto).unwrap() {
            assert!(img.data().iter().zip(p.s0.data()).all(|(s, s0)| *s <= *s0));
        }
    }

    #[test]
    fn protocol_validation() {
        assert!(DiffusionProtocol::new(1000.0, vec![[1.0, 0.0, 0.0]; 5]).is_err());
        assert!(DiffusionProtocol::new(1000.0, vec![[1.0, 0.1, 0.0]; 6]).is_err());
        let p = DiffusionProtocol::hemisphere(1000.0, 12).unwrap();
        assert_eq!(p.volume_count(), 13);
        assert_eq!(p.volume_b(0), 0.0);
    }

    #[test]
    fn coil_maps_are_normalized_and_smooth() {
        let one = make_coil_maps(1, 16, 16).unwrap();
        assert!(one.maps().data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let n = 64;
        let c = make_coil_maps(8, n, n).unwrap();
        for p in 0..n * n {
            let sos: f64 = (0..8).map(|k| c.coil(k)[p].norm_sqr()).sum();
            assert!((sos - 1.0).abs() < 1e-12);
        }
        // neighbour differences scan: the lobes vary on the scale of the field of view
        let mut max_step = 0.0f64;
        for k in 0..8 {
            let m = c.coil(k);
            for y in 0..n {
                for x in 0..n - 1 {
                    max_step = max_step.max((m[y * n + x + 1] - m[y * n + x]).norm());
                    max_step = max_step.max((m[x * n + y] - m[(x + 1) * n + y]).norm());
                }
            }
        }
        assert!(max_step < 0.1, "coil maps jump by {max_step}");
    }

    #[test]
    fn shot_phase_conventions() {
        let mut rng = RngStream::new(4);
        let p0 = make_shot_phase(0, 2, 8, 8, 1.0, &mut rng).unwrap();
        assert!(p0.data().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let p1 = make_shot_phase(1, 2, 8, 8, 1.0, &mut rng).unwrap();
        assert!(p1.data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let q1 = make_shot_phase(1, 2, 8, 8, 1.0, &mut RngStream::new(5)).unwrap();
        assert_ne!(p1, q1);
        assert!(make_shot_phase(2, 2, 8, 8, 1.0, &mut rng).is_err());
    }

    fn spec(ny: usize, nshots: usize, r: usize, pf: f64) -> AcquisitionSpec {
        AcquisitionSpec {
            ny,
            nx: 16,
            ncoils: 2,
            nshots,
            r,
            pf,
            noise_sigma: 0.0,
            phase_cycles: 1.0,
        }
    }

    #[test]
    fn mask_line_counts() {
        let m = make_shot_masks(&spec(120, 1, 5, 0.75)).unwrap();
        assert_eq!(m.count(0), 18);
        let full = make_shot_masks(&spec(32, 1, 1, 1.0)).unwrap();
        assert_eq!(full.total(), 32);
        let two = make_shot_masks(&spec(32, 2, 2, 1.0)).unwrap();
        for ky in 0..32 {
            assert_ne!(two.is_sampled(0, ky), two.is_sampled(1, ky));
            assert_eq!(two.is_sampled(0, ky), ky % 2 == 0);
        }
        assert!(make_shot_masks(&spec(32, 3, 2, 1.0)).is_err());
    }

    #[test]
    fn mask_coverage_identity() {
        for ny in [16usize, 33, 64, 120] {
            for r in 1..=5 {
                for pf in [0.55, 0.625, 0.75, 1.0] {
                    for ns in 1..=r {
                        let s = spec(ny, ns, r, pf);
                        if s.validate().is_err() {
                            continue;
                        }
                        let m = make_shot_masks(&s).unwrap();
                        for shot in 0..ns {
                            let frac = m.count(shot) as f64 / ny as f64;
                            assert!((frac - pf / r as f64).abs() <= 1.0 / ny as f64 + 1e-12);
                            assert!(m.shot_lines(shot).iter().all(|&ky| ky < s.window_lines()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn acquisition_round_trip_and_masking() {
        let (n, ns) = (16, 2);
        let s = make_phantom(&circle(1.0, isotropic(1e-3), 0.6), n, n).unwrap().s0;
        let mut rng = RngStream::new(9);
        let coils = make_coil_maps(4, n, n).unwrap();
        let phases = ComplexTensor::stack(&[
            make_shot_phase(0, ns, n, n, 1.0, &mut rng).unwrap(),
            make_shot_phase(1, ns, n, n, 1.0, &mut rng).unwrap(),
        ])
        .unwrap();
        let full = ShotMask::full(ns, n);
        let k = acquire(&s, &coils, &phases, &full, 0.0, &mut rng).unwrap();
        let img = ifft2c(&k).unwrap();
        for m in 0..ns {
            for c in 0..4 {
                let got = &img.data()[(m * 4 + c) * n * n..][..n * n];
                for p in 0..n * n {
                    let expect = coils.coil(c)[p] * phases.slab(m)[p] * s.data()[p];
                    assert!((got[p] - expect).norm() < 1e-12);
                }
            }
        }
        let mask = make_shot_masks(&spec(n, ns, 2, 0.75)).unwrap();
        let noisy = acquire(&s, &coils, &phases, &mask, 0.1, &mut rng).unwrap();
        for m in 0..ns {
            for ky in 0..n {
                if !mask.is_sampled(m, ky) {
                    for c in 0..4 {
                        let row = &noisy.data()[((m * 4 + c) * n + ky) * n..][..n];
                        assert!(row.iter().all(|v| *v == Complex64::default()));
                    }
                }
            }
        }
        assert!(acquire(&s, &coils, &phases, &mask, -1.0, &mut rng).is_err());
    }

    #[test]
    fn single_coil_plain_fft() {
        let n = 8;
        let s = make_phantom(&circle(1.0, isotropic(1e-3), 0.6), n, n).unwrap().s0;
        let coils = CoilSensitivities::uniform(n, n);
        let ones = ComplexTensor::from_vec(&[1, n, n], vec![Complex64::new(1.0, 0.0); n * n]).unwrap();
        let k = acquire(&s, &coils, &ones, &ShotMask::full(1, n), 0.0, &mut RngStream::new(0)).unwrap();
        let expect = crate::numerics::fft2c(&ComplexTensor::from_real(&s)).unwrap();
        assert_eq!(k.data(), expect.data());
    }

    #[test]
    fn dataset_is_deterministic() {
        let mut s = AcquisitionSpec::default();
        s.ny = 16;
        s.nx = 16;
        s.ncoils = 2;
        let proto = DiffusionProtocol::hemisphere(1000.0, 6).unwrap();
        let a = simulate_dataset(&s, &PhantomScene::default(), &proto, 17).unwrap();
        let b = simulate_dataset(&s, &PhantomScene::default(), &proto, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&s, &PhantomScene::default(), &proto, 18).unwrap();
        assert_ne!(a.volumes[1].kspace, c.volumes[1].kspace);
    }
}
