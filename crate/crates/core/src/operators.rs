//! Linear encoding operators: coil expansion with masked Fourier encoding
//! (`A = F_m C`, applied blockwise per shot), its adjoint, the regularized
//! normal operator, and the virtual-coil expand/reduce pair.

use num_complex::Complex64;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::{fft2c, ifft2c, transform_columns, transform_planes, ComplexTensor};

/// Per-shot complex images, shape `[nshots, ny, nx]`.
pub type ShotImageStack = ComplexTensor;

/// Multi-shot multi-coil k-space, shape `[nshots, ncoils, ny, nx]`, zero off the mask.
pub type KSpaceData = ComplexTensor;

/// Complex receive sensitivities `[ncoils, ny, nx]`, shared by all shots.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    maps: ComplexTensor,
}

impl CoilSensitivities {
    pub fn new(maps: ComplexTensor) -> Result<Self> {
        if maps.shape().len() != 3 || maps.shape()[0] == 0 {
            return Err(shape_err(format!("coil maps must be [ncoils, ny, nx], got {:?}", maps.shape())));
        }
        maps.check_finite("coil maps")?;
        Ok(Self { maps })
    }

    /// Rescales every voxel so the sum of squared magnitudes across coils is one
    /// (voxels where all coils vanish are left at zero).
    pub fn normalized(maps: ComplexTensor) -> Result<Self> {
        let mut c = Self::new(maps)?;
        let (nc, plane) = (c.ncoils(), c.ny() * c.nx());
        let data = c.maps.data_mut();
        for p in 0..plane {
            let sos: f64 = (0..nc).map(|k| data[k * plane + p].norm_sqr()).sum();
            if sos > 0.0 {
                let s = 1.0 / sos.sqrt();
                for k in 0..nc {
                    data[k * plane + p] *= s;
                }
            }
        }
        Ok(c)
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn uniform(ny: usize, nx: usize) -> Self {
        let maps = ComplexTensor::from_vec(&[1, ny, nx], vec![Complex64::new(1.0, 0.0); ny * nx]).unwrap();
        Self { maps }
    }

    pub fn ncoils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn ny(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.maps.shape()[2]
    }

    pub fn maps(&self) -> &ComplexTensor {
        &self.maps
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        self.maps.slab(c)
    }
}

/// Phase-encode line sampling pattern per shot, `[nshots, ny]`, broadcast over readout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotMask {
    nshots: usize,
    ny: usize,
    lines: Vec<bool>,
}

impl ShotMask {
    pub fn new(nshots: usize, ny: usize, lines: Vec<bool>) -> Result<Self> {
        if nshots == 0 || ny == 0 || lines.len() != nshots * ny {
            return Err(shape_err(format!(
                "mask of {} lines for {} shots x {} lines",
                lines.len(),
                nshots,
                ny
            )));
        }
        let mask = Self { nshots, ny, lines };
        if let Some(m) = (0..nshots).find(|&m| mask.count(m) == 0) {
            return Err(invalid(format!("shot {m} samples no lines")));
        }
        Ok(mask)
    }

    pub fn full(nshots: usize, ny: usize) -> Self {
        Self {
            nshots,
            ny,
            lines: vec![true; nshots * ny],
        }
    }

    pub fn nshots(&self) -> usize {
        self.nshots
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn is_sampled(&self, shot: usize, ky: usize) -> bool {
        self.lines[shot * self.ny + ky]
    }

    pub fn count(&self, shot: usize) -> usize {
        self.lines[shot * self.ny..(shot + 1) * self.ny].iter().filter(|&&s| s).count()
    }

    pub fn total(&self) -> usize {
        self.lines.iter().filter(|&&s| s).count()
    }

    /// Sampled line indices of one shot, ascending.
    pub fn shot_lines(&self, shot: usize) -> Vec<usize> {
        (0..self.ny).filter(|&ky| self.is_sampled(shot, ky)).collect()
    }

    /// The sampled line of `shot` closest to the k-space center row `ny / 2` (lower index on ties).
    pub fn center_line(&self, shot: usize) -> Option<usize> {
        let c = self.ny / 2;
        self.shot_lines(shot).into_iter().min_by_key(|&ky| (ky.abs_diff(c), ky))
    }

    /// Single-shot mask holding row `shot`.
    pub fn shot(&self, shot: usize) -> ShotMask {
        Self {
            nshots: 1,
            ny: self.ny,
            lines: self.lines[shot * self.ny..(shot + 1) * self.ny].to_vec(),
        }
    }

    pub fn is_subset_of(&self, other: &ShotMask) -> bool {
        self.nshots == other.nshots
            && self.ny == other.ny
            && self.lines.iter().zip(&other.lines).all(|(&a, &b)| !a || b)
    }

    /// Zeros unsampled rows of a `[nshots, ..., ny, nx]` array in place.
    pub fn apply(&self, data: &mut ComplexTensor) -> Result<()> {
        let s = data.shape();
        if s.len() < 3 || s[0] != self.nshots || s[s.len() - 2] != self.ny {
            return Err(shape_err(format!(
                "mask [{}, {}] cannot apply to {:?}",
                self.nshots, self.ny, s
            )));
        }
        let nx = s[s.len() - 1];
        let per_shot = data.len() / self.nshots;
        let plane = self.ny * nx;
        for m in 0..self.nshots {
            let block = data.slab_mut(m);
            debug_assert_eq!(block.len(), per_shot);
            for p in block.chunks_exact_mut(plane) {
                for ky in 0..self.ny {
                    if !self.lines[m * self.ny + ky] {
                        p[ky * nx..(ky + 1) * nx].fill(Complex64::default());
                    }
                }
            }
        }
        Ok(())
    }
}

/// `A = F_m C` for every shot, with shared coil maps.
#[derive(Clone, Copy, Debug)]
pub struct Encoding<'a> {
    coils: &'a CoilSensitivities,
    mask: &'a ShotMask,
}

impl<'a> Encoding<'a> {
    pub fn new(coils: &'a CoilSensitivities, mask: &'a ShotMask) -> Result<Self> {
        if coils.ny() != mask.ny() {
            return Err(shape_err(format!("coil maps have {} rows, mask {}", coils.ny(), mask.ny())));
        }
        Ok(Self { coils, mask })
    }

    pub fn coils(&self) -> &'a CoilSensitivities {
        self.coils
    }

    pub fn mask(&self) -> &'a ShotMask {
        self.mask
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.mask.nshots(), self.coils.ny(), self.coils.nx()]
    }

    pub fn kspace_shape(&self) -> [usize; 4] {
        [self.mask.nshots(), self.coils.ncoils(), self.coils.ny(), self.coils.nx()]
    }

    fn check(&self, t: &ComplexTensor, expect: &[usize], what: &str) -> Result<()> {
        if t.shape() != expect {
            return Err(shape_err(format!("{what}: expected {:?}, got {:?}", expect, t.shape())));
        }
        Ok(())
    }

    /// `out[m, c] = M_m . fft2c(C_c . x_m)`
    pub fn forward(&self, x: &ShotImageStack) -> Result<KSpaceData> {
        self.check(x, &self.image_shape(), "image stack")?;
        let [ns, nc, ny, nx] = self.kspace_shape();
        let plane = ny * nx;
        let mut out = ComplexTensor::zeros(&[ns, nc, ny, nx]);
        let data = out.data_mut();
        for m in 0..ns {
            let xm = x.slab(m);
            for c in 0..nc {
                let dst = &mut data[(m * nc + c) * plane..(m * nc + c + 1) * plane];
                for ((d, s), v) in dst.iter_mut().zip(self.coils.coil(c)).zip(xm) {
                    *d = s * v;
                }
            }
        }
        transform_planes(data, ny, nx, false);
        self.mask.apply(&mut out)?;
        Ok(out)
    }

    /// `out[m] = sum_c conj(C_c) . ifft2c(M_m . b[m, c])`
    pub fn adjoint(&self, b: &KSpaceData) -> Result<ShotImageStack> {
        self.check(b, &self.kspace_shape(), "k-space")?;
        let [ns, nc, ny, nx] = self.kspace_shape();
        let plane = ny * nx;
        let mut k = b.clone();
        self.mask.apply(&mut k)?;
        transform_planes(k.data_mut(), ny, nx, true);
        let mut out = ComplexTensor::zeros(&[ns, ny, nx]);
        for m in 0..ns {
            let dst = out.slab_mut(m);
            for c in 0..nc {
                let src = &k.data()[(m * nc + c) * plane..(m * nc + c + 1) * plane];
                for ((d, s), v) in dst.iter_mut().zip(self.coils.coil(c)).zip(src) {
                    *d += s.conj() * v;
                }
            }
        }
        Ok(out)
    }

    /// `A^H A x + lambda x`.
    ///
    /// Masking acts on whole phase-encode rows, so it commutes with the
    /// readout transform and only the column transforms are needed.
    pub fn normal(&self, x: &ShotImageStack, lambda: f64) -> Result<ShotImageStack> {
        self.check(x, &self.image_shape(), "image stack")?;
        let [ns, nc, ny, nx] = self.kspace_shape();
        let mut out = x.scaled(lambda);
        let mut buf = vec![Complex64::default(); ny * nx];
        for m in 0..ns {
            let xm = x.slab(m);
            for c in 0..nc {
                let coil = self.coils.coil(c);
                for ((d, s), v) in buf.iter_mut().zip(coil).zip(xm) {
                    *d = s * v;
                }
                transform_columns(&mut buf, ny, nx, false);
                for ky in 0..ny {
                    if !self.mask.is_sampled(m, ky) {
                        buf[ky * nx..(ky + 1) * nx].fill(Complex64::default());
                    }
                }
                transform_columns(&mut buf, ny, nx, true);
                for ((d, s), v) in out.slab_mut(m).iter_mut().zip(coil).zip(&buf) {
                    *d += s.conj() * v;
                }
            }
        }
        Ok(out)
    }
}

pub fn sense_forward(x: &ShotImageStack, coils: &CoilSensitivities, mask: &ShotMask) -> Result<KSpaceData> {
    Encoding::new(coils, mask)?.forward(x)
}

pub fn sense_adjoint(b: &KSpaceData, coils: &CoilSensitivities, mask: &ShotMask) -> Result<ShotImageStack> {
    Encoding::new(coils, mask)?.adjoint(b)
}

pub fn normal_apply(
    x: &ShotImageStack,
    coils: &CoilSensitivities,
    mask: &ShotMask,
    lambda_total: f64,
) -> Result<ShotImageStack> {
    if !(lambda_total >= 0.0) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda_total}")));
    }
    Encoding::new(coils, mask)?.normal(x, lambda_total)
}

/// Masked centered FFT of a `[nshots, ny, nx]` stack.
pub fn masked_fft2c(x: &ShotImageStack, mask: &ShotMask) -> Result<ComplexTensor> {
    let mut k = fft2c(x)?;
    mask.apply(&mut k)?;
    Ok(k)
}

/// Adjoint of [`masked_fft2c`].
pub fn masked_ifft2c(k: &ComplexTensor, mask: &ShotMask) -> Result<ShotImageStack> {
    let mut k = k.clone();
    mask.apply(&mut k)?;
    ifft2c(&k)
}

/// Virtual-coil expansion: `[x, conj(x)] / sqrt(2)` along the shot axis.
pub fn vc_expand(x: &ShotImageStack) -> ComplexTensor {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut shape = x.shape().to_vec();
    shape[0] *= 2;
    let mut data = Vec::with_capacity(2 * x.len());
    data.extend(x.data().iter().map(|v| v * s));
    data.extend(x.data().iter().map(|v| v.conj() * s));
    ComplexTensor::from_vec(&shape, data).unwrap()
}

/// Adjoint of [`vc_expand`] under the real inner product: `(u_front + conj(u_back)) / sqrt(2)`.
pub fn vc_reduce(u: &ComplexTensor) -> Result<ShotImageStack> {
    let s = u.shape();
    if s.is_empty() || s[0] % 2 != 0 {
        return Err(shape_err(format!("virtual-coil reduce needs an even leading extent, got {:?}", s)));
    }
    let half = u.len() / 2;
    let (front, back) = u.data().split_at(half);
    let k = std::f64::consts::FRAC_1_SQRT_2;
    let data = front.iter().zip(back).map(|(a, b)| (a + b.conj()) * k).collect();
    let mut shape = s.to_vec();
    shape[0] /= 2;
    ComplexTensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{draw_complex_gaussian, RngStream};

    fn random_coils(rng: &mut RngStream, nc: usize, ny: usize, nx: usize) -> CoilSensitivities {
        CoilSensitivities::normalized(draw_complex_gaussian(rng, &[nc, ny, nx], 1.0).unwrap()).unwrap()
    }

    fn random_mask(rng: &mut RngStream, ns: usize, ny: usize) -> ShotMask {
        use rand::Rng;
        loop {
            let lines: Vec<bool> = (0..ns * ny).map(|_| rng.random_bool(0.4)).collect();
            if let Ok(m) = ShotMask::new(ns, ny, lines) {
                return m;
            }
        }
    }

    fn rel_diff(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.norm() / b.norm().max(1e-300)
    }

    #[test]
    fn single_uniform_coil_full_mask_is_plain_fft() {
        let mut rng = RngStream::new(1);
        let x = draw_complex_gaussian(&mut rng, &[2, 6, 5], 1.0).unwrap();
        let coils = CoilSensitivities::uniform(6, 5);
        let mask = ShotMask::full(2, 6);
        let k = sense_forward(&x, &coils, &mask).unwrap();
        let expect = fft2c(&x).unwrap().reshape(&[2, 1, 6, 5]).unwrap();
        assert!(rel_diff(&k, &expect) < 1e-14);
        let back = sense_adjoint(&k, &coils, &mask).unwrap();
        assert!(rel_diff(&back, &x) < 1e-12);
    }

    #[test]
    fn zero_image_and_masked_entries() {
        let mut rng = RngStream::new(2);
        let coils = random_coils(&mut rng, 3, 8, 4);
        let mask = random_mask(&mut rng, 2, 8);
        let zero = sense_forward(&ComplexTensor::zeros(&[2, 8, 4]), &coils, &mask).unwrap();
        assert!(zero.data().iter().all(|v| v.norm() == 0.0));
        let x = draw_complex_gaussian(&mut rng, &[2, 8, 4], 1.0).unwrap();
        let k = sense_forward(&x, &coils, &mask).unwrap();
        for m in 0..2 {
            for c in 0..3 {
                for ky in 0..8 {
                    if !mask.is_sampled(m, ky) {
                        let row = &k.data()[((m * 3 + c) * 8 + ky) * 4..][..4];
                        assert!(row.iter().all(|v| *v == Complex64::default()));
                    }
                }
            }
        }
    }

    #[test]
    fn full_mask_normal_operator_is_identity() {
        let mut rng = RngStream::new(3);
        let coils = random_coils(&mut rng, 4, 10, 6);
        let mask = ShotMask::full(2, 10);
        let x = draw_complex_gaussian(&mut rng, &[2, 10, 6], 1.0).unwrap();
        let enc = Encoding::new(&coils, &mask).unwrap();
        assert!(rel_diff(&enc.adjoint(&enc.forward(&x).unwrap()).unwrap(), &x) < 1e-10);
        assert!(rel_diff(&normal_apply(&x, &coils, &mask, 0.0).unwrap(), &x) < 1e-10);
        let z = normal_apply(&ComplexTensor::zeros(&[2, 10, 6]), &coils, &mask, 0.3).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn column_path_normal_matches_composed_operators() {
        let mut rng = RngStream::new(4);
        for _ in 0..10 {
            let coils = random_coils(&mut rng, 3, 9, 7);
            let mask = random_mask(&mut rng, 2, 9);
            let enc = Encoding::new(&coils, &mask).unwrap();
            let x = draw_complex_gaussian(&mut rng, &[2, 9, 7], 1.0).unwrap();
            let mut composed = enc.adjoint(&enc.forward(&x).unwrap()).unwrap();
            composed.axpy(0.25, &x);
            assert!(rel_diff(&enc.normal(&x, 0.25).unwrap(), &composed) < 1e-12);
        }
    }

    #[test]
    fn normal_is_self_adjoint_and_coercive() {
        let mut rng = RngStream::new(5);
        let coils = random_coils(&mut rng, 2, 8, 8);
        let mask = random_mask(&mut rng, 2, 8);
        let lam = 0.05;
        for _ in 0..20 {
            let x = draw_complex_gaussian(&mut rng, &[2, 8, 8], 1.0).unwrap();
            let y = draw_complex_gaussian(&mut rng, &[2, 8, 8], 1.0).unwrap();
            let nx = normal_apply(&x, &coils, &mask, lam).unwrap();
            let ny = normal_apply(&y, &coils, &mask, lam).unwrap();
            let (a, b) = (nx.dot(&y), x.dot(&ny));
            assert!((a - b).norm() <= 1e-10 * a.norm().max(1.0));
            assert!(nx.dot(&x).re >= lam * x.norm_sqr() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn mask_application_is_idempotent() {
        let mut rng = RngStream::new(6);
        let mask = random_mask(&mut rng, 2, 8);
        let mut k = draw_complex_gaussian(&mut rng, &[2, 3, 8, 5], 1.0).unwrap();
        mask.apply(&mut k).unwrap();
        let once = k.clone();
        mask.apply(&mut k).unwrap();
        assert_eq!(once, k);
    }

    #[test]
    fn shot_mask_validation() {
        assert!(ShotMask::new(2, 3, vec![true, false, false, false, false, false]).is_err());
        assert!(ShotMask::new(1, 3, vec![true; 2]).is_err());
        let m = ShotMask::new(1, 8, vec![true, false, false, true, false, true, false, false]).unwrap();
        assert_eq!(m.center_line(0), Some(3));
        assert_eq!(m.shot_lines(0), vec![0, 3, 5]);
    }

    #[test]
    fn virtual_coils_round_trip_and_norm() {
        let mut rng = RngStream::new(7);
        let x = draw_complex_gaussian(&mut rng, &[2, 5, 4], 1.0).unwrap();
        let u = vc_expand(&x);
        assert_eq!(u.shape(), &[4, 5, 4]);
        assert!((u.norm() - x.norm()).abs() <= 1e-14 * x.norm());
        assert!(rel_diff(&vc_reduce(&u).unwrap(), &x) <= 1e-14);
        assert!(vc_reduce(&ComplexTensor::zeros(&[3, 2, 2])).is_err());
    }

    #[test]
    fn virtual_coil_of_real_image_duplicates_it() {
        let x = ComplexTensor::from_vec(&[1, 1, 3], vec![Complex64::new(1.0, 0.0), Complex64::new(-2.0, 0.0), Complex64::new(0.5, 0.0)]).unwrap();
        let u = vc_expand(&x);
        assert_eq!(u.slab(0), u.slab(1));
    }

    #[test]
    fn reduce_of_conjugate_pair_with_imaginary_image() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = ComplexTensor::from_vec(&[1, 1, 2], vec![Complex64::new(0.0, 1.5), Complex64::new(0.0, -0.25)]).unwrap();
        let mut data: Vec<Complex64> = x.data().iter().map(|v| v * s).collect();
        data.extend(x.data().iter().map(|v| v.conj() * s));
        let u = ComplexTensor::from_vec(&[2, 1, 2], data).unwrap();
        assert!(rel_diff(&vc_reduce(&u).unwrap(), &x) < 1e-15);
    }

    #[test]
    fn conjugation_reflects_spectrum_about_center() {
        let mut rng = RngStream::new(8);
        for &(ny, nx) in &[(8usize, 6usize), (7, 5)] {
            let x = draw_complex_gaussian(&mut rng, &[ny, nx], 1.0).unwrap();
            let kx = fft2c(&x).unwrap();
            let kc = fft2c(&x.conj()).unwrap();
            let (cy, cx) = (ny / 2, nx / 2);
            for ky in 0..ny {
                for kxx in 0..nx {
                    let ry = (2 * cy + ny - ky) % ny;
                    let rx = (2 * cx + nx - kxx) % nx;
                    let expect = kx.data()[ry * nx + rx].conj();
                    assert!((kc.data()[ky * nx + kxx] - expect).norm() < 1e-12);
                }
            }
        }
    }
}
