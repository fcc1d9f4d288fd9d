//! Image error metrics and diffusion-tensor post-processing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, shape_err, Result};
use crate::numerics::RealTensor;
use crate::simulate::{tensor_matrix, DiffusionProtocol, Tensor6};

/// Floor applied to signals before taking logarithms in the tensor fit.
pub const SIGNAL_FLOOR: f64 = 1e-12;

/// Fraction of the peak S0 a voxel needs to enter the tissue mask.
pub const MASK_FRACTION: f64 = 0.05;

fn check_pair(recon: &RealTensor, truth: &RealTensor, mask: Option<&[bool]>) -> Result<()> {
    if recon.shape() != truth.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", recon.shape(), truth.shape())));
    }
    if mask.is_some_and(|m| m.len() != truth.len()) {
        return Err(shape_err("mask length differs from image"));
    }
    Ok(())
}

fn masked_pairs<'a>(
    recon: &'a RealTensor,
    truth: &'a RealTensor,
    mask: Option<&'a [bool]>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    recon
        .data()
        .iter()
        .zip(truth.data())
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&r, &t))| (r, t))
}

/// `100 * ||r - t|| / ||t||`, optionally restricted to a voxel mask.
pub fn nrmse(recon: &RealTensor, truth: &RealTensor, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(recon, truth, mask)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, t) in masked_pairs(recon, truth, mask) {
        num += (r - t) * (r - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(invalid("reference image is zero"));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// `100 * sum|r - t| / sum|t|`, optionally restricted to a voxel mask.
pub fn nmae(recon: &RealTensor, truth: &RealTensor, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(recon, truth, mask)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, t) in masked_pairs(recon, truth, mask) {
        num += (r - t).abs();
        den += t.abs();
    }
    if den == 0.0 {
        return Err(invalid("reference image is zero"));
    }
    Ok(100.0 * num / den)
}

fn check_volumes(volumes: &[RealTensor], protocol: &DiffusionProtocol) -> Result<()> {
    if volumes.len() != protocol.volume_count() {
        return Err(shape_err(format!(
            "{} volumes for a protocol of {}",
            volumes.len(),
            protocol.volume_count()
        )));
    }
    if volumes.windows(2).any(|w| w[0].shape() != w[1].shape()) {
        return Err(shape_err("volumes differ in shape"));
    }
    Ok(())
}

/// Average of the diffusion-weighted volumes (the b0 volume is excluded).
pub fn mean_dwi(volumes: &[RealTensor], protocol: &DiffusionProtocol) -> Result<RealTensor> {
    check_volumes(volumes, protocol)?;
    let dw: Vec<&RealTensor> = (0..volumes.len())
        .filter(|&v| protocol.volume_b(v) > 0.0)
        .map(|v| &volumes[v])
        .collect();
    if dw.is_empty() {
        return Err(invalid("protocol has no diffusion-weighted volumes"));
    }
    let mut out = RealTensor::zeros(dw[0].shape());
    for v in &dw {
        for (o, x) in out.data_mut().iter_mut().zip(v.data()) {
            *o += x;
        }
    }
    let inv = 1.0 / dw.len() as f64;
    out.data_mut().iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Voxels whose S0 exceeds [`MASK_FRACTION`] of its maximum.
pub fn tissue_mask(s0: &RealTensor) -> Vec<bool> {
    let thr = MASK_FRACTION * s0.max();
    s0.data().iter().map(|&v| v > thr).collect()
}

/// Log-linear least-squares tensor fit: `ln(S_d / S_0) = -b g^T D g`.
///
/// Volume 0 supplies `S_0`. Returns `[6, ny, nx]` in the order
/// (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz); voxels outside `mask` are zero.
pub fn fit_tensor_loglinear(volumes: &[RealTensor], protocol: &DiffusionProtocol, mask: &[bool]) -> Result<RealTensor> {
    check_volumes(volumes, protocol)?;
    let shape = volumes[0].shape();
    if shape.len() != 2 || mask.len() != volumes[0].len() {
        return Err(shape_err("expected [ny, nx] volumes and a matching mask"));
    }
    let dw: Vec<usize> = (1..volumes.len()).filter(|&v| protocol.volume_b(v) > 0.0).collect();
    if dw.len() < 6 {
        return Err(invalid(format!("tensor fit needs >= 6 diffusion directions, got {}", dw.len())));
    }
    let design = DMatrix::from_fn(dw.len(), 6, |r, c| {
        let b = protocol.volume_b(dw[r]);
        let [gx, gy, gz] = protocol.volume_gradient(dw[r]);
        -b * [gx * gx, gy * gy, gz * gz, 2.0 * gx * gy, 2.0 * gx * gz, 2.0 * gy * gz][c]
    });
    let svd = design.svd(true, true);
    if svd.rank(1e-10 * svd.singular_values.max()) < 6 {
        return Err(invalid("diffusion directions do not determine a tensor"));
    }

    let npix = volumes[0].len();
    let mut out = RealTensor::zeros(&[6, shape[0], shape[1]]);
    for p in (0..npix).filter(|&p| mask[p]) {
        let s0 = volumes[0].data()[p].max(SIGNAL_FLOOR);
        let y = DVector::from_iterator(dw.len(), dw.iter().map(|&v| (volumes[v].data()[p].max(SIGNAL_FLOOR) / s0).ln()));
        let d = svd.solve(&y, 0.0).map_err(|e| invalid(e.to_string()))?;
        for k in 0..6 {
            out.data_mut()[k * npix + p] = d[k];
        }
    }
    Ok(out)
}

/// Fractional anisotropy of one tensor; zero for the zero tensor.
pub fn fa_from_tensor(t: &Tensor6) -> f64 {
    let eig = SymmetricEigen::new(tensor_matrix(t)).eigenvalues;
    let norm = eig.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mean = eig.mean();
    let dev = eig.map(|l| l - mean).norm();
    (1.5f64).sqrt() * dev / norm
}

/// FA over a `[6, ny, nx]` tensor map.
pub fn fa_map(tensors: &RealTensor) -> Result<RealTensor> {
    let s = tensors.shape();
    if s.len() != 3 || s[0] != 6 {
        return Err(shape_err(format!("expected [6, ny, nx], got {:?}", s)));
    }
    let npix = s[1] * s[2];
    let d = tensors.data();
    let fa = (0..npix)
        .map(|p| {
            let t: Tensor6 = std::array::from_fn(|k| d[k * npix + p]);
            fa_from_tensor(&t)
        })
        .collect();
    RealTensor::from_vec(&s[1..], fa)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub item: String,
    pub nrmse_percent: f64,
    pub nmae_percent: f64,
}

/// Per-volume, mean-DWI and FA errors of each method against the truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,item,nrmse_percent,nmae_percent";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", r.method, r.item, r.nrmse_percent, r.nmae_percent));
        }
        s
    }

    pub fn get(&self, method: &str, item: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.item == item)
    }

    /// Mean DWI and FA errors, one line per method.
    pub fn summary_table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let mut s = format!("{:<12} {:>14} {:>14} {:>12} {:>12}\n", "method", "meanDWI NRMSE%", "meanDWI NMAE%", "FA NRMSE%", "FA NMAE%");
        for m in methods {
            let (Some(d), Some(f)) = (self.get(m, "mean_dwi"), self.get(m, "fa")) else {
                continue;
            };
            s.push_str(&format!(
                "{:<12} {:>14.3} {:>14.3} {:>12.3} {:>12.3}\n",
                m, d.nrmse_percent, d.nmae_percent, f.nrmse_percent, f.nmae_percent
            ));
        }
        s
    }
}

/// Scores one method's magnitude volumes.
///
/// Volume and mean-DWI errors cover the whole image; FA errors cover the
/// tissue mask of the true S0, with the true FA taken from `truth_tensors`.
pub fn evaluate_method(
    method: &str,
    recon: &[RealTensor],
    truth: &[RealTensor],
    truth_tensors: &RealTensor,
    protocol: &DiffusionProtocol,
) -> Result<Vec<MetricRow>> {
    check_volumes(recon, protocol)?;
    check_volumes(truth, protocol)?;
    let row = |item: String, r: &RealTensor, t: &RealTensor, mask: Option<&[bool]>| -> Result<MetricRow> {
        Ok(MetricRow {
            method: method.to_string(),
            item,
            nrmse_percent: nrmse(r, t, mask)?,
            nmae_percent: nmae(r, t, mask)?,
        })
    };
    let mut rows = Vec::with_capacity(recon.len() + 2);
    for (v, (r, t)) in recon.iter().zip(truth).enumerate() {
        rows.push(row(format!("vol{v:03}"), r, t, None)?);
    }
    rows.push(row("mean_dwi".into(), &mean_dwi(recon, protocol)?, &mean_dwi(truth, protocol)?, None)?);
    let mask = tissue_mask(&truth[0]);
    let fa = fa_map(&fit_tensor_loglinear(recon, protocol, &mask)?)?;
    let fa_true = fa_map(truth_tensors)?;
    rows.push(row("fa".into(), &fa, &fa_true, Some(&mask))?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{make_phantom, simulate_dwi, PhantomScene};

    fn rt(v: &[f64]) -> RealTensor {
        RealTensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn error_examples() {
        let t = rt(&[3.0, 4.0]);
        assert_eq!(nrmse(&t, &t, None).unwrap(), 0.0);
        assert!((nrmse(&rt(&[3.0, 3.0]), &t, None).unwrap() - 20.0).abs() < 1e-12);
        assert!((nmae(&rt(&[3.0, 3.0]), &t, None).unwrap() - 100.0 / 7.0).abs() < 1e-12);
        assert!((nrmse(&rt(&[0.0, 4.0]), &t, Some(&[false, true])).unwrap()).abs() < 1e-12);
        assert!(nrmse(&t, &rt(&[0.0, 0.0]), None).is_err());
        assert!(nrmse(&t, &rt(&[1.0]), None).is_err());
    }

    #[test]
    fn fa_examples() {
        assert_eq!(fa_from_tensor(&[1e-3, 1e-3, 1e-3, 0.0, 0.0, 0.0]), 0.0);
        assert!((fa_from_tensor(&[1e-3, 0.0, 0.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(fa_from_tensor(&[0.0; 6]), 0.0);
        // eigenvalues (1.7, 0.3, 0.3) 1e-3, closed form
        let l = [1.7, 0.3, 0.3];
        let m = (l[0] + l[1] + l[2]) / 3.0;
        let expect = (1.5f64).sqrt() * l.iter().map(|x| (x - m) * (x - m)).sum::<f64>().sqrt()
            / l.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((fa_from_tensor(&[1.7e-3, 0.3e-3, 0.3e-3, 0.0, 0.0, 0.0]) - expect).abs() < 1e-12);
    }

    #[test]
    fn fit_inverts_forward_model() {
        let protocol = DiffusionProtocol::hemisphere(1000.0, 12).unwrap();
        let phantom = make_phantom(&PhantomScene::default(), 32, 32).unwrap();
        let dwis = simulate_dwi(&phantom, &protocol).unwrap();
        let mask = tissue_mask(&phantom.s0);
        let fit = fit_tensor_loglinear(&dwis, &protocol, &mask).unwrap();
        let npix = 32 * 32;
        for p in (0..npix).filter(|&p| mask[p]) {
            let t = phantom.tensor_at(p);
            for k in 0..6 {
                assert!((fit.data()[k * npix + p] - t[k]).abs() < 1e-9);
            }
        }
        assert!(fit_tensor_loglinear(&dwis[..5], &protocol, &mask).is_err());
    }

    #[test]
    fn perfect_recon_scores_zero() {
        let protocol = DiffusionProtocol::hemisphere(1000.0, 8).unwrap();
        let phantom = make_phantom(&PhantomScene::default(), 16, 16).unwrap();
        let dwis = simulate_dwi(&phantom, &protocol).unwrap();
        let rows = evaluate_method("truth", &dwis, &dwis, &phantom.tensors, &protocol).unwrap();
        assert_eq!(rows.len(), protocol.volume_count() + 2);
        assert!(rows.iter().all(|r| r.nrmse_percent < 1e-6 && r.nmae_percent < 1e-6));
        let report = MetricsReport { rows };
        assert!(report.to_csv().starts_with("method,item,nrmse_percent,nmae_percent\ntruth,vol000,"));
        assert!(report.summary_table().contains("truth"));
    }
}
