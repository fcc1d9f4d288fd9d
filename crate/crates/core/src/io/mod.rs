//! Files: run configuration, the `MIRIDSET` container, PGM export, and the
//! container layouts of datasets, trained models and reconstructions.
//!
//! Dataset entries: `s0`, `tensors`, `coils`, `masks`, `protocol` (rows of
//! `[b, gx, gy, gz]`, row 0 being the b=0 volume), then per volume `v`
//! `truth/vvv`, `phase/vvv` and `kspace/vvv`.

pub mod config;
pub mod container;
pub mod pgm;

use std::path::Path;

pub use config::{ProtocolConfig, RunConfig, RESOLVED_CONFIG};
pub use container::{ArrayData, Container, Entry};
pub use pgm::{read_pgm, write_pgm};

use crate::denoiser::{ConvLayer, DenoiserNet};
use crate::error::{Error, Result};
use crate::numerics::RealTensor;
use crate::operators::{CoilSensitivities, ShotMask};
use crate::recon::{Denoisers, ReconConfig, ReconMode};
use crate::simulate::{DiffusionProtocol, Phantom, SimulatedDataset, VolumeData};
use crate::ssltrain::Model;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn volume_name(prefix: &str, v: usize) -> String {
    format!("{prefix}/{v:03}")
}

pub fn dataset_to_container(ds: &SimulatedDataset) -> Result<Container> {
    let mut c = Container::new();
    c.insert_real("s0", &ds.phantom.s0)?;
    c.insert_real("tensors", &ds.phantom.tensors)?;
    c.insert_complex("coils", ds.coils.maps())?;
    c.insert_bool("masks", &[ds.mask.nshots(), ds.mask.ny()], ds.mask.lines())?;
    let nvol = ds.protocol.volume_count();
    let rows: Vec<f64> = (0..nvol)
        .flat_map(|v| {
            let g = ds.protocol.volume_gradient(v);
            [ds.protocol.volume_b(v), g[0], g[1], g[2]]
        })
        .collect();
    c.insert_real("protocol", &RealTensor::from_vec(&[nvol, 4], rows)?)?;
    for (v, vol) in ds.volumes.iter().enumerate() {
        c.insert_real(&volume_name("truth", v), &vol.truth)?;
        c.insert_complex(&volume_name("phase", v), &vol.phases)?;
        c.insert_complex(&volume_name("kspace", v), &vol.kspace)?;
    }
    Ok(c)
}

fn protocol_from_rows(rows: &RealTensor) -> Result<DiffusionProtocol> {
    let s = rows.shape();
    if s.len() != 2 || s[1] != 4 || s[0] < 2 {
        return Err(format_err(format!("protocol must be [volumes, 4], got {:?}", s)));
    }
    let d = rows.data();
    if d[0] != 0.0 {
        return Err(format_err("protocol row 0 must be the b=0 volume"));
    }
    let b = d[4];
    let dirs = (1..s[0])
        .map(|v| {
            let r = &d[4 * v..4 * v + 4];
            if r[0] != b {
                return Err(format_err("diffusion volumes must share one b-value"));
            }
            Ok([r[1], r[2], r[3]])
        })
        .collect::<Result<Vec<_>>>()?;
    DiffusionProtocol::new(b, dirs)
}

pub fn dataset_from_container(c: &Container) -> Result<SimulatedDataset> {
    let phantom = Phantom {
        s0: c.real("s0")?,
        tensors: c.real("tensors")?,
    };
    let coils = CoilSensitivities::new(c.complex("coils")?)?;
    let (mshape, lines) = c.bools("masks")?;
    if mshape.len() != 2 {
        return Err(format_err("masks must be [nshots, ny]"));
    }
    let mask = ShotMask::new(mshape[0], mshape[1], lines)?;
    let protocol = protocol_from_rows(&c.real("protocol")?)?;
    let volumes = (0..protocol.volume_count())
        .map(|v| {
            Ok(VolumeData {
                truth: c.real(&volume_name("truth", v))?,
                phases: c.complex(&volume_name("phase", v))?,
                kspace: c.complex(&volume_name("kspace", v))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (ny, nx) = (coils.ny(), coils.nx());
    let ks = [mask.nshots(), coils.ncoils(), ny, nx];
    if mask.ny() != ny
        || phantom.s0.shape() != [ny, nx]
        || phantom.tensors.shape() != [6, ny, nx]
        || volumes.iter().any(|v| v.truth.shape() != [ny, nx] || v.kspace.shape() != ks)
    {
        return Err(format_err("dataset arrays disagree on geometry"));
    }
    if c.len() != 5 + 3 * volumes.len() {
        return Err(format_err(format!("unexpected entry count {}", c.len())));
    }
    Ok(SimulatedDataset {
        phantom,
        coils,
        mask,
        protocol,
        volumes,
    })
}

pub fn save_dataset(path: &Path, ds: &SimulatedDataset) -> Result<()> {
    dataset_to_container(ds)?.save(path)
}

pub fn load_dataset(path: &Path) -> Result<SimulatedDataset> {
    dataset_from_container(&Container::load(path)?)
}

fn mode_code(mode: ReconMode) -> f64 {
    match mode {
        ReconMode::Sense => 0.0,
        ReconMode::Mirid => 1.0,
        ReconMode::Sirid => 2.0,
    }
}

fn insert_net(c: &mut Container, prefix: &str, net: &DenoiserNet) -> Result<()> {
    for (l, layer) in net.layers().iter().enumerate() {
        let (o, i) = (layer.out_channels(), layer.in_channels());
        c.insert(&format!("{prefix}/{l}/weights"), &[o, i, 3, 3], ArrayData::Real(layer.weights().to_vec()))?;
        c.insert(&format!("{prefix}/{l}/bias"), &[o], ArrayData::Real(layer.bias().to_vec()))?;
    }
    Ok(())
}

fn read_net(c: &Container, prefix: &str, alpha: f64) -> Result<DenoiserNet> {
    let mut layers = Vec::new();
    while c.get(&format!("{prefix}/{}/weights", layers.len())).is_some() {
        let l = layers.len();
        let w = c.real(&format!("{prefix}/{l}/weights"))?;
        let b = c.real(&format!("{prefix}/{l}/bias"))?;
        let s = w.shape().to_vec();
        if s.len() != 4 || s[2] != 3 || s[3] != 3 {
            return Err(format_err(format!("{prefix}/{l}: weights must be [out, in, 3, 3]")));
        }
        layers.push(ConvLayer::from_parts(s[1], s[0], w.into_data(), b.into_data())?);
    }
    if layers.is_empty() {
        return Err(format_err(format!("no layers under '{prefix}'")));
    }
    DenoiserNet::from_layers(layers, alpha)
}

/// Checkpoint entries: `model/mode`, `model/alpha`, then
/// `net{j}/{image,kspace}/{layer}/{weights,bias}` for each denoiser pair.
pub fn model_to_container(model: &Model) -> Result<Container> {
    let mut c = Container::new();
    c.insert("model/mode", &[1], ArrayData::Real(vec![mode_code(model.mode)]))?;
    c.insert("model/alpha", &[1], ArrayData::Real(vec![model.recon.alpha]))?;
    for (j, pair) in model.nets.iter().enumerate() {
        insert_net(&mut c, &format!("net{j}/image"), &pair.image)?;
        insert_net(&mut c, &format!("net{j}/kspace"), &pair.kspace)?;
    }
    Ok(c)
}

/// Loads a checkpoint and checks it against the configured architecture.
pub fn model_from_container(c: &Container, recon: &ReconConfig, nshots: usize) -> Result<Model> {
    let scalar = |name: &str| -> Result<f64> {
        let t = c.real(name)?;
        if t.len() != 1 {
            return Err(format_err(format!("'{name}' must hold one value")));
        }
        Ok(t.data()[0])
    };
    let mode = match scalar("model/mode")? {
        m if m == 0.0 => ReconMode::Sense,
        m if m == 1.0 => ReconMode::Mirid,
        m if m == 2.0 => ReconMode::Sirid,
        m => return Err(format_err(format!("unknown model mode {m}"))),
    };
    let alpha = scalar("model/alpha")?;
    let mut nets = Vec::new();
    while c.get(&format!("net{}/image/0/weights", nets.len())).is_some() {
        let j = nets.len();
        nets.push(Denoisers {
            image: read_net(c, &format!("net{j}/image"), alpha)?,
            kspace: read_net(c, &format!("net{j}/kspace"), alpha)?,
        });
    }
    let (count, per_net) = match mode {
        ReconMode::Sense => (0, 0),
        ReconMode::Mirid => (1, nshots),
        ReconMode::Sirid => (nshots, 1),
    };
    let recon = ReconConfig { mode, ..recon.clone() };
    let expect = recon.net_shape(per_net);
    let fits = |n: &DenoiserNet| {
        let s = n.shape();
        s.channels == expect.channels
            && s.depth == expect.depth
            && s.alpha == expect.alpha
            && (s.depth == 1 || s.hidden == expect.hidden)
    };
    if nets.len() != count || nets.iter().any(|p| !fits(&p.image) || !fits(&p.kspace)) {
        return Err(Error::Config(format!(
            "checkpoint holds {} {mode} denoiser pair(s) that do not match the configured architecture \
             ({count} pair(s) of {} channels, hidden {}, depth {}, alpha {})",
            nets.len(),
            expect.channels,
            expect.hidden,
            expect.depth,
            expect.alpha
        )));
    }
    Ok(Model { mode, recon, nets })
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    model_to_container(model)?.save(path)
}

pub fn load_model(path: &Path, recon: &ReconConfig, nshots: usize) -> Result<Model> {
    model_from_container(&Container::load(path)?, recon, nshots)
}

/// Reconstruction file: one `magnitude/vvv` image per volume.
pub fn recon_to_container(images: &[RealTensor]) -> Result<Container> {
    let mut c = Container::new();
    for (v, img) in images.iter().enumerate() {
        c.insert_real(&volume_name("magnitude", v), img)?;
    }
    Ok(c)
}

pub fn recon_from_container(c: &Container) -> Result<Vec<RealTensor>> {
    let out = (0..c.len())
        .map(|v| c.real(&volume_name("magnitude", v)))
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(format_err("reconstruction file holds no images"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::simulate::{simulate_dataset, AcquisitionSpec, PhantomScene};

    fn small_dataset() -> SimulatedDataset {
        let spec = AcquisitionSpec {
            ny: 16,
            nx: 16,
            ncoils: 2,
            ..AcquisitionSpec::default()
        };
        let protocol = DiffusionProtocol::hemisphere(1000.0, 6).unwrap();
        simulate_dataset(&spec, &PhantomScene::default(), &protocol, 3).unwrap()
    }

    #[test]
    fn dataset_round_trip_and_manifest() {
        let ds = small_dataset();
        let c = dataset_to_container(&ds).unwrap();
        assert_eq!(c.len(), 5 + 3 * 7);
        let back = dataset_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn model_round_trip_and_architecture_check() {
        let recon = ReconConfig {
            hidden: 4,
            depth: 3,
            ..ReconConfig::default()
        };
        for mode in [ReconMode::Mirid, ReconMode::Sirid, ReconMode::Sense] {
            let model = Model::untrained(mode, &recon, 2, &RngStream::new(5)).unwrap();
            let c = model_to_container(&model).unwrap();
            assert_eq!(model_from_container(&c, &recon, 2).unwrap(), model);
        }
        let model = Model::untrained(ReconMode::Mirid, &recon, 2, &RngStream::new(5)).unwrap();
        let c = model_to_container(&model).unwrap();
        assert!(model_from_container(&c, &ReconConfig { hidden: 8, ..recon.clone() }, 2).is_err());
        assert!(model_from_container(&c, &recon, 3).is_err());
    }

    #[test]
    fn recon_file_round_trip() {
        let imgs = vec![RealTensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(); 3];
        let c = recon_to_container(&imgs).unwrap();
        assert_eq!(recon_from_container(&c).unwrap(), imgs);
        assert!(recon_from_container(&Container::new()).is_err());
    }
}
