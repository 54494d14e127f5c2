//! Binary model files.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u32` LE header length,
//! a JSON header of that many bytes, then every network's parameters as
//! little-endian `f64` in [`Network::flat_params`] order, networks in the
//! order listed by the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GanModel, GenerativeModel, ModelFamily, TableEncoding, TrainingConfig, VaeModel};
use crate::error::{Error, Result};
use crate::nn_core::{LayerSpec, Network};

pub const MAGIC: [u8; 8] = *b"SATLOSMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkHeader {
    name: String,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    family: String,
    angles: Vec<u32>,
    /// Noise dimension (GAN) or latent dimension (VAE).
    input_dim: usize,
    config: TrainingConfig,
    #[serde(default)]
    category_counts: Vec<[u64; 2]>,
    networks: Vec<NetworkHeader>,
    weight_count: usize,
}

fn network_header(name: &str, net: &Network) -> NetworkHeader {
    NetworkHeader {
        name: name.to_string(),
        layers: net.specs(),
    }
}

pub fn model_to_bytes(model: &GenerativeModel) -> Result<Vec<u8>> {
    let (input_dim, category_counts, nets): (usize, Vec<[u64; 2]>, Vec<(&str, &Network)>) = match model {
        GenerativeModel::Gan(m) => (
            m.noise_dim,
            m.category_counts.clone(),
            vec![("generator", &m.generator), ("discriminator", &m.discriminator)],
        ),
        GenerativeModel::Vae(m) => (
            m.latent_dim,
            Vec::new(),
            vec![("encoder", &m.encoder), ("decoder", &m.decoder)],
        ),
    };
    let header = Header {
        family: model.family().key().to_string(),
        angles: model.encoding().angles.clone(),
        input_dim,
        config: model.config().clone(),
        category_counts,
        networks: nets.iter().map(|(n, net)| network_header(n, net)).collect(),
        weight_count: nets.iter().map(|(_, net)| net.param_count()).sum(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.weight_count);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, net) in nets {
        for w in net.flat_params() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::TruncatedModelFile(format!(
            "{what}: needed {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn model_from_bytes(mut bytes: &[u8]) -> Result<GenerativeModel> {
    let magic = bytes.get(..MAGIC.len()).ok_or(Error::UnrecognizedModelFile)?;
    if magic != MAGIC {
        return Err(Error::UnrecognizedModelFile);
    }
    bytes = &bytes[MAGIC.len()..];
    let version = read_u32(&mut bytes, "format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = read_u32(&mut bytes, "header length")? as usize;
    let json = take(&mut bytes, header_len, "header")?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::TruncatedModelFile(format!("header is not valid: {e}")))?;
    let family = ModelFamily::parse(&header.family)?;

    let mut nets = Vec::with_capacity(header.networks.len());
    for nh in &header.networks {
        let mut net = Network::zeros(&nh.layers)?;
        let raw = take(&mut bytes, 8 * net.param_count(), &format!("{} weights", nh.name))?;
        let flat: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        net.set_flat_params(&flat)?;
        nets.push(net);
    }
    if !bytes.is_empty() {
        return Err(Error::TruncatedModelFile(format!(
            "{} unexpected trailing bytes",
            bytes.len()
        )));
    }
    let expected_names: [&str; 2] = match family {
        ModelFamily::Gan => ["generator", "discriminator"],
        ModelFamily::Vae => ["encoder", "decoder"],
    };
    let names: Vec<&str> = header.networks.iter().map(|n| n.name.as_str()).collect();
    if names != expected_names {
        return Err(Error::TruncatedModelFile(format!(
            "expected networks {expected_names:?}, found {names:?}"
        )));
    }
    if family == ModelFamily::Gan
        && (header.category_counts.len() != header.angles.len()
            || header.category_counts.iter().any(|c| c[0] + c[1] == 0))
    {
        return Err(Error::TruncatedModelFile(
            "category counts do not match the model columns".to_string(),
        ));
    }
    let mut nets = nets.into_iter();
    let (first, second) = (nets.next().expect("two networks"), nets.next().expect("two networks"));
    let encoding = TableEncoding::new(header.angles);
    Ok(match family {
        ModelFamily::Gan => GenerativeModel::Gan(GanModel {
            generator: first,
            discriminator: second,
            noise_dim: header.input_dim,
            encoding,
            config: header.config,
            category_counts: header.category_counts,
        }),
        ModelFamily::Vae => GenerativeModel::Vae(VaeModel {
            encoder: first,
            decoder: second,
            latent_dim: header.input_dim,
            encoding,
            config: header.config,
        }),
    })
}

pub fn save_model(model: &GenerativeModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GenerativeModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
