//! Model weight file: magic `MINASEG1`, entry count (u32 LE), then per
//! entry: name length + name bytes, rank, dims (u32 LE each), raw f32 LE
//! values. Weights and biases are separate entries. A scalar entry named
//! `meta.threshold` carries the model's binarization threshold.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array4};

use crate::error::{Error, Result};

use super::unet::{UNet, UNetConfig};

const MAGIC: &[u8; 8] = b"MINASEG1";

struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn write_entry<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &UNet<f32>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    let layers = model.layers();
    w.write_all(&((layers.len() * 2 + 1) as u32).to_le_bytes())?;
    write_entry(&mut w, "meta.threshold", &[1], &[model.config.threshold as f32])?;
    for layer in layers {
        let (o, c, kh, kw) = layer.weight.dim();
        write_entry(
            &mut w,
            &format!("{}.weight", layer.name),
            &[o, c, kh, kw],
            layer.weight.as_slice().unwrap(),
        )?;
        write_entry(
            &mut w,
            &format!("{}.bias", layer.name),
            &[layer.bias.len()],
            layer.bias.as_slice().unwrap(),
        )?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn load_model(path: &Path) -> Result<UNet<f32>> {
    let f = std::fs::File::open(path)?;
    let mut r = Reader { inner: std::io::BufReader::new(f), offset: 0 };
    let mut magic = [0u8; 8];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, not a model file".into() });
    }
    let count = r.u32("entry count")? as usize;
    if count == 0 || count > 10_000 {
        return Err(Error::Format { offset: 8, message: format!("implausible entry count {count}") });
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 1024 {
            return Err(Error::Format {
                offset: r.offset - 4,
                message: format!("implausible name length {name_len}"),
            });
        }
        let mut name_bytes = vec![0u8; name_len];
        r.exact(&mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            offset: r.offset - name_len,
            message: "layer name is not UTF-8".into(),
        })?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format {
                offset: r.offset - 4,
                message: format!("implausible rank {rank}"),
            });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dim")? as usize);
        }
        let len: usize = dims.iter().product();
        if len > 64 << 20 {
            return Err(Error::Format {
                offset: r.offset,
                message: format!("implausible tensor size {len}"),
            });
        }
        let mut raw = vec![0u8; len * 4];
        r.exact(&mut raw, &format!("weights of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, dims, data });
    }

    // pair weight/bias entries back into layers
    let mut weights: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for e in entries {
        weights.insert(e.name, (e.dims, e.data));
    }
    let threshold = match weights.remove("meta.threshold") {
        Some((dims, data)) if dims == [1] && data.len() == 1 => {
            let t = f64::from(data[0]);
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("meta.threshold {t} outside (0, 1)"),
                });
            }
            t
        }
        Some(_) => {
            return Err(Error::Format {
                offset: 0,
                message: "meta.threshold must be a single scalar".into(),
            })
        }
        None => UNetConfig::default().threshold,
    };
    let mut named = HashMap::new();
    let layer_names: Vec<String> = weights
        .keys()
        .filter_map(|k| k.strip_suffix(".weight").map(str::to_string))
        .collect();
    for base in layer_names {
        let (wd, wv) = weights.remove(&format!("{base}.weight")).unwrap();
        let (bd, bv) = weights.remove(&format!("{base}.bias")).ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("missing bias for layer {base}"),
        })?;
        if wd.len() != 4 || bd.len() != 1 {
            return Err(Error::Format {
                offset: 0,
                message: format!("layer {base}: weight rank {} / bias rank {}", wd.len(), bd.len()),
            });
        }
        let weight = Array4::from_shape_vec((wd[0], wd[1], wd[2], wd[3]), wv).map_err(|e| {
            Error::Format { offset: 0, message: format!("layer {base}: {e}") }
        })?;
        let bias = Array1::from_vec(bv);
        named.insert(base, (weight, bias));
    }

    // reconstruct encoder widths from the stored kernels
    let mut encoder_channels = Vec::new();
    let mut i = 0;
    while let Some((w, _)) = named.get(&format!("enc{i}.a")) {
        encoder_channels.push(w.dim().0);
        i += 1;
    }
    if encoder_channels.is_empty() {
        return Err(Error::Format { offset: 0, message: "no encoder layers in model file".into() });
    }
    let config = UNetConfig { encoder_channels, threshold, ..Default::default() };
    UNet::from_layers(config, named)
}
