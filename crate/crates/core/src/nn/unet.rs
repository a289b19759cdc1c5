//! Mini U-Net for leg segmentation.
//!
//! Encoder levels of two 3x3 convolutions with relu, 2x2 max-pool
//! downsampling, nearest-neighbor upsampling with skip concatenation on
//! the way back up, and a 1x1 convolution plus sigmoid head producing a
//! full-resolution probability map.

use ndarray::{Array, Array1, Array2, Array3, Array4, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::OccupancyGrid;

use super::ops::{
    concat, concat_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, ConvCache, PoolCache,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UNetConfig {
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub kernel_size: usize,
    /// Default binarization threshold carried into produced masks.
    pub threshold: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 256,
            encoder_channels: vec![8, 16, 32],
            kernel_size: 3,
            threshold: 0.5,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::InvalidArgument("encoder channel list is empty".into()));
        }
        let levels = self.encoder_channels.len();
        if self.input_size % (1 << (levels - 1)) != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} not divisible by 2^{}",
                self.input_size,
                levels - 1
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(Error::InvalidArgument("threshold must be in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F: NdFloat> {
    pub name: String,
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: NdFloat> ConvLayer<F> {
    fn he_uniform(name: &str, o: usize, c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (c * k * k) as f64).sqrt();
        let weight = Array::from_shape_fn((o, c, k, k), |_| {
            F::from(rng.gen_range(-limit..limit)).unwrap()
        });
        ConvLayer {
            name: name.to_string(),
            weight,
            bias: Array1::zeros(o),
        }
    }
}

/// Per-layer gradients in the same order as [`UNet::layers`].
pub type Gradients<F> = Vec<(Array4<F>, Array1<F>)>;

#[derive(Debug, Clone)]
pub struct UNet<F: NdFloat> {
    pub config: UNetConfig,
    enc: Vec<[ConvLayer<F>; 2]>,
    dec: Vec<[ConvLayer<F>; 2]>,
    head: ConvLayer<F>,
}

pub struct ForwardCache<F: NdFloat> {
    enc: Vec<EncCache<F>>,
    dec: Vec<DecCache<F>>,
    head_cache: ConvCache<F>,
    probs: Array3<F>,
}

struct EncCache<F: NdFloat> {
    conv_a: ConvCache<F>,
    pre_a: Array3<F>,
    conv_b: ConvCache<F>,
    pre_b: Array3<F>,
    pool: Option<PoolCache>,
}

struct DecCache<F: NdFloat> {
    skip_channels: usize,
    conv_a: ConvCache<F>,
    pre_a: Array3<F>,
    conv_b: ConvCache<F>,
    pre_b: Array3<F>,
}

impl<F: NdFloat> UNet<F> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;
        let ch = &config.encoder_channels;
        let mut enc = Vec::new();
        for (i, &c) in ch.iter().enumerate() {
            let c_in = if i == 0 { 1 } else { ch[i - 1] };
            enc.push([
                ConvLayer::he_uniform(&format!("enc{i}.a"), c, c_in, k, &mut rng),
                ConvLayer::he_uniform(&format!("enc{i}.b"), c, c, k, &mut rng),
            ]);
        }
        let mut dec = Vec::new();
        for i in (0..ch.len() - 1).rev() {
            let c_in = ch[i] + ch[i + 1];
            dec.push([
                ConvLayer::he_uniform(&format!("dec{i}.a"), ch[i], c_in, k, &mut rng),
                ConvLayer::he_uniform(&format!("dec{i}.b"), ch[i], ch[i], k, &mut rng),
            ]);
        }
        let head = ConvLayer::he_uniform("head", 1, ch[0], 1, &mut rng);
        Ok(UNet { config, enc, dec, head })
    }

    pub fn from_layers(
        config: UNetConfig,
        mut named: std::collections::HashMap<String, (Array4<F>, Array1<F>)>,
    ) -> Result<Self> {
        let template = UNet::<F>::new(config.clone(), 0)?;
        let mut take = |name: &str| -> Result<ConvLayer<F>> {
            let (weight, bias) = named.remove(name).ok_or_else(|| Error::Format {
                offset: 0,
                message: format!("model file missing layer {name}"),
            })?;
            Ok(ConvLayer { name: name.to_string(), weight, bias })
        };
        let mut enc = Vec::new();
        for i in 0..template.enc.len() {
            enc.push([take(&format!("enc{i}.a"))?, take(&format!("enc{i}.b"))?]);
        }
        let mut dec = Vec::new();
        for pair in &template.dec {
            dec.push([take(&pair[0].name)?, take(&pair[1].name)?]);
        }
        let head = take("head")?;
        let model = UNet { config, enc, dec, head };
        for (a, b) in model.layers().iter().zip(template.layers()) {
            if a.weight.dim() != b.weight.dim() {
                return Err(Error::Format {
                    offset: 0,
                    message: format!(
                        "layer {} has shape {:?}, expected {:?}",
                        a.name,
                        a.weight.dim(),
                        b.weight.dim()
                    ),
                });
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> Vec<&ConvLayer<F>> {
        let mut v = Vec::new();
        for pair in &self.enc {
            v.push(&pair[0]);
            v.push(&pair[1]);
        }
        for pair in &self.dec {
            v.push(&pair[0]);
            v.push(&pair[1]);
        }
        v.push(&self.head);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer<F>> {
        let mut v = Vec::new();
        for pair in &mut self.enc {
            let [a, b] = pair;
            v.push(a);
            v.push(b);
        }
        for pair in &mut self.dec {
            let [a, b] = pair;
            v.push(a);
            v.push(b);
        }
        v.push(&mut self.head);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward_cached(&self, input: &Array3<F>) -> Result<(Array3<F>, ForwardCache<F>)> {
        let levels = self.enc.len();
        let mut enc_caches = Vec::with_capacity(levels);
        let mut skips: Vec<Array3<F>> = Vec::with_capacity(levels);
        let mut x = input.clone();
        for (i, pair) in self.enc.iter().enumerate() {
            let (za, ca) = conv2d(&x, &pair[0].weight, &pair[0].bias)?;
            let aa = relu(&za);
            let (zb, cb) = conv2d(&aa, &pair[1].weight, &pair[1].bias)?;
            let ab = relu(&zb);
            let pool = if i + 1 < levels {
                let (pooled, pc) = maxpool2(&ab)?;
                x = pooled;
                Some(pc)
            } else {
                x = ab.clone();
                None
            };
            skips.push(ab);
            enc_caches.push(EncCache { conv_a: ca, pre_a: za, conv_b: cb, pre_b: zb, pool });
        }

        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for (d, pair) in self.dec.iter().enumerate() {
            let level = levels - 2 - d;
            let up = super::ops::upsample2(&x);
            let skip = &skips[level];
            let cat = concat(skip, &up)?;
            let (za, ca) = conv2d(&cat, &pair[0].weight, &pair[0].bias)?;
            let aa = relu(&za);
            let (zb, cb) = conv2d(&aa, &pair[1].weight, &pair[1].bias)?;
            x = relu(&zb);
            dec_caches.push(DecCache {
                skip_channels: skip.dim().0,
                conv_a: ca,
                pre_a: za,
                conv_b: cb,
                pre_b: zb,
            });
        }

        let (zh, ch) = conv2d(&x, &self.head.weight, &self.head.bias)?;
        let probs = sigmoid(&zh);
        Ok((
            probs.clone(),
            ForwardCache { enc: enc_caches, dec: dec_caches, head_cache: ch, probs },
        ))
    }

    pub fn forward(&self, input: &Array3<F>) -> Result<Array3<F>> {
        Ok(self.forward_cached(input)?.0)
    }

    /// Backpropagates dL/dprobs into per-layer parameter gradients
    /// (ordered as [`Self::layers`]); also returns dL/dinput.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        grad_probs: &Array3<F>,
    ) -> Result<(Gradients<F>, Array3<F>)> {
        let levels = self.enc.len();
        let mut enc_grads: Vec<Option<(Array4<F>, Array1<F>)>> = vec![None; levels * 2];
        let mut dec_grads: Vec<(Array4<F>, Array1<F>)> = Vec::with_capacity(self.dec.len() * 2);

        let gz = sigmoid_backward(&cache.probs, grad_probs)?;
        let (mut gx, ghw, ghb) = conv2d_backward(&cache.head_cache, &self.head.weight, &gz)?;

        // skip gradients accumulate as the decoder unwinds
        let mut skip_grads: Vec<Option<Array3<F>>> = vec![None; levels];

        for (d, pair) in self.dec.iter().enumerate().rev() {
            let dc = &cache.dec[d];
            let level = levels - 2 - d;
            let gzb = relu_backward(&dc.pre_b, &gx)?;
            let (gab, gwb, gbb) = conv2d_backward(&dc.conv_b, &pair[1].weight, &gzb)?;
            let gza = relu_backward(&dc.pre_a, &gab)?;
            let (gcat, gwa, gba) = conv2d_backward(&dc.conv_a, &pair[0].weight, &gza)?;
            let (gskip, gup) = concat_backward(&gcat, dc.skip_channels);
            skip_grads[level] = Some(gskip);
            gx = super::ops::upsample2_backward(&gup)?;
            dec_grads.push((gwb, gbb));
            dec_grads.push((gwa, gba));
        }
        // pushed in reverse level order as (b, a); reversing yields
        // dec[0].a, dec[0].b, dec[1].a, ...
        dec_grads.reverse();

        for (i, pair) in self.enc.iter().enumerate().rev() {
            let ec = &cache.enc[i];
            let mut gab = if let Some(pc) = &ec.pool {
                maxpool2_backward(pc, &gx)
            } else {
                gx.clone()
            };
            if let Some(gs) = &skip_grads[i] {
                gab = gab + gs;
            }
            let gzb = relu_backward(&ec.pre_b, &gab)?;
            let (gaa, gwb, gbb) = conv2d_backward(&ec.conv_b, &pair[1].weight, &gzb)?;
            let gza = relu_backward(&ec.pre_a, &gaa)?;
            let (gprev, gwa, gba) = conv2d_backward(&ec.conv_a, &pair[0].weight, &gza)?;
            gx = gprev;
            enc_grads[i * 2] = Some((gwa, gba));
            enc_grads[i * 2 + 1] = Some((gwb, gbb));
        }

        let mut grads: Gradients<F> = enc_grads.into_iter().map(|g| g.unwrap()).collect();
        grads.extend(dec_grads);
        grads.push((ghw, ghb));
        Ok((grads, gx))
    }
}

/// Per-pixel leg probabilities with the binarization threshold used
/// downstream.
#[derive(Debug, Clone)]
pub struct SegmentationMask {
    pub probabilities: Array2<f32>,
    pub threshold: f64,
}

impl SegmentationMask {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(Error::InvalidArgument("threshold must be in (0,1)".into()));
        }
        if self.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probability outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn from_binary_grid(grid: &OccupancyGrid, threshold: f64) -> Self {
        let n = grid.spec.matrix_length;
        let probabilities = Array2::from_shape_fn((n, n), |(x, y)| {
            if grid.get(x, y) == 255 {
                1.0
            } else {
                0.0
            }
        });
        SegmentationMask { probabilities, threshold }
    }
}

/// Converts a grid to the network input tensor (pixels divided by 255).
pub fn grid_to_input<F: NdFloat>(grid: &OccupancyGrid) -> Array3<F> {
    let n = grid.spec.matrix_length;
    let mut x = Array3::<F>::zeros((1, n, n));
    for (px, py) in grid.occupied() {
        x[(0, px, py)] = F::one();
    }
    x
}

pub fn mask_to_target<F: NdFloat>(mask: &OccupancyGrid) -> Array3<F> {
    grid_to_input(mask)
}

/// Runs the segmentation network on an occupancy grid.
pub fn unet_forward(grid: &OccupancyGrid, model: &UNet<f32>) -> Result<SegmentationMask> {
    let n = grid.spec.matrix_length;
    if n != self_input_size(model) {
        return Err(Error::Shape {
            op: "unet_forward",
            left: vec![n, n],
            right: vec![self_input_size(model), self_input_size(model)],
        });
    }
    let x = grid_to_input::<f32>(grid);
    let probs = model.forward(&x)?;
    let (_, h, w) = probs.dim();
    let probabilities = probs.into_shape_with_order((h, w)).unwrap();
    Ok(SegmentationMask { probabilities, threshold: model.config.threshold })
}

fn self_input_size(model: &UNet<f32>) -> usize {
    model.config.input_size
}

/// Mask PGM with probabilities quantized to 0..=255; the threshold rides
/// in a JSON sidecar next to the file.
pub fn write_mask_file(path: &std::path::Path, mask: &SegmentationMask) -> Result<()> {
    use std::io::Write;
    let (h, w) = mask.probabilities.dim();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = mask
        .probabilities
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    f.write_all(&bytes)?;
    drop(f);
    let sidecar = path.with_extension("json");
    let meta = serde_json::json!({ "threshold": mask.threshold });
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta).unwrap() + "\n")?;
    Ok(())
}
