//! Channel and spatial attention in the style of CBAM.

use super::{ConvLayer, ConvVars, Dense, DenseVars, Parameters};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Reduction ratio of the channel MLP.
pub const DEFAULT_REDUCTION: usize = 4;

const SPATIAL_KERNEL: usize = 7;
const SMALL_SPATIAL_KERNEL: usize = 3;

/// Channel attention (shared MLP over average- and max-pooled descriptors)
/// followed by spatial attention (one convolution over the stacked
/// channel-wise average and max maps).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub mlp_hidden: Dense,
    pub mlp_out: Dense,
    pub spatial: ConvLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    mlp_hidden: DenseVars,
    mlp_out: DenseVars,
    spatial: ConvVars,
}

/// Attention maps from one application of an [`AttentionBlock`].
///
/// For batched input `channel` is `(N, C, 1, 1)` and `spatial` is `(N, 1, H, W)`;
/// unbatched input drops the leading `N`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMaps {
    pub channel: Var,
    pub spatial: Var,
}

impl AttentionBlock {
    /// `spatial_size` is the `(H, W)` of the feature maps the block will see;
    /// maps smaller than 7 in either direction use a 3×3 spatial kernel.
    pub fn new(channels: usize, reduction: usize, spatial_size: (usize, usize), rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels / reduction == 0 {
            return Err(Error::invalid(
                "attention",
                format!("channel count {channels} is not divisible by reduction ratio {reduction}"),
            ));
        }
        let hidden = channels / reduction;
        let (h, w) = spatial_size;
        let k = if h >= SPATIAL_KERNEL && w >= SPATIAL_KERNEL { SPATIAL_KERNEL } else { SMALL_SPATIAL_KERNEL };
        Ok(AttentionBlock {
            mlp_hidden: Dense::new(channels, hidden, rng),
            mlp_out: Dense::new(hidden, channels, rng),
            spatial: ConvLayer::new(2, 1, k, 1, k / 2, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp_hidden.inputs()
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            mlp_hidden: self.mlp_hidden.bind(g),
            mlp_out: self.mlp_out.bind(g),
            spatial: self.spatial.bind(g),
        }
    }

    fn mlp(&self, g: &mut Graph, vars: &AttentionVars, x: Var) -> Result<Var> {
        let h = self.mlp_hidden.forward(g, vars.mlp_hidden, x)?;
        let h = g.relu(h)?;
        self.mlp_out.forward(g, vars.mlp_out, h)
    }

    /// Returns the refined feature `feature ⊙ channel_map ⊙ spatial_map` and both maps.
    pub fn forward(&self, g: &mut Graph, vars: &AttentionVars, feature: Var) -> Result<(Var, AttentionMaps)> {
        let shape = g.shape(feature).to_vec();
        let (batched, n, c, h, w) = match shape.as_slice() {
            [c, h, w] => (false, 1, *c, *h, *w),
            [n, c, h, w] => (true, *n, *c, *h, *w),
            s => return Err(Error::shape("attention", &[s])),
        };
        if c != self.channels() {
            return Err(Error::shape("attention", &[&shape, self.mlp_hidden.weight.shape()]));
        }
        let x = if batched { feature } else { g.reshape(feature, &[1, c, h, w])? };
        let full = [n, c, h, w];

        let flat = g.reshape(x, &[n * c, h * w])?;
        let avg = g.mean_axis(flat, 1)?;
        let avg = g.reshape(avg, &[n, c])?;
        let max = g.max_axis(flat, 1)?;
        let max = g.reshape(max, &[n, c])?;
        let a = self.mlp(g, vars, avg)?;
        let m = self.mlp(g, vars, max)?;
        let logits = g.add(a, m)?;
        let channel = g.sigmoid(logits)?;
        let channel = g.reshape(channel, &[n, c, 1, 1])?;
        let channel_full = g.expand(channel, &full)?;
        let gated = g.mul(x, channel_full)?;

        let avg = g.mean_axis(gated, 1)?;
        let max = g.max_axis(gated, 1)?;
        let stacked = g.concat(&[avg, max], 1)?;
        let spatial = self.spatial.forward(g, vars.spatial, stacked)?;
        let spatial = g.sigmoid(spatial)?;
        let spatial_full = g.expand(spatial, &full)?;
        let refined = g.mul(gated, spatial_full)?;

        if batched {
            Ok((refined, AttentionMaps { channel, spatial }))
        } else {
            let refined = g.reshape(refined, &[c, h, w])?;
            let channel = g.reshape(channel, &[c, 1, 1])?;
            let spatial = g.reshape(spatial, &[1, h, w])?;
            Ok((refined, AttentionMaps { channel, spatial }))
        }
    }
}

impl Parameters for AttentionBlock {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.mlp_hidden.params();
        p.extend(self.mlp_out.params());
        p.extend(self.spatial.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.mlp_hidden.params_mut();
        p.extend(self.mlp_out.params_mut());
        p.extend(self.spatial.params_mut());
        p
    }
}

/// Binds `block` and applies it to `feature`.
pub fn attention_apply(g: &mut Graph, feature: Var, block: &AttentionBlock) -> Result<(Var, AttentionMaps)> {
    let vars = block.bind(g);
    block.forward(g, &vars, feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_half_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut block = AttentionBlock::new(8, 4, (5, 5), &mut rng).unwrap();
        for p in block.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = random(&[8, 5, 5], 1);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (refined, maps) = attention_apply(&mut g, xv, &block).unwrap();
        assert_eq!(g.shape(maps.channel), &[8, 1, 1]);
        assert_eq!(g.shape(maps.spatial), &[1, 5, 5]);
        assert!(g.value(maps.channel).data().iter().all(|&v| v == 0.5));
        assert!(g.value(maps.spatial).data().iter().all(|&v| v == 0.5));
        for (r, v) in g.value(refined).data().iter().zip(x.data()) {
            assert_eq!(*r, 0.25 * v);
        }
    }

    #[test]
    fn maps_are_in_open_unit_interval_and_shrink_features() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block = AttentionBlock::new(8, 4, (8, 8), &mut rng).unwrap();
            assert_eq!(block.spatial.kernel(), 7);
            let x = random(&[2, 8, 8, 8], seed + 100);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (refined, maps) = attention_apply(&mut g, xv, &block).unwrap();
            assert_eq!(g.shape(refined), x.shape());
            assert_eq!(g.shape(maps.channel), &[2, 8, 1, 1]);
            assert_eq!(g.shape(maps.spatial), &[2, 1, 8, 8]);
            for m in [maps.channel, maps.spatial] {
                assert!(g.value(m).data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            for (r, v) in g.value(refined).data().iter().zip(x.data()) {
                assert!(r.abs() <= v.abs());
            }
        }
    }

    #[test]
    fn small_maps_fall_back_to_kernel_3() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = AttentionBlock::new(4, 4, (4, 4), &mut rng).unwrap();
        assert_eq!(block.spatial.kernel(), 3);
        assert_eq!(block.spatial.padding, 1);
    }

    #[test]
    fn reduction_must_divide_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AttentionBlock::new(6, 4, (8, 8), &mut rng).is_err());
        assert!(AttentionBlock::new(2, 4, (8, 8), &mut rng).is_err());
    }

    #[test]
    fn grad_check_through_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = AttentionBlock::new(4, 4, (4, 4), &mut rng).unwrap();
        let weights = random(&[4, 4, 4], 9);
        let x = random(&[4, 4, 4], 7);
        let f = |g: &mut Graph, x: Var| {
            let (refined, _) = attention_apply(g, x, &block)?;
            let w = g.constant(weights.clone());
            let y = g.mul(refined, w)?;
            g.sum(y)
        };
        let err = grad_check(f, &x, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
