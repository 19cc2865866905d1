/// Resolution of a feature map relative to the input: halved `down` times
/// (rounding up, as a padded stride-2 conv does), then doubled `up` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Resolution {
    down: u32,
    up: u32,
}

impl Resolution {
    pub(crate) fn down(down: u32) -> Self {
        Self { down, up: 0 }
    }

    /// Output of the `up`-th deconvolution module above the 1/4 level.
    pub(crate) fn up(up: u32) -> Self {
        Self { down: 2, up }
    }

    pub(crate) fn extent(self, input: usize) -> usize {
        let mut s = input;
        for _ in 0..self.down {
            s = s.div_ceil(2);
        }
        s << self.up
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCost {
    pub(crate) stage: String,
    pub(crate) macs_per_pixel: u64,
    pub(crate) at: Resolution,
}

/// Parameters and GFLOPs attributed to one top-level stage.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub params: usize,
    pub gflops: f64,
}

/// Parameters of a `k x k` convolution.
pub fn conv_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

/// GFLOPs of a layer performing `macs_per_pixel` multiply-accumulates at each
/// of `h * w` positions; one multiply-accumulate counts as one FLOP.
pub fn conv_flops(macs_per_pixel: u64, h: usize, w: usize) -> f64 {
    (macs_per_pixel as f64 * h as f64 * w as f64) / 1e9
}
