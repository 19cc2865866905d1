use posepyr_tensor::{
    BatchNormConfig, BatchNormMode, BatchNormStats, Checkpoint, Element, Graph, Mode, Parameter,
    Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::complexity::{conv_flops, LayerCost, Resolution, StageCost};
use super::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct ConvSpec {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: ConvSpec,
    bn: Norm,
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
}

#[derive(Clone, Debug)]
struct Bottleneck {
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct Transition {
    source: usize,
    conv: Option<ConvBn>,
}

#[derive(Clone, Debug)]
enum Fuse {
    Identity,
    /// 1x1 conv + BN at the source resolution, then bilinear upsampling.
    Up(ConvBn),
    /// Strided 3x3 convs; ReLU between all but the last.
    Down(Vec<ConvBn>),
}

#[derive(Clone, Debug)]
struct HrModule {
    branches: Vec<Vec<BasicBlock>>,
    /// `fuse[i][j]` maps input branch `j` to output branch `i`.
    fuse: Vec<Vec<Fuse>>,
}

#[derive(Clone, Debug)]
struct DeconvModule {
    up: ConvSpec,
    bn: Norm,
    blocks: Vec<BasicBlock>,
    head: ConvSpec,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: [ConvBn; 2],
    stage1: Vec<Bottleneck>,
    transitions: Vec<Vec<Transition>>,
    stages: Vec<Vec<HrModule>>,
    head: ConvSpec,
    deconvs: Vec<DeconvModule>,
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct PyramidVars {
    /// Level `i` is `N x K x (S/4 * 2^i)^2`.
    pub levels: Vec<Var>,
    /// `N x K` tags at level-0 resolution.
    pub tagmap: Var,
}

/// Materialized network output.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapPyramid<T> {
    pub levels: Vec<Tensor<T>>,
    pub tagmap: Tensor<T>,
}

impl<T: Element> HeatmapPyramid<T> {
    pub fn from_graph(g: &Graph<T>, vars: &PyramidVars) -> Self {
        Self {
            levels: vars.levels.iter().map(|&v| g.value(v).clone()).collect(),
            tagmap: g.value(vars.tagmap).clone(),
        }
    }

    /// The single-image pyramid at batch index `i`.
    pub fn item(&self, i: usize) -> Result<Self> {
        Ok(Self {
            levels: self
                .levels
                .iter()
                .map(|l| l.batch_item(i))
                .collect::<posepyr_tensor::Result<_>>()?,
            tagmap: self.tagmap.batch_item(i)?,
        })
    }
}

struct Builder<T> {
    rng: ChaCha8Rng,
    params: Vec<Parameter<T>>,
    stats: Vec<(String, BatchNormStats<T>)>,
    costs: Vec<LayerCost>,
}

impl<T: Element> Builder<T> {
    fn push(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, tensor));
        self.params.len() - 1
    }

    /// Kaiming normal with fan-out `out_channels * k * k`.
    fn kaiming(&mut self, name: String, shape: [usize; 4], fan_out: usize) -> usize {
        let std = (2.0 / fan_out as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::lit(normal.sample(&mut self.rng)))
            .collect();
        self.push(name, Tensor::from_vec(&shape, data).expect("shape"))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        out: Resolution,
    ) -> ConvSpec {
        let weight = self.kaiming(format!("{name}.weight"), [cout, cin, k, k], cout * k * k);
        let bias = bias.then(|| self.push(format!("{name}.bias"), Tensor::zeros(&[cout])));
        self.costs.push(LayerCost {
            stage: stage_of(name),
            macs_per_pixel: (cin * cout * k * k) as u64,
            at: out,
        });
        ConvSpec {
            weight,
            bias,
            stride,
            padding: k / 2,
        }
    }

    /// 1x1 prediction conv with bias, initialized near zero so the first
    /// heatmaps and tags start flat.
    fn head(&mut self, name: &str, cin: usize, cout: usize, out: Resolution) -> ConvSpec {
        let spec = self.conv(name, cin, cout, 1, 1, true, out);
        let normal = Normal::new(0.0, 1e-3).expect("finite std");
        let rng = &mut self.rng;
        for v in self.params[spec.weight].tensor.data_mut() {
            *v = T::lit(normal.sample(rng));
        }
        spec
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.gamma"), Tensor::ones(&[c]));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.stats.push((name.to_string(), BatchNormStats::new(c)));
        Norm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        out: Resolution,
    ) -> ConvBn {
        ConvBn {
            conv: self.conv(&format!("{name}.conv"), cin, cout, k, stride, false, out),
            bn: self.norm(&format!("{name}.bn"), cout),
        }
    }

    fn basic(&mut self, name: &str, c: usize, at: Resolution) -> BasicBlock {
        BasicBlock {
            a: self.conv_bn(&format!("{name}.conv1"), c, c, 3, 1, at),
            b: self.conv_bn(&format!("{name}.conv2"), c, c, 3, 1, at),
        }
    }
}

fn stage_of(name: &str) -> String {
    name.split('.').next().unwrap_or(name).to_string()
}

fn build_layout<T: Element>(cfg: &ModelConfig, b: &mut Builder<T>) -> Layout {
    let c = cfg.base_width;
    let k = cfg.num_keypoints;
    let sw = cfg.stem_width;
    let stem = [
        b.conv_bn("stem.0", 3, sw, 3, 2, Resolution::down(1)),
        b.conv_bn("stem.1", sw, sw, 3, 2, Resolution::down(2)),
    ];
    let r0 = Resolution::down(2);

    let wide = cfg.bottleneck_width * ModelConfig::BOTTLENECK_EXPANSION;
    let mut stage1 = Vec::new();
    let mut cin = sw;
    for u in 0..cfg.stage1_units {
        let name = format!("stage1.{u}");
        let bw = cfg.bottleneck_width;
        stage1.push(Bottleneck {
            a: b.conv_bn(&format!("{name}.conv1"), cin, bw, 1, 1, r0),
            b: b.conv_bn(&format!("{name}.conv2"), bw, bw, 3, 1, r0),
            c: b.conv_bn(&format!("{name}.conv3"), bw, wide, 1, 1, r0),
            proj: (cin != wide).then(|| b.conv_bn(&format!("{name}.proj"), cin, wide, 1, 1, r0)),
        });
        cin = wide;
    }

    let mut transitions = Vec::new();
    let mut stages = Vec::new();
    let mut widths = vec![wide];
    for (s, &modules) in cfg.stage_spec.iter().enumerate() {
        let nb = s + 2;
        let stage = format!("stage{}", s + 2);
        let tname = format!("transition{}", s + 1);
        let mut trans = Vec::new();
        for r in 0..nb {
            let width = c << r;
            let at = Resolution::down(2 + r as u32);
            let t = if s == 0 {
                Transition {
                    source: 0,
                    conv: Some(b.conv_bn(&format!("{tname}.{r}"), wide, width, 3, 1 + r, at)),
                }
            } else if r < nb - 1 {
                Transition {
                    source: r,
                    conv: None,
                }
            } else {
                let src = widths[r - 1];
                Transition {
                    source: r - 1,
                    conv: Some(b.conv_bn(&format!("{tname}.{r}"), src, width, 3, 2, at)),
                }
            };
            trans.push(t);
        }
        transitions.push(trans);
        widths = (0..nb).map(|r| c << r).collect();

        let mut mods = Vec::new();
        for m in 0..modules {
            let last = s + 1 == cfg.stage_spec.len() && m + 1 == modules;
            let outputs = if last { 1 } else { nb };
            let name = format!("{stage}.{m}");
            let branches = (0..nb)
                .map(|r| {
                    (0..cfg.units_per_branch)
                        .map(|u| {
                            b.basic(
                                &format!("{name}.branch{r}.{u}"),
                                widths[r],
                                Resolution::down(2 + r as u32),
                            )
                        })
                        .collect()
                })
                .collect();
            let mut fuse = Vec::new();
            for i in 0..outputs {
                let mut row = Vec::new();
                for j in 0..nb {
                    let fname = format!("{name}.fuse.{i}.{j}");
                    row.push(if i == j {
                        Fuse::Identity
                    } else if j > i {
                        Fuse::Up(b.conv_bn(
                            &fname,
                            widths[j],
                            widths[i],
                            1,
                            1,
                            Resolution::down(2 + j as u32),
                        ))
                    } else {
                        Fuse::Down(
                            (0..i - j)
                                .map(|t| {
                                    let cout = if t + 1 == i - j { widths[i] } else { widths[j] };
                                    b.conv_bn(
                                        &format!("{fname}.{t}"),
                                        widths[j],
                                        cout,
                                        3,
                                        2,
                                        Resolution::down(2 + (j + t + 1) as u32),
                                    )
                                })
                                .collect(),
                        )
                    });
                }
                fuse.push(row);
            }
            mods.push(HrModule { branches, fuse });
        }
        stages.push(mods);
    }

    let head = b.head("head", c, 2 * k, r0);

    let mut deconvs = Vec::new();
    for d in 0..cfg.num_deconv_modules {
        let name = format!("deconv{}", d + 1);
        let cin = if cfg.concat_heatmaps_into_deconv {
            c + k
        } else {
            c
        };
        let at = Resolution::up(d as u32 + 1);
        let weight = b.kaiming(format!("{name}.up.weight"), [cin, c, 4, 4], c * 16);
        // Every input pixel scatters a 4x4 patch per output channel.
        b.costs.push(LayerCost {
            stage: name.clone(),
            macs_per_pixel: (cin * c * 16) as u64,
            at: Resolution::up(d as u32),
        });
        let up = ConvSpec {
            weight,
            bias: None,
            stride: 2,
            padding: 1,
        };
        let bn = b.norm(&format!("{name}.up.bn"), c);
        let blocks = (0..cfg.deconv_residual_blocks)
            .map(|u| b.basic(&format!("{name}.block{u}"), c, at))
            .collect();
        let head = b.head(&format!("{name}.head"), c, k, at);
        deconvs.push(DeconvModule {
            up,
            bn,
            blocks,
            head,
        });
    }

    Layout {
        stem,
        stage1,
        transitions,
        stages,
        head,
        deconvs,
    }
}

enum Stats<'s, T> {
    Train(&'s mut [(String, BatchNormStats<T>)]),
    Eval(&'s [(String, BatchNormStats<T>)]),
}

struct Run<'a, T: Element> {
    g: &'a mut Graph<T>,
    vars: &'a [Var],
    stats: Stats<'a, T>,
    bn_cfg: BatchNormConfig,
}

impl<T: Element> Run<'_, T> {
    fn conv(&mut self, x: Var, s: &ConvSpec) -> Result<Var> {
        let bias = s.bias.map(|b| self.vars[b]);
        Ok(self
            .g
            .conv2d(x, self.vars[s.weight], bias, s.stride, s.padding)?)
    }

    fn bn(&mut self, x: Var, n: &Norm) -> Result<Var> {
        let mode = match &mut self.stats {
            Stats::Train(s) => BatchNormMode::Train(&mut s[n.stats].1),
            Stats::Eval(s) => BatchNormMode::Eval(&s[n.stats].1),
        };
        Ok(self
            .g
            .batch_norm(x, self.vars[n.gamma], self.vars[n.beta], mode, self.bn_cfg)?)
    }

    fn conv_bn(&mut self, x: Var, cb: &ConvBn, relu: bool) -> Result<Var> {
        let y = self.conv(x, &cb.conv)?;
        let y = self.bn(y, &cb.bn)?;
        if relu {
            Ok(self.g.relu(y)?)
        } else {
            Ok(y)
        }
    }

    fn basic(&mut self, x: Var, blk: &BasicBlock) -> Result<Var> {
        let y = self.conv_bn(x, &blk.a, true)?;
        let y = self.conv_bn(y, &blk.b, false)?;
        let y = self.g.add(y, x)?;
        Ok(self.g.relu(y)?)
    }

    fn bottleneck(&mut self, x: Var, blk: &Bottleneck) -> Result<Var> {
        let y = self.conv_bn(x, &blk.a, true)?;
        let y = self.conv_bn(y, &blk.b, true)?;
        let y = self.conv_bn(y, &blk.c, false)?;
        let skip = match &blk.proj {
            Some(p) => self.conv_bn(x, p, false)?,
            None => x,
        };
        let y = self.g.add(y, skip)?;
        Ok(self.g.relu(y)?)
    }

    fn module(&mut self, xs: &[Var], m: &HrModule) -> Result<Vec<Var>> {
        let mut ys = Vec::with_capacity(xs.len());
        for (x, blocks) in xs.iter().zip(&m.branches) {
            let mut y = *x;
            for blk in blocks {
                y = self.basic(y, blk)?;
            }
            ys.push(y);
        }
        let mut out = Vec::with_capacity(m.fuse.len());
        for (i, row) in m.fuse.iter().enumerate() {
            let [_, _, h, w] = self.g.value(ys[i]).dims4()?;
            let mut acc: Option<Var> = None;
            for (j, f) in row.iter().enumerate() {
                let term = match f {
                    Fuse::Identity => ys[j],
                    Fuse::Up(cb) => {
                        let t = self.conv_bn(ys[j], cb, false)?;
                        self.g.bilinear_upsample(t, h, w)?
                    }
                    Fuse::Down(chain) => {
                        let mut t = ys[j];
                        for (n, cb) in chain.iter().enumerate() {
                            t = self.conv_bn(t, cb, n + 1 < chain.len())?;
                        }
                        t
                    }
                };
                acc = Some(match acc {
                    Some(a) => self.g.add(a, term)?,
                    None => term,
                });
            }
            out.push(self.g.relu(acc.expect("at least one input branch"))?);
        }
        Ok(out)
    }

    fn network(&mut self, layout: &Layout, cfg: &ModelConfig, images: Var) -> Result<PyramidVars> {
        let mut x = self.conv_bn(images, &layout.stem[0], true)?;
        x = self.conv_bn(x, &layout.stem[1], true)?;
        for blk in &layout.stage1 {
            x = self.bottleneck(x, blk)?;
        }
        let mut xs = vec![x];
        for (trans, modules) in layout.transitions.iter().zip(&layout.stages) {
            let mut next = Vec::with_capacity(trans.len());
            for t in trans {
                let src = xs[t.source];
                next.push(match &t.conv {
                    Some(cb) => self.conv_bn(src, cb, true)?,
                    None => src,
                });
            }
            xs = next;
            for m in modules {
                xs = self.module(&xs, m)?;
            }
        }
        let features = xs[0];
        let k = cfg.num_keypoints;
        let out0 = self.conv(features, &layout.head)?;
        let heat0 = self.g.narrow_channels(out0, 0, k)?;
        let tagmap = self.g.narrow_channels(out0, k, k)?;
        let mut levels = vec![heat0];
        let mut feat = features;
        for d in &layout.deconvs {
            let input = if cfg.concat_heatmaps_into_deconv {
                let heat = *levels.last().expect("level 0 exists");
                self.g.concat_channels(&[feat, heat])?
            } else {
                feat
            };
            let mut y = self.g.conv_transpose2d(
                input,
                self.vars[d.up.weight],
                None,
                d.up.stride,
                d.up.padding,
            )?;
            y = self.bn(y, &d.bn)?;
            y = self.g.relu(y)?;
            for blk in &d.blocks {
                y = self.basic(y, blk)?;
            }
            levels.push(self.conv(y, &d.head)?);
            feat = y;
        }
        Ok(PyramidVars { levels, tagmap })
    }
}

/// A realized network: parameters, batch-norm running statistics and the
/// layer wiring.
#[derive(Clone, Debug)]
pub struct Model<T: Element> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
    stats: Vec<(String, BatchNormStats<T>)>,
    layout: Layout,
    costs: Vec<LayerCost>,
    bn_cfg: BatchNormConfig,
}

/// Builds a model with deterministic initialization from `seed`.
pub fn build_model<T: Element>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    Model::new(config, seed)
}

impl<T: Element> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            stats: Vec::new(),
            costs: Vec::new(),
        };
        let layout = build_layout(config, &mut b);
        Ok(Self {
            config: config.clone(),
            params: b.params,
            stats: b.stats,
            layout,
            costs: b.costs,
            bn_cfg: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[(String, BatchNormStats<T>)] {
        &self.stats
    }

    /// Number of trainable scalars; running statistics are excluded.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// GFLOPs of one forward pass at `input_size`, counting one
    /// multiply-accumulate of a convolution or transposed convolution as one
    /// FLOP. Normalization, activations and resampling are not counted.
    pub fn count_flops(&self, input_size: usize) -> f64 {
        self.complexity(input_size).iter().map(|s| s.gflops).sum()
    }

    /// Parameter and FLOP totals grouped by top-level stage, in network order.
    pub fn complexity(&self, input_size: usize) -> Vec<StageCost> {
        fn entry(out: &mut Vec<StageCost>, stage: &str) -> usize {
            if let Some(i) = out.iter().position(|s| s.stage == stage) {
                return i;
            }
            out.push(StageCost {
                stage: stage.to_string(),
                params: 0,
                gflops: 0.0,
            });
            out.len() - 1
        }
        let mut out = Vec::new();
        for p in &self.params {
            let i = entry(&mut out, &stage_of(&p.name));
            out[i].params += p.numel();
        }
        for c in &self.costs {
            let side = c.at.extent(input_size);
            let i = entry(&mut out, &c.stage);
            out[i].gflops += conv_flops(c.macs_per_pixel, side, side);
        }
        out
    }

    /// Adds every parameter to `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.tensor.clone()))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let div = self.config.size_divisor();
        match shape {
            [_, 3, h, w] if h % div == 0 && w % div == 0 && *h > 0 && *w > 0 => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "input must be N x 3 x H x W with H, W multiples of {div}, got {shape:?}"
            ))),
        }
    }

    /// Records one forward pass. `vars` must come from [`Model::bind`] on the
    /// same graph. Train mode normalizes with batch statistics and updates
    /// the running statistics.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        vars: &[Var],
        images: Var,
        mode: Mode,
    ) -> Result<PyramidVars> {
        self.check_input(g.shape(images))?;
        let Model {
            config,
            stats,
            layout,
            bn_cfg,
            ..
        } = self;
        let stats = match mode {
            Mode::Train => Stats::Train(stats),
            Mode::Eval => Stats::Eval(stats),
        };
        let mut run = Run {
            g,
            vars,
            stats,
            bn_cfg: *bn_cfg,
        };
        run.network(layout, config, images)
    }

    /// Eval-mode forward on a batch.
    pub fn predict(&self, images: &Tensor<T>) -> Result<HeatmapPyramid<T>> {
        self.check_input(images.shape())?;
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.constant(p.tensor.clone()))
            .collect();
        let x = g.constant(images.clone());
        let mut run = Run {
            g: &mut g,
            vars: &vars,
            stats: Stats::Eval(&self.stats),
            bn_cfg: self.bn_cfg,
        };
        let out = run.network(&self.layout, &self.config, x)?;
        Ok(HeatmapPyramid::from_graph(&g, &out))
    }

    /// Shapes of the pyramid for an `n x 3 x h x w` input, without running it.
    pub fn output_shapes(
        &self,
        n: usize,
        h: usize,
        w: usize,
    ) -> Result<(Vec<[usize; 4]>, [usize; 4])> {
        self.check_input(&[n, 3, h, w])?;
        let k = self.config.num_keypoints;
        let levels = (0..=self.config.num_deconv_modules)
            .map(|i| [n, k, (h / 4) << i, (w / 4) << i])
            .collect();
        Ok((levels, [n, k, h / 4, w / 4]))
    }

    /// Moves gradients recorded on `g` into the parameters.
    pub fn collect_grads(&mut self, g: &Graph<T>, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(v) {
                p.tensor.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        posepyr_tensor::zero_grads(&mut self.params);
    }

    pub fn to_checkpoint(&self, metadata: String) -> Checkpoint<T> {
        let mut buffers = Vec::with_capacity(2 * self.stats.len());
        for (name, s) in &self.stats {
            let c = s.mean.len();
            buffers.push((
                format!("{name}.running_mean"),
                Tensor::from_vec(&[c], s.mean.clone()).expect("1-d"),
            ));
            buffers.push((
                format!("{name}.running_var"),
                Tensor::from_vec(&[c], s.var.clone()).expect("1-d"),
            ));
        }
        Checkpoint {
            params: self.params.clone(),
            buffers,
            metadata,
        }
    }

    /// Restores parameters, optimizer state and running statistics. Every
    /// entry must match by name and shape.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        if ckpt.params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(&ckpt.params) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                    theirs.name,
                    theirs.tensor.shape(),
                    mine.name,
                    mine.tensor.shape()
                )));
            }
        }
        if ckpt.buffers.len() != 2 * self.stats.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} buffers, model expects {}",
                ckpt.buffers.len(),
                2 * self.stats.len()
            )));
        }
        for ((name, s), pair) in self.stats.iter().zip(ckpt.buffers.chunks(2)) {
            for (suffix, (bname, t)) in ["running_mean", "running_var"].iter().zip(pair) {
                if *bname != format!("{name}.{suffix}") || t.shape() != [s.mean.len()] {
                    return Err(Error::InvalidArgument(format!(
                        "checkpoint buffer {bname} {:?} does not match {name}.{suffix}",
                        t.shape()
                    )));
                }
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(&ckpt.params) {
            mine.tensor = theirs.tensor.clone().with_requires_grad(true);
            mine.adam = theirs.adam.clone();
        }
        for ((_, s), pair) in self.stats.iter_mut().zip(ckpt.buffers.chunks(2)) {
            s.mean = pair[0].1.data().to_vec();
            s.var = pair[1].1.data().to_vec();
        }
        Ok(())
    }
}
