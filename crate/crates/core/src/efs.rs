//! Ego-compatible feature synthesis: lifts a pseudo-BEV map into the ego
//! encoder's latent grid.
//!
//! ```text
//! O  = Enc_L(Expand(X))                                  H × W × C/2
//! Z1 = Up1(Down1(O + pool(F1')))                         H × W × C/2
//! Z2 = Up2(Down2(Down1(O) + pool(F1')))                  H × W × C/2
//! F^ = RB(RB(RB(Proj([O, Z1, Z2]))))                     H × W × C
//! ```
//!
//! `F1'` is the ego feature with adjacent channel pairs averaged (C → C/2).
//! `Down1` is one set of weights used by both branches. Every block is
//! conv → batch norm → SiLU except the second half of a residual block, which
//! has no activation before the skip sum.

use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::raster::{GridSpec, PseudoBev};
use crate::tensor::{adaptive_avg_pool, bilinear_upsample, bn_affine, conv2d, silu, BnAffine, ConvParams, FeatureMap};

pub const DEFAULT_BASE_CHANNELS: usize = 64;

const PARAMS_MAGIC: &str = "alf-efs-params 1";

#[derive(Debug, Clone, PartialEq)]
pub struct EfsConfig {
    /// Channels after replication of the pseudo-BEV map.
    pub c0: usize,
    /// Number of stride-2 encoder stages; `2^levels = H_bev / H`.
    pub levels: usize,
    /// Ego feature channels `C`.
    pub channels: usize,
    pub grid: GridSpec,
    pub rows: usize,
    pub cols: usize,
}

impl EfsConfig {
    /// Derives the stage count from the ratio of BEV grid to feature dims.
    pub fn new(grid: GridSpec, rows: usize, cols: usize, channels: usize) -> Result<Self> {
        grid.validate()?;
        let (hb, wb) = grid.dims();
        if rows == 0 || cols == 0 || hb % rows != 0 || wb % cols != 0 || hb / rows != wb / cols {
            return Err(Error::config(format!(
                "feature grid {rows}x{cols} is not a uniform power-of-two reduction of {hb}x{wb}"
            )));
        }
        let ratio = hb / rows;
        if !ratio.is_power_of_two() || ratio < 2 {
            return Err(Error::config(format!("downsampling {hb}/{rows} is not a power of two >= 2")));
        }
        let cfg =
            Self { c0: DEFAULT_BASE_CHANNELS, levels: ratio.trailing_zeros() as usize, channels, grid, rows, cols };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_agent(agent: &AgentConfig) -> Result<Self> {
        agent.validate()?;
        let (h, w) = agent.feature_dims();
        Self::new(agent.grid, h, w, agent.feature_channels)
    }

    pub fn with_base_channels(mut self, c0: usize) -> Self {
        self.c0 = c0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (hb, wb) = self.grid.dims();
        if self.levels == 0 || hb != self.rows << self.levels || wb != self.cols << self.levels {
            return Err(Error::config(format!(
                "{} stages do not map {hb}x{wb} to {}x{}",
                self.levels, self.rows, self.cols
            )));
        }
        if self.rows % 4 != 0 || self.cols % 4 != 0 {
            return Err(Error::config(format!(
                "feature grid {}x{} must be divisible by 4 for the two-level pyramid",
                self.rows, self.cols
            )));
        }
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(Error::config(format!("ego channels {} must be even", self.channels)));
        }
        if self.c0 == 0 {
            return Err(Error::config("base channels must be positive"));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.channels / 2
    }

    /// Output channels of each encoder stage: `c0 · 2^ℓ` capped at `C/2`, with
    /// the last stage always `C/2`.
    pub fn stage_channels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (1..=self.levels).map(|l| self.c0.saturating_mul(1 << l).min(self.half())).collect();
        if let Some(last) = out.last_mut() {
            *last = self.half();
        }
        out
    }

    pub fn bev_dims(&self) -> (usize, usize) {
        self.grid.dims()
    }
}

/// Conv + batch norm, followed by SiLU when used as a full block.
#[derive(Debug, Clone, PartialEq)]
pub struct Cba {
    pub conv: ConvParams<f32>,
    pub bn: BnAffine<f32>,
}

impl Cba {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self { conv: ConvParams::zeros(in_channels, out_channels, 3, stride), bn: BnAffine::identity(out_channels) }
    }

    fn conv_bn(&self, x: &FeatureMap) -> Result<FeatureMap> {
        bn_affine(&conv2d(x, &self.conv)?, &self.bn)
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(silu(&self.conv_bn(x)?))
    }
}

/// `x + BN(Conv(SiLU(BN(Conv(x)))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub inner: Cba,
    pub outer: Cba,
}

impl ResBlock {
    pub fn new(channels: usize) -> Self {
        Self { inner: Cba::new(channels, channels, 1), outer: Cba::new(channels, channels, 1) }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        x.add(&self.outer.conv_bn(&self.inner.forward(x)?)?)
    }
}

/// Encoder stages from `c0` channels to `C/2`, zero-initialized.
pub fn oce_stages(config: &EfsConfig) -> Vec<[Cba; 2]> {
    let mut prev = config.c0;
    config
        .stage_channels()
        .into_iter()
        .map(|ch| {
            let stage = [Cba::new(prev, ch, 2), Cba::new(ch, ch, 1)];
            prev = ch;
            stage
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfsParams {
    pub config: EfsConfig,
    pub seed: u64,
    /// Per stage: stride-2 block then stride-1 block.
    pub oce: Vec<[Cba; 2]>,
    pub down1: Cba,
    pub down2: Cba,
    pub up1: Cba,
    pub up2: Cba,
    pub proj: [Cba; 2],
    pub res: [ResBlock; 3],
}

impl EfsParams {
    /// All-zero weights with identity batch norm.
    pub fn zeros(config: &EfsConfig) -> Result<Self> {
        config.validate()?;
        let (half, c) = (config.half(), config.channels);
        Ok(Self {
            config: config.clone(),
            seed: 0,
            oce: oce_stages(config),
            down1: Cba::new(half, half, 2),
            down2: Cba::new(half, half, 2),
            up1: Cba::new(half, half, 1),
            up2: Cba::new(half, half, 1),
            proj: [Cba::new(3 * half, c, 1), Cba::new(c, c, 1)],
            res: [ResBlock::new(c), ResBlock::new(c), ResBlock::new(c)],
        })
    }

    /// Blocks in canonical order; this order fixes both the initialization draw
    /// sequence and the serialized layout.
    pub fn blocks(&self) -> Vec<(String, &Cba)> {
        let mut v = Vec::new();
        for (l, [down, refine]) in self.oce.iter().enumerate() {
            v.push((format!("oce.{l}.down"), down));
            v.push((format!("oce.{l}.refine"), refine));
        }
        v.push(("eim.down1".into(), &self.down1));
        v.push(("eim.down2".into(), &self.down2));
        v.push(("eim.up1".into(), &self.up1));
        v.push(("eim.up2".into(), &self.up2));
        v.push(("elr.proj.0".into(), &self.proj[0]));
        v.push(("elr.proj.1".into(), &self.proj[1]));
        for (j, rb) in self.res.iter().enumerate() {
            v.push((format!("elr.res.{j}.inner"), &rb.inner));
            v.push((format!("elr.res.{j}.outer"), &rb.outer));
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut Cba> {
        let mut v: Vec<&mut Cba> = Vec::new();
        for [down, refine] in self.oce.iter_mut() {
            v.push(down);
            v.push(refine);
        }
        v.extend([&mut self.down1, &mut self.down2, &mut self.up1, &mut self.up2]);
        let [p0, p1] = &mut self.proj;
        v.extend([p0, p1]);
        for rb in self.res.iter_mut() {
            v.push(&mut rb.inner);
            v.push(&mut rb.outer);
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.conv.weight.len() + b.conv.bias.len() + 4 * b.bn.channels()).sum()
    }
}

/// Glorot-uniform bound for a conv block.
pub fn glorot_bound(conv: &ConvParams<f32>) -> f64 {
    let k2 = (conv.kernel * conv.kernel) as f64;
    (6.0 / ((conv.in_channels + conv.out_channels) as f64 * k2)).sqrt()
}

/// Seeded initialization. A SplitMix64 stream with state `seed` draws one
/// value per weight, blocks in [`EfsParams::blocks`] order and weights in
/// out × in × ky × kx order: `u = (next >> 11) · 2^-53`, `w = a · (2u − 1)`.
/// Biases are zero and batch norm starts at identity.
pub fn init_params(cfg: &EfsConfig, seed: u64) -> Result<EfsParams> {
    let mut p = EfsParams::zeros(cfg)?;
    p.seed = seed;
    glorot_init(p.blocks_mut(), seed);
    Ok(p)
}

/// Fills conv weights of `blocks`, in order, from one SplitMix64 stream.
pub fn glorot_init<'a>(blocks: impl IntoIterator<Item = &'a mut Cba>, seed: u64) {
    let mut rng = SplitMix64::seed_from_u64(seed);
    for block in blocks {
        let a = glorot_bound(&block.conv);
        for w in block.conv.weight.iter_mut() {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            *w = (a * (2.0 * u - 1.0)) as f32;
        }
    }
}

/// Replicates the single-channel map into `c0` channels.
pub fn expand(x: &PseudoBev, c0: usize) -> FeatureMap {
    let (h, w, _) = x.map.shape();
    let mut data = Vec::with_capacity(h * w * c0);
    for &v in x.map.data() {
        data.extend(std::iter::repeat_n(v, c0));
    }
    FeatureMap::from_vec(h, w, c0, data).expect("length matches by construction")
}

/// Averages channel pairs `(2k, 2k+1)`.
pub fn halve_channels(f: &FeatureMap) -> Result<FeatureMap> {
    let (h, w, c) = f.shape();
    if c % 2 != 0 {
        return Err(Error::shape(format!("cannot pair {c} channels")));
    }
    let data = f.data().chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    FeatureMap::from_vec(h, w, c / 2, data)
}

fn expect_shape(what: &str, f: &FeatureMap, shape: (usize, usize, usize)) -> Result<()> {
    if f.shape() != shape {
        return Err(Error::shape(format!("{what} is {:?}, expected {shape:?}", f.shape())));
    }
    Ok(())
}

pub fn oce_forward(x: &PseudoBev, p: &EfsParams) -> Result<FeatureMap> {
    let cfg = &p.config;
    let (hb, wb) = cfg.bev_dims();
    if x.map.shape() != (hb, wb, 1) {
        return Err(Error::config(format!("pseudo-BEV is {:?}, synthesizer grid is {hb}x{wb}", x.map.shape())));
    }
    let o = run_stages(x, &p.oce, cfg.c0)?;
    expect_shape("object feature", &o, (cfg.rows, cfg.cols, cfg.half()))?;
    Ok(o)
}

/// `Expand` followed by the stride-2 / stride-1 stage pairs.
pub fn run_stages(x: &PseudoBev, stages: &[[Cba; 2]], c0: usize) -> Result<FeatureMap> {
    let mut o = expand(x, c0);
    for [down, refine] in stages {
        o = refine.forward(&down.forward(&o)?)?;
    }
    Ok(o)
}

pub fn eim_forward(o: &FeatureMap, f1: &FeatureMap, p: &EfsParams) -> Result<(FeatureMap, FeatureMap)> {
    let cfg = &p.config;
    let (h, w) = (cfg.rows, cfg.cols);
    expect_shape("object feature", o, (h, w, cfg.half()))?;
    expect_shape("ego feature", f1, (h, w, cfg.channels))?;
    let f1 = halve_channels(f1)?;

    let inj1 = o.add(&adaptive_avg_pool(&f1, h, w)?)?;
    let z1 = p.up1.forward(&bilinear_upsample(&p.down1.forward(&inj1)?, 2)?)?;

    let d = p.down1.forward(o)?;
    let inj2 = d.add(&adaptive_avg_pool(&f1, d.rows(), d.cols())?)?;
    let z2 = p.up2.forward(&bilinear_upsample(&p.down2.forward(&inj2)?, 4)?)?;
    Ok((z1, z2))
}

pub fn elr_forward(o: &FeatureMap, z1: &FeatureMap, z2: &FeatureMap, p: &EfsParams) -> Result<FeatureMap> {
    let cfg = &p.config;
    let shape = (cfg.rows, cfg.cols, cfg.half());
    expect_shape("object feature", o, shape)?;
    expect_shape("first pyramid feature", z1, shape)?;
    expect_shape("second pyramid feature", z2, shape)?;
    let cat = FeatureMap::concat_channels(&[o, z1, z2])?;
    let mut f = p.proj[1].forward(&p.proj[0].forward(&cat)?)?;
    for rb in &p.res {
        f = rb.forward(&f)?;
    }
    Ok(f)
}

pub fn efs_forward(x: &PseudoBev, f1: &FeatureMap, p: &EfsParams) -> Result<FeatureMap> {
    let o = oce_forward(x, p)?;
    let (z1, z2) = eim_forward(&o, f1, p)?;
    elr_forward(&o, &z1, &z2, p)
}

fn block_tensors(b: &Cba) -> [(&'static str, Vec<usize>, &[f32]); 7] {
    let c = &b.conv;
    let eps = std::slice::from_ref(&b.bn.eps);
    [
        ("weight", vec![c.out_channels, c.in_channels, c.kernel, c.kernel], &c.weight),
        ("bias", vec![c.out_channels], &c.bias),
        ("bn.mean", vec![b.bn.mean.len()], &b.bn.mean),
        ("bn.var", vec![b.bn.var.len()], &b.bn.var),
        ("bn.scale", vec![b.bn.scale.len()], &b.bn.scale),
        ("bn.shift", vec![b.bn.shift.len()], &b.bn.shift),
        ("bn.eps", vec![1], eps),
    ]
}

fn manifest(p: &EfsParams) -> Vec<(String, Vec<usize>)> {
    p.blocks()
        .into_iter()
        .flat_map(|(name, b)| block_tensors(b).map(|(t, shape, _)| (format!("{name}.{t}"), shape)))
        .collect()
}

/// Text header (grid, config, seed, one `tensor name dims…` line per tensor,
/// then `---`) followed by every tensor as little-endian `f32`, in header order.
pub fn write_params<W: Write>(p: &EfsParams, mut w: W) -> std::io::Result<()> {
    let c = &p.config;
    let g = &c.grid;
    writeln!(w, "{PARAMS_MAGIC}")?;
    writeln!(w, "grid {} {} {} {} {} {}", g.x_min, g.x_max, g.y_min, g.y_max, g.v_x, g.v_y)?;
    writeln!(w, "config {} {} {} {} {}", c.c0, c.levels, c.channels, c.rows, c.cols)?;
    writeln!(w, "seed {}", p.seed)?;
    for (name, shape) in manifest(p) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(w, "tensor {name} {}", dims.join(" "))?;
    }
    writeln!(w, "---")?;
    for (_, b) in p.blocks() {
        for (_, _, data) in block_tensors(b) {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn header_fields<'a>(line: &'a str, key: &str, n: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    let fields: Vec<&str> = it.by_ref().skip(1).collect();
    if !line.starts_with(key) || fields.len() != n {
        return Err(Error::decode(format!("params header: expected `{key}` with {n} values, got `{line}`")));
    }
    Ok(fields)
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::decode(format!("params header: bad number `{s}`")))
}

pub fn read_params<R: BufRead>(mut r: R) -> Result<EfsParams> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::decode("params header is not terminated by `---`"));
        }
        let line = line.trim_end().to_string();
        if line == "---" {
            break;
        }
        lines.push(line);
    }
    if lines.len() < 4 || lines[0] != PARAMS_MAGIC {
        return Err(Error::decode("not an EFS parameter file"));
    }
    let g: Vec<f64> = header_fields(&lines[1], "grid", 6)?.into_iter().map(parse_num).collect::<Result<_>>()?;
    let c: Vec<usize> = header_fields(&lines[2], "config", 5)?.into_iter().map(parse_num).collect::<Result<_>>()?;
    let seed: u64 = parse_num(header_fields(&lines[3], "seed", 1)?[0])?;
    let config = EfsConfig {
        c0: c[0],
        levels: c[1],
        channels: c[2],
        grid: GridSpec::new([g[0], g[1]], [g[2], g[3]], [g[4], g[5]]),
        rows: c[3],
        cols: c[4],
    };
    let mut p = EfsParams::zeros(&config)?;
    p.seed = seed;

    let expect = manifest(&p);
    if expect.len() != lines.len() - 4 {
        return Err(Error::decode(format!(
            "params file lists {} tensors, configuration needs {}",
            lines.len() - 4,
            expect.len()
        )));
    }
    for ((name, shape), line) in expect.iter().zip(&lines[4..]) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        if *line != format!("tensor {name} {}", dims.join(" ")) {
            return Err(Error::decode(format!("params manifest mismatch: `{line}`, expected tensor {name}")));
        }
    }

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let total: usize = expect.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != 4 * total {
        return Err(Error::decode(format!("params payload is {} bytes, expected {}", bytes.len(), 4 * total)));
    }
    let mut vals = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut fill = |dst: &mut [f32]| dst.iter_mut().for_each(|v| *v = vals.next().expect("length checked"));
    for b in p.blocks_mut() {
        fill(&mut b.conv.weight);
        fill(&mut b.conv.bias);
        fill(&mut b.bn.mean);
        fill(&mut b.bn.var);
        fill(&mut b.bn.scale);
        fill(&mut b.bn.shift);
        fill(std::slice::from_mut(&mut b.bn.eps));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::silu_scalar;
    use rand::Rng;

    fn small_cfg() -> EfsConfig {
        // 32×16 grid at 1 m, stride 4 → 8×4 feature, C = 8.
        EfsConfig::new(GridSpec::new([0.0, 32.0], [0.0, 16.0], [1.0, 1.0]), 8, 4, 8).unwrap().with_base_channels(2)
    }

    fn random_bev(cfg: &EfsConfig, seed: u64, density: f64) -> PseudoBev {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut x = PseudoBev::empty(cfg.grid);
        for v in x.map.data_mut() {
            if rng.random_bool(density) {
                *v = rng.random_range(0.0..1.0);
            }
        }
        x
    }

    fn random_map(rows: usize, cols: usize, ch: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::seed_from_u64(seed);
        FeatureMap::from_fn(rows, cols, ch, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn derives_stages_per_preset() {
        for (name, levels) in [("PP4", 2), ("PP6", 1), ("PP8", 1), ("SD2", 3), ("SD3", 2)] {
            let cfg = EfsConfig::for_agent(&AgentConfig::preset(name).unwrap()).unwrap();
            assert_eq!(cfg.levels, levels, "{name}");
        }
    }

    #[test]
    fn channel_plan() {
        let pp4 = EfsConfig::for_agent(&AgentConfig::preset("PP4").unwrap()).unwrap();
        assert_eq!(pp4.stage_channels(), vec![128, 128]);
        let sd2 = EfsConfig::for_agent(&AgentConfig::preset("SD2").unwrap()).unwrap();
        assert_eq!(sd2.stage_channels(), vec![128, 256, 256]);
        let pp6 = EfsConfig::for_agent(&AgentConfig::preset("PP6").unwrap()).unwrap();
        assert_eq!(pp6.stage_channels(), vec![128]);
        let wide = small_cfg().with_base_channels(1);
        assert_eq!(wide.stage_channels(), vec![2, 4]);
    }

    #[test]
    fn rejects_bad_geometry() {
        let g = GridSpec::new([0.0, 32.0], [0.0, 16.0], [1.0, 1.0]);
        assert!(EfsConfig::new(g, 8, 8, 8).is_err());
        assert!(EfsConfig::new(g, 32, 16, 8).is_err());
        assert!(EfsConfig::new(g, 8, 4, 7).is_err());
        let g = GridSpec::new([0.0, 24.0], [0.0, 24.0], [1.0, 1.0]);
        assert!(EfsConfig::new(g, 6, 6, 8).is_err(), "6 is not divisible by 4");
    }

    fn splitmix_reference(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = small_cfg();
        let a = init_params(&cfg, 7).unwrap();
        assert_eq!(a, init_params(&cfg, 7).unwrap());
        let b = init_params(&cfg, 8).unwrap();
        assert_ne!(a.oce[0][0].conv.weight[0], b.oce[0][0].conv.weight[0]);

        for (name, block) in a.blocks() {
            let c = &block.conv;
            let bound = (6.0 / (9.0 * (c.in_channels + c.out_channels) as f64)).sqrt() as f32;
            assert!(c.weight.iter().all(|w| w.abs() <= bound), "{name}");
            assert!(c.bias.iter().all(|&v| v == 0.0));
            assert_eq!(block.bn, BnAffine::identity(c.out_channels));
        }

        let mut state = 7u64;
        let mut draws = Vec::new();
        for (_, block) in a.blocks() {
            let bound = glorot_bound(&block.conv);
            for _ in 0..block.conv.weight.len() {
                let u = (splitmix_reference(&mut state) >> 11) as f64 / 9007199254740992.0;
                draws.push((bound * (2.0 * u - 1.0)) as f32);
            }
        }
        let got: Vec<f32> = a.blocks().iter().flat_map(|(_, b)| b.conv.weight.clone()).collect();
        assert_eq!(got, draws);
    }

    #[test]
    fn expand_replicates() {
        let cfg = small_cfg();
        let x = random_bev(&cfg, 1, 0.3);
        let one = expand(&x, 1);
        assert_eq!(one, x.map);
        let e = expand(&x, 64);
        for r in 0..e.rows() {
            for c in 0..e.cols() {
                assert!(e.cell(r, c).iter().all(|&v| v == x.value(r, c)));
            }
        }
    }

    #[test]
    fn halve_channels_pairs() {
        let f = FeatureMap::from_fn(2, 3, 4, |r, c, k| (r * 100 + c * 10 + k) as f32);
        let h = halve_channels(&f).unwrap();
        assert_eq!(h.shape(), (2, 3, 2));
        assert_eq!(h.get(1, 2, 0), 120.5);
        assert_eq!(h.get(1, 2, 1), 122.5);
    }

    #[test]
    fn zero_map_gives_zero_object_feature() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 3).unwrap();
        let o = oce_forward(&PseudoBev::empty(cfg.grid), &p).unwrap();
        assert_eq!(o.shape(), (8, 4, 4));
        assert!(o.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oce_rejects_foreign_grid() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 3).unwrap();
        let other = PseudoBev::empty(GridSpec::new([0.0, 16.0], [0.0, 16.0], [1.0, 1.0]));
        assert!(matches!(oce_forward(&other, &p), Err(Error::Config(_))));
    }

    #[test]
    fn eim_injection_traces() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 4).unwrap();
        let o = random_map(8, 4, 4, 10);
        let f1 = random_map(8, 4, 8, 11);

        let (z1, z2) = eim_forward(&o, &FeatureMap::zeros(8, 4, 8), &p).unwrap();
        let t1 = p.up1.forward(&bilinear_upsample(&p.down1.forward(&o).unwrap(), 2).unwrap()).unwrap();
        let t2 = p
            .up2
            .forward(&bilinear_upsample(&p.down2.forward(&p.down1.forward(&o).unwrap()).unwrap(), 4).unwrap())
            .unwrap();
        assert_eq!(z1, t1);
        assert_eq!(z2, t2);

        let (z1, z2) = eim_forward(&FeatureMap::zeros(8, 4, 4), &f1, &p).unwrap();
        let half = halve_channels(&f1).unwrap();
        let t1 = p.up1.forward(&bilinear_upsample(&p.down1.forward(&half).unwrap(), 2).unwrap()).unwrap();
        let d = p.down1.forward(&FeatureMap::zeros(8, 4, 4)).unwrap();
        let inj = d.add(&adaptive_avg_pool(&half, 4, 2).unwrap()).unwrap();
        let t2 = p.up2.forward(&bilinear_upsample(&p.down2.forward(&inj).unwrap(), 4).unwrap()).unwrap();
        assert_eq!(z1, t1);
        assert_eq!(z2, t2);
    }

    #[test]
    fn eim_constant_inputs_are_constant_inside() {
        // Center-tap kernels make every block pointwise.
        let g = GridSpec::new([0.0, 64.0], [0.0, 64.0], [1.0, 1.0]);
        let cfg = EfsConfig::new(g, 16, 16, 4).unwrap().with_base_channels(2);
        let mut p = init_params(&cfg, 5).unwrap();
        for b in [&mut p.down1, &mut p.down2, &mut p.up1, &mut p.up2] {
            b.conv.weight.fill(0.0);
            for ch in 0..2 {
                let i = b.conv.weight_index(ch, ch, 1, 1);
                b.conv.weight[i] = 0.5;
            }
        }
        let o = FeatureMap::filled(16, 16, 2, 0.3);
        let f1 = FeatureMap::filled(16, 16, 4, -0.2);
        let (z1, z2) = eim_forward(&o, &f1, &p).unwrap();
        let v1 = silu_scalar(0.5 * silu_scalar(0.5 * 0.1f32));
        let v2 = silu_scalar(0.5 * silu_scalar(0.5 * (silu_scalar(0.5 * 0.3f32) - 0.2)));
        for r in 0..16 {
            for c in 0..16 {
                for k in 0..2 {
                    assert!((z1.get(r, c, k) - v1).abs() < 1e-6);
                    assert!((z2.get(r, c, k) - v2).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zeroed_residual_branches_are_identity() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg, 6).unwrap();
        for rb in &mut p.res {
            rb.outer.conv.weight.fill(0.0);
        }
        let o = random_map(8, 4, 4, 12);
        let z1 = random_map(8, 4, 4, 13);
        let z2 = random_map(8, 4, 4, 14);
        let cat = FeatureMap::concat_channels(&[&o, &z1, &z2]).unwrap();
        let projected = p.proj[1].forward(&p.proj[0].forward(&cat).unwrap()).unwrap();
        assert_eq!(elr_forward(&o, &z1, &z2, &p).unwrap(), projected);
    }

    #[test]
    fn forward_is_finite_and_deterministic() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 9).unwrap();
        for s in 0..100 {
            let x = random_bev(&cfg, 100 + s, 0.2);
            let f1 = random_map(8, 4, 8, 200 + s);
            let out = efs_forward(&x, &f1, &p).unwrap();
            assert_eq!(out.shape(), (8, 4, 8));
            assert!(out.is_finite());
            if s < 3 {
                assert_eq!(out, efs_forward(&x, &f1, &p).unwrap());
            }
        }
    }

    #[test]
    fn shape_errors() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 9).unwrap();
        let x = random_bev(&cfg, 1, 0.2);
        assert!(efs_forward(&x, &FeatureMap::zeros(8, 4, 6), &p).is_err());
        assert!(efs_forward(&x, &FeatureMap::zeros(4, 4, 8), &p).is_err());
        let o = FeatureMap::zeros(8, 4, 4);
        assert!(elr_forward(&o, &o, &FeatureMap::zeros(8, 4, 5), &p).is_err());
    }

    #[test]
    fn params_round_trip() {
        let cfg = EfsConfig::new(GridSpec::new([-3.2, 3.2], [-1.6, 1.6], [0.1, 0.1]), 16, 8, 6)
            .unwrap()
            .with_base_channels(3);
        let mut p = init_params(&cfg, u64::MAX - 3).unwrap();
        p.res[1].inner.bn.var[2] = 0.37;
        p.proj[0].conv.bias[5] = -1.25e-7;
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        let mut again = Vec::new();
        write_params(&back, &mut again).unwrap();
        assert_eq!(again, buf);

        buf.pop();
        assert!(matches!(read_params(buf.as_slice()), Err(Error::Decode(_))));
        assert!(read_params(&b"garbage\n---\n"[..]).is_err());
    }

    #[test]
    fn parameter_count_matches_manifest() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 1).unwrap();
        let listed: usize = manifest(&p).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(listed, p.parameter_count() + p.blocks().len());
    }
}
