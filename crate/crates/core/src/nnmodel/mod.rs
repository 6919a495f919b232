//! Desk-scale networks with full reverse-mode passes.
//!
//! Two kinds share one structure: a tiny pre-norm transformer encoder
//! (patch embedding, `depth` blocks of multi-head attention and a GELU
//! feed-forward, final layer norm, mean pooling over tokens) and a residual
//! MLP with the same feed-forward blocks and no attention. The six block
//! projections `q, k, v, o, m1, m2` are the slots that adaptation can wrap.

pub mod layers;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::geometry::GeometryDelta;
use crate::numkit::{Matrix, SeededRng};
use crate::paidlayer::{PaidLinear, UpdateMode};

pub use layers::{argmax_rows, softmax_cross_entropy, Dense, LayerNorm, Proj};
use layers::{gelu, gelu_grad, AttentionCore};

/// Named gradients, ordered by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    TinyTransformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Sequence length; the input is split into this many equal patches.
    /// Ignored by the MLP kind.
    pub tokens: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    /// Block (1-based) whose pooled output feeds the alignment loss. `None`
    /// or `depth` means the final normalized output.
    pub feature_tap: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::TinyTransformer,
            dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 2.0,
            tokens: 8,
            n_classes: 6,
            input_dim: 64,
            feature_tap: None,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        ((self.dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    fn token_count(&self) -> usize {
        match self.kind {
            ModelKind::Mlp => 1,
            ModelKind::TinyTransformer => self.tokens,
        }
    }

    fn patch(&self) -> usize {
        self.input_dim / self.token_count()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("tokens", self.tokens),
            ("n_classes", self.n_classes),
            ("input_dim", self.input_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(PaidError::Config(format!("model.{name} must be at least 1")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(PaidError::Config(format!(
                "model.dim {} is not divisible by model.heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(PaidError::Config("model.mlp_ratio must be positive".into()));
        }
        if self.kind == ModelKind::TinyTransformer && !self.input_dim.is_multiple_of(self.tokens) {
            return Err(PaidError::Config(format!(
                "model.input_dim {} is not divisible by model.tokens {}",
                self.input_dim, self.tokens
            )));
        }
        if let Some(tap) = self.feature_tap {
            if tap == 0 || tap > self.depth {
                return Err(PaidError::Config(format!(
                    "model.feature_tap {tap} outside 1..={}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    /// Parameter count of a freshly built network.
    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.dim, self.hidden(), self.n_classes);
        let ffn = d * h + h + h * d + d;
        let head = d * c + c;
        match self.kind {
            ModelKind::Mlp => self.input_dim * d + d + self.depth * ffn + head,
            ModelKind::TinyTransformer => {
                let embed = self.patch() * d + d + self.tokens * d;
                let block = 4 * d + 4 * (d * d + d) + ffn;
                embed + self.depth * block + 2 * d + head
            }
        }
    }
}

/// One of the six adaptable projections in a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerSlot {
    Q,
    K,
    V,
    O,
    M1,
    M2,
}

impl LayerSlot {
    pub const ALL: [LayerSlot; 6] = [
        LayerSlot::Q,
        LayerSlot::K,
        LayerSlot::V,
        LayerSlot::O,
        LayerSlot::M1,
        LayerSlot::M2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerSlot::Q => "q",
            LayerSlot::K => "k",
            LayerSlot::V => "v",
            LayerSlot::O => "o",
            LayerSlot::M1 => "m1",
            LayerSlot::M2 => "m2",
        }
    }
}

/// Set of slots to wrap. Parsed from compact strings such as `qkvom`, `qv`
/// or `m1`; a bare `m` means both feed-forward projections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSelector(Vec<LayerSlot>);

impl LayerSelector {
    pub fn all() -> Self {
        Self(LayerSlot::ALL.to_vec())
    }

    pub fn new(slots: impl IntoIterator<Item = LayerSlot>) -> Result<Self> {
        let mut v: Vec<LayerSlot> = slots.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(PaidError::Config("empty layer selector".into()));
        }
        Ok(Self(v))
    }

    pub fn contains(&self, slot: LayerSlot) -> bool {
        self.0.contains(&slot)
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.0
    }
}

impl Default for LayerSelector {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let has = |s| self.0.contains(&s);
        for s in [LayerSlot::Q, LayerSlot::K, LayerSlot::V, LayerSlot::O] {
            if has(s) {
                f.write_str(s.name())?;
            }
        }
        match (has(LayerSlot::M1), has(LayerSlot::M2)) {
            (true, true) => f.write_str("m"),
            (true, false) => f.write_str("m1"),
            (false, true) => f.write_str("m2"),
            (false, false) => Ok(()),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = PaidError;

    fn from_str(s: &str) -> Result<Self> {
        let mut slots = Vec::new();
        let mut chars = s.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                'q' => slots.push(LayerSlot::Q),
                'k' => slots.push(LayerSlot::K),
                'v' => slots.push(LayerSlot::V),
                'o' => slots.push(LayerSlot::O),
                'm' => match chars.peek() {
                    Some('1') => {
                        chars.next();
                        slots.push(LayerSlot::M1);
                    }
                    Some('2') => {
                        chars.next();
                        slots.push(LayerSlot::M2);
                    }
                    _ => slots.extend([LayerSlot::M1, LayerSlot::M2]),
                },
                other => {
                    return Err(PaidError::Config(format!(
                        "invalid layer selector {s:?}: unexpected {other:?}"
                    )))
                }
            }
        }
        Self::new(slots)
    }
}

impl Serialize for LayerSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
struct Attention {
    ln: LayerNorm,
    q: Proj,
    k: Proj,
    v: Proj,
    o: Proj,
    core: AttentionCore,
}

#[derive(Clone, Debug)]
pub struct Block {
    attn: Option<Attention>,
    ln2: Option<LayerNorm>,
    m1: Proj,
    m2: Proj,
    gelu_input: Option<Matrix>,
}

impl Block {
    fn new(cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let (d, h) = (cfg.dim, cfg.hidden());
        let transformer = cfg.kind == ModelKind::TinyTransformer;
        let attn = transformer.then(|| Attention {
            ln: LayerNorm::new(d),
            q: Proj::Dense(Dense::init(d, d, rng)),
            k: Proj::Dense(Dense::init(d, d, rng)),
            v: Proj::Dense(Dense::init(d, d, rng)),
            o: Proj::Dense(Dense::init(d, d, rng)),
            core: AttentionCore::new(cfg.heads, cfg.tokens),
        });
        Self {
            attn,
            ln2: transformer.then(|| LayerNorm::new(d)),
            m1: Proj::Dense(Dense::init(d, h, rng)),
            m2: Proj::Dense(Dense::init(h, d, rng)),
            gelu_input: None,
        }
    }

    pub fn slot(&self, slot: LayerSlot) -> Option<&Proj> {
        match slot {
            LayerSlot::Q => self.attn.as_ref().map(|a| &a.q),
            LayerSlot::K => self.attn.as_ref().map(|a| &a.k),
            LayerSlot::V => self.attn.as_ref().map(|a| &a.v),
            LayerSlot::O => self.attn.as_ref().map(|a| &a.o),
            LayerSlot::M1 => Some(&self.m1),
            LayerSlot::M2 => Some(&self.m2),
        }
    }

    fn slot_mut(&mut self, slot: LayerSlot) -> Option<&mut Proj> {
        match slot {
            LayerSlot::Q => self.attn.as_mut().map(|a| &mut a.q),
            LayerSlot::K => self.attn.as_mut().map(|a| &mut a.k),
            LayerSlot::V => self.attn.as_mut().map(|a| &mut a.v),
            LayerSlot::O => self.attn.as_mut().map(|a| &mut a.o),
            LayerSlot::M1 => Some(&mut self.m1),
            LayerSlot::M2 => Some(&mut self.m2),
        }
    }

    fn forward(&mut self, h: &Matrix) -> Result<Matrix> {
        let mut h = h.clone();
        if let Some(at) = self.attn.as_mut() {
            let a = at.ln.forward(&h);
            let q = at.q.forward(&a)?;
            let k = at.k.forward(&a)?;
            let v = at.v.forward(&a)?;
            let c = at.core.forward(&q, &k, &v)?;
            h.add_assign(&at.o.forward(&c)?)?;
        }
        let a2 = match self.ln2.as_mut() {
            Some(ln) => ln.forward(&h),
            None => h.clone(),
        };
        let u = self.m1.forward(&a2)?;
        let g = u.map(gelu);
        self.gelu_input = Some(u);
        h.add_assign(&self.m2.forward(&g)?)?;
        Ok(h)
    }

    fn infer(&self, h: &Matrix) -> Result<Matrix> {
        let mut h = h.clone();
        if let Some(at) = self.attn.as_ref() {
            let a = at.ln.infer(&h);
            let c = at
                .core
                .infer(&at.q.infer(&a)?, &at.k.infer(&a)?, &at.v.infer(&a)?)?;
            h.add_assign(&at.o.infer(&c)?)?;
        }
        let a2 = match self.ln2.as_ref() {
            Some(ln) => ln.infer(&h),
            None => h.clone(),
        };
        let g = self.m1.infer(&a2)?.map(gelu);
        h.add_assign(&self.m2.infer(&g)?)?;
        Ok(h)
    }

    fn backward(
        &mut self,
        dh: &Matrix,
        prefix: &str,
        dense_learnable: bool,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let u = self
            .gelu_input
            .take()
            .ok_or_else(|| PaidError::State(format!("{prefix}: backward before forward")))?;
        let dg = self
            .m2
            .backward(dh, &format!("{prefix}.m2"), dense_learnable, grads)?;
        let du = dg.zip_with(&u, |g, x| g * gelu_grad(x))?;
        let da2 = self
            .m1
            .backward(&du, &format!("{prefix}.m1"), dense_learnable, grads)?;
        let mut dmid = dh.clone();
        match self.ln2.as_mut() {
            Some(ln) => {
                dmid.add_assign(&ln.backward(&da2, &format!("{prefix}.ln2"), dense_learnable, grads)?)?
            }
            None => dmid.add_assign(&da2)?,
        }
        let Some(at) = self.attn.as_mut() else {
            return Ok(dmid);
        };
        let dc = at
            .o
            .backward(&dmid, &format!("{prefix}.o"), dense_learnable, grads)?;
        let (dq, dk, dv) = at.core.backward(&dc)?;
        let mut da = at.q.backward(&dq, &format!("{prefix}.q"), dense_learnable, grads)?;
        da.add_assign(&at.k.backward(&dk, &format!("{prefix}.k"), dense_learnable, grads)?)?;
        da.add_assign(&at.v.backward(&dv, &format!("{prefix}.v"), dense_learnable, grads)?)?;
        let mut din = dmid;
        din.add_assign(&at.ln.backward(&da, &format!("{prefix}.ln1"), dense_learnable, grads)?)?;
        Ok(din)
    }

    fn params_mut<'a>(
        &'a mut self,
        prefix: &str,
        dense_learnable: bool,
        out: &mut Vec<(String, &'a mut [f64])>,
    ) {
        if let Some(at) = self.attn.as_mut() {
            if dense_learnable {
                at.ln.params_mut(&format!("{prefix}.ln1"), out);
            }
            at.q.params_mut(&format!("{prefix}.q"), dense_learnable, out);
            at.k.params_mut(&format!("{prefix}.k"), dense_learnable, out);
            at.v.params_mut(&format!("{prefix}.v"), dense_learnable, out);
            at.o.params_mut(&format!("{prefix}.o"), dense_learnable, out);
        }
        if let (Some(ln), true) = (self.ln2.as_mut(), dense_learnable) {
            ln.params_mut(&format!("{prefix}.ln2"), out);
        }
        self.m1.params_mut(&format!("{prefix}.m1"), dense_learnable, out);
        self.m2.params_mut(&format!("{prefix}.m2"), dense_learnable, out);
    }
}

/// How a network was wrapped for adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct Injection {
    pub selector: LayerSelector,
    pub mode: UpdateMode,
    pub r: usize,
}

/// Features and logits of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub features: Matrix,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    embed: Dense,
    pos: Option<Matrix>,
    blocks: Vec<Block>,
    final_norm: Option<LayerNorm>,
    head: Dense,
    injection: Option<Injection>,
    batch: Option<usize>,
}

impl Network {
    /// Fresh network with Gaussian `N(0, 1/fan_in)` weights and zero biases.
    pub fn build(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let transformer = config.kind == ModelKind::TinyTransformer;
        let embed = Dense::init(config.patch(), config.dim, rng);
        let pos = transformer.then(|| rng.gaussian_matrix(config.tokens, config.dim).scale(0.1));
        let blocks = (0..config.depth).map(|_| Block::new(config, rng)).collect();
        let final_norm = transformer.then(|| LayerNorm::new(config.dim));
        let head = Dense::init(config.dim, config.n_classes, rng);
        Ok(Self {
            config: config.clone(),
            embed,
            pos,
            blocks,
            final_norm,
            head,
            injection: None,
            batch: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn injection(&self) -> Option<&Injection> {
        self.injection.as_ref()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    fn tap(&self) -> usize {
        self.config.feature_tap.unwrap_or(self.config.depth)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(PaidError::Shape(format!(
                "network expects {} input features, got {}",
                self.config.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    fn tokens_of(&self, x: &Matrix) -> Result<Matrix> {
        let t = self.config.token_count();
        Matrix::from_vec(x.rows() * t, self.config.patch(), x.data().to_vec())
    }

    fn add_pos(&self, e: &mut Matrix) {
        if let Some(pos) = &self.pos {
            let t = pos.rows();
            for i in 0..e.rows() {
                e.row_mut(i)
                    .iter_mut()
                    .zip(pos.row(i % t))
                    .for_each(|(a, b)| *a += b);
            }
        }
    }

    fn pool(&self, h: &Matrix) -> Matrix {
        let t = self.config.token_count();
        let batch = h.rows() / t;
        let mut z = Matrix::zeros(batch, h.cols());
        for i in 0..h.rows() {
            z.row_mut(i / t)
                .iter_mut()
                .zip(h.row(i))
                .for_each(|(a, b)| *a += b / t as f64);
        }
        z
    }

    fn unpool(&self, dz: &Matrix) -> Matrix {
        let t = self.config.token_count();
        let mut dh = Matrix::zeros(dz.rows() * t, dz.cols());
        for i in 0..dh.rows() {
            dh.row_mut(i)
                .iter_mut()
                .zip(dz.row(i / t))
                .for_each(|(a, b)| *a = b / t as f64);
        }
        dh
    }

    /// Full forward pass with caching for a subsequent backward.
    pub fn forward(&mut self, x: &Matrix) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let tokens = self.tokens_of(x)?;
        let mut h = self.embed.forward(&tokens)?;
        self.add_pos(&mut h);
        let tap = self.tap();
        let depth = self.config.depth;
        let mut tapped = None;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(&h)?;
            if i + 1 == tap && tap < depth {
                tapped = Some(h.clone());
            }
        }
        let hf = match self.final_norm.as_mut() {
            Some(ln) => ln.forward(&h),
            None => h,
        };
        let z = self.pool(&hf);
        let logits = self.head.forward(&z)?;
        let features = match tapped {
            Some(t) => self.pool(&t),
            None => z,
        };
        self.batch = Some(x.rows());
        Ok(ForwardOutput { features, logits })
    }

    /// Forward pass without touching any cache.
    pub fn infer(&self, x: &Matrix) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut h = self.embed.infer(&self.tokens_of(x)?)?;
        self.add_pos(&mut h);
        let tap = self.tap();
        let mut tapped = None;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.infer(&h)?;
            if i + 1 == tap && tap < self.config.depth {
                tapped = Some(h.clone());
            }
        }
        let hf = match self.final_norm.as_ref() {
            Some(ln) => ln.infer(&h),
            None => h,
        };
        let z = self.pool(&hf);
        let logits = self.head.infer(&z)?;
        let features = match tapped {
            Some(t) => self.pool(&t),
            None => z,
        };
        Ok(ForwardOutput { features, logits })
    }

    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.infer(x)?.features)
    }

    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.infer(x)?.logits)
    }

    fn dense_learnable(&self) -> bool {
        self.injection.is_none()
    }

    fn take_batch(&mut self, rows: usize) -> Result<()> {
        match self.batch.take() {
            Some(b) if b == rows => Ok(()),
            Some(b) => Err(PaidError::State(format!(
                "cached forward was for a batch of {b}, upstream has {rows} rows"
            ))),
            None => Err(PaidError::State("backward without a cached forward".into())),
        }
    }

    fn backward_blocks(&mut self, from: usize, mut dh: Matrix, grads: &mut Gradients) -> Result<()> {
        let learnable = self.dense_learnable();
        for i in (0..from).rev() {
            dh = self.blocks[i].backward(&dh, &format!("blocks.{i}"), learnable, grads)?;
        }
        if learnable {
            if self.pos.is_some() {
                let t = self.config.tokens;
                let mut dpos = vec![0.0; t * self.config.dim];
                for i in 0..dh.rows() {
                    let r = i % t;
                    dpos[r * self.config.dim..(r + 1) * self.config.dim]
                        .iter_mut()
                        .zip(dh.row(i))
                        .for_each(|(a, b)| *a += b);
                }
                grads.insert("pos".into(), dpos);
            }
            self.embed.backward(&dh, "embed", true, grads)?;
        } else {
            // Drop the embedding cache; nothing upstream of it is learnable.
            self.embed.backward(&dh, "embed", false, grads)?;
        }
        Ok(())
    }

    /// Backward from an upstream gradient on the logits.
    pub fn backward_logits(&mut self, dlogits: &Matrix) -> Result<Gradients> {
        self.take_batch(dlogits.rows())?;
        let mut grads = Gradients::new();
        let learnable = self.dense_learnable();
        let dz = self.head.backward(dlogits, "head", learnable, &mut grads)?;
        let dhf = self.unpool(&dz);
        let dh = match self.final_norm.as_mut() {
            Some(ln) => ln.backward(&dhf, "final_norm", learnable, &mut grads)?,
            None => dhf,
        };
        self.backward_blocks(self.config.depth, dh, &mut grads)?;
        Ok(grads)
    }

    /// Backward from an upstream gradient on the features.
    pub fn backward_features(&mut self, dz: &Matrix) -> Result<Gradients> {
        self.take_batch(dz.rows())?;
        let mut grads = Gradients::new();
        let tap = self.tap();
        let dh = self.unpool(dz);
        let dh = if tap == self.config.depth {
            match self.final_norm.as_mut() {
                Some(ln) => ln.backward(&dh, "final_norm", self.injection.is_none(), &mut grads)?,
                None => dh,
            }
        } else {
            dh
        };
        self.backward_blocks(tap, dh, &mut grads)?;
        Ok(grads)
    }

    /// Currently learnable parameters, in a stable order. Everything before
    /// injection; only the adapted slots' parameters after.
    pub fn learnable_params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let learnable = self.dense_learnable();
        let mut out = Vec::new();
        if learnable {
            self.embed.params_mut("embed", &mut out);
            if let Some(p) = self.pos.as_mut() {
                out.push(("pos".into(), p.data_mut()));
            }
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("blocks.{i}"), learnable, &mut out);
        }
        if learnable {
            if let Some(ln) = self.final_norm.as_mut() {
                ln.params_mut("final_norm", &mut out);
            }
            self.head.params_mut("head", &mut out);
        }
        out
    }

    pub fn learnable_count(&mut self) -> usize {
        self.learnable_params_mut().iter().map(|(_, p)| p.len()).sum()
    }

    /// Wraps the selected slots of every block in [`PaidLinear`] layers;
    /// everything else is frozen from here on.
    pub fn inject_paid(
        &self,
        selector: &LayerSelector,
        mode: UpdateMode,
        r: usize,
        rng: &mut SeededRng,
    ) -> Result<Network> {
        if self.injection.is_some() {
            return Err(PaidError::State("network is already injected".into()));
        }
        let mut net = self.clone();
        let mut wrapped = 0;
        for block in net.blocks.iter_mut() {
            for &slot in selector.slots() {
                let Some(proj) = block.slot_mut(slot) else {
                    continue;
                };
                let Proj::Dense(d) = proj else {
                    unreachable!("uninjected networks only hold dense slots")
                };
                let paid = PaidLinear::from_pretrained(&d.weight, d.bias.clone(), mode, r, rng)?;
                *proj = Proj::Paid(paid);
                wrapped += 1;
            }
        }
        if wrapped == 0 {
            return Err(PaidError::Config(format!(
                "selector {selector} matches no layer of a {:?} network",
                self.config.kind
            )));
        }
        net.injection = Some(Injection {
            selector: selector.clone(),
            mode,
            r,
        });
        net.batch = None;
        Ok(net)
    }

    /// Adapted layers with their checkpoint-style names.
    pub fn paid_layers(&self) -> Vec<(String, &PaidLinear)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for slot in LayerSlot::ALL {
                if let Some(p) = b.slot(slot).and_then(Proj::as_paid) {
                    out.push((format!("blocks.{i}.{}", slot.name()), p));
                }
            }
        }
        out
    }

    /// Per-layer drift of every adapted layer from its pre-trained weight.
    pub fn geometry_drift(&self) -> Result<Vec<(String, GeometryDelta)>> {
        self.paid_layers()
            .into_iter()
            .map(|(n, p)| Ok((n, p.drift()?)))
            .collect()
    }

    pub fn validate_params(&self) -> Result<()> {
        for (name, p) in self.paid_layers() {
            p.validate()
                .map_err(|e| PaidError::Numeric(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Every tensor under its checkpoint name. Adapted slots export their
    /// effective weight.
    pub fn named_tensors(&self) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
        let mut out = Vec::new();
        let mat = |name: String, m: &Matrix| (name, vec![m.rows(), m.cols()], m.data().to_vec());
        let vec1 = |name: String, v: &[f64]| (name, vec![v.len()], v.to_vec());
        out.push(mat("embed.weight".into(), &self.embed.weight));
        out.push(vec1("embed.bias".into(), &self.embed.bias));
        if let Some(p) = &self.pos {
            out.push(mat("pos".into(), p));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(at) = &b.attn {
                out.push(vec1(format!("blocks.{i}.ln1.gamma"), &at.ln.gamma));
                out.push(vec1(format!("blocks.{i}.ln1.beta"), &at.ln.beta));
            }
            if let Some(ln) = &b.ln2 {
                out.push(vec1(format!("blocks.{i}.ln2.gamma"), &ln.gamma));
                out.push(vec1(format!("blocks.{i}.ln2.beta"), &ln.beta));
            }
            for slot in LayerSlot::ALL {
                if let Some(p) = b.slot(slot) {
                    out.push(mat(format!("blocks.{i}.{}.weight", slot.name()), &p.weight()?));
                    out.push(vec1(format!("blocks.{i}.{}.bias", slot.name()), p.bias()));
                }
            }
        }
        if let Some(ln) = &self.final_norm {
            out.push(vec1("final_norm.gamma".into(), &ln.gamma));
            out.push(vec1("final_norm.beta".into(), &ln.beta));
        }
        out.push(mat("head.weight".into(), &self.head.weight));
        out.push(vec1("head.bias".into(), &self.head.bias));
        Ok(out)
    }

    /// Builds an uninjected network for `config` and fills it from named
    /// tensors; every expected tensor must be present with matching shape.
    pub fn from_tensors(
        config: &ModelConfig,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<Network> {
        let mut net = Network::build(config, &mut SeededRng::new(0))?;
        let lookup: BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = tensors
            .iter()
            .map(|(n, s, d)| (n.as_str(), (s, d)))
            .collect();
        let expected = net.named_tensors()?;
        for (name, shape, _) in &expected {
            let (s, _) = lookup
                .get(name.as_str())
                .ok_or_else(|| PaidError::Validation(format!("checkpoint lacks tensor {name}")))?;
            if *s != shape {
                return Err(PaidError::Shape(format!(
                    "tensor {name}: checkpoint {s:?}, model {shape:?}"
                )));
            }
        }
        let get = |name: &str| lookup[name].1.clone();
        net.embed.weight = Matrix::from_vec(net.embed.weight.rows(), net.embed.weight.cols(), get("embed.weight"))?;
        net.embed.bias = get("embed.bias");
        if let Some(p) = net.pos.as_mut() {
            *p = Matrix::from_vec(p.rows(), p.cols(), get("pos"))?;
        }
        for (i, b) in net.blocks.iter_mut().enumerate() {
            if let Some(at) = b.attn.as_mut() {
                at.ln.gamma = get(&format!("blocks.{i}.ln1.gamma"));
                at.ln.beta = get(&format!("blocks.{i}.ln1.beta"));
            }
            if let Some(ln) = b.ln2.as_mut() {
                ln.gamma = get(&format!("blocks.{i}.ln2.gamma"));
                ln.beta = get(&format!("blocks.{i}.ln2.beta"));
            }
            for slot in LayerSlot::ALL {
                if let Some(Proj::Dense(d)) = b.slot_mut(slot) {
                    let w = get(&format!("blocks.{i}.{}.weight", slot.name()));
                    d.weight = Matrix::from_vec(d.weight.rows(), d.weight.cols(), w)?;
                    d.bias = get(&format!("blocks.{i}.{}.bias", slot.name()));
                }
            }
        }
        if let Some(ln) = net.final_norm.as_mut() {
            ln.gamma = get("final_norm.gamma");
            ln.beta = get("final_norm.beta");
        }
        net.head.weight = Matrix::from_vec(net.head.weight.rows(), net.head.weight.cols(), get("head.weight"))?;
        net.head.bias = get("head.bias");
        Ok(net)
    }

    /// Mutable access to a dense slot before injection; used to construct
    /// special cases in tests and examples.
    pub fn dense_slot_mut(&mut self, block: usize, slot: LayerSlot) -> Option<&mut Dense> {
        match self.blocks.get_mut(block)?.slot_mut(slot)? {
            Proj::Dense(d) => Some(d),
            Proj::Paid(_) => None,
        }
    }

    pub fn embed(&self) -> &Dense {
        &self.embed
    }
}
