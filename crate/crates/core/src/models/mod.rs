//! The model zoo and the genotype layout shared by all of it.
//!
//! A [`ModelConfig`] determines a [`Layout`]: an ordered list of named slices
//! of the flat genotype. [`Model::decode`] turns a genotype into typed static
//! weights and rules; [`Phenotype`] holds everything that changes during a life
//! cycle. Every architecture ends in a static `hidden → 5` output layer.

mod checkpoint;
mod codec;
mod dynamics;
pub mod table;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use codec::{LayerRule, Model, ModelParams};
pub use dynamics::{Aux, Phenotype};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::maze::{INPUT_DIM, OBS_DIM};
use crate::plasticity::ModulationKind;
use crate::{Error, Result};

pub const OUTPUT_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// Two static tanh layers on the 9-dim observation only.
    Dnn,
    /// Two static tanh layers on the full 15-dim input.
    MetaDnn,
    MetaRnn,
    MetaLstm,
    /// Plastic RNN with per-connection ABCD rules on both weight matrices.
    Prnn,
    /// Plastic RNN with neuron-factored rules on both weight matrices.
    DecPrnn,
    /// Meta-DNN whose two hidden layers are plastic with factored rules.
    DecPdnn,
    /// Plastic recurrent weights driven by a modulated eligibility trace.
    RetroPrnn,
}

impl Arch {
    pub const ALL: [Arch; 8] = [
        Arch::Dnn,
        Arch::MetaDnn,
        Arch::MetaRnn,
        Arch::MetaLstm,
        Arch::Prnn,
        Arch::DecPrnn,
        Arch::DecPdnn,
        Arch::RetroPrnn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Arch::Dnn => "DNN",
            Arch::MetaDnn => "MetaDNN",
            Arch::MetaRnn => "MetaRNN",
            Arch::MetaLstm => "MetaLSTM",
            Arch::Prnn => "PRNN",
            Arch::DecPrnn => "DecPRNN",
            Arch::DecPdnn => "DecPDNN",
            Arch::RetroPrnn => "RetroPRNN",
        }
    }

    pub fn is_plastic(self) -> bool {
        matches!(self, Arch::Prnn | Arch::DecPrnn | Arch::DecPdnn | Arch::RetroPrnn)
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, Arch::Dnn | Arch::MetaDnn | Arch::DecPdnn)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "dnn" => Arch::Dnn,
            "metadnn" => Arch::MetaDnn,
            "metarnn" | "rnn" => Arch::MetaRnn,
            "metalstm" | "lstm" => Arch::MetaLstm,
            "prnn" => Arch::Prnn,
            "decprnn" => Arch::DecPrnn,
            "decpdnn" => Arch::DecPdnn,
            "retroprnn" | "retroactive" | "retro" => Arch::RetroPrnn,
            _ => return Err(Error::InvalidArgument(format!("unknown architecture `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Width of each hidden layer.
    pub hidden: usize,
    pub modulation: ModulationKind,
    /// Retroactive only: take the initial recurrent weights from the genotype.
    pub retro_init_from_genotype: bool,
    /// Plastic weights start uniform in `±scale/√fan_in`.
    pub phenotype_init_scale: f64,
}

impl ModelConfig {
    pub fn new(arch: Arch, hidden: usize, modulation: ModulationKind) -> Self {
        ModelConfig {
            arch,
            hidden,
            modulation,
            retro_init_from_genotype: false,
            phenotype_init_scale: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.arch {
            Arch::Dnn => OBS_DIM,
            _ => INPUT_DIM,
        }
    }

    pub fn output_dim(&self) -> usize {
        OUTPUT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        if !self.arch.is_plastic() && self.modulation != ModulationKind::None {
            return Err(Error::InvalidArgument(format!(
                "{} has no plastic layer to modulate",
                self.arch
            )));
        }
        if !(self.phenotype_init_scale.is_finite() && self.phenotype_init_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "phenotype init scale must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text that identifies the genotype layout.
    pub fn descriptor(&self) -> String {
        let mut s = format!(
            "arch={};hidden={};modulation={}",
            self.arch, self.hidden, self.modulation
        );
        if self.arch == Arch::RetroPrnn {
            s.push_str(&format!(";retro_init={}", self.retro_init_from_genotype));
        }
        s
    }

    pub fn digest(&self) -> [u8; 32] {
        layout_digest(&self.descriptor(), &self.layout())
    }

    pub fn layout(&self) -> Layout {
        let h = self.hidden;
        let i = self.input_dim();
        let mut l = LayoutBuilder::default();
        match self.arch {
            Arch::Dnn | Arch::MetaDnn => {
                l.push("l1.w", h, i)
                    .push("l1.b", h, 1)
                    .push("l2.w", h, h)
                    .push("l2.b", h, 1);
            }
            Arch::MetaRnn => {
                l.push("rnn.w_h", h, h).push("rnn.w_i", h, i).push("rnn.b", h, 1);
            }
            Arch::MetaLstm => {
                l.push("lstm.w_h", 4 * h, h)
                    .push("lstm.w_i", 4 * h, i)
                    .push("lstm.b", 4 * h, 1);
            }
            Arch::Prnn => {
                for layer in ["rule_h", "rule_i"] {
                    let nx = if layer == "rule_h" { h } else { i };
                    for k in ["a", "b", "c", "d"] {
                        l.push(&format!("{layer}.{k}"), h, nx);
                    }
                }
                l.push("rnn.b", h, 1);
                self.push_rnn_modulation(&mut l);
            }
            Arch::DecPrnn => {
                push_decomposed(&mut l, "rule_h", h, h);
                push_decomposed(&mut l, "rule_i", h, i);
                l.push("rnn.b", h, 1);
                self.push_rnn_modulation(&mut l);
            }
            Arch::DecPdnn => {
                push_decomposed(&mut l, "rule_1", h, i);
                l.push("l1.b", h, 1);
                push_decomposed(&mut l, "rule_2", h, h);
                l.push("l2.b", h, 1);
                match self.modulation {
                    ModulationKind::None => {}
                    ModulationKind::PreDn => {
                        l.push("mod1.w", 1, i)
                            .push("mod1.b", 1, 1)
                            .push("mod2.w", 1, h)
                            .push("mod2.b", 1, 1);
                    }
                    ModulationKind::PostDn => {
                        l.push("mod1.w", 1, h)
                            .push("mod1.b", 1, 1)
                            .push("mod2.w", 1, h)
                            .push("mod2.b", 1, 1);
                    }
                }
            }
            Arch::RetroPrnn => {
                l.push("rnn.w_i", h, i);
                if self.retro_init_from_genotype {
                    l.push("retro.w_h_init", h, h);
                }
                l.push("rnn.b", h, 1).push("retro.eta", 1, 1).push("retro.gain", 1, 1);
                self.push_rnn_modulation(&mut l);
            }
        }
        l.push("out.w", OUTPUT_DIM, h).push("out.b", OUTPUT_DIM, 1);
        l.finish()
    }

    fn push_rnn_modulation(&self, l: &mut LayoutBuilder) {
        let fan = match self.modulation {
            ModulationKind::None => return,
            ModulationKind::PreDn => self.input_dim() + self.hidden,
            ModulationKind::PostDn => self.hidden,
        };
        l.push("mod.w", 2, fan).push("mod.b", 2, 1);
    }

    /// Number of meta-parameters (genotype length).
    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    /// Number of phenotype scalars that change within a life cycle.
    ///
    /// Counts plastic weights and neuron states. The retroactive eligibility
    /// trace is bookkeeping for the weight update and is not counted.
    pub fn adaptive_count(&self) -> usize {
        let h = self.hidden;
        let i = self.input_dim();
        match self.arch {
            Arch::Dnn | Arch::MetaDnn => 0,
            Arch::MetaRnn => h,
            Arch::MetaLstm => 2 * h,
            Arch::Prnn | Arch::DecPrnn => h * h + h * i + h,
            Arch::DecPdnn => h * i + h * h,
            Arch::RetroPrnn => h * h + h,
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.arch, self.hidden)?;
        if self.modulation != ModulationKind::None {
            write!(f, "({})", self.modulation)?;
        }
        Ok(())
    }
}

fn push_decomposed(l: &mut LayoutBuilder, layer: &str, n_y: usize, n_x: usize) {
    for k in ["ax", "bx", "cx", "dx"] {
        l.push(&format!("{layer}.{k}"), n_x, 1);
    }
    for k in ["ay", "by", "cy", "dy"] {
        l.push(&format!("{layer}.{k}"), n_y, 1);
    }
}

pub(crate) fn layout_digest(descriptor: &str, layout: &Layout) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(descriptor.as_bytes());
    for s in &layout.slices {
        hasher.update(format!("|{}:{}x{}@{}", s.name, s.rows, s.cols, s.offset).as_bytes());
    }
    hasher.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl SliceSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Contiguous, ordered slices covering the whole genotype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    slices: Vec<SliceSpec>,
    len: usize,
}

impl Layout {
    pub fn slices(&self) -> &[SliceSpec] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&SliceSpec> {
        self.slices.iter().find(|s| s.name == name)
    }

    /// Which slice a flat index falls into.
    pub fn slice_of(&self, index: usize) -> Option<&SliceSpec> {
        self.slices.iter().find(|s| s.range().contains(&index))
    }
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    slices: Vec<SliceSpec>,
    offset: usize,
}

impl LayoutBuilder {
    pub(crate) fn push(&mut self, name: &str, rows: usize, cols: usize) -> &mut Self {
        self.slices.push(SliceSpec {
            name: name.to_string(),
            rows,
            cols,
            offset: self.offset,
        });
        self.offset += rows * cols;
        self
    }

    pub(crate) fn finish(self) -> Layout {
        Layout {
            slices: self.slices,
            len: self.offset,
        }
    }
}

/// Flat meta-parameter vector tagged with the layout it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotype {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl Genotype {
    pub fn new(values: Vec<f64>, config: &ModelConfig) -> Result<Self> {
        let layout = config.layout();
        if values.len() != layout.len() {
            return Err(Error::shape("Genotype", layout.len(), values.len()));
        }
        Ok(Genotype { values, layout })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let layout = config.layout();
        Genotype {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Arch, hidden: usize, modulation: ModulationKind) -> ModelConfig {
        ModelConfig::new(arch, hidden, modulation)
    }

    #[test]
    fn spot_counts() {
        use ModulationKind::*;
        assert_eq!(cfg(Arch::DecPrnn, 64, PostDn).param_count(), 1347);
        assert_eq!(cfg(Arch::Prnn, 16, PostDn).param_count(), 2119);
        assert_eq!(cfg(Arch::MetaRnn, 64, None).param_count(), 5445);
        assert_eq!(cfg(Arch::DecPrnn, 32, PostDn).param_count(), 707);
        assert_eq!(cfg(Arch::DecPrnn, 64, PostDn).adaptive_count(), 5120);
        assert_eq!(cfg(Arch::MetaLstm, 64, None).adaptive_count(), 128);
        assert_eq!(cfg(Arch::RetroPrnn, 64, PostDn).adaptive_count(), 4160);
    }

    #[test]
    fn retro_random_drops_init_slice() {
        let mut c = cfg(Arch::RetroPrnn, 64, ModulationKind::PostDn);
        let random = c.param_count();
        c.retro_init_from_genotype = true;
        assert_eq!(c.param_count() - random, 4096);
        assert_eq!((c.param_count(), random), (5577, 1481));
    }

    #[test]
    fn layout_is_contiguous_and_exhaustive() {
        for arch in Arch::ALL {
            for modulation in [ModulationKind::None, ModulationKind::PreDn, ModulationKind::PostDn] {
                let c = cfg(arch, 7, modulation);
                if c.validate().is_err() {
                    continue;
                }
                let layout = c.layout();
                let mut next = 0;
                for s in layout.slices() {
                    assert_eq!(s.offset, next, "{arch} {}", s.name);
                    next += s.len();
                }
                assert_eq!(next, layout.len());
                assert_eq!(layout.slices().last().unwrap().name, "out.b");
            }
        }
    }

    #[test]
    fn static_archs_reject_modulation() {
        assert!(cfg(Arch::MetaRnn, 8, ModulationKind::PostDn).validate().is_err());
        assert!(cfg(Arch::DecPrnn, 0, ModulationKind::None).validate().is_err());
    }

    #[test]
    fn arch_names_parse() {
        for arch in Arch::ALL {
            assert_eq!(arch.label().parse::<Arch>().unwrap(), arch);
        }
        assert_eq!("Meta-LSTM".parse::<Arch>().unwrap(), Arch::MetaLstm);
        assert!("transformer".parse::<Arch>().is_err());
    }

    #[test]
    fn digest_tracks_layout() {
        let a = cfg(Arch::DecPrnn, 32, ModulationKind::PostDn);
        let b = cfg(Arch::DecPrnn, 32, ModulationKind::PreDn);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.digest());
    }
}
