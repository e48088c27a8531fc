use super::{Arch, Genotype, Layout, ModelConfig};
use crate::linalg::Matrix;
use crate::plasticity::{DecomposedRule, FullAbcdRule, ModulationKind, ModulationSpec, RetroactiveRule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerRule {
    Full(FullAbcdRule),
    Decomposed(DecomposedRule),
}

impl LayerRule {
    pub fn apply(&self, w: &mut Matrix, m: f64, x: &[f64], y: &[f64]) -> Result<()> {
        match self {
            LayerRule::Full(r) => crate::plasticity::apply_full(w, m, x, y, r),
            LayerRule::Decomposed(r) => crate::plasticity::apply_decomposed(w, m, x, y, r),
        }
    }
}

/// Typed static parameters of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Dense {
        l1: Dense,
        l2: Dense,
    },
    Rnn {
        w_h: Matrix,
        w_i: Matrix,
        b: Vec<f64>,
    },
    /// Gate rows are stacked as input, forget, cell, output.
    Lstm {
        w_h: Matrix,
        w_i: Matrix,
        b: Vec<f64>,
    },
    PlasticRnn {
        rule_h: LayerRule,
        rule_i: LayerRule,
        b: Vec<f64>,
        modulation: ModulationSpec,
    },
    PlasticDense {
        rule_1: DecomposedRule,
        b1: Vec<f64>,
        rule_2: DecomposedRule,
        b2: Vec<f64>,
        /// One single-unit modulator per layer, `None` when unmodulated.
        modulators: Option<[Dense; 2]>,
    },
    Retro {
        w_i: Matrix,
        w_h_init: Option<Matrix>,
        b: Vec<f64>,
        rule: RetroactiveRule,
        /// Raw (pre-squash) decay scalar, kept so encoding is lossless.
        eta_raw: f64,
        gain: f64,
        modulation: ModulationSpec,
    },
}

/// A decoded genotype: immutable for the whole life cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub output: Dense,
}

struct Reader<'a> {
    values: &'a [f64],
    layout: &'a Layout,
    next: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, name: &str) -> Result<(&'a [f64], usize, usize)> {
        let spec = self
            .layout
            .slices()
            .get(self.next)
            .filter(|s| s.name == name)
            .ok_or_else(|| {
                Error::ContractViolation(format!("layout has no slice `{name}` at position {}", self.next))
            })?;
        self.next += 1;
        Ok((&self.values[spec.range()], spec.rows, spec.cols))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let (v, r, c) = self.take(name)?;
        Matrix::from_vec(r, c, v.to_vec())
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        Ok(self.take(name)?.0.to_vec())
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        Ok(self.take(name)?.0[0])
    }

    fn dense(&mut self, w: &str, b: &str) -> Result<Dense> {
        Ok(Dense {
            w: self.matrix(w)?,
            b: self.vector(b)?,
        })
    }

    fn decomposed(&mut self, layer: &str) -> Result<DecomposedRule> {
        let mut v = |k: &str| self.vector(&format!("{layer}.{k}"));
        Ok(DecomposedRule {
            ax: v("ax")?,
            bx: v("bx")?,
            cx: v("cx")?,
            dx: v("dx")?,
            ay: v("ay")?,
            by: v("by")?,
            cy: v("cy")?,
            dy: v("dy")?,
        })
    }

    fn full(&mut self, layer: &str) -> Result<FullAbcdRule> {
        let mut m = |k: &str| self.matrix(&format!("{layer}.{k}"));
        FullAbcdRule::new(m("a")?, m("b")?, m("c")?, m("d")?)
    }

    fn rnn_modulation(&mut self, kind: ModulationKind) -> Result<ModulationSpec> {
        if kind == ModulationKind::None {
            return Ok(ModulationSpec::none());
        }
        let w = self.matrix("mod.w")?;
        let b = self.vector("mod.b")?;
        ModulationSpec::new(kind, w, b)
    }
}

#[derive(Default)]
struct Writer {
    values: Vec<f64>,
}

impl Writer {
    fn put(&mut self, v: &[f64]) {
        self.values.extend_from_slice(v);
    }

    fn dense(&mut self, d: &Dense) {
        self.put(d.w.as_slice());
        self.put(&d.b);
    }

    fn decomposed(&mut self, r: &DecomposedRule) {
        for v in [&r.ax, &r.bx, &r.cx, &r.dx, &r.ay, &r.by, &r.cy, &r.dy] {
            self.put(v);
        }
    }

    fn rule(&mut self, r: &LayerRule) {
        match r {
            LayerRule::Full(f) => {
                for m in [&f.a, &f.b, &f.c, &f.d] {
                    self.put(m.as_slice());
                }
            }
            LayerRule::Decomposed(d) => self.decomposed(d),
        }
    }

    fn modulation(&mut self, m: &ModulationSpec) {
        if m.kind != ModulationKind::None {
            self.put(m.weights.as_slice());
            self.put(&m.bias);
        }
    }
}

impl Model {
    pub fn decode(genotype: &[f64], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if genotype.len() != layout.len() {
            return Err(Error::shape("Model::decode genotype", layout.len(), genotype.len()));
        }
        let mut rd = Reader {
            values: genotype,
            layout: &layout,
            next: 0,
        };
        let params = match config.arch {
            Arch::Dnn | Arch::MetaDnn => ModelParams::Dense {
                l1: rd.dense("l1.w", "l1.b")?,
                l2: rd.dense("l2.w", "l2.b")?,
            },
            Arch::MetaRnn => ModelParams::Rnn {
                w_h: rd.matrix("rnn.w_h")?,
                w_i: rd.matrix("rnn.w_i")?,
                b: rd.vector("rnn.b")?,
            },
            Arch::MetaLstm => ModelParams::Lstm {
                w_h: rd.matrix("lstm.w_h")?,
                w_i: rd.matrix("lstm.w_i")?,
                b: rd.vector("lstm.b")?,
            },
            Arch::Prnn => ModelParams::PlasticRnn {
                rule_h: LayerRule::Full(rd.full("rule_h")?),
                rule_i: LayerRule::Full(rd.full("rule_i")?),
                b: rd.vector("rnn.b")?,
                modulation: rd.rnn_modulation(config.modulation)?,
            },
            Arch::DecPrnn => ModelParams::PlasticRnn {
                rule_h: LayerRule::Decomposed(rd.decomposed("rule_h")?),
                rule_i: LayerRule::Decomposed(rd.decomposed("rule_i")?),
                b: rd.vector("rnn.b")?,
                modulation: rd.rnn_modulation(config.modulation)?,
            },
            Arch::DecPdnn => {
                let rule_1 = rd.decomposed("rule_1")?;
                let b1 = rd.vector("l1.b")?;
                let rule_2 = rd.decomposed("rule_2")?;
                let b2 = rd.vector("l2.b")?;
                let modulators = match config.modulation {
                    ModulationKind::None => None,
                    _ => Some([rd.dense("mod1.w", "mod1.b")?, rd.dense("mod2.w", "mod2.b")?]),
                };
                ModelParams::PlasticDense {
                    rule_1,
                    b1,
                    rule_2,
                    b2,
                    modulators,
                }
            }
            Arch::RetroPrnn => {
                let w_i = rd.matrix("rnn.w_i")?;
                let w_h_init = if config.retro_init_from_genotype {
                    Some(rd.matrix("retro.w_h_init")?)
                } else {
                    None
                };
                let b = rd.vector("rnn.b")?;
                let eta_raw = rd.scalar("retro.eta")?;
                let gain = rd.scalar("retro.gain")?;
                ModelParams::Retro {
                    w_i,
                    w_h_init,
                    b,
                    rule: RetroactiveRule::from_raw(eta_raw),
                    eta_raw,
                    gain,
                    modulation: rd.rnn_modulation(config.modulation)?,
                }
            }
        };
        let output = rd.dense("out.w", "out.b")?;
        debug_assert_eq!(rd.next, layout.slices().len());
        Ok(Model {
            config: *config,
            params,
            output,
        })
    }

    pub fn decode_genotype(genotype: &Genotype, config: &ModelConfig) -> Result<Self> {
        if genotype.layout != config.layout() {
            return Err(Error::ContractViolation(
                "genotype layout does not match configuration".into(),
            ));
        }
        Self::decode(&genotype.values, config)
    }

    /// Flatten back into genotype order.
    pub fn encode(&self) -> Vec<f64> {
        let mut w = Writer::default();
        match &self.params {
            ModelParams::Dense { l1, l2 } => {
                w.dense(l1);
                w.dense(l2);
            }
            ModelParams::Rnn { w_h, w_i, b } | ModelParams::Lstm { w_h, w_i, b } => {
                w.put(w_h.as_slice());
                w.put(w_i.as_slice());
                w.put(b);
            }
            ModelParams::PlasticRnn {
                rule_h,
                rule_i,
                b,
                modulation,
            } => {
                w.rule(rule_h);
                w.rule(rule_i);
                w.put(b);
                w.modulation(modulation);
            }
            ModelParams::PlasticDense {
                rule_1,
                b1,
                rule_2,
                b2,
                modulators,
            } => {
                w.decomposed(rule_1);
                w.put(b1);
                w.decomposed(rule_2);
                w.put(b2);
                if let Some([m1, m2]) = modulators {
                    w.dense(m1);
                    w.dense(m2);
                }
            }
            ModelParams::Retro {
                w_i,
                w_h_init,
                b,
                eta_raw,
                gain,
                modulation,
                ..
            } => {
                w.put(w_i.as_slice());
                if let Some(init) = w_h_init {
                    w.put(init.as_slice());
                }
                w.put(b);
                w.put(&[*eta_raw, *gain]);
                w.modulation(modulation);
            }
        }
        w.dense(&self.output);
        w.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::ModulationKind;
    use crate::seed::rng_from;
    use rand::Rng;

    fn all_configs(hidden: usize) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for arch in Arch::ALL {
            for modulation in [ModulationKind::None, ModulationKind::PreDn, ModulationKind::PostDn] {
                let mut c = ModelConfig::new(arch, hidden, modulation);
                if c.validate().is_err() {
                    continue;
                }
                out.push(c);
                if arch == Arch::RetroPrnn {
                    c.retro_init_from_genotype = true;
                    out.push(c);
                }
            }
        }
        out
    }

    #[test]
    fn encode_decode_round_trip_is_bit_identical() {
        let mut rng = rng_from(5);
        for c in all_configs(6) {
            let g: Vec<f64> = (0..c.param_count()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let model = Model::decode(&g, &c).unwrap();
            let back = model.encode();
            assert_eq!(back.len(), g.len(), "{c}");
            assert!(back.iter().zip(&g).all(|(a, b)| a.to_bits() == b.to_bits()), "{c}");
        }
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let c = ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::PostDn);
        assert!(matches!(
            Model::decode(&vec![0.0; c.param_count() + 1], &c),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn slices_land_in_the_right_fields() {
        let c = ModelConfig::new(Arch::DecPrnn, 3, ModulationKind::PostDn);
        let layout = c.layout();
        let mut g = vec![0.0; c.param_count()];
        g[layout.get("rule_i.cy").unwrap().offset + 2] = 7.0;
        g[layout.get("mod.b").unwrap().offset + 1] = -1.0;
        let m = Model::decode(&g, &c).unwrap();
        let ModelParams::PlasticRnn {
            rule_i: LayerRule::Decomposed(r),
            modulation,
            ..
        } = &m.params
        else {
            panic!("wrong params variant");
        };
        assert_eq!(r.cy, vec![0.0, 0.0, 7.0]);
        assert_eq!(r.ax.len(), 15);
        assert_eq!(modulation.bias, vec![0.0, -1.0]);
    }
}
