use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::codec::{Dense, Model, ModelParams};
use super::{Arch, ModelConfig, OUTPUT_DIM};
use crate::linalg::{all_finite, dot, sigmoid, Matrix};
use crate::maze::INPUT_DIM;
use crate::plasticity::{apply_retro, EligibilityTrace};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    /// Eligibility trace of the retroactive rule.
    Trace(EligibilityTrace),
    /// LSTM cell state.
    Cell(Vec<f64>),
    /// Plastic weights of the two feedforward layers.
    Feedforward {
        w1: Matrix,
        w2: Matrix,
    },
}

/// Adaptive components: everything that changes inside a life cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    /// Plastic recurrent weights `(hidden, hidden)`; empty for non-plastic archs.
    pub w_h: Matrix,
    /// Plastic input weights `(hidden, input)`; empty unless both layers are plastic.
    pub w_i: Matrix,
    pub h: Vec<f64>,
    pub aux: Aux,
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let s = scale / (cols as f64).sqrt();
    if s == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl Phenotype {
    /// Fresh adaptive state for the start of a life cycle.
    pub fn init(model: &Model, rng: &mut impl Rng) -> Self {
        let cfg = &model.config;
        let (h, i, scale) = (cfg.hidden, cfg.input_dim(), cfg.phenotype_init_scale);
        let empty = || Matrix::zeros(0, 0);
        match &model.params {
            ModelParams::Dense { .. } => Phenotype {
                w_h: empty(),
                w_i: empty(),
                h: Vec::new(),
                aux: Aux::None,
            },
            ModelParams::Rnn { .. } => Phenotype {
                w_h: empty(),
                w_i: empty(),
                h: vec![0.0; h],
                aux: Aux::None,
            },
            ModelParams::Lstm { .. } => Phenotype {
                w_h: empty(),
                w_i: empty(),
                h: vec![0.0; h],
                aux: Aux::Cell(vec![0.0; h]),
            },
            ModelParams::PlasticRnn { .. } => {
                let w_h = uniform_matrix(rng, h, h, scale);
                let w_i = uniform_matrix(rng, h, i, scale);
                Phenotype {
                    w_h,
                    w_i,
                    h: vec![0.0; h],
                    aux: Aux::None,
                }
            }
            ModelParams::PlasticDense { .. } => {
                let w1 = uniform_matrix(rng, h, i, scale);
                let w2 = uniform_matrix(rng, h, h, scale);
                Phenotype {
                    w_h: empty(),
                    w_i: empty(),
                    h: Vec::new(),
                    aux: Aux::Feedforward { w1, w2 },
                }
            }
            ModelParams::Retro { w_h_init, .. } => {
                let w_h = match w_h_init {
                    Some(init) => init.clone(),
                    None => uniform_matrix(rng, h, h, scale),
                };
                Phenotype {
                    w_h,
                    w_i: empty(),
                    h: vec![0.0; h],
                    aux: Aux::Trace(EligibilityTrace::zeros(h, h)),
                }
            }
        }
    }

    /// Number of adaptive scalars held (weights plus neuron states).
    pub fn adaptive_len(&self) -> usize {
        let aux = match &self.aux {
            Aux::Cell(c) => c.len(),
            Aux::Feedforward { w1, w2 } => w1.len() + w2.len(),
            Aux::None | Aux::Trace(_) => 0,
        };
        self.w_h.len() + self.w_i.len() + self.h.len() + aux
    }

    /// Flattened plastic weights for trace recording: `W_h` for recurrent
    /// plastic models, both layer matrices for the plastic feedforward model.
    pub fn plastic_snapshot(&self) -> Vec<f64> {
        match &self.aux {
            Aux::Feedforward { w1, w2 } => w1.as_slice().iter().chain(w2.as_slice()).copied().collect(),
            _ => self.w_h.as_slice().to_vec(),
        }
    }

    pub fn cell(&self) -> Option<&[f64]> {
        match &self.aux {
            Aux::Cell(c) => Some(c),
            _ => None,
        }
    }

    /// Zero neuron states, keeping plastic weights.
    pub fn reset_state(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        if let Aux::Cell(c) = &mut self.aux {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn affine(d: &Dense, x: &[f64]) -> Vec<f64> {
    let mut out = d.b.clone();
    d.w.mul_vec_acc(x, &mut out);
    out
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

fn finite_or(v: &[f64], slice: &str) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(Error::numeric(slice))
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Advance one step: new hidden state, output logits, plastic updates.
    pub fn forward(&self, phen: &mut Phenotype, input: &[f64; INPUT_DIM]) -> Result<[f64; OUTPUT_DIM]> {
        let input = &input[..self.config.input_dim()];
        let top = match &self.params {
            ModelParams::Dense { l1, l2 } => {
                let mut y1 = affine(l1, input);
                tanh_in_place(&mut y1);
                let mut y2 = affine(l2, &y1);
                tanh_in_place(&mut y2);
                y2
            }
            ModelParams::Rnn { w_h, w_i, b } => {
                let mut next = b.clone();
                w_h.mul_vec_acc(&phen.h, &mut next);
                w_i.mul_vec_acc(input, &mut next);
                tanh_in_place(&mut next);
                finite_or(&next, "h")?;
                phen.h.copy_from_slice(&next);
                next
            }
            ModelParams::Lstm { w_h, w_i, b } => {
                let n = phen.h.len();
                let mut z = b.clone();
                w_h.mul_vec_acc(&phen.h, &mut z);
                w_i.mul_vec_acc(input, &mut z);
                let Aux::Cell(c) = &mut phen.aux else {
                    return Err(Error::ContractViolation("LSTM phenotype without cell state".into()));
                };
                for k in 0..n {
                    let gi = sigmoid(z[k]);
                    let gf = sigmoid(z[n + k]);
                    let gg = z[2 * n + k].tanh();
                    let go = sigmoid(z[3 * n + k]);
                    c[k] = gf * c[k] + gi * gg;
                    phen.h[k] = go * c[k].tanh();
                }
                finite_or(c, "c")?;
                finite_or(&phen.h, "h")?;
                phen.h.clone()
            }
            ModelParams::PlasticRnn {
                rule_h,
                rule_i,
                b,
                modulation,
            } => {
                let mut next = b.clone();
                phen.w_h.mul_vec_acc(&phen.h, &mut next);
                phen.w_i.mul_vec_acc(input, &mut next);
                tanh_in_place(&mut next);
                finite_or(&next, "h")?;
                let (m_h, m_i) = modulation.modulate(input, &phen.h, &next)?;
                rule_h.apply(&mut phen.w_h, m_h, &phen.h, &next)?;
                rule_i.apply(&mut phen.w_i, m_i, input, &next)?;
                finite_or(phen.w_h.as_slice(), "w_h_p")?;
                finite_or(phen.w_i.as_slice(), "w_i_p")?;
                phen.h.copy_from_slice(&next);
                next
            }
            ModelParams::PlasticDense {
                rule_1,
                b1,
                rule_2,
                b2,
                modulators,
            } => {
                let Aux::Feedforward { w1, w2 } = &mut phen.aux else {
                    return Err(Error::ContractViolation(
                        "plastic feedforward phenotype without layer weights".into(),
                    ));
                };
                let mut y1 = b1.clone();
                w1.mul_vec_acc(input, &mut y1);
                tanh_in_place(&mut y1);
                let mut y2 = b2.clone();
                w2.mul_vec_acc(&y1, &mut y2);
                tanh_in_place(&mut y2);
                finite_or(&y2, "h")?;
                let (m1, m2) = match (modulators, self.config.modulation) {
                    (None, _) => (1.0, 1.0),
                    (Some([d1, d2]), crate::plasticity::ModulationKind::PreDn) => (
                        sigmoid(dot(d1.w.row(0), input) + d1.b[0]),
                        sigmoid(dot(d2.w.row(0), &y1) + d2.b[0]),
                    ),
                    (Some([d1, d2]), _) => (
                        sigmoid(dot(d1.w.row(0), &y1) + d1.b[0]),
                        sigmoid(dot(d2.w.row(0), &y2) + d2.b[0]),
                    ),
                };
                crate::plasticity::apply_decomposed(w1, m1, input, &y1, rule_1)?;
                crate::plasticity::apply_decomposed(w2, m2, &y1, &y2, rule_2)?;
                finite_or(w1.as_slice(), "w1_p")?;
                finite_or(w2.as_slice(), "w2_p")?;
                y2
            }
            ModelParams::Retro {
                w_i,
                b,
                rule,
                gain,
                modulation,
                ..
            } => {
                let mut next = b.clone();
                phen.w_h.mul_vec_acc(&phen.h, &mut next);
                w_i.mul_vec_acc(input, &mut next);
                tanh_in_place(&mut next);
                finite_or(&next, "h")?;
                let (m_h, _) = modulation.modulate(input, &phen.h, &next)?;
                let Aux::Trace(trace) = &mut phen.aux else {
                    return Err(Error::ContractViolation("retroactive phenotype without trace".into()));
                };
                apply_retro(&mut phen.w_h, gain * m_h, &phen.h, &next, trace, rule)?;
                finite_or(phen.w_h.as_slice(), "w_h_p")?;
                finite_or(trace.e.as_slice(), "trace")?;
                phen.h.copy_from_slice(&next);
                next
            }
        };
        let mut out = [0.0; OUTPUT_DIM];
        out.copy_from_slice(&self.output.b);
        self.output.w.mul_vec_acc(&top, &mut out);
        finite_or(&out, "output")?;
        Ok(out)
    }

    pub fn is_recurrent(&self) -> bool {
        self.config.arch.is_recurrent()
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{LayerRule, ModelConfig};
    use crate::plasticity::{DecomposedRule, ModulationKind, ModulationSpec};
    use crate::seed::rng_from;
    use rand::Rng;

    fn random_model(c: &ModelConfig, seed: u64, scale: f64) -> Model {
        let mut rng = rng_from(seed);
        let g: Vec<f64> = (0..c.param_count()).map(|_| rng.random_range(-scale..scale)).collect();
        Model::decode(&g, c).unwrap()
    }

    fn random_input(rng: &mut impl Rng) -> [f64; INPUT_DIM] {
        let mut v = [0.0; INPUT_DIM];
        for x in v.iter_mut().take(9) {
            *x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
        v[9 + rng.random_range(0..4)] = 1.0;
        v[14] = -0.01;
        v
    }

    #[test]
    fn zero_model_is_silent() {
        for arch in Arch::ALL {
            let c = ModelConfig::new(arch, 5, ModulationKind::None);
            let model = Model::decode(&vec![0.0; c.param_count()], &c).unwrap();
            let mut phen = Phenotype::init(&model, &mut rng_from(0));
            phen.w_h.as_mut_slice().fill(0.0);
            phen.w_i.as_mut_slice().fill(0.0);
            if let Aux::Feedforward { w1, w2 } = &mut phen.aux {
                w1.as_mut_slice().fill(0.0);
                w2.as_mut_slice().fill(0.0);
            }
            let before = phen.clone();
            let out = model.forward(&mut phen, &[0.5; INPUT_DIM]).unwrap();
            assert_eq!(out, [0.0; 5], "{arch}");
            assert!(phen.h.iter().all(|v| *v == 0.0), "{arch}");
            assert_eq!(phen.w_h, before.w_h, "{arch}");
        }
    }

    #[test]
    fn scalar_prnn_hidden_update() {
        let c = ModelConfig::new(Arch::Prnn, 1, ModulationKind::None);
        let model = Model::decode(&vec![0.0; c.param_count()], &c).unwrap();
        let mut phen = Phenotype {
            w_h: Matrix::filled(1, 1, 0.5),
            w_i: Matrix::from_fn(1, INPUT_DIM, |_, k| if k == 0 { 1.0 } else { 0.0 }),
            h: vec![1.0],
            aux: Aux::None,
        };
        let mut input = [0.0; INPUT_DIM];
        input[0] = 0.2;
        model.forward(&mut phen, &input).unwrap();
        assert!((phen.h[0] - 0.7f64.tanh()).abs() < 1e-12);
        assert!((phen.h[0] - 0.604_368).abs() < 1e-6);
    }

    #[test]
    fn postdn_with_zero_weights_halves_deltas() {
        let hidden = 4;
        let base = ModelConfig::new(Arch::DecPrnn, hidden, ModulationKind::None);
        let post = ModelConfig::new(Arch::DecPrnn, hidden, ModulationKind::PostDn);
        let m_none = random_model(&base, 9, 0.8);
        let ModelParams::PlasticRnn { rule_h, rule_i, b, .. } = m_none.params.clone() else {
            unreachable!()
        };
        let m_post = Model {
            config: post,
            params: ModelParams::PlasticRnn {
                rule_h,
                rule_i,
                b,
                modulation: ModulationSpec::new(ModulationKind::PostDn, Matrix::zeros(2, hidden), vec![0.0; 2])
                    .unwrap(),
            },
            output: m_none.output.clone(),
        };
        let p0 = Phenotype::init(&m_none, &mut rng_from(1));
        let input = random_input(&mut rng_from(2));
        let (mut a, mut b) = (p0.clone(), p0.clone());
        m_none.forward(&mut a, &input).unwrap();
        m_post.forward(&mut b, &input).unwrap();
        for (full, half, start) in [(&a.w_h, &b.w_h, &p0.w_h), (&a.w_i, &b.w_i, &p0.w_i)] {
            for k in 0..full.len() {
                let df = full.as_slice()[k] - start.as_slice()[k];
                let dh = half.as_slice()[k] - start.as_slice()[k];
                assert!((dh - 0.5 * df).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn recurrent_delta_ignores_input_given_new_hidden() {
        // With h_{t+1} pinned, ΔW_h depends only on (m_h, h_t, h_{t+1}).
        let c = ModelConfig::new(Arch::DecPrnn, 3, ModulationKind::PostDn);
        let model = random_model(&c, 4, 1.0);
        let ModelParams::PlasticRnn { rule_h, modulation, .. } = &model.params else {
            unreachable!()
        };
        let h_t = vec![0.1, -0.4, 0.9];
        let h_next = vec![0.3, 0.2, -0.5];
        let deltas: Vec<Matrix> = (0..3)
            .map(|seed| {
                let input = random_input(&mut rng_from(seed));
                let (m_h, _) = modulation.modulate(&input, &h_t, &h_next).unwrap();
                let mut w = Matrix::zeros(3, 3);
                rule_h.apply(&mut w, m_h, &h_t, &h_next).unwrap();
                w
            })
            .collect();
        assert_eq!(deltas[0], deltas[1]);
        assert_eq!(deltas[1], deltas[2]);
    }

    #[test]
    fn decomposed_step_respects_rule_magnitude_bound() {
        let c = ModelConfig::new(Arch::DecPrnn, 6, ModulationKind::PostDn);
        let model = random_model(&c, 21, 1.5);
        let ModelParams::PlasticRnn {
            rule_h: LayerRule::Decomposed(r),
            ..
        } = &model.params
        else {
            unreachable!()
        };
        let bound = |r: &DecomposedRule, row: usize, col: usize| {
            r.ay[row].abs() * r.ax[col].abs()
                + r.by[row].abs() * r.bx[col].abs()
                + r.cy[row].abs() * r.cx[col].abs()
                + r.dy[row].abs() * r.dx[col].abs()
        };
        let mut phen = Phenotype::init(&model, &mut rng_from(3));
        let mut rng = rng_from(4);
        for _ in 0..100 {
            let before = phen.w_h.clone();
            model.forward(&mut phen, &random_input(&mut rng)).unwrap();
            for row in 0..6 {
                for col in 0..6 {
                    let d = (phen.w_h.get(row, col) - before.get(row, col)).abs();
                    assert!(d <= bound(r, row, col) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn static_models_never_touch_weights() {
        for arch in [Arch::MetaRnn, Arch::MetaLstm] {
            let c = ModelConfig::new(arch, 8, ModulationKind::None);
            let model = random_model(&c, 8, 1.0);
            let snapshot = model.clone();
            let mut phen = Phenotype::init(&model, &mut rng_from(0));
            let mut rng = rng_from(1);
            for _ in 0..50 {
                model.forward(&mut phen, &random_input(&mut rng)).unwrap();
            }
            assert_eq!(model, snapshot);
            assert!(phen.w_h.is_empty() && phen.w_i.is_empty());
            assert!(phen.h.iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn phenotype_sizes_match_adaptive_counts() {
        for arch in Arch::ALL {
            let c = ModelConfig::new(arch, 16, ModulationKind::None);
            let model = random_model(&c, 0, 0.1);
            let phen = Phenotype::init(&model, &mut rng_from(0));
            assert_eq!(phen.adaptive_len(), c.adaptive_count(), "{arch}");
            assert!(phen.h.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let c = ModelConfig::new(Arch::DecPrnn, 16, ModulationKind::PostDn);
        let model = random_model(&c, 0, 0.1);
        let a = Phenotype::init(&model, &mut rng_from(42));
        let b = Phenotype::init(&model, &mut rng_from(42));
        let other = Phenotype::init(&model, &mut rng_from(43));
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert!(a.w_h.as_slice().iter().all(|v| v.abs() <= 0.25));
        assert!(a.w_i.as_slice().iter().all(|v| v.abs() <= 1.0 / 15f64.sqrt()));
    }

    #[test]
    fn retro_init_from_genotype_copies_weights() {
        let mut c = ModelConfig::new(Arch::RetroPrnn, 4, ModulationKind::PostDn);
        c.retro_init_from_genotype = true;
        let model = random_model(&c, 2, 1.0);
        let ModelParams::Retro {
            w_h_init: Some(init), ..
        } = &model.params
        else {
            unreachable!()
        };
        let phen = Phenotype::init(&model, &mut rng_from(9));
        assert_eq!(&phen.w_h, init);
    }

    #[test]
    fn exploding_rule_reports_numeric_fault() {
        let c = ModelConfig::new(Arch::DecPrnn, 4, ModulationKind::None);
        let mut g = vec![0.0; c.param_count()];
        let d = c.layout().get("rule_h.dx").unwrap().range();
        g[d].fill(1e308);
        let d = c.layout().get("rule_h.dy").unwrap().range();
        g[d].fill(1e308);
        let model = Model::decode(&g, &c).unwrap();
        let mut phen = Phenotype::init(&model, &mut rng_from(0));
        let err = model.forward(&mut phen, &[0.0; INPUT_DIM]).unwrap_err();
        assert!(
            matches!(err, Error::NumericFault { ref slice, .. } if slice == "w_h_p"),
            "{err}"
        );
    }
}
