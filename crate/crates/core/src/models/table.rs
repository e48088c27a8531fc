//! Reference structure sizes for the compared methods, and an audit of our
//! layouts against them.

use super::{Arch, ModelConfig};
use crate::plasticity::ModulationKind;

/// Default number of tied rules for the merged PRNN: keeps its genotype the
/// same size as DecPRNN(PostDN) at hidden 64.
pub const DEFAULT_MERGED_RULES: usize = 207;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowModel {
    Plain(ModelConfig),
    /// PRNN whose per-connection rules are tied to `k` shared rules.
    Merged {
        base: ModelConfig,
        k: usize,
    },
}

impl RowModel {
    pub fn param_count(&self) -> usize {
        match self {
            RowModel::Plain(c) => c.param_count(),
            RowModel::Merged { base, k } => tied_param_count(base, *k),
        }
    }

    pub fn adaptive_count(&self) -> usize {
        match self {
            RowModel::Plain(c) | RowModel::Merged { base: c, .. } => c.adaptive_count(),
        }
    }
}

/// Genotype length of a PRNN with its rule matrices replaced by `k` shared 4-vectors.
pub fn tied_param_count(base: &ModelConfig, k: usize) -> usize {
    let rules: usize = base
        .layout()
        .slices()
        .iter()
        .filter(|s| s.name.starts_with("rule_"))
        .map(|s| s.len())
        .sum();
    base.param_count() - rules + 4 * k
}

#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub name: &'static str,
    pub model: RowModel,
    pub adaptive: usize,
    pub meta: usize,
    /// Our reconstruction for rows known to differ, with a short reason.
    pub known_gap: Option<(usize, &'static str)>,
}

fn cfg(arch: Arch, hidden: usize, modulation: ModulationKind) -> ModelConfig {
    ModelConfig::new(arch, hidden, modulation)
}

pub fn reference_rows() -> Vec<TableRow> {
    use Arch::*;
    use ModulationKind::{None as NoMod, PostDn, PreDn};
    let plain = |name, arch, hidden, modulation, adaptive, meta| TableRow {
        name,
        model: RowModel::Plain(cfg(arch, hidden, modulation)),
        adaptive,
        meta,
        known_gap: None,
    };
    let mut retro = cfg(RetroPrnn, 64, PostDn);
    retro.retro_init_from_genotype = true;
    vec![
        plain("DNN", Dnn, 64, NoMod, 0, 5125),
        plain("Meta-DNN", MetaDnn, 64, NoMod, 0, 5509),
        plain("Meta-RNN-XS", MetaRnn, 8, NoMod, 8, 237),
        plain("Meta-RNN-S", MetaRnn, 16, NoMod, 16, 597),
        plain("Meta-RNN", MetaRnn, 64, NoMod, 64, 5445),
        plain("Meta-RNN-L", MetaRnn, 128, NoMod, 128, 19077),
        plain("Meta-LSTM-XS", MetaLstm, 8, NoMod, 16, 813),
        plain("Meta-LSTM-S", MetaLstm, 16, NoMod, 32, 2133),
        plain("Meta-LSTM", MetaLstm, 64, NoMod, 128, 20805),
        plain("Meta-LSTM-L", MetaLstm, 128, NoMod, 256, 74373),
        TableRow {
            name: "Evolving&Merging",
            model: RowModel::Merged {
                base: cfg(Prnn, 64, PostDn),
                k: DEFAULT_MERGED_RULES,
            },
            adaptive: 5120,
            meta: 1347,
            known_gap: None,
        },
        TableRow {
            name: "Retroactive",
            model: RowModel::Plain(retro),
            adaptive: 4160,
            meta: 5577,
            known_gap: None,
        },
        plain("Retroactive(Random)", RetroPrnn, 64, PostDn, 4160, 1481),
        TableRow {
            name: "PRNN-XS(PostDN)",
            model: RowModel::Plain(cfg(Prnn, 8, PostDn)),
            adaptive: 192,
            meta: 809,
            known_gap: Some((807, "two unexplained scalars; PRNN-S and PRNN reconstruct exactly")),
        },
        plain("PRNN-S(PostDN)", Prnn, 16, PostDn, 512, 2119),
        plain("PRNN(PostDN)", Prnn, 64, PostDn, 5120, 20743),
        plain("DecPDNN(PostDN)", DecPdnn, 64, PostDn, 5056, 1411),
        plain("DecPRNN", DecPrnn, 64, NoMod, 5120, 1217),
        TableRow {
            name: "DecPRNN(PreDN)",
            model: RowModel::Plain(cfg(DecPrnn, 64, PreDn)),
            adaptive: 5120,
            meta: 1379,
            known_gap: Some((
                1377,
                "two unexplained scalars; PostDN and unmodulated variants reconstruct exactly",
            )),
        },
        plain("DecPRNN-S(PostDN)", DecPrnn, 32, PostDn, 1536, 707),
        plain("DecPRNN(PostDN)", DecPrnn, 64, PostDn, 5120, 1347),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditStatus {
    Match,
    /// Differs exactly as documented.
    Flagged,
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct AuditLine {
    pub row: TableRow,
    pub ours_meta: usize,
    pub ours_adaptive: usize,
    pub status: AuditStatus,
}

pub fn audit() -> Vec<AuditLine> {
    reference_rows()
        .into_iter()
        .map(|row| {
            let ours_meta = row.model.param_count();
            let ours_adaptive = row.model.adaptive_count();
            let status = if ours_adaptive != row.adaptive {
                AuditStatus::Mismatch
            } else if ours_meta == row.meta {
                AuditStatus::Match
            } else if row.known_gap.map(|(v, _)| v) == Some(ours_meta) {
                AuditStatus::Flagged
            } else {
                AuditStatus::Mismatch
            };
            AuditLine {
                row,
                ours_meta,
                ours_adaptive,
                status,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_matches_or_is_flagged() {
        let lines = audit();
        assert_eq!(lines.len(), 21);
        for l in &lines {
            assert_ne!(
                l.status,
                AuditStatus::Mismatch,
                "{} ours {} ref {}",
                l.row.name,
                l.ours_meta,
                l.row.meta
            );
        }
        let flagged: Vec<_> = lines
            .iter()
            .filter(|l| l.status == AuditStatus::Flagged)
            .map(|l| l.row.name)
            .collect();
        assert_eq!(flagged, ["PRNN-XS(PostDN)", "DecPRNN(PreDN)"]);
    }

    #[test]
    fn merged_default_matches_decomposed_budget() {
        let base = cfg(Arch::Prnn, 64, ModulationKind::PostDn);
        assert_eq!(tied_param_count(&base, DEFAULT_MERGED_RULES), 1347);
        assert_eq!(tied_param_count(&base, 5056), base.param_count());
    }
}
