//! Text form of effect specs, as used by the CLI. Coordinates are 1-indexed:
//! `cfi_mult:3`, `cke:3`, `cdi_gini`, `cai_mult:A=1,2;B=5`, `cae:A=1;B=2,3`.

use super::{EffectSpec, PerturbError};
use crate::simplex::IndexSet;

/// Parses the canonical text form of an effect spec. `dim` bounds the
/// 1-indexed coordinates.
pub fn parse_effect(text: &str, dim: usize) -> Result<EffectSpec, PerturbError> {
    let bad = |msg: &str| PerturbError::InvalidSpec(text.to_string(), msg.to_string());
    let (head, rest) = match text.split_once(':') {
        Some((h, r)) => (h.trim(), Some(r.trim())),
        None => (text.trim(), None),
    };
    let spec = match head {
        "cdi_unit" => EffectSpec::CdiUnit,
        "cdi_gini" => EffectSpec::CdiGini,
        "clr_diversity" => EffectSpec::ClrDiversity,
        "cfi_unit" | "cfi_mult" | "cke" => {
            let j = parse_index(rest.ok_or_else(|| bad("missing coordinate index"))?, text)?;
            match head {
                "cfi_unit" => EffectSpec::CfiUnit { j },
                "cfi_mult" => EffectSpec::CfiMult { j },
                _ => EffectSpec::Cke { j },
            }
        }
        "cai_unit" | "cai_mult" | "cae" => {
            let (a, b) = parse_sets(rest.ok_or_else(|| bad("missing A=..;B=.. sets"))?, text)?;
            match head {
                "cai_unit" => EffectSpec::CaiUnit { a, b },
                "cai_mult" => EffectSpec::CaiMult { a, b },
                _ => EffectSpec::Cae { a, b },
            }
        }
        other => return Err(bad(&format!("unknown effect kind `{other}`"))),
    };
    spec.check_dim(dim)?;
    Ok(spec)
}

fn parse_index(text: &str, full: &str) -> Result<usize, PerturbError> {
    let j: usize = text.parse().map_err(|_| {
        PerturbError::InvalidSpec(full.to_string(), format!("`{text}` is not a coordinate index"))
    })?;
    if j == 0 {
        return Err(PerturbError::InvalidSpec(
            full.to_string(),
            "coordinate indices are 1-indexed".to_string(),
        ));
    }
    Ok(j - 1)
}

fn parse_sets(text: &str, full: &str) -> Result<(IndexSet, IndexSet), PerturbError> {
    let bad = |msg: String| PerturbError::InvalidSpec(full.to_string(), msg);
    let mut a = None;
    let mut b = None;
    for part in text.split(';') {
        let (name, list) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected NAME=indices, got `{part}`")))?;
        let indices = list
            .split(',')
            .map(|s| parse_index(s.trim(), full))
            .collect::<Result<Vec<_>, _>>()?;
        let set = IndexSet::new(indices).map_err(|e| bad(e.to_string()))?;
        match name.trim() {
            "A" | "a" => a = Some(set),
            "B" | "b" => b = Some(set),
            other => return Err(bad(format!("unknown set name `{other}`"))),
        }
    }
    match (a, b) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(bad("both A and B must be given".to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_catalogue_forms() {
        assert!(matches!(parse_effect("cfi_mult:3", 5).unwrap(), EffectSpec::CfiMult { j: 2 }));
        assert!(matches!(parse_effect("cke:1", 3).unwrap(), EffectSpec::Cke { j: 0 }));
        assert!(matches!(parse_effect("cdi_gini", 3).unwrap(), EffectSpec::CdiGini));
        let spec = parse_effect("cai_mult:A=1,2;B=5", 5).unwrap();
        match spec {
            EffectSpec::CaiMult { a, b } => {
                assert_eq!(a.indices(), &[0, 1]);
                assert_eq!(b.indices(), &[4]);
            }
            _ => panic!("wrong kind"),
        }
        assert!(matches!(parse_effect("cae:A=1;B=2,3", 4).unwrap(), EffectSpec::Cae { .. }));
    }

    #[test]
    fn round_trips_through_label() {
        for text in ["cfi_unit:2", "cfi_mult:3", "cke:1", "cdi_unit", "cdi_gini", "clr_diversity", "cai_unit:A=1,2;B=5", "cai_mult:A=1;B=3", "cae:A=1;B=2,3"] {
            let spec = parse_effect(text, 5).unwrap();
            assert_eq!(spec.label(), text);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(parse_effect("cfi_mult", 3).is_err());
        assert!(parse_effect("cfi_mult:0", 3).is_err());
        assert!(parse_effect("cfi_mult:4", 3).is_err());
        assert!(parse_effect("nope:1", 3).is_err());
        assert!(parse_effect("cae:A=1;B=1,2", 3).is_err()); // overlap
        assert!(parse_effect("cae:A=1", 3).is_err());
    }
}
