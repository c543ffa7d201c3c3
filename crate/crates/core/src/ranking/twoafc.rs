use std::collections::BTreeMap;

use crate::choices::{trial_record, ChoiceError, ChoiceLog};
use crate::ranking::{CompetitionMatrices, CoverageWarning, MatrixKind, PairMatrix, RankingError};
use crate::scalar::Scalar;
use crate::selection::MadSet;

/// Additive constant applied to both win counts.
pub const TWO_AFC_SMOOTHING: f64 = 0.5;

/// Converts forced-choice wins into aggressiveness- and resistance-like
/// matrices: `a_ij = (wins_i + 0.5) / (wins_j + 0.5)` over trials on the
/// cell where `j` defended against `i`, and `r_ij` likewise over the cell
/// where `i` defended against `j`.
pub fn pairwise_from_2afc<T: Scalar>(
    log: &ChoiceLog,
    mad: &MadSet,
    model_ids: &[String],
) -> Result<CompetitionMatrices<T>, RankingError> {
    let choice_err = |e: ChoiceError| RankingError::Choice(e.to_string());
    // (defender, attacker) -> (defender wins, attacker wins)
    let mut wins: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
    for c in log.records() {
        let r = trial_record(mad, &c.trial_id).map_err(choice_err)?;
        let e = wins.entry((r.defender.as_str(), r.attacker.as_str())).or_default();
        if c.chosen_model == r.defender {
            e.0 += 1;
        } else if c.chosen_model == r.attacker {
            e.1 += 1;
        } else {
            return Err(choice_err(ChoiceError::Inconsistent {
                trial: c.trial_id.clone(),
                model: c.chosen_model.clone(),
            }));
        }
    }

    let smooth = T::lit(TWO_AFC_SMOOTHING);
    let ratio = |num: u64, den: u64| (T::from_count(num) + smooth) / (T::from_count(den) + smooth);
    let mut out = CompetitionMatrices {
        aggressiveness: PairMatrix::identity(model_ids.to_vec(), MatrixKind::Aggressiveness),
        resistance: PairMatrix::identity(model_ids.to_vec(), MatrixKind::Resistance),
        warnings: Vec::new(),
    };
    for (i, mi) in model_ids.iter().enumerate() {
        for (j, mj) in model_ids.iter().enumerate() {
            if i == j {
                continue;
            }
            // i attacks j: j is the defender
            match wins.get(&(mj.as_str(), mi.as_str())) {
                Some(&(def_wins, att_wins)) => out.aggressiveness.set(i, j, ratio(att_wins, def_wins)),
                None => {
                    out.aggressiveness.set(i, j, T::one());
                    out.warnings.push(CoverageWarning {
                        matrix: MatrixKind::Aggressiveness,
                        row: mi.clone(),
                        col: mj.clone(),
                    });
                }
            }
            match wins.get(&(mi.as_str(), mj.as_str())) {
                Some(&(def_wins, att_wins)) => out.resistance.set(i, j, ratio(def_wins, att_wins)),
                None => {
                    out.resistance.set(i, j, T::one());
                    out.warnings.push(CoverageWarning {
                        matrix: MatrixKind::Resistance,
                        row: mi.clone(),
                        col: mj.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}
