use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::model::{LossKind, Model};
use super::tape::Tape;
use super::NnError;
use crate::taskgen::Record;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub samples: usize,
    /// Draws rejected because the two probes straddled a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

fn batch_loss(
    model: &Model<f64>,
    task: usize,
    records: &[&Record],
    kind: LossKind,
) -> Result<(f64, u64), NnError> {
    let mut tape = Tape::new();
    let ins: Vec<&[u32]> = records.iter().map(|r| r.input.as_slice()).collect();
    let y = model.forward(&mut tape, task, &ins, None)?;
    let l = model.loss(&mut tape, task, y, records, kind)?;
    Ok((tape.value(l).item(), tape.kink_signature()))
}

/// Add independent `N(0, std^2)` noise to every parameter, so biases and
/// gains leave their constant initial values.
pub fn jitter_params<R: Rng>(model: &mut Model<f64>, std: f64, rng: &mut R) {
    let d = Normal::new(0.0, std).expect("non-negative std");
    for e in &mut model.params_mut().entries {
        e.value.data.iter_mut().for_each(|x| *x += d.sample(rng));
    }
}

/// Compare analytic gradients of the batch loss against central differences
/// at `samples` scalar parameters drawn uniformly over all tables.
///
/// The relative error of a pair `(a, f)` is `|a - f| / max(|a|, |f|, floor)`;
/// the floor keeps entries whose true gradient is essentially zero from
/// dominating through rounding noise. The model is piecewise smooth, so a
/// draw whose `+eps` and `-eps` probes take different branches of some
/// kink measures the jump rather than the derivative; such draws are
/// replaced and counted in `skipped` (at most `10 * samples` of them).
pub fn finite_difference_check<R: Rng>(
    model: &Model<f64>,
    task: usize,
    records: &[&Record],
    kind: LossKind,
    samples: usize,
    eps: f64,
    floor: f64,
    rng: &mut R,
) -> Result<GradCheck, NnError> {
    let mut tape = Tape::new();
    let ins: Vec<&[u32]> = records.iter().map(|r| r.input.as_slice()).collect();
    let y = model.forward(&mut tape, task, &ins, None)?;
    let l = model.loss(&mut tape, task, y, records, kind)?;
    let grads = tape.backward(l)?;

    let used: Vec<usize> = grads.grads.iter().map(|(p, _)| *p).collect();
    let total: usize = used
        .iter()
        .map(|&p| model.params().entries[p].value.data.len())
        .sum();
    let mut probe = model.clone();
    let mut worst = (0.0f64, String::new());
    let mut skipped = 0;
    let mut done = 0;
    while done < samples {
        let mut k = rng.random_range(0..total);
        let mut pid = used[0];
        for &p in &used {
            let len = model.params().entries[p].value.data.len();
            if k < len {
                pid = p;
                break;
            }
            k -= len;
        }
        let analytic = grads.get(pid).expect("sampled from used params").data[k];
        let orig = model.params().entries[pid].value.data[k];
        probe.params_mut().entries[pid].value.data[k] = orig + eps;
        let (up, sig_up) = batch_loss(&probe, task, records, kind)?;
        probe.params_mut().entries[pid].value.data[k] = orig - eps;
        let (down, sig_down) = batch_loss(&probe, task, records, kind)?;
        probe.params_mut().entries[pid].value.data[k] = orig;
        if sig_up != sig_down {
            skipped += 1;
            if skipped > 10 * samples {
                return Err(NnError::Config(
                    "gradient check: almost every probe straddles a kink".into(),
                ));
            }
            continue;
        }
        done += 1;
        let fd = (up - down) / (2.0 * eps);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, format!("{}[{k}]", model.params().entries[pid].name));
        }
    }
    Ok(GradCheck {
        samples,
        skipped,
        max_rel_error: worst.0,
        worst_param: worst.1,
    })
}
