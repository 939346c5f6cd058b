//! Numeric verification of the decaying-recurrence bound: iterate
//! A_{t+1} = (1 − η_t + C₁η_t²)A_t + C₂ζ_t with equality and check
//! A_t·t^{b−a} never exceeds the constructive constant C_A.

use crate::config::RecurrenceSection;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct RecurrenceVerdict {
    pub holds: bool,
    pub c_a: f64,
    pub worst_ratio: f64,
    pub worst_t: usize,
}

pub fn run_recurrence(case: &RecurrenceSection) -> Result<RecurrenceVerdict, HarnessError> {
    let RecurrenceSection {
        c_eta,
        c_zeta,
        a,
        b,
        c1,
        c2,
        a1,
        horizon,
    } = *case;
    // constraints of the bound
    if !(a > 0.0 && a <= 1.0) {
        return Err(HarnessError::Config(format!(
            "rejected case: a must lie in (0, 1], got {a}"
        )));
    }
    let gap = b - a;
    if gap > -1.0 && gap < 0.0 {
        return Err(HarnessError::Config(format!(
            "rejected case: b − a = {gap} lies in (−1, 0)"
        )));
    }
    if c_eta <= 1.0 + gap {
        return Err(HarnessError::Config(format!(
            "rejected case: C_eta = {c_eta} must exceed 1 + b − a = {}",
            1.0 + gap
        )));
    }
    if c_zeta < 0.0 || c1 < 0.0 || c2 < 0.0 || a1 < 0.0 {
        return Err(HarnessError::Config(
            "rejected case: constants must be nonnegative".into(),
        ));
    }
    if horizon < 2 {
        return Err(HarnessError::Config("rejected case: horizon < 2".into()));
    }

    // the constructive constant takes its max over t ≤ (C₁C_η²)^{1/a} + 1
    let t_star = ((c1 * c_eta * c_eta).powf(1.0 / a).floor() as usize + 1).min(horizon);
    let tail = if c2 * c_zeta == 0.0 {
        0.0
    } else {
        c2 * c_zeta / (c_eta - 1.0 - gap)
    };

    let mut a_t = a1;
    let mut max_head: f64 = 0.0;
    let mut ratios: Vec<(usize, f64)> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let tf = t as f64;
        let weighted = a_t * tf.powf(gap);
        if t <= t_star {
            max_head = max_head.max(weighted);
        }
        ratios.push((t, weighted));
        let eta = c_eta / tf.powf(a);
        let zeta = c_zeta / tf.powf(b);
        a_t = (1.0 - eta + c1 * eta * eta) * a_t + c2 * zeta;
    }
    let c_a = max_head + tail;

    let mut worst_ratio = 0.0;
    let mut worst_t = 1;
    for (t, w) in ratios {
        let r = w / c_a;
        if r > worst_ratio {
            worst_ratio = r;
            worst_t = t;
        }
    }
    Ok(RecurrenceVerdict {
        holds: worst_ratio <= 1.0 + 1e-12,
        c_a,
        worst_ratio,
        worst_t,
    })
}
