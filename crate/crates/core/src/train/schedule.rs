use serde::{Deserialize, Serialize};

use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Linear warmup to the peak, then `peak * decay_rate^(step - warmup)`.
    Exponential,
    /// Linear warmup, then inverse square root decay.
    Noam,
}

pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps.max(1);
    if step <= warmup {
        return cfg.peak_lr * (step as f64 / warmup as f64);
    }
    match cfg.schedule {
        Schedule::Exponential => cfg.peak_lr * cfg.decay_rate.powf((step - warmup) as f64),
        Schedule::Noam => cfg.peak_lr * (warmup as f64 / step as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(4000, &cfg), 1e-3);
        assert_eq!(lr_schedule(2000, &cfg), 5e-4);
        let c = TrainConfig {
            decay_rate: 0.9999,
            ..TrainConfig::default()
        };
        let want = 9.999e-4;
        assert!((lr_schedule(4001, &c) - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn monotone_around_warmup() {
        for schedule in [Schedule::Exponential, Schedule::Noam] {
            let c = TrainConfig {
                schedule,
                ..TrainConfig::default()
            };
            for s in 1..4000 {
                assert!(lr_schedule(s + 1, &c) > lr_schedule(s, &c));
            }
            for s in 4000..20000 {
                assert!(lr_schedule(s + 1, &c) < lr_schedule(s, &c));
            }
        }
    }
}
