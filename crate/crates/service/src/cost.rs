//! Throughput and cost arithmetic for a fixed-size worker pool.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_MONTH: f64 = 30.0 * 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub monthly_cost_usd: f64,
    pub avg_seconds_per_building: f64,
    pub concurrency: u32,
    pub buildings_per_month: f64,
    pub cost_per_building_usd: f64,
    pub buildings_per_dollar: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0} must be positive")]
pub struct CostError(pub &'static str);

/// Buildings a pool of `concurrency` workers can produce in a 30-day month
/// at `avg_seconds` per building, and what each one costs.
pub fn cost_report(
    monthly_cost_usd: f64,
    avg_seconds: f64,
    concurrency: u32,
) -> Result<CostReport, CostError> {
    if !(monthly_cost_usd > 0.0 && monthly_cost_usd.is_finite()) {
        return Err(CostError("monthly cost"));
    }
    if !(avg_seconds > 0.0 && avg_seconds.is_finite()) {
        return Err(CostError("average seconds per building"));
    }
    if concurrency == 0 {
        return Err(CostError("concurrency"));
    }
    let buildings_per_month = concurrency as f64 * SECONDS_PER_MONTH / avg_seconds;
    Ok(CostReport {
        monthly_cost_usd,
        avg_seconds_per_building: avg_seconds,
        concurrency,
        buildings_per_month,
        cost_per_building_usd: monthly_cost_usd / buildings_per_month,
        buildings_per_dollar: buildings_per_month / monthly_cost_usd,
    })
}

impl std::fmt::Display for CostReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "monthly cost         {:>14.2} USD",
            self.monthly_cost_usd
        )?;
        writeln!(
            f,
            "seconds per building {:>14.2}",
            self.avg_seconds_per_building
        )?;
        writeln!(f, "concurrency          {:>14}", self.concurrency)?;
        writeln!(f, "buildings per month  {:>14.0}", self.buildings_per_month)?;
        writeln!(
            f,
            "cost per building    {:>14.6} USD",
            self.cost_per_building_usd
        )?;
        write!(
            f,
            "buildings per dollar {:>14.2}",
            self.buildings_per_dollar
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_workers_at_a_minute_each() {
        let r = cost_report(1200.0, 60.0, 4).unwrap();
        assert_eq!(r.buildings_per_month, 172_800.0);
        // 172800 / 1200
        assert_eq!(r.buildings_per_dollar, 144.0);
        assert_eq!(r.cost_per_building_usd, 1200.0 / 172_800.0);
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(cost_report(0.0, 60.0, 4).is_err());
        assert!(cost_report(1200.0, -1.0, 4).is_err());
        assert!(cost_report(1200.0, 60.0, 0).is_err());
        assert!(cost_report(f64::NAN, 60.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn doubling_cost_doubles_cost_per_building(cost in 0.01f64..1e6, secs in 0.01f64..1e4, c in 1u32..64) {
            let a = cost_report(cost, secs, c).unwrap();
            let b = cost_report(2.0 * cost, secs, c).unwrap();
            prop_assert_eq!(b.cost_per_building_usd, 2.0 * a.cost_per_building_usd);
            prop_assert_eq!(a.buildings_per_month, b.buildings_per_month);
        }
    }
}
