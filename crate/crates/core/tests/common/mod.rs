//! Scripted traces shared by the integration tests.

#![allow(dead_code)]

use tiersim_core::{CostModel, PolicyKind, SimConfig, TierConfig, Trace};

pub const PAGE: u64 = 4096;
pub const INTERVAL_NS: u64 = 1_000_000;

/// One cold filler site and one hot site of `pages` pages each. The filler
/// allocates first and takes the fast tier; the hot site lands on the slow
/// tier. Each site's first 4 KiB goes to a private arena so the big object
/// is the first shared allocation.
///
/// The hot object then takes `per_interval` reads in each of `hot` intervals,
/// followed by `quiet` intervals of pure compute.
pub struct RentBuy {
    pub pages: u64,
    pub per_interval: u64,
    pub hot: u64,
    pub quiet: u64,
}

impl RentBuy {
    pub fn fast_capacity(&self) -> u64 {
        self.pages + 1
    }

    pub fn cost(&self) -> CostModel {
        CostModel {
            promotion_threshold_bytes: 0,
            sample_period: 1,
            interval_ns: INTERVAL_NS,
            ..Default::default()
        }
    }

    pub fn config(&self, policy: PolicyKind, fast: u64) -> SimConfig {
        SimConfig::new(
            self.cost(),
            TierConfig {
                fast_capacity_pages: fast,
                slow_capacity_pages: None,
            },
            policy,
        )
        .expect("scenario config is valid")
    }

    pub fn trace(&self) -> Trace {
        let mut t = String::new();
        let big = self.pages * PAGE;
        t.push_str(&format!(
            "A 0 1 {PAGE}\nA 0 1 {big}\nA 0 2 {PAGE}\nA 0 2 {big}\n"
        ));
        let slow_read = self.cost().slow_read_ns();
        for _ in 0..self.hot {
            for i in 0..self.per_interval {
                t.push_str(&format!("R 4 {}\n", (i % self.pages) * PAGE));
            }
            t.push_str(&format!(
                "T {}\n",
                INTERVAL_NS - self.per_interval * slow_read
            ));
        }
        for _ in 0..self.quiet {
            t.push_str(&format!("T {INTERVAL_NS}\n"));
        }
        Trace::from_text(&t).expect("scripted trace is valid")
    }
}

pub struct RentBuyOutcome {
    /// Time above an all-fast run for the online policy.
    pub online: u64,
    /// Time above an all-fast run if the hot site stays slow throughout.
    pub rent_forever: u64,
    /// Cost of fixing the placement once.
    pub purchase: u64,
    pub migrations: usize,
}

impl RentBuyOutcome {
    pub fn best_static(&self) -> u64 {
        self.rent_forever.min(self.purchase)
    }

    pub fn ratio(&self) -> f64 {
        self.online as f64 / self.best_static().max(1) as f64
    }
}

pub fn play(s: &RentBuy) -> RentBuyOutcome {
    let trace = s.trace();
    let ideal = tiersim_core::run(&s.config(PolicyKind::FirstTouch, u64::MAX), &trace).unwrap();
    let stay =
        tiersim_core::run(&s.config(PolicyKind::FirstTouch, s.fast_capacity()), &trace).unwrap();
    let online = tiersim_core::run(
        &s.config(PolicyKind::OnlineGuided, s.fast_capacity()),
        &trace,
    )
    .unwrap();
    let purchase = online.decisions.first().map_or(0, |d| d.purchase_cost_ns);
    RentBuyOutcome {
        online: online.total_sim_ns - ideal.total_sim_ns,
        rent_forever: stay.total_sim_ns - ideal.total_sim_ns,
        purchase,
        migrations: online.decisions.iter().filter(|d| d.migrate).count(),
    }
}

/// Scenario family for the rent-or-buy checks: 5 page counts, 5 access
/// rates, 20 hot-phase lengths.
pub fn rent_buy_family() -> Vec<RentBuy> {
    let mut out = Vec::new();
    for pages in [4, 8, 16, 32, 64] {
        for per_interval in [20, 50, 100, 200, 500] {
            for hot in 1..=20 {
                out.push(RentBuy {
                    pages,
                    per_interval,
                    hot,
                    quiet: 2,
                });
            }
        }
    }
    out
}
