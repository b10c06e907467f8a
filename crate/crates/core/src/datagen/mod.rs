//! Synthetic consumer-to-consumer marketplace.
//!
//! Users carry a unit-norm preference over categories; items carry a category,
//! a quality score and a stock count. Clicks are Bernoulli draws from a known
//! logistic model, so the Bayes-optimal click probability of every impression
//! is recorded alongside its label. Items whose stock runs out leave the
//! catalog for good, which is what starves single-unit items of interactions.

mod io;

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};

pub use io::{read_dataset, write_dataset, DATASET_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Simulated days; the last one is held out for testing.
    pub days: usize,
    /// Share of items created with a single unit of stock.
    pub limited_fraction: f64,
    pub min_multi: u32,
    pub max_multi: u32,
    pub purchase_given_click: f64,
    /// New items per day as a fraction of the initial catalog size.
    pub new_item_rate: f64,
    pub bias: f64,
    pub w_aff: f64,
    pub w_q: f64,
    /// Mean impressions per user per day.
    pub activity_mean: f64,
    /// Share of impressions drawn uniformly from the live catalog.
    pub exploration: f64,
    /// Inverse temperature of the category-choice softmax.
    pub affinity_temperature: f64,
    /// Gamma shape used to draw preference weights; small values give
    /// peaked preferences.
    pub preference_concentration: f64,
    pub max_history: usize,
    /// An item counts as new while `day - created_day < new_window_days`.
    pub new_window_days: i64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 2000,
            n_items: 10_000,
            n_categories: 8,
            days: 8,
            limited_fraction: 0.7,
            min_multi: 2,
            max_multi: 20,
            purchase_given_click: 0.5,
            new_item_rate: 0.05,
            bias: -2.5,
            w_aff: 3.0,
            w_q: 1.5,
            activity_mean: 12.5,
            exploration: 0.2,
            affinity_temperature: 4.0,
            preference_concentration: 0.5,
            max_history: 20,
            new_window_days: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 {
            return fail("n_users, n_items and n_categories must be positive");
        }
        if self.days == 0 {
            return fail("days must be at least 1");
        }
        for (name, v) in [
            ("limited_fraction", self.limited_fraction),
            ("purchase_given_click", self.purchase_given_click),
            ("exploration", self.exploration),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(&format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.min_multi < 2 || self.max_multi < self.min_multi {
            return fail("multi-stock range must satisfy 2 <= min_multi <= max_multi");
        }
        if !(self.activity_mean > 0.0) || self.new_item_rate < 0.0 {
            return fail("activity_mean must be positive and new_item_rate non-negative");
        }
        if !(self.preference_concentration > 0.0) {
            return fail("preference_concentration must be positive");
        }
        if self.max_history == 0 || self.new_window_days < 1 {
            return fail("max_history and new_window_days must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub item_id: u64,
    pub category_id: u32,
    pub stock_count: u32,
    pub quality: f64,
    pub created_day: i64,
}

impl ItemSpec {
    pub fn is_limited(&self) -> bool {
        self.stock_count == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub user_id: u64,
    pub preference: Vec<f64>,
    pub activity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item_id: u64,
    pub category_id: u32,
    pub is_limited: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpressionRecord {
    pub day: i64,
    pub user_id: u64,
    pub item_id: u64,
    pub item_category: u32,
    pub label: u8,
    pub true_ctr: f64,
    pub item_is_limited: bool,
    pub item_is_new: bool,
    /// Prior clicks, most recent first.
    pub user_history: Vec<HistoryEntry>,
}

/// Ground-truth click probability.
pub fn true_ctr(user: &UserSpec, item: &ItemSpec, config: &GeneratorConfig) -> f64 {
    let affinity = user.preference[item.category_id as usize];
    sigmoid(config.bias + config.w_aff * affinity + config.w_q * item.quality)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarketState {
    pub config: GeneratorConfig,
    pub users: Vec<UserSpec>,
    /// Every item ever created; `items[k].item_id == k + 1`.
    pub items: Vec<ItemSpec>,
    pub remaining: Vec<u32>,
    live: Vec<u64>,
    live_by_category: Vec<Vec<u64>>,
    // (position in `live`, position in its category list)
    live_pos: Vec<Option<(usize, usize)>>,
    histories: Vec<VecDeque<HistoryEntry>>,
    /// Last simulated day; the initial catalog exists on day 0.
    pub day: i64,
    rng: ChaCha8Rng,
}

/// A sale that exhausted an item's stock, with the index of the impression
/// whose click triggered it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoldOut {
    pub item_id: u64,
    pub record_index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SimulationOutput {
    pub records: Vec<ImpressionRecord>,
    pub sold_out: Vec<SoldOut>,
    /// Days that ended early because the catalog was empty.
    pub days_ended_early: usize,
}

pub fn build_market(config: &GeneratorConfig, seed: u64) -> Result<MarketState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(config.preference_concentration, 1.0)
        .map_err(|e| Error::Config(e.to_string()))?;
    let users = (0..config.n_users)
        .map(|u| {
            let mut pref: Vec<f64> = (0..config.n_categories).map(|_| gamma.sample(&mut rng)).collect();
            let norm = pref.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                pref.iter_mut().for_each(|v| *v /= norm);
            } else {
                let c = 1.0 / (config.n_categories as f64).sqrt();
                pref.iter_mut().for_each(|v| *v = c);
            }
            let activity = config.activity_mean * rng.random_range(0.5..1.5);
            UserSpec {
                user_id: u as u64 + 1,
                preference: pref,
                activity,
            }
        })
        .collect();
    let mut market = MarketState {
        config: config.clone(),
        users,
        items: Vec::new(),
        remaining: Vec::new(),
        live: Vec::new(),
        live_by_category: vec![Vec::new(); config.n_categories],
        live_pos: Vec::new(),
        histories: vec![VecDeque::new(); config.n_users],
        day: 0,
        rng,
    };
    for _ in 0..config.n_items {
        let created = -market.rng.random_range(0..30i64);
        market.add_item(created);
    }
    Ok(market)
}

impl MarketState {
    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn is_live(&self, item_id: u64) -> bool {
        self.live_pos[(item_id - 1) as usize].is_some()
    }

    pub fn item(&self, item_id: u64) -> &ItemSpec {
        &self.items[(item_id - 1) as usize]
    }

    fn add_item(&mut self, created_day: i64) {
        let cfg = &self.config;
        let item_id = self.items.len() as u64 + 1;
        let category_id = self.rng.random_range(0..cfg.n_categories) as u32;
        let stock_count = if self.rng.random::<f64>() < cfg.limited_fraction {
            1
        } else {
            self.rng.random_range(cfg.min_multi..=cfg.max_multi)
        };
        let quality = self.rng.random_range(-1.0..=1.0);
        self.items.push(ItemSpec {
            item_id,
            category_id,
            stock_count,
            quality,
            created_day,
        });
        self.remaining.push(stock_count);
        let cat = &mut self.live_by_category[category_id as usize];
        self.live_pos.push(Some((self.live.len(), cat.len())));
        cat.push(item_id);
        self.live.push(item_id);
    }

    fn remove_live(&mut self, item_id: u64) {
        let idx = (item_id - 1) as usize;
        let Some((pos, cpos)) = self.live_pos[idx].take() else { return };
        self.live.swap_remove(pos);
        if let Some(&moved) = self.live.get(pos) {
            self.live_pos[(moved - 1) as usize].as_mut().unwrap().0 = pos;
        }
        let cat = self.items[idx].category_id as usize;
        let list = &mut self.live_by_category[cat];
        list.swap_remove(cpos);
        if let Some(&moved) = list.get(cpos) {
            self.live_pos[(moved - 1) as usize].as_mut().unwrap().1 = cpos;
        }
    }

    fn pick_item(&mut self, user: usize) -> u64 {
        if self.rng.random::<f64>() < self.config.exploration {
            return self.live[self.rng.random_range(0..self.live.len())];
        }
        let temp = self.config.affinity_temperature;
        let pref = &self.users[user].preference;
        let weights: Vec<f64> = self
            .live_by_category
            .iter()
            .enumerate()
            .map(|(c, l)| if l.is_empty() { 0.0 } else { (temp * pref[c]).exp() })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut r = self.rng.random::<f64>() * total;
        let mut cat = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (c, &w) in weights.iter().enumerate() {
            if w > 0.0 && r < w {
                cat = c;
                break;
            }
            r -= w;
        }
        let list = &self.live_by_category[cat];
        list[self.rng.random_range(0..list.len())]
    }

    /// Runs `days` further days of traffic.
    pub fn simulate(&mut self, days: usize) -> Result<SimulationOutput> {
        if days == 0 {
            return Err(Error::Config("simulate needs at least one day".into()));
        }
        let mut out = SimulationOutput::default();
        let new_per_day = (self.config.new_item_rate * self.config.n_items as f64).round() as usize;
        for _ in 0..days {
            self.day += 1;
            let day = self.day;
            for _ in 0..new_per_day {
                self.add_item(day);
            }
            let mut slots = Vec::new();
            for (u, user) in self.users.iter().enumerate() {
                let base = user.activity.floor();
                let extra = usize::from(self.rng.random::<f64>() < user.activity - base);
                slots.extend(std::iter::repeat_n(u, base as usize + extra));
            }
            slots.shuffle(&mut self.rng);

            for u in slots {
                if self.live.is_empty() {
                    out.days_ended_early += 1;
                    break;
                }
                let item_id = self.pick_item(u);
                let item = self.item(item_id).clone();
                let ctr = true_ctr(&self.users[u], &item, &self.config);
                let clicked = self.rng.random::<f64>() < ctr;
                out.records.push(ImpressionRecord {
                    day,
                    user_id: self.users[u].user_id,
                    item_id,
                    item_category: item.category_id,
                    label: u8::from(clicked),
                    true_ctr: ctr,
                    item_is_limited: item.is_limited(),
                    item_is_new: day - item.created_day < self.config.new_window_days,
                    user_history: self.histories[u].iter().copied().collect(),
                });
                if !clicked {
                    continue;
                }
                let hist = &mut self.histories[u];
                hist.push_front(HistoryEntry {
                    item_id,
                    category_id: item.category_id,
                    is_limited: item.is_limited(),
                });
                hist.truncate(self.config.max_history);
                if self.rng.random::<f64>() < self.config.purchase_given_click {
                    let idx = (item_id - 1) as usize;
                    self.remaining[idx] -= 1;
                    if self.remaining[idx] == 0 {
                        self.remove_live(item_id);
                        out.sold_out.push(SoldOut {
                            item_id,
                            record_index: out.records.len() - 1,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Builds a market and simulates `config.days` days of traffic.
pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<SimulationOutput> {
    build_market(config, seed)?.simulate(config.days)
}

/// Splits records into (train, test): the final day is the test set.
pub fn split_by_last_day(records: Vec<ImpressionRecord>, days: usize) -> (Vec<ImpressionRecord>, Vec<ImpressionRecord>) {
    let last = days as i64;
    records.into_iter().partition(|r| r.day < last)
}
