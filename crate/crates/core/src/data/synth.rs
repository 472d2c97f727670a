//! Synthetic hourly consumer profiles.
//!
//! Each hour combines a daily shape, a weekday/weekend modulation and a
//! heating/cooling response to temperature. Temperature follows a fixed
//! diurnal and weekly pattern plus a persistent AR(1) anomaly. On top of
//! that, `residence` has academic term breaks and `ev_home` has random
//! evening charging sessions. With zero noise and no events, every profile
//! repeats exactly every 168 hours.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Student residence building with term breaks.
    Residence,
    Detached,
    /// Detached house with an electric vehicle charging most evenings.
    EvHome,
    Townhouse,
    Office,
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::Residence,
        Profile::Detached,
        Profile::EvHome,
        Profile::Townhouse,
        Profile::Office,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Residence => "residence",
            Profile::Detached => "detached",
            Profile::EvHome => "ev_home",
            Profile::Townhouse => "townhouse",
            Profile::Office => "office",
        }
    }

    pub fn has_events(self) -> bool {
        matches!(self, Profile::Residence | Profile::EvHome)
    }

    /// Typical hourly consumption in kWh, used to scale the noise.
    fn level(self) -> f64 {
        match self {
            Profile::Residence => 60.0,
            Profile::Detached | Profile::EvHome => 1.0,
            Profile::Townhouse => 0.8,
            Profile::Office => 25.0,
        }
    }

    /// Event-free consumption for one hour.
    fn base(self, hour: u32, weekday: u32, temp: f64) -> f64 {
        let h = f64::from(hour);
        let weekend = weekday >= 5;
        let heat = (18.0 - temp).max(0.0);
        let cool = (temp - 22.0).max(0.0);
        match self {
            Profile::Residence => {
                let daily = 1.0 + 0.3 * (2.0 * PI * (h - 15.0) / 24.0).sin() + 0.12 * (4.0 * PI * (h - 20.0) / 24.0).sin();
                let week = if weekend { 0.88 } else { 1.0 };
                60.0 * daily * week + 1.4 * heat + 2.0 * cool
            }
            Profile::Detached | Profile::EvHome => {
                let morning = if weekend { bump(h, 9.0, 2.0) } else { bump(h, 7.0, 1.5) };
                let midday = if weekend { 0.3 * bump(h, 13.0, 3.0) } else { 0.0 };
                0.35 + 0.5 * morning + midday + 1.0 * bump(h, 19.0, 2.5) + 0.05 * heat + 0.08 * cool
            }
            Profile::Townhouse => {
                let morning = if weekend { bump(h, 9.5, 2.0) } else { bump(h, 7.5, 1.2) };
                0.3 + 0.35 * morning + 0.7 * bump(h, 18.5, 2.0) + 0.03 * heat + 0.05 * cool
            }
            Profile::Office => {
                let open = !weekend && (8..18).contains(&hour);
                let occupied = if open { 1.0 } else { 0.0 };
                let ramp = if weekend { 0.0 } else { 0.3 * (bump(h, 7.5, 0.8) + bump(h, 18.5, 0.8)) };
                12.0 + 22.0 * occupied + 10.0 * ramp + (0.4 + 0.4 * occupied) * heat + 1.2 * occupied * cool
            }
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile `{s}`")))
    }
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    let d = h - center;
    (-(d * d) / (2.0 * width * width)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub profile: Profile,
    pub days: usize,
    pub seed: u64,
    /// Relative noise level; 0 disables all noise.
    pub noise: f64,
    pub start: NaiveDateTime,
    /// Probability of a charging session on any evening (`ev_home`).
    pub ev_rate: f64,
}

impl SynthOptions {
    pub fn new(profile: Profile, days: usize, seed: u64, noise: f64) -> Self {
        SynthOptions {
            profile,
            days,
            seed,
            noise,
            // a Monday
            start: NaiveDate::from_ymd_opt(2021, 1, 4)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid start date"),
            ev_rate: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub series: TimeSeries,
    pub charging_sessions: usize,
}

/// Charging power in kW.
const EV_POWER: f64 = 7.2;
const TEMP_PERSISTENCE: f64 = 0.95;

pub fn synth_generate(profile: Profile, days: usize, seed: u64, noise: f64) -> Result<TimeSeries> {
    synth_generate_with(&SynthOptions::new(profile, days, seed, noise)).map(|o| o.series)
}

pub fn synth_generate_with(opts: &SynthOptions) -> Result<SynthOutput> {
    if opts.days < 4 {
        return Err(Error::Config(format!("days must be at least 4, got {}", opts.days)));
    }
    if !(opts.noise >= 0.0) || !opts.noise.is_finite() {
        return Err(Error::Config(format!("noise must be a finite value >= 0, got {}", opts.noise)));
    }
    if !(0.0..=1.0).contains(&opts.ev_rate) {
        return Err(Error::Config(format!("ev_rate must lie in [0, 1], got {}", opts.ev_rate)));
    }
    let hours = opts.days * 24;
    let profile = opts.profile;
    let mut temp_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "synth.temperature"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "synth.noise"));

    let timestamps: Vec<NaiveDateTime> = (0..hours).map(|i| opts.start + TimeDelta::hours(i as i64)).collect();
    let mut ev_extra = vec![0.0; hours];
    let mut sessions = 0;
    if profile == Profile::EvHome {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "synth.ev"));
        for day in 0..opts.days {
            if rng.random_bool(opts.ev_rate) {
                sessions += 1;
                let first = day * 24 + rng.random_range(18..=22);
                let len = rng.random_range(3..=4);
                for slot in ev_extra.iter_mut().skip(first).take(len) {
                    *slot += EV_POWER;
                }
            }
        }
    }
    let breaks = (profile == Profile::Residence).then(|| TermBreaks::draw(opts));

    let anomaly_std = 40.0 * opts.noise;
    let innovation = anomaly_std * (1.0 - TEMP_PERSISTENCE * TEMP_PERSISTENCE).sqrt();
    let mut anomaly = if opts.noise > 0.0 {
        anomaly_std * temp_rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let mut consumption = Vec::with_capacity(hours);
    let mut temperature = Vec::with_capacity(hours);
    for (i, ts) in timestamps.iter().enumerate() {
        let (hour, weekday) = (ts.hour(), ts.weekday().num_days_from_monday());
        if i > 0 && opts.noise > 0.0 {
            anomaly = TEMP_PERSISTENCE * anomaly + innovation * temp_rng.sample::<f64, _>(StandardNormal);
        }
        let temp = 10.0
            + 5.0 * (2.0 * PI * (f64::from(hour) - 9.0) / 24.0).sin()
            + 3.0 * (2.0 * PI * f64::from(weekday) / 7.0).sin()
            + anomaly;
        let mut value = profile.base(hour, weekday, temp);
        if let Some(b) = &breaks {
            value *= b.factor(ts.date());
        }
        value += ev_extra[i];
        if opts.noise > 0.0 {
            value += opts.noise * profile.level() * noise_rng.sample::<f64, _>(StandardNormal);
        }
        consumption.push(value.max(0.0));
        temperature.push(temp);
    }
    Ok(SynthOutput {
        series: TimeSeries::new(timestamps, consumption, Some(temperature))?,
        charging_sessions: sessions,
    })
}

/// Academic calendar of the residence profile; break dates shift by a few
/// seeded days each year.
struct TermBreaks {
    seed: u64,
}

impl TermBreaks {
    fn draw(opts: &SynthOptions) -> Self {
        TermBreaks {
            seed: derive_seed(opts.seed, "synth.terms"),
        }
    }

    fn jitter(&self, year: i32, which: u64) -> i64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (year as u64).wrapping_mul(0x9e37) ^ which);
        rng.random_range(-3..=3)
    }

    fn factor(&self, date: NaiveDate) -> f64 {
        let year = date.year();
        let day = |m: u32, d: u32, which: u64| {
            NaiveDate::from_ymd_opt(year, m, d).expect("valid calendar date") + TimeDelta::days(self.jitter(year, which))
        };
        let in_range = |a: NaiveDate, b: NaiveDate| date >= a && date <= b;
        if date <= day(1, 5, 1) || date >= day(12, 18, 2) {
            0.55
        } else if in_range(day(2, 15, 3), day(2, 21, 3)) {
            0.8
        } else if in_range(day(5, 1, 4), day(8, 31, 5)) {
            0.7
        } else {
            1.0
        }
    }
}
