use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, MobilityTensor, TemporalCovariates};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Blizzard,
    Pandemic,
    Holiday,
}

/// How demand returns to normal after an event ends. Recovery lasts as
/// long as the event itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recovery {
    Step,
    Linear,
    Exponential,
}

/// A scripted disruption: demand in each channel is multiplied by its
/// severity over `start..start+duration`, then recovers.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub start: usize,
    pub duration: usize,
    /// One multiplier per channel, or a single one shared by all.
    pub severity: Vec<f64>,
    pub recovery: Recovery,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventScript {
    pub events: Vec<Event>,
}

impl EventKind {
    fn name(self) -> &'static str {
        match self {
            EventKind::Blizzard => "blizzard",
            EventKind::Pandemic => "pandemic",
            EventKind::Holiday => "holiday",
        }
    }
}

impl Recovery {
    fn name(self) -> &'static str {
        match self {
            Recovery::Step => "step",
            Recovery::Linear => "linear",
            Recovery::Exponential => "exponential",
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blizzard" => Ok(EventKind::Blizzard),
            "pandemic" => Ok(EventKind::Pandemic),
            "holiday" => Ok(EventKind::Holiday),
            _ => Err(Error::Config(format!("unknown event kind '{s}'"))),
        }
    }
}

impl FromStr for Recovery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Recovery::Step),
            "linear" => Ok(Recovery::Linear),
            "exponential" => Ok(Recovery::Exponential),
            _ => Err(Error::Config(format!("unknown recovery shape '{s}'"))),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev: Vec<String> = self.severity.iter().map(|s| s.to_string()).collect();
        write!(
            f,
            "{} start={} duration={} severity={} recovery={}",
            self.kind.name(),
            self.start,
            self.duration,
            sev.join(","),
            self.recovery.name()
        )
    }
}

impl FromStr for Event {
    type Err = Error;

    /// `KIND start=S duration=D severity=a[,b,..] [recovery=step|linear|exponential]`
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind: EventKind = parts
            .next()
            .ok_or_else(|| Error::Config("empty event description".into()))?
            .parse()?;
        let (mut start, mut duration, mut severity) = (None, None, None);
        let mut recovery = Recovery::Step;
        let bad = |what: &str| Error::Config(format!("invalid {what} in event '{s}'"));
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("field"))?;
            match k {
                "start" => start = Some(v.parse().map_err(|_| bad("start"))?),
                "duration" => duration = Some(v.parse().map_err(|_| bad("duration"))?),
                "severity" => {
                    severity = Some(
                        v.split(',')
                            .map(|x| x.parse::<f64>().map_err(|_| bad("severity")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "recovery" => recovery = v.parse()?,
                _ => return Err(Error::Config(format!("unknown event field '{k}' in '{s}'"))),
            }
        }
        Ok(Event {
            kind,
            start: start.ok_or_else(|| bad("missing start"))?,
            duration: duration.ok_or_else(|| bad("missing duration"))?,
            severity: severity.ok_or_else(|| bad("missing severity"))?,
            recovery,
        })
    }
}

impl Event {
    fn severity_for(&self, channel: usize) -> f64 {
        if self.severity.len() == 1 {
            self.severity[0]
        } else {
            self.severity[channel]
        }
    }

    /// Demand multiplier at slot `t` for `channel`.
    pub fn multiplier(&self, t: usize, channel: usize) -> f64 {
        let sev = self.severity_for(channel);
        let end = self.start + self.duration;
        if t < self.start || t >= end + self.duration {
            1.0
        } else if t < end {
            sev
        } else {
            let r = (t - end) as f64 / self.duration as f64;
            match self.recovery {
                Recovery::Step => 1.0,
                Recovery::Linear => sev + (1.0 - sev) * r,
                Recovery::Exponential => 1.0 - (1.0 - sev) * (-4.0 * r).exp(),
            }
        }
    }

    pub fn active(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    fn validate(&self, slots: usize, channels: usize) -> Result<()> {
        if self.duration == 0 || self.start + self.duration > slots {
            return Err(Error::contract(format!(
                "event {self} does not fit in {slots} slots"
            )));
        }
        if self.severity.len() != 1 && self.severity.len() != channels {
            return Err(Error::contract(format!(
                "event {self} needs 1 or {channels} severities"
            )));
        }
        if self.severity.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::contract(format!(
                "event {self} has a negative severity"
            )));
        }
        Ok(())
    }
}

impl EventScript {
    pub fn is_event(&self, t: usize) -> bool {
        self.events
            .iter()
            .any(|e| e.kind != EventKind::Holiday && e.active(t))
    }

    pub fn is_holiday(&self, t: usize) -> bool {
        self.events
            .iter()
            .any(|e| e.kind == EventKind::Holiday && e.active(t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub slots: usize,
    pub nodes: usize,
    pub channels: usize,
    pub slot_minutes: usize,
    /// Calendar time of slot 0.
    pub start: NaiveDateTime,
    /// Noise scale; variance is `noise^2` times the mean signal.
    pub noise: f64,
    pub script: EventScript,
}

impl SyntheticConfig {
    /// The standard dataset: 100 days of half-hour slots over 12 regions and
    /// 4 channels, holidays in every split and one blizzard in the test part.
    pub fn standard(seed: u64) -> Self {
        let (slots, channels, slot_minutes) = (4800, 4, 30);
        SyntheticConfig {
            seed,
            slots,
            nodes: 12,
            channels,
            slot_minutes,
            start: default_start(),
            noise: 1.0,
            script: standard_script(slots, channels, slot_minutes),
        }
    }
}

pub(crate) fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

/// Holidays at fixed fractions of the series and one day-long blizzard a
/// third of the way into the test split. Channels recover at different
/// rates via increasing severity.
pub fn standard_script(slots: usize, channels: usize, slot_minutes: usize) -> EventScript {
    let spd = 1440 / slot_minutes;
    let day_at = |frac: f64| ((slots as f64 * frac) as usize / spd) * spd;
    let mut events: Vec<Event> = [0.12, 0.33, 0.55, 0.74, 0.93]
        .iter()
        .map(|&f| Event {
            kind: EventKind::Holiday,
            start: day_at(f),
            duration: spd,
            severity: vec![0.6],
            recovery: Recovery::Step,
        })
        .collect();
    let test_start = slots * 7 / 10 + slots / 10;
    let blizzard_day = ((test_start + (slots - test_start) / 3) / spd + 1) * spd;
    let severity = (0..channels)
        .map(|c| 0.05 + 0.25 * c as f64 / (channels.max(2) - 1) as f64)
        .collect();
    events.push(Event {
        kind: EventKind::Blizzard,
        start: blizzard_day,
        duration: spd,
        severity,
        recovery: Recovery::Exponential,
    });
    events.retain(|e| e.start + 2 * e.duration <= slots);
    EventScript { events }
}

/// Calendar rows for `slots` slots from `start`.
pub fn calendar_covariates(
    start: NaiveDateTime,
    slots: usize,
    slot_minutes: usize,
    holiday: impl Fn(usize) -> bool,
) -> Result<TemporalCovariates> {
    if slot_minutes == 0 || 1440 % slot_minutes != 0 {
        return Err(Error::contract(format!(
            "slot length {slot_minutes} min must divide a day"
        )));
    }
    let spd = 1440 / slot_minutes;
    let v = TemporalCovariates::width_for(spd);
    let mut data = vec![0.0; slots * v];
    for (t, row) in data.chunks_exact_mut(v).enumerate() {
        let at = start + Duration::minutes((t * slot_minutes) as i64);
        let tod = (at.hour() * 60 + at.minute()) as usize / slot_minutes;
        row[tod] = 1.0;
        row[spd + at.weekday().num_days_from_monday() as usize] = 1.0;
        row[spd + 7 + at.month0() as usize] = 1.0;
        if holiday(t) {
            row[v - 1] = 1.0;
        }
    }
    TemporalCovariates::new(Tensor::new(&[slots, v], data)?, spd)
}

struct Profile {
    level: f64,
    daily: (f64, f64),
    twice_daily: (f64, f64),
    weekly: (f64, f64),
}

fn profiles(rng: &mut ChaCha8Rng, nodes: usize, channels: usize) -> Vec<Profile> {
    let two_pi = std::f64::consts::TAU;
    let regions: Vec<(f64, f64)> = (0..nodes)
        .map(|_| (rng.random_range(10.0..60.0), rng.random_range(0.0..two_pi)))
        .collect();
    let mut out = Vec::with_capacity(nodes * channels);
    for &(base, phase) in &regions {
        for c in 0..channels {
            // supply channels trail their demand channel slightly
            let lag = if c % 2 == 1 { 0.15 } else { 0.0 };
            out.push(Profile {
                level: base * rng.random_range(0.5..1.5),
                daily: (
                    rng.random_range(0.3..0.5),
                    phase + lag + rng.random_range(-0.3..0.3),
                ),
                twice_daily: (rng.random_range(0.1..0.25), rng.random_range(0.0..two_pi)),
                weekly: (rng.random_range(0.05..0.2), rng.random_range(0.0..two_pi)),
            });
        }
    }
    out
}

/// Daily and weekly sinusoid mixtures per (region, channel), scaled by
/// scripted events, plus Gaussian noise with variance proportional to the
/// mean and floored at zero.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    let &SyntheticConfig {
        seed,
        slots,
        nodes,
        channels,
        slot_minutes,
        start,
        noise,
        ..
    } = config;
    if slots == 0 || nodes == 0 || channels == 0 {
        return Err(Error::contract(
            "synthetic data dimensions must be positive",
        ));
    }
    if !(noise >= 0.0) {
        return Err(Error::contract("noise scale must be non-negative"));
    }
    for e in &config.script.events {
        e.validate(slots, channels)?;
    }
    let script = &config.script;
    let covariates = calendar_covariates(start, slots, slot_minutes, |t| script.is_holiday(t))?;
    let spd = covariates.slots_per_day;
    let week = 7 * spd;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = profiles(&mut rng, nodes, channels);
    let two_pi = std::f64::consts::TAU;
    let mut values = vec![0.0; slots * nodes * channels];
    for t in 0..slots {
        let tod = covariates.time_of_day(t).expect("one-hot time of day");
        let sow = covariates.slot_of_week(t).expect("one-hot day of week");
        let day_angle = two_pi * tod as f64 / spd as f64;
        let week_angle = two_pi * sow as f64 / week as f64;
        let mult: Vec<f64> = (0..channels)
            .map(|c| script.events.iter().map(|e| e.multiplier(t, c)).product())
            .collect();
        for i in 0..nodes {
            for c in 0..channels {
                let p = &profiles[i * channels + c];
                let shape = 1.0
                    + p.daily.0 * (day_angle + p.daily.1).sin()
                    + p.twice_daily.0 * (2.0 * day_angle + p.twice_daily.1).sin()
                    + p.weekly.0 * (week_angle + p.weekly.1).sin();
                let mean = p.level * shape * mult[c];
                let z: f64 = rng.sample(StandardNormal);
                let y = mean + noise * mean.sqrt() * z;
                values[(t * nodes + i) * channels + c] = y.max(0.0);
            }
        }
    }
    let tensor = MobilityTensor::new(
        Tensor::new(&[slots, nodes, channels], values)?,
        slot_minutes,
    )?;
    Dataset::new(tensor, covariates)
}
