use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use bigthick::geo::BoundingBox;
use bigthick::personal::{PositionParams, QuestionSchedule};
use bigthick::time::Interval;
use bigthick::unify::UnificationParams;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Places as CSV, or GeoJSON when the extension is `.geojson` / `.json`.
    pub places: PathBuf,
    pub batteries: PathBuf,
    pub gps: PathBuf,
    /// Directory for every derived file.
    pub out: PathBuf,
    /// Etype and property pairs; the built-in preset when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// Diary answer vocabulary; the built-in one when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            places: "data/places.csv".into(),
            batteries: "data/batteries.csv".into(),
            gps: "data/gps.csv".into(),
            out: "out".into(),
            mapping: None,
            vocabulary: None,
        }
    }
}

impl Paths {
    pub fn reference(&self) -> PathBuf {
        self.out.join("reference.json")
    }

    pub fn streams(&self) -> PathBuf {
        self.out.join("streams.json")
    }

    pub fn observation(&self) -> PathBuf {
        self.out.join("observation.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Distance under which two places get a `Near` triple.
    pub place_near_m: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { place_near_m: bigthick::reference::DEFAULT_PLACE_NEAR_M }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalConfig {
    /// Minutes between batteries, one entry per week.
    pub schedule: QuestionSchedule,
    pub position: PositionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_places: usize,
    pub n_participants: u32,
    pub visits: usize,
    pub colocations: usize,
    pub max_jitter_m: f64,
    pub unanswered_rate: f64,
    pub step_sigma_m: f64,
    pub gps_noise_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_places: 500,
            n_participants: 20,
            visits: 50,
            colocations: 5,
            max_jitter_m: 10.0,
            unanswered_rate: 0.1,
            step_sigma_m: 5.0,
            gps_noise_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub label: String,
    pub bbox: BoundingBox,
    pub period: Interval,
    pub paths: Paths,
    pub reference: ReferenceConfig,
    pub personal: PersonalConfig,
    pub unification: UnificationParams,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            workers: 0,
            label: "Trento".into(),
            bbox: BoundingBox::new(46.05, 46.086, 11.10, 11.152).expect("valid default box"),
            period: Interval::parse("05-08 00:00:00", "06-04 23:59:59").expect("valid default period"),
            paths: Paths::default(),
            reference: ReferenceConfig::default(),
            personal: PersonalConfig::default(),
            unification: UnificationParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a plain string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("at least one part");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Copies `top` over `base`, descending into tables present on both sides.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// The defaults, overlaid with the file and then every `key=value`
    /// override, so a partial table such as `period.end` is enough.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = Table::try_from(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let file = text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.reference.place_near_m.is_nan() || self.reference.place_near_m <= 0.0 {
            return bad(format!("reference.place_near_m must be positive, got {}", self.reference.place_near_m));
        }
        let p = &self.personal.position;
        if p.eps_m.is_nan() || p.eps_m <= 0.0 || p.min_pts == 0 || p.window_secs <= 0 {
            return bad("personal.position thresholds must be positive".into());
        }
        if self.personal.schedule.spacing_minutes.is_empty() || self.personal.schedule.spacing_minutes.contains(&0) {
            return bad("personal.schedule needs positive spacings".into());
        }
        self.unification.validate().map_err(|e| CliError::Config(format!("unification: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "unification.near_threshold_m=40".into(),
                "period.end=06-11 23:59:59".into(),
                "paths.out=\"elsewhere\"".into(),
                "personal.schedule=[60]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.unification.near_threshold_m, 40.0);
        assert_eq!(cfg.period.end.to_string(), "06-11 23:59:59");
        assert_eq!(cfg.paths.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.personal.schedule.spacing_minutes, vec![60]);
    }

    #[test]
    fn typos_and_bad_thresholds_are_rejected() {
        assert!(matches!(RunConfig::load(None, &["unifcation.x=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &["reference.place_near_m=0".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &["seed".into()]), Err(CliError::Config(_))));
    }
}
