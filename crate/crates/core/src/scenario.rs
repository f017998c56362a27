//! Scenario files and the staged runner behind the `rokdim` binary.
//!
//! A scenario fixes a system and the parameters of every stage. Reports carry
//! no wall-clock data so that two runs of one scenario serialise to identical
//! bytes; timings are returned separately.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cstar::inner::IdentityApproximation;
use crate::cstar::norm::NormPolicy;
use crate::cstar::pipeline::{self, PipelineConfig, PipelineReport};
use crate::dynsys::{self, SampledSystem, SystemSpec};
use crate::error::{Error, Result};
use crate::markers::{self, ControlledMarker};
use crate::rational::{self, rat, Rational};
use crate::rokhlin::{self, Bounds, RokhlinCover, ToleranceReport, TowerFamily};

pub const SCHEMA: &str = "rokdim.report/1";

/// Violations listed in a freeness failure before truncation.
const LISTED_VIOLATIONS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FreeCheck,
    Marker,
    Cover,
    Towers,
    Verify,
    Crossed,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::FreeCheck, Stage::Marker, Stage::Cover, Stage::Towers, Stage::Verify, Stage::Crossed];

    pub fn name(self) -> &'static str {
        match self {
            Stage::FreeCheck => "free-check",
            Stage::Marker => "marker",
            Stage::Cover => "cover",
            Stage::Towers => "towers",
            Stage::Verify => "verify",
            Stage::Crossed => "crossed",
        }
    }

    /// The stage whose output this one consumes, if any.
    fn input(self, sc: &Scenario, external_family: bool) -> Option<Stage> {
        match self {
            Stage::FreeCheck | Stage::Marker => None,
            Stage::Cover => Some(Stage::Marker),
            Stage::Towers => Some(Stage::Cover),
            Stage::Verify if external_family => None,
            Stage::Verify => Some(Stage::Towers),
            Stage::Crossed => match sc.crossed.as_ref().map(|c| c.family) {
                Some(FamilySource::Towers) => Some(Stage::Verify),
                _ => None,
            },
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

/// Parses a comma-separated stage list.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Stage::from_str).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: SystemSpec,
    pub m: usize,
    pub d: usize,
    #[serde(default, with = "rational::serde_opt", skip_serializing_if = "Option::is_none")]
    pub closure_eps: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover: Option<CoverParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub towers: Option<TowerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossed: Option<CrossedParams>,
}

/// Side of the Rokhlin cover built from the controlled marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverParams {
    pub n: usize,
}

/// Tapered towers over `B_L` with taper parameter `n`; the cover side must
/// be `8 L n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerParams {
    #[serde(rename = "L")]
    pub l: usize,
    pub n: usize,
    #[serde(default, with = "rational::serde_opt", skip_serializing_if = "Option::is_none")]
    pub delta_bump: Option<Rational>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilySource {
    /// Indicator towers of the exact `B_{2n}` tiling.
    #[default]
    Tiling,
    /// The normalised family of the verify stage.
    Towers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossedParams {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(default)]
    pub family: FamilySource,
    /// Replaces `f_v` by `(1 - η) f_v + η f_{v+e_1}` before the run.
    #[serde(default, with = "rational::serde_opt", skip_serializing_if = "Option::is_none")]
    pub mix: Option<Rational>,
    /// Adds random unit-sup monomials and their sum to the test operators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_zero_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_floor: Option<f64>,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Builds the system and checks parameter sanity.
    pub fn system(&self) -> Result<SampledSystem> {
        let mut sys = SampledSystem::from_spec(&self.system)?;
        if let Some(eps) = &self.closure_eps {
            sys = sys.with_closure_eps(*eps)?;
        }
        if sys.rank() != self.m {
            return Err(Error::RankMismatch { expected: self.m, got: sys.rank() });
        }
        if let Some(c) = &self.cover {
            if c.n == 0 {
                return Err(Error::InvalidParameter("cover side n must be >= 1".into()));
            }
        }
        if let Some(t) = &self.towers {
            let Some(c) = &self.cover else {
                return Err(Error::InvalidParameter("towers need a cover section".into()));
            };
            if t.l == 0 || t.n == 0 || c.n != 8 * t.l * t.n {
                return Err(Error::InvalidParameter(format!(
                    "cover side {} must equal 8 L n = {} for the towers",
                    c.n,
                    8 * t.l * t.n
                )));
            }
        }
        if let Some(x) = &self.crossed {
            if x.big_n == 0 || x.big_n > x.n {
                return Err(Error::InvalidParameter(format!("need 1 <= N <= n (N = {}, n = {})", x.big_n, x.n)));
            }
            if x.family == FamilySource::Towers && self.towers.as_ref().is_none_or(|t| t.l != 2 * x.n) {
                return Err(Error::InvalidParameter("family \"towers\" needs towers with L = 2n".into()));
            }
        }
        Ok(sys)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stages to run together with their inputs; `None` runs every
    /// configured stage.
    pub stages: Option<Vec<Stage>>,
    /// Rejects random test operators and power-iteration norm estimates.
    pub seedless: bool,
    /// A tower family to verify and use in place of the constructed one.
    pub family: Option<TowerFamily>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Passed,
    Failed,
    Skipped,
    Halted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageError {
    pub code: String,
    pub message: String,
}

impl From<&Error> for StageError {
    fn from(e: &Error) -> Self {
        StageError { code: e.code().into(), message: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSummary {
    pub points: usize,
    pub rank: usize,
    #[serde(with = "rational::serde_str")]
    pub closure_eps: Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: String,
    pub scenario: String,
    pub system: SystemSummary,
    pub stages: Vec<StageReport>,
    pub bounds: Bounds,
    /// True when every executed stage passed.
    pub pass: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|r| r.stage == stage)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    /// File name to contents, for the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per executed stage.
    pub timings: Vec<(Stage, f64)>,
}

impl RunOutcome {
    pub fn timings_json(&self) -> String {
        let map: BTreeMap<&str, f64> = self.timings.iter().map(|(s, t)| (s.name(), *t)).collect();
        serde_json::to_string_pretty(&map).expect("timings serialise") + "\n"
    }
}

#[derive(Default)]
struct State {
    marker: Option<ControlledMarker>,
    cover: Option<RokhlinCover>,
    raw: Option<TowerFamily>,
    normalized: Option<TowerFamily>,
}

/// What a stage produced: pass flag, report detail and artifacts.
struct StageOutput {
    pass: bool,
    error: Option<StageError>,
    detail: Value,
    artifacts: Vec<(String, String)>,
}

impl StageOutput {
    fn new(pass: bool, detail: Value) -> Self {
        StageOutput { pass, error: None, detail, artifacts: Vec::new() }
    }

    fn with(mut self, name: &str, contents: String) -> Self {
        self.artifacts.push((name.into(), contents));
        self
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

fn configured(sc: &Scenario, stage: Stage, external_family: bool) -> bool {
    match stage {
        Stage::FreeCheck | Stage::Marker | Stage::Cover => sc.cover.is_some(),
        Stage::Towers => sc.towers.is_some(),
        Stage::Verify => sc.towers.is_some() || external_family,
        Stage::Crossed => sc.crossed.is_some(),
    }
}

/// Runs the selected stages in order. A failed stage halts every later
/// stage. Errors are returned only when the scenario itself is invalid.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let sys = sc.system()?;
    let external = opts.family.is_some();
    let mut selected: Vec<Stage> = match &opts.stages {
        Some(list) => list.clone(),
        None => Stage::ALL.to_vec(),
    };
    let mut i = 0;
    while i < selected.len() {
        if let Some(dep) = selected[i].input(sc, external) {
            if !selected.contains(&dep) {
                selected.push(dep);
            }
        }
        i += 1;
    }

    let mut state = State::default();
    let mut stages = Vec::new();
    let mut artifacts = BTreeMap::new();
    let mut timings = Vec::new();
    let mut halted = false;
    for stage in Stage::ALL {
        if !selected.contains(&stage) || !configured(sc, stage, external) {
            let reason = if selected.contains(&stage) { "not configured" } else { "not selected" };
            stages.push(StageReport { stage, status: Status::Skipped, error: None, detail: Some(json!({ "reason": reason })) });
            continue;
        }
        if halted {
            stages.push(StageReport { stage, status: Status::Halted, error: None, detail: None });
            continue;
        }
        let start = Instant::now();
        let out = run_stage(stage, sc, &sys, opts, &mut state).unwrap_or_else(|e| StageOutput {
            pass: false,
            error: Some(StageError::from(&e)),
            detail: Value::Null,
            artifacts: Vec::new(),
        });
        timings.push((stage, start.elapsed().as_secs_f64()));
        halted = !out.pass;
        artifacts.extend(out.artifacts);
        stages.push(StageReport {
            stage,
            status: if out.pass { Status::Passed } else { Status::Failed },
            error: out.error,
            detail: (!out.detail.is_null()).then_some(out.detail),
        });
    }
    let pass = stages.iter().all(|s| s.status != Status::Failed);
    let report = RunReport {
        schema: SCHEMA.into(),
        scenario: sc.name.clone(),
        system: SystemSummary { points: sys.points(), rank: sys.rank(), closure_eps: sys.closure_eps() },
        stages,
        bounds: rokhlin::report_bounds(sc.d as u64, sc.m as u32),
        pass,
    };
    Ok(RunOutcome { report, artifacts, timings })
}

fn cover_side(sc: &Scenario) -> usize {
    sc.cover.as_ref().expect("configured").n
}

fn run_stage(stage: Stage, sc: &Scenario, sys: &SampledSystem, opts: &RunOptions, st: &mut State) -> Result<StageOutput> {
    match stage {
        Stage::FreeCheck => {
            let radius = markers::controlled_freeness_radius(cover_side(sc), sc.d, sc.m)?;
            let cert = dynsys::check_free(sys, radius)?;
            let listed: Vec<Value> = cert
                .violations
                .iter()
                .take(LISTED_VIOLATIONS)
                .map(|(g, x)| json!({ "g": g.coords(), "point": x }))
                .collect();
            let detail = json!({
                "radius": radius,
                "free": cert.is_free(),
                "violation_count": cert.violations.len(),
                "violations": listed,
            });
            let mut out = StageOutput::new(cert.is_free(), detail);
            if !cert.is_free() {
                let (g, x) = &cert.violations[0];
                out.error = Some(StageError::from(&Error::Precondition {
                    what: format!("action is not free at radius {radius}"),
                    witness: format!("α^{g} fixes point {x}"),
                }));
            }
            Ok(out)
        }
        Stage::Marker => {
            let marker = markers::build_controlled_marker(sys, cover_side(sc), sc.d)?;
            let expected = (1usize << sc.m) * (sc.d + 1);
            let detail = json!({
                "L": marker.witness.l,
                "L_budget": expected,
                "marker_points": marker.witness.z.len(),
                "freeness_radius": marker.freeness_radius,
            });
            let witness = serde_json::to_string_pretty(&marker.witness)? + "\n";
            let pass = marker.witness.l == expected;
            st.marker = Some(marker);
            Ok(StageOutput::new(pass, detail).with("marker.json", witness))
        }
        Stage::Cover => {
            let marker = st.marker.as_ref().expect("marker stage ran");
            let cover = rokhlin::cover_from_marker(sys, &marker.witness)?;
            let report = rokhlin::verify_cover(sys, &cover);
            let detail = json!({ "side": cover.n, "levels": cover.levels(), "report": to_value(&report) });
            let out = StageOutput::new(report.passed(), detail).with("cover.json", cover.to_json() + "\n");
            st.cover = Some(cover);
            Ok(out)
        }
        Stage::Towers => {
            let t = sc.towers.as_ref().expect("configured");
            let cover = st.cover.as_ref().expect("cover stage ran");
            let bump = t.delta_bump.unwrap_or_else(Rational::zero);
            let raw = rokhlin::towers_from_cover(sys, cover, t.l, t.n, &bump)?;
            let measured = rokhlin::verify_def16(sys, &raw, &[])?;
            let eps3_budget = rat(2, t.n as i128);
            let pass = measured.eps2.is_zero() && measured.eps3 <= eps3_budget && !measured.eps1prime.is_negative();
            let detail = json!({
                "measured": to_value(&measured),
                "budget": {
                    "eps2": "0",
                    "eps3": rational::format(&eps3_budget),
                    "eps1prime_min": "0",
                },
            });
            let out = StageOutput::new(pass, detail)
                .with("towers_raw.json", raw.to_json() + "\n")
                .with("towers_raw.csv", raw.to_csv());
            st.raw = Some(raw);
            Ok(out)
        }
        Stage::Verify => {
            if let Some(fam) = &opts.family {
                let measured = rokhlin::verify_def16(sys, fam, &[])?;
                let detail = json!({ "source": "external", "measured": to_value(&measured) });
                st.normalized = Some(fam.clone());
                return Ok(StageOutput::new(true, detail).with("towers.csv", fam.to_csv()));
            }
            let raw = st.raw.as_ref().expect("towers stage ran");
            let fam = rokhlin::normalize_towers(raw)?;
            let measured: ToleranceReport = rokhlin::verify_def16(sys, &fam, &[])?;
            let pass = measured.eps1.is_zero() && measured.eps2.is_zero();
            let detail = json!({
                "source": "normalized",
                "measured": to_value(&measured),
                "budget": { "eps1": "0", "eps2": "0" },
            });
            let out = StageOutput::new(pass, detail).with("towers.json", fam.to_json() + "\n").with("towers.csv", fam.to_csv());
            st.normalized = Some(fam);
            Ok(out)
        }
        Stage::Crossed => {
            let x = sc.crossed.as_ref().expect("configured");
            if opts.seedless && x.seed.is_some() {
                return Err(Error::InvalidParameter("--seedless rejects random test operators".into()));
            }
            let mut fam = match x.family {
                FamilySource::Tiling => rokhlin::indicator_towers(&rokhlin::tiling_cover(sys, 2 * x.n)?),
                FamilySource::Towers => st.normalized.clone().expect("verify stage ran"),
            };
            if let Some(eta) = &x.mix {
                fam = rokhlin::mix_neighbors(&fam, eta)?;
            }
            let mut policy = NormPolicy::default();
            if opts.seedless {
                policy.dense_threshold = usize::MAX;
            }
            let ops = pipeline::monomial_test_ops(sys, x.big_n, x.seed)?;
            let cfg = PipelineConfig {
                n: x.n,
                big_n: x.big_n,
                delta_floor: x.delta_floor,
                order_zero_seed: x.order_zero_seed,
                policy,
            };
            let report = pipeline::pipeline_defect(sys, &fam, &IdentityApproximation, &ops, &cfg)?;
            let csv = crossed_csv(&report);
            Ok(StageOutput::new(report.pass, to_value(&report)).with("crossed.csv", csv))
        }
    }
}

/// One row per test operator: measured defects next to their budgets.
pub fn crossed_csv(r: &PipelineReport) -> String {
    let mut s = String::from("label,defect_upper,defect_lower,budget_f_prime,budget_end_to_end,star,star_budget,pass\n");
    for o in &r.ops {
        let pass = o.commutator.pass && o.mu_vs_d_psi.pass && o.star.pass && o.f_prime.pass && o.end_to_end.pass && o.monomial.as_ref().is_none_or(|c| c.pass);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.label,
            o.end_to_end.measured,
            o.defect_lower,
            o.f_prime.budget,
            o.end_to_end.budget,
            o.star.measured,
            o.star.budget,
            pass
        ));
    }
    s
}
