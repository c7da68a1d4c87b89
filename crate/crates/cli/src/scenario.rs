//! Scenario files: parsing, validation and expansion into per-seed runs.

use std::path::{Path, PathBuf};

use ddq_core::circuits::CircuitConfig;
use ddq_core::engine::{Event, Schedule, SimConfig, SCAN_PERIOD_S};
use ddq_core::pattern::{parse_fragment, parse_grid, Fragment};
use ddq_core::protocols::{
    gate_schedule, make_and_inputs, make_bands, make_density_pair, make_diffusion_seed,
    make_packet, make_tissue_rings, tissue_schedule, DiffusionSetup, GateGeometry,
    InterventionKind, PacketMode, TissueSpec, VORONOI_BANDS,
};
use ddq_core::rules::{FieldConfig, MobilityConfig};
use ddq_core::{CellCoord, HexGrid, Region};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// First seed of the ensemble; seeds run `seed, seed + 1, ...`.
    pub seed: u64,
    #[serde(default = "one")]
    pub seeds: u32,
    pub scans: u32,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub engine: EngineSpec,
    #[serde(default)]
    pub setup: Setup,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub analysis: Vec<AnalysisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    /// Full initial grid, one row of `0123` per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_path: Option<PathBuf>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 24,
            height: 27,
            spacing: 0.98,
            pattern: None,
            pattern_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_steps_per_scan: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MobilityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuits: Option<CircuitConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
}

/// Generated input pattern and the protocol events that go with it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Setup {
    #[default]
    None,
    /// AND gate inputs, written with evolution enabled at t = 0.
    Gate { a: bool, b: bool, separation: i32 },
    /// Concentric S1 rings with S1 added every scan.
    Tissue {
        population: usize,
        ring_s1: usize,
        per_scan: usize,
        #[serde(default)]
        delete_s2: bool,
    },
    /// Alternating S3/S1 seed rows for the spreading experiment.
    Diffusion,
    /// Horizontal state bands whose circuit domains form Voronoi cells.
    Voronoi,
    /// Two S1 patterns of different density side by side.
    Density,
    /// A written shape, then the cells that set it moving as a second write.
    Packet {
        shape: String,
        #[serde(default)]
        mirror: bool,
        #[serde(default)]
        direction: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub scan: u32,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Write {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    Erase,
    Trigger,
    AddS1 {
        count: usize,
        region: RegionSpec,
    },
    DeleteS2 {
        region: RegionSpec,
    },
}

/// `"all"`, `"cg"` (tissue region) or a disc in offset coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionSpec {
    Named(String),
    Disc { center: [i32; 2], radius: i32 },
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec::Named("all".into())
    }
}

fn default_tol() -> f64 {
    0.15
}

fn default_u1() -> f64 {
    0.13
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisSpec {
    Diffusion {
        #[serde(default = "default_tol")]
        saturation_tol: f64,
    },
    Cancer {
        #[serde(default = "default_u1")]
        u1: f64,
    },
    Gate,
    Voronoi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snapshot: Option<u32>,
    },
    Classify {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snapshot: Option<u32>,
    },
    Periodicity {
        #[serde(default)]
        region: RegionSpec,
    },
}

impl AnalysisSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisSpec::Diffusion { .. } => "diffusion",
            AnalysisSpec::Cancer { .. } => "cancer",
            AnalysisSpec::Gate => "gate",
            AnalysisSpec::Voronoi { .. } => "voronoi",
            AnalysisSpec::Classify { .. } => "classify",
            AnalysisSpec::Periodicity { .. } => "periodicity",
        }
    }

    /// Default request for `kind`, used when a run directory holds none.
    pub fn default_for(kind: &str) -> Option<Self> {
        Some(match kind {
            "diffusion" => AnalysisSpec::Diffusion {
                saturation_tol: default_tol(),
            },
            "cancer" => AnalysisSpec::Cancer { u1: default_u1() },
            "gate" => AnalysisSpec::Gate,
            "voronoi" => AnalysisSpec::Voronoi { snapshot: None },
            "classify" => AnalysisSpec::Classify { snapshot: None },
            "periodicity" => AnalysisSpec::Periodicity {
                region: RegionSpec::default(),
            },
            _ => return None,
        })
    }
}

/// Geometry shared by every seed of a scenario.
#[derive(Debug, Clone)]
pub struct Context {
    pub blank: HexGrid,
    pub tissue: Option<(TissueSpec, Fragment)>,
    pub diffusion: Option<DiffusionSetup>,
    pub gate: Option<GateGeometry>,
    pub density: Option<(Region, Region)>,
}

/// One fully specified simulation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub initial: HexGrid,
    pub schedule: Schedule,
    pub config: SimConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ScenarioFile {
    /// Parse a scenario and inline every referenced pattern file, so the
    /// echo written next to the results is self-contained.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut sc: ScenarioFile =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let read = |p: &Path| {
            std::fs::read_to_string(base.join(p))
                .map_err(|e| invalid(format!("{}: {e}", p.display())))
        };
        if let Some(p) = sc.grid.pattern_path.take() {
            if sc.grid.pattern.is_some() {
                return Err(invalid("grid: give either pattern or pattern_path"));
            }
            sc.grid.pattern = Some(read(&p)?);
        }
        for (i, e) in sc.events.iter_mut().enumerate() {
            if let Action::Write { pattern, path } = &mut e.action {
                match (pattern.is_some(), path.take()) {
                    (true, Some(_)) => {
                        return Err(invalid(format!("event {i}: give either pattern or path")))
                    }
                    (false, Some(p)) => *pattern = Some(read(&p)?),
                    (false, None) => {
                        return Err(invalid(format!("event {i}: write needs a pattern")))
                    }
                    (true, None) => {}
                }
            }
        }
        Ok(sc)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::with_seed(seed);
        cfg.spacing = self.grid.spacing;
        if let Some(s) = self.engine.micro_steps_per_scan {
            cfg.micro_steps_per_scan = s;
        }
        if let Some(m) = self.engine.mobility {
            cfg.mobility = m;
        }
        if let Some(c) = &self.engine.circuits {
            cfg.circuits = c.clone();
        }
        if let Some(f) = self.engine.field {
            cfg.field = f;
        }
        cfg
    }

    fn initial_grid(&self) -> Result<HexGrid, CliError> {
        match &self.grid.pattern {
            Some(text) => {
                let g = parse_grid(text, self.grid.spacing)
                    .map_err(|e| invalid(format!("grid pattern: {e}")))?;
                if g.width() != self.grid.width || g.height() != self.grid.height {
                    return Err(invalid(format!(
                        "grid pattern is {}x{}, declared {}x{}",
                        g.width(),
                        g.height(),
                        self.grid.width,
                        self.grid.height
                    )));
                }
                Ok(g)
            }
            None => HexGrid::new(self.grid.width, self.grid.height, self.grid.spacing)
                .map_err(|e| invalid(format!("grid: {e}"))),
        }
    }

    pub fn context(&self) -> Result<Context, CliError> {
        let blank = HexGrid::new(self.grid.width, self.grid.height, self.grid.spacing)
            .map_err(|e| invalid(format!("grid: {e}")))?;
        let setup_err = |e: ddq_core::Error| invalid(format!("setup: {e}"));
        let mut ctx = Context {
            blank: blank.clone(),
            tissue: None,
            diffusion: None,
            gate: None,
            density: None,
        };
        match &self.setup {
            Setup::Tissue {
                population,
                ring_s1,
                ..
            } => {
                ctx.tissue =
                    Some(make_tissue_rings(&blank, *population, *ring_s1).map_err(setup_err)?);
            }
            Setup::Diffusion => {
                ctx.diffusion = Some(make_diffusion_seed(&blank).map_err(setup_err)?)
            }
            Setup::Gate { separation, .. } => {
                ctx.gate = Some(
                    GateGeometry::centered(&blank, blank.center_cell(), *separation)
                        .map_err(setup_err)?,
                );
            }
            Setup::Density => {
                let (_, a, b) = make_density_pair(&blank);
                ctx.density = Some((a, b));
            }
            _ => {}
        }
        Ok(ctx)
    }

    pub fn region(&self, spec: &RegionSpec, ctx: &Context) -> Result<Region, CliError> {
        match spec {
            RegionSpec::Named(n) if n == "all" => Ok(Region::all(&ctx.blank)),
            RegionSpec::Named(n) if n == "cg" => ctx
                .tissue
                .as_ref()
                .map(|t| t.0.cg.clone())
                .ok_or_else(|| invalid("region \"cg\" needs a tissue setup")),
            RegionSpec::Named(n) => Err(invalid(format!("unknown region {n:?}"))),
            RegionSpec::Disc { center, radius } => {
                let c = CellCoord::from_offset(center[0], center[1]);
                if !ctx.blank.in_bounds(c) || *radius < 0 {
                    return Err(invalid(format!(
                        "disc at {center:?} radius {radius} is outside the grid"
                    )));
                }
                Ok(Region::disc(&ctx.blank, c, *radius))
            }
        }
    }

    fn setup_schedule(&self, ctx: &Context, seed: u64) -> Result<Schedule, CliError> {
        let setup_err = |e: ddq_core::Error| invalid(format!("setup: {e}"));
        let written = |f: Fragment, trigger: bool| {
            let s = Schedule::new(self.scans).at_scan(0, Event::Write(f));
            if trigger {
                s.at_scan(0, Event::Trigger)
            } else {
                s
            }
        };
        Ok(match &self.setup {
            Setup::None => Schedule::new(self.scans),
            Setup::Gate { a, b, separation } => {
                let (f, _) =
                    make_and_inputs(&ctx.blank, *a, *b, *separation, seed).map_err(setup_err)?;
                gate_schedule(f, self.scans)
            }
            Setup::Tissue {
                per_scan,
                delete_s2,
                ..
            } => {
                let (spec, rings) = ctx.tissue.clone().expect("tissue context");
                tissue_schedule(&spec, rings, *per_scan, self.scans, *delete_s2)
            }
            Setup::Diffusion => written(
                ctx.diffusion
                    .as_ref()
                    .expect("diffusion context")
                    .seed
                    .clone(),
                true,
            ),
            Setup::Voronoi => written(make_bands(&ctx.blank, &VORONOI_BANDS), false),
            Setup::Density => written(make_density_pair(&ctx.blank).0, false),
            Setup::Packet {
                shape,
                mirror,
                direction,
            } => {
                let shape =
                    parse_fragment(shape).map_err(|e| invalid(format!("packet shape: {e}")))?;
                let mode = if *mirror {
                    PacketMode::Mirror
                } else {
                    PacketMode::Gradient {
                        direction: *direction,
                    }
                };
                let full = make_packet(&shape, mode).map_err(setup_err)?;
                let extra: Fragment = full
                    .iter()
                    .filter(|(c, _)| shape.get(*c).is_none())
                    .collect();
                written(shape, false)
                    .at_scan(0, Event::Write(extra))
                    .at_scan(0, Event::Trigger)
            }
        })
    }

    /// Validate everything and build the run of every seed.
    pub fn instances(&self) -> Result<(Context, Vec<Instance>), CliError> {
        if self.seeds == 0 {
            return Err(invalid("seeds must be at least 1"));
        }
        let ctx = self.context()?;
        let initial = self.initial_grid()?;
        let mut user: Vec<(u32, Event)> = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.scan > self.scans {
                return Err(invalid(format!(
                    "event {i}: scan {} is after the last scan {}",
                    e.scan, self.scans
                )));
            }
            let event = match &e.action {
                Action::Write { pattern, .. } => {
                    let text = pattern
                        .as_ref()
                        .ok_or_else(|| invalid(format!("event {i}: write needs a pattern")))?;
                    let f =
                        parse_fragment(text).map_err(|err| invalid(format!("event {i}: {err}")))?;
                    f.check_bounds(&initial)
                        .map_err(|err| invalid(format!("event {i}: {err}")))?;
                    Event::Write(f)
                }
                Action::Erase => Event::EraseAll,
                Action::Trigger => Event::Trigger,
                Action::AddS1 { count, region } => Event::Intervene(InterventionKind::AddS1 {
                    count: *count,
                    region: self
                        .region(region, &ctx)
                        .map_err(|err| invalid(format!("event {i}: {err}")))?,
                }),
                Action::DeleteS2 { region } => Event::Intervene(InterventionKind::DeleteS2 {
                    region: self
                        .region(region, &ctx)
                        .map_err(|err| invalid(format!("event {i}: {err}")))?,
                }),
            };
            user.push((e.scan, event));
        }
        for a in &self.analysis {
            let needs = match a {
                AnalysisSpec::Diffusion { .. } => ctx.diffusion.is_none().then_some("diffusion"),
                AnalysisSpec::Cancer { .. } => ctx.tissue.is_none().then_some("tissue"),
                AnalysisSpec::Gate => ctx.gate.is_none().then_some("gate"),
                AnalysisSpec::Voronoi { snapshot } | AnalysisSpec::Classify { snapshot } => {
                    if snapshot.is_some_and(|s| s > self.scans) {
                        return Err(invalid(format!(
                            "{} analysis: snapshot after the last scan",
                            a.kind()
                        )));
                    }
                    None
                }
                AnalysisSpec::Periodicity { region } => {
                    self.region(region, &ctx)?;
                    None
                }
            };
            if let Some(setup) = needs {
                return Err(invalid(format!(
                    "{} analysis needs a {setup} setup",
                    a.kind()
                )));
            }
        }
        let mut out = Vec::with_capacity(self.seeds as usize);
        for seed in self.seed_list() {
            let config = self.sim_config(seed);
            config
                .validate()
                .map_err(|e| invalid(format!("engine: {e}")))?;
            let base = self.setup_schedule(&ctx, seed)?;
            for e in &base.events {
                if let Event::Write(f) = &e.event {
                    f.check_bounds(&initial)
                        .map_err(|err| invalid(format!("setup: {err}")))?;
                }
            }
            let mut timed: Vec<(u32, Event)> = base
                .events
                .into_iter()
                .map(|e| ((e.time_s / SCAN_PERIOD_S).round() as u32, e.event))
                .collect();
            timed.extend(user.iter().cloned());
            timed.sort_by_key(|(k, _)| *k);
            let schedule = timed
                .into_iter()
                .fold(Schedule::new(self.scans), |s, (k, e)| s.at_scan(k, e));
            out.push(Instance {
                seed,
                initial: initial.clone(),
                schedule,
                config,
            });
        }
        Ok((ctx, out))
    }
}
