//! The end-to-end experiment: simulated authors chat with the engine, answer
//! its surveys and click its ads.

use std::fmt::Write as _;
use std::path::Path;

use echo_core::engine::{Engine, EngineMetrics, EngineParams};
use echo_core::events::EventLog;
use echo_core::recommend::{ctr_csv, Catalog, CtrRow, Source};
use echo_core::tasks::{Answer, AuthorResponse, TaskKind};
use echo_core::types::{FeatureKind, FeatureValue, Message, Role};
use echo_core::RngSeed;
use rand::Rng;
use serde::Serialize;

use crate::author::SimAuthor;
use crate::error::{Result, SimError};
use crate::message::{gen_message, probe_message};
use crate::scenario::ScenarioFile;
use crate::world::World;

/// One labeled held-out message.
#[derive(Debug, Clone)]
pub struct Probe {
    pub feature: usize,
    pub value: usize,
    pub text: String,
}

pub fn heldout_probes(world: &World, scenario: &ScenarioFile) -> Vec<Probe> {
    let s = &scenario.scenario;
    let mut out = Vec::new();
    for (fi, f) in world.features.iter().enumerate() {
        let mut rng = RngSeed(s.seed).substream("heldout", fi as u64);
        for _ in 0..s.heldout_per_feature {
            let value = rng.gen_range(0..f.values.len());
            let text = probe_message(world, fi, value, &s.messages, &mut rng);
            out.push(Probe { feature: fi, value, text });
        }
    }
    out
}

/// Whether a prediction names the probe's value.
pub fn prediction_correct(world: &World, probe: &Probe, predicted: &FeatureValue<f64>) -> bool {
    let f = &world.features[probe.feature];
    match f.kind() {
        FeatureKind::FreeText => match predicted {
            FeatureValue::FreeText { text, .. } => text.eq_ignore_ascii_case(&f.values[probe.value]),
            _ => false,
        },
        _ => predicted.class_index() == Some(probe.value),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub sessions: usize,
    pub feature_id: String,
    pub labels: u64,
    pub heldout_accuracy: f64,
    pub sigma: f64,
    /// Mismatch rate of the predictions the authors answered, so far.
    pub online_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceCtr {
    pub source: String,
    pub impressions: u64,
    pub clicks: u64,
    pub ctr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub authors: usize,
    pub sessions: usize,
    pub warmup_sessions: usize,
    pub events: usize,
    pub ctr: Vec<SourceCtr>,
    /// ECHO CTR over baseline CTR.
    pub ctr_ratio: Option<f64>,
    pub surveys_shown: usize,
    pub surveys_completed: usize,
    pub completion_rate: Option<f64>,
    pub labels: u64,
    pub initial_heldout_accuracy: Option<f64>,
    pub final_heldout_accuracy: Option<f64>,
    pub feature_updates: u64,
    pub uncertainty_updates: u64,
    pub relevance_updates: u64,
    pub isolation_violations: u64,
    pub stop_gradient_violations: u64,
    pub dual_loop_violations: u64,
}

pub struct Experiment {
    pub world: World,
    pub scenario: ScenarioFile,
    pub params: EngineParams,
    pub engine: Engine<f64>,
    pub curves: Vec<CurvePoint>,
    pub sigma_checks: Vec<SigmaCheck>,
    pub summary: Summary,
}

impl Experiment {
    pub fn log(&self) -> &EventLog {
        self.engine.log()
    }

    pub fn metrics(&self) -> EngineMetrics {
        self.engine.metrics()
    }

    pub fn ctr_rows(&self) -> Vec<CtrRow> {
        self.engine.metrics().ctr_by_source
    }

    pub fn ctr_csv(&self) -> String {
        ctr_csv(&self.ctr_rows())
    }

    pub fn learning_curves_csv(&self) -> String {
        let mut out = String::from("sessions,feature_id,labels,heldout_accuracy\n");
        for p in &self.curves {
            writeln!(out, "{},{},{},{:.4}", p.sessions, p.feature_id, p.labels, p.heldout_accuracy).unwrap();
        }
        out
    }

    pub fn sigma_csv(&self) -> String {
        let mut out = String::from("sessions,feature_id,labels,sigma,online_error\n");
        for p in &self.curves {
            let err = p.online_error.map(|e| format!("{e:.4}")).unwrap_or_default();
            writeln!(out, "{},{},{},{:.4},{}", p.sessions, p.feature_id, p.labels, p.sigma, err).unwrap();
        }
        out
    }

    pub fn sigma_checks_csv(&self) -> String {
        let mut out = String::from("feature_id,labels,sigma,empirical_error\n");
        for c in &self.sigma_checks {
            writeln!(out, "{},{},{:.4},{:.4}", c.feature_id, c.labels, c.sigma, c.empirical_error).unwrap();
        }
        out
    }

    /// Writes every artifact of the run into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut events = std::io::BufWriter::new(std::fs::File::create(dir.join(EVENTS_FILE))?);
        self.log().write_jsonl(&mut events)?;
        std::io::Write::flush(&mut events)?;
        std::fs::write(dir.join(CTR_FILE), self.ctr_csv())?;
        std::fs::write(dir.join("ctr_by_day.csv"), ctr_csv(&self.metrics().ctr_by_day))?;
        std::fs::write(dir.join("learning_curves.csv"), self.learning_curves_csv())?;
        std::fs::write(dir.join("sigma.csv"), self.sigma_csv())?;
        std::fs::write(dir.join("sigma_calibration.csv"), self.sigma_checks_csv())?;
        std::fs::write(dir.join(REGISTRY_FILE), self.engine.registry().to_jsonl())?;
        std::fs::write(dir.join(CATALOG_FILE), self.engine.catalog().to_jsonl())?;
        std::fs::write(dir.join(ENGINE_FILE), toml::to_string(&self.params).expect("params serialize"))?;
        let mut summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}

pub const EVENTS_FILE: &str = "events.jsonl";
pub const CTR_FILE: &str = "ctr.csv";
pub const REGISTRY_FILE: &str = "registry.jsonl";
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const ENGINE_FILE: &str = "engine.toml";

/// The inputs a replay needs, read from a run directory.
pub struct RunInputs {
    pub registry: echo_core::types::FeatureRegistry,
    pub catalog: Catalog<f64>,
    pub params: EngineParams,
}

impl RunInputs {
    pub fn load(dir: &Path) -> Result<Self> {
        let params: EngineParams = toml::from_str(&std::fs::read_to_string(dir.join(ENGINE_FILE))?)
            .map_err(|e| SimError::Config(format!("{ENGINE_FILE}: {e}")))?;
        let registry = echo_core::types::FeatureRegistry::load(&dir.join(REGISTRY_FILE))?;
        let catalog = Catalog::load(&dir.join(CATALOG_FILE), params.dim)?;
        Ok(RunInputs {
            registry,
            catalog,
            params,
        })
    }
}

fn checkpoint(world: &World, engine: &Engine<f64>, probes: &[Probe], sessions: usize, out: &mut Vec<CurvePoint>) {
    let stats = engine.feature_stats();
    for (fi, f) in world.features.iter().enumerate() {
        let mine: Vec<&Probe> = probes.iter().filter(|p| p.feature == fi).collect();
        let hits = mine
            .iter()
            .filter(|p| {
                let v = engine.predict(f.id(), &p.text).expect("world feature is registered");
                prediction_correct(world, p, &v)
            })
            .count();
        let st = &stats[fi];
        out.push(CurvePoint {
            sessions,
            feature_id: f.id().to_string(),
            labels: st.labels,
            heldout_accuracy: if mine.is_empty() { 0.0 } else { hits as f64 / mine.len() as f64 },
            sigma: st.sigma,
            online_error: st.accuracy.map(|a| 1.0 - a),
        });
    }
}

fn mean_accuracy(curves: &[CurvePoint], sessions: usize) -> Option<f64> {
    let at: Vec<f64> = curves
        .iter()
        .filter(|p| p.sessions == sessions)
        .map(|p| p.heldout_accuracy)
        .collect();
    (!at.is_empty()).then(|| at.iter().sum::<f64>() / at.len() as f64)
}

/// σ at the moment a feature receives its `SIGMA_CHECK_LABELS`-th label, next
/// to the mismatch rate between the option the survey offered as the
/// prediction and the option the author chose, over those same labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaCheck {
    pub feature_id: String,
    pub labels: u64,
    pub sigma: f64,
    pub empirical_error: f64,
}

pub const SIGMA_CHECK_LABELS: u64 = 200;

#[derive(Debug, Clone, Copy, Default)]
struct MismatchTally {
    labels: u64,
    mismatches: u64,
}

/// Runs the scenario on the standard world.
pub fn run_experiment(scenario: &ScenarioFile) -> Result<Experiment> {
    run_in_world(World::standard(), scenario)
}

pub fn run_in_world(world: World, scenario: &ScenarioFile) -> Result<Experiment> {
    world.validate()?;
    scenario.scenario.validate()?;
    let s = &scenario.scenario;
    let params = scenario.effective_engine();
    params.validate()?;
    let seed = RngSeed(s.seed);
    let registry = world.registry()?;
    let catalog = Catalog::new(world.catalog(s.products_per_vertical, seed), params.dim)?;
    let mut engine = Engine::<f64>::new(registry, catalog, params.clone())?;
    let authors: Vec<SimAuthor> = (0..s.authors)
        .map(|j| {
            let mut rng = seed.substream("author", j as u64);
            SimAuthor::generate(format!("author-{j:04}"), &world, s.profile, params.dim, &mut rng)
        })
        .collect();
    let mut prior_impressions = vec![0u64; authors.len()];
    let probes = heldout_probes(&world, scenario);
    let mut curves = Vec::new();
    let mut tallies = vec![MismatchTally::default(); world.features.len()];
    let mut sigma_checks = Vec::new();
    checkpoint(&world, &engine, &probes, 0, &mut curves);

    let sessions = if authors.is_empty() { 0 } else { s.sessions };
    for i in 0..sessions {
        let mut rng = seed.substream("session", i as u64);
        let a = rng.gen_range(0..authors.len());
        let author = &authors[a];
        let session_id = format!("s{i:05}");
        let mut ts = s.start_ms + i as u64 * s.session_spacing_ms;
        let turns = rng.gen_range(s.min_turns..=s.max_turns);
        for turn in 0..turns {
            let text = gen_message(&world, author, &s.messages, &mut rng);
            let out = engine.handle_message(&Message {
                session_id: session_id.clone(),
                user_id: author.author_id.clone(),
                turn_index: turn as u64,
                author_role: Role::User,
                text,
                timestamp_ms: ts,
            })?;
            let mut now = ts;
            if let Some(survey) = &out.survey {
                let answered = if rng.gen_bool(s.profile.completion_prob) {
                    survey.tasks.len()
                } else {
                    rng.gen_range(0..survey.tasks.len())
                };
                let mut read = 0.0;
                for task in survey.tasks.iter().take(answered) {
                    let latency = task.min_read_seconds + rng.gen_range(0.5..8.0);
                    read += latency;
                    let answer = author.answer_task(&world, task, &mut rng);
                    now = ts + (read * 1000.0) as u64;
                    let chosen = match (&answer, task.kind) {
                        (Answer::Option(i), TaskKind::MultipleChoice) => Some(*i),
                        _ => None,
                    };
                    let res = engine.handle_response(
                        &session_id,
                        &AuthorResponse {
                            task_id: task.task_id.clone(),
                            answer,
                            answered_at: now,
                            read_latency_s: latency,
                        },
                    )?;
                    if let (true, Some(c), Some(p)) = (res.trained, chosen, task.predicted_option_index) {
                        let fi = world.feature_index(&task.feature_id).expect("task feature is in the world");
                        let t = &mut tallies[fi];
                        t.labels += 1;
                        t.mismatches += u64::from(c != p);
                        if t.labels == SIGMA_CHECK_LABELS {
                            sigma_checks.push(SigmaCheck {
                                feature_id: task.feature_id.clone(),
                                labels: t.labels,
                                sigma: engine.selector().sigma_of(&task.feature_id)?,
                                empirical_error: t.mismatches as f64 / t.labels as f64,
                            });
                        }
                    }
                }
            }
            let weekday = weekday_index(ts);
            for rec in &out.recommendations {
                if rec.outcome != echo_core::events::ImpressionOutcome::New {
                    continue;
                }
                let product = engine.catalog().get(&rec.product_id).expect("shown product is in the catalog");
                let clicked = author.click_decision(
                    &product.attribute_embedding,
                    prior_impressions[a],
                    s.weekday_multipliers[weekday],
                    &mut rng,
                );
                prior_impressions[a] += 1;
                if clicked {
                    engine.handle_click(&session_id, &rec.impression_id, ts + s.click_delay_ms)?;
                    now = now.max(ts + s.click_delay_ms);
                }
            }
            ts = now + rng.gen_range(s.min_turn_gap_ms..=s.max_turn_gap_ms);
        }
        if (i + 1) % s.checkpoint_every == 0 || i + 1 == sessions {
            checkpoint(&world, &engine, &probes, i + 1, &mut curves);
        }
    }

    let m = engine.metrics();
    let row = |src: Source| m.ctr_by_source.iter().find(|r| r.group == src.as_str());
    let ctr_ratio = match (row(Source::Echo).and_then(|r| r.ctr_f64()), row(Source::Baseline).and_then(|r| r.ctr_f64())) {
        (Some(e), Some(b)) if b > 0.0 => Some(e / b),
        _ => None,
    };
    let summary = Summary {
        seed: s.seed,
        authors: s.authors,
        sessions,
        warmup_sessions: s.warmup_sessions,
        events: engine.log().len(),
        ctr: m
            .ctr_by_source
            .iter()
            .map(|r| SourceCtr {
                source: r.group.clone(),
                impressions: r.impressions,
                clicks: r.clicks,
                ctr: r.ctr_f64(),
            })
            .collect(),
        ctr_ratio,
        surveys_shown: m.surveys_shown,
        surveys_completed: m.surveys_completed,
        completion_rate: m.completion_rate,
        labels: m.features.iter().map(|f| f.labels).sum(),
        initial_heldout_accuracy: mean_accuracy(&curves, 0),
        final_heldout_accuracy: mean_accuracy(&curves, sessions),
        feature_updates: m.audit.feature_updates,
        uncertainty_updates: m.audit.uncertainty_updates,
        relevance_updates: m.audit.relevance_updates,
        isolation_violations: m.audit.isolation_violations,
        stop_gradient_violations: m.audit.stop_gradient_violations,
        dual_loop_violations: m.audit.dual_loop_violations,
    };
    Ok(Experiment {
        world,
        scenario: scenario.clone(),
        params,
        engine,
        curves,
        sigma_checks,
        summary,
    })
}

/// Monday = 0.
fn weekday_index(ts_ms: u64) -> usize {
    // 1970-01-01 was a Thursday
    (((ts_ms / 86_400_000) + 3) % 7) as usize
}

/// Replays a logged run and returns the regenerated ctr.csv.
pub fn replay_ctr(inputs: RunInputs, log: &EventLog) -> Result<String> {
    let engine = Engine::replay(inputs.registry, inputs.catalog, inputs.params, log)?;
    Ok(ctr_csv(&engine.metrics().ctr_by_source))
}
