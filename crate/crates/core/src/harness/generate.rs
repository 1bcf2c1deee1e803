//! Scenario generators for the two experiment protocols, plus the
//! null-lying and fault-injection corpora.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::orchestrator::Modality;
use crate::rng::{seeded_rng, RngDomain};
use crate::scenario::{
    AgentId, Anchor, Annotation, Crash, Keyframe, LinkOutage, PatientAction, ScenarioScript,
    ScheduledAction, Trial, TrialKind,
};
use crate::taxonomy::ErrorCategory;
use crate::thermal::{BedGeometry, BodyState, Posture};

pub const PART1_TRIALS: usize = 15;
pub const PART1_TRICKS: usize = 5;
pub const PART2_TRIALS: usize = 3;

fn kf<T: Scalar>(tick: u64, x: f64, y: f64, posture: Posture) -> Keyframe<T> {
    Keyframe { tick, body: BodyState::new(T::of(x), T::of(y), posture) }
}

/// Lies still, sits up and pauses. Returns the keyframes and the tick at
/// which sitting up completes.
fn sit_up<T: Scalar>(rng: &mut ChaCha8Rng, x: f64) -> (Vec<Keyframe<T>>, u64) {
    let rest = rng.random_range(14..=42);
    let sat = rest + 14;
    let pause = rng.random_range(7..=21);
    let frames = vec![
        kf(0, x, 0.45, Posture::Lying),
        kf(rest, x, 0.45, Posture::Lying),
        kf(sat, x, 0.5, Posture::SittingUp),
        kf(sat + pause, x, 0.5, Posture::SittingUp),
    ];
    (frames, sat + pause)
}

/// Sits up, swings the legs over the exit edge, stands and leaves.
pub fn genuine_exit<T: Scalar>(id: &str, rng: &mut ChaCha8Rng) -> Trial<T> {
    let x = rng.random_range(0.8..1.2);
    let (mut k, t) = sit_up(rng, x);
    let legs = t + rng.random_range(6..=10);
    let stand = legs + rng.random_range(3..=6);
    let out = stand + rng.random_range(8..=14);
    k.push(kf(legs, x, 0.85, Posture::LegsOverEdge));
    k.push(kf(stand, x, 1.0, Posture::Standing));
    k.push(kf(out, x, 1.25, Posture::OutOfBed));
    k.push(kf(out + 14, x, 1.25, Posture::OutOfBed));
    Trial::new(id, TrialKind::GenuineExit, k)
}

/// Sits up, moves to within 2 px of the exit edge, holds for a second and
/// lies back down.
pub fn trick<T: Scalar>(id: &str, rng: &mut ChaCha8Rng, geometry: &BedGeometry<T>) -> Trial<T> {
    let x = rng.random_range(0.8..1.2);
    let (mut k, t) = sit_up(rng, x);
    let margin = rng.random_range(1.0..2.0);
    let near = geometry.y_at_exit_margin(T::of(margin)).to_f64_lossy();
    let approach = t + rng.random_range(3..=20);
    let hold = approach + 14;
    let back = hold + rng.random_range(10..=20);
    let lie = back + 14;
    k.push(kf(approach, x, near, Posture::SittingUp));
    k.push(kf(hold, x, near, Posture::SittingUp));
    k.push(kf(back, x, 0.5, Posture::SittingUp));
    k.push(kf(lie, x, 0.45, Posture::Lying));
    k.push(kf(lie + 14, x, 0.45, Posture::Lying));
    Trial::new(id, TrialKind::Trick, k)
}

/// Lies in bed for about ten seconds, shifting and rolling slightly.
pub fn null_lying<T: Scalar>(id: &str, rng: &mut ChaCha8Rng) -> Trial<T> {
    let x0 = rng.random_range(0.8..1.2);
    let mut k = vec![kf(0, x0, 0.45, Posture::Lying)];
    let mut t = 0;
    while t < 140 {
        t += rng.random_range(14..=28);
        let x = x0 + rng.random_range(-0.1..0.1);
        let y = rng.random_range(0.38..0.52);
        k.push(kf(t, x, y, Posture::Lying));
    }
    Trial::new(id, TrialKind::NullLying, k)
}

/// Starts to get out, is told to stay, and sits back up in bed.
fn fetch_body<T: Scalar>(id: &str, rng: &mut ChaCha8Rng) -> Trial<T> {
    let x = rng.random_range(0.8..1.2);
    let (mut k, t) = sit_up(rng, x);
    let legs = t + rng.random_range(6..=10);
    let hesitate = legs + rng.random_range(14..=28);
    let back = hesitate + 14;
    k.push(kf(legs, x, 0.85, Posture::LegsOverEdge));
    k.push(kf(hesitate, x, 0.85, Posture::LegsOverEdge));
    k.push(kf(back, x, 0.5, Posture::SittingUp));
    k.push(kf(back + 14, x, 0.5, Posture::SittingUp));
    Trial::new(id, TrialKind::FetchInteraction, k)
}

const VOICE_PHRASES: [&str; 4] =
    ["I'd like the {} please", "Could you bring me the {}", "{}, please", "Can I have the {}"];

/// Fetch trial with one request after the prompt and taking the item once
/// delivered.
pub fn fetch<T: Scalar>(id: &str, rng: &mut ChaCha8Rng, item: &str, modality: Modality) -> Trial<T> {
    let mut trial = fetch_body(id, rng);
    let action = match modality {
        Modality::Touch => PatientAction::touch(item),
        Modality::Voice => {
            let phrase = VOICE_PHRASES[rng.random_range(0..VOICE_PHRASES.len())].replace("{}", item);
            PatientAction::voice(&phrase, Some(item))
        }
    };
    trial.patient_actions = vec![
        ScheduledAction { tick: rng.random_range(60..=120), after: Anchor::Prompt, action },
        ScheduledAction { tick: rng.random_range(20..=40), after: Anchor::Delivered, action: PatientAction::TakeItem },
    ];
    trial
}

/// Participants' protocol for the bed-exit part: 15 trials each, 5 of them
/// tricks at seeded positions.
pub fn gen_part1<T: Scalar>(participants: usize, seed: u64, geometry: &BedGeometry<T>) -> ScenarioScript<T> {
    let mut trials = Vec::with_capacity(participants * PART1_TRIALS);
    for p in 0..participants {
        let mut rng = seeded_rng(seed, RngDomain::Part1, p as u64);
        let tricks = sample(&mut rng, PART1_TRIALS, PART1_TRICKS).into_vec();
        for i in 0..PART1_TRIALS {
            let id = format!("p{:02}-t{:02}", p + 1, i + 1);
            trials.push(if tricks.contains(&i) { trick(&id, &mut rng, geometry) } else { genuine_exit(&id, &mut rng) });
        }
    }
    ScenarioScript::new(seed, trials)
}

/// Item and modality choices for the fetch part. Touch probability is set
/// per repetition; the default leans on touch early and voice later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestDistribution {
    pub touch_prob_by_repetition: Vec<f64>,
    pub items: Vec<String>,
}

impl Default for RequestDistribution {
    fn default() -> Self {
        RequestDistribution {
            touch_prob_by_repetition: vec![0.85, 0.55, 0.45],
            items: ["water", "apple", "banana", "orange"].map(String::from).to_vec(),
        }
    }
}

impl RequestDistribution {
    pub fn all_touch() -> Self {
        RequestDistribution { touch_prob_by_repetition: vec![1.0], ..Default::default() }
    }

    fn touch_prob(&self, repetition: usize) -> f64 {
        let v = &self.touch_prob_by_repetition;
        v.get(repetition).or(v.last()).copied().unwrap_or(1.0)
    }
}

pub fn gen_part2<T: Scalar>(participants: usize, seed: u64, dist: &RequestDistribution) -> ScenarioScript<T> {
    let mut trials = Vec::with_capacity(participants * PART2_TRIALS);
    for p in 0..participants {
        let mut rng = seeded_rng(seed, RngDomain::Part2, p as u64);
        for r in 0..PART2_TRIALS {
            let id = format!("p{:02}-f{}", p + 1, r + 1);
            let modality = if rng.random_bool(dist.touch_prob(r).clamp(0.0, 1.0)) { Modality::Touch } else { Modality::Voice };
            let item = dist.items[rng.random_range(0..dist.items.len())].clone();
            trials.push(fetch(&id, &mut rng, &item, modality));
        }
    }
    ScenarioScript::new(seed, trials)
}

pub fn gen_null_lying<T: Scalar>(count: usize, seed: u64) -> ScenarioScript<T> {
    let mut rng = seeded_rng(seed, RngDomain::Corpus, 0);
    let trials = (0..count).map(|i| null_lying(&format!("null-{:02}", i + 1), &mut rng)).collect();
    ScenarioScript::new(seed, trials)
}

/// The golden end-to-end fetch: one touch request for water, fixed robot
/// behaviour.
pub fn golden_fetch<T: Scalar>(seed: u64) -> ScenarioScript<T> {
    let mut rng = seeded_rng(seed, RngDomain::Corpus, 1);
    let mut trial = fetch("golden", &mut rng, "water", Modality::Touch);
    trial.faults.proximity_error_m = Some(T::zero());
    ScenarioScript::new(seed, vec![trial])
}

/// Fault-injection corpus: each scenario is built to trigger exactly the
/// categories listed in its `expected_errors`, with `per_category`
/// scenarios per automatable category and one annotated scenario per
/// annotation-only category.
pub fn gen_fault_corpus<T: Scalar>(per_category: usize, seed: u64) -> ScenarioScript<T> {
    use ErrorCategory::*;
    let mut rng = seeded_rng(seed, RngDomain::Corpus, 2);
    let mut trials = Vec::new();
    let clean = |t: &mut Trial<T>| t.faults.proximity_error_m = Some(T::zero());
    for i in 0..per_category {
        let n = i + 1;
        let item = ["water", "apple", "banana", "orange"][i % 4];

        let mut t = fetch(&format!("operational-{n}"), &mut rng, item, Modality::Touch);
        t.faults.proximity_error_m = Some(T::of(0.9 + 0.1 * i as f64));
        // arrivals at the bedside happen twice: before the prompt and on return
        t.expected_errors = vec![OperationalError, OperationalError];
        trials.push(t);

        let mut t = fetch(&format!("intrusion-{n}"), &mut rng, item, Modality::Touch);
        clean(&mut t);
        // pressing a button while the robot is still making its offer
        t.patient_actions[0].tick = 5 + i as u64;
        t.expected_errors = vec![Intrusion];
        trials.push(t);

        let mut t = fetch(&format!("icf-{n}"), &mut rng, item, Modality::Voice);
        clean(&mut t);
        // speaking over the end of the robot's offer
        t.patient_actions[0].tick = 30 + i as u64;
        t.expected_errors = vec![InsufficientCommunicativeFunction];
        trials.push(t);

        let mut t = fetch(&format!("misunderstanding-{n}"), &mut rng, item, Modality::Voice);
        clean(&mut t);
        let other = ["apple", "banana", "orange", "water"][i % 4];
        t.patient_actions[0].action = PatientAction::voice(&format!("not the {other}, the {item}"), Some(item));
        t.expected_errors = vec![MisunderstandingUser];
        trials.push(t);

        let mut t = fetch(&format!("operation-{n}"), &mut rng, item, Modality::Touch);
        clean(&mut t);
        // a button that is not on the screen, then the right one
        let wrong = ScheduledAction { tick: 50, after: Anchor::Prompt, action: PatientAction::touch("grapes") };
        t.patient_actions.insert(0, wrong);
        t.patient_actions[1].tick = t.patient_actions[1].tick.max(80);
        t.expected_errors = vec![Operation];
        trials.push(t);

        let mut t = fetch(&format!("system-failure-{n}"), &mut rng, item, Modality::Touch);
        clean(&mut t);
        let agent = if i % 2 == 0 { AgentId::Arm } else { AgentId::Temi };
        t.faults.crash = Some(Crash { agent, at_tick: 20 + 10 * i as u64 });
        t.patient_actions.clear();
        t.expected_errors = vec![SystemFailure];
        trials.push(t);

        let mut t = genuine_exit::<T>(&format!("safeguarding-{n}"), &mut rng);
        t.faults.link_outage = Some(LinkOutage { client: "orchestrator".into(), from_tick: 0, to_tick: 600 });
        t.expected_errors = vec![SafeguardingFailure];
        trials.push(t);
    }
    for (n, category) in [Procedure, SituationAwareness, DesignFlaw].into_iter().enumerate() {
        let mut t = genuine_exit::<T>(&format!("annotated-{}", n + 1), &mut rng);
        t.annotations = vec![Annotation {
            category,
            tick: 10,
            modality: None,
            note: format!("observer logged {}", category.as_str()),
        }];
        t.expected_errors = vec![category];
        trials.push(t);
    }
    ScenarioScript::new(seed, trials)
}

/// Fixed-size request mix: `touch` touch requests then `voice` voice
/// requests, one per trial, with clean robot behaviour.
pub fn gen_request_mix<T: Scalar>(touch: usize, voice: usize, seed: u64) -> ScenarioScript<T> {
    let mut rng = seeded_rng(seed, RngDomain::Corpus, 3);
    let items = RequestDistribution::default().items;
    let trials = (0..touch + voice)
        .map(|i| {
            let modality = if i < touch { Modality::Touch } else { Modality::Voice };
            let mut t = fetch(&format!("mix-{:02}", i + 1), &mut rng, &items[i % items.len()], modality);
            t.faults.proximity_error_m = Some(T::zero());
            t
        })
        .collect();
    ScenarioScript::new(seed, trials)
}

/// Subset of the fault corpus whose tally is 66 operational errors, 4
/// intrusions, 4 insufficient-communicative-function errors, 1 system
/// failure and 1 design flaw.
pub fn gen_reference_tally<T: Scalar>(seed: u64) -> ScenarioScript<T> {
    let mut script = gen_fault_corpus::<T>(33, seed);
    let number = |id: &str, prefix: &str| id.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok());
    script.trials.retain(|t| {
        let id = t.id.as_str();
        number(id, "operational-").is_some()
            || number(id, "intrusion-").is_some_and(|n| n <= 4)
            || number(id, "icf-").is_some_and(|n| n <= 4)
            || id == "system-failure-1"
            || id == "annotated-3"
    });
    script
}
