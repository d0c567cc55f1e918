//! Colored Petri net engine with timed tokens.
//!
//! A classic place/transition net extended three ways:
//!
//! * **Dynamic colors** — a token's color is an arbitrary string-keyed
//!   attribute map created at fire time, not a value from a fixed palette.
//! * **Token merging** — two tokens on the same place whose attributes are
//!   identical (timestamps excluded) collapse into one that keeps the
//!   maximum timestamp and the union of both provenance sets. This bounds
//!   every place by the number of distinct attribute tuples ever produced
//!   on it.
//! * **Token expiration** — each place may carry a timeout; a token whose
//!   age exceeds it (strictly: `now - ts > timeout`) is removed before
//!   anything else happens in a step.
//!
//! Transitions fire either on a named external event ([`Trigger::Event`])
//! or automatically whenever enabled ([`Trigger::Epsilon`]). A [`step`]
//! call processes one external event: expire, fire every matching enabled
//! transition once, run epsilon transitions to quiescence, merge.
//!
//! Input arcs select tokens by color filter; when several tokens qualify,
//! the binding takes the one with the greatest timestamp (most recent
//! context), ties broken by insertion order. An input and output arc on the
//! same place form a self-loop: the consumed token is returned unchanged —
//! same timestamp, same provenance — and does not count as the place
//! receiving a token.
//!
//! [`step`]: Net::step

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an external event, assigned by the caller in arrival
/// order. Because ids are monotonic, sorted provenance is chronological.
pub type EventId = u64;

/// Index of a place in its [`Net`].
pub type PlaceId = usize;

/// Index of a transition in its [`Net`].
pub type TransitionId = usize;

/// Hard upper bound on epsilon firings within a single [`Net::step`],
/// guarding against misconfigured always-enabled loops.
pub const EPSILON_CAP: usize = 10_000;

// ── Tokens ──────────────────────────────────────────────────────────────

/// Color of a token: attribute map plus creation timestamp (seconds).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorData {
    pub attributes: BTreeMap<String, String>,
    pub timestamp: i64,
}

impl ColorData {
    pub fn new(attributes: BTreeMap<String, String>, timestamp: i64) -> Self {
        ColorData { attributes, timestamp }
    }

    /// Attribute-less color, the plain-net degenerate case.
    pub fn plain(timestamp: i64) -> Self {
        ColorData { attributes: BTreeMap::new(), timestamp }
    }
}

/// A token on a place: color plus the ids of every event that contributed
/// to it, kept sorted ascending (chronological).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColoredToken {
    pub color: ColorData,
    pub provenance: Vec<EventId>,
}

impl ColoredToken {
    pub fn new(color: ColorData) -> Self {
        ColoredToken { color, provenance: Vec::new() }
    }

    pub fn with_provenance(color: ColorData, mut provenance: Vec<EventId>) -> Self {
        provenance.sort_unstable();
        provenance.dedup();
        ColoredToken { color, provenance }
    }
}

/// Union of two sorted provenance vectors.
///
/// The common case during merging is an old token absorbing strictly newer
/// ids, which reduces to an append and keeps long replays linear.
fn merge_provenance(into: &mut Vec<EventId>, other: &[EventId]) {
    if other.is_empty() {
        return;
    }
    match into.last() {
        Some(&last) if other[0] > last => into.extend_from_slice(other),
        None => into.extend_from_slice(other),
        _ => {
            let merged: Vec<EventId> = {
                let mut out = Vec::with_capacity(into.len() + other.len());
                let (mut i, mut j) = (0, 0);
                while i < into.len() && j < other.len() {
                    match into[i].cmp(&other[j]) {
                        std::cmp::Ordering::Less => {
                            out.push(into[i]);
                            i += 1;
                        }
                        std::cmp::Ordering::Greater => {
                            out.push(other[j]);
                            j += 1;
                        }
                        std::cmp::Ordering::Equal => {
                            out.push(into[i]);
                            i += 1;
                            j += 1;
                        }
                    }
                }
                out.extend_from_slice(&into[i..]);
                out.extend_from_slice(&other[j..]);
                out
            };
            *into = merged;
        }
    }
}

// ── Net structure ───────────────────────────────────────────────────────

/// Side effect a place requests whenever it receives a (new) token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// Rewrite the listing statement that produced the token so hidden
    /// objects stay invisible.
    Rewriting,
    /// Arm value monitoring for the table named by the token.
    TriggerCreation,
    /// Preserve the object named by the token before destruction.
    CreateBackup,
    /// Notify the administrator: the signature completed.
    CreateNotification,
}

/// A place: named token store with optional expiry and attached actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    /// Seconds a token may rest here; `None` means tokens never expire.
    #[serde(default)]
    pub timeout: Option<i64>,
    /// Actions requested whenever a new token lands here.
    #[serde(default)]
    pub actions: Vec<ActionKind>,
    /// Plain tokens present in the initial marking.
    #[serde(default)]
    pub initial_tokens: usize,
}

impl Place {
    pub fn new(name: impl Into<String>) -> Self {
        Place { name: name.into(), timeout: None, actions: Vec::new(), initial_tokens: 0 }
    }

    pub fn with_timeout(mut self, secs: i64) -> Self {
        self.timeout = Some(secs);
        self
    }

    pub fn with_actions(mut self, actions: Vec<ActionKind>) -> Self {
        self.actions = actions;
        self
    }

    pub fn with_initial_tokens(mut self, n: usize) -> Self {
        self.initial_tokens = n;
        self
    }
}

/// What causes a transition to fire.
///
/// Serializes as the bare kind string, or `null` for epsilon — keeps
/// policy files readable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trigger {
    /// Fires when an external event of this kind arrives.
    Event(String),
    /// Fires automatically whenever enabled (evaluated to quiescence at the
    /// end of every step).
    Epsilon,
}

/// Color constraint an input arc places on candidate tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorFilter {
    /// Any token qualifies.
    #[default]
    Any,
    /// Token must carry `key` = `value`.
    AttrEquals { key: String, value: String },
}

impl ColorFilter {
    pub fn admits(&self, color: &ColorData) -> bool {
        match self {
            ColorFilter::Any => true,
            ColorFilter::AttrEquals { key, value } => {
                color.attributes.get(key).map(|v| v == value).unwrap_or(false)
            }
        }
    }
}

/// How an output arc builds the color of a newly produced token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorProducer {
    /// Copy the triggering event's attributes (empty for epsilon firings).
    #[default]
    FromEvent,
    /// Union of the attributes of every token the firing consumed or
    /// returned; on key conflicts the earlier input arc wins.
    MergeInputs,
    /// Fixed attribute map.
    Const(BTreeMap<String, String>),
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputArc {
    pub place: String,
    #[serde(default = "one")]
    pub weight: usize,
    #[serde(default)]
    pub filter: ColorFilter,
}

impl InputArc {
    pub fn any(place: impl Into<String>) -> Self {
        InputArc { place: place.into(), weight: 1, filter: ColorFilter::Any }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputArc {
    pub place: String,
    #[serde(default = "one")]
    pub weight: usize,
    #[serde(default)]
    pub producer: ColorProducer,
}

impl OutputArc {
    pub fn event(place: impl Into<String>) -> Self {
        OutputArc { place: place.into(), weight: 1, producer: ColorProducer::FromEvent }
    }
}

/// A transition: trigger, named conditions, input and output arcs.
///
/// Condition identifiers are opaque to the engine; a [`ConditionEval`]
/// supplied at step time decides which candidate tokens they admit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub name: String,
    pub trigger: Trigger,
    #[serde(default)]
    pub conditions: Vec<String>,
    pub inputs: Vec<InputArc>,
    #[serde(default)]
    pub outputs: Vec<OutputArc>,
}

/// Structural problems detected when assembling a [`Net`].
#[derive(Debug, Error)]
pub enum NetError {
    #[error("duplicate place name `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition name `{0}`")]
    DuplicateTransition(String),
    #[error("transition `{transition}` references unknown place `{place}`")]
    UnknownPlace { transition: String, place: String },
    #[error("transition `{0}` has a zero-weight arc")]
    ZeroWeight(String),
    #[error("place `{0}` has a non-positive timeout")]
    BadTimeout(String),
    #[error("transition `{0}` has no input arcs")]
    NoInputs(String),
}

/// Compiled arc forms with resolved place indices.
#[derive(Debug, Clone)]
struct CompiledIn {
    place: PlaceId,
    weight: usize,
    filter: ColorFilter,
}

#[derive(Debug, Clone)]
struct CompiledOut {
    place: PlaceId,
    weight: usize,
    producer: ColorProducer,
    /// True when some input arc draws from the same place (self-loop).
    self_loop: bool,
}

#[derive(Debug, Clone)]
struct CompiledTransition {
    inputs: Vec<CompiledIn>,
    outputs: Vec<CompiledOut>,
}

/// An immutable, validated net. Markings live outside it ([`Marking`]), so
/// one net can drive many concurrent token games.
#[derive(Debug, Clone)]
pub struct Net {
    places: Vec<Place>,
    transitions: Vec<Transition>,
    compiled: Vec<CompiledTransition>,
    place_ids: HashMap<String, PlaceId>,
    by_kind: HashMap<String, Vec<TransitionId>>,
    epsilon: Vec<TransitionId>,
}

impl Net {
    pub fn new(places: Vec<Place>, transitions: Vec<Transition>) -> Result<Net, NetError> {
        let mut place_ids = HashMap::new();
        for (i, p) in places.iter().enumerate() {
            if place_ids.insert(p.name.clone(), i).is_some() {
                return Err(NetError::DuplicatePlace(p.name.clone()));
            }
            if matches!(p.timeout, Some(t) if t <= 0) {
                return Err(NetError::BadTimeout(p.name.clone()));
            }
        }

        let mut seen = HashMap::new();
        let mut compiled = Vec::with_capacity(transitions.len());
        let mut by_kind: HashMap<String, Vec<TransitionId>> = HashMap::new();
        let mut epsilon = Vec::new();

        for (ti, t) in transitions.iter().enumerate() {
            if seen.insert(t.name.clone(), ti).is_some() {
                return Err(NetError::DuplicateTransition(t.name.clone()));
            }
            if t.inputs.is_empty() {
                return Err(NetError::NoInputs(t.name.clone()));
            }
            let resolve = |place: &str| {
                place_ids.get(place).copied().ok_or_else(|| NetError::UnknownPlace {
                    transition: t.name.clone(),
                    place: place.to_string(),
                })
            };
            let mut inputs = Vec::with_capacity(t.inputs.len());
            for arc in &t.inputs {
                if arc.weight == 0 {
                    return Err(NetError::ZeroWeight(t.name.clone()));
                }
                inputs.push(CompiledIn {
                    place: resolve(&arc.place)?,
                    weight: arc.weight,
                    filter: arc.filter.clone(),
                });
            }
            let mut outputs = Vec::with_capacity(t.outputs.len());
            for arc in &t.outputs {
                if arc.weight == 0 {
                    return Err(NetError::ZeroWeight(t.name.clone()));
                }
                let place = resolve(&arc.place)?;
                outputs.push(CompiledOut {
                    place,
                    weight: arc.weight,
                    producer: arc.producer.clone(),
                    self_loop: inputs.iter().any(|i| i.place == place),
                });
            }
            match &t.trigger {
                Trigger::Event(kind) => by_kind.entry(kind.clone()).or_default().push(ti),
                Trigger::Epsilon => epsilon.push(ti),
            }
            compiled.push(CompiledTransition { inputs, outputs });
        }

        Ok(Net { places, transitions, compiled, place_ids, by_kind, epsilon })
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn place_id(&self, name: &str) -> Option<PlaceId> {
        self.place_ids.get(name).copied()
    }

    pub fn transition_id(&self, name: &str) -> Option<TransitionId> {
        self.transitions.iter().position(|t| t.name == name)
    }

    /// Whether any transition triggers on this event kind.
    pub fn has_trigger_kind(&self, kind: &str) -> bool {
        self.by_kind.contains_key(kind)
    }

    /// Quick necessary condition for enablement: every input arc can count
    /// enough tokens on its place (regardless of colors or sharing).
    fn understocked(&self, transition: TransitionId, marking: &Marking) -> bool {
        self.compiled[transition].inputs.iter().any(|arc| marking.count(arc.place) < arc.weight)
    }

    /// Marking with each place's `initial_tokens` plain eternal tokens.
    pub fn initial_marking(&self) -> Marking {
        let mut m = Marking::empty(self);
        for (pid, place) in self.places.iter().enumerate() {
            for _ in 0..place.initial_tokens {
                m.add_token(pid, ColoredToken::new(ColorData::plain(0)));
            }
        }
        m
    }
}

// ── Marking ─────────────────────────────────────────────────────────────

/// Token distribution over the places of one [`Net`].
#[derive(Debug, Clone)]
pub struct Marking {
    slots: Vec<Vec<ColoredToken>>,
    /// No token can expire while `now <= expiry_horizon`, so [`Marking::expire`]
    /// is one comparison between arrivals. Conservative: token removal and
    /// timestamp raises (merging keeps the max) only push real expiries
    /// later, and [`Marking::add_token`] resets the bound.
    expiry_horizon: i64,
}

/// Equality is over the tokens alone; the expiry horizon is a cache.
impl PartialEq for Marking {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots
    }
}

impl Eq for Marking {}

impl Marking {
    pub fn empty(net: &Net) -> Marking {
        Marking { slots: vec![Vec::new(); net.places.len()], expiry_horizon: i64::MAX }
    }

    pub fn tokens(&self, place: PlaceId) -> &[ColoredToken] {
        &self.slots[place]
    }

    pub fn count(&self, place: PlaceId) -> usize {
        self.slots[place].len()
    }

    pub fn total(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    /// Appends a token; insertion order is observable through binding
    /// tie-breaks, so callers control it.
    pub fn add_token(&mut self, place: PlaceId, token: ColoredToken) {
        self.slots[place].push(token);
        self.expiry_horizon = i64::MIN;
    }

    /// Removes every token that has outlived its place's timeout
    /// (strictly `now - ts > timeout`). Returns the removed tokens.
    pub fn expire(&mut self, net: &Net, now: i64) -> Vec<(PlaceId, ColoredToken)> {
        if now <= self.expiry_horizon {
            return Vec::new();
        }
        let mut removed = Vec::new();
        let mut horizon = i64::MAX;
        for (pid, place) in net.places.iter().enumerate() {
            let Some(timeout) = place.timeout else { continue };
            let slot = &mut self.slots[pid];
            if slot.is_empty() {
                continue;
            }
            if slot.iter().all(|t| now - t.color.timestamp <= timeout) {
                for t in slot.iter() {
                    horizon = horizon.min(t.color.timestamp.saturating_add(timeout));
                }
                continue;
            }
            let mut kept = Vec::with_capacity(slot.len());
            for tok in slot.drain(..) {
                if now - tok.color.timestamp > timeout {
                    removed.push((pid, tok));
                } else {
                    horizon = horizon.min(tok.color.timestamp.saturating_add(timeout));
                    kept.push(tok);
                }
            }
            *slot = kept;
        }
        self.expiry_horizon = horizon;
        removed
    }

    /// Collapses tokens on `place` that are identical up to timestamp into
    /// one token carrying the maximum timestamp and the provenance union.
    /// The survivor keeps the earliest slot, so insertion order stays
    /// stable.
    ///
    /// Pairwise comparison instead of hashing: slots are short (duplicates
    /// collapse as soon as they appear), and equality checks on attribute
    /// maps allocate nothing.
    pub fn merge_place(&mut self, place: PlaceId) {
        let slot = &mut self.slots[place];
        let mut i = 0;
        while i < slot.len() {
            let mut j = i + 1;
            while j < slot.len() {
                if slot[i].color.attributes == slot[j].color.attributes {
                    let absorbed = slot.remove(j);
                    let keep = &mut slot[i];
                    keep.color.timestamp = keep.color.timestamp.max(absorbed.color.timestamp);
                    merge_provenance(&mut keep.provenance, &absorbed.provenance);
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
    }

    /// Merge pass over every place.
    pub fn merge_all(&mut self, net: &Net) {
        for pid in 0..net.places.len() {
            self.merge_place(pid);
        }
    }
}

// ── Events, conditions, firing ──────────────────────────────────────────

/// External occurrence offered to the net: a kind (matched against
/// [`Trigger::Event`]) plus attributes available to producers and
/// conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub id: EventId,
    pub kind: String,
    pub attributes: BTreeMap<String, String>,
}

/// Decides whether a named condition admits a candidate token.
///
/// Conditions constrain every input arc of the transition that carries
/// them; an implementation that does not recognize `condition` should
/// return `false` (fail closed).
pub trait ConditionEval {
    fn token_admissible(
        &self,
        condition: &str,
        event: Option<&EngineEvent>,
        place: &str,
        token: &ColoredToken,
    ) -> bool;
}

/// Evaluator for nets without conditions; admits every token.
pub struct AdmitAll;

impl ConditionEval for AdmitAll {
    fn token_admissible(&self, _: &str, _: Option<&EngineEvent>, _: &str, _: &ColoredToken) -> bool {
        true
    }
}

/// Concrete token choice for one firing: per input arc, the indices of the
/// tokens it consumes (into the place's slot at bind time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub choices: Vec<Vec<usize>>,
}

/// What one firing did to the marking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiredRecord {
    pub transition: String,
    /// Id of the triggering event; `None` for epsilon firings.
    pub event: Option<EventId>,
    /// Tokens removed from the marking, as `(place, token)`.
    pub consumed: Vec<(String, ColoredToken)>,
    /// Self-loop tokens returned unchanged (never left their place).
    pub returned: Vec<(String, ColoredToken)>,
    /// Newly created tokens.
    pub produced: Vec<(String, ColoredToken)>,
}

/// An action some place requested because it received a new token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionRequest {
    pub place: String,
    pub action: ActionKind,
    pub token: ColoredToken,
}

/// Everything one [`Net::step`] produced.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    pub fired: Vec<FiredRecord>,
    pub actions: Vec<ActionRequest>,
    pub expired: Vec<(PlaceId, ColoredToken)>,
}

#[derive(Debug, Error)]
pub enum FireError {
    #[error("transition `{0}` is not enabled for the requested binding")]
    NotEnabled(String),
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("epsilon transitions exceeded {cap} firings in one step (last: `{transition}`); the net does not quiesce")]
    EpsilonRunaway { transition: String, cap: usize },
}

impl Net {
    /// Transitions that could fire on the current marking, judged purely
    /// structurally: every input arc finds its weight in filter-passing
    /// tokens (named conditions are not consulted — they need an event).
    pub fn enabled(&self, marking: &Marking) -> Vec<TransitionId> {
        (0..self.transitions.len())
            .filter(|&ti| self.bind_with(ti, marking, None, &AdmitAll, true).is_some())
            .collect()
    }

    /// Binds tokens for `transition`, honoring filters and (unless
    /// `structural_only`) its named conditions. Per arc, candidates are
    /// taken most-recent-first (greatest timestamp, ties by insertion
    /// order); arcs claim tokens in declaration order and never share one.
    fn bind_with(
        &self,
        transition: TransitionId,
        marking: &Marking,
        event: Option<&EngineEvent>,
        eval: &dyn ConditionEval,
        structural_only: bool,
    ) -> Option<Binding> {
        let decl = &self.transitions[transition];
        let comp = &self.compiled[transition];
        let mut claimed: Vec<(PlaceId, Vec<usize>)> = Vec::new();
        let mut choices = Vec::with_capacity(comp.inputs.len());

        for arc in &comp.inputs {
            let slot = marking.tokens(arc.place);
            let at = match claimed.iter().position(|(p, _)| *p == arc.place) {
                Some(at) => at,
                None => {
                    claimed.push((arc.place, Vec::new()));
                    claimed.len() - 1
                }
            };
            let place_name = &self.places[arc.place].name;

            let taken = &claimed[at].1;
            let mut candidates: Vec<usize> = slot
                .iter()
                .enumerate()
                .filter(|(i, tok)| {
                    !taken.contains(i)
                        && arc.filter.admits(&tok.color)
                        && (structural_only
                            || decl.conditions.iter().all(|c| {
                                eval.token_admissible(c, event, place_name, tok)
                            }))
                })
                .map(|(i, _)| i)
                .collect();
            if candidates.len() < arc.weight {
                return None;
            }
            candidates
                .sort_by(|&a, &b| slot[b].color.timestamp.cmp(&slot[a].color.timestamp).then(a.cmp(&b)));
            candidates.truncate(arc.weight);
            claimed[at].1.extend_from_slice(&candidates);
            choices.push(candidates);
        }
        Some(Binding { choices })
    }

    /// Public binding entry point: filters plus named conditions.
    pub fn bind(
        &self,
        transition: TransitionId,
        marking: &Marking,
        event: Option<&EngineEvent>,
        eval: &dyn ConditionEval,
    ) -> Option<Binding> {
        self.bind_with(transition, marking, event, eval, false)
    }

    /// Fires `transition` with a previously computed binding.
    ///
    /// Consumed tokens leave the marking except where an output arc on the
    /// same place returns them; produced tokens get `now` as timestamp and
    /// inherit the provenance union of everything consumed or returned,
    /// plus the triggering event's id.
    pub fn fire(
        &self,
        marking: &mut Marking,
        transition: TransitionId,
        binding: &Binding,
        event: Option<&EngineEvent>,
        now: i64,
    ) -> Result<FiredRecord, FireError> {
        let decl = &self.transitions[transition];
        let comp = &self.compiled[transition];

        // Re-validate: the binding must still denote distinct, existing,
        // filter-passing tokens (it may be stale if the marking moved on).
        if binding.choices.len() != comp.inputs.len() {
            return Err(FireError::NotEnabled(decl.name.clone()));
        }
        // Arc counts are single digits, so the per-place views below are
        // plain vectors scanned linearly; this path runs on every firing
        // and must not allocate more than the records it returns.
        let mut per_place_taken: Vec<(PlaceId, Vec<usize>)> = Vec::new();
        for (arc, chosen) in comp.inputs.iter().zip(&binding.choices) {
            if chosen.len() != arc.weight {
                return Err(FireError::NotEnabled(decl.name.clone()));
            }
            let slot = marking.tokens(arc.place);
            let at = match per_place_taken.iter().position(|(p, _)| *p == arc.place) {
                Some(at) => at,
                None => {
                    per_place_taken.push((arc.place, Vec::new()));
                    per_place_taken.len() - 1
                }
            };
            let taken = &mut per_place_taken[at].1;
            for &i in chosen {
                if i >= slot.len() || taken.contains(&i) || !arc.filter.admits(&slot[i].color) {
                    return Err(FireError::NotEnabled(decl.name.clone()));
                }
                taken.push(i);
            }
        }

        // Claims grouped per place, in input-arc declaration order, each
        // place's indices ascending — keeps attribute inheritance and
        // record contents deterministic.
        let mut claims: Vec<(PlaceId, Vec<usize>)> = Vec::new();
        for (arc, chosen) in comp.inputs.iter().zip(&binding.choices) {
            match claims.iter_mut().find(|(p, _)| *p == arc.place) {
                Some((_, all)) => all.extend_from_slice(chosen),
                None => claims.push((arc.place, chosen.clone())),
            }
        }
        for (_, indices) in &mut claims {
            indices.sort_unstable();
        }

        // How many claimed tokens each self-looped place gives back.
        let mut loop_capacity: Vec<(PlaceId, usize)> = Vec::new();
        for out in &comp.outputs {
            if out.self_loop {
                match loop_capacity.iter_mut().find(|(p, _)| *p == out.place) {
                    Some((_, w)) => *w += out.weight,
                    None => loop_capacity.push((out.place, out.weight)),
                }
            }
        }

        let mut provenance_pool: Vec<EventId> = Vec::new();
        let mut inherited_attrs: BTreeMap<String, String> = BTreeMap::new();
        let mut consumed = Vec::new();
        let mut returned = Vec::new();
        let mut return_credit: Vec<(PlaceId, usize)> = Vec::new();

        for (pid, indices) in claims {
            // The lowest-index (earliest inserted) claimed tokens are the
            // ones returned when the self-loop covers only part of the
            // claim; the rest are removed.
            let cap = loop_capacity
                .iter()
                .find(|(p, _)| *p == pid)
                .map_or(0, |(_, w)| *w)
                .min(indices.len());
            return_credit.push((pid, cap));
            let place_name = self.places[pid].name.clone();
            let mut removed_below = 0;
            for (rank, &idx) in indices.iter().enumerate() {
                let tok = if rank < cap {
                    marking.slots[pid][idx].clone()
                } else {
                    marking.slots[pid].remove(idx - removed_below)
                };
                if rank >= cap {
                    removed_below += 1;
                }
                merge_provenance(&mut provenance_pool, &tok.provenance);
                for (k, v) in &tok.color.attributes {
                    inherited_attrs.entry(k.clone()).or_insert_with(|| v.clone());
                }
                if rank < cap {
                    returned.push((place_name.clone(), tok));
                } else {
                    consumed.push((place_name.clone(), tok));
                }
            }
        }

        if let Some(ev) = event {
            merge_provenance(&mut provenance_pool, &[ev.id]);
        }

        let mut produced = Vec::new();
        for out in &comp.outputs {
            let fresh = if out.self_loop {
                // Part of this arc's weight is satisfied by returned
                // tokens; only the excess creates new ones.
                let credit = match return_credit.iter_mut().find(|(p, _)| *p == out.place) {
                    Some((_, c)) => c,
                    None => {
                        return_credit.push((out.place, 0));
                        &mut return_credit.last_mut().expect("just pushed").1
                    }
                };
                let used = out.weight.min(*credit);
                *credit -= used;
                out.weight - used
            } else {
                out.weight
            };
            for _ in 0..fresh {
                let attributes = match &out.producer {
                    ColorProducer::FromEvent => {
                        event.map(|e| e.attributes.clone()).unwrap_or_default()
                    }
                    ColorProducer::MergeInputs => inherited_attrs.clone(),
                    ColorProducer::Const(map) => map.clone(),
                };
                let token = ColoredToken {
                    color: ColorData::new(attributes, now),
                    provenance: provenance_pool.clone(),
                };
                marking.add_token(out.place, token.clone());
                produced.push((self.places[out.place].name.clone(), token));
            }
        }

        Ok(FiredRecord {
            transition: decl.name.clone(),
            event: event.map(|e| e.id),
            consumed,
            returned,
            produced,
        })
    }

    /// Processes one external event:
    ///
    /// 1. expire tokens at `now`;
    /// 2. fire, once each, every enabled transition whose trigger matches
    ///    the event's kind and whose conditions admit a binding;
    /// 3. fire epsilon transitions until none is enabled (capped);
    /// 4. merge every place that received tokens.
    ///
    /// Returns the firing records plus an [`ActionRequest`] for every
    /// action of every place that received a newly produced token.
    pub fn step(
        &self,
        marking: &mut Marking,
        event: &EngineEvent,
        now: i64,
        eval: &dyn ConditionEval,
    ) -> Result<StepOutcome, StepError> {
        let mut outcome = StepOutcome {
            expired: marking.expire(self, now),
            ..StepOutcome::default()
        };

        if let Some(matching) = self.by_kind.get(&event.kind) {
            for &ti in matching {
                if self.understocked(ti, marking) {
                    continue;
                }
                if let Some(binding) = self.bind_with(ti, marking, Some(event), eval, false) {
                    let rec = self
                        .fire(marking, ti, &binding, Some(event), now)
                        .expect("freshly bound transition must fire");
                    outcome.fired.push(rec);
                }
            }
        }

        let mut epsilon_firings = 0;
        loop {
            let mut progressed = false;
            for &ti in &self.epsilon {
                if self.understocked(ti, marking) {
                    continue;
                }
                while let Some(binding) = self.bind_with(ti, marking, None, eval, false) {
                    if epsilon_firings >= EPSILON_CAP {
                        return Err(StepError::EpsilonRunaway {
                            transition: self.transitions[ti].name.clone(),
                            cap: EPSILON_CAP,
                        });
                    }
                    let rec = self
                        .fire(marking, ti, &binding, None, now)
                        .expect("freshly bound transition must fire");
                    outcome.fired.push(rec);
                    epsilon_firings += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }

        let mut touched: Vec<PlaceId> = Vec::new();
        for rec in &outcome.fired {
            for (place, token) in &rec.produced {
                let pid = self.place_ids[place];
                if !touched.contains(&pid) {
                    touched.push(pid);
                }
                for &action in &self.places[pid].actions {
                    outcome.actions.push(ActionRequest {
                        place: place.clone(),
                        action,
                        token: token.clone(),
                    });
                }
            }
        }
        // Merging only touched places is equivalent to a full pass: places
        // that received nothing kept their (already merged) contents, and
        // expiry cannot introduce duplicates.
        for pid in touched {
            marking.merge_place(pid);
        }

        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(ts: i64) -> ColoredToken {
        ColoredToken::new(ColorData::plain(ts))
    }

    fn color_tok(ts: i64, pairs: &[(&str, &str)]) -> ColoredToken {
        let attrs = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        ColoredToken::new(ColorData::new(attrs, ts))
    }

    /// Plain weighted net: p1 --2--> t1, p2 --1--> t1, t1 --1--> p3.
    fn weighted_net() -> Net {
        Net::new(
            vec![Place::new("p1"), Place::new("p2"), Place::new("p3")],
            vec![Transition {
                name: "t1".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![
                    InputArc { place: "p1".into(), weight: 2, filter: ColorFilter::Any },
                    InputArc { place: "p2".into(), weight: 1, filter: ColorFilter::Any },
                ],
                outputs: vec![OutputArc {
                    place: "p3".into(),
                    weight: 1,
                    producer: ColorProducer::Const(BTreeMap::new()),
                }],
            }],
        )
        .unwrap()
    }

    #[test]
    fn weighted_transition_needs_full_input_weights() {
        let net = weighted_net();
        let mut m = Marking::empty(&net);
        m.add_token(0, tok(0));
        m.add_token(1, tok(0));
        m.add_token(1, tok(0));
        // Only one token on p1: not enabled.
        assert!(net.enabled(&m).is_empty());

        m.add_token(0, tok(0));
        assert_eq!(net.enabled(&m), vec![0]);
    }

    #[test]
    fn weighted_fire_moves_exact_counts() {
        let net = weighted_net();
        let mut m = Marking::empty(&net);
        for _ in 0..2 {
            m.add_token(0, tok(0));
            m.add_token(1, tok(0));
        }
        let b = net.bind(0, &m, None, &AdmitAll).unwrap();
        let rec = net.fire(&mut m, 0, &b, None, 1).unwrap();
        assert_eq!((m.count(0), m.count(1), m.count(2)), (0, 1, 1));
        assert_eq!(rec.consumed.len(), 3);
        assert_eq!(rec.produced.len(), 1);
        assert!(rec.returned.is_empty());
    }

    /// Colored variant: consume two black plus one red, produce one black.
    #[test]
    fn colored_arcs_select_by_attribute() {
        let net = Net::new(
            vec![Place::new("p1"), Place::new("p3")],
            vec![Transition {
                name: "t1".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![
                    InputArc {
                        place: "p1".into(),
                        weight: 2,
                        filter: ColorFilter::AttrEquals { key: "color".into(), value: "black".into() },
                    },
                    InputArc {
                        place: "p1".into(),
                        weight: 1,
                        filter: ColorFilter::AttrEquals { key: "color".into(), value: "red".into() },
                    },
                ],
                outputs: vec![OutputArc {
                    place: "p3".into(),
                    weight: 1,
                    producer: ColorProducer::Const(
                        [("color".to_string(), "black".to_string())].into_iter().collect(),
                    ),
                }],
            }],
        )
        .unwrap();

        let mut m = Marking::empty(&net);
        m.add_token(0, color_tok(0, &[("color", "black")]));
        m.add_token(0, color_tok(0, &[("color", "black")]));
        m.add_token(0, color_tok(0, &[("color", "red")]));
        m.add_token(0, color_tok(0, &[("color", "red")]));

        let b = net.bind(0, &m, None, &AdmitAll).unwrap();
        net.fire(&mut m, 0, &b, None, 1).unwrap();

        assert_eq!(m.count(0), 1);
        assert_eq!(m.tokens(0)[0].color.attributes["color"], "red");
        assert_eq!(m.count(1), 1);
        assert_eq!(m.tokens(1)[0].color.attributes["color"], "black");
    }

    #[test]
    fn missing_color_disables_transition() {
        let net = Net::new(
            vec![Place::new("p1"), Place::new("p3")],
            vec![Transition {
                name: "t1".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![InputArc {
                    place: "p1".into(),
                    weight: 1,
                    filter: ColorFilter::AttrEquals { key: "color".into(), value: "red".into() },
                }],
                outputs: vec![],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, color_tok(0, &[("color", "black")]));
        assert!(net.enabled(&m).is_empty());
    }

    #[test]
    fn self_loop_returns_identical_token() {
        let net = Net::new(
            vec![Place::new("p")],
            vec![Transition {
                name: "loop".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![InputArc::any("p")],
                outputs: vec![OutputArc::event("p")],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        let original = color_tok(5, &[("k", "v")]);
        m.add_token(0, original.clone());

        let ev = EngineEvent { id: 9, kind: "go".into(), attributes: BTreeMap::new() };
        let b = net.bind(0, &m, Some(&ev), &AdmitAll).unwrap();
        let rec = net.fire(&mut m, 0, &b, Some(&ev), 100).unwrap();

        // Marking unchanged; the token kept its timestamp and provenance.
        assert_eq!(m.count(0), 1);
        assert_eq!(m.tokens(0)[0], original);
        assert_eq!(rec.returned.len(), 1);
        assert!(rec.consumed.is_empty());
        assert!(rec.produced.is_empty());
    }

    #[test]
    fn firing_disabled_transition_is_an_error() {
        let net = weighted_net();
        let mut m = Marking::empty(&net);
        m.add_token(0, tok(0));
        let stale = Binding { choices: vec![vec![0, 1], vec![0]] };
        assert!(matches!(net.fire(&mut m, 0, &stale, None, 0), Err(FireError::NotEnabled(_))));
    }

    #[test]
    fn expiry_boundary_is_strict() {
        let net = Net::new(vec![Place::new("p").with_timeout(120)], vec![]).unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, tok(0));

        assert!(m.expire(&net, 120).is_empty(), "age == timeout must survive");
        assert_eq!(m.count(0), 1);

        let removed = m.expire(&net, 121);
        assert_eq!(removed.len(), 1);
        assert_eq!(m.count(0), 0);
    }

    #[test]
    fn tokens_without_timeout_never_expire() {
        let net = Net::new(vec![Place::new("p")], vec![]).unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, tok(0));
        assert!(m.expire(&net, i64::MAX).is_empty());
        assert_eq!(m.count(0), 1);
    }

    #[test]
    fn merge_keeps_max_timestamp_and_unions_provenance() {
        let net = Net::new(vec![Place::new("p")], vec![]).unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, ColoredToken::with_provenance(
            ColorData::new([("db".to_string(), "shop".to_string())].into_iter().collect(), 5),
            vec![1],
        ));
        m.add_token(0, ColoredToken::with_provenance(
            ColorData::new([("db".to_string(), "shop".to_string())].into_iter().collect(), 9),
            vec![2],
        ));
        m.merge_place(0);

        assert_eq!(m.count(0), 1);
        let survivor = &m.tokens(0)[0];
        assert_eq!(survivor.color.timestamp, 9);
        assert_eq!(survivor.provenance, vec![1, 2]);
    }

    #[test]
    fn merge_distinguishes_attribute_tuples() {
        let net = Net::new(vec![Place::new("p")], vec![]).unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, color_tok(1, &[("db", "a")]));
        m.add_token(0, color_tok(2, &[("db", "b")]));
        m.add_token(0, color_tok(3, &[("db", "a")]));
        m.merge_place(0);
        assert_eq!(m.count(0), 2);
        assert_eq!(m.tokens(0)[0].color.timestamp, 3);
    }

    #[test]
    fn binding_prefers_most_recent_token() {
        let net = Net::new(
            vec![Place::new("p"), Place::new("q")],
            vec![Transition {
                name: "t".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![InputArc::any("p")],
                outputs: vec![OutputArc {
                    place: "q".into(),
                    weight: 1,
                    producer: ColorProducer::MergeInputs,
                }],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, color_tok(3, &[("n", "old")]));
        m.add_token(0, color_tok(8, &[("n", "new")]));
        m.add_token(0, color_tok(8, &[("n", "tied")]));

        let b = net.bind(0, &m, None, &AdmitAll).unwrap();
        // ts=8 beats ts=3; between the two ts=8 tokens insertion order wins.
        assert_eq!(b.choices, vec![vec![1]]);
        net.fire(&mut m, 0, &b, None, 9).unwrap();
        assert_eq!(m.tokens(1)[0].color.attributes["n"], "new");
    }

    #[test]
    fn epsilon_runs_to_quiescence_and_caps() {
        // source place feeds an epsilon transition that moves tokens one by
        // one; all of them must migrate within a single step.
        let net = Net::new(
            vec![Place::new("src"), Place::new("dst")],
            vec![Transition {
                name: "drain".into(),
                trigger: Trigger::Epsilon,
                conditions: vec![],
                inputs: vec![InputArc::any("src")],
                outputs: vec![OutputArc {
                    place: "dst".into(),
                    weight: 1,
                    producer: ColorProducer::MergeInputs,
                }],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        for i in 0..5 {
            m.add_token(0, color_tok(i, &[("n", &i.to_string())]));
        }
        let ev = EngineEvent { id: 1, kind: "unrelated".into(), attributes: BTreeMap::new() };
        let out = net.step(&mut m, &ev, 10, &AdmitAll).unwrap();
        assert_eq!(m.count(0), 0);
        assert_eq!(m.count(1), 5);
        assert_eq!(out.fired.len(), 5);

        // An endless self-feeding epsilon loop trips the cap instead of
        // hanging.
        let runaway = Net::new(
            vec![Place::new("a")],
            vec![Transition {
                name: "spin".into(),
                trigger: Trigger::Epsilon,
                conditions: vec![],
                inputs: vec![InputArc::any("a")],
                outputs: vec![
                    OutputArc {
                        place: "a".into(),
                        weight: 2,
                        producer: ColorProducer::Const(BTreeMap::new()),
                    },
                ],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&runaway);
        m.add_token(0, color_tok(0, &[("seed", "x")]));
        let err = runaway.step(&mut m, &ev, 0, &AdmitAll).unwrap_err();
        assert!(matches!(err, StepError::EpsilonRunaway { .. }));
    }

    #[test]
    fn step_on_unmatched_kind_only_expires_and_merges() {
        let net = Net::new(
            vec![Place::new("p").with_timeout(10)],
            vec![Transition {
                name: "t".into(),
                trigger: Trigger::Event("known".into()),
                conditions: vec![],
                inputs: vec![InputArc::any("p")],
                outputs: vec![],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, tok(0));
        m.add_token(0, tok(100));

        let ev = EngineEvent { id: 1, kind: "unknown".into(), attributes: BTreeMap::new() };
        let out = net.step(&mut m, &ev, 100, &AdmitAll).unwrap();
        assert!(out.fired.is_empty());
        assert!(out.actions.is_empty());
        assert_eq!(out.expired.len(), 1);
        assert_eq!(m.count(0), 1);
    }

    #[test]
    fn structural_validation_rejects_dangling_arcs() {
        let err = Net::new(
            vec![Place::new("p")],
            vec![Transition {
                name: "t".into(),
                trigger: Trigger::Epsilon,
                conditions: vec![],
                inputs: vec![InputArc::any("ghost")],
                outputs: vec![],
            }],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::UnknownPlace { .. }));

        let err = Net::new(
            vec![Place::new("p").with_timeout(0)],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::BadTimeout(_)));
    }

    #[test]
    fn produced_tokens_union_provenance_of_all_inputs() {
        let net = Net::new(
            vec![Place::new("a"), Place::new("b"), Place::new("out")],
            vec![Transition {
                name: "join".into(),
                trigger: Trigger::Event("go".into()),
                conditions: vec![],
                inputs: vec![InputArc::any("a"), InputArc::any("b")],
                outputs: vec![OutputArc {
                    place: "out".into(),
                    weight: 1,
                    producer: ColorProducer::MergeInputs,
                }],
            }],
        )
        .unwrap();
        let mut m = Marking::empty(&net);
        m.add_token(0, ColoredToken::with_provenance(ColorData::plain(0), vec![1, 4]));
        m.add_token(1, ColoredToken::with_provenance(ColorData::plain(0), vec![2]));

        let ev = EngineEvent { id: 7, kind: "go".into(), attributes: BTreeMap::new() };
        let out = net.step(&mut m, &ev, 1, &AdmitAll).unwrap();
        assert_eq!(m.tokens(2)[0].provenance, vec![1, 2, 4, 7]);
        assert_eq!(out.actions.len(), 0);
    }

    // ── property tests ──────────────────────────────────────────────────

    fn arb_attrs() -> impl Strategy<Value = BTreeMap<String, String>> {
        prop::collection::btree_map("[ab]", "[xy]", 0..3)
    }

    fn arb_token() -> impl Strategy<Value = ColoredToken> {
        (arb_attrs(), 0i64..1000, prop::collection::vec(0u64..50, 0..4)).prop_map(
            |(attributes, timestamp, prov)| {
                ColoredToken::with_provenance(ColorData { attributes, timestamp }, prov)
            },
        )
    }

    proptest! {
        #[test]
        fn merge_is_idempotent_and_bounded(tokens in prop::collection::vec(arb_token(), 0..20)) {
            let net = Net::new(vec![Place::new("p")], vec![]).unwrap();
            let mut m = Marking::empty(&net);
            let distinct: std::collections::HashSet<_> =
                tokens.iter().map(|t| t.color.attributes.clone()).collect();
            for t in tokens {
                m.add_token(0, t);
            }
            m.merge_place(0);
            prop_assert_eq!(m.count(0), distinct.len());
            let once = m.clone();
            m.merge_place(0);
            prop_assert_eq!(m, once);
        }

        #[test]
        fn expiry_is_monotone_in_time(
            tokens in prop::collection::vec(arb_token(), 0..20),
            t1 in 0i64..2000,
            dt in 0i64..2000,
        ) {
            let net = Net::new(vec![Place::new("p").with_timeout(100)], vec![]).unwrap();
            let mut m1 = Marking::empty(&net);
            for t in &tokens {
                m1.add_token(0, t.clone());
            }
            let mut m2 = m1.clone();
            m1.expire(&net, t1);
            m2.expire(&net, t1 + dt);
            // Everything surviving the later instant survives the earlier one.
            for tok in m2.tokens(0) {
                prop_assert!(m1.tokens(0).contains(tok));
            }
        }

        #[test]
        fn firing_conserves_arc_weight_arithmetic(
            p1_tokens in 0usize..5,
            p2_tokens in 0usize..5,
            w1 in 1usize..3,
            w2 in 1usize..3,
            out_w in 1usize..3,
        ) {
            let net = Net::new(
                vec![Place::new("p1"), Place::new("p2"), Place::new("p3")],
                vec![Transition {
                    name: "t".into(),
                    trigger: Trigger::Event("go".into()),
                    conditions: vec![],
                    inputs: vec![
                        InputArc { place: "p1".into(), weight: w1, filter: ColorFilter::Any },
                        InputArc { place: "p2".into(), weight: w2, filter: ColorFilter::Any },
                    ],
                    outputs: vec![OutputArc {
                        place: "p3".into(),
                        weight: out_w,
                        producer: ColorProducer::Const(BTreeMap::new()),
                    }],
                }],
            )
            .unwrap();
            let mut m = Marking::empty(&net);
            for i in 0..p1_tokens {
                m.add_token(0, tok(i as i64));
            }
            for i in 0..p2_tokens {
                m.add_token(1, tok(i as i64));
            }
            let before = (m.count(0), m.count(1), m.count(2));
            match net.bind(0, &m, None, &AdmitAll) {
                Some(b) => {
                    prop_assert!(p1_tokens >= w1 && p2_tokens >= w2);
                    net.fire(&mut m, 0, &b, None, 50).unwrap();
                    prop_assert_eq!(m.count(0), before.0 - w1);
                    prop_assert_eq!(m.count(1), before.1 - w2);
                    prop_assert_eq!(m.count(2), before.2 + out_w);
                }
                None => prop_assert!(p1_tokens < w1 || p2_tokens < w2),
            }
        }
    }
}
