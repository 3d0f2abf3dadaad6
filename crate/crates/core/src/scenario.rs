//! Editor walkthroughs: small concurrent histories with a frozen outcome.
//!
//! Each scenario stages a short collaborative session on a few replicas,
//! lets specific operations race, drains the network, and checks the
//! converged result from every angle (pairwise equality, the causality
//! audit, and oracle replay over shuffled schedules). The returned record
//! carries the raw message log, labeled snapshots, and a plain-text
//! rendering, so the same walkthroughs back the command-line simulator,
//! the golden files, and the acceptance suite.

use std::fmt::Write as _;

use crate::causal::{Envelope, ReplicaId};
use crate::element::{amount_mult, attr_set, nested_foreach, vec2_mult, AttrValue, Mat2, Rational};
use crate::foreach::{Instruction, MutationFn, Predicate, PriorGate};
use crate::list::{ElemOp, ElementState, ListSnapshot, ValueSnapshot};
use crate::log::canonical_json;
use crate::oracle::check_convergence;
use crate::position::Position;
use crate::sim::Network;

/// One staged walkthrough with its converged, verified outcomes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub blurb: &'static str,
    /// Message log of the first run, in network order.
    pub log: Vec<Envelope>,
    /// Labeled converged snapshots, primary run first.
    pub snapshots: Vec<(String, ListSnapshot)>,
    pub rendering: String,
    pub notes: Vec<String>,
}

pub const NAMES: [&str; 5] = [
    "rich-text-bold",
    "rich-text-delete",
    "range-endpoints",
    "recipe-scale",
    "slide-rotate",
];

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "rich-text-bold" => Some(rich_text_bold()),
        "rich-text-delete" => Some(rich_text_delete()),
        "range-endpoints" => Some(range_endpoints()),
        "recipe-scale" => Some(recipe_scale()),
        "slide-rotate" => Some(slide_rotate()),
        _ => None,
    }
}

pub fn all() -> Vec<Scenario> {
    NAMES.iter().map(|n| by_name(n).unwrap()).collect()
}

fn network(names: &[&str]) -> Network {
    let ids: Vec<ReplicaId> = names
        .iter()
        .map(|s| ReplicaId::new(*s).expect("scenario replica name"))
        .collect();
    Network::new(&ids)
}

fn type_word(net: &mut Network, r: usize, word: &str) {
    for (i, ch) in word.chars().enumerate() {
        net.insert(r, i, ElementState::rich_char(ch))
            .expect("typing into a healthy list");
    }
}

fn pos_of(net: &Network, r: usize, index: usize) -> Position {
    net.replica(r)
        .list()
        .nth(index)
        .expect("indexed element exists")
        .pos
        .clone()
}

/// Drains the network and checks convergence three ways before returning
/// the agreed snapshot.
fn settle(net: &mut Network) -> ListSnapshot {
    net.drain();
    assert_eq!(net.divergence(), None, "replicas disagree at quiescence");
    net.audit_eval_log()
        .expect("prior flags match trace causality");
    let history = net.history().expect("scenario history is well formed");
    let convergence = check_convergence(&history, 6, 0x5eed).expect("replayed schedules agree");
    let expected = canonical_json(&convergence.oracle);
    for r in net.replicas() {
        assert_eq!(
            canonical_json(&r.snapshot()),
            expected,
            "live replica {} differs from the oracle",
            r.id()
        );
    }
    convergence.oracle
}

fn bold() -> Instruction {
    Instruction::Apply(attr_set("bold", AttrValue::Bool(true)))
}

fn is_bold(value: &ValueSnapshot) -> bool {
    match value {
        ValueSnapshot::RichChar { attrs, .. } => attrs.get("bold") == Some(&AttrValue::Bool(true)),
        _ => false,
    }
}

fn snapshot_char(value: &ValueSnapshot) -> char {
    match value {
        ValueSnapshot::RichChar { ch, .. } => *ch,
        _ => '?',
    }
}

/// Renders rich text with `**` around maximal bold runs.
fn render_rich_text(snapshot: &ListSnapshot) -> String {
    let mut out = String::new();
    let mut in_bold = false;
    for elem in &snapshot.0 {
        let b = is_bold(&elem.value);
        if b != in_bold {
            out.push_str("**");
            in_bold = b;
        }
        out.push(snapshot_char(&elem.value));
    }
    if in_bold {
        out.push_str("**");
    }
    out
}

fn render_recipe(snapshot: &ListSnapshot) -> String {
    let mut out = String::new();
    for elem in &snapshot.0 {
        if let ValueSnapshot::Ingredient { name, amount, unit } = &elem.value {
            writeln!(out, "- {amount} {unit} {name}").unwrap();
        }
    }
    out
}

/// Renders each slide object as its vector sum (the rendered position).
fn render_slide(snapshot: &ListSnapshot) -> String {
    let mut out = String::new();
    for elem in &snapshot.0 {
        if let ValueSnapshot::Object(inner) = &elem.value {
            let mut sum = (Rational::zero(), Rational::zero());
            for v in &inner.0 {
                if let ValueSnapshot::Vec2 { x, y } = &v.value {
                    let x: Rational = x.parse().expect("snapshot rational");
                    let y: Rational = y.parse().expect("snapshot rational");
                    sum = (sum.0.add(&x), sum.1.add(&y));
                }
            }
            writeln!(
                out,
                "object {}: {} translation(s), position ({}, {})",
                elem.pos,
                inner.0.len(),
                sum.0,
                sum.1
            )
            .unwrap();
        }
    }
    out
}

/// Bolding a word while another user types into it. The buffered for-each
/// formats the concurrently inserted letter too; evaluating the same
/// function at its generator and shipping point updates leaves the new
/// letter unformatted, splitting the bold run.
pub fn rich_text_bold() -> Scenario {
    // Run 1: for-each, shipped as a single mutation-function envelope.
    let mut net = network(&["A", "B", "C"]);
    type_word(&mut net, 0, "hello");
    net.drain();
    let f = MutationFn::new(
        Predicate::Closed {
            start: pos_of(&net, 0, 0),
            end_prime: pos_of(&net, 0, 4),
        },
        PriorGate::Any,
        bold(),
    );
    net.foreach(0, f.clone());
    net.insert(1, 2, ElementState::rich_char('x')).unwrap();
    let snap_foreach = settle(&mut net);
    let log = net.log().to_vec();

    // Run 2: the same function evaluated at its generator instead.
    let mut prior_net = network(&["A", "B", "C"]);
    type_word(&mut prior_net, 0, "hello");
    prior_net.drain();
    let emitted = prior_net.foreach_prior(0, &f);
    prior_net
        .insert(1, 2, ElementState::rich_char('x'))
        .unwrap();
    let snap_prior = settle(&mut prior_net);

    let text: String = snap_foreach
        .0
        .iter()
        .map(|e| snapshot_char(&e.value))
        .collect();
    assert_eq!(text, "hexllo");
    assert!(
        snap_foreach.0.iter().all(|e| is_bold(&e.value)),
        "for-each must format the concurrently inserted letter"
    );
    let x_prior = snap_prior
        .0
        .iter()
        .find(|e| snapshot_char(&e.value) == 'x')
        .unwrap();
    assert!(
        !is_bold(&x_prior.value),
        "generator-evaluated formatting must miss the concurrent letter"
    );
    assert_eq!(emitted.len(), 5);

    let rendering = format!(
        "forEach      {}\nforEachPrior {}\n",
        render_rich_text(&snap_foreach),
        render_rich_text(&snap_prior)
    );
    Scenario {
        name: "rich-text-bold",
        blurb: "Bold a whole word while another user types a letter into the middle of it.",
        log,
        snapshots: vec![
            ("forEach".to_string(), snap_foreach),
            ("forEachPrior".to_string(), snap_prior),
        ],
        rendering,
        notes: vec![
            "The buffered for-each formats the concurrent letter; the run stays solid.".to_string(),
            "Evaluating the same function at the generator ships 5 point updates and leaves \
             the concurrent letter unformatted."
                .to_string(),
        ],
    }
}

/// Deleting a word while another user types into it. A prior-only delete
/// removes every character that existed when the delete was issued, spares
/// the concurrent insertion, and costs one envelope instead of one per
/// character.
pub fn rich_text_delete() -> Scenario {
    let word = "typewriter";
    let f = MutationFn::new(Predicate::All, PriorGate::PriorOnly, Instruction::Del);

    let mut net = network(&["A", "B", "C"]);
    type_word(&mut net, 0, word);
    net.drain();
    net.foreach(0, f.clone());
    net.insert(1, 5, ElementState::rich_char('x')).unwrap();
    let snap_foreach = settle(&mut net);
    let log = net.log().to_vec();

    let mut prior_net = network(&["A", "B", "C"]);
    type_word(&mut prior_net, 0, word);
    prior_net.drain();
    let emitted = prior_net.foreach_prior(0, &f);
    prior_net
        .insert(1, 5, ElementState::rich_char('x'))
        .unwrap();
    let snap_prior = settle(&mut prior_net);

    for (label, snap) in [("for-each", &snap_foreach), ("point deletes", &snap_prior)] {
        let text: String = snap.0.iter().map(|e| snapshot_char(&e.value)).collect();
        assert_eq!(text, "x", "{label}: only the concurrent letter survives");
    }
    assert_eq!(emitted.len(), word.chars().count());

    let rendering = format!(
        "before        {word}\nforEach del   {} (1 deletion envelope)\npoint deletes {} ({} deletion envelopes)\n",
        render_rich_text(&snap_foreach),
        render_rich_text(&snap_prior),
        emitted.len()
    );
    Scenario {
        name: "rich-text-delete",
        blurb: "Delete a whole word while another user types a letter into the middle of it.",
        log,
        snapshots: vec![
            ("forEach".to_string(), snap_foreach),
            ("pointDeletes".to_string(), snap_prior),
        ],
        rendering,
        notes: vec![
            "One prior-only for-each envelope deletes all 10 characters.".to_string(),
            "The generator-evaluated variant ships 10 separate deletes for the same effect."
                .to_string(),
            "Both spare the concurrently typed letter.".to_string(),
        ],
    }
}

/// Range endpoint semantics: a half-open range `[start, end)` picks up a
/// concurrent insertion at the end of the formatted run, while a closed
/// range `[start, end']` over the same characters does not.
pub fn range_endpoints() -> Scenario {
    let build = |predicate_of: &dyn Fn(&Network) -> Predicate| -> (Network, ListSnapshot) {
        let mut net = network(&["A", "B", "C"]);
        type_word(&mut net, 0, "hello!");
        net.drain();
        let f = MutationFn::new(predicate_of(&net), PriorGate::Any, bold());
        net.foreach(0, f);
        // Concurrent insertion between 'o' and '!': at the end of the
        // bolded run, before the excluded bang.
        net.insert(1, 5, ElementState::rich_char('x')).unwrap();
        let snap = settle(&mut net);
        (net, snap)
    };

    let (net, snap_half_open) = build(&|net| Predicate::HalfOpen {
        start: pos_of(net, 0, 0),
        end: pos_of(net, 0, 5),
    });
    let log = net.log().to_vec();
    let (_, snap_closed) = build(&|net| Predicate::Closed {
        start: pos_of(net, 0, 0),
        end_prime: pos_of(net, 0, 4),
    });

    for snap in [&snap_half_open, &snap_closed] {
        let text: String = snap.0.iter().map(|e| snapshot_char(&e.value)).collect();
        assert_eq!(text, "hellox!");
        assert!(!is_bold(&snap.0[6].value), "the bang stays unformatted");
    }
    assert!(
        is_bold(&snap_half_open.0[5].value),
        "half-open range formats the insertion at its open end"
    );
    assert!(
        !is_bold(&snap_closed.0[5].value),
        "closed range excludes the insertion after its last element"
    );

    let rendering = format!(
        "halfOpen [h, !)  {}\nclosed   [h, o]  {}\n",
        render_rich_text(&snap_half_open),
        render_rich_text(&snap_closed)
    );
    Scenario {
        name: "range-endpoints",
        blurb: "Bold `hello` in `hello!` while another user types a letter right after the `o`.",
        log,
        snapshots: vec![
            ("halfOpen".to_string(), snap_half_open),
            ("closed".to_string(), snap_closed),
        ],
        rendering,
        notes: vec![
            "Half-open up to the bang: the concurrent letter lands inside and is formatted."
                .to_string(),
            "Closed at the `o`: the concurrent letter lands after the range and is not."
                .to_string(),
        ],
    }
}

/// Scaling a recipe while another user adds an ingredient. The buffered
/// for-each multiplies the concurrent ingredient too, keeping the recipe
/// proportional, and the arithmetic stays exact.
pub fn recipe_scale() -> Scenario {
    let mut net = network(&["A", "B", "C"]);
    net.insert(
        0,
        0,
        ElementState::ingredient("flour", Rational::integer(500), "g"),
    )
    .unwrap();
    net.insert(
        0,
        1,
        ElementState::ingredient("sugar", Rational::integer(200), "g"),
    )
    .unwrap();
    net.insert(
        0,
        2,
        ElementState::ingredient("butter", Rational::integer(250), "g"),
    )
    .unwrap();
    net.drain();

    let scale = MutationFn::new(
        Predicate::All,
        PriorGate::Any,
        Instruction::Apply(amount_mult(Rational::ratio(3, 2)).unwrap()),
    );
    net.foreach(0, scale);
    net.insert(
        1,
        3,
        ElementState::ingredient("eggs", Rational::integer(3), "pcs"),
    )
    .unwrap();
    let snap = settle(&mut net);
    let log = net.log().to_vec();

    let amounts: Vec<(&str, &str)> = snap
        .0
        .iter()
        .map(|e| match &e.value {
            ValueSnapshot::Ingredient { name, amount, .. } => (name.as_str(), amount.as_str()),
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(
        amounts,
        [
            ("flour", "750"),
            ("sugar", "300"),
            ("butter", "375"),
            ("eggs", "9/2"),
        ],
        "every amount, including the concurrent one, is scaled by exactly 3/2"
    );

    let rendering = render_recipe(&snap);
    Scenario {
        name: "recipe-scale",
        blurb: "Multiply every ingredient by 3/2 while another user adds eggs to the recipe.",
        log,
        snapshots: vec![("converged".to_string(), snap)],
        rendering,
        notes: vec![
            "The concurrently added eggs are scaled too: 3 pcs becomes exactly 9/2.".to_string(),
            "Amounts are exact rationals; no floating-point drift.".to_string(),
        ],
    }
}

/// Rotating a group of slide objects while another user moves one of them.
/// Objects store their position as a list of translation vectors (the
/// rendered position is the sum), so the group rotation is a nested
/// for-each multiplying each vector by the rotation matrix. The buffered
/// replay rotates the concurrent translation as well, so the moved object
/// stays aligned within the rotated group.
pub fn slide_rotate() -> Scenario {
    // 30 degrees clockwise, with cos 30 approximated by 433/500.
    let cos30 = Rational::ratio(433, 500);
    let sin30 = Rational::ratio(1, 2);
    let rot = Mat2::rotation(cos30.clone(), sin30.clone());

    let mut net = network(&["A", "B", "C"]);
    net.insert(0, 0, ElementState::object()).unwrap();
    net.apply(
        0,
        0,
        ElemOp::InnerInsert {
            index: 0,
            init: Box::new(ElementState::vec2(
                Rational::integer(4),
                Rational::integer(0),
            )),
        },
    )
    .unwrap();
    net.insert(0, 1, ElementState::object()).unwrap();
    net.apply(
        0,
        1,
        ElemOp::InnerInsert {
            index: 0,
            init: Box::new(ElementState::vec2(
                Rational::integer(1),
                Rational::integer(2),
            )),
        },
    )
    .unwrap();
    net.drain();

    // The first object is selected for the group rotation; positions act
    // as identifiers here, so the selection is an id-set predicate.
    let selected = pos_of(&net, 0, 0);
    let rotate_group = MutationFn::new(
        Predicate::IdSet([selected].into_iter().collect()),
        PriorGate::Any,
        Instruction::Apply(nested_foreach(MutationFn::new(
            Predicate::All,
            PriorGate::Any,
            Instruction::Apply(vec2_mult(rot.clone())),
        ))),
    );
    net.foreach(0, rotate_group);
    // Concurrently, another user shifts the selected object by (1, 1):
    // one more translation vector appended to its list.
    net.apply(
        1,
        0,
        ElemOp::InnerInsert {
            index: 1,
            init: Box::new(ElementState::vec2(Rational::one(), Rational::one())),
        },
    )
    .unwrap();
    let snap = settle(&mut net);
    let log = net.log().to_vec();

    // The converged position must equal rotating the fully translated
    // point: R(p0 + t), computed here independently.
    let expected = rot.mul_vec(
        &Rational::integer(4).add(&Rational::one()),
        &Rational::integer(0).add(&Rational::one()),
    );
    let inner = match &net.replica(0).list().nth(0).unwrap().state {
        ElementState::Object(inner) => inner,
        _ => unreachable!(),
    };
    let mut sum = (Rational::zero(), Rational::zero());
    for elem in inner.elements() {
        if let ElementState::Vec2(v) = &elem.state {
            sum = (sum.0.add(&v.x), sum.1.add(&v.y));
        }
    }
    assert_eq!(
        sum, expected,
        "rotated vectors must sum to the rotation of the translated point"
    );
    // The unselected object is untouched.
    match &snap.0[1].value {
        ValueSnapshot::Object(inner) => match &inner.0[0].value {
            ValueSnapshot::Vec2 { x, y } => assert_eq!((x.as_str(), y.as_str()), ("1", "2")),
            other => panic!("unexpected inner value {other:?}"),
        },
        other => panic!("unexpected outer value {other:?}"),
    }

    let rendering = render_slide(&snap);
    Scenario {
        name: "slide-rotate",
        blurb: "Rotate a selected slide object 30 degrees while another user shifts it by (1, 1).",
        log,
        snapshots: vec![("converged".to_string(), snap)],
        rendering,
        notes: vec![
            "The concurrent translation is rotated too: the object lands at R(p0 + t) exactly."
                .to_string(),
            "The unselected object keeps its original translation.".to_string(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_is_reachable_by_name() {
        for name in NAMES {
            let s = by_name(name).unwrap();
            assert_eq!(s.name, name);
            assert!(!s.log.is_empty());
            assert!(!s.snapshots.is_empty());
            assert!(!s.rendering.is_empty());
        }
        assert!(by_name("no-such-walkthrough").is_none());
    }

    #[test]
    fn bold_walkthrough_keeps_one_solid_run() {
        let s = rich_text_bold();
        assert!(s.rendering.contains("**hexllo**"));
        assert!(s.rendering.contains("**he**x**llo**"));
    }

    #[test]
    fn delete_walkthrough_spares_the_concurrent_letter() {
        let s = rich_text_delete();
        let (_, snap) = &s.snapshots[0];
        assert_eq!(snap.0.len(), 1);
    }

    #[test]
    fn recipe_walkthrough_scales_exactly() {
        let s = recipe_scale();
        assert!(s.rendering.contains("- 9/2 pcs eggs"));
    }

    #[test]
    fn slide_walkthrough_rotates_the_concurrent_translation() {
        let s = slide_rotate();
        let (_, snap) = &s.snapshots[0];
        match &snap.0[0].value {
            ValueSnapshot::Object(inner) => assert_eq!(inner.0.len(), 2),
            other => panic!("unexpected value {other:?}"),
        }
    }
}
