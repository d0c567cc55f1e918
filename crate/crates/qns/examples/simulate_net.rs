//! The generic net engine on two tiny textbook nets, without any SQL:
//! a plain weighted transition, then arcs that select tokens by color.
//!
//! ```sh
//! cargo run --example simulate_net
//! ```

use std::collections::BTreeMap;

use qns::cpn::{
    AdmitAll, ColorData, ColorFilter, ColorProducer, ColoredToken, EngineEvent, InputArc, Marking,
    Net, OutputArc, Place, Transition, Trigger,
};

fn plain(ts: i64) -> ColoredToken {
    ColoredToken::new(ColorData::plain(ts))
}

fn colored(ts: i64, key: &str, value: &str) -> ColoredToken {
    let attrs = [(key.to_string(), value.to_string())].into_iter().collect();
    ColoredToken::new(ColorData::new(attrs, ts))
}

fn show(net: &Net, marking: &Marking) -> String {
    net.places()
        .iter()
        .enumerate()
        .map(|(pid, place)| format!("{}:{}", place.name, marking.count(pid)))
        .collect::<Vec<_>>()
        .join("  ")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // ── A weighted transition: t1 needs two tokens from p1 and one from p2.
    let net = Net::new(
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
    )?;

    let mut marking = Marking::empty(&net);
    for _ in 0..2 {
        marking.add_token(0, plain(0));
        marking.add_token(1, plain(0));
    }
    println!("weighted net, before: {}", show(&net, &marking));

    let go = EngineEvent { id: 1, kind: "go".into(), attributes: BTreeMap::new() };
    let outcome = net.step(&mut marking, &go, 1, &AdmitAll)?;
    println!(
        "fired {:?}; consumed {}, produced {}",
        outcome.fired.iter().map(|f| f.transition.as_str()).collect::<Vec<_>>(),
        outcome.fired[0].consumed.len(),
        outcome.fired[0].produced.len(),
    );
    println!("weighted net, after:  {}\n", show(&net, &marking));

    // ── Colored arcs: consume two black tokens and one red, produce one
    // black. The filters pick tokens by attribute, not by position.
    let net = Net::new(
        vec![Place::new("pool"), Place::new("out")],
        vec![Transition {
            name: "mix".into(),
            trigger: Trigger::Event("go".into()),
            conditions: vec![],
            inputs: vec![
                InputArc {
                    place: "pool".into(),
                    weight: 2,
                    filter: ColorFilter::AttrEquals { key: "color".into(), value: "black".into() },
                },
                InputArc {
                    place: "pool".into(),
                    weight: 1,
                    filter: ColorFilter::AttrEquals { key: "color".into(), value: "red".into() },
                },
            ],
            outputs: vec![OutputArc {
                place: "out".into(),
                weight: 1,
                producer: ColorProducer::Const(
                    [("color".to_string(), "black".to_string())].into_iter().collect(),
                ),
            }],
        }],
    )?;

    let mut marking = Marking::empty(&net);
    marking.add_token(0, colored(0, "color", "black"));
    marking.add_token(0, colored(0, "color", "black"));
    marking.add_token(0, colored(0, "color", "red"));
    marking.add_token(0, colored(0, "color", "red"));
    println!("colored net, before:  {}", show(&net, &marking));

    net.step(&mut marking, &go, 1, &AdmitAll)?;
    println!("colored net, after:   {}", show(&net, &marking));
    let leftover = &marking.tokens(0)[0];
    println!(
        "pool kept one {} token; out received one {} token",
        leftover.color.attributes["color"],
        marking.tokens(1)[0].color.attributes["color"],
    );

    // ── Timeouts and merging: tokens on a timed place expire, identical
    // tokens collapse into one that remembers the newest timestamp.
    // `src` holds one eternal token and the transition returns it on each
    // firing (a self-loop), so `note` can fire for every ping.
    let net = Net::new(
        vec![Place::new("src").with_initial_tokens(1), Place::new("seen").with_timeout(120)],
        vec![Transition {
            name: "note".into(),
            trigger: Trigger::Event("ping".into()),
            conditions: vec![],
            inputs: vec![InputArc { place: "src".into(), weight: 1, filter: ColorFilter::Any }],
            outputs: vec![
                OutputArc { place: "src".into(), weight: 1, producer: ColorProducer::FromEvent },
                OutputArc { place: "seen".into(), weight: 1, producer: ColorProducer::FromEvent },
            ],
        }],
    )?;
    let mut marking = net.initial_marking();
    for now in [0, 60, 100] {
        let ping = EngineEvent {
            id: now as u64 + 10,
            kind: "ping".into(),
            attributes: [("host".to_string(), "db1".to_string())].into_iter().collect(),
        };
        net.step(&mut marking, &ping, now, &AdmitAll)?;
    }
    println!(
        "\ntimed place after three identical pings: {} token(s), newest ts {}",
        marking.count(1),
        marking.tokens(1)[0].color.timestamp,
    );
    let expired = marking.expire(&net, 221);
    println!("at t=221 (>100+120) the survivor expires: removed {}", expired.len());

    Ok(())
}
