use std::collections::HashSet;

use crate::grammar::{Lang, Pos, Slot, Template, ToyGrammar};

use super::graph::{Modality, NodeKind, SceneGraph};
use super::SceneGraphError;

/// Result of parsing one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub graph: SceneGraph,
    pub lang: Lang,
    pub template: String,
    /// Words that matched the template but map to no graph node.
    pub unmapped: Vec<String>,
}

/// Deterministic language scene graph for a sentence of the toy grammar.
pub fn parse_toy_lsg(tokens: &[String], grammar: &ToyGrammar) -> Result<SceneGraph, SceneGraphError> {
    parse_detailed(tokens, grammar).map(|p| p.graph)
}

/// Like [`parse_toy_lsg`] but also reports the template, language and
/// unmapped words. Templates are tried in grammar order, in both languages.
pub fn parse_detailed(tokens: &[String], grammar: &ToyGrammar) -> Result<ParsedSentence, SceneGraphError> {
    let mut furthest = 0usize;
    for lang in [Lang::Source, Lang::Target] {
        for t in &grammar.templates {
            match match_template(tokens, t, grammar, lang) {
                Ok(bound) => return build(tokens, t, lang, &bound),
                Err(pos) => furthest = furthest.max(pos),
            }
        }
    }
    Err(SceneGraphError::Parse {
        position: furthest,
        token: tokens
            .get(furthest)
            .cloned()
            .unwrap_or_else(|| "<end of sentence>".to_string()),
    })
}

struct Bound {
    // Token position of each template slot (noun position for NP slots).
    slot_pos: Vec<usize>,
    // (noun position, adjective position) per noun phrase.
    nps: Vec<(usize, Option<usize>)>,
}

// On failure returns the position of the first token that could not be matched.
fn match_template(tokens: &[String], t: &Template, g: &ToyGrammar, lang: Lang) -> Result<Bound, usize> {
    let mut p = 0;
    let mut slot_pos = Vec::with_capacity(t.slots.len());
    let mut nps = Vec::new();
    let is = |p: usize, pos: Pos| tokens.get(p).and_then(|w| g.pos(w, lang)) == Some(pos);
    for slot in &t.slots {
        match slot {
            Slot::Np => {
                let adj = if is(p, Pos::Adj) {
                    p += 1;
                    Some(p - 1)
                } else {
                    None
                };
                if !is(p, Pos::Noun) {
                    return Err(p);
                }
                nps.push((p, adj));
                slot_pos.push(p);
                p += 1;
            }
            Slot::Word(pos) => {
                if !is(p, *pos) {
                    return Err(p);
                }
                slot_pos.push(p);
                p += 1;
            }
        }
    }
    if p != tokens.len() {
        return Err(p);
    }
    Ok(Bound { slot_pos, nps })
}

fn build(tokens: &[String], t: &Template, lang: Lang, b: &Bound) -> Result<ParsedSentence, SceneGraphError> {
    let mut g = SceneGraph::new(Modality::Language);
    let mut objects = Vec::with_capacity(b.nps.len());
    for &(noun, adj) in &b.nps {
        let o = g.add_node(NodeKind::Object, tokens[noun].clone());
        if let Some(a) = adj {
            g.add_attribute(o, tokens[a].clone());
        }
        objects.push(o);
    }
    let mut used = HashSet::new();
    let mut seen = HashSet::new();
    for r in &t.relations {
        let pos = b.slot_pos[r.label_slot];
        let key = (r.subject, r.object, tokens[pos].clone());
        if !seen.insert(key) {
            return Err(SceneGraphError::Parse {
                position: pos,
                token: tokens[pos].clone(),
            });
        }
        g.add_relation(objects[r.subject], tokens[pos].clone(), objects[r.object]);
        used.insert(r.label_slot);
    }
    let unmapped = t
        .slots
        .iter()
        .enumerate()
        .filter(|(i, s)| matches!(s, Slot::Word(Pos::TransVerb | Pos::IntransVerb | Pos::Prep)) && !used.contains(i))
        .map(|(i, _)| tokens[b.slot_pos[i]].clone())
        .collect();
    Ok(ParsedSentence {
        graph: g,
        lang,
        template: t.name.clone(),
        unmapped,
    })
}
