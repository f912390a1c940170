//! Hypotheses about device state the agent cannot currently see.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tree::{clip, NodeId};

pub type HypothesisId = u32;

/// Per-line cap on rendered hypotheses.
pub const BELIEF_LINE_MAX: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    Active,
    Invalidated,
    Confirmed,
}

impl HypothesisStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HypothesisStatus::Active => "active",
            HypothesisStatus::Invalidated => "invalidated",
            HypothesisStatus::Confirmed => "confirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub subject: String,
    pub claim: String,
    pub established_at: NodeId,
    pub status: HypothesisStatus,
    pub last_checked: NodeId,
    /// Note to raise if this hypothesis is refuted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_note: Option<String>,
    /// Confirmed hypotheses drop out of the context after the next PC move.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub hidden: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftOp {
    #[default]
    Assert,
    Confirm,
}

/// A backend's proposed change to the hypothesis set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisDraft {
    #[serde(default)]
    pub op: DraftOp,
    pub subject: String,
    /// A confirm without a claim settles every claim on the subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_note: Option<String>,
}

impl HypothesisDraft {
    pub fn assert(subject: &str, claim: &str) -> Self {
        HypothesisDraft { op: DraftOp::Assert, subject: subject.into(), claim: Some(claim.into()), gap_note: None }
    }

    pub fn confirm(subject: &str) -> Self {
        HypothesisDraft { op: DraftOp::Confirm, subject: subject.into(), claim: None, gap_note: None }
    }

    pub fn with_gap_note(mut self, note: &str) -> Self {
        self.gap_note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Consistent,
    Contradicted,
    Unobservable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: HypothesisId,
    pub judgment: Judgment,
    #[serde(default)]
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contradiction {
    pub id: HypothesisId,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapFlag {
    pub hypotheses: Vec<HypothesisId>,
    pub evidence: String,
    pub note: String,
}

/// A recorded status change, for auditing monotone invalidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub id: HypothesisId,
    pub from: HypothesisStatus,
    pub to: HypothesisStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    pub hypotheses: Vec<Hypothesis>,
    pub gap: Option<GapFlag>,
    pub recovery_note: Option<String>,
    next_id: HypothesisId,
    #[serde(skip)]
    transitions: Vec<Transition>,
}

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn active(&self) -> impl Iterator<Item = &Hypothesis> {
        self.hypotheses.iter().filter(|h| h.status == HypothesisStatus::Active)
    }

    pub fn get(&self, id: HypothesisId) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.id == id)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    fn set_status(&mut self, idx: usize, to: HypothesisStatus) {
        let h = &mut self.hypotheses[idx];
        if h.status != to {
            self.transitions.push(Transition { id: h.id, from: h.status, to });
            h.status = to;
        }
    }

    /// Merges proposals made at `node`. Returns true if anything changed.
    pub fn propose(&mut self, drafts: &[HypothesisDraft], node: NodeId) -> bool {
        let mut changed = false;
        for d in drafts {
            match (d.op, &d.claim) {
                (DraftOp::Assert, Some(claim)) => {
                    let live = self.hypotheses.iter().position(|h| {
                        h.subject == d.subject && &h.claim == claim && h.status != HypothesisStatus::Invalidated
                    });
                    match live {
                        Some(i) => {
                            if self.hypotheses[i].status == HypothesisStatus::Confirmed {
                                self.set_status(i, HypothesisStatus::Active);
                                self.hypotheses[i].hidden = false;
                                changed = true;
                            }
                            if d.gap_note.is_some() && self.hypotheses[i].gap_note != d.gap_note {
                                self.hypotheses[i].gap_note = d.gap_note.clone();
                                changed = true;
                            }
                        }
                        None => {
                            self.next_id += 1;
                            self.hypotheses.push(Hypothesis {
                                id: self.next_id,
                                subject: d.subject.clone(),
                                claim: claim.clone(),
                                established_at: node,
                                status: HypothesisStatus::Active,
                                last_checked: node,
                                gap_note: d.gap_note.clone(),
                                hidden: false,
                            });
                            changed = true;
                        }
                    }
                }
                (DraftOp::Assert, None) => {}
                (DraftOp::Confirm, claim) => {
                    for i in 0..self.hypotheses.len() {
                        let h = &self.hypotheses[i];
                        let hit = h.status == HypothesisStatus::Active
                            && h.subject == d.subject
                            && claim.as_ref().is_none_or(|c| &h.claim == c);
                        if hit {
                            self.set_status(i, HypothesisStatus::Confirmed);
                            changed = true;
                        }
                    }
                }
            }
        }
        changed
    }

    /// Applies judgments on the active set; clears the previous gap.
    pub fn verify(&mut self, verdicts: &[Verdict], node: NodeId) -> Vec<Contradiction> {
        self.gap = None;
        let mut out = Vec::new();
        for v in verdicts {
            let Some(h) = self
                .hypotheses
                .iter_mut()
                .find(|h| h.id == v.id && h.status == HypothesisStatus::Active)
            else {
                continue;
            };
            h.last_checked = node;
            if v.judgment == Judgment::Contradicted {
                out.push(Contradiction { id: v.id, evidence: v.evidence.clone() });
            }
        }
        out
    }

    /// Invalidates contradicted hypotheses and everything sharing their
    /// subject. Returns whether recovery is needed.
    pub fn align(&mut self, contradictions: &[Contradiction]) -> bool {
        if contradictions.is_empty() {
            return false;
        }
        let mut subjects: Vec<String> = Vec::new();
        let mut note = None;
        for c in contradictions {
            if let Some(h) = self.get(c.id) {
                if !subjects.contains(&h.subject) {
                    subjects.push(h.subject.clone());
                }
                if note.is_none() {
                    note = Some(h.gap_note.clone().unwrap_or_else(|| format!("Context Lost: {}", h.subject)));
                }
            }
        }
        let mut hit = Vec::new();
        for i in 0..self.hypotheses.len() {
            let h = &self.hypotheses[i];
            if h.status != HypothesisStatus::Invalidated && subjects.contains(&h.subject) {
                hit.push(h.id);
                self.set_status(i, HypothesisStatus::Invalidated);
            }
        }
        if hit.is_empty() {
            return false;
        }
        let evidence = contradictions.iter().map(|c| c.evidence.as_str()).collect::<Vec<_>>().join("; ");
        let note = note.unwrap_or_default();
        self.recovery_note = Some(note.clone());
        self.gap = Some(GapFlag { hypotheses: hit, evidence: clip(&evidence, BELIEF_LINE_MAX), note });
        true
    }

    /// Called after every PC move.
    pub fn on_pc_move(&mut self) {
        for h in &mut self.hypotheses {
            if h.status == HypothesisStatus::Confirmed {
                h.hidden = true;
            }
        }
    }

    /// Finishes a recovery episode.
    pub fn clear_gap(&mut self) {
        self.gap = None;
        self.recovery_note = None;
    }

    /// `subject | claim | status` lines for the context, plus the gap note.
    pub fn render(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .hypotheses
            .iter()
            .filter(|h| match h.status {
                HypothesisStatus::Active => true,
                HypothesisStatus::Confirmed => !h.hidden,
                HypothesisStatus::Invalidated => false,
            })
            .map(|h| clip(&format!("{} | {} | {}", h.subject, h.claim, h.status.as_str()), BELIEF_LINE_MAX))
            .collect();
        if let Some(g) = &self.gap {
            out.push(clip(&format!("gap | {} | {}", g.note, g.evidence), BELIEF_LINE_MAX));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FORM: &str = "contact form for John Doe";

    fn form_state() -> BeliefState {
        let mut b = BeliefState::new();
        b.propose(
            &[
                HypothesisDraft::assert(FORM, "app Contacts in foreground").with_gap_note("Form Context Lost"),
                HypothesisDraft::assert(FORM, "field Name filled"),
            ],
            1,
        );
        b.propose(&[HypothesisDraft::assert("clipboard", "clipboard holds the phone number")], 2);
        b
    }

    #[test]
    fn duplicates_merge() {
        let mut b = form_state();
        let before = b.hypotheses.len();
        assert!(!b.propose(&[HypothesisDraft::assert(FORM, "field Name filled")], 5));
        assert_eq!(b.hypotheses.len(), before);
        assert_eq!(b.hypotheses[1].established_at, 1);
    }

    #[test]
    fn cascade_by_subject() {
        let mut b = form_state();
        let cs = b.verify(
            &[
                Verdict { id: 1, judgment: Judgment::Contradicted, evidence: "Home screen".into() },
                Verdict { id: 3, judgment: Judgment::Unobservable, evidence: String::new() },
            ],
            4,
        );
        assert_eq!(cs.len(), 1);
        assert!(b.align(&cs));
        assert_eq!(b.get(1).unwrap().status, HypothesisStatus::Invalidated);
        assert_eq!(b.get(2).unwrap().status, HypothesisStatus::Invalidated);
        assert_eq!(b.get(3).unwrap().status, HypothesisStatus::Active);
        assert_eq!(b.get(3).unwrap().last_checked, 4);
        assert_eq!(b.gap.as_ref().unwrap().note, "Form Context Lost");
        // Re-asserting creates a fresh hypothesis rather than reviving one.
        b.propose(&[HypothesisDraft::assert(FORM, "field Name filled")], 6);
        assert_eq!(b.get(2).unwrap().status, HypothesisStatus::Invalidated);
        assert!(b.transitions().iter().all(|t| t.from != HypothesisStatus::Invalidated));
    }

    #[test]
    fn empty_contradictions() {
        let mut b = form_state();
        let snapshot = b.clone();
        assert!(!b.align(&[]));
        assert_eq!(b, snapshot);
        assert!(BeliefState::new().verify(&[], 0).is_empty());
    }

    #[test]
    fn confirmed_hidden_after_move() {
        let mut b = form_state();
        b.propose(&[HypothesisDraft::confirm(FORM)], 3);
        assert_eq!(b.render().len(), 3);
        b.on_pc_move();
        let lines = b.render();
        assert_eq!(lines, ["clipboard | clipboard holds the phone number | active"]);
    }

    #[test]
    fn render_bounded() {
        let mut b = BeliefState::new();
        let long = "x".repeat(1000);
        b.propose(&[HypothesisDraft::assert(&long, &long)], 0);
        assert!(b.render()[0].chars().count() <= BELIEF_LINE_MAX);
    }
}
