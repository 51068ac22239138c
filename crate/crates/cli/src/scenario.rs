//! Scenario files: simulator parameters, genesis parties and a script of
//! demo actions, all in one TOML document.

use std::collections::{BTreeMap, BTreeSet};

use fairmarket::actors::{Behavior, FetchStrategy};
use fairmarket::amount::Amount;
use fairmarket::codec::CodingParams;
use fairmarket::ledger::Role;
use fairmarket::netsim::SimConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Base configuration for `simulate` and `sweep`.
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub parties: Vec<PartySpec>,
    #[serde(default)]
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    pub id: String,
    pub role: Role,
    #[serde(default)]
    pub balance: Amount,
    /// Facilitators only.
    #[serde(default)]
    pub behavior: Option<Behavior>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Publish {
        publisher: String,
        content: String,
        /// Random bytes derived from the seed and the content label.
        #[serde(default)]
        size: Option<u64>,
        #[serde(default)]
        text: Option<String>,
        coding: CodingParams,
        price: Amount,
        payout: Amount,
        /// Defaults to the first `n` facilitators in party order.
        #[serde(default)]
        facilitators: Option<Vec<String>>,
        /// Chunk indices to corrupt before upload.
        #[serde(default)]
        corrupt: Vec<usize>,
        #[serde(default)]
        expect: Option<String>,
    },
    Buy {
        client: String,
        content: String,
        #[serde(default)]
        strategy: FetchStrategy,
        #[serde(default)]
        expect: Option<String>,
    },
    Censor {
        auditor: String,
        content: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Uncensor {
        auditor: String,
        content: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Restrict {
        auditor: String,
        content: String,
        client: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Unrestrict {
        auditor: String,
        content: String,
        client: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Complaint {
        facilitator: String,
        content: String,
        #[serde(default)]
        expect: Option<String>,
    },
    Fault {
        facilitator: String,
        behavior: Behavior,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Publish { .. } => "publish",
            Action::Buy { .. } => "buy",
            Action::Censor { .. } => "censor",
            Action::Uncensor { .. } => "uncensor",
            Action::Restrict { .. } => "restrict",
            Action::Unrestrict { .. } => "unrestrict",
            Action::Complaint { .. } => "complaint",
            Action::Fault { .. } => "fault",
        }
    }
}

pub fn parse(text: &str) -> Result<Scenario, String> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| e.to_string())?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn roles(&self) -> BTreeMap<&str, Role> {
        self.parties
            .iter()
            .map(|p| (p.id.as_str(), p.role))
            .collect()
    }

    pub fn facilitators(&self) -> Vec<&str> {
        self.parties
            .iter()
            .filter(|p| p.role == Role::Facilitator)
            .map(|p| p.id.as_str())
            .collect()
    }

    /// Everything that can be checked without running the script.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(sim) = &self.sim {
            sim.validate().map_err(|e| e.to_string())?;
        }
        let mut seen = BTreeSet::new();
        for p in &self.parties {
            if !seen.insert(p.id.as_str()) {
                return Err(format!("party {:?} declared twice", p.id));
            }
            if p.balance < Amount::ZERO {
                return Err(format!("party {:?} has a negative balance", p.id));
            }
            if p.behavior.is_some() && p.role != Role::Facilitator {
                return Err(format!(
                    "party {:?} has a behavior but is not a facilitator",
                    p.id
                ));
            }
        }
        let roles = self.roles();
        let need = |id: &str, role: Role, i: usize| -> Result<(), String> {
            match roles.get(id) {
                Some(r) if *r == role => Ok(()),
                Some(r) => Err(format!("action {i}: {id:?} is a {r}, expected a {role}")),
                None => Err(format!("action {i}: unknown party {id:?}")),
            }
        };
        let mut contents = BTreeSet::new();
        let known = |contents: &BTreeSet<&str>, c: &str, i: usize| {
            if contents.contains(c) {
                Ok(())
            } else {
                Err(format!(
                    "action {i}: content {c:?} is not published by an earlier action"
                ))
            }
        };
        for (i, action) in self.actions.iter().enumerate() {
            match action {
                Action::Publish {
                    publisher,
                    content,
                    size,
                    text,
                    coding,
                    facilitators,
                    corrupt,
                    ..
                } => {
                    need(publisher, Role::Publisher, i)?;
                    match (size, text) {
                        (Some(0), None) => {
                            return Err(format!("action {i}: size must be positive"))
                        }
                        (Some(_), None) => {}
                        (None, Some(t)) if !t.is_empty() => {}
                        _ => {
                            return Err(format!(
                                "action {i}: give exactly one of a positive size or non-empty text"
                            ))
                        }
                    }
                    let hosts: Vec<&str> = match facilitators {
                        Some(list) => list.iter().map(String::as_str).collect(),
                        None => self.facilitators().into_iter().take(coding.n()).collect(),
                    };
                    if hosts.len() != coding.n() {
                        return Err(format!(
                            "action {i}: coding {coding} needs {} facilitators, have {}",
                            coding.n(),
                            hosts.len()
                        ));
                    }
                    for h in &hosts {
                        need(h, Role::Facilitator, i)?;
                    }
                    if let Some(&c) = corrupt.iter().find(|&&c| c >= coding.n()) {
                        return Err(format!("action {i}: corrupt index {c} out of range"));
                    }
                    if !contents.insert(content.as_str()) {
                        return Err(format!("action {i}: content {content:?} published twice"));
                    }
                }
                Action::Buy {
                    client, content, ..
                } => {
                    need(client, Role::Client, i)?;
                    known(&contents, content, i)?;
                }
                Action::Censor {
                    auditor, content, ..
                }
                | Action::Uncensor {
                    auditor, content, ..
                } => {
                    need(auditor, Role::Auditor, i)?;
                    known(&contents, content, i)?;
                }
                Action::Restrict {
                    auditor,
                    content,
                    client,
                    ..
                }
                | Action::Unrestrict {
                    auditor,
                    content,
                    client,
                    ..
                } => {
                    need(auditor, Role::Auditor, i)?;
                    need(client, Role::Client, i)?;
                    known(&contents, content, i)?;
                }
                Action::Complaint {
                    facilitator,
                    content,
                    ..
                } => {
                    need(facilitator, Role::Facilitator, i)?;
                    known(&contents, content, i)?;
                }
                Action::Fault { facilitator, .. } => need(facilitator, Role::Facilitator, i)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        [[parties]]
        id = "pub"
        role = "publisher"
        [[parties]]
        id = "alice"
        role = "client"
        balance = "10"
        [[parties]]
        id = "f0"
        role = "facilitator"
        [[parties]]
        id = "f1"
        role = "facilitator"
        behavior = "crash"
    "#;

    fn with(actions: &str) -> Result<Scenario, String> {
        parse(&format!("{BASE}\n{actions}"))
    }

    #[test]
    fn parses_a_script() {
        let s = with(
            r#"
            [[actions]]
            action = "publish"
            publisher = "pub"
            content = "song"
            text = "hello"
            coding = { k = 1, n = 2 }
            price = "2"
            payout = "1"
            [[actions]]
            action = "buy"
            client = "alice"
            content = "song"
            strategy = "aggressive"
            "#,
        )
        .unwrap();
        assert_eq!(s.seed, Some(3));
        assert_eq!(s.actions.len(), 2);
        assert_eq!(s.actions[1].name(), "buy");
        assert_eq!(s.parties[1].balance, Amount::whole(10));
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(parse("seeed = 1").is_err());
        assert!(with("[[actions]]\naction = \"fault\"\nfacilitator = \"f0\"\nbehavior = \"crash\"\ncolour = 1").is_err());
        assert!(with("[[actions]]\naction = \"teleport\"").is_err());
        assert!(parse("[sim]\nn_facilitator = 3").is_err());
    }

    #[test]
    fn rejects_bad_references() {
        let buy_unpublished = "[[actions]]\naction = \"buy\"\nclient = \"alice\"\ncontent = \"x\"";
        assert!(with(buy_unpublished).unwrap_err().contains("not published"));
        let wrong_role =
            "[[actions]]\naction = \"fault\"\nfacilitator = \"alice\"\nbehavior = \"crash\"";
        assert!(with(wrong_role)
            .unwrap_err()
            .contains("expected a facilitator"));
        let too_few = r#"
            [[actions]]
            action = "publish"
            publisher = "pub"
            content = "song"
            size = 10
            coding = { k = 2, n = 3 }
            price = "3"
            payout = "1"
        "#;
        assert!(with(too_few).unwrap_err().contains("needs 3 facilitators"));
        let both = r#"
            [[actions]]
            action = "publish"
            publisher = "pub"
            content = "song"
            size = 10
            text = "x"
            coding = { k = 1, n = 2 }
            price = "2"
            payout = "1"
        "#;
        assert!(with(both).unwrap_err().contains("exactly one"));
    }

    #[test]
    fn rejects_duplicate_parties_and_misplaced_behavior() {
        let dup = "[[parties]]\nid = \"pub\"\nrole = \"client\"";
        assert!(with(dup).unwrap_err().contains("twice"));
        let misplaced = "[[parties]]\nid = \"bob\"\nrole = \"client\"\nbehavior = \"garbage\"";
        assert!(with(misplaced).unwrap_err().contains("not a facilitator"));
    }

    #[test]
    fn sim_section_is_validated() {
        assert!(parse("[sim]\nn_facilitators = 6\ncoding = { k = 4, n = 6 }").is_ok());
        assert!(parse("[sim]\nn_facilitators = 3\ncoding = { k = 4, n = 6 }").is_err());
    }
}
