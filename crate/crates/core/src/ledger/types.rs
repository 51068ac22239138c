use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::canonical;
use crate::codec::CodingParams;
use crate::crypto::{HashList, KeyMap, Keypair, PartyId, PublicKey, SignedCall, Uri};

use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Publisher,
    Facilitator,
    Client,
    Auditor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Publisher => "publisher",
            Role::Facilitator => "facilitator",
            Role::Client => "client",
            Role::Auditor => "auditor",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisParty {
    pub id: PartyId,
    pub role: Role,
    pub public_key: PublicKey,
    pub balance: Amount,
}

/// Registered parties and opening balances. The only source of currency.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genesis {
    pub parties: Vec<GenesisParty>,
}

impl Genesis {
    pub fn add(
        &mut self,
        id: PartyId,
        role: Role,
        keypair: &Keypair,
        balance: Amount,
    ) -> &mut Self {
        self.parties.push(GenesisParty {
            id,
            role,
            public_key: keypair.public(),
            balance,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentStatus {
    Available,
    Unavailable,
    Censored,
}

impl fmt::Display for ContentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ContentStatus::Available => "available",
            ContentStatus::Unavailable => "unavailable",
            ContentStatus::Censored => "censored",
        };
        f.write_str(s)
    }
}

/// What a publisher submits; the ledger adds publisher, status and complaints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentListing {
    pub uri: Uri,
    pub name: String,
    pub price: Amount,
    pub payout_per_facilitator: Amount,
    pub coding: CodingParams,
    pub facilitator_ids: Vec<PartyId>,
    pub key_map: KeyMap,
    pub hash_list: HashList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentRecord {
    pub uri: Uri,
    pub name: String,
    pub price: Amount,
    pub payout_per_facilitator: Amount,
    pub coding: CodingParams,
    pub publisher_id: PartyId,
    pub facilitator_ids: Vec<PartyId>,
    pub key_map: KeyMap,
    pub hash_list: HashList,
    pub complaint_set: BTreeSet<PartyId>,
    pub censored: bool,
    pub denied_clients: BTreeSet<PartyId>,
    pub status: ContentStatus,
}

impl ContentRecord {
    /// Complaints beyond `n - k` mean fewer than `k` facilitators vouch for
    /// their chunk.
    pub fn complaint_threshold_exceeded(&self) -> bool {
        self.complaint_set.len() > self.coding.n() - self.coding.k()
    }

    pub(crate) fn refresh_status(&mut self) {
        self.status = if self.censored {
            ContentStatus::Censored
        } else if self.complaint_threshold_exceeded() {
            ContentStatus::Unavailable
        } else {
            ContentStatus::Available
        };
    }

    pub fn publisher_payout(&self) -> Amount {
        let facilitators = self
            .payout_per_facilitator
            .checked_mul(self.facilitator_ids.len() as u64)
            .expect("validated at listing");
        self.price - facilitators
    }
}

/// Client-chosen purchase identifier: 16 random bytes as lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReqId(String);

impl ReqId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bytes: [u8; 16] = rng.gen();
        ReqId(hex::encode(bytes))
    }

    pub fn parse(s: &str) -> Result<Self, LedgerError> {
        let valid = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if valid {
            Ok(ReqId(s.to_string()))
        } else {
            Err(LedgerError::MalformedCall(format!(
                "request id {s:?} is not 32 lowercase hex digits"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn validate(&self) -> Result<(), LedgerError> {
        Self::parse(&self.0).map(|_| ())
    }
}

impl fmt::Display for ReqId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentRecord {
    pub req_id: ReqId,
    pub uri: Uri,
    pub payer_id: PartyId,
    pub amount: Amount,
    pub payout_per_facilitator: Amount,
    pub publisher_payout: Amount,
    /// Opaque; carried through untouched.
    pub link: Option<String>,
    pub height: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentQuery {
    pub name_contains: Option<String>,
    pub uri: Option<Uri>,
}

impl ContentQuery {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn by_uri(uri: Uri) -> Self {
        Self {
            uri: Some(uri),
            ..Self::default()
        }
    }

    pub fn by_name(fragment: impl Into<String>) -> Self {
        Self {
            name_contains: Some(fragment.into()),
            ..Self::default()
        }
    }

    pub(crate) fn matches(&self, record: &ContentRecord) -> bool {
        self.uri.map_or(true, |u| u == record.uri)
            && self
                .name_contains
                .as_ref()
                .map_or(true, |frag| record.name.contains(frag.as_str()))
    }
}

/// Public view of a listing. Key material is never part of search results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContentSummary {
    pub uri: Uri,
    pub name: String,
    pub price: Amount,
    pub status: ContentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UriArgs {
    uri: Uri,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaymentArgs {
    uri: Uri,
    req_id: ReqId,
    link: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientArgs {
    uri: Uri,
    client: PartyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeysArgs {
    uri: Uri,
    req_id: ReqId,
}

/// Typed body of a [`SignedCall`]. The operation name travels in the
/// envelope and the arguments as canonical JSON in the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerRequest {
    AddContentByPub(ContentListing),
    Complaint {
        uri: Uri,
    },
    PayForContent {
        uri: Uri,
        req_id: ReqId,
        link: Option<String>,
    },
    Censor {
        uri: Uri,
    },
    Uncensor {
        uri: Uri,
    },
    RestrictClient {
        uri: Uri,
        client: PartyId,
    },
    UnrestrictClient {
        uri: Uri,
        client: PartyId,
    },
    GetKeys {
        uri: Uri,
        req_id: ReqId,
    },
}

pub mod op {
    pub const ADD_CONTENT_BY_PUB: &str = "AddContentByPub";
    pub const COMPLAINT: &str = "Complaint";
    pub const PAY_FOR_CONTENT: &str = "PayForContent";
    pub const CENSOR: &str = "Censor";
    pub const UNCENSOR: &str = "Uncensor";
    pub const RESTRICT_CLIENT: &str = "RestrictClient";
    pub const UNRESTRICT_CLIENT: &str = "UnrestrictClient";
    pub const GET_KEYS: &str = "GetKeys";
}

fn parse_args<T: for<'de> Deserialize<'de>>(payload: &[u8]) -> Result<T, LedgerError> {
    serde_json::from_slice(payload).map_err(|e| LedgerError::MalformedCall(e.to_string()))
}

impl LedgerRequest {
    pub fn operation(&self) -> &'static str {
        match self {
            LedgerRequest::AddContentByPub(_) => op::ADD_CONTENT_BY_PUB,
            LedgerRequest::Complaint { .. } => op::COMPLAINT,
            LedgerRequest::PayForContent { .. } => op::PAY_FOR_CONTENT,
            LedgerRequest::Censor { .. } => op::CENSOR,
            LedgerRequest::Uncensor { .. } => op::UNCENSOR,
            LedgerRequest::RestrictClient { .. } => op::RESTRICT_CLIENT,
            LedgerRequest::UnrestrictClient { .. } => op::UNRESTRICT_CLIENT,
            LedgerRequest::GetKeys { .. } => op::GET_KEYS,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            LedgerRequest::AddContentByPub(listing) => canonical::to_vec(listing),
            LedgerRequest::Complaint { uri }
            | LedgerRequest::Censor { uri }
            | LedgerRequest::Uncensor { uri } => canonical::to_vec(&UriArgs { uri: *uri }),
            LedgerRequest::PayForContent { uri, req_id, link } => canonical::to_vec(&PaymentArgs {
                uri: *uri,
                req_id: req_id.clone(),
                link: link.clone(),
            }),
            LedgerRequest::RestrictClient { uri, client }
            | LedgerRequest::UnrestrictClient { uri, client } => canonical::to_vec(&ClientArgs {
                uri: *uri,
                client: client.clone(),
            }),
            LedgerRequest::GetKeys { uri, req_id } => canonical::to_vec(&KeysArgs {
                uri: *uri,
                req_id: req_id.clone(),
            }),
        }
    }

    pub fn sign(&self, caller: &PartyId, keypair: &Keypair) -> SignedCall {
        SignedCall::sign(caller.clone(), self.operation(), self.payload(), keypair)
    }

    pub fn decode(operation: &str, payload: &[u8]) -> Result<Self, LedgerError> {
        let request = match operation {
            op::ADD_CONTENT_BY_PUB => LedgerRequest::AddContentByPub(parse_args(payload)?),
            op::COMPLAINT => LedgerRequest::Complaint {
                uri: parse_args::<UriArgs>(payload)?.uri,
            },
            op::PAY_FOR_CONTENT => {
                let a: PaymentArgs = parse_args(payload)?;
                a.req_id.validate()?;
                LedgerRequest::PayForContent {
                    uri: a.uri,
                    req_id: a.req_id,
                    link: a.link,
                }
            }
            op::CENSOR => LedgerRequest::Censor {
                uri: parse_args::<UriArgs>(payload)?.uri,
            },
            op::UNCENSOR => LedgerRequest::Uncensor {
                uri: parse_args::<UriArgs>(payload)?.uri,
            },
            op::RESTRICT_CLIENT => {
                let a: ClientArgs = parse_args(payload)?;
                LedgerRequest::RestrictClient {
                    uri: a.uri,
                    client: a.client,
                }
            }
            op::UNRESTRICT_CLIENT => {
                let a: ClientArgs = parse_args(payload)?;
                LedgerRequest::UnrestrictClient {
                    uri: a.uri,
                    client: a.client,
                }
            }
            op::GET_KEYS => {
                let a: KeysArgs = parse_args(payload)?;
                a.req_id.validate()?;
                LedgerRequest::GetKeys {
                    uri: a.uri,
                    req_id: a.req_id,
                }
            }
            other => return Err(LedgerError::UnknownOperation(other.to_string())),
        };
        Ok(request)
    }

    pub fn is_mutating(&self) -> bool {
        !matches!(self, LedgerRequest::GetKeys { .. })
    }
}

/// Result of a successful mutating call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Receipt {
    Listed,
    Complaint {
        status: ContentStatus,
        complaints: usize,
    },
    Paid(PaymentRecord),
    Censored,
    Uncensored,
    ClientRestricted,
    ClientUnrestricted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyEntry {
    pub role: Role,
    pub public_key: PublicKey,
}

/// Everything the contract stores. Serialized canonically for snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerState {
    pub height: u64,
    pub parties: BTreeMap<PartyId, PartyEntry>,
    pub balances: BTreeMap<PartyId, Amount>,
    pub contents: BTreeMap<Uri, ContentRecord>,
    pub payments: BTreeMap<ReqId, PaymentRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_uri;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn req_id_format() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = ReqId::random(&mut rng);
        assert_eq!(id.as_str().len(), 32);
        assert_eq!(ReqId::parse(id.as_str()).unwrap(), id);
        assert!(ReqId::parse("short").is_err());
        assert!(ReqId::parse(&"A".repeat(32)).is_err());
    }

    #[test]
    fn requests_round_trip_through_envelope() {
        let uri = generate_uri(b"f").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let requests = vec![
            LedgerRequest::Complaint { uri },
            LedgerRequest::PayForContent {
                uri,
                req_id: ReqId::random(&mut rng),
                link: Some("opaque".to_string()),
            },
            LedgerRequest::Censor { uri },
            LedgerRequest::Uncensor { uri },
            LedgerRequest::RestrictClient {
                uri,
                client: PartyId::new("c"),
            },
            LedgerRequest::UnrestrictClient {
                uri,
                client: PartyId::new("c"),
            },
            LedgerRequest::GetKeys {
                uri,
                req_id: ReqId::random(&mut rng),
            },
        ];
        for r in requests {
            assert_eq!(
                LedgerRequest::decode(r.operation(), &r.payload()).unwrap(),
                r
            );
        }
        assert!(matches!(
            LedgerRequest::decode("Mint", b"{}"),
            Err(LedgerError::UnknownOperation(_))
        ));
        assert!(matches!(
            LedgerRequest::decode(op::COMPLAINT, br#"{"uri":"00","extra":1}"#),
            Err(LedgerError::MalformedCall(_))
        ));
    }
}
