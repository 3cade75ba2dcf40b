use serde::{Deserialize, Serialize};

use crate::aggregation::{AggMsg, AggregateContainer, MisbehaviorProof};
use crate::crypto::{AuthToken, Canonical, Encoder, KeyPair, PublicKey, SignatureBytes, VerifyCache};
use crate::lottery::{Claim, RejectReason};
use crate::overlay::{Contact, Kid, NodeId};

/// Address of the authority; players use `1..`.
pub const AUTHORITY: NodeId = NodeId(0);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Buy,
    Sold { s: u64, token: AuthToken, bootstrap: Option<Contact> },
    Refused { reason: String },
    FindNode { lookup: u32, target: Kid },
    Nodes { lookup: u32, contacts: Vec<Contact> },
    Agg { msg: AggMsg },
    RootQuery,
    RootReply { root: Option<AggregateContainer> },
    Proof { proof: MisbehaviorProof },
    Claim { claim: Box<Claim> },
    ClaimResult { accepted: bool, reason: Option<RejectReason> },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Buy => "buy",
            Payload::Sold { .. } => "sold",
            Payload::Refused { .. } => "refused",
            Payload::FindNode { .. } => "find_node",
            Payload::Nodes { .. } => "nodes",
            Payload::Agg { msg } => match msg {
                AggMsg::Pull { .. } => "pull",
                AggMsg::PullReply { .. } => "pull_reply",
                AggMsg::SignRequest { .. } => "sign_request",
                AggMsg::SignReply { .. } => "sign_reply",
            },
            Payload::RootQuery => "root_query",
            Payload::RootReply { .. } => "root_reply",
            Payload::Proof { .. } => "proof",
            Payload::Claim { .. } => "claim",
            Payload::ClaimResult { .. } => "claim_result",
        }
    }
}

impl Canonical for Payload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Payload::Buy => {
                enc.u8(0);
            }
            Payload::Sold { s, token, bootstrap } => {
                enc.u8(1).u64(*s).nested(token);
                match bootstrap {
                    Some(c) => enc.nested(c),
                    None => enc.bytes(&[]),
                };
            }
            Payload::Refused { reason } => {
                enc.u8(2).bytes(reason.as_bytes());
            }
            Payload::FindNode { lookup, target } => {
                enc.u8(3).u32(*lookup).nested(target);
            }
            Payload::Nodes { lookup, contacts } => {
                enc.u8(4).u32(*lookup).list(contacts);
            }
            Payload::Agg { msg } => {
                enc.u8(5).nested(msg);
            }
            Payload::RootQuery => {
                enc.u8(6);
            }
            Payload::RootReply { root } => {
                enc.u8(7);
                match root {
                    Some(r) => enc.nested(r),
                    None => enc.bytes(&[]),
                };
            }
            Payload::Proof { proof } => {
                enc.u8(8).nested(proof);
            }
            Payload::Claim { claim } => {
                enc.u8(9).nested(claim.as_ref());
            }
            Payload::ClaimResult { accepted, reason } => {
                enc.u8(10).u8(*accepted as u8);
                enc.bytes(reason.as_ref().map(|r| r.to_string()).unwrap_or_default().as_bytes());
            }
        }
    }
}

/// Transport envelope: sender identity, payload, and the sender's signature
/// over both.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: NodeId,
    pub to: NodeId,
    pub pk: PublicKey,
    pub token: Option<AuthToken>,
    pub payload: Payload,
    pub sig: Option<SignatureBytes>,
}

fn signed_part(from: NodeId, to: NodeId, pk: &PublicKey, token: &Option<AuthToken>, payload: &Payload) -> Encoder {
    let mut enc = Encoder::tagged("envelope");
    enc.u32(from.0).u32(to.0).bytes(&pk.0);
    match token {
        Some(t) => enc.nested(t),
        None => enc.bytes(&[]),
    };
    enc.nested(payload);
    enc
}

impl Envelope {
    pub fn seal(
        keys: &KeyPair,
        from: NodeId,
        to: NodeId,
        token: Option<AuthToken>,
        payload: Payload,
        sign: bool,
    ) -> Self {
        let sig = sign.then(|| keys.sign(&signed_part(from, to, &keys.pk(), &token, &payload).finish()));
        Envelope { from, to, pk: keys.pk(), token, payload, sig }
    }

    /// True when the signature covers the envelope. Unsigned envelopes pass
    /// only when signing is disabled for the run.
    pub fn authentic(&self, require_sig: bool) -> bool {
        match &self.sig {
            Some(sig) => {
                let msg = signed_part(self.from, self.to, &self.pk, &self.token, &self.payload).finish();
                crate::crypto::verify(&self.pk, &msg, sig)
            }
            None => !require_sig,
        }
    }

    /// Kid of the sender when its token verifies.
    pub fn sender_kid(&self, authority: &PublicKey, bits: u16, cache: &mut VerifyCache) -> Option<Kid> {
        let token = self.token?;
        if !cache.verify_token(authority, &self.pk, &token) {
            return None;
        }
        crate::overlay::derive_kid(&token, bits).ok()
    }

    /// Bytes on the wire.
    pub fn wire_len(&self) -> usize {
        let mut enc = signed_part(self.from, self.to, &self.pk, &self.token, &self.payload);
        match &self.sig {
            Some(s) => enc.bytes(&s.0),
            None => enc.bytes(&[]),
        };
        enc.finish().len()
    }
}
