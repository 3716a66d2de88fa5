//! Client and server state machines for the relay upload and the reverse-path
//! recommendation download. Nothing here knows about transport; callers feed
//! messages in and collect the `(destination, triplet)` pairs that come out.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::split::{
    reconstruct, split_vector, InteractionVector, ItemId, SplitConfig, SplitError, SplitShare,
    SplitVector,
};

/// Characters allowed in a virtual id: `0-9`, `A-Z`, `a-z`.
pub const VID_ALPHABET: &[u8; 62] =
    b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("invalid virtual id {0:?}")]
    InvalidVid(String),
    #[error("virtual id length must be at least 1")]
    EmptyVid,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("recommendation incomplete: {held} share(s) held")]
    IncompleteRecommendation { held: usize },
    #[error("wire: {0}")]
    Wire(String),
}

/// Random alphanumeric tag grouping one client's shares.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VirtualId(Arc<str>);

impl VirtualId {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        if text.is_empty() {
            return Err(ProtocolError::EmptyVid);
        }
        if !text.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(ProtocolError::InvalidVid(text.to_owned()));
        }
        Ok(Self(text.into()))
    }

    /// Draws `len` characters uniformly from [`VID_ALPHABET`].
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self, ProtocolError> {
        if len == 0 {
            return Err(ProtocolError::EmptyVid);
        }
        let text: String = (0..len)
            .map(|_| VID_ALPHABET[rng.gen_range(0..VID_ALPHABET.len())] as char)
            .collect();
        Ok(Self(text.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for VirtualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Transport address of a client. Opaque to the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientAddr(pub u32);

impl ClientAddr {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Where an outgoing upload triplet goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Destination {
    Client(ClientAddr),
    Server,
}

/// The unit of transmission: a virtual id and one share.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub vid: VirtualId,
    pub share: SplitShare,
}

impl Triplet {
    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Upload = 1,
    Download = 2,
}

/// Encoded size of a triplet: kind byte, vid, u32 indices, i8 split values.
pub fn message_size(t: &Triplet, id_len: usize) -> usize {
    wire_size(id_len, t.share.indices.len())
}

pub fn wire_size(id_len: usize, n_star: usize) -> usize {
    1 + id_len + 5 * n_star
}

/// Serializes a triplet as `kind | vid | indices (u32 LE) | values (i8)`.
pub fn encode_triplet(kind: MessageKind, t: &Triplet) -> Result<Vec<u8>, ProtocolError> {
    let n = t.share.indices.len();
    if t.share.split.len() != n {
        return Err(ProtocolError::Wire("split and index lengths differ".into()));
    }
    let mut out = Vec::with_capacity(wire_size(t.vid.len(), n));
    out.push(kind as u8);
    out.extend_from_slice(t.vid.as_str().as_bytes());
    for &i in t.share.indices.iter() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &v in t.share.split.values() {
        let b = i8::try_from(v)
            .map_err(|_| ProtocolError::Wire(format!("split value {v} does not fit in i8")))?;
        out.push(b as u8);
    }
    Ok(out)
}

/// Inverse of [`encode_triplet`]; `id_len` fixes where the vid ends.
pub fn decode_triplet(bytes: &[u8], id_len: usize) -> Result<(MessageKind, Triplet), ProtocolError> {
    let body = bytes.len().checked_sub(1 + id_len).filter(|b| b % 5 == 0);
    let Some(body) = body else {
        return Err(ProtocolError::Wire(format!(
            "{} bytes is not a valid frame for id_len {id_len}",
            bytes.len()
        )));
    };
    let n = body / 5;
    let kind = match bytes[0] {
        1 => MessageKind::Upload,
        2 => MessageKind::Download,
        k => return Err(ProtocolError::Wire(format!("unknown message type {k}"))),
    };
    let vid_text = std::str::from_utf8(&bytes[1..1 + id_len])
        .map_err(|_| ProtocolError::Wire("vid is not ascii".into()))?;
    let vid = VirtualId::parse(vid_text)?;
    let idx_start = 1 + id_len;
    let val_start = idx_start + 4 * n;
    let indices: Vec<ItemId> = bytes[idx_start..val_start]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let values: Vec<i32> = bytes[val_start..].iter().map(|&b| i32::from(b as i8)).collect();
    Ok((
        kind,
        Triplet {
            vid,
            share: SplitShare {
                split: SplitVector::new(values),
                indices: indices.into(),
            },
        },
    ))
}

fn random_peer<R: Rng + ?Sized>(me: ClientAddr, n_clients: usize, rng: &mut R) -> ClientAddr {
    debug_assert!(n_clients >= 2);
    let r = rng.gen_range(0..n_clients as u32 - 1);
    ClientAddr(if r >= me.0 { r + 1 } else { r })
}

/// Per-client protocol state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub ip: ClientAddr,
    pub vid: VirtualId,
    /// Probability of relaying to peers in the next sending round.
    pub p_sto: f64,
    pub alpha: f64,
    /// Sending rounds performed so far.
    pub rounds_sent: u32,
    pub held: Vec<Triplet>,
    /// vid -> previous hop, at most one entry per distinct sender.
    pub ld: HashMap<VirtualId, ClientAddr>,
    pub seen_senders: HashSet<ClientAddr>,
    pub ld_rec: Vec<Triplet>,
    pub own_interactions: InteractionVector,
    /// Download triplets already routed through this client.
    routed: HashSet<u64>,
}

/// Outcome of routing one download triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteDecision {
    Keep,
    Forward(ClientAddr, Triplet),
}

/// Splits the client's interactions and prepares its self-triplets.
pub fn client_init<R: Rng + ?Sized>(
    ip: ClientAddr,
    interactions: InteractionVector,
    cfg: &SplitConfig,
    id_len: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<ClientState, ProtocolError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ProtocolError::InvalidAlpha(alpha));
    }
    let vid = VirtualId::random(id_len, rng)?;
    let shares = split_vector(&interactions, cfg, rng)?;
    let held = shares
        .into_iter()
        .map(|share| Triplet {
            vid: vid.clone(),
            share,
        })
        .collect();
    Ok(ClientState {
        ip,
        vid,
        p_sto: 1.0,
        alpha,
        rounds_sent: 0,
        held,
        ld: HashMap::new(),
        seen_senders: HashSet::new(),
        ld_rec: Vec::new(),
        own_interactions: interactions,
        routed: HashSet::new(),
    })
}

/// One sending round: a single draw decides whether the whole held batch
/// relays to random peers or goes to the server, then `p_sto` decays.
pub fn client_upload_round<R: Rng + ?Sized>(
    state: &mut ClientState,
    n_clients: usize,
    rng: &mut R,
) -> Vec<(Destination, Triplet)> {
    if state.held.is_empty() {
        return Vec::new();
    }
    let r_sto: f64 = rng.gen();
    let relay = r_sto < state.p_sto && n_clients >= 2;
    let out = std::mem::take(&mut state.held)
        .into_iter()
        .map(|t| {
            let dest = if relay {
                Destination::Client(random_peer(state.ip, n_clients, rng))
            } else {
                Destination::Server
            };
            (dest, t)
        })
        .collect();
    state.p_sto *= state.alpha;
    state.rounds_sent += 1;
    out
}

/// Records the previous hop for a newly seen sender and queues the triplet.
pub fn client_receive_upload(state: &mut ClientState, t: Triplet, sender: ClientAddr) {
    debug_assert_ne!(sender, state.ip, "clients never send to themselves");
    if sender != state.ip && state.seen_senders.insert(sender) {
        state.ld.entry(t.vid.clone()).or_insert(sender);
    }
    state.held.push(t);
}

/// Routes a download triplet: keep it, follow the reverse path, or relay it
/// at random.
///
/// A triplet that comes back to a client it already passed through is relayed
/// at random instead of following the reverse path again, which breaks routing
/// cycles in the previous-hop tables.
pub fn client_route_result<R: Rng + ?Sized>(
    state: &mut ClientState,
    t: Triplet,
    n_clients: usize,
    rng: &mut R,
) -> RouteDecision {
    if t.vid == state.vid {
        state.ld_rec.push(t);
        return RouteDecision::Keep;
    }
    let first_visit = state.routed.insert(t.fingerprint());
    if first_visit {
        if let Some(&next) = state.ld.get(&t.vid) {
            return RouteDecision::Forward(next, t);
        }
    }
    RouteDecision::Forward(random_peer(state.ip, n_clients, rng), t)
}

/// Rebuilds the recommended items from the collected shares.
pub fn client_assemble_recommendation(
    state: &ClientState,
) -> Result<InteractionVector, ProtocolError> {
    let held = state.ld_rec.len();
    let shares: Vec<SplitShare> = state.ld_rec.iter().map(|t| t.share.clone()).collect();
    match reconstruct(&shares) {
        Ok(v) => Ok(v),
        Err(SplitError::NoShares | SplitError::IncompleteShareSet { .. }) => {
            Err(ProtocolError::IncompleteRecommendation { held })
        }
        Err(e) => Err(e.into()),
    }
}

/// Shares received under one virtual id.
#[derive(Debug, Clone, Default)]
pub struct VidGroup {
    pub shares: Vec<SplitShare>,
    pub corrupt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Stored,
    /// First mismatch seen under this vid; the group is now corrupt.
    Collision,
    /// Stored into an already corrupt group.
    StoredCorrupt,
}

/// Central server state. Holds no client addresses.
#[derive(Debug, Clone, Default)]
pub struct ServerState {
    pub id_list: BTreeMap<VirtualId, VidGroup>,
    pub rec_outbox: Vec<Triplet>,
    pub collisions: usize,
}

/// Per-vid aggregation result.
#[derive(Debug, Clone, Default)]
pub struct Aggregation {
    pub vectors: BTreeMap<VirtualId, InteractionVector>,
    pub corrupt: Vec<VirtualId>,
    pub failed: Vec<(VirtualId, SplitError)>,
}

pub fn server_receive(state: &mut ServerState, t: Triplet) -> ReceiveOutcome {
    let group = state.id_list.entry(t.vid).or_default();
    let outcome = match group.shares.first() {
        Some(first) if first.indices[..] != t.share.indices[..] => {
            if group.corrupt {
                ReceiveOutcome::StoredCorrupt
            } else {
                group.corrupt = true;
                ReceiveOutcome::Collision
            }
        }
        _ if group.corrupt => ReceiveOutcome::StoredCorrupt,
        _ => ReceiveOutcome::Stored,
    };
    if outcome == ReceiveOutcome::Collision {
        state.collisions += 1;
    }
    group.shares.push(t.share);
    outcome
}

/// Reconstructs every intact group; corrupt and failing groups are reported
/// separately.
pub fn server_aggregate(state: &ServerState) -> Aggregation {
    let mut agg = Aggregation::default();
    for (vid, group) in &state.id_list {
        if group.corrupt {
            agg.corrupt.push(vid.clone());
            continue;
        }
        match reconstruct(&group.shares) {
            Ok(v) => {
                agg.vectors.insert(vid.clone(), v);
            }
            Err(e) => agg.failed.push((vid.clone(), e)),
        }
    }
    agg
}

/// Splits each recommendation list and addresses every triplet to a random
/// client. Iterates `recs` in vid order.
pub fn server_dispatch_recommendations<R: Rng + ?Sized>(
    state: &mut ServerState,
    recs: &BTreeMap<VirtualId, InteractionVector>,
    cfg: &SplitConfig,
    n_clients: usize,
    rng: &mut R,
) -> Result<Vec<(ClientAddr, Triplet)>, ProtocolError> {
    state.rec_outbox.clear();
    for (vid, rec) in recs {
        for share in split_vector(rec, cfg, rng)? {
            state.rec_outbox.push(Triplet {
                vid: vid.clone(),
                share,
            });
        }
    }
    Ok(state
        .rec_outbox
        .drain(..)
        .map(|t| (ClientAddr(rng.gen_range(0..n_clients as u32)), t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn cfg() -> SplitConfig {
        SplitConfig::new(100, 5, 2, 4).unwrap()
    }

    fn iv(items: &[u32]) -> InteractionVector {
        InteractionVector::new(items.to_vec()).unwrap()
    }

    fn client(ip: u32, seed: u64) -> ClientState {
        let mut rng = rng_from_seed(seed);
        client_init(ClientAddr(ip), iv(&[1, 2, 3]), &cfg(), 7, 0.9, &mut rng).unwrap()
    }

    #[test]
    fn vid_alphabet_and_length() {
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let v = VirtualId::random(7, &mut rng).unwrap();
            assert_eq!(v.len(), 7);
            for b in v.as_str().bytes() {
                assert!(
                    (48..=57).contains(&b) || (65..=90).contains(&b) || (97..=122).contains(&b)
                );
            }
        }
        assert!(VirtualId::random(0, &mut rng).is_err());
        assert!(VirtualId::parse("ab-c").is_err());
        assert!(VirtualId::parse("").is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = client(0, 11);
        let b = client(0, 11);
        assert_eq!(a.held.len(), 4);
        assert_eq!(a.vid, b.vid);
        assert_eq!(a.held, b.held);
        assert_eq!(a.p_sto, 1.0);
        let mut rng = rng_from_seed(0);
        assert!(client_init(ClientAddr(0), iv(&[1]), &cfg(), 7, 1.0, &mut rng).is_err());
    }

    #[test]
    fn first_round_relays_everything_and_decays() {
        let mut c = client(3, 1);
        let mut rng = rng_from_seed(2);
        let out = client_upload_round(&mut c, 10, &mut rng);
        assert_eq!(out.len(), 4);
        for (d, _) in &out {
            match d {
                Destination::Client(a) => assert_ne!(*a, ClientAddr(3)),
                Destination::Server => panic!("p_sto = 1 must relay"),
            }
        }
        assert!(c.held.is_empty());
        assert!((c.p_sto - 0.9).abs() < 1e-15);
        // empty held: no output, no decay
        assert!(client_upload_round(&mut c, 10, &mut rng).is_empty());
        assert!((c.p_sto - 0.9).abs() < 1e-15);
    }

    #[test]
    fn p_sto_follows_geometric_decay() {
        let mut c = client(0, 1);
        let mut rng = rng_from_seed(2);
        let spare = c.held[0].clone();
        for k in 1..=20 {
            c.held.push(spare.clone());
            client_upload_round(&mut c, 5, &mut rng);
            assert!((c.p_sto - 0.9f64.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn ld_dedups_on_sender_ip_first_write_wins() {
        let mut c = client(0, 1);
        let a = client(1, 2);
        let b = client(2, 3);
        let ta = a.held[0].clone();
        let tb = b.held[0].clone();

        client_receive_upload(&mut c, ta.clone(), ClientAddr(1));
        assert_eq!(c.ld.get(&a.vid), Some(&ClientAddr(1)));
        // same sender, different vid: unchanged
        client_receive_upload(&mut c, tb.clone(), ClientAddr(1));
        assert!(!c.ld.contains_key(&b.vid));
        // new sender, already mapped vid: first mapping stays
        client_receive_upload(&mut c, ta, ClientAddr(5));
        assert_eq!(c.ld.get(&a.vid), Some(&ClientAddr(1)));
        assert!(c.seen_senders.contains(&ClientAddr(5)));
        assert_eq!(c.held.len(), 4 + 3);
    }

    #[test]
    fn server_groups_and_flags_collisions() {
        let mut s = ServerState::default();
        let a = client(1, 2);
        let b = client(2, 3);
        for t in a.held.iter().chain(&b.held) {
            assert_eq!(server_receive(&mut s, t.clone()), ReceiveOutcome::Stored);
        }
        assert_eq!(s.id_list.len(), 2);
        let agg = server_aggregate(&s);
        assert_eq!(agg.vectors[&a.vid], iv(&[1, 2, 3]));
        assert_eq!(s.collisions, 0);

        // forced collision: b's share relabelled with a's vid
        let forged = Triplet {
            vid: a.vid.clone(),
            share: b.held[0].share.clone(),
        };
        assert_eq!(server_receive(&mut s, forged.clone()), ReceiveOutcome::Collision);
        assert_eq!(server_receive(&mut s, forged), ReceiveOutcome::StoredCorrupt);
        assert_eq!(s.collisions, 1);
        let agg = server_aggregate(&s);
        assert_eq!(agg.corrupt, vec![a.vid.clone()]);
        assert_eq!(agg.vectors.len(), 1);

        assert!(server_aggregate(&ServerState::default()).vectors.is_empty());
    }

    #[test]
    fn dispatch_counts_and_determinism() {
        let c = SplitConfig::new(100, 5, 2, 3).unwrap();
        let mut recs = BTreeMap::new();
        let mut rng = rng_from_seed(0);
        for _ in 0..4 {
            recs.insert(VirtualId::random(7, &mut rng).unwrap(), iv(&[1, 2, 3, 4, 5]));
        }
        let run = |seed| {
            let mut s = ServerState::default();
            server_dispatch_recommendations(&mut s, &recs, &c, 10, &mut rng_from_seed(seed))
                .unwrap()
        };
        let plan = run(4);
        assert_eq!(plan.len(), 12);
        assert!(plan.iter().all(|(_, t)| t.share.indices.len() == 10));
        assert!(plan.iter().all(|(a, _)| a.index() < 10));
        assert_eq!(plan, run(4));
    }

    #[test]
    fn routing_branches() {
        let mut me = client(0, 1);
        let other = client(1, 2);
        let stranger = client(2, 3);
        me.ld.insert(other.vid.clone(), ClientAddr(7));
        let mut rng = rng_from_seed(0);

        let own = Triplet {
            vid: me.vid.clone(),
            share: me.held[0].share.clone(),
        };
        assert_eq!(client_route_result(&mut me, own, 10, &mut rng), RouteDecision::Keep);
        assert_eq!(me.ld_rec.len(), 1);

        let t = other.held[0].clone();
        match client_route_result(&mut me, t.clone(), 10, &mut rng) {
            RouteDecision::Forward(a, _) => assert_eq!(a, ClientAddr(7)),
            RouteDecision::Keep => panic!(),
        }
        // coming back around: random relay, never to self
        for _ in 0..20 {
            match client_route_result(&mut me, t.clone(), 10, &mut rng) {
                RouteDecision::Forward(a, _) => assert_ne!(a, ClientAddr(0)),
                RouteDecision::Keep => panic!(),
            }
        }
        match client_route_result(&mut me, stranger.held[0].clone(), 2, &mut rng) {
            RouteDecision::Forward(a, _) => assert_eq!(a, ClientAddr(1)),
            RouteDecision::Keep => panic!(),
        }
    }

    #[test]
    fn assemble_needs_every_share() {
        let mut me = client(0, 1);
        assert_eq!(
            client_assemble_recommendation(&me),
            Err(ProtocolError::IncompleteRecommendation { held: 0 })
        );
        let rec = iv(&[9, 40]);
        let shares = split_vector(&rec, &cfg(), &mut rng_from_seed(8)).unwrap();
        me.ld_rec = shares
            .into_iter()
            .map(|share| Triplet {
                vid: me.vid.clone(),
                share,
            })
            .collect();
        assert_eq!(client_assemble_recommendation(&me).unwrap(), rec);
    }

    #[test]
    fn message_sizes() {
        assert_eq!(wire_size(7, 40), 208);
        assert_eq!(wire_size(1, 1), 7);
        assert_eq!(wire_size(7, 80) - wire_size(7, 40), 5 * 40);
        let c = client(0, 1);
        assert_eq!(message_size(&c.held[0], 7), 1 + 7 + 50);
    }

    #[test]
    fn wire_round_trip_and_errors() {
        let c = client(0, 1);
        let t = c.held[2].clone();
        let bytes = encode_triplet(MessageKind::Upload, &t).unwrap();
        assert_eq!(bytes.len(), message_size(&t, 7));
        assert_eq!(bytes[0], 1);
        let (kind, back) = decode_triplet(&bytes, 7).unwrap();
        assert_eq!(kind, MessageKind::Upload);
        assert_eq!(back, t);
        assert!(decode_triplet(&bytes[..bytes.len() - 1], 7).is_err());

        let big = Triplet {
            vid: t.vid.clone(),
            share: SplitShare {
                split: SplitVector::new(vec![200]),
                indices: vec![1u32].into(),
            },
        };
        assert!(encode_triplet(MessageKind::Download, &big).is_err());
    }
}
