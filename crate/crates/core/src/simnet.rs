//! Round-synchronous simulated network running both protocol phases.
//!
//! Every message sent in round `k` is delivered at the start of round `k + 1`.
//! Within a round, messages are ordered by sender (server first) and then by
//! emission order, so a run is a pure function of its config and data.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    client_init, client_receive_upload, client_route_result, client_upload_round,
    server_dispatch_recommendations, server_receive, ClientAddr, ClientState, Destination,
    ProtocolError, ReceiveOutcome, RouteDecision, ServerState, Triplet, VirtualId,
};
use crate::rng::{derive_rng, SimRng, Stream};
use crate::split::{InteractionVector, SplitConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} interaction vectors, got {got}")]
    DataLength { expected: usize, got: usize },
    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("upload phase incomplete after {} rounds ({held} triplets still held)", .metrics.rounds_used)]
    PhaseIncomplete {
        held: usize,
        metrics: Box<PhaseMetrics>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_user: usize,
    pub split: SplitConfig,
    pub alpha: f64,
    pub id_len: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Config with the default round budget of `10 * n_user`.
    pub fn new(n_user: usize, split: SplitConfig, alpha: f64, id_len: usize, seed: u64) -> Self {
        Self {
            n_user,
            split,
            alpha,
            id_len,
            max_rounds: 10 * n_user,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_user < 2 {
            return Err(SimError::InvalidConfig(format!(
                "n_user must be at least 2, got {}",
                self.n_user
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.max_rounds == 0 {
            return Err(SimError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if self.id_len == 0 {
            return Err(SimError::InvalidConfig("id_len must be at least 1".into()));
        }
        if self.n_user > u32::MAX as usize {
            return Err(SimError::InvalidConfig("too many clients".into()));
        }
        Ok(())
    }

    /// Wire size of every triplet in this configuration.
    pub fn triplet_bytes(&self) -> u64 {
        crate::protocol::wire_size(self.id_len, self.split.n_star()) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Upload,
    Download,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Upload => "upload",
            Phase::Download => "download",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Server,
    Client(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Server => f.write_str("server"),
            Endpoint::Client(i) => write!(f, "c{i}"),
        }
    }
}

/// One transmitted triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: usize,
    pub phase: Phase,
    pub from: Endpoint,
    pub to: Endpoint,
    pub vid: VirtualId,
    pub bytes: u64,
}

pub type MessageLog = Vec<MessageRecord>;

/// Traffic accounting for one phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub total_bytes: u64,
    pub messages_client_to_client: u64,
    pub messages_to_server: u64,
    pub messages_server_to_client: u64,
    pub rounds_used: usize,
    /// Triplets sent by each client.
    pub per_client_sends: Vec<u64>,
    pub undelivered: u64,
    /// Collisions detected by the server.
    pub vid_collisions: u64,
    /// Shared vids the server could not detect (identical index rows).
    pub undetected_collisions: u64,
}

impl PhaseMetrics {
    fn new(n_user: usize) -> Self {
        Self {
            per_client_sends: vec![0; n_user],
            ..Self::default()
        }
    }

    pub fn total_messages(&self) -> u64 {
        self.messages_client_to_client + self.messages_to_server + self.messages_server_to_client
    }

    pub fn mean_client_sends(&self) -> f64 {
        if self.per_client_sends.is_empty() {
            return 0.0;
        }
        self.per_client_sends.iter().sum::<u64>() as f64 / self.per_client_sends.len() as f64
    }
}

/// Recomputes the byte total from a message log.
pub fn log_total_bytes(log: &[MessageRecord], phase: Phase) -> u64 {
    log.iter().filter(|m| m.phase == phase).map(|m| m.bytes).sum()
}

struct Recorder<'a> {
    metrics: PhaseMetrics,
    log: Option<&'a mut MessageLog>,
    phase: Phase,
    bytes: u64,
}

impl Recorder<'_> {
    fn record(&mut self, round: usize, from: Endpoint, to: Endpoint, vid: &VirtualId) {
        let m = &mut self.metrics;
        m.total_bytes += self.bytes;
        match (from, to) {
            (Endpoint::Client(i), Endpoint::Client(_)) => {
                m.messages_client_to_client += 1;
                m.per_client_sends[i as usize] += 1;
            }
            (Endpoint::Client(i), Endpoint::Server) => {
                m.messages_to_server += 1;
                m.per_client_sends[i as usize] += 1;
            }
            (Endpoint::Server, _) => m.messages_server_to_client += 1,
        }
        if let Some(log) = self.log.as_deref_mut() {
            log.push(MessageRecord {
                round,
                phase: self.phase,
                from,
                to,
                vid: vid.clone(),
                bytes: self.bytes,
            });
        }
    }
}

/// Everything the upload phase leaves behind.
#[derive(Debug, Clone)]
pub struct UploadOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub metrics: PhaseMetrics,
}

/// Runs the relay upload until every client has flushed to the server.
pub fn run_upload_phase(
    cfg: &SimConfig,
    data: &[InteractionVector],
    log: Option<&mut MessageLog>,
) -> Result<UploadOutcome, SimError> {
    cfg.validate()?;
    if data.len() != cfg.n_user {
        return Err(SimError::DataLength {
            expected: cfg.n_user,
            got: data.len(),
        });
    }
    let n = cfg.n_user;
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| derive_rng(cfg.seed, Stream::UploadClient, i as u64))
        .collect();
    let mut clients = Vec::with_capacity(n);
    for (i, (vector, rng)) in data.iter().zip(rngs.iter_mut()).enumerate() {
        let state = client_init(
            ClientAddr(i as u32),
            vector.clone(),
            &cfg.split,
            cfg.id_len,
            cfg.alpha,
            rng,
        )
        .map_err(|source| SimError::Client { client: i, source })?;
        clients.push(state);
    }

    let mut server = ServerState::default();
    let mut rec = Recorder {
        metrics: PhaseMetrics::new(n),
        log,
        phase: Phase::Upload,
        bytes: cfg.triplet_bytes(),
    };
    let mut in_flight: Vec<(ClientAddr, Destination, Triplet)> = Vec::new();
    let mut round = 0usize;

    loop {
        for (from, to, t) in in_flight.drain(..) {
            match to {
                Destination::Server => {
                    if server_receive(&mut server, t) == ReceiveOutcome::Collision {
                        rec.metrics.vid_collisions += 1;
                    }
                }
                Destination::Client(addr) => {
                    client_receive_upload(&mut clients[addr.index()], t, from)
                }
            }
        }
        let held: usize = clients.iter().map(|c| c.held.len()).sum();
        if held == 0 {
            break;
        }
        if round == cfg.max_rounds {
            rec.metrics.rounds_used = round;
            return Err(SimError::PhaseIncomplete {
                held,
                metrics: Box::new(rec.metrics),
            });
        }
        round += 1;
        for (i, (client, rng)) in clients.iter_mut().zip(rngs.iter_mut()).enumerate() {
            for (to, t) in client_upload_round(client, n, rng) {
                let to_ep = match to {
                    Destination::Server => Endpoint::Server,
                    Destination::Client(a) => Endpoint::Client(a.0),
                };
                rec.record(round, Endpoint::Client(i as u32), to_ep, &t.vid);
                in_flight.push((ClientAddr(i as u32), to, t));
            }
        }
    }

    rec.metrics.rounds_used = round;
    rec.metrics.undetected_collisions = count_undetected(&clients, &server);
    Ok(UploadOutcome {
        server,
        clients,
        metrics: rec.metrics,
    })
}

// Vids shared by several clients whose groups the server did not flag.
fn count_undetected(clients: &[ClientState], server: &ServerState) -> u64 {
    let mut owners: BTreeMap<&VirtualId, usize> = BTreeMap::new();
    for c in clients {
        *owners.entry(&c.vid).or_default() += 1;
    }
    owners
        .into_iter()
        .filter(|&(vid, count)| count > 1 && !server.id_list.get(vid).is_some_and(|g| g.corrupt))
        .count() as u64
}

/// Dispatches the recommendations and routes them until every triplet is kept
/// by its owner or the round budget runs out.
pub fn run_download_phase(
    server: &mut ServerState,
    clients: &mut [ClientState],
    recs: &BTreeMap<VirtualId, InteractionVector>,
    cfg: &SimConfig,
    log: Option<&mut MessageLog>,
) -> Result<PhaseMetrics, SimError> {
    cfg.validate()?;
    let n = clients.len();
    if n != cfg.n_user {
        return Err(SimError::DataLength {
            expected: cfg.n_user,
            got: n,
        });
    }
    let mut server_rng = derive_rng(cfg.seed, Stream::Server, 0);
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| derive_rng(cfg.seed, Stream::DownloadClient, i as u64))
        .collect();
    let mut rec = Recorder {
        metrics: PhaseMetrics::new(n),
        log,
        phase: Phase::Download,
        bytes: cfg.triplet_bytes(),
    };

    let plan = server_dispatch_recommendations(server, recs, &cfg.split, n, &mut server_rng)?;
    let mut round = 1usize;
    let mut in_flight: Vec<(ClientAddr, Triplet)> = Vec::with_capacity(plan.len());
    for (to, t) in plan {
        rec.record(round, Endpoint::Server, Endpoint::Client(to.0), &t.vid);
        in_flight.push((to, t));
    }

    let mut last_send_round = round;
    let mut next: Vec<(u32, ClientAddr, Triplet)> = Vec::new();
    while !in_flight.is_empty() && round < cfg.max_rounds {
        round += 1;
        for (to, t) in in_flight.drain(..) {
            let i = to.index();
            if let RouteDecision::Forward(dest, t) =
                client_route_result(&mut clients[i], t, n, &mut rngs[i])
            {
                next.push((to.0, dest, t));
            }
        }
        // stable: keeps emission order within one sender
        next.sort_by_key(|&(from, _, _)| from);
        if !next.is_empty() {
            last_send_round = round;
        }
        for (from, to, t) in next.drain(..) {
            rec.record(round, Endpoint::Client(from), Endpoint::Client(to.0), &t.vid);
            in_flight.push((to, t));
        }
    }
    // the last sends still need a delivery round
    if !in_flight.is_empty() && round == cfg.max_rounds {
        for (to, t) in std::mem::take(&mut in_flight) {
            let i = to.index();
            if let RouteDecision::Forward(_, t) =
                client_route_result(&mut clients[i], t, n, &mut rngs[i])
            {
                in_flight.push((to, t));
            }
        }
    }
    rec.metrics.rounds_used = last_send_round;
    rec.metrics.undelivered = in_flight.len() as u64;
    Ok(rec.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::seq::index;
    use rand::Rng;

    fn dataset(n: usize, cfg: &SplitConfig, seed: u64) -> Vec<InteractionVector> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=cfg.n_max());
                let items = index::sample(&mut rng, cfg.n_item() as usize, len)
                    .into_iter()
                    .map(|i| i as u32 + 1)
                    .collect();
                InteractionVector::new(items).unwrap()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        let s = SplitConfig::new(100, 5, 2, 3).unwrap();
        assert!(SimConfig::new(1, s, 0.5, 7, 0).validate().is_err());
        assert!(SimConfig::new(5, s, 1.0, 7, 0).validate().is_err());
        assert!(SimConfig::new(5, s, 0.0, 7, 0).validate().is_err());
        let mut c = SimConfig::new(5, s, 0.5, 7, 0);
        assert_eq!(c.max_rounds, 50);
        c.max_rounds = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tiny_alpha_sends_to_server_in_round_two() {
        let s = SplitConfig::new(200, 10, 2, 5).unwrap();
        let cfg = SimConfig::new(50, s, 0.01, 7, 4);
        let data = dataset(50, &s, 1);
        let out = run_upload_phase(&cfg, &data, None).unwrap();
        let m = &out.metrics;
        assert!(m.messages_client_to_client >= 250);
        assert!(m.messages_client_to_client < 300, "{m:?}");
        assert_eq!(m.messages_to_server, 250);
        assert!(m.rounds_used <= 3);
    }

    #[test]
    fn upload_conserves_every_triplet() {
        let s = SplitConfig::new(300, 10, 3, 6).unwrap();
        let cfg = SimConfig::new(40, s, 0.8, 7, 9);
        let data = dataset(40, &s, 2);
        let mut log = MessageLog::new();
        let out = run_upload_phase(&cfg, &data, Some(&mut log)).unwrap();
        let stored: usize = out.server.id_list.values().map(|g| g.shares.len()).sum();
        assert_eq!(stored, 40 * 6);
        assert_eq!(out.metrics.messages_to_server, 240);
        assert_eq!(log_total_bytes(&log, Phase::Upload), out.metrics.total_bytes);
        assert_eq!(log.len() as u64, out.metrics.total_messages());
        assert_eq!(
            out.metrics.per_client_sends.iter().sum::<u64>(),
            out.metrics.total_messages()
        );
        // server state carries no client addresses; groups are keyed by vid only
        for c in &out.clients {
            assert!(out.server.id_list.contains_key(&c.vid));
            assert!(!c.ld.values().any(|&a| a == c.ip));
        }
    }

    #[test]
    fn upload_budget_exhaustion_is_an_error() {
        let s = SplitConfig::new(100, 5, 2, 4).unwrap();
        let mut cfg = SimConfig::new(20, s, 0.99, 7, 1);
        cfg.max_rounds = 2;
        let data = dataset(20, &s, 3);
        match run_upload_phase(&cfg, &data, None) {
            Err(SimError::PhaseIncomplete { held, metrics }) => {
                assert!(held > 0);
                assert_eq!(metrics.rounds_used, 2);
            }
            other => panic!("expected incomplete phase, got {other:?}"),
        }
    }

    #[test]
    fn two_clients_deliver_everything() {
        let s = SplitConfig::new(50, 4, 2, 5).unwrap();
        let cfg = SimConfig::new(2, s, 0.7, 7, 5);
        let data = dataset(2, &s, 4);
        let mut up = run_upload_phase(&cfg, &data, None).unwrap();
        let recs: BTreeMap<_, _> = up
            .clients
            .iter()
            .map(|c| (c.vid.clone(), InteractionVector::new(vec![1, 2]).unwrap()))
            .collect();
        let m = run_download_phase(&mut up.server, &mut up.clients, &recs, &cfg, None).unwrap();
        assert_eq!(m.undelivered, 0);
        assert_eq!(m.messages_server_to_client, 10);
        // each misrouted triplet needs exactly one hop
        assert!(m.messages_client_to_client <= 10);
        assert!(m.rounds_used <= 2);
    }
}
