//! Upload, recommend, download: the full round trip with fidelity checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::{client_assemble_recommendation, server_aggregate, VirtualId};
use crate::recommender::{build_matrix, recommend, RecommendError, RecommenderSpec};
use crate::simnet::{run_download_phase, run_upload_phase, MessageLog, PhaseMetrics, SimConfig, SimError};
use crate::split::InteractionVector;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

/// How many uploaded vectors the server recovered exactly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadFidelity {
    /// Vids owned by exactly one client.
    pub unique_vids: usize,
    pub exact: usize,
    pub mismatched: usize,
    pub missing: usize,
    pub corrupt_groups: usize,
}

impl UploadFidelity {
    pub fn is_exact(&self) -> bool {
        self.exact == self.unique_vids && self.mismatched == 0 && self.missing == 0
    }
}

/// How many clients assembled exactly what the server recommended.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryFidelity {
    pub expected: usize,
    pub exact: usize,
    pub incomplete: usize,
    pub wrong: usize,
}

impl DeliveryFidelity {
    pub fn is_exact(&self) -> bool {
        self.exact == self.expected
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub upload: PhaseMetrics,
    pub download: PhaseMetrics,
    pub upload_fidelity: UploadFidelity,
    pub delivery_fidelity: DeliveryFidelity,
}

impl PipelineReport {
    pub fn total_bytes(&self) -> u64 {
        self.upload.total_bytes + self.download.total_bytes
    }

    /// Mean triplets sent per client over both phases.
    pub fn mean_client_sends(&self) -> f64 {
        self.upload.mean_client_sends() + self.download.mean_client_sends()
    }
}

/// Runs both phases with the given recommender, optionally logging messages.
pub fn run_pipeline(
    cfg: &SimConfig,
    data: &[InteractionVector],
    spec: &RecommenderSpec,
    mut log: Option<&mut MessageLog>,
) -> Result<PipelineReport, PipelineError> {
    let mut up = run_upload_phase(cfg, data, log.as_deref_mut())?;
    let agg = server_aggregate(&up.server);

    let mut owners: BTreeMap<VirtualId, Vec<usize>> = BTreeMap::new();
    for (i, c) in up.clients.iter().enumerate() {
        owners.entry(c.vid.clone()).or_default().push(i);
    }
    let mut uf = UploadFidelity {
        corrupt_groups: agg.corrupt.len(),
        ..Default::default()
    };
    for (vid, who) in &owners {
        if who.len() != 1 {
            continue;
        }
        uf.unique_vids += 1;
        match agg.vectors.get(vid) {
            Some(v) if *v == data[who[0]] => uf.exact += 1,
            Some(_) => uf.mismatched += 1,
            None => uf.missing += 1,
        }
    }

    let matrix = build_matrix(agg.vectors, cfg.split.n_item())?;
    let recs = recommend(&matrix, spec);
    let download = run_download_phase(&mut up.server, &mut up.clients, &recs, cfg, log)?;

    let mut df = DeliveryFidelity {
        expected: recs.len(),
        ..Default::default()
    };
    for (vid, rec) in &recs {
        let Some(who) = owners.get(vid).filter(|w| w.len() == 1) else {
            df.wrong += 1;
            continue;
        };
        match client_assemble_recommendation(&up.clients[who[0]]) {
            Ok(v) if v == *rec => df.exact += 1,
            Ok(_) => df.wrong += 1,
            Err(_) => df.incomplete += 1,
        }
    }

    Ok(PipelineReport {
        upload: up.metrics,
        download,
        upload_fidelity: uf,
        delivery_fidelity: df,
    })
}
