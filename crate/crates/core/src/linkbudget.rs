//! Free-space link budget and per-hop delay.
//!
//! The chain for one hop `i -> j` is distance, path loss (dB), SNR (linear),
//! Shannon rate (bit/s) and finally `d / c + queued_bits / rate`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::UavNetwork;

/// Propagation speed used both in the free-space loss and the delay term.
pub const LIGHT_SPEED: f64 = 3.0e8;

/// `20 log10(4 pi / c)` rounded as in the usual closed form of free-space loss
/// with `d` in meters and `g` in Hz.
pub const FSPL_CONSTANT_DB: f64 = -147.55;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Carrier frequency, Hz.
    pub frequency: f64,
    /// Transmit power, W.
    pub tx_power: f64,
    /// Noise power, W.
    pub noise_power: f64,
    /// Channel bandwidth, Hz.
    pub bandwidth: f64,
    pub packet_bytes: f64,
    #[serde(default)]
    pub queue_side: QueueSide,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            frequency: 2.4e9,
            tx_power: 40.0,
            noise_power: 4e-13,
            bandwidth: 4e6,
            packet_bytes: 512.0,
            queue_side: QueueSide::Receiver,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frequency", self.frequency),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("bandwidth", self.bandwidth),
            ("packet_bytes", self.packet_bytes),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("radio.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Queued load in bits for `packets` waiting packets.
    pub fn queued_bits(&self, packets: u32) -> f64 {
        f64::from(packets) * self.packet_bytes * 8.0
    }
}

/// Which endpoint's queue loads a hop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueSide {
    /// Packets wait at the next hop `j`.
    #[default]
    Receiver,
    /// Packets wait at the forwarding node `i`.
    Sender,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkMetrics {
    pub distance: f64,
    pub path_loss: f64,
    pub snr: f64,
    pub rate: f64,
    pub hop_delay: f64,
}

/// Closed-form free-space loss in dB (`d` in meters, `g` in Hz).
pub fn path_loss_db(distance: f64, frequency: f64) -> Result<f64> {
    if !(distance > 0.0) || !(frequency > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs d > 0 and g > 0, got d={distance}, g={frequency}"
        )));
    }
    Ok(20.0 * distance.log10() + 20.0 * frequency.log10() + FSPL_CONSTANT_DB)
}

/// Free-space loss written directly as `20 log10(4 pi d g / c)`.
pub fn free_space_path_loss_db(distance: f64, frequency: f64) -> Result<f64> {
    if !(distance > 0.0) || !(frequency > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs d > 0 and g > 0, got d={distance}, g={frequency}"
        )));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance * frequency / LIGHT_SPEED).log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `P * 10^(-PL/10) / sigma^2`.
pub fn snr_linear(tx_power: f64, path_loss_db: f64, noise_power: f64) -> f64 {
    tx_power * db_to_linear(-path_loss_db) / noise_power
}

/// Shannon capacity `B log2(1 + snr)`.
pub fn rate_bps(bandwidth: f64, snr: f64) -> f64 {
    bandwidth * (1.0 + snr).log2()
}

/// Propagation plus transmission delay of one hop, in seconds.
pub fn hop_delay(distance: f64, queued_bits: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("link rate must be positive, got {rate}")));
    }
    if distance < 0.0 || queued_bits < 0.0 {
        return Err(Error::Domain("distance and queued load must be non-negative".into()));
    }
    Ok(distance / LIGHT_SPEED + queued_bits / rate)
}

/// Radio chain for a pair at `distance` meters with `packets` queued.
pub fn metrics_at(params: &RadioParams, distance: f64, packets: u32) -> Result<LinkMetrics> {
    let path_loss = path_loss_db(distance, params.frequency)?;
    let snr = snr_linear(params.tx_power, path_loss, params.noise_power);
    let rate = rate_bps(params.bandwidth, snr);
    let hop_delay = hop_delay(distance, params.queued_bits(packets), rate)?;
    Ok(LinkMetrics {
        distance,
        path_loss,
        snr,
        rate,
        hop_delay,
    })
}

/// Metrics for the live link `i -> j`; `packets` is the queue that loads it.
pub fn link_metrics(
    network: &UavNetwork,
    params: &RadioParams,
    i: usize,
    j: usize,
    packets: u32,
) -> Result<LinkMetrics> {
    if !network.is_linked(i, j) {
        return Err(Error::NoLink(i, j));
    }
    metrics_at(params, network.distance(i, j), packets)
}

/// Queue length that loads hop `i -> j` under `params.queue_side`.
pub fn hop_queue(params: &RadioParams, queues: &[u32], i: usize, j: usize) -> u32 {
    match params.queue_side {
        QueueSide::Receiver => queues[j],
        QueueSide::Sender => queues[i],
    }
}

/// Delay of hop `i -> j` with the queue vector `queues`.
pub fn hop_delay_on(
    network: &UavNetwork,
    params: &RadioParams,
    queues: &[u32],
    i: usize,
    j: usize,
) -> Result<f64> {
    Ok(link_metrics(network, params, i, j, hop_queue(params, queues, i, j))?.hop_delay)
}

/// End-to-end delay summed over every hop of `path`, including the last.
pub fn path_delay(
    network: &UavNetwork,
    params: &RadioParams,
    path: &[usize],
    queues: &[u32],
) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::Domain(format!(
            "a path needs at least 2 nodes, got {}",
            path.len()
        )));
    }
    path.windows(2)
        .map(|w| hop_delay_on(network, params, queues, w[0], w[1]))
        .sum()
}
