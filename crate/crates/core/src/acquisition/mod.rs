//! Sensor-to-server data chain: 1-bit PDM encoding, the four-stage decimator
//! to 48 kHz PCM, FPGA packet framing and clock budget arithmetic.

mod budget;
mod decimation;
mod packet;
mod pdm;

pub use budget::{phase_skew_budget, stream_data_rate};
pub use decimation::{pdm_decimate, pdm_decimate_with, Decimator, PcmBlock};
pub use packet::{
    depacketize, inject_faults, packetize, read_capture, write_capture, DaqPacket, FpgaCapture, Gap,
    CHANNELS_PER_FPGA, DEFAULT_FRAMES_PER_PACKET, HEADER_LEN, MAGIC, STATUS_SYNC_ERROR,
};
pub use pdm::{pdm_modulate, ModulatorOrder, PdmModulator, PdmStream};

/// PDM bit clock (Hz).
pub const PDM_RATE: f64 = 3_072_000.0;
/// PCM output rate after decimation (Hz).
pub const PCM_RATE: f64 = 48_000.0;
/// Overall decimation ratio.
pub const DECIMATION: usize = 64;
