//! Audio front end: WAV I/O, loudness normalization, framing, overlap
//! detection and the distortion banks.

pub mod distortions;
pub mod dsp;
pub mod framing;
pub mod loudness;
pub mod wav;

pub use distortions::{apply_distortion, default_bank, generate_bank, BankConfig, Distortion, Family, Variant};
pub use framing::{detect_overlap_frames, inject_delay, FrameParams, FramePlan};
pub use loudness::{integrated_loudness, normalize_loudness};
pub use wav::{read_wav, write_wav, Signal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AudioError {
    #[error("wav: {0}")]
    Wav(String),
    #[error("expected mono audio, got {0} channels")]
    NotMono(u16),
    #[error("non-finite sample")]
    NonFinite,
    #[error("input has no measurable loudness")]
    SilentInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("signal of {len} samples is shorter than {min}")]
    TooShort { len: usize, min: usize },
    #[error("signals differ in length")]
    LengthMismatch,
    #[error("delay of {shift} samples does not fit a signal of {len}")]
    DelayTooLong { shift: usize, len: usize },
    #[error("sample rates differ: {0} vs {1}")]
    SampleRateMismatch(u32, u32),
}
