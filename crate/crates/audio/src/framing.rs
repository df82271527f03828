//! Frame geometry, multi-source activity and artificial delays.

use serde::{Deserialize, Serialize};

use crate::dsp::rms;
use crate::AudioError;

/// Frame length and hop in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Activity floor relative to the utterance RMS, in dB.
    pub activity_db: f64,
}

impl FrameParams {
    /// 25 ms frames every 20 ms (50 frames per second).
    pub const SPEECH: FrameParams = FrameParams { frame_ms: 25.0, hop_ms: 20.0, activity_db: -40.0 };
    /// 160 ms frames every 100 ms (10 frames per second).
    pub const MUSIC: FrameParams = FrameParams { frame_ms: 160.0, hop_ms: 100.0, activity_db: -40.0 };

    pub fn frame_len(&self, sr: u32) -> usize {
        (self.frame_ms * sr as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sr: u32) -> usize {
        (self.hop_ms * sr as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sr: u32) -> Result<(), AudioError> {
        let (l, h) = (self.frame_len(sr), self.hop_len(sr));
        if l == 0 || h == 0 || h > l {
            return Err(AudioError::InvalidParams(format!("frame {l} / hop {h} samples")));
        }
        Ok(())
    }
}

/// Number of whole frames in `len` samples.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len || hop == 0 {
        0
    } else {
        (len - frame_len) / hop + 1
    }
}

/// Samples of frame `f`.
pub fn frame_slice(x: &[f64], f: usize, frame_len: usize, hop: usize) -> &[f64] {
    let start = f * hop;
    &x[start..start + frame_len]
}

/// Frames where at least two sources are active.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePlan {
    pub frame_len: usize,
    pub hop: usize,
    pub n_frames: usize,
    pub frames_per_second: f64,
    /// Frame indices with two or more active sources.
    pub active: Vec<usize>,
    /// Active source indices of each entry of `active`.
    pub sources: Vec<Vec<usize>>,
}

/// Marks frames where at least two references exceed the activity floor
/// relative to their own utterance RMS.
pub fn detect_overlap_frames(refs: &[&[f64]], sr: u32, params: &FrameParams) -> Result<FramePlan, AudioError> {
    params.validate(sr)?;
    if refs.len() < 2 {
        return Err(AudioError::InvalidParams("need at least two sources".into()));
    }
    let len = refs[0].len();
    if refs.iter().any(|r| r.len() != len) {
        return Err(AudioError::LengthMismatch);
    }
    let frame_len = params.frame_len(sr);
    let hop = params.hop_len(sr);
    let n_frames = frame_count(len, frame_len, hop);
    let floor = 10f64.powf(params.activity_db / 20.0);
    let utt_rms: Vec<f64> = refs.iter().map(|r| rms(r)).collect();
    let mut active = Vec::new();
    let mut sources = Vec::new();
    for f in 0..n_frames {
        let on: Vec<usize> = refs
            .iter()
            .enumerate()
            .filter(|(s, r)| utt_rms[*s] > 0.0 && rms(frame_slice(r, f, frame_len, hop)) >= floor * utt_rms[*s])
            .map(|(s, _)| s)
            .collect();
        if on.len() >= 2 {
            active.push(f);
            sources.push(on);
        }
    }
    Ok(FramePlan {
        frame_len,
        hop,
        n_frames,
        frames_per_second: sr as f64 / hop as f64,
        active,
        sources,
    })
}

/// Delays `x` by `round(ms · sr / 1000)` samples, zero-filling the head and
/// keeping the original length.
pub fn inject_delay(x: &[f64], sr: u32, delay_ms: f64) -> Result<Vec<f64>, AudioError> {
    if !(delay_ms >= 0.0) || !delay_ms.is_finite() {
        return Err(AudioError::InvalidParams(format!("delay {delay_ms} ms")));
    }
    let shift = (delay_ms * sr as f64 / 1000.0).round() as usize;
    if shift >= x.len() && !x.is_empty() {
        return Err(AudioError::DelayTooLong { shift, len: x.len() });
    }
    let mut out = vec![0.0; x.len()];
    out[shift..].copy_from_slice(&x[..x.len() - shift]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|k| amp * (k as f64 * 0.3).sin()).collect()
    }

    #[test]
    fn frame_geometry() {
        let p = FrameParams::SPEECH;
        assert_eq!(p.frame_len(16000), 400);
        assert_eq!(p.hop_len(16000), 320);
        assert_eq!(frame_count(160_000, 400, 320), 499);
        assert_eq!(FrameParams::MUSIC.frame_len(16000), 2560);
    }

    #[test]
    fn full_overlap() {
        let a = tone(16000, 0.3);
        let b = tone(16000, 0.1);
        let plan = detect_overlap_frames(&[&a, &b], 16000, &FrameParams::SPEECH).unwrap();
        assert_eq!(plan.active.len(), plan.n_frames);
        assert!(plan.sources.iter().all(|s| s == &vec![0, 1]));
    }

    #[test]
    fn half_activity() {
        let a = tone(16000, 0.3);
        let mut b = tone(16000, 0.3);
        for v in &mut b[8000..] {
            *v = 0.0;
        }
        let plan = detect_overlap_frames(&[&a, &b], 16000, &FrameParams::SPEECH).unwrap();
        assert!(!plan.active.is_empty());
        assert!(plan.active.iter().all(|&f| f * 320 + 400 <= 8000 + 400));
        assert!(plan.active.iter().all(|&f| f * 320 < 8000));
        // permutation equivariance
        let swapped = detect_overlap_frames(&[&b, &a], 16000, &FrameParams::SPEECH).unwrap();
        assert_eq!(plan.active, swapped.active);
    }

    #[test]
    fn quiet_frame_excluded() {
        let a = tone(3200, 0.3);
        let mut b = tone(3200, 0.3);
        // frame 2 covers samples 640..1040; drop source 1 to −50 dB there
        for v in &mut b[600..1100] {
            *v *= 10f64.powf(-50.0 / 20.0);
        }
        let plan = detect_overlap_frames(&[&a, &b], 16000, &FrameParams::SPEECH).unwrap();
        assert!(!plan.active.contains(&2));
        assert!(plan.active.contains(&5));
    }

    #[test]
    fn delays() {
        let x = tone(16000, 0.5);
        assert_eq!(inject_delay(&x, 16000, 0.0).unwrap(), x);
        let y = inject_delay(&x, 16000, 20.0).unwrap();
        assert!(y[..320].iter().all(|v| *v == 0.0));
        assert_eq!(y[320], x[0]);
        let mut d = vec![0.0; 1000];
        d[100] = 1.0;
        let z = inject_delay(&d, 16000, 10.0).unwrap();
        assert_eq!(z[260], 1.0);
        let two = inject_delay(&inject_delay(&x, 16000, 5.0).unwrap(), 16000, 15.0).unwrap();
        assert_eq!(two, inject_delay(&x, 16000, 20.0).unwrap());
        assert!(matches!(inject_delay(&x, 16000, 2000.0), Err(AudioError::DelayTooLong { .. })));
    }
}
