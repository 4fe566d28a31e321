//! Controllable Mandarin text-to-speech with additive style fusion.
//!
//! Pinyin text is split into parallel phoneme and tone streams, encoded by
//! two disjoint Transformer stacks, expanded to frame rate by a duration
//! adaptor, summed, and decoded into an 80-band log-mel spectrogram that a
//! Griffin-Lim vocoder turns into audio. The style (tone) stack can be
//! trained jointly or adapted on top of a frozen phoneme path.

pub mod autodiff;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod pinyin;
pub mod seed;
pub mod trainer;
