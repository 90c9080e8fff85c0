//! Log-mel spectrogram of a WAV file (or a built-in chirp), written as a PGM.
//!
//! ```text
//! cargo run --release --example mel_spectrogram -- [input.wav] [out.pgm]
//! ```

use std::f64::consts::PI;

use ftfd::audio::{read_wav, window_for_frames, MelFrontend, LOG_FLOOR};
use ftfd::model::{write_pgm, PgmImage};

fn main() -> ftfd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (samples, rate) = match args.first() {
        Some(path) => {
            let wav = read_wav(path)?;
            (wav.samples(), wav.sample_rate)
        }
        None => {
            // one second sweeping 200 Hz -> 4 kHz
            let sr = 16_000.0;
            let x = (0..16_000)
                .map(|i| {
                    let t = i as f64 / sr;
                    0.5 * (2.0 * PI * (200.0 * t + 0.5 * 3800.0 * t * t)).sin()
                })
                .collect();
            (x, 16_000)
        }
    };
    let fe = MelFrontend::default();
    // every whole video frame the stream covers
    let frames = (samples.len() as f64 / rate as f64 * ftfd::audio::VIDEO_FPS) as usize;
    let window = window_for_frames(&samples, rate, 0, frames.max(1), fe.config().n_fft)?;
    let spec = fe.mel_spectrogram(&window)?;
    let (m, t) = (spec.n_mels(), spec.n_steps());
    println!("{m} mel bins x {t} steps ({:.2} s)", window.duration());

    let data = spec.mels.data();
    let hi = data.iter().cloned().fold(LOG_FLOOR, f64::max);
    // low frequencies at the bottom
    let mut unit = Vec::with_capacity(m * t);
    for row in (0..m).rev() {
        unit.extend(
            data[row * t..(row + 1) * t]
                .iter()
                .map(|v| (v - LOG_FLOOR) / (hi - LOG_FLOOR).max(1e-12)),
        );
    }
    let out = args.get(1).map_or("mel.pgm", String::as_str);
    write_pgm(out, &PgmImage::from_unit_map(m, t, &unit)?)?;
    println!("wrote {out}");
    Ok(())
}
