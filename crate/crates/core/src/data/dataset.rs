//! Synthetic clip sets on disk.
//!
//! ```text
//! <dir>/clip_0000.metr   frames
//! <dir>/clip_0000.csv    ground-truth BVP
//! <dir>/manifest.csv     one row per clip with its full generator settings
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{read_signal, read_tensor, synth_clip, write_signal, write_tensor, Clip, SynthConfig, HR_MAX_BPM, HR_MIN_BPM};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str =
    "tensor,signal,hr_bpm,duration_s,fps,height,width,pulse_amplitude,noise_sigma,trend_slope,harmonic_ratio,jitter_px,seed";

/// `count` clips with heart rates drawn uniformly from `hr_range`. All other
/// settings come from `base`; each clip gets its own generator seed.
pub fn synth_set(base: &SynthConfig, count: usize, hr_range: (f64, f64), seed: u64) -> Result<Vec<(SynthConfig, Clip)>> {
    let (lo, hi) = hr_range;
    if !(HR_MIN_BPM <= lo && lo <= hi && hi <= HR_MAX_BPM) {
        return Err(Error::invalid(format!(
            "hr range {lo},{hi} must satisfy {HR_MIN_BPM} <= lo <= hi <= {HR_MAX_BPM}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let hr_bpm = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let cfg = SynthConfig { hr_bpm, seed: rng.random(), ..base.clone() };
            let clip = synth_clip(&cfg)?;
            Ok((cfg, clip))
        })
        .collect()
}

fn manifest_row(tensor: &str, signal: &str, c: &SynthConfig) -> String {
    format!(
        "{tensor},{signal},{},{},{},{},{},{},{},{},{},{},{}",
        c.hr_bpm,
        c.duration_s,
        c.fps,
        c.resolution.0,
        c.resolution.1,
        c.pulse_amplitude,
        c.noise_sigma,
        c.trend_slope,
        c.harmonic_ratio,
        c.jitter_px,
        c.seed
    )
}

pub fn write_dataset(dir: &Path, items: &[(SynthConfig, Clip)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (i, (cfg, clip)) in items.iter().enumerate() {
        let tensor = format!("clip_{i:04}.metr");
        let signal = format!("clip_{i:04}.csv");
        write_tensor(&dir.join(&tensor), &clip.frames)?;
        write_signal(&dir.join(&signal), &clip.bvp)?;
        manifest.push_str(&manifest_row(&tensor, &signal, cfg));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Loads every clip listed in `<dir>/manifest.csv`. Only the `tensor`,
/// `signal` and `hr_bpm` columns are required.
pub fn read_dataset(dir: &Path) -> Result<Vec<Clip>> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("data directory {} does not exist", dir.display())));
    }
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format("empty manifest"))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::format(format!("manifest has no {name} column")))
    };
    let (ti, si, hi) = (col("tensor")?, col("signal")?, col("hr_bpm")?);
    let mut clips = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(Error::format(format!("manifest row {} has {} cells, expected {}", n + 1, cells.len(), header.len())));
        }
        let hr: f64 = cells[hi]
            .parse()
            .map_err(|_| Error::format(format!("manifest row {}: bad hr_bpm {:?}", n + 1, cells[hi])))?;
        let bvp = read_signal(&dir.join(cells[si]))?;
        let frames = read_tensor(&dir.join(cells[ti]))?.with_fps(bvp.fps())?;
        clips.push(Clip::new(frames, bvp, hr)?);
    }
    if clips.is_empty() {
        return Err(Error::invalid(format!("manifest in {} lists no clips", dir.display())));
    }
    Ok(clips)
}
