//! Per-step rendering of an episode: world view, write weight, memory
//! read-out and read weight, as PNG panels, a CSV dump and a transcript.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};

use super::{Agent, PolicyAgent};
use crate::env::{footprint, EpisodeState, World};
use crate::error::{Error, Result};
use crate::memory::readout_map;
use crate::policy::{ModelParams, ModelState};

/// Pixels per cell side.
const CELL_PX: u32 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySummary {
    /// Frames written, including the initial one.
    pub frames: usize,
    pub steps: usize,
    pub reward: f64,
    pub solved: bool,
    /// Every file written, in order.
    pub files: Vec<PathBuf>,
}

fn render_err(frame: usize, what: &str, e: impl std::fmt::Display) -> Error {
    Error::Render(format!("frame {frame}, {what}: {e}"))
}

fn grid_image(width: usize, height: usize, color: impl Fn(usize, usize) -> Rgb<u8>) -> RgbImage {
    RgbImage::from_fn(width as u32 * CELL_PX, height as u32 * CELL_PX, |px, py| {
        color((px / CELL_PX) as usize, (py / CELL_PX) as usize)
    })
}

/// Black through red and yellow to white.
fn heat(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (3.0 * v).min(1.0);
    let g = (3.0 * v - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * v - 2.0).clamp(0.0, 1.0);
    Rgb([(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8])
}

/// Occupancy probability as gray: free is white, occupied black.
fn gray(p: f64) -> Rgb<u8> {
    let g = (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8;
    Rgb([g, g, g])
}

/// Normalises a weight to sum 1 and scales by its peak for display.
fn weight_panel(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = values.iter().sum();
    let normalized: Vec<f64> = if total > 0.0 {
        values.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; values.len()]
    };
    let peak = normalized.iter().copied().fold(0.0, f64::max);
    let display = normalized.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
    (normalized, display)
}

fn world_image(ep: &EpisodeState) -> RgbImage {
    let world = ep.world();
    let pose = ep.pose();
    let window: Vec<(i32, i32)> = footprint(pose).to_vec();
    grid_image(world.width(), world.height(), |x, y| {
        let (xi, yi) = (x as i32, y as i32);
        if (xi, yi) == (pose.x, pose.y) {
            return Rgb([220, 30, 30]);
        }
        let observed = ep.observed()[world.index(xi, yi)];
        let base = match (world.is_wall(xi, yi), observed) {
            (true, true) => [40, 40, 40],
            (true, false) => [90, 90, 90],
            (false, true) => [250, 250, 250],
            (false, false) => [180, 180, 180],
        };
        if window.contains(&(xi, yi)) {
            Rgb([base[0] / 2, base[1] / 2 + 60, base[2] / 2 + 120])
        } else {
            Rgb(base)
        }
    })
}

fn ascii_world(ep: &EpisodeState) -> String {
    let world = ep.world();
    let pose = ep.pose();
    let mut out = String::new();
    for y in 0..world.height() as i32 {
        for x in 0..world.width() as i32 {
            let c = if (x, y) == (pose.x, pose.y) {
                match pose.heading.letter() {
                    'N' => '^',
                    'E' => '>',
                    'S' => 'v',
                    _ => '<',
                }
            } else if world.is_wall(x, y) {
                '#'
            } else if ep.observed()[world.index(x, y)] {
                '.'
            } else {
                '?'
            };
            out.push(c);
        }
        out.push('\n');
    }
    out
}

struct Writer {
    dir: PathBuf,
    csv: String,
    transcript: String,
    files: Vec<PathBuf>,
}

impl Writer {
    fn save(&mut self, frame: usize, panel: &str, img: &RgbImage) -> Result<()> {
        let path = self.dir.join(format!("frame-{frame:04}-{panel}.png"));
        img.save(&path).map_err(|e| render_err(frame, panel, e))?;
        self.files.push(path);
        Ok(())
    }

    fn dump(&mut self, frame: usize, panel: &str, width: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(self.csv, "{frame},{panel},{},{},{v}", i % width, i / width);
        }
    }

    fn frame(&mut self, frame: usize, ep: &EpisodeState, state: Option<&ModelState>) -> Result<()> {
        self.save(frame, "world", &world_image(ep))?;
        let Some(mem) = state.and_then(|s| s.memory.as_ref()) else {
            return Ok(());
        };
        let (h, w) = (mem.write_w.height(), mem.write_w.width());
        let (write_n, write_d) = weight_panel(mem.write_w.values());
        let readout = readout_map(&mem.memory);
        let (read_n, read_d) = weight_panel(mem.read_w.values());
        self.save(frame, "write", &grid_image(w, h, |x, y| heat(write_d[y * w + x])))?;
        self.save(frame, "memory", &grid_image(w, h, |x, y| gray(readout[y * w + x])))?;
        self.save(frame, "read", &grid_image(w, h, |x, y| heat(read_d[y * w + x])))?;
        self.dump(frame, "write", w, &write_n);
        self.dump(frame, "memory", w, &readout);
        self.dump(frame, "read", w, &read_n);
        Ok(())
    }
}

/// Plays one greedy episode of `params` on `world` from its start pose and
/// renders every step. An episode of `L` steps gives `L + 1` frames.
pub fn replay_render(params: &ModelParams, world: Arc<World>, out: &Path, cap: Option<usize>) -> Result<ReplaySummary> {
    let start = world
        .start()
        .ok_or_else(|| Error::Invalid("replay needs a world with a start pose".into()))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut agent = PolicyAgent::new(params, 0);
    agent.reset(&world, start)?;
    let (ep, mut obs) = EpisodeState::start_at(world, start)?;
    let mut ep = ep.with_max_steps(cap);
    let mut w = Writer {
        dir: out.to_path_buf(),
        csv: String::from("frame,panel,x,y,value\n"),
        transcript: String::new(),
        files: Vec::new(),
    };
    let _ = writeln!(w.transcript, "frame 0 start {:?} observed {}", ep.pose(), ep.observed_count());
    w.transcript.push_str(&ascii_world(&ep));
    w.frame(0, &ep, agent.state())?;
    let mut total = 0.0;
    let mut frame = 0;
    while !ep.done() {
        let a = agent.act(&obs)?;
        let r = ep.step(a)?;
        frame += 1;
        total += r.reward;
        obs = r.observation;
        let _ = writeln!(
            w.transcript,
            "frame {frame} action {a:?} reward {:.4} new {} collided {} observed {}",
            r.reward,
            r.new_cells,
            r.collided,
            ep.observed_count()
        );
        w.transcript.push_str(&ascii_world(&ep));
        w.frame(frame, &ep, agent.state())?;
    }
    let csv = out.join("frames.csv");
    fs::write(&csv, &w.csv).map_err(|e| Error::io(&csv, e))?;
    let transcript = out.join("transcript.txt");
    fs::write(&transcript, &w.transcript).map_err(|e| Error::io(&transcript, e))?;
    w.files.push(csv);
    w.files.push(transcript);
    Ok(ReplaySummary {
        frames: frame + 1,
        steps: ep.steps(),
        reward: total,
        solved: ep.solved(),
        files: w.files,
    })
}
