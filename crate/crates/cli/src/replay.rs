use std::fmt::Write as _;
use std::io::{self, IsTerminal, Write};
use std::time::Duration;

use riskdrive::road::trace::{frames, parse_trace, TraceRecord};
use riskdrive::EnvConfig;

use crate::{Failure, ReplayArgs};

const WIDTH: usize = 100;
const HEIGHT: usize = 30;

/// Axis-aligned bounds of every position in the trace, padded to a non-degenerate box.
fn bounds(records: &[TraceRecord]) -> (f64, f64, f64, f64) {
    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for r in records {
        x0 = x0.min(r.x);
        y0 = y0.min(r.y);
        x1 = x1.max(r.x);
        y1 = y1.max(r.y);
    }
    let pad = 5.0;
    (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
}

pub fn render_ascii(frame: &[TraceRecord], b: (f64, f64, f64, f64)) -> String {
    let (x0, y0, x1, y1) = b;
    let mut grid = vec![vec!['.'; WIDTH]; HEIGHT];
    for r in frame {
        let col = ((r.x - x0) / (x1 - x0) * (WIDTH - 1) as f64).round() as usize;
        let row = ((y1 - r.y) / (y1 - y0) * (HEIGHT - 1) as f64).round() as usize;
        let c = if r.crashed {
            'X'
        } else if r.ego {
            'E'
        } else {
            'o'
        };
        let cell = &mut grid[row.min(HEIGHT - 1)][col.min(WIDTH - 1)];
        if *cell != 'E' {
            *cell = c;
        }
    }
    let mut out = String::with_capacity((WIDTH + 1) * HEIGHT);
    for row in grid {
        out.extend(row);
        out.push('\n');
    }
    out
}

pub fn render_table(frame: &[TraceRecord]) -> String {
    let mut out = format!(
        "{:>7} {:>10} {:>10} {:>8} {:>7} {:>5}  flags\n",
        "vehicle", "x", "y", "heading", "speed", "lane"
    );
    for r in frame {
        let mut flags = Vec::new();
        if r.ego {
            flags.push("ego".to_string());
        }
        if r.crashed {
            flags.push("crashed".to_string());
        }
        flags.extend(r.events.iter().cloned());
        let _ = writeln!(
            out,
            "{:>7} {:>10.2} {:>10.2} {:>8.3} {:>7.2} {:>5}  {}",
            r.vehicle,
            r.x,
            r.y,
            r.heading,
            r.speed,
            r.lane,
            flags.join(",")
        );
    }
    out
}

pub fn run(args: ReplayArgs) -> Result<(), Failure> {
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(Failure::Usage(format!(
            "--speed must be a positive number, got {}",
            args.speed
        )));
    }
    let text = std::fs::read_to_string(&args.trace)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.trace.display())))?;
    let records = parse_trace(&text)?;
    let frames = frames(&records);
    let b = bounds(&records);
    let stdout = io::stdout();
    let animate = stdout.is_terminal();
    let delay =
        Duration::from_secs_f64(1.0 / (EnvConfig::default().physics_frequency * args.speed));
    let mut out = stdout.lock();
    for (i, frame) in frames.iter().enumerate() {
        let body = if args.ascii {
            render_ascii(frame, b)
        } else {
            render_table(frame)
        };
        let shown = writeln!(
            out,
            "frame {}/{} tick {}",
            i + 1,
            frames.len(),
            frame[0].tick
        )
        .and_then(|_| out.write_all(body.as_bytes()))
        .and_then(|_| out.flush());
        if shown.is_err() {
            // Closed pipe: stop quietly.
            return Ok(());
        }
        if animate {
            std::thread::sleep(delay);
        }
    }
    Ok(())
}
