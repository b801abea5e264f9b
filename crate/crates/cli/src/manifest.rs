//! Run manifests: every command writes a `manifest.txt` next to its outputs
//! recording the exact command line, format versions, seeds, the verbatim
//! configuration snapshot and the produced files, so any run can be
//! reproduced bit-exactly by replaying the recorded command.

use std::fs;
use std::io;
use std::path::Path;

use jumpscope::trace_io::TRACE_VERSION;

pub struct Manifest {
    command_line: String,
    config_snapshot: String,
    seeds: Vec<u64>,
    outputs: Vec<String>,
    wall_clock_s: f64,
}

impl Manifest {
    pub fn new(command_line: String, config_snapshot: String) -> Self {
        Manifest {
            command_line,
            config_snapshot,
            seeds: Vec::new(),
            outputs: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn wall_clock(&mut self, seconds: f64) {
        self.wall_clock_s = seconds;
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut text = String::new();
        text.push_str("jumpscope manifest v1\n");
        text.push_str(&format!("command = {}\n", self.command_line));
        text.push_str(&format!("trace_format_version = {TRACE_VERSION}\n"));
        for seed in &self.seeds {
            text.push_str(&format!("seed = {seed}\n"));
        }
        for output in &self.outputs {
            text.push_str(&format!("output = {output}\n"));
        }
        text.push_str(&format!("wall_clock_s = {:.3}\n", self.wall_clock_s));
        text.push_str("config_begin\n");
        text.push_str(&self.config_snapshot);
        if !self.config_snapshot.ends_with('\n') {
            text.push('\n');
        }
        text.push_str("config_end\n");
        fs::write(dir.join("manifest.txt"), text)
    }
}
