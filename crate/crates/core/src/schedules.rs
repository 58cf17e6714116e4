//! Block-size schedules for every supported Cascade variant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Error, Result};

/// Frame length the `opt8` parameters were tuned for.
pub const OPT8_FRAME_LEN: usize = 1 << 14;

/// BICONF stop threshold used by the `mod1` variant.
pub const MOD1_BICONF_STOP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Original,
    Mod1,
    Opt2,
    Opt3,
    Opt4,
    Opt5,
    Opt6,
    Opt7,
    Opt8Table,
    Opt8Formula,
    Custom,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Original,
        Variant::Mod1,
        Variant::Opt2,
        Variant::Opt3,
        Variant::Opt4,
        Variant::Opt5,
        Variant::Opt6,
        Variant::Opt7,
        Variant::Opt8Table,
        Variant::Opt8Formula,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Mod1 => "mod1",
            Variant::Opt2 => "opt2",
            Variant::Opt3 => "opt3",
            Variant::Opt4 => "opt4",
            Variant::Opt5 => "opt5",
            Variant::Opt6 => "opt6",
            Variant::Opt7 => "opt7",
            Variant::Opt8Table => "opt8-table",
            Variant::Opt8Formula => "opt8-formula",
            Variant::Custom => "custom",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        let v = match s.trim().to_ascii_lowercase().as_str() {
            "original" | "orig" => Variant::Original,
            "mod1" => Variant::Mod1,
            "opt2" => Variant::Opt2,
            "opt3" => Variant::Opt3,
            "opt4" => Variant::Opt4,
            "opt5" => Variant::Opt5,
            "opt6" => Variant::Opt6,
            "opt7" => Variant::Opt7,
            "opt8" | "opt8-table" => Variant::Opt8Table,
            "opt8-formula" => Variant::Opt8Formula,
            "custom" => Variant::Custom,
            _ => return Err(Error::UnknownVariant(s.to_string())),
        };
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShuffleMode {
    #[default]
    Random,
    /// Random, but bits sharing a top-level block of the previous pass land
    /// in distinct blocks whenever the geometry allows it.
    ConstrainedRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiconfParams {
    /// Stop after this many consecutive iterations without a correction.
    pub s: usize,
}

/// Per-pass block sizes plus the variant's protocol switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub variant: Variant,
    /// Frame length the schedule was built for.
    pub n: usize,
    /// Block size of pass `i + 1`.
    pub k: Vec<usize>,
    #[serde(default)]
    pub biconf: Option<BiconfParams>,
    #[serde(default)]
    pub reuse_subblocks: bool,
    #[serde(default)]
    pub shuffle_mode: ShuffleMode,
    #[serde(default)]
    pub discard_singletons: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BlockSchedule {
    pub fn total_passes(&self) -> usize {
        self.k.len()
    }

    /// A plain Cascade schedule: explicit sizes, random shuffling, no extras.
    pub fn custom(n: usize, k: Vec<usize>) -> Result<BlockSchedule> {
        let schedule = BlockSchedule {
            variant: Variant::Custom,
            n,
            k,
            biconf: None,
            reuse_subblocks: false,
            shuffle_mode: ShuffleMode::Random,
            discard_singletons: false,
            warnings: Vec::new(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn with_reuse(mut self, on: bool) -> Self {
        self.reuse_subblocks = on;
        self
    }

    pub fn with_passes(mut self, passes: usize) -> Self {
        let last = *self.k.last().unwrap_or(&1);
        self.k.resize(passes.max(1), last);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config("frame length must be at least 1"));
        }
        if self.k.is_empty() {
            return Err(config("schedule has no passes"));
        }
        if self.k[0] > self.n {
            return Err(config(format!(
                "first block size k1={} exceeds frame length n={} (error-rate estimate too small for this frame)",
                self.k[0], self.n
            )));
        }
        if let Some(i) = self.k.iter().position(|&k| k == 0) {
            return Err(config(format!("block size of pass {} is zero", i + 1)));
        }
        if let Some(b) = &self.biconf {
            if b.s == 0 {
                return Err(config("BICONF stop threshold must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<BlockSchedule> {
        let schedule: BlockSchedule = serde_json::from_str(text)?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn load(path: &Path) -> Result<BlockSchedule> {
        BlockSchedule::from_json(&std::fs::read_to_string(path)?)
    }

    /// Compact one-line description for logs and metadata.
    pub fn describe(&self) -> String {
        let ks: Vec<String> = self.k.iter().map(|k| k.to_string()).collect();
        let mut s = format!("{} n={} k=[{}]", self.variant, self.n, ks.join(","));
        if let Some(b) = &self.biconf {
            s.push_str(&format!(" biconf(s={})", b.s));
        }
        if self.reuse_subblocks {
            s.push_str(" reuse");
        }
        if self.shuffle_mode == ShuffleMode::ConstrainedRandom {
            s.push_str(" constrained-shuffle");
        }
        if self.discard_singletons {
            s.push_str(" discard-singletons");
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRequest {
    pub variant: Variant,
    /// Error-rate estimate used to size the blocks.
    pub p_estimate: f64,
    pub n: usize,
}

// Guards ceil/floor against quotients such as 0.73/0.01 = 73.00000000000001.
const ROUNDING_SLACK: f64 = 1e-9;

fn ceil_int(x: f64) -> usize {
    (x - ROUNDING_SLACK * x.abs().max(1.0)).ceil().max(1.0) as usize
}

fn floor_int(x: f64) -> usize {
    (x + ROUNDING_SLACK * x.abs().max(1.0)).floor().max(1.0) as usize
}

fn pow2_ceil_exp(x: f64) -> usize {
    1usize << ceil_int(x).min(62)
}

/// Near-optimal block sizes for n = 2^14, one row per tabulated QBER.
pub const OPT8_TABLE: [(f64, usize, usize, usize); 12] = [
    (0.005, 256, 1024, 4096),
    (0.01, 128, 512, 4096),
    (0.02, 64, 512, 4096),
    (0.03, 32, 512, 4096),
    (0.04, 32, 256, 4096),
    (0.05, 16, 256, 4096),
    (0.06, 16, 256, 4096),
    (0.07, 16, 256, 4096),
    (0.08, 8, 256, 4096),
    (0.09, 8, 256, 4096),
    (0.10, 8, 256, 4096),
    (0.11, 8, 256, 4096),
];

fn opt8_table_row(p: f64) -> ((usize, usize, usize), Option<String>) {
    let (q, k1, k2, k3) = OPT8_TABLE
        .iter()
        .copied()
        .min_by(|a, b| (a.0 - p).abs().total_cmp(&(b.0 - p).abs()))
        .expect("table is non-empty");
    let warning = ((q - p).abs() > 1e-12).then(|| format!("opt8-table has no row for p={p}; using the row for Q={q}"));
    ((k1, k2, k3), warning)
}

/// Build the schedule of a catalogued variant.
pub fn build_schedule(req: &ScheduleRequest) -> Result<BlockSchedule> {
    let p = req.p_estimate;
    let n = req.n;
    if !(p > 0.0 && p <= 0.5) {
        return Err(usage(format!("error-rate estimate {p} outside (0, 0.5]")));
    }
    if n == 0 {
        return Err(usage("frame length must be at least 1"));
    }
    let half = n.div_ceil(2);
    let mut warnings = Vec::new();
    let mut biconf = None;
    let mut reuse = false;
    let mut shuffle = ShuffleMode::Random;
    let mut discard = false;

    let k: Vec<usize> = match req.variant {
        Variant::Original => {
            let k1 = ceil_int(0.73 / p);
            (0..4).map(|i| k1 << i).collect()
        }
        Variant::Mod1 => {
            let ln2 = std::f64::consts::LN_2;
            biconf = Some(BiconfParams { s: MOD1_BICONF_STOP });
            vec![floor_int(4.0 * ln2 / (3.0 * p)), floor_int(4.0 * ln2 / p)]
        }
        Variant::Opt2 => {
            let k1 = ceil_int(0.8 / p);
            let mut k = vec![k1, 5 * k1];
            k.resize(10, half);
            k
        }
        Variant::Opt3 | Variant::Opt4 | Variant::Opt5 | Variant::Opt6 => {
            reuse = req.variant != Variant::Opt3;
            if req.variant == Variant::Opt5 {
                shuffle = ShuffleMode::ConstrainedRandom;
            }
            discard = req.variant == Variant::Opt6;
            let k1 = ceil_int(1.0 / p);
            let mut k = vec![k1, 2 * k1];
            k.resize(16, half);
            k
        }
        Variant::Opt7 => {
            reuse = true;
            let k1 = pow2_ceil_exp((1.0 / p).log2());
            let mut k = vec![k1, 4 * k1];
            k.resize(14, half);
            k
        }
        Variant::Opt8Formula => {
            reuse = true;
            let alpha = (1.0 / p).log2() - 0.5;
            let mut k = vec![pow2_ceil_exp(alpha), pow2_ceil_exp((alpha + 12.0) / 2.0), 4096];
            k.resize(14, half);
            k
        }
        Variant::Opt8Table => {
            reuse = true;
            let ((k1, k2, k3), warning) = opt8_table_row(p);
            warnings.extend(warning);
            let mut k = vec![k1, k2, k3];
            k.resize(14, half);
            k
        }
        Variant::Custom => {
            return Err(usage("custom schedules are supplied as JSON, not built from an error-rate estimate"))
        }
    };

    if matches!(req.variant, Variant::Opt8Table | Variant::Opt8Formula) && n != OPT8_FRAME_LEN {
        warnings.push(format!("opt8 parameters were tuned for n={OPT8_FRAME_LEN}, running with n={n}"));
    }
    if k[0] > n {
        return Err(config(format!(
            "first block size k1={} exceeds frame length n={n} (p={p} too small for this frame)",
            k[0]
        )));
    }
    let schedule = BlockSchedule {
        variant: req.variant,
        n,
        k: k.into_iter().map(|ki| ki.min(n)).collect(),
        biconf,
        reuse_subblocks: reuse,
        shuffle_mode: shuffle,
        discard_singletons: discard,
        warnings,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Probability that a block of size ceil(1/q) holds an even number of
/// errors, i.e. `(1 + (1 - 2q)^ceil(1/q)) / 2`.
pub fn expected_errors_after_pass1(q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(usage(format!("error rate {q} outside (0, 0.5]")));
    }
    let k = ceil_int(1.0 / q) as i32;
    Ok((1.0 + (1.0 - 2.0 * q).powi(k)) / 2.0)
}
