//! Forecast variable catalog: the ordered channel list that fixes the
//! variable axis of a [`Dataset`](crate::dataset::Dataset).
//!
//! Raw channels are WRF-NMM output fields. Derived channels are computed at
//! the station after interpolation of their raw inputs.
//!
//! Catalog files are line oriented; `#` starts a comment:
//!
//! ```text
//! R_H_GDS3_HTGL
//! U_GRD_GDS3_HTGL
//! V_GRD_GDS3_HTGL
//! WIND_SPEED_10M = wind_speed(U_GRD_GDS3_HTGL, V_GRD_GDS3_HTGL)
//! ```

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// The 26 WRF-NMM fields eligible as raw channels.
pub const RAW_VARIABLES: [&str; 26] = [
    "DPT_GDS3_HTGL",
    "HGT_GDS3_0DEG",
    "HGT_GDS3_CEIL",
    "HGT_GDS3_HTFL",
    "HGT_GDS3_SFC",
    "T_CDC_GDS3_EATM",
    "H_CDC_GDS3_HCY",
    "M_CDC_GDS3_MCY",
    "L_CDC_GDS3_MCY",
    "PLI_GDS3_SPDY",
    "LFT_X_GDS3_ISBY",
    "PRES_GDS3_SFC",
    "PRMSL_GDS3_MSL",
    "MSLET_GDS3_MSL",
    "P_WAT_GDS3_EATM",
    "POP_GDS3_SFC",
    "R_H_GDS3_HTGL",
    "R_H_GDS3_HYBL",
    "SPF_H_GDS3_HTGL",
    "SPF_H_GDS3_SPDY",
    "TMP_GDS3_HTGL",
    "TMP_GDS3_SFC",
    "U_GRD_GDS3_HTGL",
    "U_GRD_GDS3_SPDY",
    "V_GRD_GDS3_HTGL",
    "V_GRD_GDS3_SPDY",
];

pub const RH_2M: &str = "R_H_GDS3_HTGL";
pub const TMP_2M: &str = "TMP_GDS3_HTGL";
pub const TMP_SFC: &str = "TMP_GDS3_SFC";
pub const DPT_2M: &str = "DPT_GDS3_HTGL";
pub const U_10M: &str = "U_GRD_GDS3_HTGL";
pub const V_10M: &str = "V_GRD_GDS3_HTGL";
pub const WIND_SPEED: &str = "WIND_SPEED_10M";
pub const AIR_SEA_DIFF: &str = "AIR_SEA_TEMP_DIFF";

pub fn is_raw_variable(name: &str) -> bool {
    RAW_VARIABLES.contains(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formula {
    /// `sqrt(u² + v²)`
    WindSpeed,
    /// `air − surface`
    AirSeaTempDiff,
}

impl Formula {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "wind_speed" => Ok(Formula::WindSpeed),
            "air_sea_temp_diff" => Ok(Formula::AirSeaTempDiff),
            other => Err(Error::Config(format!("unknown derivation formula {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Formula::WindSpeed => "wind_speed",
            Formula::AirSeaTempDiff => "air_sea_temp_diff",
        }
    }

    pub fn arity(self) -> usize {
        2
    }

    fn apply(self, args: &[f64]) -> f64 {
        match self {
            Formula::WindSpeed => (args[0] * args[0] + args[1] * args[1]).sqrt(),
            Formula::AirSeaTempDiff => args[0] - args[1],
        }
    }
}

/// Evaluates a derived channel from its raw inputs; any missing input
/// makes the output missing.
pub fn derive_channel(formula: Formula, args: &[Option<f64>]) -> Option<f64> {
    debug_assert_eq!(args.len(), formula.arity());
    let mut vals = [0.0f64; 2];
    for (slot, a) in vals.iter_mut().zip(args) {
        *slot = (*a)?;
    }
    Some(formula.apply(&vals[..args.len()]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelKind {
    Raw,
    Derived { formula: Formula, inputs: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
}

impl Channel {
    pub fn raw(name: &str) -> Self {
        Channel { name: name.to_string(), kind: ChannelKind::Raw }
    }

    pub fn derived(name: &str, formula: Formula, inputs: &[&str]) -> Self {
        Channel {
            name: name.to_string(),
            kind: ChannelKind::Derived { formula, inputs: inputs.iter().map(|s| s.to_string()).collect() },
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self.kind, ChannelKind::Raw)
    }

    /// Parses one catalog line (`NAME` or `NAME = formula(A, B)`).
    pub fn parse(line: &str) -> Result<Self> {
        let line = line.trim();
        match line.split_once('=') {
            None => Ok(Channel::raw(line)),
            Some((name, rhs)) => {
                let rhs = rhs.trim();
                let open = rhs.find('(').ok_or_else(|| Error::Config(format!("expected formula(args) in {line:?}")))?;
                if !rhs.ends_with(')') {
                    return Err(Error::Config(format!("unterminated argument list in {line:?}")));
                }
                let formula = Formula::from_name(rhs[..open].trim())?;
                let inputs: Vec<String> = rhs[open + 1..rhs.len() - 1]
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if inputs.len() != formula.arity() {
                    return Err(Error::Config(format!(
                        "{} takes {} inputs, got {}",
                        formula.name(),
                        formula.arity(),
                        inputs.len()
                    )));
                }
                Ok(Channel { name: name.trim().to_string(), kind: ChannelKind::Derived { formula, inputs } })
            }
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ChannelKind::Raw => write!(f, "{}", self.name),
            ChannelKind::Derived { formula, inputs } => {
                write!(f, "{} = {}({})", self.name, formula.name(), inputs.join(", "))
            }
        }
    }
}

/// A validated derived channel with its inputs resolved to catalog indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDerivation {
    pub index: usize,
    pub formula: Formula,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableCatalog {
    channels: Vec<Channel>,
    derivations: Vec<ResolvedDerivation>,
}

impl VariableCatalog {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("catalog has no channels".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, c) in channels.iter().enumerate() {
            if c.name.is_empty() || c.name.contains(char::is_whitespace) {
                return Err(Error::Config(format!("bad channel name {:?}", c.name)));
            }
            if index.insert(c.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate channel {:?}", c.name)));
            }
            if c.is_raw() && !is_raw_variable(&c.name) {
                return Err(Error::Config(format!("{:?} is not one of the 26 WRF-NMM raw variables", c.name)));
            }
        }
        let mut derivations = Vec::new();
        for (i, c) in channels.iter().enumerate() {
            if let ChannelKind::Derived { formula, inputs } = &c.kind {
                let mut resolved = Vec::with_capacity(inputs.len());
                for input in inputs {
                    match index.get(input.as_str()) {
                        Some(&j) if channels[j].is_raw() => resolved.push(j),
                        Some(_) => {
                            return Err(Error::Config(format!("{:?} derives from non-raw channel {input:?}", c.name)))
                        }
                        None => {
                            return Err(Error::Config(format!("{:?} references unknown channel {input:?}", c.name)))
                        }
                    }
                }
                derivations.push(ResolvedDerivation { index: i, formula: *formula, inputs: resolved });
            }
        }
        Ok(VariableCatalog { channels, derivations })
    }

    /// All 26 raw variables followed by wind speed and air–sea temperature difference.
    pub fn standard() -> Self {
        let mut channels: Vec<Channel> = RAW_VARIABLES.iter().map(|n| Channel::raw(n)).collect();
        channels.push(Channel::derived(WIND_SPEED, Formula::WindSpeed, &[U_10M, V_10M]));
        channels.push(Channel::derived(AIR_SEA_DIFF, Formula::AirSeaTempDiff, &[TMP_2M, TMP_SFC]));
        VariableCatalog::new(channels).expect("standard catalog is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut channels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ch = Channel::parse(line).map_err(|e| Error::parse(lineno as u64 + 1, e.to_string()))?;
            channels.push(ch);
        }
        VariableCatalog::new(channels)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.channels {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn raw_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.channels.iter().enumerate().filter(|(_, c)| c.is_raw()).map(|(i, _)| i)
    }

    pub fn derivations(&self) -> &[ResolvedDerivation] {
        &self.derivations
    }
}
