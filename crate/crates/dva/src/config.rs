//! Flat `key = value` run configuration: the file format, command-line
//! overrides and the canonical serialization written back into every run
//! directory as `resolved.config`.
//!
//! Every key has a default, so an empty file (or no file at all) is a valid
//! configuration. Later assignments win, both inside a file and when command
//! line overrides are applied on top. Unknown keys and unparseable values are
//! rejected by name. `serialize` emits every key with its resolved value in a
//! fixed order; feeding that text back through `parse` reproduces the run.

use std::path::{Path, PathBuf};

use crate::data::DataConfig;
use crate::layers::DeconvInit;
use crate::network::{FusionMode, NetworkSpec, UpsamplingMode};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Network size preset the architecture keys start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Tiny,
}

/// A complete run description assembled from defaults, an optional config
/// file and command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    /// Tap override; `None` keeps the profile's taps. Custom taps derive
    /// their decoder chains by channel halving (see [`RunConfig::network_spec`]).
    pub taps: Option<Vec<String>>,
    pub fusion: FusionMode,
    pub upsampling: UpsamplingMode,
    pub deconv_init: DeconvInit,
    pub deep_supervision: bool,
    /// Optimizer settings; its `seed` field is ignored in favor of the global
    /// [`RunConfig::seed`].
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub data: DataConfig,
    /// Single seed for weight init and batch sampling.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: Profile::Full,
            taps: None,
            fusion: FusionMode::LearnedSigmoid,
            upsampling: UpsamplingMode::Learned,
            deconv_init: DeconvInit::Bilinear,
            deep_supervision: true,
            train: TrainConfig::default(),
            manifest: None,
            data: DataConfig::default(),
            seed: 1,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn base_spec(profile: Profile) -> NetworkSpec {
    match profile {
        Profile::Full => NetworkSpec::full(),
        Profile::Tiny => NetworkSpec::tiny(),
    }
}

/// Decoder chain for a tap named `conv{B}-{i}`: the tap sits behind `B - 1`
/// pools, and each upsampling stage halves the channel count down to `base`
/// (32 on the full profile, 4 on tiny). Unparseable names yield an empty
/// chain and are left for spec validation to report.
fn derived_chain(tap: &str, base: usize) -> Vec<usize> {
    let Some(block) = tap
        .strip_prefix("conv")
        .and_then(|rest| rest.split_once('-'))
        .and_then(|(b, _)| b.parse::<usize>().ok())
    else {
        return Vec::new();
    };
    let depth = block.saturating_sub(1);
    (0..depth).map(|i| base << (depth - 1 - i)).collect()
}

impl RunConfig {
    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped; `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.assign(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` assignment (an optional `--` prefix is
    /// stripped, so command-line override tokens can be passed verbatim).
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let body = arg.strip_prefix("--").unwrap_or(arg);
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {arg:?} is not of the form key=value"))
        })?;
        self.set(key.trim(), value.trim())
    }

    /// Sets one key; unknown keys and bad values are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.assign(key, value).map_err(Error::Config)
    }

    fn assign(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let bad = |expected: &str| format!("bad value {value:?} for {key}: expected {expected}");
        match key {
            "net.profile" => {
                self.profile = match value {
                    "full" => Profile::Full,
                    "tiny" => Profile::Tiny,
                    _ => return Err(bad("full or tiny")),
                }
            }
            "net.taps" => {
                let taps: Vec<String> = value
                    .split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect();
                if taps.is_empty() {
                    return Err(bad("a comma-separated list of encoder layers"));
                }
                self.taps = Some(taps);
            }
            "net.fusion" => {
                self.fusion = match value {
                    "learned_sigmoid" => FusionMode::LearnedSigmoid,
                    "learned_linear" => FusionMode::LearnedLinear,
                    "average" => FusionMode::Average,
                    _ => return Err(bad("learned_sigmoid, learned_linear or average")),
                }
            }
            "net.upsampling" => {
                self.upsampling = match value {
                    "learned" => UpsamplingMode::Learned,
                    "fixed_bilinear" => UpsamplingMode::FixedBilinear,
                    _ => return Err(bad("learned or fixed_bilinear")),
                }
            }
            "net.deconv_init" => {
                self.deconv_init = match value {
                    "bilinear" => DeconvInit::Bilinear,
                    "gaussian" => DeconvInit::Gaussian,
                    _ => return Err(bad("bilinear or gaussian")),
                }
            }
            "net.deep_supervision" => self.deep_supervision = parse_bool(value).ok_or_else(|| bad("true or false"))?,
            "train.iterations" => self.train.iterations = parse_count(value).ok_or_else(|| bad("a nonnegative integer"))?,
            "train.batch_size" => self.train.batch_size = parse_positive(value).ok_or_else(|| bad("a positive integer"))?,
            "train.learning_rate" => self.train.learning_rate = parse_pos_f64(value).ok_or_else(|| bad("a positive number"))?,
            "train.momentum" => {
                self.train.momentum = parse_f64_in(value, 0.0..1.0).ok_or_else(|| bad("a number in [0, 1)"))?
            }
            "train.weight_decay" => {
                self.train.weight_decay = parse_nonneg_f64(value).ok_or_else(|| bad("a nonnegative number"))?
            }
            "train.lr_decay_factor" => {
                self.train.lr_decay_factor =
                    parse_f64_in(value, f64::MIN_POSITIVE..1.0 + f64::EPSILON)
                        .filter(|&v| v <= 1.0)
                        .ok_or_else(|| bad("a number in (0, 1]"))?
            }
            "train.lr_decay_every" => self.train.lr_decay_every = parse_count(value).ok_or_else(|| bad("a nonnegative integer"))?,
            "train.validate_every" => self.train.validate_every = parse_count(value).ok_or_else(|| bad("a nonnegative integer"))?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse_count(value).ok_or_else(|| bad("a nonnegative integer"))?,
            "train.threads" => self.train.threads = parse_positive(value).ok_or_else(|| bad("a positive integer"))?,
            "data.manifest" => {
                self.manifest = match value {
                    "none" => None,
                    _ => Some(PathBuf::from(value)),
                }
            }
            "data.max_side" => self.data.max_side = parse_positive(value).ok_or_else(|| bad("a positive integer"))?,
            "data.blur_sigma" => {
                self.data.blur_sigma = match value {
                    "auto" => None,
                    _ => Some(parse_pos_f64(value).ok_or_else(|| bad("a positive number or auto"))?),
                }
            }
            "data.mean" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("three comma-separated numbers"))?;
                if parts.len() != 3 || parts.iter().any(|v| !v.is_finite()) {
                    return Err(bad("three comma-separated numbers"));
                }
                self.data.mean = [parts[0], parts[1], parts[2]];
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// The taps actually in effect (override or profile default).
    pub fn resolved_taps(&self) -> Vec<String> {
        self.taps
            .clone()
            .unwrap_or_else(|| base_spec(self.profile).taps)
    }

    /// Builds the architecture description: the profile preset with this
    /// config's mode switches applied. A tap override replaces the tap list
    /// and derives each decoder chain by channel halving, which reproduces
    /// the built-in chains for the default taps.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let mut spec = base_spec(self.profile);
        spec.fusion = self.fusion;
        spec.upsampling = self.upsampling;
        spec.deconv_init = self.deconv_init;
        spec.deep_supervision = self.deep_supervision;
        if let Some(taps) = &self.taps {
            let base = match self.profile {
                Profile::Full => 32,
                Profile::Tiny => 4,
            };
            spec.taps = taps.clone();
            spec.decoder_channels = taps.iter().map(|t| derived_chain(t, base)).collect();
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Optimizer settings with the global seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn data_config(&self) -> DataConfig {
        self.data.clone()
    }

    /// Checks the whole configuration, not just individual values.
    pub fn validate(&self) -> Result<()> {
        self.network_spec()?;
        self.train_config().validate()
    }

    /// Canonical text form: every key in a fixed order with its resolved
    /// value. Parsing the result reproduces this configuration.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line(
            "net.profile",
            match self.profile {
                Profile::Full => "full",
                Profile::Tiny => "tiny",
            }
            .into(),
        );
        line("net.taps", self.resolved_taps().join(","));
        line(
            "net.fusion",
            match self.fusion {
                FusionMode::LearnedSigmoid => "learned_sigmoid",
                FusionMode::LearnedLinear => "learned_linear",
                FusionMode::Average => "average",
            }
            .into(),
        );
        line(
            "net.upsampling",
            match self.upsampling {
                UpsamplingMode::Learned => "learned",
                UpsamplingMode::FixedBilinear => "fixed_bilinear",
            }
            .into(),
        );
        line(
            "net.deconv_init",
            match self.deconv_init {
                DeconvInit::Bilinear => "bilinear",
                DeconvInit::Gaussian => "gaussian",
            }
            .into(),
        );
        line("net.deep_supervision", self.deep_supervision.to_string());
        line("train.iterations", self.train.iterations.to_string());
        line("train.batch_size", self.train.batch_size.to_string());
        line("train.learning_rate", self.train.learning_rate.to_string());
        line("train.momentum", self.train.momentum.to_string());
        line("train.weight_decay", self.train.weight_decay.to_string());
        line("train.lr_decay_factor", self.train.lr_decay_factor.to_string());
        line("train.lr_decay_every", self.train.lr_decay_every.to_string());
        line("train.validate_every", self.train.validate_every.to_string());
        line(
            "train.checkpoint_every",
            self.train.checkpoint_every.to_string(),
        );
        line("train.threads", self.train.threads.to_string());
        line(
            "data.manifest",
            self.manifest
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        line("data.max_side", self.data.max_side.to_string());
        line(
            "data.blur_sigma",
            self.data
                .blur_sigma
                .map(|v| v.to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        line(
            "data.mean",
            self.data
                .mean
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        line("seed", self.seed.to_string());
        line("out_dir", self.out_dir.display().to_string());
        s
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_count(v: &str) -> Option<usize> {
    v.parse().ok()
}

fn parse_positive(v: &str) -> Option<usize> {
    v.parse().ok().filter(|&n: &usize| n > 0)
}

fn parse_pos_f64(v: &str) -> Option<f64> {
    v.parse().ok().filter(|x: &f64| *x > 0.0 && x.is_finite())
}

fn parse_nonneg_f64(v: &str) -> Option<f64> {
    v.parse().ok().filter(|x: &f64| *x >= 0.0 && x.is_finite())
}

fn parse_f64_in(v: &str, range: std::ops::Range<f64>) -> Option<f64> {
    v.parse().ok().filter(|x: &f64| range.contains(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_the_full_profile() {
        let cfg = RunConfig::default();
        let spec = cfg.network_spec().unwrap();
        let full = NetworkSpec::full();
        assert_eq!(spec.taps, full.taps);
        assert_eq!(spec.decoder_channels, full.decoder_channels);
        assert_eq!(spec.fusion, FusionMode::LearnedSigmoid);
        assert!(spec.deep_supervision);
        assert_eq!(cfg.train_config().seed, 1);
        assert_eq!(cfg.out_dir, PathBuf::from("run"));
        assert!(cfg.manifest.is_none());
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_text_is_the_default_config() {
        let cfg = RunConfig::parse("", Path::new("empty.config")).unwrap();
        assert_eq!(cfg.serialize(), RunConfig::default().serialize());
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let mut cfg = RunConfig::default();
        for kv in [
            "net.profile=tiny",
            "net.fusion=average",
            "net.upsampling=fixed_bilinear",
            "net.deconv_init=gaussian",
            "net.deep_supervision=false",
            "train.iterations=250",
            "train.learning_rate=0.002",
            "train.momentum=0.5",
            "train.weight_decay=0.0005",
            "data.manifest=/tmp/set/manifest.tsv",
            "data.max_side=64",
            "data.blur_sigma=1.5",
            "data.mean=0.5,0.4,0.3",
            "seed=99",
            "out_dir=/tmp/out",
        ] {
            cfg.apply_override(kv).unwrap();
        }
        let text = cfg.serialize();
        let reparsed = RunConfig::parse(&text, Path::new("resolved.config")).unwrap();
        assert_eq!(reparsed.serialize(), text);
        assert_eq!(reparsed.profile, Profile::Tiny);
        assert_eq!(reparsed.train.iterations, 250);
        assert_eq!(reparsed.data.blur_sigma, Some(1.5));
        assert_eq!(reparsed.manifest, Some(PathBuf::from("/tmp/set/manifest.tsv")));
        assert_eq!(reparsed.seed, 99);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "\n# a comment\n  net.profile = tiny  \n\ntrain.batch_size=4\n";
        let cfg = RunConfig::parse(text, Path::new("c")).unwrap();
        assert_eq!(cfg.profile, Profile::Tiny);
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("net.depth", "3").unwrap_err();
        assert!(err.to_string().contains("net.depth"), "{err}");

        let err = RunConfig::parse("net.profile = tiny\nnet.depth = 3\n", Path::new("f.config"))
            .unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("net.depth"));
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut cfg = RunConfig::default();
        for (key, value) in [
            ("net.profile", "huge"),
            ("net.fusion", "max"),
            ("net.deep_supervision", "yes"),
            ("train.momentum", "1.0"),
            ("train.momentum", "fast"),
            ("train.batch_size", "0"),
            ("train.learning_rate", "-1"),
            ("train.lr_decay_factor", "0"),
            ("train.lr_decay_factor", "1.5"),
            ("data.blur_sigma", "-2"),
            ("data.mean", "1,2"),
            ("data.mean", "a,b,c"),
            ("seed", "-3"),
        ] {
            let err = cfg.set(key, value).unwrap_err();
            assert!(err.to_string().contains(key), "{key}={value}: {err}");
        }
        // Boundary values that must be accepted.
        cfg.set("train.momentum", "0").unwrap();
        cfg.set("train.lr_decay_factor", "1").unwrap();
        cfg.set("train.lr_decay_every", "0").unwrap();
    }

    #[test]
    fn overrides_apply_with_last_wins() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("--train.iterations=50").unwrap();
        cfg.apply_override("train.iterations=70").unwrap();
        assert_eq!(cfg.train.iterations, 70);
        assert!(cfg.apply_override("--train.iterations").is_err());
    }

    #[test]
    fn custom_taps_derive_halving_chains() {
        let mut cfg = RunConfig::default();
        cfg.set("net.profile", "tiny").unwrap();
        cfg.set("net.taps", "conv4-3").unwrap();
        let spec = cfg.network_spec().unwrap();
        assert_eq!(spec.taps, vec!["conv4-3".to_string()]);
        assert_eq!(spec.decoder_channels, vec![vec![16, 8, 4]]);

        cfg.set("net.profile", "full").unwrap();
        cfg.set("net.taps", "conv3-3, conv5-1").unwrap();
        let spec = cfg.network_spec().unwrap();
        assert_eq!(
            spec.decoder_channels,
            vec![vec![64, 32], vec![256, 128, 64, 32]]
        );

        // The default tap list derives the built-in chains.
        cfg.set("net.taps", "conv3-3,conv4-3,conv5-3").unwrap();
        assert_eq!(
            cfg.network_spec().unwrap().decoder_channels,
            NetworkSpec::full().decoder_channels
        );
    }

    #[test]
    fn bad_taps_fail_spec_validation() {
        let mut cfg = RunConfig::default();
        cfg.set("net.taps", "conv9-1").unwrap();
        assert!(cfg.network_spec().is_err());
        cfg.set("net.taps", "pool3").unwrap();
        assert!(cfg.network_spec().is_err());
        // A tap before any pooling has nothing to upsample.
        cfg.set("net.taps", "conv1-2").unwrap();
        assert!(cfg.network_spec().is_err());
    }

    #[test]
    fn blur_sigma_accepts_auto_and_numbers() {
        let mut cfg = RunConfig::default();
        cfg.set("data.blur_sigma", "2.5").unwrap();
        assert_eq!(cfg.data.blur_sigma, Some(2.5));
        cfg.set("data.blur_sigma", "auto").unwrap();
        assert_eq!(cfg.data.blur_sigma, None);
        assert!(cfg.serialize().contains("data.blur_sigma = auto"));
    }

    #[test]
    fn global_seed_feeds_the_trainer() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "77").unwrap();
        assert_eq!(cfg.train_config().seed, 77);
        assert_eq!(cfg.train.seed, TrainConfig::default().seed);
    }
}
