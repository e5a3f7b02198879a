//! TOML run configuration. Schema-validated up front: unknown keys are
//! rejected so typos fail loudly before any computation starts.

use anyhow::{bail, Context};
use serde::Deserialize;
use spqrx::dist::BlendSpec;
use spqrx::network::{Activation, XiActivation};
use spqrx::regression::{Architecture, GridSpec, Mode, TrainingConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeField,
    #[serde(default)]
    pub seed: u64,
    pub architecture: ArchSection,
    #[serde(default)]
    pub xi: XiSection,
    #[serde(default)]
    pub blend: Option<BlendSection>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub grid: Option<GridSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeField {
    Spqr,
    Spqrx,
}

impl From<ModeField> for Mode {
    fn from(m: ModeField) -> Mode {
        match m {
            ModeField::Spqr => Mode::Spqr,
            ModeField::Spqrx => Mode::Spqrx,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub k: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_order")]
    pub spline_order: usize,
}

fn default_activation() -> String {
    "sigmoid".into()
}

fn default_order() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSection {
    #[serde(default = "default_xi_kind")]
    pub activation: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

fn default_xi_kind() -> String {
    "scaled-tanh".into()
}

impl Default for XiSection {
    fn default() -> Self {
        XiSection {
            activation: default_xi_kind(),
            lo: None,
            hi: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendSection {
    pub p_a: f64,
    pub p_b: f64,
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn default_c2() -> f64 {
    5.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub density_penalty: f64,
    pub penalty_grid: usize,
    pub l1_xi: f64,
    pub batch_size: usize,
    pub restart_decay: f64,
    pub max_restarts: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        TrainingSection {
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            patience: d.patience,
            validation_fraction: d.validation_fraction,
            density_penalty: d.density_penalty,
            penalty_grid: d.penalty_grid,
            l1_xi: d.l1_xi,
            batch_size: d.batch_size,
            restart_decay: d.restart_decay,
            max_restarts: d.max_restarts,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocessing {
    /// Fit the square root of the response; predictions are squared back.
    pub sqrt_transform: bool,
    /// Response column name; defaults to `y`, else the last column.
    pub response_column: Option<String>,
    /// Covariate column names, in order; defaults to all non-response
    /// columns in file order.
    pub covariate_columns: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub k: Vec<usize>,
    pub n_h: Vec<usize>,
    pub activation: Vec<String>,
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub c1: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: RunConfig = toml::from_str(text).context("config file rejected")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.mode == ModeField::Spqrx && self.blend.is_none() {
            bail!("mode = \"spqrx\" requires a [blend] section");
        }
        self.training_config().validate()?;
        let _ = self.architecture()?;
        if let Some(b) = self.blend_spec()? {
            b.validate()?;
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode.into()
    }

    pub fn xi_activation(&self) -> anyhow::Result<XiActivation> {
        let act = match self.xi.activation.as_str() {
            "scaled-tanh" | "tanh" => XiActivation::ScaledTanh {
                lo: self.xi.lo.unwrap_or(-0.5),
                hi: self.xi.hi.unwrap_or(0.7),
            },
            "logistic" | "sigmoid" => XiActivation::Logistic,
            "exponential" | "exp" => XiActivation::Exponential,
            other => bail!("unknown xi activation '{other}'"),
        };
        act.validate()?;
        Ok(act)
    }

    pub fn architecture(&self) -> anyhow::Result<Architecture> {
        Ok(Architecture {
            num_basis: self.architecture.k,
            spline_order: self.architecture.spline_order,
            hidden: self.architecture.hidden.clone(),
            activation: self.architecture.activation.parse::<Activation>()?,
            xi_activation: self.xi_activation()?,
        })
    }

    pub fn blend_spec(&self) -> anyhow::Result<Option<BlendSpec>> {
        match &self.blend {
            None => Ok(None),
            Some(b) => Ok(Some(BlendSpec {
                p_a: b.p_a,
                p_b: b.p_b,
                c1: b.c1,
                c2: b.c2,
            })),
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            density_penalty: t.density_penalty,
            penalty_grid: t.penalty_grid,
            l1_xi: t.l1_xi,
            seed: self.seed,
            batch_size: t.batch_size,
            restart_decay: t.restart_decay,
            max_restarts: t.max_restarts,
        }
    }

    pub fn grid_spec(&self) -> anyhow::Result<Option<GridSpec>> {
        let Some(g) = &self.grid else {
            return Ok(None);
        };
        let activation = g
            .activation
            .iter()
            .map(|s| s.parse::<Activation>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(Some(GridSpec {
            num_basis: g.k.clone(),
            hidden_width: g.n_h.clone(),
            activation,
            p_a: g.p_a.clone(),
            p_b: g.p_b.clone(),
            c1: g.c1.clone(),
        }))
    }
}
