//! Agent checkpoint container.
//!
//! One file holding, in order: a magic header, a caller-supplied config echo
//! (UTF-8 text), the numeric agent configuration, four network blocks in the
//! standalone parameter format (policy, value, target policy, target value),
//! and both optimizer states. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::checkpoint as netfmt;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::OptimizerState;

use super::{Agent, AgentConfig, CapsConfig, L2c2Config, LearnerError, Mode, StepScratch};

const AGENT_MAGIC: &[u8; 8] = b"SMRLAGT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentCheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not an agent checkpoint)")]
    BadMagic,
    #[error("unsupported agent checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed agent checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Network(#[from] CheckpointError),
    #[error(transparent)]
    Learner(#[from] Box<LearnerError>),
}

fn write_optimizer(w: &mut impl Write, opt: &OptimizerState) -> std::io::Result<()> {
    netfmt::write_f64(w, opt.learning_rate)?;
    netfmt::write_f64(w, opt.beta1)?;
    netfmt::write_f64(w, opt.beta2)?;
    netfmt::write_f64(w, opt.eps)?;
    netfmt::write_u64(w, opt.step_count())?;
    let (m, v) = opt.moments();
    netfmt::write_u32(w, m.len() as u32)?;
    for (i, chunk) in m.iter().enumerate() {
        netfmt::write_named_array(w, &format!("m{i}"), chunk)?;
    }
    for (i, chunk) in v.iter().enumerate() {
        netfmt::write_named_array(w, &format!("v{i}"), chunk)?;
    }
    Ok(())
}

fn read_optimizer(r: &mut impl Read) -> Result<OptimizerState, AgentCheckpointError> {
    let learning_rate = netfmt::read_f64(r)?;
    let beta1 = netfmt::read_f64(r)?;
    let beta2 = netfmt::read_f64(r)?;
    let eps = netfmt::read_f64(r)?;
    let step = netfmt::read_u64(r)?;
    let n = netfmt::read_u32(r)? as usize;
    let mut m = Vec::with_capacity(n);
    for i in 0..n {
        let (name, data) = netfmt::read_named_array(r)?;
        if name != format!("m{i}") {
            return Err(AgentCheckpointError::Malformed(format!(
                "expected moment array m{i}, found {name}"
            )));
        }
        m.push(data);
    }
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let (name, data) = netfmt::read_named_array(r)?;
        if name != format!("v{i}") {
            return Err(AgentCheckpointError::Malformed(format!(
                "expected moment array v{i}, found {name}"
            )));
        }
        v.push(data);
    }
    Ok(OptimizerState::restore(
        learning_rate,
        beta1,
        beta2,
        eps,
        step,
        m,
        v,
    ))
}

impl Agent {
    /// Writes the full agent state. `config_echo` is stored verbatim for
    /// humans and tooling; it does not affect loading.
    pub fn save(&self, path: &Path, config_echo: &str) -> Result<(), AgentCheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(AGENT_MAGIC)?;
        netfmt::write_u32(&mut w, FORMAT_VERSION)?;
        let echo = config_echo.as_bytes();
        netfmt::write_u32(&mut w, echo.len() as u32)?;
        w.write_all(echo)?;

        netfmt::write_u32(&mut w, self.obs_dim as u32)?;
        netfmt::write_u32(&mut w, self.action_dim as u32)?;
        netfmt::write_f64(&mut w, self.action_bound)?;
        netfmt::write_u32(&mut w, self.cfg.value_heads as u32)?;
        netfmt::write_f64(&mut w, self.cfg.gamma)?;
        netfmt::write_f64(&mut w, self.cfg.tau)?;
        let mode_id: u32 = match self.cfg.mode {
            Mode::Vanilla => 0,
            Mode::Caps => 1,
            Mode::L2c2 => 2,
        };
        netfmt::write_u32(&mut w, mode_id)?;
        match self.cfg.clip_ratio {
            Some(c) => {
                netfmt::write_u32(&mut w, 1)?;
                netfmt::write_f64(&mut w, c)?;
            }
            None => {
                netfmt::write_u32(&mut w, 0)?;
                netfmt::write_f64(&mut w, 0.0)?;
            }
        }
        for v in [
            self.caps.sigma,
            self.caps.lambda_temporal,
            self.caps.lambda_spatial,
            self.l2c2.sigma,
            self.l2c2.lambda_lower,
            self.l2c2.lambda_upper,
            self.l2c2.beta,
            self.l2c2.epsilon,
            self.l2c2.lambda_policy,
            self.l2c2.lambda_value,
        ] {
            netfmt::write_f64(&mut w, v)?;
        }

        netfmt::write_network(&mut w, &self.policy)?;
        netfmt::write_network(&mut w, &self.value)?;
        netfmt::write_network(&mut w, &self.target_policy)?;
        netfmt::write_network(&mut w, &self.target_value)?;
        write_optimizer(&mut w, &self.opt_policy)?;
        write_optimizer(&mut w, &self.opt_value)?;
        w.flush()?;
        Ok(())
    }

    /// Loads an agent and the stored config echo.
    pub fn load(path: &Path) -> Result<(Agent, String), AgentCheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != AGENT_MAGIC {
            return Err(AgentCheckpointError::BadMagic);
        }
        let version = netfmt::read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(AgentCheckpointError::UnsupportedVersion(version));
        }
        let echo_len = netfmt::read_u32(&mut r)? as usize;
        let mut echo = vec![0u8; echo_len];
        r.read_exact(&mut echo)?;
        let echo = String::from_utf8(echo)
            .map_err(|_| AgentCheckpointError::Malformed("config echo is not utf-8".into()))?;

        let obs_dim = netfmt::read_u32(&mut r)? as usize;
        let action_dim = netfmt::read_u32(&mut r)? as usize;
        let action_bound = netfmt::read_f64(&mut r)?;
        let value_heads = netfmt::read_u32(&mut r)? as usize;
        let gamma = netfmt::read_f64(&mut r)?;
        let tau = netfmt::read_f64(&mut r)?;
        let mode = match netfmt::read_u32(&mut r)? {
            0 => Mode::Vanilla,
            1 => Mode::Caps,
            2 => Mode::L2c2,
            other => {
                return Err(AgentCheckpointError::Malformed(format!(
                    "unknown mode id {other}"
                )))
            }
        };
        let has_clip = netfmt::read_u32(&mut r)? == 1;
        let clip_value = netfmt::read_f64(&mut r)?;
        let clip_ratio = has_clip.then_some(clip_value);

        let mut f = [0.0f64; 10];
        for slot in f.iter_mut() {
            *slot = netfmt::read_f64(&mut r)?;
        }
        let caps = CapsConfig {
            sigma: f[0],
            lambda_temporal: f[1],
            lambda_spatial: f[2],
        };
        let l2c2 = L2c2Config {
            sigma: f[3],
            lambda_lower: f[4],
            lambda_upper: f[5],
            beta: f[6],
            epsilon: f[7],
            lambda_policy: f[8],
            lambda_value: f[9],
        };
        let cfg = AgentConfig {
            gamma,
            tau,
            mode,
            clip_ratio,
            value_heads,
        };

        let policy = netfmt::read_network(&mut r)?;
        let value = netfmt::read_network(&mut r)?;
        let target_policy = netfmt::read_network(&mut r)?;
        let target_value = netfmt::read_network(&mut r)?;
        let opt_policy = read_optimizer(&mut r)?;
        let opt_value = read_optimizer(&mut r)?;
        let scratch = StepScratch::new(&policy, &value);
        Ok((
            Agent {
                cfg,
                caps,
                l2c2,
                obs_dim,
                action_dim,
                action_bound,
                policy,
                value,
                target_policy,
                target_value,
                opt_policy,
                opt_value,
                scratch,
            },
            echo,
        ))
    }
}
