use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Params, Result, SchemaMismatch};

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal, std 0.02, cut at ±2σ.
    TruncNormal,
    Zeros,
    Ones,
}

/// One expected parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Layer-norm affine terms and biases, which are exempt from weight decay.
    pub fn is_norm_or_bias(&self) -> bool {
        is_norm_or_bias(&self.path)
    }
}

/// True for LayerNorm gamma/beta and bias vectors.
pub fn is_norm_or_bias(path: &str) -> bool {
    let leaf = path.rsplit('.').next().unwrap_or(path);
    leaf == "gamma" || leaf == "beta" || leaf.starts_with('b')
}

pub const INIT_STD: f64 = 0.02;

fn push(out: &mut Vec<ParamSpec>, path: String, shape: Vec<usize>, init: Init) {
    out.push(ParamSpec { path, shape, init });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    push(out, format!("{prefix}.gamma"), vec![c], Init::Ones);
    push(out, format!("{prefix}.beta"), vec![c], Init::Zeros);
}

/// Every parameter the configuration needs, sorted by path.
///
/// ```text
/// patch_embed.W                    [p²·in, C]
/// patch_embed.pos                  [N, C]          (if use_pos_embed)
/// stage{s}.block{b}.norm1.{gamma,beta}
/// stage{s}.block{b}.attn.{Wq,Wk,Wv,Wo} [C, C], {bq,bk,bv,bo} [C]
/// stage{s}.block{b}.norm2.{gamma,beta}
/// stage{s}.block{b}.mlp.W1 [C, rC], b1, W2 [rC, C], b2
/// stage{s}.merge.norm.{gamma,beta} [4C], stage{s}.merge.W [4C, 2C]
/// head.W [C_last, K], head.b [K]
/// ```
///
/// Even blocks use unshifted windows, odd blocks shifted ones.
pub fn param_schema(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let stages = config.stages()?;
    let mut out = Vec::new();
    let c0 = config.embed_dim;
    push(
        &mut out,
        "patch_embed.W".into(),
        vec![config.patch_dim(), c0],
        Init::TruncNormal,
    );
    if config.use_pos_embed {
        let n = config.tokens_per_side() * config.tokens_per_side();
        push(
            &mut out,
            "patch_embed.pos".into(),
            vec![n, c0],
            Init::TruncNormal,
        );
    }
    for (s, (dims, &depth)) in stages.iter().zip(&config.depths).enumerate() {
        let c = dims.channels;
        let hidden = c * config.mlp_ratio;
        for b in 0..2 * depth {
            let p = format!("stage{s}.block{b}");
            norm(&mut out, &format!("{p}.norm1"), c);
            for x in ["q", "k", "v", "o"] {
                push(
                    &mut out,
                    format!("{p}.attn.W{x}"),
                    vec![c, c],
                    Init::TruncNormal,
                );
                push(&mut out, format!("{p}.attn.b{x}"), vec![c], Init::Zeros);
            }
            norm(&mut out, &format!("{p}.norm2"), c);
            push(
                &mut out,
                format!("{p}.mlp.W1"),
                vec![c, hidden],
                Init::TruncNormal,
            );
            push(&mut out, format!("{p}.mlp.b1"), vec![hidden], Init::Zeros);
            push(
                &mut out,
                format!("{p}.mlp.W2"),
                vec![hidden, c],
                Init::TruncNormal,
            );
            push(&mut out, format!("{p}.mlp.b2"), vec![c], Init::Zeros);
        }
        if s + 1 < stages.len() {
            norm(&mut out, &format!("stage{s}.merge.norm"), 4 * c);
            push(
                &mut out,
                format!("stage{s}.merge.W"),
                vec![4 * c, 2 * c],
                Init::TruncNormal,
            );
        }
    }
    let k = config.num_classes;
    push(
        &mut out,
        "head.W".into(),
        vec![config.final_channels(), k],
        Init::TruncNormal,
    );
    push(&mut out, "head.b".into(), vec![k], Init::Zeros);
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Compares `params` against the schema, collecting every discrepancy.
pub fn check_schema<T: Scalar>(config: &ModelConfig, params: &Params<T>) -> Result<()> {
    let schema = param_schema(config)?;
    let mut report = SchemaMismatch::default();
    for spec in &schema {
        match params.get(&spec.path) {
            None => report.missing.push(spec.path.clone()),
            Some(t) if t.shape() != spec.shape.as_slice() => {
                report
                    .misshaped
                    .push((spec.path.clone(), spec.shape.clone(), t.shape().to_vec()))
            }
            Some(_) => {}
        }
    }
    for path in params.paths() {
        if schema
            .binary_search_by(|s| s.path.as_str().cmp(path))
            .is_err()
        {
            report.unexpected.push(path.to_string());
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema(report))
    }
}

fn trunc_normal(rng: &mut impl Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

/// Fresh parameters; identical for identical `(config, seed)`.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Params<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut params = Params::new();
    for spec in param_schema(config)? {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(spec.shape),
            Init::Ones => Tensor::ones(spec.shape),
            Init::TruncNormal => {
                Tensor::from_fn(spec.shape, |_| T::from_f64(trunc_normal(&mut rng, &normal)))
            }
        };
        params.insert(spec.path, t);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_schema_paths() {
        let schema = param_schema(&ModelConfig::tiny()).unwrap();
        let paths: Vec<&str> = schema.iter().map(|s| s.path.as_str()).collect();
        assert!(paths.windows(2).all(|w| w[0] < w[1]));
        assert!(paths.contains(&"stage0.block1.attn.Wq"));
        assert!(paths.contains(&"patch_embed.pos"));
        assert!(!paths.iter().any(|p| p.contains("merge")));
        // patch W + pos + 2 blocks × 16 + head W, b
        assert_eq!(schema.len(), 2 + 2 * 16 + 2);
    }

    #[test]
    fn decay_exemptions() {
        for p in [
            "stage0.block0.norm1.gamma",
            "stage0.merge.norm.beta",
            "head.b",
            "stage1.block3.attn.bq",
            "stage0.block0.mlp.b1",
        ] {
            assert!(is_norm_or_bias(p), "{p}");
        }
        for p in [
            "head.W",
            "patch_embed.pos",
            "stage0.block0.attn.Wq",
            "stage0.merge.W",
        ] {
            assert!(!is_norm_or_bias(p), "{p}");
        }
    }

    #[test]
    fn check_schema_lists_offenders() {
        let cfg = ModelConfig::tiny();
        let mut params: Params = init_params(&cfg, 1).unwrap();
        check_schema(&cfg, &params).unwrap();
        params.insert("head.W", Tensor::zeros([3, 5]));
        params.insert("extra", Tensor::zeros([1]));
        let mut without_pos = Params::new();
        for (p, t) in params.iter().filter(|(p, _)| *p != "patch_embed.pos") {
            without_pos.insert(p, t.clone());
        }
        let Err(Error::Schema(report)) = check_schema(&cfg, &without_pos) else {
            panic!("expected a schema error");
        };
        assert_eq!(report.missing, vec!["patch_embed.pos".to_string()]);
        assert_eq!(
            report.misshaped,
            vec![("head.W".to_string(), vec![8, 5], vec![3, 5])]
        );
        assert_eq!(report.unexpected, vec!["extra".to_string()]);
    }
}
