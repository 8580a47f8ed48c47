use rand::Rng;

use super::adapter::Adapter;
use super::config::{ModelConfig, HEAD_K, INPUT_CHANNELS};
use crate::autodiff::{Graph, Var};
use crate::dcmf::{Hilo, Liho};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

/// Residual block used by the single-branch baseline.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv::new(store, &format!("{name}.conv1"), width, width, 3, 3, rng)?,
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), width)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), width, width, 3, 3, rng)?,
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), width)?,
        })
    }

    /// `relu(x + BN(conv(relu(BN(conv(x))))))`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(s, x)?;
        let y = self.bn1.forward(s, y)?;
        let y = s.graph.relu(y)?;
        let y = self.conv2.forward(s, y)?;
        let y = self.bn2.forward(s, y)?;
        let y = s.graph.add(x, y)?;
        s.graph.relu(y)
    }
}

/// Parameters of one stage.
#[derive(Clone, Debug)]
pub enum Stage {
    Dual {
        hilo: Option<Hilo>,
        liho: Option<Liho>,
        adapter: Adapter,
    },
    Residual(ResBlock),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Skip HILO/LIHO and the adapter cross terms, so the network behaves
    /// like two independent branches.
    pub mask_exchange: bool,
}

/// Branch features at the end of a stage. The baseline has one branch,
/// reported as `detail`.
#[derive(Clone, Copy, Debug)]
pub struct StageFeatures {
    pub detail: Var,
    pub structure: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Detail-branch output (the learned residual for the baseline).
    pub detail: Var,
    /// Structure-branch output (the input itself for the baseline).
    pub structure: Var,
    /// `detail + structure`.
    pub prediction: Var,
    pub features: Vec<StageFeatures>,
}

/// Concrete values of a forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub detail: Tensor<T>,
    pub structure: Tensor<T>,
    pub prediction: Tensor<T>,
    pub features: Vec<(Tensor<T>, Option<Tensor<T>>)>,
}

/// The dual-branch deraining network (or one of its ablations).
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub head_d: Conv,
    pub head_s: Option<Conv>,
    pub stages: Vec<Stage>,
    pub tail_d: Conv,
    pub tail_s: Option<Conv>,
}

impl Model {
    /// Registers all parameters of `config` in `store`.
    pub fn build<T: Scalar, R: Rng>(
        config: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (f, a) = (config.width, config.ablation);
        let dual = a.is_dual();
        let head_d = Conv::new(store, "head_d", INPUT_CHANNELS, f, HEAD_K, HEAD_K, rng)?;
        let head_s = if dual {
            Some(Conv::new(
                store,
                "head_s",
                INPUT_CHANNELS,
                f,
                HEAD_K,
                HEAD_K,
                rng,
            )?)
        } else {
            None
        };
        let mut stages = Vec::with_capacity(config.stages);
        for t in 0..config.stages {
            let name = format!("stage{t}");
            let stage = if dual {
                let (hilo, liho) = if a.has_exchange() {
                    (
                        Some(Hilo::new(
                            store,
                            &format!("{name}.hilo"),
                            f,
                            config.cmf_k,
                            rng,
                        )?),
                        Some(Liho::new(
                            store,
                            &format!("{name}.liho"),
                            f,
                            config.cmf_k,
                            rng,
                        )?),
                    )
                } else {
                    (None, None)
                };
                let adapter = Adapter::new(
                    store,
                    &format!("{name}.adapter"),
                    f,
                    config.acb_k,
                    a.has_cross_terms(),
                    config.share_adapter_rounds,
                    rng,
                )?;
                Stage::Dual {
                    hilo,
                    liho,
                    adapter,
                }
            } else {
                Stage::Residual(ResBlock::new(store, &format!("{name}.res"), f, rng)?)
            };
            stages.push(stage);
        }
        let tail_d = Conv::new(store, "tail_d", f, INPUT_CHANNELS, HEAD_K, HEAD_K, rng)?;
        let tail_s = if dual {
            Some(Conv::new(
                store,
                "tail_s",
                f,
                INPUT_CHANNELS,
                HEAD_K,
                HEAD_K,
                rng,
            )?)
        } else {
            None
        };
        Ok(Model {
            config: config.clone(),
            head_d,
            head_s,
            stages,
            tail_d,
            tail_s,
        })
    }

    /// Fresh model with parameters initialized from the `init` sub-stream of `root_seed`.
    pub fn init<T: Scalar>(config: &ModelConfig, root_seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = seed::rng(root_seed, "init", 0);
        let model = Model::build(config, &mut store, &mut rng)?;
        Ok((model, store))
    }

    /// Model skeleton for `config` with a store whose names and shapes match
    /// a fresh build. Values are placeholders to be overwritten.
    pub fn skeleton<T: Scalar>(config: &ModelConfig) -> Result<(Self, ParamStore<T>)> {
        Model::init(config, 0)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let min = self.config.min_spatial();
        match shape {
            [_, c, h, w] if *c == INPUT_CHANNELS && *h >= min && *w >= min => Ok(()),
            _ => Err(Error::contract(
                "model_forward",
                format!("expected N x {INPUT_CHANNELS} x H x W with H, W >= {min}, got {shape:?}"),
            )),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        input: Var,
        opts: ForwardOptions,
    ) -> Result<ModelOutput> {
        self.check_input(s.graph.shape(input))?;
        let mut features = Vec::with_capacity(self.stages.len());
        let Some(head_s) = &self.head_s else {
            let mut z = self.head_d.forward(s, input)?;
            for stage in &self.stages {
                if let Stage::Residual(block) = stage {
                    z = block.forward(s, z)?;
                }
                features.push(StageFeatures {
                    detail: z,
                    structure: None,
                });
            }
            let detail = self.tail_d.forward(s, z)?;
            let prediction = s.graph.add(detail, input)?;
            return Ok(ModelOutput {
                detail,
                structure: input,
                prediction,
                features,
            });
        };
        let cross = self.config.ablation.has_cross_terms() && !opts.mask_exchange;
        let mut z_d = self.head_d.forward(s, input)?;
        let mut z_s = head_s.forward(s, input)?;
        for stage in &self.stages {
            let Stage::Dual {
                hilo,
                liho,
                adapter,
            } = stage
            else {
                return Err(Error::contract(
                    "model_forward",
                    "residual stage in a dual-branch model",
                ));
            };
            if let (Some(hilo), Some(liho), false) = (hilo, liho, opts.mask_exchange) {
                let from_d = hilo.split(s, z_d)?;
                let from_s = liho.split(s, z_s)?;
                let next_d = hilo.merge(s, z_d, &from_d, from_s.high_out)?;
                let next_s = liho.merge(s, &from_s, from_d.low_out)?;
                (z_d, z_s) = (next_d, next_s);
            }
            (z_d, z_s) = adapter.forward(s, z_d, z_s, cross)?;
            features.push(StageFeatures {
                detail: z_d,
                structure: Some(z_s),
            });
        }
        let detail = self.tail_d.forward(s, z_d)?;
        let tail_s = self
            .tail_s
            .as_ref()
            .expect("dual model has a structure tail");
        let structure = tail_s.forward(s, z_s)?;
        let prediction = s.graph.add(detail, structure)?;
        Ok(ModelOutput {
            detail,
            structure,
            prediction,
            features,
        })
    }

    /// Eval-mode forward pass without gradient bookkeeping.
    pub fn predict<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        input: &Tensor<T>,
        opts: ForwardOptions,
    ) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let mut s = Session::bind(&mut g, store, Mode::Eval, false);
        let x = s.graph.constant(input.clone());
        let out = self.forward(&mut s, x, opts)?;
        let v = |id: Var| s.graph.value(id).clone();
        Ok(Prediction {
            detail: v(out.detail),
            structure: v(out.structure),
            prediction: v(out.prediction),
            features: out
                .features
                .iter()
                .map(|f| (v(f.detail), f.structure.map(v)))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Ablation;

    fn small(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            stages: 2,
            width: 4,
            ablation,
            ..Default::default()
        }
    }

    #[test]
    fn registry_matches_the_count_formula() {
        for ablation in Ablation::ALL {
            for share in [false, true] {
                let cfg = ModelConfig {
                    share_adapter_rounds: share,
                    ..small(ablation)
                };
                let (_, store) = Model::init::<f32>(&cfg, 1).unwrap();
                assert_eq!(store.weight_count(), cfg.parameter_count(), "{ablation}");
            }
        }
    }

    #[test]
    fn outputs_have_input_shape_and_sum() {
        for ablation in Ablation::ALL {
            let cfg = small(ablation);
            let (model, store) = Model::init::<f32>(&cfg, 2).unwrap();
            let mut rng = seed::rng(0, "x", 0);
            let x = Tensor::from_fn([2, 3, 12, 12], |_| rng.gen::<f32>());
            let p = model
                .predict(&store, &x, ForwardOptions::default())
                .unwrap();
            assert_eq!(p.prediction.shape(), x.shape());
            let sum = p.detail.zip_map(&p.structure, |a, b| a + b).unwrap();
            assert_eq!(sum.data(), p.prediction.data());
            assert_eq!(p.features.len(), 2);
        }
    }

    #[test]
    fn small_or_wrong_inputs_are_contract_errors() {
        let (model, store) = Model::init::<f32>(&small(Ablation::Full), 0).unwrap();
        for shape in [[1, 3, 10, 12], [1, 1, 12, 12]] {
            let err = model
                .predict(&store, &Tensor::zeros(shape), ForwardOptions::default())
                .unwrap_err();
            assert!(matches!(err, Error::Contract { .. }));
        }
    }
}
