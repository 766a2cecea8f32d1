//! Scenario files: a versioned TOML description of one transition.
//!
//! ```toml
//! version = 1
//! seed = 42
//!
//! [model]
//! preset = "toy-transformer"
//! layers = 2
//! hidden = 8
//!
//! [topology]
//! nodes = 1
//! ranks_per_node = 4
//!
//! [src]
//! tp = 2
//! pp = 2
//!
//! [dst]
//! tp = 4
//! ```

use std::fmt;
use std::ops::Range;
use std::path::Path;

use reshard_core::routing::{BatchGeometry, GradientMode, TransitionOptions, WorldMap};
use reshard_core::sim::ExecMode;
use reshard_core::vps::{ModelSpec, ParallelConfig, PrecisionPolicy, RankOrder, TensorSpec};
use reshard_core::{Error, Topology};
use serde::Deserialize;
use toml::Spanned;

pub const FORMAT_VERSION: u32 = 1;

/// Dataset position at the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataState {
    pub consumed: u64,
    pub batch: BatchGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub topology: Topology,
    pub src: ParallelConfig,
    pub dst: ParallelConfig,
    pub world: WorldMap,
    /// Transient memory available per device; one entry applies to all.
    pub budget: Vec<u64>,
    /// Hard per-device cap enforced by the simulator.
    pub mem_cap: Option<u64>,
    pub seed: u64,
    pub data: Option<DataState>,
    pub mode: ExecMode,
    pub options: TransitionOptions,
    pub collectives: bool,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError { origin: origin.clone(), position: None, message: e.to_string() })?;
        Self::parse(&text, &origin)
    }

    /// Parses and validates scenario text. `origin` names the source in
    /// diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let fail = |span: Option<Range<usize>>, message: String| ScenarioError {
            origin: origin.to_string(),
            position: span.map(|s| position(text, s.start)),
            message,
        };
        let raw: RawScenario = toml::from_str(text).map_err(|e| fail(e.span(), e.message().to_string()))?;

        if *raw.version.get_ref() != FORMAT_VERSION {
            return Err(fail(
                Some(raw.version.span()),
                format!("unsupported version {} (expected {FORMAT_VERSION})", raw.version.get_ref()),
            ));
        }

        let model = raw.model.get_ref().build().map_err(|(span, msg)| fail(Some(span.unwrap_or(raw.model.span())), msg))?;
        let src = raw.src.get_ref().build(&model, raw.src.span()).map_err(|(s, m)| fail(Some(s), m))?;
        let dst = raw.dst.get_ref().build(&model, raw.dst.span()).map_err(|(s, m)| fail(Some(s), m))?;
        if src.zero != dst.zero {
            return Err(fail(Some(raw.dst.span()), Error::ZeroMismatch.to_string()));
        }

        let world = match &raw.world {
            None => WorldMap::resize(src.world_size(), dst.world_size()),
            Some(w) => {
                let r = w.get_ref();
                for (list, cfg, side) in [(&r.src, &src, "src"), (&r.dst, &dst, "dst")] {
                    if list.get_ref().len() != cfg.world_size() as usize {
                        return Err(fail(
                            Some(list.span()),
                            format!(
                                "world.{side} lists {} devices but the {side} config needs {}",
                                list.get_ref().len(),
                                cfg.world_size()
                            ),
                        ));
                    }
                }
                WorldMap::explicit(r.src.get_ref().clone(), r.dst.get_ref().clone())
                    .map_err(|e| fail(Some(w.span()), e.to_string()))?
            }
        };

        let topology = raw.topology.get_ref().build().map_err(|m| fail(Some(raw.topology.span()), m))?;
        if world.device_count() > topology.capacity() {
            return Err(fail(
                Some(raw.topology.span()),
                format!("{} devices do not fit {} node(s) of {}", world.device_count(), topology.num_nodes, topology.ranks_per_node),
            ));
        }

        let (budget, mem_cap) = match &raw.memory {
            None => (vec![u64::MAX], None),
            Some(m) => {
                let r = m.get_ref();
                let budget = match (&r.budget, &r.per_device) {
                    (Some(_), Some(p)) => {
                        return Err(fail(Some(p.span()), "set either `budget` or `per_device`, not both".into()))
                    }
                    (Some(b), None) => vec![*b.get_ref()],
                    (None, Some(p)) => {
                        if p.get_ref().len() != world.device_count() as usize {
                            return Err(fail(
                                Some(p.span()),
                                format!("per_device lists {} budgets for {} devices", p.get_ref().len(), world.device_count()),
                            ));
                        }
                        p.get_ref().clone()
                    }
                    (None, None) => vec![u64::MAX],
                };
                if budget.contains(&0) {
                    return Err(fail(Some(m.span()), "memory budget must be positive".into()));
                }
                (budget, r.cap)
            }
        };

        let mode = match &raw.mode {
            None => ExecMode::BufferAsync,
            Some(m) => ExecMode::parse(m.get_ref()).ok_or_else(|| {
                fail(Some(m.span()), format!("unknown mode `{}` (naive, buffer-sync, buffer-async)", m.get_ref()))
            })?,
        };
        let policy = match &raw.policy {
            None => PrecisionPolicy::default(),
            Some(p) => PrecisionPolicy::parse(p.get_ref()).map_err(|e| fail(Some(p.span()), e.to_string()))?,
        };
        let gradients = match raw.gradients.as_ref().map(|g| (g.get_ref().as_str(), g.span())) {
            None | Some(("drop", _)) => GradientMode::Drop,
            Some(("migrate", _)) => GradientMode::Migrate,
            Some((other, span)) => {
                return Err(fail(Some(span), format!("unknown gradient mode `{other}` (drop, migrate)")))
            }
        };

        let data = match &raw.data {
            None => None,
            Some(d) => {
                let r = d.get_ref();
                let batch = BatchGeometry { global_batch: r.global_batch, micro_batch: r.micro_batch };
                // both sides must be able to split the batch
                for cfg in [&src, &dst] {
                    if batch.micro_batch == 0 || batch.global_batch % (u64::from(cfg.dp) * batch.micro_batch) != 0 {
                        return Err(fail(
                            Some(d.span()),
                            Error::InvalidBatchGeometry { global_batch: batch.global_batch, dp: cfg.dp, micro_batch: batch.micro_batch }
                                .to_string(),
                        ));
                    }
                }
                Some(DataState { consumed: r.consumed, batch })
            }
        };

        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| {
                Path::new(origin).file_stem().map_or_else(|| origin.to_string(), |s| s.to_string_lossy().into_owned())
            }),
            model,
            topology,
            src,
            dst,
            world,
            budget,
            mem_cap,
            seed: raw.seed.unwrap_or(0),
            data,
            mode,
            options: TransitionOptions { policy, gradients },
            collectives: raw.collectives.unwrap_or(true),
        })
    }

    /// The same scenario run backwards.
    pub fn reversed(&self) -> Scenario {
        let mut r = self.clone();
        std::mem::swap(&mut r.src, &mut r.dst);
        r.world = WorldMap::explicit(self.world.dst_world().to_vec(), self.world.src_world().to_vec())
            .expect("inverse of a valid world map is valid");
        r.name = format!("{}.reversed", self.name);
        r
    }
}

/// A diagnostic anchored at a line and column of the scenario text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub origin: String,
    /// 1-based (line, column).
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: Spanned<u32>,
    name: Option<String>,
    seed: Option<u64>,
    mode: Option<Spanned<String>>,
    policy: Option<Spanned<String>>,
    gradients: Option<Spanned<String>>,
    collectives: Option<bool>,
    model: Spanned<RawModel>,
    topology: Spanned<RawTopology>,
    src: Spanned<RawConfig>,
    dst: Spanned<RawConfig>,
    world: Option<Spanned<RawWorld>>,
    memory: Option<Spanned<RawMemory>>,
    data: Option<Spanned<RawData>>,
}

type Anchored<T> = Result<T, (Option<Range<usize>>, String)>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<Spanned<String>>,
    layers: Option<u32>,
    hidden: Option<u64>,
    experts: Option<u32>,
    num_layers: Option<u32>,
    num_experts: Option<u32>,
    #[serde(default)]
    tensors: Vec<Spanned<RawTensor>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensor {
    id: String,
    shape: Vec<u64>,
    layer: u32,
    tp_axis: Option<usize>,
    expert_axis: Option<usize>,
    dtype_bytes: Option<u32>,
}

impl RawModel {
    fn build(&self) -> Anchored<ModelSpec> {
        let model = match &self.preset {
            Some(p) if p.get_ref() == "toy-transformer" => {
                if !self.tensors.is_empty() {
                    return Err((Some(p.span()), "a preset model cannot also list tensors".into()));
                }
                ModelSpec::toy_transformer(self.layers.unwrap_or(2), self.hidden.unwrap_or(8), self.experts.unwrap_or(1))
            }
            Some(p) => return Err((Some(p.span()), format!("unknown model preset `{}`", p.get_ref()))),
            None => {
                let tensors = self
                    .tensors
                    .iter()
                    .map(|t| {
                        let r = t.get_ref();
                        let mut spec = TensorSpec::dense(r.id.clone(), &r.shape, r.layer);
                        spec.tp_shard_axis = r.tp_axis;
                        spec.expert_axis = r.expert_axis;
                        if let Some(b) = r.dtype_bytes {
                            spec = spec.with_dtype_bytes(b);
                        }
                        spec
                    })
                    .collect();
                ModelSpec::new(tensors, self.num_layers.unwrap_or(1), self.num_experts.unwrap_or(1))
            }
        };
        model.validate().map_err(|e| (self.tensor_span(&e), e.to_string()))?;
        Ok(model)
    }

    fn tensor_span(&self, e: &Error) -> Option<Range<usize>> {
        let id = match e {
            Error::DuplicateTensor(t) | Error::ExpertAxisConflict(t) => t,
            Error::ZeroExtent { tensor, .. }
            | Error::InvalidAxis { tensor, .. }
            | Error::LayerOutOfRange { tensor, .. }
            | Error::ExpertExtent { tensor, .. } => tensor,
            _ => return None,
        };
        // the last one, so a duplicate points at the second declaration
        self.tensors.iter().rev().find(|t| &t.get_ref().id == id).map(Spanned::span)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dp: Option<Spanned<u32>>,
    tp: Option<Spanned<u32>>,
    pp: Option<Spanned<u32>>,
    ep: Option<Spanned<u32>>,
    zero: Option<bool>,
    order: Option<Spanned<String>>,
}

impl RawConfig {
    fn build(&self, model: &ModelSpec, table: Range<usize>) -> Result<ParallelConfig, (Range<usize>, String)> {
        let get = |d: &Option<Spanned<u32>>| d.as_ref().map_or(1, |v| *v.get_ref());
        let mut cfg = ParallelConfig::new(get(&self.dp), get(&self.tp), get(&self.pp))
            .with_ep(get(&self.ep))
            .with_zero(self.zero.unwrap_or(false));
        if let Some(o) = &self.order {
            cfg = cfg.with_order(RankOrder::parse(o.get_ref()).ok_or_else(|| {
                (o.span(), format!("unknown rank order `{}` (pp-dp-tp, dp-pp-tp, pp-tp-dp)", o.get_ref()))
            })?);
        }
        cfg.validate_for(model).map_err(|e| {
            let field = match &e {
                Error::Divisibility { dim: "tp", .. } => &self.tp,
                Error::Divisibility { dim: "ep", .. } | Error::EpDoesNotDivideDp { .. } => &self.ep,
                Error::PpExceedsLayers { .. } => &self.pp,
                _ => &None,
            };
            (field.as_ref().map_or(table, Spanned::span), e.to_string())
        })?;
        Ok(cfg)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: u32,
    ranks_per_node: u32,
    intra_bw: Option<f64>,
    inter_bw: Option<f64>,
    latency: Option<f64>,
    pack_bw: Option<f64>,
}

impl RawTopology {
    fn build(&self) -> Result<Topology, String> {
        let mut t = Topology::new(self.nodes, self.ranks_per_node);
        t.intra_node_bw = self.intra_bw.unwrap_or(t.intra_node_bw);
        t.inter_node_bw = self.inter_bw.unwrap_or(t.inter_node_bw);
        t.per_message_latency = self.latency.unwrap_or(t.per_message_latency);
        t.pack_bw = self.pack_bw.unwrap_or(t.pack_bw);
        t.validate().map_err(|e| e.to_string())?;
        Ok(t)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    src: Spanned<Vec<u32>>,
    dst: Spanned<Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMemory {
    budget: Option<Spanned<u64>>,
    per_device: Option<Spanned<Vec<u64>>>,
    cap: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    consumed: u64,
    global_batch: u64,
    micro_batch: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "version = 1\n\
        [model]\npreset = \"toy-transformer\"\nlayers = 2\nhidden = 8\n\
        [topology]\nnodes = 1\nranks_per_node = 4\n\
        [src]\ntp = 2\npp = 2\n\
        [dst]\ntp = 4\n";

    #[test]
    fn minimal_scenario() {
        let s = Scenario::parse(BASE, "base.toml").unwrap();
        assert_eq!(s.name, "base");
        assert_eq!(s.src, ParallelConfig::new(1, 2, 2));
        assert_eq!(s.dst, ParallelConfig::new(1, 4, 1));
        assert_eq!(s.world, WorldMap::identity(4));
        assert_eq!(s.budget, vec![u64::MAX]);
        assert_eq!(s.mode, ExecMode::BufferAsync);
    }

    #[test]
    fn divisibility_points_at_the_degree() {
        let text = BASE.replace("tp = 4", "tp = 3");
        let e = Scenario::parse(&text, "bad.toml").unwrap_err();
        assert_eq!(e.position, Some((13, 6)), "{e}");
        assert!(e.message.contains("tp=3 does not divide"), "{e}");
    }

    #[test]
    fn unknown_keys_are_located() {
        let text = BASE.replace("pp = 2", "pq = 2");
        let e = Scenario::parse(&text, "typo.toml").unwrap_err();
        assert_eq!(e.position.map(|p| p.0), Some(11), "{e}");
        assert!(e.message.contains("pq"), "{e}");
    }

    #[test]
    fn version_is_checked() {
        let e = Scenario::parse(&BASE.replace("version = 1", "version = 7"), "v.toml").unwrap_err();
        assert_eq!(e.position, Some((1, 11)));
    }

    #[test]
    fn world_must_match_configs() {
        let text = format!("{BASE}[world]\nsrc = [0, 1, 2]\ndst = [0, 1, 2, 3]\n");
        let e = Scenario::parse(&text, "w.toml").unwrap_err();
        assert_eq!(e.position.map(|p| p.0), Some(15), "{e}");
    }

    #[test]
    fn reversed_swaps_sides() {
        let text = BASE.replace("tp = 4", "tp = 2\ndp = 4").replace("nodes = 1", "nodes = 2");
        let s = Scenario::parse(&text, "grow.toml").unwrap();
        let r = s.reversed();
        assert_eq!((r.src, r.dst), (s.dst, s.src));
        assert_eq!(r.world.src_world(), s.world.dst_world());
    }
}
