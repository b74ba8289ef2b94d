//! Two-stream execution model. Builds the per-layer dependency graph for a
//! baseline or the overlapped split schedule and list-schedules it with SM
//! accounting.

use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::splitter::{
    place_sequence_boundaries, select_mode, smart_offset_analytic, smart_offset_sweep, SplitMode,
    SplitPlan, SplitPolicy,
};
use crate::wavemodel::{
    attention_time_segments, collective_time, ffn_time, rmsnorm_time, AttentionSegment,
    CollectiveKind, HardwareProfile, NormLayout,
};

/// What a scheduled event does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// QKV projection, attention core and output projection.
    Attention,
    /// Feed-forward block.
    Ffn,
    /// Fused AllReduce-RMSNorm.
    FusedArNorm,
    /// AllReduce.
    AllReduce,
    /// RMSNorm.
    RmsNorm,
    /// AllGather of the residual shards.
    AllGather,
    /// Work outside the transformer layers.
    Misc,
}

/// Which tokens an event covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitId {
    /// Prefix split.
    Prefix,
    /// Suffix split.
    Suffix,
    /// The whole batch.
    Whole,
}

/// Execution stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Compute kernels.
    Compute,
    /// Collectives.
    Comm,
}

/// Execution strategy being modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Sequential, non-Multimem AllReduce then RMSNorm.
    Default,
    /// Sequential, Multimem AllReduce then RMSNorm.
    Multimem,
    /// Sequential with every collective removed.
    NoComm,
    /// Sequential with the fused AllReduce-RMSNorm.
    FuseOnly,
    /// Split and overlapped above the threshold, fused-only below.
    TokenWeave,
}

impl BaselineMode {
    /// All modes in report order.
    pub const ALL: [BaselineMode; 5] = [
        BaselineMode::Default,
        BaselineMode::Multimem,
        BaselineMode::NoComm,
        BaselineMode::FuseOnly,
        BaselineMode::TokenWeave,
    ];

    /// Lowercase name used on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Default => "default",
            BaselineMode::Multimem => "multimem",
            BaselineMode::NoComm => "nocomm",
            BaselineMode::FuseOnly => "fuseonly",
            BaselineMode::TokenWeave => "tokenweave",
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

/// One node of the dependency graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Operation.
    pub op: OpKind,
    /// Token split.
    pub split: SplitId,
    /// Stream it runs on.
    pub stream: Stream,
    /// Layer index; `None` outside the layers.
    pub layer: Option<usize>,
    /// Nodes that must finish first.
    pub deps: Vec<usize>,
    /// Duration with every SM available.
    pub duration: f64,
    /// Duration while a collective holds its SMs. Equal to `duration` for
    /// collectives.
    pub contended_duration: f64,
}

/// Dependency graph. Each stream runs its nodes in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    /// Nodes in insertion order.
    pub nodes: Vec<Node>,
}

impl Dag {
    /// Empty graph.
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node and returns its id.
    pub fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True without nodes.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// A scheduled node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Node id.
    pub id: usize,
    /// Operation.
    pub op: OpKind,
    /// Token split.
    pub split: SplitId,
    /// Stream.
    pub stream: Stream,
    /// Layer index.
    pub layer: Option<usize>,
    /// Start, seconds.
    pub start: f64,
    /// End, seconds.
    pub end: f64,
    /// Dependencies.
    pub depends_on: Vec<usize>,
}

/// Result of [`simulate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Events ordered by node id.
    pub events: Vec<StreamEvent>,
    /// Makespan, seconds.
    pub iteration_latency: f64,
}

impl Timeline {
    /// Summed duration of events on a stream.
    pub fn busy_time(&self, stream: Stream) -> f64 {
        self.events
            .iter()
            .filter(|e| e.stream == stream)
            .map(|e| e.end - e.start)
            .sum()
    }

    /// Summed duration of events of one kind.
    pub fn op_time(&self, op: OpKind) -> f64 {
        self.events
            .iter()
            .filter(|e| e.op == op)
            .map(|e| e.end - e.start)
            .sum()
    }
}

fn check_acyclic(dag: &Dag) -> Result<()> {
    let n = dag.len();
    let mut indegree = vec![0usize; n];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in dag.nodes.iter().enumerate() {
        for &d in &node.deps {
            if d >= n {
                return Err(Error::Contract(format!(
                    "node {i} depends on missing node {d}"
                )));
            }
            indegree[i] += 1;
            users[d].push(i);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.push(u);
            }
        }
    }
    if seen != n {
        return Err(Error::Contract("dependency graph has a cycle".into()));
    }
    Ok(())
}

struct Running {
    node: usize,
    start: f64,
    // compute: fraction of work left; comm: absolute end time
    left: f64,
}

/// List-schedules the graph on a compute and a communication stream.
///
/// Each stream starts its next node once the previous one on that stream and
/// all dependencies have finished. A compute node progresses at
/// `1 / contended_duration` while a collective runs and `1 / duration`
/// otherwise; its remaining work is rescaled whenever a collective starts or
/// ends.
pub fn simulate(dag: &Dag) -> Result<Timeline> {
    check_acyclic(dag)?;
    let n = dag.len();
    let mut order: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, node) in dag.nodes.iter().enumerate() {
        order[stream_index(node.stream)].push(i);
    }
    let mut next = [0usize; 2];
    let mut running: [Option<Running>; 2] = [None, None];
    let mut end = vec![f64::NAN; n];
    let mut start = vec![f64::NAN; n];
    let mut done = 0;
    let mut now = 0.0f64;

    while done < n {
        // start everything startable at `now`; a zero-length node may unlock more
        loop {
            let mut started = false;
            for s in 0..2 {
                if running[s].is_some() || next[s] >= order[s].len() {
                    continue;
                }
                let id = order[s][next[s]];
                if dag.nodes[id].deps.iter().all(|&d| !end[d].is_nan()) {
                    next[s] += 1;
                    start[id] = now;
                    let node = &dag.nodes[id];
                    let left = if s == 1 { now + node.duration } else { 1.0 };
                    running[s] = Some(Running {
                        node: id,
                        start: now,
                        left,
                    });
                    started = true;
                }
            }
            // retire zero-length work immediately
            for slot in running.iter_mut() {
                let zero = slot
                    .as_ref()
                    .is_some_and(|r| dag.nodes[r.node].duration <= 0.0);
                if zero {
                    let r = slot.take().expect("checked");
                    end[r.node] = now;
                    done += 1;
                    started = true;
                }
            }
            if !started {
                break;
            }
        }
        if done == n {
            break;
        }
        let comm_active = running[1].is_some();
        let compute_rate = running[0].as_ref().map(|r| {
            let node = &dag.nodes[r.node];
            let d = if comm_active {
                node.contended_duration
            } else {
                node.duration
            };
            1.0 / d
        });
        let compute_end = match (&running[0], compute_rate) {
            (Some(r), Some(rate)) => now + r.left / rate,
            _ => f64::INFINITY,
        };
        let comm_end = running[1].as_ref().map_or(f64::INFINITY, |r| r.left);
        let t = compute_end.min(comm_end);
        if !t.is_finite() {
            return Err(Error::Contract(
                "stream order conflicts with dependencies; no node can start".into(),
            ));
        }
        if let (Some(r), Some(rate)) = (running[0].as_mut(), compute_rate) {
            r.left -= (t - now) * rate;
        }
        now = t;
        if comm_end <= t {
            let r = running[1].take().expect("comm running");
            end[r.node] = r.left.max(r.start);
            done += 1;
        }
        if compute_end <= t {
            let r = running[0].take().expect("compute running");
            end[r.node] = now;
            done += 1;
        }
    }

    let events = dag
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| StreamEvent {
            id,
            op: node.op,
            split: node.split,
            stream: node.stream,
            layer: node.layer,
            start: start[id],
            end: end[id],
            depends_on: node.deps.clone(),
        })
        .collect::<Vec<_>>();
    let iteration_latency = end.iter().copied().fold(0.0, f64::max);
    Ok(Timeline {
        events,
        iteration_latency,
    })
}

fn stream_index(s: Stream) -> usize {
    match s {
        Stream::Compute => 0,
        Stream::Comm => 1,
    }
}

/// Tokens of one iteration: one segment per sequence, in batch order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    /// New tokens and cached context of each sequence.
    pub segments: Vec<AttentionSegment>,
    /// True when every sequence is decoding.
    pub decode_only: bool,
}

impl BatchShape {
    /// One fresh prompt of `tokens` tokens.
    pub fn prefill(tokens: usize) -> Self {
        Self {
            segments: vec![AttentionSegment { tokens, context: 0 }],
            decode_only: false,
        }
    }

    /// Segments in batch order.
    pub fn new(segments: Vec<AttentionSegment>, decode_only: bool) -> Self {
        Self {
            segments,
            decode_only,
        }
    }

    /// Total new tokens.
    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(|s| s.tokens).sum()
    }

    /// Cuts the batch at a plan's prefix boundary. The suffix part of the
    /// straddling sequence sees the prefix part as extra context.
    pub fn split(
        &self,
        plan: &SplitPlan,
    ) -> Result<(Vec<AttentionSegment>, Vec<AttentionSegment>)> {
        let lengths: Vec<usize> = self.segments.iter().map(|s| s.tokens).collect();
        let placed = place_sequence_boundaries(&lengths, plan)?;
        let mut prefix = Vec::new();
        let mut suffix = Vec::new();
        for (seg, &p) in self
            .segments
            .iter()
            .zip(&placed.partial_sequence_boundaries)
        {
            if p > 0 {
                prefix.push(AttentionSegment {
                    tokens: p,
                    context: seg.context,
                });
            }
            if p < seg.tokens {
                suffix.push(AttentionSegment {
                    tokens: seg.tokens - p,
                    context: seg.context + p,
                });
            }
        }
        Ok((prefix, suffix))
    }
}

/// How the overlapped schedule picks its prefix size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    /// Profiling sweep over the policy's offset grid, scored by the simulated
    /// iteration.
    Smart,
    /// Wave-aware analytic prefix for the model's FFN up-projection grid.
    Analytic,
    /// `ceil(T / 2)`.
    Equal,
}

/// Everything besides the batch that an iteration estimate needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    /// Execution mode.
    pub mode: BaselineMode,
    /// Split threshold and grid.
    pub policy: SplitPolicy,
    /// Prefix sizing.
    pub strategy: SplitStrategy,
}

impl IterationOptions {
    /// Smart split with the model's default policy.
    pub fn new(mode: BaselineMode, spec: &LayerSpec) -> Self {
        Self {
            mode,
            policy: SplitPolicy::for_spec(spec),
            strategy: SplitStrategy::Smart,
        }
    }

    /// Same options with another strategy.
    pub fn with_strategy(mut self, strategy: SplitStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

/// Compute time of both splits' FFNs on `sms` SMs.
pub fn split_ffn_time(
    prefix: usize,
    suffix: usize,
    spec: &LayerSpec,
    sms: usize,
    profile: &HardwareProfile,
) -> f64 {
    ffn_time(prefix, spec, sms, profile).duration + ffn_time(suffix, spec, sms, profile).duration
}

/// The profile with its reference GEMM grid set to the model's FFN
/// up-projection.
pub fn model_reference_profile(spec: &LayerSpec, profile: &HardwareProfile) -> HardwareProfile {
    let cols = spec.ffn_up_columns().div_ceil(profile.tile_cols);
    profile.clone().with_cta_columns(cols)
}

/// The plan an iteration runs with.
pub fn plan_iteration(
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    options: &IterationOptions,
) -> Result<SplitPlan> {
    let t = batch.total_tokens();
    let plan = match options.mode {
        BaselineMode::Default | BaselineMode::Multimem | BaselineMode::NoComm => {
            SplitPlan::whole(t, SplitMode::NoSplit)
        }
        BaselineMode::FuseOnly => SplitPlan::whole(t, SplitMode::FusedOnly),
        BaselineMode::TokenWeave => {
            if batch.decode_only || select_mode(t, &options.policy) != SplitMode::Overlap {
                return Ok(SplitPlan::whole(t, SplitMode::FusedOnly));
            }
            let plan = match options.strategy {
                SplitStrategy::Equal => SplitPlan::equal(t),
                SplitStrategy::Analytic => {
                    let reference = model_reference_profile(spec, profile);
                    SplitPlan::with_offset(t, smart_offset_analytic(t, &reference))
                }
                SplitStrategy::Smart => {
                    let mut failure = None;
                    let offset = smart_offset_sweep(t, &options.policy, |a, _| {
                        let plan = SplitPlan::new(t, a, SplitMode::Overlap);
                        match build_iteration_graph(&plan, batch, spec, profile, options.mode)
                            .and_then(|dag| simulate(&dag))
                        {
                            Ok(tl) => tl.iteration_latency,
                            Err(e) => {
                                failure.get_or_insert(e);
                                f64::INFINITY
                            }
                        }
                    });
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    SplitPlan::with_offset(t, offset as i64)
                }
            };
            if plan.is_split() {
                plan
            } else {
                SplitPlan::whole(t, SplitMode::FusedOnly)
            }
        }
    };
    Ok(plan)
}

#[derive(Clone, Copy)]
struct Cost {
    full: f64,
    contended: f64,
}

fn compute_cost(f: impl Fn(usize) -> f64, profile: &HardwareProfile) -> Cost {
    Cost {
        full: f(profile.num_sms),
        contended: f(profile.contended_sms()),
    }
}

struct SplitCosts {
    attention: Cost,
    ffn: Cost,
    collective: f64,
    norm: Cost,
}

fn split_costs(
    segments: &[AttentionSegment],
    spec: &LayerSpec,
    profile: &HardwareProfile,
    mode: BaselineMode,
) -> SplitCosts {
    let tokens: usize = segments.iter().map(|s| s.tokens).sum();
    let h = spec.hidden;
    let csms = profile.collective_sms;
    let collective = match mode {
        BaselineMode::NoComm => 0.0,
        BaselineMode::Default => {
            collective_time(CollectiveKind::AllReduce, tokens, h, csms, profile).duration
                * profile.default_allreduce_scale
        }
        BaselineMode::Multimem => {
            collective_time(CollectiveKind::AllReduce, tokens, h, csms, profile).duration
        }
        BaselineMode::FuseOnly | BaselineMode::TokenWeave => {
            collective_time(CollectiveKind::FusedArNorm, tokens, h, csms, profile).duration
        }
    };
    let norm = rmsnorm_time(tokens, h, profile, NormLayout::Replicated).duration;
    SplitCosts {
        attention: compute_cost(
            |s| attention_time_segments(segments, spec, s, profile).duration,
            profile,
        ),
        ffn: compute_cost(|s| ffn_time(tokens, spec, s, profile).duration, profile),
        collective,
        norm: Cost {
            full: norm,
            contended: norm,
        },
    }
}

fn compute_node(op: OpKind, split: SplitId, layer: usize, deps: Vec<usize>, c: Cost) -> Node {
    Node {
        op,
        split,
        stream: Stream::Compute,
        layer: Some(layer),
        deps,
        duration: c.full,
        contended_duration: c.contended,
    }
}

fn comm_node(op: OpKind, split: SplitId, layer: usize, deps: Vec<usize>, d: f64) -> Node {
    Node {
        op,
        split,
        stream: Stream::Comm,
        layer: Some(layer),
        deps,
        duration: d,
        contended_duration: d,
    }
}

/// Appends one layer's nodes to `dag`. `inputs` are the nodes producing the
/// layer input of the (prefix, suffix) splits, or of the whole batch in
/// `.0`. Returns the nodes producing the layer output in the same form.
fn push_layer(
    dag: &mut Dag,
    layer: usize,
    mode: BaselineMode,
    plan: &SplitPlan,
    costs: &[SplitCosts],
    inputs: (Option<usize>, Option<usize>),
) -> (Option<usize>, Option<usize>) {
    let deps = |x: Option<usize>| x.into_iter().collect::<Vec<_>>();
    if plan.mode == SplitMode::Overlap {
        let (p, s) = (&costs[0], &costs[1]);
        let fused = OpKind::FusedArNorm;
        let attn_p = dag.push(compute_node(
            OpKind::Attention,
            SplitId::Prefix,
            layer,
            deps(inputs.0),
            p.attention,
        ));
        let f_p = dag.push(comm_node(
            fused,
            SplitId::Prefix,
            layer,
            vec![attn_p],
            p.collective,
        ));
        let mut d = vec![attn_p];
        d.extend(inputs.1);
        let attn_s = dag.push(compute_node(
            OpKind::Attention,
            SplitId::Suffix,
            layer,
            d,
            s.attention,
        ));
        let f_s = dag.push(comm_node(
            fused,
            SplitId::Suffix,
            layer,
            vec![attn_s],
            s.collective,
        ));
        let ffn_p = dag.push(compute_node(
            OpKind::Ffn,
            SplitId::Prefix,
            layer,
            vec![f_p],
            p.ffn,
        ));
        let g_p = dag.push(comm_node(
            fused,
            SplitId::Prefix,
            layer,
            vec![ffn_p],
            p.collective,
        ));
        let ffn_s = dag.push(compute_node(
            OpKind::Ffn,
            SplitId::Suffix,
            layer,
            vec![f_s],
            s.ffn,
        ));
        let g_s = dag.push(comm_node(
            fused,
            SplitId::Suffix,
            layer,
            vec![ffn_s],
            s.collective,
        ));
        return (Some(g_p), Some(g_s));
    }
    let w = &costs[0];
    let mut last = dag.push(compute_node(
        OpKind::Attention,
        SplitId::Whole,
        layer,
        deps(inputs.0),
        w.attention,
    ));
    for half in 0..2 {
        if half == 1 {
            last = dag.push(compute_node(
                OpKind::Ffn,
                SplitId::Whole,
                layer,
                vec![last],
                w.ffn,
            ));
        }
        match mode {
            BaselineMode::FuseOnly | BaselineMode::TokenWeave => {
                last = dag.push(comm_node(
                    OpKind::FusedArNorm,
                    SplitId::Whole,
                    layer,
                    vec![last],
                    w.collective,
                ));
            }
            BaselineMode::NoComm => {
                last = dag.push(compute_node(
                    OpKind::RmsNorm,
                    SplitId::Whole,
                    layer,
                    vec![last],
                    w.norm,
                ));
            }
            BaselineMode::Default | BaselineMode::Multimem => {
                last = dag.push(comm_node(
                    OpKind::AllReduce,
                    SplitId::Whole,
                    layer,
                    vec![last],
                    w.collective,
                ));
                last = dag.push(compute_node(
                    OpKind::RmsNorm,
                    SplitId::Whole,
                    layer,
                    vec![last],
                    w.norm,
                ));
            }
        }
    }
    (Some(last), None)
}

/// Dependency graph of one layer.
///
/// Sequential modes chain attention, the collective step, FFN and the
/// collective step over the whole batch. With an `Overlap` plan the prefix
/// and suffix are interleaved so that each split's collective runs on the
/// comm stream while the other split computes.
pub fn build_layer_graph(
    plan: &SplitPlan,
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    mode: BaselineMode,
) -> Result<Dag> {
    let costs = layer_costs(plan, batch, spec, profile, mode)?;
    let mut dag = Dag::new();
    push_layer(&mut dag, 0, mode, plan, &costs, (None, None));
    Ok(dag)
}

fn layer_costs(
    plan: &SplitPlan,
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    mode: BaselineMode,
) -> Result<Vec<SplitCosts>> {
    if plan.total_tokens != batch.total_tokens() {
        return Err(Error::Contract(format!(
            "plan covers {} tokens, batch has {}",
            plan.total_tokens,
            batch.total_tokens()
        )));
    }
    match plan.mode {
        SplitMode::Overlap => {
            if mode != BaselineMode::TokenWeave {
                return Err(Error::Contract(format!(
                    "mode {mode} cannot run an overlap plan"
                )));
            }
            if !plan.is_split() {
                return Err(Error::Contract("overlap plan with an empty split".into()));
            }
            let (p, s) = batch.split(plan)?;
            Ok(vec![
                split_costs(&p, spec, profile, mode),
                split_costs(&s, spec, profile, mode),
            ])
        }
        SplitMode::NoSplit if mode == BaselineMode::TokenWeave => Err(Error::Contract(
            "tokenweave mode needs a fused or overlap plan".into(),
        )),
        _ => Ok(vec![split_costs(&batch.segments, spec, profile, mode)]),
    }
}

/// Graph of a whole iteration: every layer, the final norm (after an
/// AllGather of the residual shards when the fused kernel is in use) and the
/// non-layer overhead.
pub fn build_iteration_graph(
    plan: &SplitPlan,
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    mode: BaselineMode,
) -> Result<Dag> {
    spec.validate()?;
    let costs = layer_costs(plan, batch, spec, profile, mode)?;
    let mut dag = Dag::new();
    let mut io = (None, None);
    for layer in 0..spec.num_layers {
        io = push_layer(&mut dag, layer, mode, plan, &costs, io);
    }
    let t = batch.total_tokens();
    let mut deps: Vec<usize> = [io.0, io.1].into_iter().flatten().collect();
    if matches!(mode, BaselineMode::FuseOnly | BaselineMode::TokenWeave) {
        let ag = collective_time(
            CollectiveKind::AllGather,
            t,
            spec.hidden,
            profile.collective_sms,
            profile,
        );
        let id = dag.push(Node {
            op: OpKind::AllGather,
            split: SplitId::Whole,
            stream: Stream::Comm,
            layer: None,
            deps,
            duration: ag.duration,
            contended_duration: ag.duration,
        });
        deps = vec![id];
    }
    let norm = rmsnorm_time(t, spec.hidden, profile, NormLayout::Replicated).duration;
    let id = dag.push(Node {
        op: OpKind::RmsNorm,
        split: SplitId::Whole,
        stream: Stream::Compute,
        layer: None,
        deps,
        duration: norm,
        contended_duration: norm,
    });
    dag.push(Node {
        op: OpKind::Misc,
        split: SplitId::Whole,
        stream: Stream::Compute,
        layer: None,
        deps: vec![id],
        duration: profile.non_layer_overhead,
        contended_duration: profile.non_layer_overhead,
    });
    Ok(dag)
}

/// Plans, builds and simulates one iteration.
pub fn iteration_timeline(
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    options: &IterationOptions,
) -> Result<(SplitPlan, Timeline)> {
    let plan = plan_iteration(batch, spec, profile, options)?;
    let dag = build_iteration_graph(&plan, batch, spec, profile, options.mode)?;
    Ok((plan, simulate(&dag)?))
}

/// Modeled latency of one forward iteration, seconds.
pub fn iteration_latency(
    batch: &BatchShape,
    spec: &LayerSpec,
    profile: &HardwareProfile,
    options: &IterationOptions,
) -> Result<f64> {
    if batch.total_tokens() == 0 {
        return Ok(0.0);
    }
    Ok(iteration_timeline(batch, spec, profile, options)?
        .1
        .iteration_latency)
}
