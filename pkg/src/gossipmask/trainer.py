"""Synchronous multi-agent training loops and verification harnesses.

Algorithms
----------
``gossip_mask``
    Collaborative mask learning. All agents share one fixed random
    parameter set and each trains a personalized score tensor. Every round
    an agent (a) back-propagates through its masked network and steps the
    scores, (b) broadcasts the binary mask extracted from an aggregation
    tensor that blends the scores with the previous round's neighbor
    masks, (c) fine-tunes the scores with its cached gradient restricted
    to entries the fresh neighbor masks touch, and (d) re-extracts its
    mask from the aggregation tensor built on the fine-tuned scores. Only
    1-bit masks ever cross the wire.
``ind_mask``
    The same score/mask update without any communication.
``ind_weipru``
    Per-agent SGD on real weights, magnitude-pruned back to the agent's
    retention ratio after every step; no communication.
``avr_weipru``
    ind_weipru plus transmission of the pruned weights and replacement by
    the neighborhood average (self included).
``par_weipru``
    avr_weipru restricted to the coordinates kept by the local mask;
    all other coordinates stay local.
``dsgd``
    Dense SGD with neighborhood averaging, no pruning.

Within a round agents are processed in ascending id and all reductions
over neighbors iterate in ascending sender id, so results do not depend
on scheduling. The shared parameter set is never written by the
mask-based algorithms.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .masking import (MaskState, extract, extract_mask, group_lasso_grad,
                      threshold_layer)
from .nn import (ModelArch, conv2d, flatten, forward, grad_z, init_params,
                 linear, loss_and_grad_v, relu)
from .protocol import (CommLedger, SimulationError, account_real_bits,
                       decode_mask, encode_mask, exchange)
from .seeds import seed_key, substream

__all__ = [
    "ALGORITHMS",
    "AgentState",
    "HyperConfig",
    "MetricsRow",
    "MetricsLog",
    "BoundReport",
    "sample_batch",
    "backprop_half_step",
    "fine_tune_step",
    "aggregate_step",
    "gossip_mask_round",
    "baseline_round",
    "run",
    "mask_vs_weight_verify",
    "bound_check",
    "make_masked_net",
    "random_bound_instance",
]

ALGORITHMS = ("gossip_mask", "ind_mask", "ind_weipru", "avr_weipru",
              "par_weipru", "dsgd")
_MASK_ALGORITHMS = ("gossip_mask", "ind_mask")


@dataclass
class HyperConfig:
    algorithm: str
    rounds: int
    batch_size: int
    eta: float
    lam: float
    seed: int
    retention: tuple
    min_nonzero: int = 2
    eval_interval: int = 10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm '{self.algorithm}'")
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if self.eval_interval < 1:
            raise ValueError("eval interval must be at least 1")
        self.retention = tuple(float(r) for r in self.retention)


@dataclass
class AgentState:
    """Everything one agent owns between rounds."""

    agent_id: int
    mask: MaskState
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    eta: float
    lam: float
    m: dict = None                    # current binary masks (None = unmasked)
    grad_cache: dict = None           # score gradient of the last half-step
    neighbor_masks: dict = field(default_factory=dict)  # sender -> mask set
    weights: dict = None              # per-agent weights (weight baselines)
    last_loss: float = math.nan


@dataclass
class MetricsRow:
    round: int
    agent: int                        # -1 marks the per-round mean row
    accuracy: float
    loss: float
    payload_bits: int
    header_bits: int


@dataclass
class MetricsLog:
    """Evaluation rows (sorted by round, then agent with the mean row
    first) plus the final per-agent, per-layer mask density."""

    rows: list = field(default_factory=list)
    final_sparsity: dict = field(default_factory=dict)

    def rounds(self):
        return sorted({row.round for row in self.rows})

    def mean_accuracy(self, round_index):
        for row in self.rows:
            if row.round == round_index and row.agent == -1:
                return row.accuracy
        raise KeyError(f"round {round_index} was not evaluated")

    def final_mean_accuracy(self):
        return self.mean_accuracy(self.rounds()[-1])


def sample_batch(seed, agent, round_index, n, batch_size):
    """Deterministic batch indices for (seed, agent, round); sampling is
    with replacement so any shard size works."""
    if n <= 0:
        raise ValueError(f"agent {agent} has an empty training shard")
    rng = substream(seed, "batch", agent, round_index)
    return rng.integers(0, n, size=batch_size)


def _average_masks(mask_sets):
    """Entry-wise mean of the given mask sets (keyed by sender); None when
    there is nothing to average (the empty average acts as a zero tensor)."""
    if not mask_sets:
        return None
    senders = sorted(mask_sets)
    avg = {layer: np.array(m, dtype=np.float64)
           for layer, m in mask_sets[senders[0]].items()}
    for s in senders[1:]:
        for layer, m in mask_sets[s].items():
            avg[layer] += m
    for layer in avg:
        avg[layer] /= len(senders)
    return avg


def _aggregation_tensor(z, neighbor_avg):
    """Blend neighbor mask information into the scores: per layer
    y = z + mean(|z|) * sign(z) * neighbor_average."""
    if neighbor_avg is None:
        return {layer: t.copy() for layer, t in z.items()}
    return {layer: t + np.abs(t).mean() * np.sign(t) * neighbor_avg[layer]
            for layer, t in z.items()}


def backprop_half_step(state, w, arch, batch_x, batch_y):
    """Gradient half-step of the collaborative round.

    Computes the score gradient (data chain plus group-lasso term), steps
    the scores, builds the aggregation tensor against the masks received in
    the previous round and extracts the intermediate mask to transmit.
    Returns (half-stepped scores, cached gradient, intermediate mask set).
    """
    z_prev = state.mask.z
    loss, grad_v = loss_and_grad_v(arch, w, state.m, batch_x, batch_y)
    reg = group_lasso_grad(z_prev, state.lam)
    g = {layer: grad_z(grad_v[layer], w[layer], z_prev[layer]) + reg[layer]
         for layer in z_prev}
    z_half = {layer: z_prev[layer] - state.eta * g[layer] for layer in z_prev}
    y_half = _aggregation_tensor(z_half, _average_masks(state.neighbor_masks))
    m_half = extract(y_half, state.mask.r, state.mask.min_nonzero)
    state.mask.z = z_half
    state.grad_cache = g
    state.last_loss = loss
    return z_half, g, m_half


def _check_received(state, received):
    if set(received) != set(state.neighbor_masks):
        raise SimulationError(
            f"agent {state.agent_id}: frames from {sorted(received)} do not "
            f"match neighbors {sorted(state.neighbor_masks)}")


def fine_tune_step(state, received):
    """Personalized fine-tuning: re-apply the cached score gradient, scaled
    entry-wise by the average of the just-received neighbor masks. No new
    gradient is computed."""
    if state.grad_cache is None:
        raise SimulationError(
            f"agent {state.agent_id}: fine-tune before the gradient half-step")
    _check_received(state, received)
    avg = _average_masks(received)
    if avg is not None:
        state.mask.z = {layer: t - state.eta * state.grad_cache[layer] * avg[layer]
                        for layer, t in state.mask.z.items()}
    return state.mask.z


def aggregate_step(state, received):
    """Fuse the received masks through the aggregation tensor built on the
    fine-tuned scores, re-extract the agent's mask and retain the received
    masks for the next round. Returns (aggregation tensors, new mask set)."""
    _check_received(state, received)
    y = _aggregation_tensor(state.mask.z, _average_masks(received))
    m = extract(y, state.mask.r, state.mask.min_nonzero)
    state.m = m
    state.neighbor_masks = {s: received[s] for s in sorted(received)}
    state.grad_cache = None
    return y, m


def _local_batch(state, hyper, round_index):
    idx = sample_batch(hyper.seed, state.agent_id, round_index,
                       len(state.train_y), hyper.batch_size)
    return state.train_x[idx], state.train_y[idx]


def gossip_mask_round(states, w, arch, graph, hyper, round_index, ledger=None):
    """One synchronous collaborative round: per-agent half-step, one frame
    exchange, then fine-tuning and aggregation per agent."""
    shapes = arch.param_shapes()
    outbox = {}
    for state in states:
        bx, by = _local_batch(state, hyper, round_index)
        _, _, m_half = backprop_half_step(state, w, arch, bx, by)
        outbox[state.agent_id] = encode_mask(m_half, state.agent_id, round_index)
    inbox = exchange(graph, outbox, ledger)
    for state in states:
        received = {f.sender: decode_mask(f, shapes)
                    for f in inbox[state.agent_id]}
        fine_tune_step(state, received)
        aggregate_step(state, received)
    return states


def _ind_mask_round(states, w, arch, hyper, round_index):
    for state in states:
        bx, by = _local_batch(state, hyper, round_index)
        loss, grad_v = loss_and_grad_v(arch, w, state.m, bx, by)
        reg = group_lasso_grad(state.mask.z, state.lam)
        for layer, t in state.mask.z.items():
            g = grad_z(grad_v[layer], w[layer], t) + reg[layer]
            state.mask.z[layer] = t - state.eta * g
        state.m = extract_mask(state.mask)
        state.last_loss = loss


def _dsgd_round(states, arch, graph, hyper, round_index, ledger):
    stepped = {}
    for state in states:
        bx, by = _local_batch(state, hyper, round_index)
        loss, grad = loss_and_grad_v(arch, state.weights, None, bx, by)
        stepped[state.agent_id] = {layer: state.weights[layer] - state.eta * grad[layer]
                                   for layer in state.weights}
        state.last_loss = loss
        if ledger is not None:
            ledger.add_transmission(round_index, state.agent_id,
                                    graph.neighbors[state.agent_id],
                                    account_real_bits(stepped[state.agent_id]))
    for state in states:
        parties = [state.agent_id] + [int(j) for j in graph.neighbors[state.agent_id]]
        state.weights = {layer: sum(stepped[p][layer] for p in parties) / len(parties)
                         for layer in state.weights}


def _weipru_round(kind, states, arch, graph, hyper, round_index, ledger):
    pruned = {}
    for state in states:
        bx, by = _local_batch(state, hyper, round_index)
        loss, grad_v = loss_and_grad_v(arch, state.weights, state.m, bx, by)
        # v = w * m, so the weight gradient is the v-gradient masked
        state.weights = {layer: state.weights[layer]
                         - state.eta * grad_v[layer] * state.m[layer]
                         for layer in state.weights}
        state.m = {layer: threshold_layer(state.weights[layer], state.mask.r)
                   for layer in state.weights}
        pruned[state.agent_id] = {layer: state.weights[layer] * state.m[layer]
                                  for layer in state.weights}
        state.last_loss = loss
    if kind == "ind_weipru":
        return
    for state in states:
        if ledger is not None:
            ledger.add_transmission(round_index, state.agent_id,
                                    graph.neighbors[state.agent_id],
                                    account_real_bits(pruned[state.agent_id]))
    for state in states:
        parties = [state.agent_id] + [int(j) for j in graph.neighbors[state.agent_id]]
        avg = {layer: sum(pruned[p][layer] for p in parties) / len(parties)
               for layer in state.weights}
        if kind == "avr_weipru":
            state.weights = avg
        else:  # par_weipru: average only where the local mask keeps the entry
            state.weights = {layer: np.where(state.m[layer] == 1.0, avg[layer],
                                             state.weights[layer])
                             for layer in state.weights}


def baseline_round(kind, states, w, arch, graph, hyper, round_index, ledger=None):
    """One synchronous round of a baseline algorithm."""
    if kind == "ind_mask":
        _ind_mask_round(states, w, arch, hyper, round_index)
    elif kind == "dsgd":
        _dsgd_round(states, arch, graph, hyper, round_index, ledger)
    elif kind in ("ind_weipru", "avr_weipru", "par_weipru"):
        _weipru_round(kind, states, arch, graph, hyper, round_index, ledger)
    else:
        raise ValueError(f"unknown baseline '{kind}'")
    return states


# ------------------------------------------------------------- evaluation

def _accuracy(arch, params, masks, x, y, chunk=512):
    if len(y) == 0:
        return math.nan
    correct = 0
    for start in range(0, len(y), chunk):
        logits, _ = forward(arch, params, masks, x[start:start + chunk])
        correct += int((logits.argmax(axis=1) == y[start:start + chunk]).sum())
    return correct / len(y)


def _train_loss(arch, params, masks, state, limit=256):
    n = min(limit, len(state.train_y))
    loss, _ = loss_and_grad_v(arch, params, masks,
                              state.train_x[:n], state.train_y[:n])
    return loss


def _evaluate_round(log, round_index, states, w, arch, ledger):
    sent_payload, sent_header, _, _ = ledger.totals()
    accs, losses = [], []
    rows = []
    for state in states:
        params = state.weights if state.weights is not None else w
        acc = _accuracy(arch, params, state.m, state.test_x, state.test_y)
        loss = _train_loss(arch, params, state.m, state)
        accs.append(acc)
        losses.append(loss)
        rows.append(MetricsRow(round_index, state.agent_id, acc, loss,
                               sent_payload, sent_header))
    log.rows.append(MetricsRow(round_index, -1, float(np.mean(accs)),
                               float(np.mean(losses)), sent_payload, sent_header))
    log.rows.extend(rows)


def _final_sparsity(states, arch):
    shapes = arch.param_shapes()
    out = {}
    for state in states:
        per_layer = {}
        for layer, shape in shapes.items():
            total = int(np.prod(shape))
            ones = total if state.m is None else int(state.m[layer].sum())
            per_layer[layer] = (ones, total)
        out[state.agent_id] = per_layer
    return out


def build_states(arch, hyper, graph, train, test, plan):
    """Initial per-agent states for :func:`run`: score tensors from the
    per-agent z substream, shards from the partition plan."""
    if len(hyper.retention) != graph.n:
        raise ValueError(
            f"retention list has {len(hyper.retention)} entries for {graph.n} agents")
    if len(plan.train_indices) != graph.n:
        raise ValueError("partition plan does not match the agent count")
    shapes = arch.param_shapes()
    states = []
    for i in range(graph.n):
        tr = plan.train_indices[i]
        te = plan.test_indices[i]
        if len(tr) == 0:
            raise ValueError(f"agent {i} has an empty training shard")
        z = {layer: substream(hyper.seed, "z", i, layer).uniform(-1.0, 1.0, shape)
             for layer, shape in shapes.items()}
        states.append(AgentState(
            agent_id=i,
            mask=MaskState(z, hyper.retention[i], hyper.min_nonzero),
            train_x=train.features[tr], train_y=train.labels[tr],
            test_x=test.features[te], test_y=test.labels[te],
            eta=hyper.eta, lam=hyper.lam))
    return states


def run(arch, hyper, graph, train, test, plan):
    """Full training run; returns the metrics log.

    The shared parameter set comes from the params substream of the run
    seed. Mask algorithms bootstrap with one exchange of the initial masks
    (counted in the ledger); weight baselines start from per-agent copies
    of the shared parameters. Evaluation happens at round 0, every
    ``eval_interval`` rounds and at the final round; the logged loss is the
    current model's loss over (at most) the first 256 local train samples.
    """
    w = init_params(arch, seed_key(hyper.seed, "params"))
    states = build_states(arch, hyper, graph, train, test, plan)
    ledger = CommLedger()
    shapes = arch.param_shapes()

    if hyper.algorithm in _MASK_ALGORITHMS:
        for state in states:
            state.m = extract_mask(state.mask)
        if hyper.algorithm == "gossip_mask":
            # bootstrap neighbor masks with one (accounted) exchange
            outbox = {s.agent_id: encode_mask(s.m, s.agent_id, 0) for s in states}
            inbox = exchange(graph, outbox, ledger)
            for state in states:
                state.neighbor_masks = {f.sender: decode_mask(f, shapes)
                                        for f in inbox[state.agent_id]}
    else:
        for state in states:
            state.weights = {layer: w[layer].copy() for layer in w}
            if hyper.algorithm == "dsgd":
                state.m = None
            else:
                state.m = {layer: threshold_layer(state.weights[layer],
                                                  state.mask.r)
                           for layer in state.weights}

    log = MetricsLog()
    _evaluate_round(log, 0, states, w, arch, ledger)
    for k in range(1, hyper.rounds + 1):
        if hyper.algorithm == "gossip_mask":
            gossip_mask_round(states, w, arch, graph, hyper, k, ledger)
        else:
            baseline_round(hyper.algorithm, states, w, arch, graph, hyper, k,
                           ledger)
        if k % hyper.eval_interval == 0 or k == hyper.rounds:
            _evaluate_round(log, k, states, w, arch, ledger)
    log.final_sparsity = _final_sparsity(states, arch)
    return log


# --------------------------------------------- mask-vs-weight verification

@dataclass
class MaskVsWeightTraces:
    """Accuracy traces of weight-trained vs mask-trained arms.

    ``weight`` maps agent -> [(step, accuracy)]; ``mask`` maps
    (agent, retention ratio) -> [(step, accuracy)]. Both arms of an agent
    start from the same fixed uniform [-1, 1] parameters and see the same
    batch sequence.
    """

    weight: dict
    mask: dict


def mask_vs_weight_verify(arch, shards, r_values, steps, eta_weight, eta_mask,
                          batch_size, seed, eval_interval=3):
    """Train each agent independently twice: full SGD on the weights, and
    mask-only training (plain sign-approximated score updates, no
    regularizer, no filter zeroing) at each retention ratio, from the same
    fixed random initialization. Accuracy is recorded at step 0 and every
    ``eval_interval`` steps."""
    w0 = init_params(arch, seed_key(seed, "params"))
    shapes = arch.param_shapes()
    weight_traces, mask_traces = {}, {}
    for a, (tx, ty, ex, ey) in enumerate(shards):
        batches = [sample_batch(seed, a, k, len(ty), batch_size)
                   for k in range(1, steps + 1)]
        wa = {layer: w0[layer].copy() for layer in w0}
        trace = [(0, _accuracy(arch, wa, None, ex, ey))]
        for k in range(1, steps + 1):
            idx = batches[k - 1]
            _, grad = loss_and_grad_v(arch, wa, None, tx[idx], ty[idx])
            for layer in wa:
                wa[layer] -= eta_weight * grad[layer]
            if k % eval_interval == 0:
                trace.append((k, _accuracy(arch, wa, None, ex, ey)))
        weight_traces[a] = trace
        for ri, r in enumerate(r_values):
            z = {layer: substream(seed, "z", a, ri, layer).uniform(-1.0, 1.0, shape)
                 for layer, shape in shapes.items()}
            m = extract(z, r, 0)
            trace = [(0, _accuracy(arch, w0, m, ex, ey))]
            for k in range(1, steps + 1):
                idx = batches[k - 1]
                _, grad_v = loss_and_grad_v(arch, w0, m, tx[idx], ty[idx])
                for layer in z:
                    z[layer] -= eta_mask * grad_z(grad_v[layer], w0[layer], z[layer])
                m = extract(z, r, 0)
                if k % eval_interval == 0:
                    trace.append((k, _accuracy(arch, w0, m, ex, ey)))
            mask_traces[(a, r)] = trace
    return MaskVsWeightTraces(weight_traces, mask_traces)


# ----------------------------------------------------- output-gap bounds

@dataclass
class BoundReport:
    """Measured max-norm output distances of four networks over a probe set
    and the two inequalities they imply.

    eps1/eps2 bound each pruned network against its reference, alpha_u and
    alpha_l are the sup/inf reference gaps, sup_gap/inf_gap the measured
    gaps between the two pruned networks. ``upper_holds`` checks
    sup_gap <= eps1 + eps2 + alpha_u; ``lower_holds`` checks
    inf_gap >= min(|eps1+eps2-alpha_l|, |eps1+eps2-alpha_u|, |alpha_l|).
    """

    eps1: float
    eps2: float
    alpha_u: float
    alpha_l: float
    sup_gap: float
    inf_gap: float
    upper_holds: bool
    lower_holds: bool


def make_masked_net(arch, params, masks=None):
    """Callable batch -> logits for a (possibly masked) parameter set."""
    return lambda x: forward(arch, params, masks, x)[0]


def bound_check(f1, f2, g1, g2, probe):
    """Measure the four pairwise max-norm distances over the probe set and
    evaluate the implied upper/lower output-gap inequalities.

    All four arguments are callables mapping a batch to outputs of one
    common shape. The upper inequality is a triangle-inequality consequence
    of the measured quantities, so a False there indicates an arithmetic
    bug rather than a property of the networks.
    """
    x = np.asarray(probe, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty probe set")
    outs = [np.asarray(f(x), dtype=np.float64) for f in (f1, f2, g1, g2)]
    shapes = {o.shape for o in outs}
    if len(shapes) != 1:
        raise ValueError(f"networks disagree on output shape: {shapes}")

    def gaps(a, b):
        return np.abs(a - b).reshape(x.shape[0], -1).max(axis=1)

    eps1 = float(gaps(outs[0], outs[2]).max())
    eps2 = float(gaps(outs[1], outs[3]).max())
    ref = gaps(outs[0], outs[1])
    alpha_u, alpha_l = float(ref.max()), float(ref.min())
    gap = gaps(outs[2], outs[3])
    sup_gap, inf_gap = float(gap.max()), float(gap.min())
    upper = sup_gap <= eps1 + eps2 + alpha_u
    lower = inf_gap >= min(abs(eps1 + eps2 - alpha_l),
                           abs(eps1 + eps2 - alpha_u), abs(alpha_l))
    return BoundReport(eps1, eps2, alpha_u, alpha_l, sup_gap, inf_gap,
                       upper, lower)


def random_bound_instance(seed, probes=200):
    """Random 4-network instance for bound checking: two independent
    reference networks, and two prunings of one further random network, all
    sharing a small conv architecture. Returns ((f1, f2, g1, g2), probe)."""
    arch = _bound_arch()
    rng = np.random.default_rng(seed)
    f1_params = init_params(arch, [int(rng.integers(2 ** 31)), 0])
    f2_params = init_params(arch, [int(rng.integers(2 ** 31)), 1])
    g_params = init_params(arch, [int(rng.integers(2 ** 31)), 2])
    shapes = arch.param_shapes()
    r1 = float(rng.uniform(0.2, 0.9))
    r2 = float(rng.uniform(0.2, 0.9))
    z1 = {layer: rng.standard_normal(shape) for layer, shape in shapes.items()}
    z2 = {layer: rng.standard_normal(shape) for layer, shape in shapes.items()}
    m1 = extract(z1, r1, 0)
    m2 = extract(z2, r2, 0)
    probe = rng.random((probes,) + arch.input_shape)
    nets = (make_masked_net(arch, f1_params),
            make_masked_net(arch, f2_params),
            make_masked_net(arch, g_params, m1),
            make_masked_net(arch, g_params, m2))
    return nets, probe


def _bound_arch():
    layers = (conv2d(2, 3, 3, padding=1), relu(), flatten(),
              linear(3 * 6 * 6, 4))
    return ModelArch(layers, (2, 6, 6), 4)
