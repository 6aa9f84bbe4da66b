"""Policy-contrastive encoder, its training losses, and the similarity reward.

The encoder maps transitions (by default just their states) onto the unit
sphere. Training pulls expert embeddings together and pushes agent embeddings
away via a multi-positive InfoNCE loss over a half-expert/half-agent batch;
imitation reward is the cosine similarity between an embedding and an expert
reference embedding, so it is bounded in [-1, 1] by construction.

Encoder updates add an interpolated gradient penalty on the reward's input
gradient. The penalty value can be evaluated exactly (one reverse pass down
to the inputs), but optimising it would need second-order tape support; the
update path instead differentiates a central-finite-difference surrogate of
the input gradient, which agrees with the exact value to ~1e-3 and is an
ordinary first-order graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

#: Additive mask that removes an anchor's own column from its candidate set.
_MASK = -1e9


@dataclass
class ContrastiveBatch:
    """Half expert, half agent encoder inputs (the expert-data ratio 0.5)."""

    expert_inputs: np.ndarray
    agent_inputs: np.ndarray


class Encoder:
    """Feed-forward encoder with unit-sphere output projection.

    Standalone form: a 4-layer MLP ``input -> hidden x3 -> embed_dim``. When a
    shared trunk is supplied, the same head sits on the trunk's features; the
    trunk is never trained by encoder losses (it belongs to the critic), so
    the forward pass through it is always constant with respect to updates
    here, while input gradients still flow through it.

    ``embed`` instruments the unit-norm contract: ``norm_violations`` counts
    outputs farther than 1e-9 from unit length (it should stay zero forever).
    """

    def __init__(
        self,
        rng: np.random.Generator,
        state_dim: int,
        action_dim: int = 0,
        hidden_dim: int = 256,
        embed_dim: int = 64,
        temperature: float = 0.07,
        encode_action: bool = False,
        trunk: ad.ParameterSet | None = None,
        trunk_out_dim: int | None = None,
    ):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.encode_action = encode_action
        self.temperature = temperature
        self.embed_dim = embed_dim
        self.trunk = trunk
        feature_dim = trunk_out_dim if trunk is not None else state_dim
        head_in = feature_dim + (action_dim if encode_action else 0)
        self.head = ad.mlp_params(rng, [head_in, hidden_dim, hidden_dim, hidden_dim, embed_dim])
        self.norm_violations = 0
        self.max_norm_error = 0.0

    def build_inputs(self, states: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        """Assemble raw encoder inputs from transition fields."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if not self.encode_action:
            return states
        if actions is None:
            raise ValueError("encoder is configured with encode_action=true but got no actions")
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        return np.concatenate([states, actions], axis=1)

    def embed_graph(self, tape: ad.Tape, x: ad.Tensor, head_nodes=None) -> ad.Tensor:
        """Embedding as a tape graph; pass watched head nodes when training."""
        if self.encode_action:
            state_part = _slice_cols(x, 0, self.state_dim)
            action_part = _slice_cols(x, self.state_dim, x.data.shape[1])
        else:
            state_part, action_part = x, None
        features = state_part
        if self.trunk is not None:
            trunk_nodes = {n: tape.constant(v) for n, v in self.trunk.items()}
            features = ad.mlp_apply(trunk_nodes, features, hidden="relu", output="relu")
        if action_part is not None:
            features = ad.concat([features, action_part], axis=1)
        nodes = head_nodes if head_nodes is not None else {
            n: tape.constant(v) for n, v in self.head.items()
        }
        out = ad.mlp_apply(nodes, features, hidden="relu", output=None)
        emb = ad.sphere_normalize(out, axis=-1)
        self._check_norms(emb.data)
        return emb

    def embed(self, inputs: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings, inference path."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if not np.all(np.isfinite(inputs)):
            raise ad.NonFiniteError("encoder inputs contain NaN or Inf")
        x = inputs
        if self.encode_action:
            states, actions = x[:, : self.state_dim], x[:, self.state_dim :]
        else:
            states, actions = x, None
        features = states
        if self.trunk is not None:
            features = ad.mlp_apply_np(self.trunk, features, hidden="relu", output="relu")
        if actions is not None:
            features = np.concatenate([features, actions], axis=1)
        out = ad.mlp_apply_np(self.head, features, hidden="relu", output=None)
        norm = np.sqrt((out * out).sum(axis=1, keepdims=True))
        denom = np.where(norm < 1e-6, norm + 1e-8, norm)
        emb = out / denom
        self._check_norms(emb)
        return emb

    def _check_norms(self, emb: np.ndarray) -> None:
        err = float(np.max(np.abs(np.linalg.norm(emb, axis=-1) - 1.0)))
        self.max_norm_error = max(self.max_norm_error, err)
        if err > 1e-9:
            self.norm_violations += 1


def _slice_cols(x: ad.Tensor, lo: int, hi: int) -> ad.Tensor:
    # column selection via a constant selector matrix keeps the primitive set small
    d = x.data.shape[1]
    sel = np.zeros((d, hi - lo))
    sel[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
    return ad.matmul(x, x.tape.constant(sel))


# ---------------------------------------------------------------------------
# InfoNCE over expert/agent batches
# ---------------------------------------------------------------------------


def contrastive_loss_graph(
    expert_emb: ad.Tensor,
    agent_emb: ad.Tensor,
    temperature: float,
    inside_log: bool = False,
) -> ad.Tensor:
    """Multi-positive InfoNCE on already-embedded batches.

    Each expert row anchors once; every other expert row is a positive and
    every agent row a negative. With similarities s = <anchor, other>/tau the
    default ("outside the log") anchor loss is the mean over positives p of
    ``-log(exp(s_p) / sum(exp(s_over_all_candidates)))``; ``inside_log``
    averages the positive terms before the log instead.
    """
    tape = expert_emb.tape
    n_expert = expert_emb.data.shape[0]
    n_agent = agent_emb.data.shape[0]
    if n_expert < 2:
        raise ValueError("contrastive loss needs at least 2 expert items")
    if n_agent < 1:
        raise ValueError("contrastive loss needs at least 1 agent item")
    sims_ee = ad.scale(ad.matmul(expert_emb, ad.transpose(expert_emb)), 1.0 / temperature)
    sims_ea = ad.scale(ad.matmul(expert_emb, ad.transpose(agent_emb)), 1.0 / temperature)
    eye = np.eye(n_expert)
    masked_ee = ad.add(sims_ee, tape.constant(_MASK * eye))
    candidates = ad.concat([masked_ee, sims_ea], axis=1)
    lse = ad.logsumexp(candidates, axis=1)
    if inside_log:
        lse_pos = ad.logsumexp(masked_ee, axis=1)
        per_anchor = ad.add(ad.sub(lse, lse_pos), tape.constant(np.log(n_expert - 1.0)))
    else:
        off_diag = (1.0 - eye) / (n_expert - 1.0)
        pos_mean = ad.tsum(ad.mul(sims_ee, tape.constant(off_diag)), axis=1)
        per_anchor = ad.sub(lse, pos_mean)
    return ad.tmean(per_anchor)


def infonce_loss(encoder: Encoder, batch: ContrastiveBatch, inside_log: bool = False) -> float:
    """Loss value only (no update), e.g. for tests and metrics."""
    tape = ad.Tape()
    e = encoder.embed_graph(tape, tape.constant(encoder_inputs(batch.expert_inputs)))
    a = encoder.embed_graph(tape, tape.constant(encoder_inputs(batch.agent_inputs)))
    return float(contrastive_loss_graph(e, a, encoder.temperature, inside_log).data)


def encoder_inputs(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# similarity reward and the expert reference
# ---------------------------------------------------------------------------


def make_expert_reference(
    encoder: Encoder,
    expert_inputs: np.ndarray,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """Reference embedding the reward compares against.

    ``sample`` picks one random expert item (the cheap estimator used during
    training); ``mean`` averages the whole batch's embeddings and, unless
    ``normalize=False``, renormalises the mean back onto the sphere.
    """
    expert_inputs = encoder_inputs(expert_inputs)
    if expert_inputs.shape[0] == 0:
        raise ValueError("expert reference needs at least one expert item")
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        idx = int(rng.integers(0, expert_inputs.shape[0]))
        return encoder.embed(expert_inputs[idx : idx + 1])[0]
    if mode != "mean":
        raise ValueError(f"unknown reference mode {mode!r}")
    mean = encoder.embed(expert_inputs).mean(axis=0)
    if not normalize:
        return mean
    norm = np.linalg.norm(mean)
    denom = norm + 1e-8 if norm < 1e-6 else norm
    return mean / denom


def similarity_reward(encoder: Encoder, inputs: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Cosine similarity of each input's embedding to the reference."""
    emb = encoder.embed(encoder_inputs(inputs))
    return emb @ np.asarray(reference, dtype=np.float64)


def al_gap(
    encoder: Encoder,
    expert_inputs: np.ndarray,
    agent_inputs: np.ndarray,
    normalize_ref: bool = True,
) -> float:
    """Mean expert reward minus mean agent reward, mean-mode reference.

    This is the apprenticeship-learning objective the contrastive loss
    implicitly maximises. ``normalize_ref=False`` uses the raw mean embedding
    as the reference, the form whose value is provably dominated by the
    box-constrained divergence on finite supports (see pcil.divergence).
    """
    ref = make_expert_reference(encoder, expert_inputs, mode="mean", normalize=normalize_ref)
    expert_r = similarity_reward(encoder, expert_inputs, ref)
    agent_r = similarity_reward(encoder, agent_inputs, ref)
    return float(expert_r.mean() - agent_r.mean())


# ---------------------------------------------------------------------------
# gradient penalty
# ---------------------------------------------------------------------------


def interpolate_pairs(
    expert_inputs: np.ndarray, agent_inputs: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Random convex combinations of paired expert/agent inputs."""
    e = encoder_inputs(expert_inputs)
    a = encoder_inputs(agent_inputs)
    if len(e) == 0 or len(a) == 0:
        raise ValueError("gradient penalty needs non-empty batches")
    n = min(len(e), len(a))
    u = rng.uniform(0.0, 1.0, size=(n, 1))
    return u * e[:n] + (1.0 - u) * a[:n]


def reward_input_gradients(encoder, x_hat: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Exact per-sample gradient of the similarity reward w.r.t. its input."""
    tape = ad.Tape()
    x = tape.leaf(np.asarray(x_hat, dtype=np.float64))
    emb = encoder.embed_graph(tape, x)
    total = ad.tsum(ad.matmul(emb, tape.constant(np.asarray(reference)[:, None])))
    tape.backward(total)
    return x.grad


def gradient_penalty(
    encoder,
    expert_inputs: np.ndarray,
    agent_inputs: np.ndarray,
    reference: np.ndarray,
    rng: np.random.Generator,
    center_zero: bool = False,
) -> float:
    """Exact penalty value on interpolated inputs (reverse pass to inputs).

    Default form penalises the reward's input-gradient norm toward 1;
    ``center_zero`` penalises the squared norm toward 0 instead.
    """
    x_hat = interpolate_pairs(expert_inputs, agent_inputs, rng)
    grads = reward_input_gradients(encoder, x_hat, reference)
    norms = np.linalg.norm(grads, axis=1)
    if center_zero:
        return float(np.mean(norms**2))
    return float(np.mean((norms - 1.0) ** 2))


def penalty_graph(
    tape: ad.Tape,
    encoder,
    head_nodes,
    x_hat: np.ndarray,
    reference: np.ndarray,
    center_zero: bool = False,
    fd_step: float = 1e-5,
) -> ad.Tensor:
    """First-order differentiable surrogate of the gradient penalty.

    The input gradient is approximated by central differences over input
    perturbations, so the whole expression stays on the ordinary tape and one
    backward pass yields the parameter gradient of the penalty. Agrees with
    the exact value to ~1e-3.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    n, d = x_hat.shape
    eye = np.eye(d)
    plus = np.concatenate([x_hat + fd_step * eye[j] for j in range(d)], axis=0)
    minus = np.concatenate([x_hat - fd_step * eye[j] for j in range(d)], axis=0)
    ref_col = tape.constant(np.asarray(reference)[:, None])
    r_plus = ad.matmul(encoder.embed_graph(tape, tape.constant(plus), head_nodes), ref_col)
    r_minus = ad.matmul(encoder.embed_graph(tape, tape.constant(minus), head_nodes), ref_col)
    fd = ad.scale(ad.sub(r_plus, r_minus), 1.0 / (2.0 * fd_step))
    per_dim = ad.reshape(fd, (d, n))
    sum_sq = ad.tsum(ad.mul(per_dim, per_dim), axis=0)
    if center_zero:
        return ad.tmean(sum_sq)
    norms = ad.sqrt(ad.add(sum_sq, tape.constant(np.full(n, 1e-12))))
    dev = ad.sub(norms, tape.constant(np.ones(n)))
    return ad.tmean(ad.mul(dev, dev))


# ---------------------------------------------------------------------------
# the encoder update
# ---------------------------------------------------------------------------


def encoder_update(
    encoder: Encoder,
    batch: ContrastiveBatch,
    adam_state: ad.AdamState,
    rng: np.random.Generator,
    gp_weight: float = 10.0,
    inside_log: bool = False,
    center_zero: bool = False,
) -> tuple[float, float]:
    """One Adam step on ``InfoNCE + gp_weight * gradient penalty``.

    Returns (representation loss, penalty surrogate value). The gradient
    penalty probes the similarity reward against the batch's mean-mode
    reference, held constant for the step.
    """
    expert = encoder_inputs(batch.expert_inputs)
    agent = encoder_inputs(batch.agent_inputs)
    reference = make_expert_reference(encoder, expert, mode="mean")
    x_hat = interpolate_pairs(expert, agent, rng)

    tape = ad.Tape()
    head_nodes = encoder.head.watch(tape)
    emb_e = encoder.embed_graph(tape, tape.constant(expert), head_nodes)
    emb_a = encoder.embed_graph(tape, tape.constant(agent), head_nodes)
    loss = contrastive_loss_graph(emb_e, emb_a, encoder.temperature, inside_log)
    penalty = penalty_graph(tape, encoder, head_nodes, x_hat, reference, center_zero)
    total = ad.add(loss, ad.scale(penalty, gp_weight))
    tape.backward(total)
    grads = {name: node.grad for name, node in head_nodes.items()}
    ad.adam_step(encoder.head, grads, adam_state)
    return float(loss.data), float(penalty.data)
