"""Per-field sequence GAN with Wasserstein loss and gradient penalty.

One GAN is trained per dictionary field. Real examples are one-hot token id
sequences (L positions, V ids); the generator maps gaussian noise to a
per-position distribution over ids and the critic scores sequences with an
unbounded real value. The critic trains on

    E[D(G(z))] - E[D(x)] + lambda * (||grad_xhat D(xhat)||_2 - 1)^2

with xhat drawn uniformly on chords between real and generated batches (one
epsilon per sample). No weight clipping and no normalization layers, which
is exactly the regime the penalty exists for. The generator minimizes
-E[D(G(z))].

The default depth (3 conv layers, 2 dense) is sized for workstation runs;
the full-scale configuration deepens the stacks without changing anything
structural.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, Diverged, InsufficientData
from ..nn import ops
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.optim import adam_init, adam_update
from ..nn.tensor import Tensor, grad, leaky_relu, no_grad, reshape, softmax, transpose
from .encoder import TokenSequence


@dataclass(frozen=True)
class FieldGanConfig:
    seq_len: int = 32
    noise_dim: int = 64
    channels: int = 32
    kernel_width: int = 3
    conv_layers: int = 3
    dense_layers: int = 2
    dense_width: int = 128
    gp_lambda: float = 10.0
    critic_steps: int = 5
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 32
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.conv_layers < 1 or self.dense_layers < 1:
            raise ValueError("need at least one conv and one dense layer")
        if self.critic_steps < 1 or self.iterations < 1 or self.batch_size < 1:
            raise ValueError("critic_steps, iterations, batch_size must be >= 1")


@dataclass
class FieldGan:
    field: str
    vocab_size: int
    config: FieldGanConfig
    g_params: dict[str, Tensor]
    d_params: dict[str, Tensor]
    critic_history: list[float] = field(default_factory=list)


def init_field_gan(field_name: str, vocab_size: int, config: FieldGanConfig) -> FieldGan:
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    rng = np.random.default_rng([config.seed, _field_tag(field_name), 17])
    c, l, v, kw = config.channels, config.seq_len, vocab_size, config.kernel_width

    g: dict[str, Tensor] = {}
    prev = config.noise_dim
    for i in range(config.dense_layers - 1):
        g[f"dense{i}_w"], g[f"dense{i}_b"] = ops.dense_init(rng, config.dense_width, prev)
        prev = config.dense_width
    g[f"dense{config.dense_layers - 1}_w"], g[f"dense{config.dense_layers - 1}_b"] = (
        ops.dense_init(rng, c * l, prev)
    )
    for i in range(config.conv_layers - 1):
        g[f"conv{i}_w"] = ops.glorot_uniform(rng, (c, c, kw), c * kw, c * kw)
        g[f"conv{i}_b"] = Tensor(np.zeros(c), requires_grad=True)
    last = config.conv_layers - 1
    g[f"conv{last}_w"] = ops.glorot_uniform(rng, (v, c, kw), c * kw, v * kw)
    g[f"conv{last}_b"] = Tensor(np.zeros(v), requires_grad=True)

    d: dict[str, Tensor] = {}
    d["conv0_w"] = ops.glorot_uniform(rng, (c, v, kw), v * kw, c * kw)
    d["conv0_b"] = Tensor(np.zeros(c), requires_grad=True)
    for i in range(1, config.conv_layers):
        d[f"conv{i}_w"] = ops.glorot_uniform(rng, (c, c, kw), c * kw, c * kw)
        d[f"conv{i}_b"] = Tensor(np.zeros(c), requires_grad=True)
    prev = c * l
    for i in range(config.dense_layers - 1):
        d[f"dense{i}_w"], d[f"dense{i}_b"] = ops.dense_init(rng, config.dense_width, prev)
        prev = config.dense_width
    d[f"dense{config.dense_layers - 1}_w"], d[f"dense{config.dense_layers - 1}_b"] = (
        ops.dense_init(rng, 1, prev)
    )
    return FieldGan(field=field_name, vocab_size=vocab_size, config=config, g_params=g, d_params=d)


def _field_tag(field_name: str) -> int:
    """Stable small integer from a field name for seed sequences."""
    return sum(field_name.encode("utf-8")) % 65521


def generator_forward(gan: FieldGan, z: Tensor) -> Tensor:
    """(N, noise_dim) -> per-position id distributions (N, L, V)."""
    cfg = gan.config
    y = z
    for i in range(cfg.dense_layers):
        y = ops.dense_batch(y, gan.g_params[f"dense{i}_w"], gan.g_params[f"dense{i}_b"])
        y = ops.relu(y)
    y = reshape(y, (z.shape[0], cfg.channels, cfg.seq_len))
    for i in range(cfg.conv_layers - 1):
        y = ops.relu(
            ops.conv1d_same_batch(y, gan.g_params[f"conv{i}_w"], gan.g_params[f"conv{i}_b"])
        )
    last = cfg.conv_layers - 1
    y = ops.conv1d_same_batch(y, gan.g_params[f"conv{last}_w"], gan.g_params[f"conv{last}_b"])
    return softmax(transpose(y, (0, 2, 1)), axis=-1)  # (N, L, V)


def critic_forward(gan: FieldGan, x: Tensor) -> Tensor:
    """(N, L, V) -> unbounded scores (N, 1)."""
    cfg = gan.config
    y = transpose(x, (0, 2, 1))  # (N, V, L)
    for i in range(cfg.conv_layers):
        y = leaky_relu(
            ops.conv1d_same_batch(y, gan.d_params[f"conv{i}_w"], gan.d_params[f"conv{i}_b"])
        )
    y = reshape(y, (x.shape[0], cfg.channels * cfg.seq_len))
    for i in range(cfg.dense_layers - 1):
        y = leaky_relu(
            ops.dense_batch(y, gan.d_params[f"dense{i}_w"], gan.d_params[f"dense{i}_b"])
        )
    last = cfg.dense_layers - 1
    return ops.dense_batch(y, gan.d_params[f"dense{last}_w"], gan.d_params[f"dense{last}_b"])


def gradient_penalty(gan: FieldGan, real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> Tensor:
    """lambda * E[(||grad_xhat D(xhat)|| - 1)^2] on per-sample chord points.

    ``eps`` broadcasts over (N, 1, 1); the returned tensor carries the
    double-backward graph, so critic updates see the penalty's true
    second-order gradients.
    """
    xhat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = critic_forward(gan, xhat)
    (gx,) = grad(scores.sum(), [xhat], create_graph=True)
    norm = ((gx * gx).sum(axis=(1, 2))) ** 0.5
    return gan.config.gp_lambda * ((norm - 1.0) ** 2.0).mean()


def one_hot_sequences(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValueError(f"token id outside [0, {vocab_size})")
    return np.eye(vocab_size, dtype=np.float64)[ids]


def _stack_ids(sequences, seq_len: int) -> np.ndarray:
    rows = []
    for s in sequences:
        ids = s.ids if isinstance(s, TokenSequence) else np.asarray(s, dtype=np.int64)
        if len(ids) != seq_len:
            raise ValueError(f"sequence length {len(ids)} != configured {seq_len}")
        rows.append(ids)
    return np.stack(rows)


def train_field_gan(
    sequences,
    vocab_size: int,
    config: FieldGanConfig = FieldGanConfig(),
    field_name: str = "",
) -> FieldGan:
    """Adversarial training on encoded sequences of one field.

    ``sequences`` is a list of TokenSequence (or raw (L,) id arrays). The
    returned FieldGan carries the critic loss trace in ``critic_history``,
    one mean value per outer iteration.
    """
    ids = _stack_ids(sequences, config.seq_len)
    n = ids.shape[0]
    if n < config.batch_size:
        raise InsufficientData(
            f"field {field_name!r}: {n} sequences < batch size {config.batch_size}"
        )
    real_all = one_hot_sequences(ids, vocab_size)
    gan = init_field_gan(field_name, vocab_size, config)
    rng = np.random.default_rng([config.seed, _field_tag(field_name), 23])

    d_names = list(gan.d_params)
    g_names = list(gan.g_params)
    d_tensors = [gan.d_params[k] for k in d_names]
    g_tensors = [gan.g_params[k] for k in g_names]
    opt_d = adam_init(config.learning_rate, config.beta1, config.beta2)
    opt_g = adam_init(config.learning_rate, config.beta1, config.beta2)

    for _ in range(config.iterations):
        step_losses = []
        for _ in range(config.critic_steps):
            batch = real_all[rng.choice(n, config.batch_size, replace=False)]
            z = rng.standard_normal((config.batch_size, config.noise_dim))
            with no_grad():
                fake = generator_forward(gan, Tensor(z)).data
            eps = rng.uniform(0.0, 1.0, (config.batch_size, 1, 1))
            loss = (
                critic_forward(gan, Tensor(fake)).mean()
                - critic_forward(gan, Tensor(batch)).mean()
                + gradient_penalty(gan, batch, fake, eps)
            )
            value = loss.item()
            if not np.isfinite(value):
                raise Diverged(f"critic loss became {value}")
            grads = grad(loss, d_tensors)
            adam_update(gan.d_params, dict(zip(d_names, grads)), opt_d)
            step_losses.append(value)

        z = rng.standard_normal((config.batch_size, config.noise_dim))
        g_loss = -critic_forward(gan, generator_forward(gan, Tensor(z))).mean()
        value = g_loss.item()
        if not np.isfinite(value):
            raise Diverged(f"generator loss became {value}")
        grads = grad(g_loss, g_tensors)
        adam_update(gan.g_params, dict(zip(g_names, grads)), opt_g)
        gan.critic_history.append(float(np.mean(step_losses)))
    return gan


def sample_tokens(gan: FieldGan, z: np.ndarray) -> np.ndarray:
    """Hard token ids (N, L) from noise rows (N, noise_dim)."""
    with no_grad():
        probs = generator_forward(gan, Tensor(np.asarray(z, dtype=np.float64)))
    return np.argmax(probs.data, axis=-1)


# ---------------------------------------------------------------------------
# persistence


def save_field_gan(gan: FieldGan, path: str | Path, dict_hash: str = "") -> None:
    tensors: dict[str, np.ndarray] = {}
    for k, v in gan.g_params.items():
        tensors[f"g/{k}"] = v.data
    for k, v in gan.d_params.items():
        tensors[f"d/{k}"] = v.data
    meta = {
        "kind": "hmcd-field-gan",
        "field": gan.field,
        "vocab_size": gan.vocab_size,
        "config": asdict(gan.config),
        "dict_hash": dict_hash,
    }
    save_checkpoint(path, tensors, meta)


def load_field_gan(path: str | Path, expect_dict_hash: str | None = None) -> FieldGan:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "hmcd-field-gan":
        raise CheckpointError(f"checkpoint kind {meta.get('kind')!r} is not a field GAN")
    if expect_dict_hash is not None and meta.get("dict_hash") != expect_dict_hash:
        raise CheckpointError(
            "field GAN was trained against a different dictionary "
            f"({meta.get('dict_hash')!r} != {expect_dict_hash!r})"
        )
    config = FieldGanConfig(**meta["config"])
    gan = init_field_gan(meta["field"], int(meta["vocab_size"]), config)
    for name, data in tensors.items():
        side, key = name.split("/", 1)
        target = gan.g_params if side == "g" else gan.d_params
        if key not in target:
            raise CheckpointError(f"unexpected tensor {name!r} for this configuration")
        if target[key].data.shape != data.shape:
            raise CheckpointError(f"tensor {name!r} shape {data.shape} does not match")
        target[key].data = data.astype(np.float64)
    return gan
