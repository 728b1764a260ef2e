"""Feature-interaction CTR models over the tensor core.

Each model consumes an input provider (normally a FeatureEmbedder) exposing
`specs`, `flat(batch)`, `stacked(batch)`, and `parameters()`, and emits one
logit per example; `predict_batch` turns logits into probabilities. Keeping
models behind that narrow interface lets tests drive them with tiny synthetic
field layouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, FieldOrderMismatch, ShapeMismatch
from .features import EncodedBatch, FieldSpec, flat_width
from .optim import seed_for, xavier_uniform_init

MODEL_KINDS = ("widedeep", "xdeepfm", "dcnv2", "eulernet")

EULER_MODULUS_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    mlp_layers: tuple[int, ...] = (256, 256, 256)
    cin_layers: tuple[int, ...] = (100, 100)
    cross_depth: int = 3
    euler_orders: int = 30

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}")
        if any(n <= 0 for n in self.mlp_layers):
            raise ConfigError("mlp_layers must be positive")
        if any(n <= 0 for n in self.cin_layers):
            raise ConfigError("cin_layers must be positive")
        if self.cross_depth < 0:
            raise ConfigError("cross_depth must be non-negative")
        if self.euler_orders <= 0:
            raise ConfigError("euler_orders must be positive")


# -- building blocks -----------------------------------------------------------


class MLP:
    """ReLU tower with a linear output layer."""

    def __init__(self, name: str, in_width: int, layer_sizes: Sequence[int], out_width: int, seed: int):
        widths = [in_width, *layer_sizes, out_width]
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = xavier_uniform_init((a, b), a, b, seed_for(seed, f"{name}.w{i}"))
            self.weights.append(Parameter(f"{name}.w{i}", w))
            self.biases.append(Parameter(f"{name}.b{i}", np.zeros(b, dtype=w.dtype)))

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.add(ad.matmul(x, w), b)
            if i != last:
                x = ad.relu(x)
        return x


class LinearOneHot:
    """Linear term over raw categorical one-hots: one weight per vocab entry
    plus a global bias. This is the wide part of WideDeep and the linear part
    of xDeepFM."""

    def __init__(self, name: str, specs: Sequence[FieldSpec], seed: int):
        self.specs = [s for s in specs if s.kind == "categorical"]
        self.tables: dict[str, Parameter] = {}
        for s in self.specs:
            init = xavier_uniform_init(
                (s.vocab_size, 1), s.vocab_size, 1, seed_for(seed, f"{name}.{s.name}")
            )
            self.tables[s.name] = Parameter(f"{name}.{s.name}", init)
        self.bias = Parameter(f"{name}.bias", np.zeros(1, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        return list(self.tables.values()) + [self.bias]

    def __call__(self, batch: EncodedBatch) -> Tensor:
        terms = []
        for s in self.specs:
            table = self.tables[s.name]
            if s.multi:
                hot = batch.multihot.get(s.name)
                if hot is None:
                    raise FieldOrderMismatch(f"batch lacks multihot field {s.name!r}")
                terms.append(ad.matmul(Tensor(hot), table))
            else:
                idx = batch.indices.get(s.name)
                if idx is None:
                    raise FieldOrderMismatch(f"batch lacks categorical field {s.name!r}")
                terms.append(ad.embedding_lookup(table, idx))
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        return ad.add(total, self.bias)  # (B, 1)


class CIN:
    """Compressed interaction stack. Layer k forms every Hadamard product
    between current maps and the input fields, then compresses them:
    X^k_h = sum_{i,j} W^k[h, i, j] * (X^{k-1}_i o X^0_j). Each map is
    sum-pooled over d; pooled values from all layers are the output features."""

    def __init__(self, name: str, field_count: int, field_dim: int, layer_sizes: Sequence[int], seed: int):
        self.field_count = field_count
        self.field_dim = field_dim
        self.layer_sizes = tuple(layer_sizes)
        self.weights: list[Parameter] = []
        h_prev = field_count
        for k, h in enumerate(layer_sizes):
            rows = h_prev * field_count
            init = xavier_uniform_init((rows, h), rows, h, seed_for(seed, f"{name}.w{k}"))
            self.weights.append(Parameter(f"{name}.w{k}", init))
            h_prev = h

    @property
    def out_width(self) -> int:
        return sum(self.layer_sizes)

    def parameters(self) -> list[Parameter]:
        return list(self.weights)

    def __call__(self, E: Tensor) -> Tensor:
        if len(E.shape) != 3 or E.shape[1] != self.field_count or E.shape[2] != self.field_dim:
            raise ShapeMismatch(
                f"CIN expects (B, {self.field_count}, {self.field_dim}), got {E.shape}"
            )
        B, F, d = E.shape
        x0_rows = ad.reshape(E, (B, 1, F, d))
        x_prev = E
        pooled = []
        for w in self.weights:
            h_prev = x_prev.shape[1]
            z = ad.mul(ad.reshape(x_prev, (B, h_prev, 1, d)), x0_rows)  # (B, h_prev, F, d)
            z = ad.reshape(z, (B, h_prev * F, d))
            z = ad.transpose(z, (0, 2, 1))  # (B, d, R)
            z = ad.reshape(z, (B * d, h_prev * F))
            nxt = ad.matmul(z, w)  # (B*d, H)
            h = w.shape[1]
            nxt = ad.transpose(ad.reshape(nxt, (B, d, h)), (0, 2, 1))  # (B, H, d)
            pooled.append(ad.reduce_sum(nxt, axis=2))  # (B, H)
            x_prev = nxt
        return ad.concat(pooled, axis=1)  # (B, sum H_k)


class CrossStack:
    """DCNv2 cross layers: x_{l+1} = x0 o (W_l x_l + b_l) + x_l with full-rank
    W_l. Depth 0 passes x0 through unchanged."""

    def __init__(self, name: str, width: int, depth: int, seed: int):
        self.width = width
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for l in range(depth):
            w = xavier_uniform_init((width, width), width, width, seed_for(seed, f"{name}.w{l}"))
            self.weights.append(Parameter(f"{name}.w{l}", w))
            self.biases.append(Parameter(f"{name}.b{l}", np.zeros(width, dtype=w.dtype)))

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x0: Tensor) -> Tensor:
        if len(x0.shape) != 2 or x0.shape[1] != self.width:
            raise ShapeMismatch(f"cross stack expects (B, {self.width}), got {x0.shape}")
        x = x0
        for w, b in zip(self.weights, self.biases):
            x = ad.add(ad.mul(x0, ad.add(ad.matmul(x, w), b)), x)
        return x


class EulerInteraction:
    """Order units in polar form. Each field component gets modulus
    r = |e| + eps and phase theta in {0, pi} by sign; unit o combines fields
    through learned exponents alpha: m_o = exp(sum_j alpha[o,j] ln r_j),
    phi_o = sum_j alpha[o,j] theta_j, and emits (m_o cos phi_o, m_o sin phi_o).
    The phase is piecewise constant in e, so gradients flow through moduli
    and exponents only."""

    def __init__(self, name: str, field_count: int, orders: int, seed: int):
        self.field_count = field_count
        self.orders = orders
        init = xavier_uniform_init(
            (orders, field_count), field_count, orders, seed_for(seed, f"{name}.alpha")
        )
        self.alpha = Parameter(f"{name}.alpha", init)

    def parameters(self) -> list[Parameter]:
        return [self.alpha]

    def __call__(self, E: Tensor) -> tuple[Tensor, Tensor]:
        if len(E.shape) != 3 or E.shape[1] != self.field_count:
            raise ShapeMismatch(f"expected (B, {self.field_count}, d), got {E.shape}")
        B, F, d = E.shape
        r = ad.add(ad.absval(E), EULER_MODULUS_EPS)
        ln_r = ad.log(r)  # (B, F, d)
        # phases are constants of the sign pattern, not differentiated through
        theta = Tensor(np.pi * (E.data < 0).astype(E.data.dtype))
        alpha_t = ad.transpose(self.alpha, (1, 0))  # (F, O)

        def contract(t: Tensor) -> Tensor:
            flat = ad.reshape(ad.transpose(t, (0, 2, 1)), (B * d, F))
            mixed = ad.matmul(flat, alpha_t)  # (B*d, O)
            return ad.transpose(ad.reshape(mixed, (B, d, self.orders)), (0, 2, 1))

        m = ad.exp(contract(ln_r))  # (B, O, d), positive by construction
        phi = contract(theta)
        return ad.mul(m, ad.cos(phi)), ad.mul(m, ad.sin(phi))


def _linear_head(name: str, in_width: int, seed: int) -> tuple[Parameter, Parameter]:
    w = xavier_uniform_init((in_width, 1), in_width, 1, seed_for(seed, f"{name}.w"))
    return Parameter(f"{name}.w", w), Parameter(f"{name}.b", np.zeros(1, dtype=w.dtype))


# -- models ---------------------------------------------------------------------


class CTRModel:
    """Shared plumbing: parameter collection and logit-to-probability."""

    def __init__(self, config: ModelConfig, inputs) -> None:
        self.config = config
        self.inputs = inputs

    def own_parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def forward_logits(self, batch: EncodedBatch) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return self.inputs.parameters() + self.own_parameters()


class WideDeep(CTRModel):
    """Wide linear one-hot term plus a deep MLP over the flat embedding."""

    def __init__(self, config: ModelConfig, inputs, seed: int = 0) -> None:
        super().__init__(config, inputs)
        self.wide = LinearOneHot("wide", inputs.specs, seed)
        self.deep = MLP("deep", flat_width(inputs.specs), config.mlp_layers, 1, seed)

    def own_parameters(self) -> list[Parameter]:
        return self.wide.parameters() + self.deep.parameters()

    def forward_logits(self, batch: EncodedBatch) -> Tensor:
        logit = ad.add(self.wide(batch), self.deep(self.inputs.flat(batch)))
        return ad.reshape(logit, (batch.size,))


class XDeepFM(CTRModel):
    """Linear one-hot term + compressed interaction network + MLP, summed."""

    def __init__(self, config: ModelConfig, inputs, seed: int = 0) -> None:
        super().__init__(config, inputs)
        self.linear = LinearOneHot("linear", inputs.specs, seed)
        self.cin = CIN("cin", inputs.stacked_fields, inputs.field_dim, config.cin_layers, seed)
        self.cin_head_w, self.cin_head_b = _linear_head("cin.head", self.cin.out_width, seed)
        self.mlp = MLP("mlp", flat_width(inputs.specs), config.mlp_layers, 1, seed)

    def own_parameters(self) -> list[Parameter]:
        return (
            self.linear.parameters()
            + self.cin.parameters()
            + [self.cin_head_w, self.cin_head_b]
            + self.mlp.parameters()
        )

    def cin_logit(self, batch: EncodedBatch) -> Tensor:
        pooled = self.cin(self.inputs.stacked(batch))
        return ad.add(ad.matmul(pooled, self.cin_head_w), self.cin_head_b)

    def forward_logits(self, batch: EncodedBatch) -> Tensor:
        logit = ad.add(
            ad.add(self.linear(batch), self.cin_logit(batch)),
            self.mlp(self.inputs.flat(batch)),
        )
        return ad.reshape(logit, (batch.size,))


class DCNv2(CTRModel):
    """Cross stack and MLP in parallel over the flat input; their outputs are
    concatenated into a linear head."""

    def __init__(self, config: ModelConfig, inputs, seed: int = 0) -> None:
        super().__init__(config, inputs)
        width = flat_width(inputs.specs)
        self.cross = CrossStack("cross", width, config.cross_depth, seed)
        hidden = config.mlp_layers[-1] if config.mlp_layers else width
        self.mlp: Optional[MLP] = (
            MLP("mlp", width, config.mlp_layers[:-1], hidden, seed) if config.mlp_layers else None
        )
        head_in = width + (hidden if self.mlp is not None else 0)
        self.head_w, self.head_b = _linear_head("head", head_in, seed)

    def own_parameters(self) -> list[Parameter]:
        params = self.cross.parameters()
        if self.mlp is not None:
            params += self.mlp.parameters()
        return params + [self.head_w, self.head_b]

    def forward_logits(self, batch: EncodedBatch) -> Tensor:
        x0 = self.inputs.flat(batch)
        crossed = self.cross(x0)
        if self.mlp is not None:
            deep = ad.relu(self.mlp(x0))
            combined = ad.concat([crossed, deep], axis=1)
        else:
            combined = crossed
        logit = ad.add(ad.matmul(combined, self.head_w), self.head_b)
        return ad.reshape(logit, (batch.size,))


class EulerNet(CTRModel):
    """Order units over the stacked field matrix; real and imaginary parts
    feed a linear head."""

    def __init__(self, config: ModelConfig, inputs, seed: int = 0) -> None:
        super().__init__(config, inputs)
        self.interaction = EulerInteraction(
            "euler", inputs.stacked_fields, config.euler_orders, seed
        )
        head_in = 2 * config.euler_orders * inputs.field_dim
        self.head_w, self.head_b = _linear_head("head", head_in, seed)

    def own_parameters(self) -> list[Parameter]:
        return self.interaction.parameters() + [self.head_w, self.head_b]

    def forward_logits(self, batch: EncodedBatch) -> Tensor:
        real, imag = self.interaction(self.inputs.stacked(batch))
        B = batch.size
        width = self.config.euler_orders * self.inputs.field_dim
        feats = ad.concat([ad.reshape(real, (B, width)), ad.reshape(imag, (B, width))], axis=1)
        logit = ad.add(ad.matmul(feats, self.head_w), self.head_b)
        return ad.reshape(logit, (batch.size,))


_MODEL_CLASSES = {
    "widedeep": WideDeep,
    "xdeepfm": XDeepFM,
    "dcnv2": DCNv2,
    "eulernet": EulerNet,
}


def build_model(config: ModelConfig, inputs, seed: int = 0) -> CTRModel:
    return _MODEL_CLASSES[config.kind](config, inputs, seed=seed)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos].astype(np.float64)))
    ex = np.exp(x[~pos].astype(np.float64))
    out[~pos] = ex / (1.0 + ex)
    return out


def predict_batch(model: CTRModel, batch: EncodedBatch) -> np.ndarray:
    """Probabilities for one encoded batch. Computed in float64 and left
    unclipped; the LogLoss metric owns probability clipping."""
    if batch.size == 0:
        return np.zeros(0, dtype=np.float64)
    logits = model.forward_logits(batch)
    return _stable_sigmoid(logits.data)
