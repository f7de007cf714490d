"""The Husformer network.

Per-modality temporal convolution and time-axis projection, sinusoidal
positional encoding, low-level fusion by row concatenation, cross-modal
transformers (target modality queries the fused sequence), a self-attention
encoder over the mid-level fusion, and a residual linear head.

All sequence tensors are ``(batch, rows, features)``.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .tensor import (
    Tensor,
    add,
    concat,
    concat_rows,
    conv1d,
    dropout,
    flatten,
    layer_norm,
    linear,
    matmul,
    relu,
    scale,
    softmax_rows,
    transpose,
)

VARIANTS = ("husformer", "husfuse", "huspair")


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    channels: int
    input_dim: int
    kernel_size: int = 3

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("modality name must be non-empty")
        if self.channels < 1 or self.input_dim < 1:
            raise ConfigurationError(
                f"modality {self.name!r}: channels and input_dim must be >= 1, "
                f"got {self.channels} x {self.input_dim}"
            )
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(
                f"modality {self.name!r}: kernel_size must be odd and positive, got {self.kernel_size}"
            )


@dataclass(frozen=True)
class ModelConfig:
    modalities: tuple
    num_classes: int
    hidden_dim: int = 40
    heads: int = 3
    cm_layers: int = 4
    sa_layers: int = 2
    d_k: Optional[int] = None
    d_v: Optional[int] = None
    ffn_dim: Optional[int] = None
    attn_dropout: float = 0.1
    output_dropout: float = 0.1
    variant: str = "husformer"
    positional_encoding: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        mods = tuple(
            m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities
        )
        object.__setattr__(self, "modalities", mods)
        if not mods:
            raise ConfigurationError("at least one modality is required")
        names = [m.name for m in mods]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"modality names must be unique: {names}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "huspair" and len(mods) < 2:
            raise ConfigurationError("huspair needs at least two modalities")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        for key in ("hidden_dim", "heads", "cm_layers", "sa_layers"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("attn_dropout", "output_dropout"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigurationError(f"{key} must lie in [0, 1), got {getattr(self, key)}")
        if self.ln_eps <= 0:
            raise ConfigurationError("ln_eps must be positive")
        for key in ("d_k", "d_v"):
            value = getattr(self, key)
            if value is None:
                if self.hidden_dim % self.heads:
                    raise ConfigurationError(
                        f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}; "
                        f"set {key} explicitly"
                    )
                object.__setattr__(self, key, self.hidden_dim // self.heads)
            elif value < 1:
                raise ConfigurationError(f"{key} must be >= 1, got {value}")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)
        elif self.ffn_dim < 1:
            raise ConfigurationError(f"ffn_dim must be >= 1, got {self.ffn_dim}")

    @property
    def fusion_length(self):
        return sum(m.channels for m in self.modalities)

    def with_variant(self, variant):
        return replace(self, variant=variant)

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = [asdict(m) for m in self.modalities]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- functional building blocks ---------------------------------------------


def positional_encoding(length, width):
    """Sinusoidal table; row ``r`` encodes position ``r + 1``."""
    pos = np.arange(1, length + 1, dtype=np.float64)[:, None]
    k = np.arange(0, width, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, k / width)
    pe = np.zeros((length, width))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : width // 2])
    return pe


def embed_modality(x, conv_kernel, proj_w, proj_b, pe=None):
    """Conv along time, project time axis to the hidden width, add PE."""
    y = linear(conv1d(x, conv_kernel), proj_w, proj_b)
    if pe is not None:
        y = add(y, Tensor(np.broadcast_to(pe, y.shape)))
    return y


def fuse_low_level(features):
    widths = {f.shape[-1] for f in features}
    if len(widths) != 1:
        raise DimensionError(f"fuse_low_level: feature widths differ: {sorted(widths)}")
    return features[0] if len(features) == 1 else concat_rows(features)


def attention_scores(query_src, key_src, w_q, w_k):
    """Row-stochastic ``rows(query_src) x rows(key_src)`` score matrix."""
    if w_q.shape[-1] != w_k.shape[-1]:
        raise ConfigurationError(
            f"query width {w_q.shape[-1]} does not match key width {w_k.shape[-1]}"
        )
    q = matmul(query_src, w_q)
    k = matmul(key_src, w_k)
    return softmax_rows(scale(matmul(q, transpose(k)), 1.0 / np.sqrt(w_k.shape[-1])))


def attention_head(query_src, key_src, w_q, w_k, w_v):
    """Scaled dot-product attention of ``query_src`` rows over ``key_src`` rows.

    Returns ``(output, scores)``.
    """
    scores = attention_scores(query_src, key_src, w_q, w_k)
    return matmul(scores, matmul(key_src, w_v)), scores


def multi_head_attention(query_src, key_src, heads, w_o, attn_dropout=0.0,
                         training=False, rng=None, capture=None):
    """Concatenate per-head outputs and project back to the model width.

    ``heads`` is a sequence of ``(w_q, w_k, w_v)``. Pre-dropout score matrices
    are appended to ``capture`` when given.
    """
    outs = []
    for w_q, w_k, w_v in heads:
        scores = attention_scores(query_src, key_src, w_q, w_k)
        if capture is not None:
            capture.append(scores.data)
        weights = dropout(scores, attn_dropout, training, rng)
        outs.append(matmul(weights, matmul(key_src, w_v)))
    merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
    return matmul(merged, w_o)


def encoder_layer(p, prefix, z, source, cfg, training=False, rng=None, capture=None):
    """One pre-norm block.

    ``LN`` is applied to the query stream and (for cross attention) to the
    key/value source; both residuals add the normalized stream:

        zn = LN(z);  z' = MHA(zn, LN(source)) + zn;  out = FFN(LN(z')) + LN(z')

    With ``source=None`` the block is self-attention over ``zn``.
    """
    zn = layer_norm(z, p[prefix + "ln_q.gain"], p[prefix + "ln_q.bias"], cfg.ln_eps)
    if source is None:
        kv = zn
    else:
        kv = layer_norm(source, p[prefix + "ln_kv.gain"], p[prefix + "ln_kv.bias"], cfg.ln_eps)
    heads = [
        (p[f"{prefix}head{h}.q"], p[f"{prefix}head{h}.k"], p[f"{prefix}head{h}.v"])
        for h in range(cfg.heads)
    ]
    attended = multi_head_attention(
        zn, kv, heads, p[prefix + "out"], cfg.attn_dropout, training, rng, capture
    )
    zdot = add(attended, zn)
    zdn = layer_norm(zdot, p[prefix + "ln_ff.gain"], p[prefix + "ln_ff.bias"], cfg.ln_eps)
    hidden = relu(linear(zdn, p[prefix + "ff1.weight"], p[prefix + "ff1.bias"]))
    return add(linear(hidden, p[prefix + "ff2.weight"], p[prefix + "ff2.bias"]), zdn)


def cross_modal_transformer(p, prefix, target, source, cfg, training=False, rng=None,
                            captures=None):
    """Stack of ``cfg.cm_layers`` cross-modal blocks.

    Every layer attends to the same, never-updated ``source``.
    """
    z = target
    for u in range(cfg.cm_layers):
        capture = None
        if captures is not None:
            capture = []
            captures.append(capture)
        z = encoder_layer(p, f"{prefix}layer{u}.", z, source, cfg, training, rng, capture)
    return z


def self_attention_encoder(p, z, cfg, training=False, rng=None, captures=None):
    for u in range(cfg.sa_layers):
        capture = None
        if captures is not None:
            capture = []
            captures.append(capture)
        z = encoder_layer(p, f"sa.layer{u}.", z, None, cfg, training, rng, capture)
    return z


def output_head(p, z_f, cfg, training=False, rng=None):
    """Residual row-wise linear, flatten, dropout, linear to logits, softmax."""
    zhat = add(z_f, linear(z_f, p["head.alpha.weight"], p["head.alpha.bias"]))
    flat = dropout(flatten(zhat), cfg.output_dropout, training, rng)
    return softmax_rows(linear(flat, p["head.beta.weight"], p["head.beta.bias"]))


def argmax_label(probs):
    """Row-wise argmax; ties resolve to the smallest class index."""
    return np.argmax(probs, axis=-1)


# -- wiring -------------------------------------------------------------------


class CrossModalSlot(NamedTuple):
    name: str
    target: int
    source: Optional[int]  # None: the fused sequence


def cross_modal_wiring(cfg):
    """Cross-modal transformers built for ``cfg.variant``."""
    mods = cfg.modalities
    if cfg.variant == "husfuse":
        return []
    if cfg.variant == "husformer":
        return [CrossModalSlot(f"cm.{m.name}", i, None) for i, m in enumerate(mods)]
    return [
        CrossModalSlot(f"cm.{mods[j].name}->{mods[i].name}", i, j)
        for i in range(len(mods))
        for j in range(len(mods))
        if i != j
    ]


def parameter_layout(cfg):
    """Ordered name -> (shape, fan_in); fan_in None marks layer-norm tensors."""
    d, f = cfg.hidden_dim, cfg.ffn_dim
    shapes = OrderedDict()

    def add_param(name, shape, fan_in):
        shapes[name] = (shape, fan_in)

    def block(prefix, cross):
        add_param(prefix + "ln_q.gain", (d,), None)
        add_param(prefix + "ln_q.bias", (d,), None)
        if cross:
            add_param(prefix + "ln_kv.gain", (d,), None)
            add_param(prefix + "ln_kv.bias", (d,), None)
        for h in range(cfg.heads):
            add_param(f"{prefix}head{h}.q", (d, cfg.d_k), d)
            add_param(f"{prefix}head{h}.k", (d, cfg.d_k), d)
            add_param(f"{prefix}head{h}.v", (d, cfg.d_v), d)
        add_param(prefix + "out", (cfg.heads * cfg.d_v, d), cfg.heads * cfg.d_v)
        add_param(prefix + "ln_ff.gain", (d,), None)
        add_param(prefix + "ln_ff.bias", (d,), None)
        add_param(prefix + "ff1.weight", (d, f), d)
        add_param(prefix + "ff1.bias", (f,), d)
        add_param(prefix + "ff2.weight", (f, d), f)
        add_param(prefix + "ff2.bias", (d,), f)

    for m in cfg.modalities:
        add_param(f"embed.{m.name}.conv", (m.channels, m.channels, m.kernel_size),
                  m.channels * m.kernel_size)
        add_param(f"embed.{m.name}.proj.weight", (m.input_dim, d), m.input_dim)
        add_param(f"embed.{m.name}.proj.bias", (d,), m.input_dim)
    for slot in cross_modal_wiring(cfg):
        for u in range(cfg.cm_layers):
            block(f"{slot.name}.layer{u}.", cross=True)
    for u in range(cfg.sa_layers):
        block(f"sa.layer{u}.", cross=False)
    add_param("head.alpha.weight", (d, d), d)
    add_param("head.alpha.bias", (d,), d)
    flat = cfg.fusion_length * d
    add_param("head.beta.weight", (flat, cfg.num_classes), flat)
    add_param("head.beta.bias", (cfg.num_classes,), flat)
    return shapes


# -- model --------------------------------------------------------------------


@dataclass
class AttentionDump:
    """Attention captured for one sample.

    ``cross_modal`` maps each cross-modal transformer name to a list (one per
    layer) of ``(heads, L_target, L_source)`` arrays; ``self_attention`` holds
    ``(heads, L_F, L_F)`` arrays per encoder layer.
    """

    cross_modal: dict = field(default_factory=dict)
    self_attention: list = field(default_factory=list)
    z_f: np.ndarray = None

    def to_json_dict(self):
        """Final-layer, head-averaged matrices plus every layer and head."""
        def final(layers):
            return layers[-1].mean(axis=0).tolist()

        return {
            "cross_modal": {k: final(v) for k, v in self.cross_modal.items()},
            "self": final(self.self_attention),
            "z_f": self.z_f.tolist(),
            "cross_modal_layers": {k: [a.tolist() for a in v] for k, v in self.cross_modal.items()},
            "self_layers": [a.tolist() for a in self.self_attention],
        }


class ForwardResult(NamedTuple):
    probs: Tensor
    labels: np.ndarray
    dumps: Optional[list]


class Husformer:
    """Parameters plus wiring for one configured variant.

    ``params`` is an ordered name -> Tensor mapping; its order is the
    checkpoint order and the optimizer order.
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.wiring = cross_modal_wiring(cfg)
        self._pe = [
            positional_encoding(m.channels, cfg.hidden_dim) if cfg.positional_encoding else None
            for m in cfg.modalities
        ]
        self.params = OrderedDict()
        self._layout = parameter_layout(cfg)
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        """Uniform(+-1/sqrt(fan_in)) weights; layer-norm gain 1 and bias 0."""
        rng = np.random.default_rng(seed)
        self.params.clear()
        for name, (shape, fan_in) in self._layout.items():
            if fan_in is None:
                value = np.ones(shape) if name.endswith(".gain") else np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                value = rng.uniform(-bound, bound, size=shape)
            self.params[name] = Tensor(value, requires_grad=True, name=name)

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(t.size for t in self.params.values())

    @property
    def num_cross_modal_transformers(self):
        return len(self.wiring)

    def load_state(self, arrays):
        """Replace parameter values from a name -> array mapping (exact copy)."""
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise DataError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self.params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DataError(f"parameter {name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.copy()

    def state(self):
        return OrderedDict((k, t.data) for k, t in self.params.items())

    # -- forward -------------------------------------------------------------

    def check_inputs(self, inputs):
        mods = self.cfg.modalities
        if len(inputs) != len(mods):
            raise DataError(f"expected {len(mods)} modalities, got {len(inputs)}")
        batch = None
        for m, x in zip(mods, inputs):
            shape = np.shape(x)
            if len(shape) != 3 or shape[1:] != (m.channels, m.input_dim):
                raise DataError(
                    f"modality {m.name!r}: expected (batch, {m.channels}, {m.input_dim}), got {shape}"
                )
            if batch is None:
                batch = shape[0]
            elif shape[0] != batch:
                raise DataError(f"modality {m.name!r}: batch size {shape[0]} != {batch}")

    def embed(self, inputs):
        """Low-level temporally-aware features, one ``(B, L_i, D)`` per modality."""
        self.check_inputs(inputs)
        p = self.params
        return [
            embed_modality(
                Tensor(x), p[f"embed.{m.name}.conv"], p[f"embed.{m.name}.proj.weight"],
                p[f"embed.{m.name}.proj.bias"], pe,
            )
            for m, x, pe in zip(self.cfg.modalities, inputs, self._pe)
        ]

    def mid_level(self, features, fusion, training=False, rng=None, captures=None):
        """Reinforced per-modality features concatenated back to ``L_F`` rows."""
        cfg, p = self.cfg, self.params
        if cfg.variant == "husfuse":
            return fusion
        n = len(cfg.modalities)
        per_target = [[] for _ in range(n)]
        for slot in self.wiring:
            source = fusion if slot.source is None else features[slot.source]
            cap = None
            if captures is not None:
                cap = captures[slot.name] = []
            z = cross_modal_transformer(
                p, slot.name + ".", features[slot.target], source, cfg, training, rng, cap
            )
            per_target[slot.target].append(z)
        reinforced = []
        for outs in per_target:
            z = outs[0]
            for other in outs[1:]:
                z = add(z, other)
            reinforced.append(z if len(outs) == 1 else scale(z, 1.0 / len(outs)))
        return fuse_low_level(reinforced)

    def forward(self, inputs, training=False, rng=None, dump=False):
        """Class probabilities for a batch.

        ``inputs`` holds one ``(B, L_i, D_i)`` array per modality. In training
        mode ``rng`` drives dropout.
        """
        if training and rng is None:
            raise ConfigurationError("training mode needs an rng for dropout")
        features = self.embed(inputs)
        fusion = fuse_low_level(features)
        cm_caps = {} if dump else None
        sa_caps = [] if dump else None
        mid = self.mid_level(features, fusion, training, rng, cm_caps)
        z_f = self_attention_encoder(self.params, mid, self.cfg, training, rng, sa_caps)
        probs = output_head(self.params, z_f, self.cfg, training, rng)
        labels = argmax_label(probs.data)
        dumps = None
        if dump:
            dumps = [
                AttentionDump(
                    cross_modal={
                        name: [np.stack([h[b] for h in layer]) for layer in layers]
                        for name, layers in cm_caps.items()
                    },
                    self_attention=[np.stack([h[b] for h in layer]) for layer in sa_caps],
                    z_f=z_f.data[b].copy(),
                )
                for b in range(probs.shape[0])
            ]
        return ForwardResult(probs, labels, dumps)

    def predict_proba(self, inputs):
        return self.forward(inputs).probs.data
