"""Architectural variants for controlled comparison.

* ``husformer`` - one cross-modal transformer per modality, querying the
  fused low-level sequence.
* ``husfuse`` - no cross-modal stage; the fused low-level sequence goes
  straight into the self-attention encoder.
* ``huspair`` - one transformer per ordered modality pair ``(source, target)``;
  each target's ``n - 1`` outputs are averaged so the self-attention input
  keeps ``L_F`` rows.
"""

from typing import NamedTuple

import numpy as np

from .model import Husformer, cross_modal_wiring, parameter_layout


class VariantDescriptor(NamedTuple):
    kind: str
    cross_modal_transformers: int
    parameters: int


def count_parameters(params):
    """Total scalar count over an iterable of tensors or a name -> tensor map."""
    tensors = params.values() if hasattr(params, "values") else params
    return sum(int(t.size) for t in tensors)


def expected_transformer_count(kind, n):
    return {"husformer": n, "husfuse": 0, "huspair": n * n - n}[kind]


def build_variant(cfg, seed=0):
    model = Husformer(cfg, seed=seed)
    return model, VariantDescriptor(cfg.variant, len(model.wiring), count_parameters(model.params))


def describe_variant(cfg):
    """Descriptor computed from the layout, without initializing parameters."""
    total = sum(int(np.prod(shape)) for shape, _ in parameter_layout(cfg).values())
    return VariantDescriptor(cfg.variant, len(cross_modal_wiring(cfg)), total)
