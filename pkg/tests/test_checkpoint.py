import struct

import numpy as np
import pytest

from husformer.checkpoint import (
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from husformer.data import synthesize_dataset
from husformer.errors import FormatError
from husformer.model import VARIANTS, Husformer, ModalitySpec, ModelConfig
from husformer.training import evaluate

MODS = (ModalitySpec("m0", 2, 32, 3), ModalitySpec("m1", 3, 24, 5), ModalitySpec("m2", 1, 16, 1))


@pytest.mark.parametrize("variant", VARIANTS)
def test_round_trip_is_bitwise(variant, tmp_path):
    cfg = ModelConfig(MODS, 3, hidden_dim=6, heads=2, cm_layers=1, sa_layers=1, variant=variant)
    model = Husformer(cfg, seed=3)
    # exotic values must survive too
    model.params["head.beta.bias"].data[:] = [-0.0, 5e-324, 1e300]
    save_checkpoint(model, tmp_path / "m.ckpt", meta={"fold": 2})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert back.cfg == cfg and meta == {"fold": 2}
    for k in model.params:
        assert back.params[k].data.tobytes() == model.params[k].data.tobytes()
    assert checkpoint_bytes(back, meta) == checkpoint_bytes(model, meta)


def test_eval_metrics_identical_after_reload(tmp_path):
    ds = synthesize_dataset(3, n_samples=40, seed=1)
    cfg = ModelConfig(MODS, 3, hidden_dim=6, heads=2, cm_layers=1, sa_layers=1)
    model = Husformer(cfg, seed=0)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert evaluate(back, ds) == evaluate(model, ds)


def test_data_section_is_raw_little_endian():
    cfg = ModelConfig(MODS, 3, hidden_dim=6, heads=2, cm_layers=1, sa_layers=1)
    model = Husformer(cfg, seed=0)
    buf = checkpoint_bytes(model)
    (head_len,) = struct.unpack_from("<I", buf, 8)
    payload = np.frombuffer(buf, "<f8", offset=12 + head_len)
    np.testing.assert_array_equal(payload, np.concatenate([t.data.ravel() for t in model.params.values()]))


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 7) + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b[:10], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corruption_detected(mutate, match):
    cfg = ModelConfig(MODS, 3, hidden_dim=6, heads=2, cm_layers=1, sa_layers=1)
    buf = checkpoint_bytes(Husformer(cfg))
    with pytest.raises(FormatError, match=match):
        checkpoint_from_bytes(mutate(buf))
