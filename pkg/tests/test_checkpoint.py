import numpy as np
import pytest

from hermnet import checkpoint
from hermnet.model import HermNet, ModelConfig
from hermnet.structures import AtomicStructure


def test_round_trip_is_exact(tmp_path):
    model = HermNet(ModelConfig("htnet", 4, 2, 4.5, (1, 8)), seed=3)
    model.params["readout2.weight"].data[:] = np.random.default_rng(0).normal(size=(4, 1))
    checkpoint.save(tmp_path / "m.ckpt", model, {"best_epoch": 7})
    back = checkpoint.load(tmp_path / "m.ckpt")
    assert back.config == model.config
    assert back.meta == {"best_epoch": 7}
    assert sorted(back.params) == sorted(model.params)
    for k, p in model.params.items():
        assert np.array_equal(back.params[k].data, p.data)
    st = AtomicStructure([1, 8, 1], [[0, 0, 0], [0.9, 0, 0], [0, 1.1, 0.2]])
    assert back.energy(st) == model.energy(st)


def test_corrupt_checkpoints_are_rejected():
    blob = checkpoint.dumps(ModelConfig("hvnet", 2, 1, 3.0, (1,)), HermNet(ModelConfig("hvnet", 2, 1, 3.0, (1,))).params)
    with pytest.raises(checkpoint.CheckpointError, match="header"):
        checkpoint.loads(b"junk" + blob)
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.loads(blob[:-5])
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.loads(blob + b"\0")
