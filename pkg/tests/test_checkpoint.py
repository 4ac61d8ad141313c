import numpy as np
import pytest
from helpers import tiny_architecture

from partmask_hub.core.exceptions import CheckpointFormatError
from partmask_hub.core.network import Network, Optimizer, backward_and_step
from partmask_hub.infra.checkpoint import MAGIC, load_checkpoint, save_checkpoint


@pytest.fixture
def trained(tiny_net, scenes):
    states = tiny_net.new_states(0.99)
    images = np.stack([scene.image for scene in scenes[:6]])
    backward_and_step(
        tiny_net,
        images,
        [scene.category for scene in scenes[:6]],
        Optimizer(lr=0.01, momentum=0.9),
        states,
        lam=0.5,
        warmup=True,
    )
    states[4][1] = states[4][1].with_category(3)
    return tiny_net, states


def test_checkpoint_restores_network(tmp_path, trained, scenes):
    net, states = trained
    path = save_checkpoint(
        tmp_path / "run" / "checkpoint.gbx",
        net,
        states,
        epoch=5,
        meta={"variant": "interpretable"},
    )
    loaded = load_checkpoint(path)
    assert loaded.epoch == 5
    assert loaded.meta == {"variant": "interpretable"}
    assert loaded.net.spec == net.spec
    for name, value in net.params.items():
        np.testing.assert_array_equal(loaded.net.params[name], value)
    restored = loaded.states[4]
    assert restored[1].target_category == 3
    assert restored[0].update_count == states[4][0].update_count
    np.testing.assert_array_equal(restored[0].log_z, states[4][0].log_z)
    assert restored[0].log_px == states[4][0].log_px
    images = np.stack([scene.image for scene in scenes[:3]])
    np.testing.assert_array_equal(
        loaded.net.forward(images).logits,
        net.forward(images).logits,
    )


def test_fresh_states_survive_without_estimates(tmp_path, tiny_net):
    path = save_checkpoint(tmp_path / "c.gbx", tiny_net, tiny_net.new_states(0.9))
    restored = load_checkpoint(path).states[4]
    assert all(state.log_z is None and state.decay == 0.9 for state in restored)


def test_checkpoint_bytes_are_deterministic(tmp_path, trained):
    net, states = trained
    first = save_checkpoint(tmp_path / "a.gbx", net, states, epoch=1)
    second = save_checkpoint(tmp_path / "b.gbx", net, states, epoch=1)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(MAGIC)
    assert not list(tmp_path.glob("*.tmp"))


def _corrupt(path, transform):
    path.write_bytes(transform(path.read_bytes()))
    return path


@pytest.mark.parametrize(
    "transform",
    [
        lambda raw: b"GBX2\n" + raw[5:],
        lambda raw: raw[:-8],
        lambda raw: raw + b"\x00" * 8,
        lambda raw: raw[:5] + b"{not json\n" + raw[raw.index(b"\n", 5) + 1 :],
        lambda raw: raw.replace(b'"version": 1', b'"version": 9'),
    ],
    ids=["magic", "truncated", "extra", "header", "version"],
)
def test_corrupted_checkpoint_rejected(tmp_path, tiny_net, transform):
    path = save_checkpoint(tmp_path / "c.gbx", tiny_net, tiny_net.new_states(0.99))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(_corrupt(path, transform))


def test_template_mismatch_rejected(tmp_path):
    net = Network.initialize(tiny_architecture(), seed=0)
    path = save_checkpoint(tmp_path / "c.gbx", net, net.new_states(0.99))
    raw = bytearray(path.read_bytes())
    manifest_end = raw.index(b"\n", len(MAGIC)) + 1
    params = sum(value.size for value in net.params.values())
    # первый элемент стека шаблонов идёт сразу после параметров
    position = manifest_end + params * 8
    raw[position : position + 8] = np.array([123.0], dtype="<f8").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


@pytest.mark.parametrize(
    "header",
    [
        b'{"version": 1}',
        b"[1]",
        b'{"architecture": {}, "epoch": 0, "filter_states": {}, '
        b'"manifest": [{"shape": [1]}], "seed": 0, "version": 1}',
    ],
    ids=["missing-keys", "not-object", "bad-manifest"],
)
def test_incomplete_header_rejected(tmp_path, header):
    path = tmp_path / "c.gbx"
    path.write_bytes(MAGIC + header + b"\n")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
