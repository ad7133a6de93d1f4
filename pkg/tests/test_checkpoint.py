import numpy as np
import pytest

from conftest import random_tree
from mobiusgcn.checkpoint import (
    CheckpointError,
    TopologyMismatchError,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    read_header,
    save_checkpoint,
)
from mobiusgcn.data import generate_synthetic
from mobiusgcn.mobius import count_parameters, init_network, network_forward, block_widths
from mobiusgcn.training import NormalizationStats


@pytest.fixture
def net_and_stats(topo):
    net = init_network(block_widths(16), topo, 3)
    stats = NormalizationStats.fit(generate_synthetic(10, topo, seed=0), topo)
    return net, stats


def test_round_trip(net_and_stats, tmp_path):
    net, stats = net_and_stats
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, stats)
    back, back_stats = load_checkpoint(path)
    assert back.widths == net.widths and back.topology == net.topology
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.parameters(), back.parameters()))
    assert [b.activation for b in back.blocks] == [b.activation for b in net.blocks]
    np.testing.assert_array_equal(back_stats.bone_lengths, stats.bone_lengths)
    assert back_stats.input_scale == stats.input_scale
    x = np.random.default_rng(0).normal(size=(16, 2))
    np.testing.assert_array_equal(network_forward(back, x), network_forward(net, x))
    assert dumps_checkpoint(back, back_stats) == path.read_bytes()


def test_without_stats(net_and_stats):
    net, _ = net_and_stats
    back, stats = loads_checkpoint(dumps_checkpoint(net))
    assert stats is None and count_parameters(back) == count_parameters(net)


def test_header(net_and_stats, tmp_path):
    net, stats = net_and_stats
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, stats)
    head = read_header(path)
    assert head["topology_hash"] == net.topology.hash()
    assert head["widths"] == list(net.widths)


def test_topology_mismatch_refused(net_and_stats):
    net, stats = net_and_stats
    blob = dumps_checkpoint(net, stats)
    other = random_tree(np.random.default_rng(0), 16)
    with pytest.raises(TopologyMismatchError):
        loads_checkpoint(blob, other)
    loads_checkpoint(blob, net.topology)


@pytest.mark.parametrize("mangle", [
    lambda b: b"XXXXXXXX" + b[8:],
    lambda b: b[:-8],
    lambda b: b + b"\x00" * 8,
])
def test_corrupt_files(net_and_stats, mangle):
    net, stats = net_and_stats
    with pytest.raises(CheckpointError):
        loads_checkpoint(mangle(dumps_checkpoint(net, stats)))
