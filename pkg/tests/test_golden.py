"""Regression against a stored toy checkpoint (regenerate with scripts/make_golden.py)."""
import json
from pathlib import Path

import numpy as np

from mobiusgcn.checkpoint import load_checkpoint
from mobiusgcn.linalg import max_abs
from mobiusgcn.mobius import network_forward

GOLDEN = Path(__file__).parent / "golden"


def load_golden():
    return json.loads((GOLDEN / "toy_output.json").read_text())


def test_checkpoint_reproduces_golden_output():
    golden = load_golden()
    net, _ = load_checkpoint(GOLDEN / "toy.ckpt")
    out = network_forward(net, np.array(golden["input"]))
    assert max_abs(out - np.array(golden["output"])) < 1e-9


def test_retraining_reproduces_golden_output():
    import sys
    sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))
    from make_golden import build

    golden = load_golden()
    net, _, _ = build()
    # looser than the stored-checkpoint check: forty epochs of Adam may amplify
    # last-bit differences between BLAS builds
    assert max_abs(network_forward(net, np.array(golden["input"])) - np.array(golden["output"])) < 1e-6
