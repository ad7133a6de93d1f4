"""Regenerate the toy checkpoint and golden forward output used by the regression tests.

Only rerun this after an intentional numerical change, and say so in the commit.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from mobiusgcn.checkpoint import save_checkpoint
from mobiusgcn.data import generate_synthetic
from mobiusgcn.mobius import init_network, network_forward, block_widths
from mobiusgcn.skeleton import default_topology
from mobiusgcn.training import TrainConfig, train

TOY = dict(samples=8, width=16, epochs=40, seed=5)


def build():
    topo = default_topology()
    samples = generate_synthetic(TOY["samples"], topo, seed=TOY["seed"])
    net = init_network(block_widths(TOY["width"]), topo, TOY["seed"])
    cfg = TrainConfig(max_epochs=TOY["epochs"], batch_size=4, val_fraction=0.0, seed=TOY["seed"])
    result = train(net, samples, cfg)
    return net, result.stats, samples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=Path(__file__).resolve().parent.parent / "tests" / "golden", type=Path)
    args = ap.parse_args()
    net, stats, samples = build()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out_dir / "toy.ckpt", net, stats)
    x = stats.normalize_input(samples[0].joints2d)
    golden = {
        "config": TOY,
        "sample": 0,
        "input": x.tolist(),
        "output": network_forward(net, x).tolist(),
    }
    (args.out_dir / "toy_output.json").write_text(json.dumps(golden, indent=1) + "\n")
    print(f"wrote golden files to {args.out_dir}")


if __name__ == "__main__":
    main()
