"""Fit a width-128 network to 64 synthetic samples and report the training MPJPE."""
import argparse
import time

from threadpoolctl import threadpool_limits

from mobiusgcn.data import generate_synthetic
from mobiusgcn.mobius import init_network, block_widths
from mobiusgcn.skeleton import default_topology
from mobiusgcn.training import TrainConfig, evaluate_model, train


def run(samples=64, width=128, epochs=2000, patience=50, seed=0, every=100):
    topo = default_topology()
    data = generate_synthetic(samples, topo, seed=seed)
    net = init_network(block_widths(width), topo, seed)
    # 64 samples make a single batch, so one epoch is one optimizer step
    cfg = TrainConfig(max_epochs=epochs, val_fraction=0.0, plateau_patience=patience, seed=seed)
    t0 = time.time()

    def progress(rec):
        if rec.epoch % every == 0:
            print(f"epoch {rec.epoch:5d} loss {rec.val_loss:.3e} lr {rec.lr:.2e} {time.time() - t0:.0f}s", flush=True)

    with threadpool_limits(limits=1):
        result = train(net, data, cfg, progress=progress)
        return evaluate_model(net, result.stats, data)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--width", type=int, default=128, choices=[64, 128])
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--patience", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(run(args.samples, args.width, args.epochs, args.patience, args.seed).text())
