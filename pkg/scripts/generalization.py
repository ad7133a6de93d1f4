"""Train on synthetic poses and compare held-out MPJPE against the mean-pose predictor."""
import argparse
import time

from mobiusgcn.data import generate_synthetic
from mobiusgcn.mobius import init_network, block_widths
from mobiusgcn.skeleton import default_topology
from mobiusgcn.training import TrainConfig, evaluate_model, mean_pose_baseline, train


def run(n_train=5000, n_test=1000, width=64, epochs=60, seed=0, patience=5, verbose=True):
    topo = default_topology()
    train_set = generate_synthetic(n_train, topo, seed=seed)
    test_set = generate_synthetic(n_test, topo, seed=seed, start=n_train)
    net = init_network(block_widths(width), topo, seed)
    cfg = TrainConfig(max_epochs=epochs, seed=seed, plateau_patience=patience)
    t0 = time.time()

    def progress(rec):
        if verbose:
            print(f"epoch {rec.epoch:4d} train {rec.train_loss:.5f} val {rec.val_loss:.5f} "
                  f"lr {rec.lr:.2e} {time.time() - t0:.0f}s", flush=True)

    result = train(net, train_set, cfg, progress=progress)
    report = evaluate_model(net, result.stats, test_set)
    baseline = mean_pose_baseline(train_set, test_set, topo.root_index)
    return report, baseline


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--width", type=int, default=64, choices=[64, 128])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--patience", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    report, baseline = run(args.train, args.test, args.width, args.epochs, args.seed, args.patience)
    print(report.text())
    print(f"mean-pose baseline MPJPE {baseline.mpjpe_mm:.2f} mm; ratio {report.mpjpe_mm / baseline.mpjpe_mm:.3f}")
