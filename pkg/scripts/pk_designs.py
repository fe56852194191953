"""Pharmacokinetic designs: adversarial and trace runs, point exchange, and a batch-size study.

For each batch size the adversarial run is followed by point exchange; the
script prints the cluster centres and sizes per replication and writes the
exchanged designs to JSON.
"""

import argparse
import json
import time
from pathlib import Path

from advdesign.exchange import cluster_design, point_exchange
from advdesign.gda import GdaConfig, gda_run, make_streams
from advdesign.models import PKModel


def summarise(tau, radius):
    s = cluster_design(tau, radius)
    return [round(float(c), 2) for c in s.centers[:, 0]], s.counts.tolist()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=20_000)
    parser.add_argument("--replications", type=int, default=20)
    parser.add_argument("--batch-sizes", type=int, nargs="+", default=[1])
    parser.add_argument("--seed", type=int, default=2026)
    parser.add_argument("--radius", type=float, default=0.25)
    parser.add_argument("--out", type=Path, default=Path("results/pk"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    model = PKModel()

    for k in args.batch_sizes:
        cfg = GdaConfig(
            iterations=args.iterations, n_samples=k, replications=args.replications, j_samples=1000, seed=args.seed
        )
        start = time.perf_counter()
        res = gda_run(model, cfg)
        theta_fixed = model.sample_prior(make_streams(cfg.seed)["fixed"], cfg.j_samples)
        exchanged = [point_exchange(model, theta_fixed, tau, "adv", radius=args.radius) for tau in res.tau]
        print(f"K={k}: {time.perf_counter() - start:.1f}s")
        rows = []
        for r, (tau, ex) in enumerate(zip(res.tau, exchanged)):
            centres, counts = summarise(ex.tau, args.radius)
            print(f"  rep {r:2d}: J {ex.j_before:.4g} -> {ex.j_after:.4g}  centres {centres} sizes {counts}")
            rows.append({"gda": tau.tolist(), "exchanged": ex.tau.tolist(), "j_before": ex.j_before, "j_after": ex.j_after})
        with open(args.out / f"adv_K{k}.json", "w") as fh:
            json.dump(rows, fh, indent=1)

    fig = gda_run(model, GdaConfig(objective="fig", iterations=args.iterations, replications=args.replications, seed=args.seed))
    print("trace objective:")
    for r, tau in enumerate(fig.tau):
        print(f"  rep {r:2d}: times in [{tau.min():.2f}, {tau.max():.2f}]")


if __name__ == "__main__":
    main()
