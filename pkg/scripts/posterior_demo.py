"""Compare importance-sampling posteriors under an optimised PK design and an equally spaced one."""

import argparse

import numpy as np

from advdesign.gda import GdaConfig, gda_run
from advdesign.models import PKModel
from advdesign.posterior import importance_posterior


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--theta", type=float, nargs=3, default=[0.1, 1.0, 20.0])
    parser.add_argument("--samples", type=int, default=100_000)
    parser.add_argument("--iterations", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sigma", type=float, default=0.1, help="observation noise sd used for the posterior")
    args = parser.parse_args()

    optimised = gda_run(PKModel(), GdaConfig(iterations=args.iterations, seed=args.seed)).tau[0]
    model = PKModel(sigma=args.sigma)
    spaced = np.linspace(24 / 15, 24, 15)
    for name, tau in (("optimised", np.sort(optimised)), ("equally spaced", spaced)):
        post = importance_posterior(model, tau, args.theta, args.samples, np.random.default_rng(args.seed))
        sd = np.sqrt(post.weights @ (post.theta - post.mean()) ** 2)
        print(f"{name}: times {np.round(tau, 2).tolist()}")
        print(f"  posterior mean {np.round(post.mean(), 4).tolist()} sd {np.round(sd, 4).tolist()} ESS {post.ess:.0f}")


if __name__ == "__main__":
    main()
