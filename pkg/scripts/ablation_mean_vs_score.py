"""Held-out likelihood bound of score- vs mean-parameterized models on a Markov toy corpus."""
import argparse

import numpy as np

from sedd import corpus, likelihood, training
from sedd.process import LogLinearSchedule, TransitionSpec
from sedd.scores import MeanMlpScore, MlpScore


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--steps", type=int, nargs="+", default=[500, 1500, 6000])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--mc-samples", type=int, default=300)
    args = p.parse_args(argv)

    spec, sched = TransitionSpec.absorbing(args.n), LogLinearSchedule()
    trans = np.random.default_rng(0).dirichlet(np.full(args.n, 0.5), size=args.n)
    mu = corpus.markov_stationary(trans)
    data = corpus.gen_markov(args.n, args.d, mu, trans, 22000, seed=1)
    train, held = data.split(2000 / 22000)
    floor = -np.mean([np.log(held.data_distribution().prob(x)) for x in held.sequences[:300]])
    print(f"data entropy on held-out rows: {floor:.4f} nats")
    print("steps\tseed\tscore\tmean")
    for steps in args.steps:
        for seed in range(args.seeds):
            res = []
            for cls in (MlpScore, MeanMlpScore):
                cfg = training.TrainConfig(lr=3e-3, warmup_steps=100, total_steps=steps, batch_size=128,
                                           ema_decay=0.99, lr_decay="linear", seed=seed)
                ck = training.train(cfg, train, cls(spec, args.d, seed=seed), spec, sched)
                model, _, _ = training.restore(ck)
                rep = likelihood.corpus_eval(model, held.sequences[:300], spec, sched, args.mc_samples,
                                             np.random.default_rng(7))
                res.append(rep.mean_bound)
            print(f"{steps}\t{seed}\t{res[0]:.4f}\t{res[1]:.4f}", flush=True)


if __name__ == "__main__":
    main()
