"""Score entropy vs squared concrete score matching for one ratio ``a``.

Writes a TSV (and a PNG when matplotlib is around). Score entropy blows up
as ``s -> 0``; the squared loss stays finite and can be driven negative by
a careless optimizer step.
"""
import argparse
import sys

from sedd.cli import landscape_rows


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--a", type=float, default=0.2)
    p.add_argument("--s-max", type=float, default=2.0)
    p.add_argument("--num", type=int, default=400)
    p.add_argument("--out", default="landscape.tsv")
    p.add_argument("--plot")
    args = p.parse_args(argv)

    rows = landscape_rows(args.a, 1e-3, args.s_max, args.num)
    with open(args.out, "w") as fh:
        fh.write("s\tcsm\tse\n")
        for s, c, e in rows:
            fh.write(f"{s:.6g}\t{c:.6g}\t{e:.6g}\n")
    print(f"wrote {len(rows)} rows to {args.out}")

    if args.plot:
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            print("matplotlib not installed; skipping plot", file=sys.stderr)
            return
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(rows[:, 0], rows[:, 2], label="score entropy")
        ax.plot(rows[:, 0], rows[:, 1], label="squared error")
        ax.axvline(args.a, color="gray", lw=0.5)
        ax.set_ylim(-0.05, 1.5)
        ax.set_xlabel("s")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
