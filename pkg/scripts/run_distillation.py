"""Teacher, baseline and distilled student over every configured seed, with the gap summary."""

import argparse
import time

from gaitkd.config import default_config, load_config
from gaitkd.toybench.experiment import pooled_se, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", nargs="+", type=int)
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else default_config()
    t0 = time.perf_counter()
    res = run_experiment(cfg, ("baseline", "full"), seeds=args.seeds, log=print)
    print(res.format_table())
    base, full = res.rank1("baseline"), res.rank1("full")
    print(f"full - baseline: {full.mean - base.mean:+.2f} (pooled se {pooled_se(full.values, base.values):.2f})")
    try:
        print(f"gap closed: {res.gap_closed():.1f}%")
    except ZeroDivisionError:
        print("gap closed: undefined (teacher equals baseline)")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
