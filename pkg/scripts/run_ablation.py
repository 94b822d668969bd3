"""Every objective variant over the configured seeds; prints the table and differences to baseline."""

import argparse

from gaitkd.config import default_config, load_config
from gaitkd.objective import ABLATION_VARIANTS
from gaitkd.toybench.experiment import pooled_se, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", nargs="+", type=int)
    ap.add_argument("--variants", nargs="+", default=list(ABLATION_VARIANTS), choices=list(ABLATION_VARIANTS))
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else default_config()
    variants = list(dict.fromkeys(["baseline", *args.variants]))
    res = run_experiment(cfg, variants, seeds=args.seeds, log=print)
    print(res.format_table())
    base = res.rank1("baseline").values
    for name in variants[1:]:
        v = res.rank1(name)
        print(f"{name:<20}{v.mean - sum(base) / len(base):+7.2f}  pooled se {pooled_se(v.values, base):.2f}")


if __name__ == "__main__":
    main()
