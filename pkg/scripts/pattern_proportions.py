"""Average observation-pattern proportions of simulated cohorts over seeds.

    python3 scripts/pattern_proportions.py --seeds 20 --interval 2
"""
import argparse

import numpy as np

from jlcidm.simulator import SimulationDesign, generate_dataset, replicate_seeds


def pattern_means(n_seeds: int, n: int = 500, interval: float = 2.0, seed: int = 11):
    design = SimulationDesign(n_subjects=n, visit_interval=interval)
    sums = []
    for ss in replicate_seeds(seed, n_seeds):
        _, s = generate_dataset(design, np.random.default_rng(ss))
        sums.append(s)
    return {
        "observed_demented": float(np.mean([s.observed_demented for s in sums])),
        "died_undiagnosed": float(np.mean([s.died_undiagnosed for s in sums])),
        "died_after_diagnosis": float(np.mean([s.died_after_diagnosis for s in sums])),
        "class1_share": float(np.mean([s.class_share[0] for s in sums])),
        "by_class": {c: {k: float(np.mean([s.by_class[c][k] for s in sums]))
                         for k in sums[0].by_class[c]} for c in sums[0].by_class},
        "patterns": {p: float(np.mean([s.patterns[p] / s.n for s in sums])) for p in range(1, 7)},
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--interval", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=11)
    a = ap.parse_args(argv)
    res = pattern_means(a.seeds, a.n, a.interval, a.seed)
    for k in ("observed_demented", "died_undiagnosed", "died_after_diagnosis", "class1_share"):
        print(f"{k:22s} {100 * res[k]:5.1f}%")
    for c, d in res["by_class"].items():
        print(f"class {c}: " + "  ".join(f"{k} {100 * v:5.1f}%" for k, v in d.items()))
    print("patterns: " + "  ".join(f"{p}:{100 * v:4.1f}%" for p, v in res["patterns"].items()))


if __name__ == "__main__":
    main()
