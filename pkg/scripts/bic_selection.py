"""Choose the number of classes by BIC on simulated two-class cohorts.

    python3 scripts/bic_selection.py --datasets 20 --workers 4
"""
import argparse
import collections
import json
import time
from pathlib import Path

from jlcidm.cli import build_design, build_optimizer, build_parser, resolve_config, run_selection


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", type=int, default=20)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--n-starts", type=int, default=5)
    ap.add_argument("--seed", type=int, default=77)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", default="results")
    a = ap.parse_args(argv)

    cfg = resolve_config(build_parser().parse_args(["select", "--n", str(a.n),
                                                     "--seed", str(a.seed)]))
    opt = build_optimizer(cfg, n_starts=a.n_starts, workers=1)
    t = time.time()
    rows = run_selection(build_design(cfg), opt, a.datasets, a.seed, workers=a.workers)
    elapsed = time.time() - t
    picks = collections.Counter(r["best"] for r in rows)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"bic_selection_D{a.datasets}.json").write_text(json.dumps(
        {"rows": rows, "picks": dict(picks), "elapsed_s": elapsed}, indent=1))
    for r in rows:
        bics = "  ".join(f"G={f['n_classes']}: {f['bic']:.1f}{'' if f['converged'] else '*'}"
                         for f in r["fits"])
        print(f"dataset {r['index']:2d}  {bics}  -> {r['best']}")
    share = picks.get(2, 0) / len(rows)
    print(f"G=2 selected in {picks.get(2, 0)}/{len(rows)} datasets ({share:.0%}); "
          f"{elapsed:.0f} s")


if __name__ == "__main__":
    main()
