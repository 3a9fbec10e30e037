"""Command-line entry point.

Exit codes: 0 on success, 2 when cells or requests were skipped for lack of
capability, 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CapabilityError, TwoPointError
from .experiments import SIGN_COLUMNS, ExperimentConfig, run_robustness, run_scale_sweep, sign_summary, write_csv
from .instancegen import enumerate_instance_family, ingest_sales_csv
from .lowerlevel import solve_lower_level
from .mechanism import build_two_point, params_from_config
from .model import MomentInfo, ScaleIndex, load_instance, save_instance, validate_problem
from .risk import risk_from_dict

log = logging.getLogger("twopoint")

OK, ERROR, SKIPPED = 0, 1, 2


def _config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.out is not None:
        raw["out"] = args.out
    return ExperimentConfig.from_dict(raw)


def _dump(obj) -> None:
    print(json.dumps(obj, indent=1, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o)))


def cmd_validate(args) -> int:
    pd, _, _ = load_instance(args.instance)
    rep = validate_problem(pd)
    _dump(rep.to_dict())
    return OK if rep.ok else ERROR


def cmd_gen_instances(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    out = Path(args.out or "instances")
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for inst in enumerate_instance_family(raw.get("instances", raw)):
        meta = {"instance_id": inst.instance_id, **inst.descriptor.__dict__}
        save_instance(out / f"{inst.instance_id}.json", inst.problem, inst.moments, meta)
        ids.append(inst.instance_id)
    (out / "index.json").write_text(json.dumps(ids, indent=1))
    log.info("wrote %d instances to %s", len(ids), out)
    return OK


def cmd_lower_level(args) -> int:
    pd, info, _ = load_instance(args.instance)
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(info, MomentInfo):
        raise CapabilityError("lower-level runs from the CLI need moment information")
    r = risk_from_dict(raw.get("risk", {"kind": "expectation"}))
    idx = ScaleIndex(float(raw.get("k", 1.0)), float(raw.get("s", 1.0)))
    params = params_from_config(raw.get("mechanism", {"kappa": 0.0, "eta": 0.0}), info.mu, info.sigma)
    d2 = build_two_point(info.mu, params, idx)
    sol = solve_lower_level(pd, d2, r, idx)
    doc = {"value": sol.value, "x": sol.x, "y_l": sol.y_l, "y_h": sol.y_h, "d_l": d2.d_l, "d_h": d2.d_h, "tau": d2.tau}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, default=lambda o: None if o is None else np.asarray(o).tolist()))
    _dump(doc)
    return OK


def cmd_scale_sweep(args) -> int:
    res = run_scale_sweep(_config(args))
    for row in res.summary:
        print(f"budget={row['budget_ratio']:g} kappa={row['kappa']:g} eta={row['eta']:g} k={row['k']:g} "
              f"avg_wcr={row['avg_wcr']:.6f} n={row['n']}")
    if res.skips:
        log.warning("%d instances skipped (capability)", len(res.skips))
        return SKIPPED
    return OK


def cmd_robustness(args) -> int:
    res = run_robustness(_config(args))
    for row in res.signs:
        print(f"budget={row['budget_ratio']:g} n_tr={row['n_tr']} shift={row['shift']:g} "
              f"n={row['n']} p_plus={row['p_plus']} p_minus={row['p_minus']}")
    if res.undefined:
        log.warning("%d cells have an undefined robustness index", res.undefined)
    return OK


def cmd_signtest(args) -> int:
    """Recompute the sign-test table from a robustness CSV."""
    with open(args.csv, newline="") as fh:
        recs = [
            {"budget_ratio": float(r["budget_ratio"]), "n_tr": int(r["n_tr"]), "shift": float(r["shift"]),
             **{k: float(r[k]) for k in ("J_mech", "J_saa", "J_star")}}
            for r in csv.DictReader(fh)
        ]
    rows = sign_summary(recs)
    for row in rows:
        print(",".join(str(row[c]) for c in SIGN_COLUMNS))
    if args.out:
        write_csv(args.out, SIGN_COLUMNS, rows)
    return OK


def cmd_ingest_sales(args) -> int:
    data = ingest_sales_csv(args.csv, args.n_select, args.test_percent, args.seed or 0)
    out = Path(args.out or "sales")
    out.mkdir(parents=True, exist_ok=True)
    tr = data.train.samples if data.train is not None else np.zeros((0, len(data.entries)))
    m = MomentInfo(tr.mean(axis=0), tr.std(axis=0)) if tr.shape[0] else MomentInfo(np.zeros(len(data.entries)), np.zeros(len(data.entries)))
    save_instance(out / "instance.json", data.problem, m, {"entries": [list(e) for e in data.entries]})
    for name, ds, days in (("train", data.train, data.train_days), ("test", data.test, data.test_days)):
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", *[f"{s}:{p}" for s, p in data.entries]])
            if ds is not None:
                for day, row in zip(days, ds.samples):
                    w.writerow([day, *map(repr, row.tolist())])
    log.info("%d entries, %d train days, %d test days", len(data.entries), len(data.train_days), len(data.test_days))
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twopoint", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON configuration file")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out")
        return p

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(fn=cmd_validate)
    common(sub.add_parser("gen-instances", help="write the synthetic family as JSON")).set_defaults(fn=cmd_gen_instances)
    p = common(sub.add_parser("lower-level", help="solve the lower-level program for one instance"))
    p.add_argument("instance")
    p.set_defaults(fn=cmd_lower_level)
    common(sub.add_parser("scale-sweep", help="WCR and bounds across scales")).set_defaults(fn=cmd_scale_sweep)
    common(sub.add_parser("robustness", help="out-of-sample comparison against SAA")).set_defaults(fn=cmd_robustness)
    p = common(sub.add_parser("signtest", help="sign tests from a robustness CSV"))
    p.add_argument("csv")
    p.set_defaults(fn=cmd_signtest)
    p = common(sub.add_parser("ingest-sales", help="build a two-echelon instance from sales records"))
    p.add_argument("csv")
    p.add_argument("--n-select", type=int, required=True)
    p.add_argument("--test-percent", type=float, default=20.0)
    p.set_defaults(fn=cmd_ingest_sales)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CapabilityError as exc:
        log.warning("skipped: %s", exc)
        return SKIPPED
    except (TwoPointError, ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
