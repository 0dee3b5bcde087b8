"""Command line front end: CSV in, text or JSON report out.

Exit codes: 0 success, 1 usage or data error, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .control_function import BasisSpec, causal_effect, cf_fit, hausman_pretest, tsls_fit
from .data import VOTING_RULES, AnalysisOptions, Dataset, validate_dataset
from .endogeneity import endo_test
from .errors import DataError, EstimationError, MissingColumn, ParseError
from .probit_cf import cate_ci, default_w0, probit_cf_fit
from .regression import reduced_form_fit
from .searching import DEFAULT_POINTS, Grid, default_grid, sampling_ci, searching_ci
from .simulate import LinearSimConfig, ProbitSimConfig, gen_linear_iv, gen_probit_iv
from .tsht import tsht

NA_TOKENS = frozenset({"NA", "", "NaN"})
_RANGE = re.compile(r"^(.*?)(\d+)\.\.(.*?)(\d+)$")


# ---------------------------------------------------------------- input


def expand_columns(spec: str | None) -> list[str]:
    """Split a comma list, expanding ranges such as ``Z1..Z10``."""
    if not spec:
        return []
    out = []
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        m = _RANGE.match(item)
        if m and m.group(1) == m.group(3):
            lo, hi = int(m.group(2)), int(m.group(4))
            step = 1 if hi >= lo else -1
            out.extend(f"{m.group(1)}{k}" for k in range(lo, hi + step, step))
        else:
            out.append(item)
    return out


def read_table(path, columns) -> dict[str, np.ndarray]:
    """Parse the named columns of a headed CSV file as floats (NA tokens become NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0, column=None) from None
        index = {}
        for name in columns:
            if name not in header:
                raise MissingColumn(f"column {name!r} not found in {path}")
            index[name] = header.index(name)
        data = {name: [] for name in columns}
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: data row {row_no} has {len(row)} fields, expected {len(header)}",
                    row=row_no,
                    column=None,
                )
            for name, j in index.items():
                cell = row[j].strip()
                if cell in NA_TOKENS:
                    data[name].append(math.nan)
                    continue
                try:
                    data[name].append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse {cell!r} as a number in data row {row_no}, column {name!r}",
                        row=row_no,
                        column=name,
                    ) from None
    return {k: np.asarray(v, dtype=float) for k, v in data.items()}


def read_csv(path, outcome, treatment, instruments, covariates=(), drop_na=True) -> Dataset:
    instruments, covariates = list(instruments), list(covariates)
    table = read_table(path, [outcome, treatment, *instruments, *covariates])
    return validate_dataset(table, outcome, treatment, instruments, covariates, drop_na=drop_na)


# ---------------------------------------------------------------- reports


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _g(v) -> str:
    return "NA" if v is None else f"{v:.6g}"


def _estimate_row(est, label=None) -> dict:
    row = {"betaHat": est.beta_hat, "Std.Error": est.se, "CI": list(est.ci)}
    if label is not None:
        row["term"] = label
    if est.valid_set:
        row["Valid IVs"] = list(est.valid_set)
    return row


def render_text(report: dict) -> str:
    lines = [f"Method: {report['method']}"]
    lines.append(f"Observations: {report['n']}" + (f" ({report['n_dropped']} dropped for missing values)" if report.get("n_dropped") else ""))
    diag = report.get("diagnostics", {})
    if "relevant" in diag:
        lines.append("Relevant IVs: " + " ".join(diag["relevant"]))
    rows = report.get("estimates", [])
    if rows:
        a = report.get("alpha", 0.05)
        lo_lab, hi_lab = f"CI({100 * a / 2:g}%)", f"CI({100 * (1 - a / 2):g}%)"
        head = f"{'':>12} {'betaHat':>12} {'Std.Error':>12} {lo_lab:>12} {hi_lab:>12}"
        if any("Valid IVs" in r for r in rows):
            head += "  Valid IVs"
        lines.append(head)
        for k, r in enumerate(rows, start=1):
            label = r.get("term", str(k))
            se = r.get("Std.Error")
            line = f"{label:>12} {_g(r['betaHat']):>12} {_g(se):>12} {_g(r['CI'][0]):>12} {_g(r['CI'][1]):>12}"
            if "Valid IVs" in r:
                line += "  " + " ".join(r["Valid IVs"])
            lines.append(line)
    if "interval" in report:
        iv = report["interval"]
        lines.append(f"{report['method']} CI: [{_g(iv[0])}, {_g(iv[1])}]")
    for key, label in (
        ("stat", "Statistic"),
        ("p_value", "P-value"),
    ):
        if key in report:
            lines.append(f"{label}: {_g(report[key])}")
    if "decision" in report:
        lines.append(report["decision"])
    if "invalid" in report:
        inv = report["invalid"]
        if inv and isinstance(inv[0], list):
            for k, group in enumerate(inv, start=1):
                lines.append(f"Detected invalid IVs ({k}): " + (" ".join(group) or "none"))
        elif inv:
            lines.append("Detected invalid IVs: " + " ".join(inv))
        else:
            lines.append("No invalid IV is detected")
    for key, val in diag.items():
        if key == "relevant":
            continue
        if isinstance(val, list) and not val:
            val = "none"
        elif isinstance(val, list):
            val = " ".join(_g(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = _g(val)
        lines.append(f"  {key}: {val}")
    for kind, path in report.get("files", {}).items():
        if path:
            lines.append(f"Wrote {kind}: {path}")
    for w in report.get("warnings", []):
        lines.append(f"Warning: {w}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands


def _opts(args) -> AnalysisOptions:
    return AnalysisOptions(
        alpha=args.alpha,
        tuning_1st=getattr(args, "tuning_1st", None),
        tuning_2nd=getattr(args, "tuning_2nd", None),
        voting=getattr(args, "voting", "MaxClique"),
        seed=args.seed,
    )


def _load(args) -> Dataset:
    ivs = expand_columns(args.iv)
    if not ivs:
        raise DataError("--iv names no columns")
    return read_csv(args.data, args.outcome, args.treatment, ivs, expand_columns(args.covariates), drop_na=not args.keep_na)


def _base(method, ds, alpha) -> dict:
    return {"method": method, "n": ds.n, "n_dropped": ds.n_dropped, "alpha": alpha}


def cmd_tsht(args) -> dict:
    ds = _load(args)
    opts = _opts(args)
    rep = tsht(ds, opts)
    out = _base("TSHT", ds, opts.alpha)
    out["estimates"] = [_estimate_row(e) for e in rep.estimates]
    out["invalid"] = rep.invalid if len(rep.invalid) > 1 else rep.invalid[0]
    sel = rep.selection
    out["diagnostics"] = {
        "relevant": rep.relevant,
        "weak": rep.weak,
        "voting": rep.voting,
        "vote_counts": [int(v) for v in sel.VM],
        "majority_rule_holds": bool(sel.majority_ok),
        "tuning_1st": rep.lambda1,
        "tuning_2nd": rep.lambda2,
    }
    return out


def _grid(args, rf, S) -> Grid:
    if args.grid:
        lo, hi = (float(v) for v in args.grid.split(","))
        return Grid(lo, hi, args.grid_points)
    return default_grid(rf, S, args.grid_points)


def _interval_report(args, method) -> dict:
    ds = _load(args)
    opts = _opts(args)
    rep = tsht(ds, opts)
    rf = reduced_form_fit(ds)
    S = rep.selection.S_hat
    grid = _grid(args, rf, S)
    if method == "Searching":
        res = searching_ci(rf, S, opts.alpha, grid)
    else:
        res = sampling_ci(rf, S, opts.alpha, M=args.M, lam=args.lam, seed=opts.seed, grid=grid)
    out = _base(method, ds, opts.alpha)
    out["interval"] = [res.lower, res.upper]
    out["diagnostics"] = {
        "relevant": rep.relevant,
        "grid": [grid.lo, grid.hi],
        "grid_points": grid.n_points,
        "accepted_points": int(res.accepted.sum()),
        "length": res.length,
    }
    if method == "Sampling":
        out["diagnostics"].update(
            {"M": res.M, "lambda": res.lam, "nonempty_draws": res.nonempty_count, "fallback": res.fallback}
        )
    return out


def cmd_search(args) -> dict:
    return _interval_report(args, "Searching")


def cmd_sample(args) -> dict:
    return _interval_report(args, "Sampling")


def cmd_endotest(args) -> dict:
    ds = _load(args)
    opts = _opts(args)
    res = endo_test(ds, invalid=args.invalid, opts=opts, bootstrap=args.bootstrap > 0, B=max(args.bootstrap, 1))
    out = _base("Endogeneity test", ds, opts.alpha)
    out["estimates"] = [
        {"term": "sigma12", "betaHat": res.sigma12_hat, "Std.Error": res.se,
         "CI": _normal_ci(res.sigma12_hat, res.se, opts.alpha)}
    ]
    out["stat"] = res.z_stat
    out["p_value"] = res.p_value
    out["decision"] = "H0 (no endogeneity) rejected" if res.rejected else "H0 (no endogeneity) not rejected"
    out["invalid"] = list(res.invalid)
    out["diagnostics"] = {
        "valid": list(res.valid_set),
        "beta_hat": res.beta_hat,
        "Theta11": res.Theta11,
        "Theta22": res.Theta22,
        "Theta12": res.Theta12,
        "se_method": res.se_method,
    }
    return out


def _normal_ci(est, se, alpha):
    q = stats.norm.ppf(1 - alpha / 2)
    return [est - q * se, est + q * se]


def _basis(args) -> BasisSpec:
    return BasisSpec(
        d_powers=[int(v) for v in args.d_powers.split(",")],
        z_powers=[int(v) for v in args.z_powers.split(",")],
        x_powers=[int(v) for v in args.x_powers.split(",")],
    )


def _coef_rows(fit, alpha, skip_last=False):
    names = fit.names[:-1] if skip_last else fit.names
    se = fit.se()
    return [
        {"term": nm, "betaHat": float(fit.coef[k]), "Std.Error": float(se[k]),
         "CI": _normal_ci(float(fit.coef[k]), float(se[k]), alpha)}
        for k, nm in enumerate(names)
    ]


def _effect(args, fit, out):
    if args.d1 is None and args.d2 is None:
        return
    if args.d1 is None or args.d2 is None:
        raise DataError("--d1 and --d2 must be given together")
    ce = causal_effect(fit, args.d1, args.d2, args.alpha)
    out["causal_effect"] = {"d1": args.d1, "d2": args.d2, "estimate": ce.beta_hat, "Std.Error": ce.se, "CI": list(ce.ci)}
    out["estimates"].append({"term": "CE", "betaHat": ce.beta_hat, "Std.Error": ce.se, "CI": list(ce.ci)})


def cmd_cf(args) -> dict:
    ds = _load(args)
    fit = cf_fit(ds, _basis(args))
    out = _base("Control function", ds, args.alpha)
    out["estimates"] = _coef_rows(fit, args.alpha)
    out["diagnostics"] = {"augmented_tsls_check": fit.augmented_tsls_check, "sigma2": fit.sigma2}
    _effect(args, fit, out)
    return out


def cmd_tsls(args) -> dict:
    ds = _load(args)
    fit = tsls_fit(ds, _basis(args))
    out = _base("TSLS", ds, args.alpha)
    out["estimates"] = _coef_rows(fit, args.alpha)
    out["diagnostics"] = {"sigma2": fit.sigma2}
    _effect(args, fit, out)
    return out


def cmd_pretest(args) -> dict:
    ds = _load(args)
    res = hausman_pretest(ds, _basis(args), args.alpha)
    chosen = res.selected
    out = _base(f"Pretest ({res.chosen})", ds, args.alpha)
    out["estimates"] = _coef_rows(chosen, args.alpha)
    out["stat"] = res.hausman_stat
    out["p_value"] = res.p_value
    out["decision"] = (
        "Pretest estimator is control function estimator"
        if res.chosen == "CF"
        else "Pretest estimator is TSLS estimator"
    )
    out["diagnostics"] = {"chosen": res.chosen, "df": res.df}
    _effect(args, chosen, out)
    return out


def _parse_w0(args, ds: Dataset):
    if args.w0 in (None, "auto"):
        return default_w0(ds)
    if args.w0 == "d2":
        rows = ds.d == args.d2
        if not rows.any():
            raise DataError(f"no rows with treatment equal to {args.d2}")
        return np.concatenate([ds.z[rows].mean(axis=0), ds.x[rows].mean(axis=0)])
    try:
        w0 = np.array([float(v) for v in args.w0.split(",")])
    except ValueError:
        raise DataError(f"--w0 must be auto, d2 or a comma-separated row of numbers, got {args.w0!r}") from None
    if w0.shape[0] != ds.p_z + ds.p_x:
        raise DataError(f"--w0 needs {ds.p_z + ds.p_x} values (instruments then covariates)")
    return w0


def cmd_probitcf(args) -> dict:
    ds = _load(args)
    if args.binarize is not None:
        cut = float(np.median(ds.y)) if args.binarize == "median" else float(args.binarize)
        ds = ds.with_outcome((ds.y > cut).astype(float))
    opts = _opts(args)
    out = _base("Probit control function", ds, opts.alpha)
    if args.d1 is None or args.d2 is None:
        fit = probit_cf_fit(ds, args.invalid, opts)
        out["estimates"] = [{"term": "Beta", "betaHat": fit.beta_hat, "Std.Error": None, "CI": [None, None]}]
    else:
        w0 = _parse_w0(args, ds)
        res = cate_ci(ds, args.d1, args.d2, w0, B=args.bootstrap, seed=opts.seed, opts=opts,
                      invalid=args.invalid, threads=args.threads)
        fit = res.fit
        out["estimates"] = [
            {"term": "Beta", "betaHat": res.beta_hat, "Std.Error": res.beta_se,
             "CI": _normal_ci(res.beta_hat, res.beta_se, opts.alpha)},
            {"term": "CATE", "betaHat": res.estimate, "Std.Error": res.se, "CI": list(res.ci)},
        ]
        out["cate"] = {"d1": res.d1, "d2": res.d2, "w0": list(res.w0), "B": res.B, "failed": res.n_failed}
    out["invalid"] = fit.invalid_names
    out["diagnostics"] = {
        "relevant": fit.relevant,
        "rho_hat": fit.rho_hat,
        "sigma_v_hat": fit.sigma_v_hat,
        "invalid_mode": fit.invalid,
    }
    return out


def cmd_simulate(args) -> dict:
    if args.design == "linear":
        cfg = LinearSimConfig.majority(
            n=args.n, p_z=args.p_z, n_invalid=args.n_invalid, invalid_effect=args.invalid_effect,
            p_x=args.p_x, beta=args.beta, gamma=args.gamma, err_corr=args.err_corr,
            heteroscedastic=args.heteroscedastic, seed=args.seed,
        )
        ds, truth = gen_linear_iv(cfg)
    else:
        kz = np.zeros(args.p_z)
        kz[: args.n_invalid] = args.invalid_effect
        cfg = ProbitSimConfig(n=args.n, p_z=args.p_z, p_x=args.p_x, beta=args.beta, gamma=args.gamma,
                              kappa_z=kz, err_corr=args.err_corr, seed=args.seed)
        ds, truth = gen_probit_iv(cfg)
    table = ds.to_table()
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table))
        for row in zip(*table.values()):
            w.writerow([repr(float(v)) for v in row])
    truth_dict = _clean(vars(truth))
    if args.truth:
        Path(args.truth).write_text(json.dumps(truth_dict, indent=2) + "\n", encoding="utf-8")
    return {"method": f"Simulate ({args.design})", "n": ds.n, "n_dropped": 0, "alpha": args.alpha,
            "files": {"data": str(args.out), "truth": args.truth}, "truth": truth_dict}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "t", "yes", "1"):
        return True
    if low in ("false", "f", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _data_args(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--iv", required=True, help="instrument columns, comma separated; ranges like Z1..Z10")
    p.add_argument("--covariates", default="", help="covariate columns, same syntax as --iv")
    p.add_argument("--keep-na", action="store_true", help="fail on missing values instead of dropping rows")


def _tuning_args(p):
    p.add_argument("--voting", choices=VOTING_RULES, default="MaxClique")
    p.add_argument("--tuning-1st", type=float, default=None)
    p.add_argument("--tuning-2nd", type=float, default=None)


def _basis_args(p):
    p.add_argument("--d-powers", default="1,2")
    p.add_argument("--z-powers", default="1,2")
    p.add_argument("--x-powers", default="1")
    p.add_argument("--d1", type=float, default=None)
    p.add_argument("--d2", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", metavar="PATH", default=None, help="also write the full report as JSON")
    common.add_argument("--threads", type=int, default=None, help="worker cap (default: ROBUSTIV_THREADS or 1)")

    parser = _Parser(prog="ivselect", description="Causal inference with possibly invalid instruments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tsht", parents=[common], help="two-stage hard thresholding")
    _data_args(p)
    _tuning_args(p)
    p.set_defaults(func=cmd_tsht)

    for name, func, label in (("search", cmd_search, "searching"), ("sample", cmd_sample, "sampling")):
        p = sub.add_parser(name, parents=[common], help=f"{label} confidence interval")
        _data_args(p)
        _tuning_args(p)
        p.add_argument("--grid", default=None, help="lo,hi (default: from per-IV ratio estimates)")
        p.add_argument("--grid-points", type=int, default=DEFAULT_POINTS)
        if name == "sample":
            p.add_argument("--M", type=int, default=1000, help="number of resampled reduced forms")
            p.add_argument("--lam", type=float, default=None, help="threshold shrinkage")
        p.set_defaults(func=func)

    p = sub.add_parser("endotest", parents=[common], help="endogeneity test robust to invalid IVs")
    _data_args(p)
    _tuning_args(p)
    p.add_argument("--invalid", type=_bool, default=True)
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0: influence-function SE)")
    p.set_defaults(func=cmd_endotest)

    for name, func, text in (
        ("cf", cmd_cf, "control function"),
        ("tsls", cmd_tsls, "two-stage least squares"),
        ("pretest", cmd_pretest, "Hausman pretest between CF and TSLS"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        _data_args(p)
        _basis_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("probitcf", parents=[common], help="probit control function for a binary outcome")
    _data_args(p)
    p.add_argument("--d1", type=float, default=None)
    p.add_argument("--d2", type=float, default=None)
    p.add_argument("--w0", default="auto", help="auto (column means), d2 (means where D = d2) or a comma row")
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--invalid", type=_bool, default=True)
    p.add_argument("--binarize", default=None, help="'median' or a cut point: use 1(outcome > cut)")
    p.set_defaults(func=cmd_probitcf)

    p = sub.add_parser("simulate", parents=[common], help="write a simulated dataset and its truth")
    p.add_argument("--design", choices=("linear", "probit"), default="linear")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--p-z", type=int, default=10)
    p.add_argument("--p-x", type=int, default=0)
    p.add_argument("--n-invalid", type=int, default=3)
    p.add_argument("--invalid-effect", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--err-corr", type=float, default=0.8)
    p.add_argument("--heteroscedastic", action="store_true")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--truth", default=None, help="JSON path for the generating parameters")
    p.set_defaults(func=cmd_simulate)
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report = args.func(args)
        report["warnings"] = list(dict.fromkeys(str(w.message) for w in caught))
        report = _clean(report)
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except EstimationError as exc:
        print(f"estimation failed: {type(exc).__name__}: {exc}", file=stderr)
        return 2
    stdout.write(render_text(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def main() -> None:
    sys.exit(run())
