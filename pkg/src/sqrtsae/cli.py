"""Command-line interface: ``simulate``, ``predict`` and ``mspe``.

Exit codes: 0 success, 2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import math
import os
import platform
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .estimation import ESTIMATORS, predict_area
from .model import (
    AreaObservation,
    ModelParameters,
    PredictorKind,
    PredictorReport,
    Provenance,
    shrinkage_profile,
)
from .predictors import (
    bias as lemma_bias,
    mspe_split,
    negative_probability,
    optimal_weight,
    weight_gap_bound,
)
from .simulation import PREDICTORS, StudyResult, config_from_dict, run_study

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

SEED_ENV = "SAE_SEED"


class InputError(ValueError):
    """Bad user input; maps to exit code 2."""


class NumericFailure(RuntimeError):
    """Non-finite or otherwise unusable numeric result; maps to exit code 3."""


def fmt(x) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _parse_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

PACKAGED_CONFIGS = {"default": "default_config.json", "table2": "table2_config.json"}


def packaged_config(name: str) -> Path:
    """Path of a bundled scenario file ('default' or 'table2')."""
    return Path(str(importlib.resources.files("sqrtsae") / "data" / PACKAGED_CONFIGS[name]))


def load_config(path: str | os.PathLike) -> list:
    """Read a JSON scenario file; ``m`` may be one integer or a list of them.

    The names 'default' and 'table2' select the bundled scenarios unless a
    file of that name exists.
    """
    if str(path) in PACKAGED_CONFIGS and not os.path.exists(path):
        path = packaged_config(str(path))
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    if SEED_ENV in os.environ:
        try:
            data["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer") from None
    ms = data.get("m")
    ms = ms if isinstance(ms, list) else [ms]
    configs = []
    for m in ms:
        try:
            configs.append(config_from_dict({**data, "m": m}))
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid config: {exc}") from exc
    return configs


TABLE1_QUANTITIES = ("theoretical_bias", "empirical_bias", "theoretical_mspe", "empirical_mspe", "weight")


def write_table1(results: Sequence[StudyResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "area", "t", "xbeta", "quantity", *PREDICTORS])
        for res in results:
            areas = sorted({row["area"] for row in res.detail})
            for area in areas:
                rows = {r["predictor"]: r for r in res.detail if r["area"] == area}
                first = rows[PREDICTORS[0]]
                for q in TABLE1_QUANTITIES:
                    w.writerow(
                        [res.config.m, area, first["t"], fmt(first["xbeta"]), q]
                        + [fmt(rows[name][q]) for name in PREDICTORS]
                    )


def write_table2(results: Sequence[StudyResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "t", *PREDICTORS])
        for res in results:
            for stratum in res.config.strata():
                w.writerow(
                    [res.config.m, stratum]
                    + [fmt(res.summary(name, stratum).empirical_mspe) for name in PREDICTORS]
                )


SUMMARY_FIELDS = (
    "m",
    "stratum",
    "predictor_kind",
    "empirical_bias",
    "bias_standard_error",
    "theoretical_bias",
    "empirical_mspe",
    "mc_standard_error",
    "theoretical_mspe",
    "trials",
)


def write_summary_long(results: Sequence[StudyResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for res in results:
            for s in res.summaries:
                w.writerow([fmt(getattr(s, f)) for f in SUMMARY_FIELDS])


def run_meta(results: Sequence[StudyResult]) -> dict:
    first = results[0].config
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": first.seed,
        "trials": first.trials,
        "m": [r.config.m for r in results],
        "response_mode": first.response_mode,
        "x_redraw": first.x_redraw,
        "yl_sigma": first.yl_sigma,
        "studies": [
            {
                "m": r.config.m,
                "negative_values": r.negative_counts,
                "pseudo_inverse_fallbacks": r.fallback_counts,
                "max_negative_probability": r.max_negative_probability,
            }
            for r in results
        ],
    }


def cmd_simulate(config_path, out_dir, threads: int = 1) -> list:
    configs = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = [run_study(cfg, threads=threads) for cfg in configs]
    for res in results:
        for s in res.summaries:
            if not (math.isfinite(s.empirical_mspe) and math.isfinite(s.empirical_bias)):
                raise NumericFailure(f"non-finite summary for {s.predictor_kind} (m={s.m})")
    write_table1(results, out / "table1_detail.csv")
    write_table2(results, out / "table2_summary.csv")
    write_summary_long(results, out / "summary_long.csv")
    with open(out / "run_meta.json", "w") as fh:
        json.dump(run_meta(results), fh, indent=2)
        fh.write("\n")
    return results


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def read_areas(path: str | os.PathLike) -> list[AreaObservation]:
    """Parse the area CSV: area_id, y, z, t, xhat_1..xhat_k, sigma_r_c (row-major)."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read data {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        k = sum(1 for h in header if h.startswith("xhat_"))
        expected = (
            ["area_id", "y", "z", "t"]
            + [f"xhat_{j}" for j in range(1, k + 1)]
            + [f"sigma_{r}_{c}" for r in range(1, k + 1) for c in range(1, k + 1)]
        )
        if k == 0 or header != expected:
            raise InputError(f"{path}, line 1: header must be {','.join(expected) if k else 'area_id,y,z,t,xhat_1..,sigma_1_1..'}")
        areas = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected):
                raise InputError(f"{path}, line {line_no}: expected {len(expected)} fields, got {len(row)}")
            cells = [c.strip() for c in row]
            try:
                y_text, z_text = cells[1], cells[2]
                if (y_text == "") == (z_text == ""):
                    raise ValueError("exactly one of y and z must be given")
                y = None
                if y_text:
                    yf = float(y_text)
                    if yf != int(yf):
                        raise ValueError(f"y must be an integer count, got {y_text}")
                    y = int(yf)
                t = float(cells[3])
                if t != int(t):
                    raise ValueError(f"t must be an integer, got {cells[3]}")
                xs = [float(c) for c in cells[4 : 4 + k]]
                sig = np.array([float(c) for c in cells[4 + k :]]).reshape(k, k)
                sigma = np.zeros((k + 1, k + 1))
                sigma[1:, 1:] = sig
                areas.append(
                    AreaObservation(
                        area_id=cells[0],
                        y=y,
                        z=_parse_float(z_text),
                        t=int(t),
                        x_hat=np.array([1.0] + xs),
                        sigma=sigma,
                    )
                )
            except ValueError as exc:
                raise InputError(f"{path}, line {line_no}: {exc}") from exc
    if not areas:
        raise InputError(f"{path}: no data rows")
    ids = [a.area_id for a in areas]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate area_id values")
    return areas


def resolve_params(source: str, areas: Sequence[AreaObservation]) -> tuple[ModelParameters, Optional[dict]]:
    """Given parameters (JSON file or inline JSON) or an estimate ('pr', 'yl')."""
    if source in ESTIMATORS:
        try:
            params = ESTIMATORS[source](areas)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        meta = {
            "method": source,
            "a_hat": params.a,
            "beta_hat": [float(b) for b in params.beta],
            "used_pseudo_inverse": params.used_pinv,
            "m": len(areas),
            "p": params.p,
        }
        return params, meta
    text = source
    if os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
    try:
        data = json.loads(text)
        if not isinstance(data, dict) or set(data) != {"a", "beta"}:
            raise ValueError("parameters must be a JSON object with keys 'a' and 'beta'")
        params = ModelParameters(data["a"], data["beta"], Provenance.TRUE)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise InputError(f"bad --params: {exc}") from exc
    if params.p != areas[0].p:
        raise InputError(f"beta has length {params.p}, data has {areas[0].p} columns incl. intercept")
    return params, None


REPORT_FIELDS = (
    "area_id",
    "kind",
    "value",
    "value_truncated",
    "weight",
    "correction",
    "theoretical_bias",
    "theoretical_mspe",
    "xbeta_surrogate",
)


def write_reports(reports: Iterable[PredictorReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow(
                [
                    r.area_id,
                    r.predictor_kind.value,
                    fmt(r.value),
                    fmt(r.value_truncated),
                    fmt(r.weight),
                    fmt(r.correction),
                    fmt(r.theoretical_bias),
                    fmt(r.theoretical_mspe),
                    fmt(r.xbeta_is_surrogate),
                ]
            )


def read_reports(path: str | os.PathLike) -> list[PredictorReport]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise InputError(f"{path}: not a prediction file")
        return [
            PredictorReport(
                area_id=row["area_id"],
                predictor_kind=row["kind"],
                weight=float(row["weight"]),
                correction=float(row["correction"]),
                value=float(row["value"]),
                theoretical_bias=_parse_float(row["theoretical_bias"]),
                theoretical_mspe=_parse_float(row["theoretical_mspe"]),
                xbeta_is_surrogate=row["xbeta_surrogate"] == "true",
            )
            for row in reader
        ]


def cmd_predict(data_csv, params_source: str, kinds: Sequence[str], out_csv) -> list[PredictorReport]:
    areas = read_areas(data_csv)
    try:
        kinds = [PredictorKind(k) for k in kinds]
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    allowed = {PredictorKind.DIRECT, PredictorKind.PROPOSED, PredictorKind.B_SUBSTITUTE, PredictorKind.OPTIMAL}
    bad = [k.value for k in kinds if k not in allowed]
    if bad:
        raise InputError(f"kinds {bad} need the true covariates; use direct, proposed, b_substitute, optimal")
    params, meta = resolve_params(params_source, areas)
    reports = [predict_area(kind, obs, params) for obs in areas for kind in kinds]
    for r in reports:
        if not math.isfinite(r.value):
            raise NumericFailure(f"non-finite prediction for area {r.area_id}")
    write_reports(reports, out_csv)
    if meta is not None:
        with open(str(out_csv) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
    return reports


# ---------------------------------------------------------------------------
# mspe
# ---------------------------------------------------------------------------

def _sigma_matrix(sigma, p: int) -> np.ndarray:
    """Full p x p covariance from k*k non-intercept values or p*p values."""
    sig = np.asarray(sigma, dtype=float)
    if sig.size == (p - 1) ** 2:
        full = np.zeros((p, p))
        full[1:, 1:] = sig.reshape(p - 1, p - 1)
        return full
    if sig.size == p * p:
        return sig.reshape(p, p)
    raise InputError(f"sigma needs {(p - 1) ** 2} or {p * p} values, got {sig.size}")


def mspe_table(a: float, beta, sigma, t: int, xbeta: float, weights: Sequence[float] = ()):
    """Bias / MSPE diagnostics at the named weights and any extra ``weights``.

    Returns ``(rows, bound)``; ``bound`` is the optimal-weight gap bound, or
    None when xbeta is 0.
    """
    beta = np.asarray(beta, dtype=float)
    full = _sigma_matrix(sigma, beta.shape[0])
    if t < 1:
        raise InputError("t must be a positive integer")
    try:
        params = ModelParameters(a, beta)
        b = max(float(beta @ full @ beta), 0.0)
        profile = shrinkage_profile(a, b, t, xbeta)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    w0, _ = optimal_weight(xbeta, params, profile)
    named = [("direct", 1.0), ("1-B", 1.0 - params.big_b), ("1-gamma", 1.0 - profile.gamma), ("w0", w0)]
    named += [(f"w={w:g}", float(w)) for w in weights]
    rows = []
    for label, w in named:
        if not 0.0 <= w <= 1.0:
            raise InputError(f"weight {w} outside [0, 1]")
        head, tail = mspe_split(w, xbeta, params, profile)
        rows.append(
            {
                "label": label,
                "w": w,
                "bias": lemma_bias(w, params, profile),
                "mspe": head + tail,
                "xbeta2_g1": head,
                "g2": tail,
                "neg_prob": negative_probability(w, xbeta, params, profile),
            }
        )
    bound = weight_gap_bound(xbeta, params, profile) if xbeta != 0 else None
    return rows, bound


MSPE_COLUMNS = ("label", "w", "bias", "mspe", "xbeta2_g1", "g2", "neg_prob")


def cmd_mspe(a, beta, sigma, t, xbeta, weights=(), stream=None) -> list[dict]:
    stream = stream or sys.stdout
    rows, bound = mspe_table(a, beta, sigma, t, xbeta, weights)
    print("\t".join(MSPE_COLUMNS), file=stream)
    for r in rows:
        print("\t".join(fmt(r[c]) for c in MSPE_COLUMNS), file=stream)
    if bound is not None:
        print(f"weight_gap_bound\t{fmt(bound)}", file=stream)
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqrtsae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo study")
    sim.add_argument("--config", required=True, help="scenario JSON file, or 'default' / 'table2'")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--threads", type=int, default=1)

    pred = sub.add_parser("predict", help="predict area means from a CSV")
    pred.add_argument("--data", required=True, help="area CSV")
    pred.add_argument("--params", required=True, help="JSON file/text with a and beta, or 'pr' / 'yl'")
    pred.add_argument("--kinds", default="proposed", help="comma-separated predictor kinds")
    pred.add_argument("--out", required=True, help="output CSV")

    ms = sub.add_parser("mspe", help="bias and MSPE at named and given weights")
    ms.add_argument("--a", type=float, required=True)
    ms.add_argument("--beta", type=_float_list, required=True)
    ms.add_argument("--sigma", type=_float_list, required=True, help="row-major covariance values")
    ms.add_argument("--t", type=int, required=True)
    ms.add_argument("--xbeta", type=float, required=True)
    ms.add_argument("--w", type=_float_list, default=[])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.command == "simulate":
            if args.threads < 1:
                raise InputError("--threads must be at least 1")
            cmd_simulate(args.config, args.out, args.threads)
        elif args.command == "predict":
            kinds = [k for k in args.kinds.split(",") if k]
            cmd_predict(args.data, args.params, kinds, args.out)
        else:
            cmd_mspe(args.a, args.beta, args.sigma, args.t, args.xbeta, args.w)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
