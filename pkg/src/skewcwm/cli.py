"""Command-line interface: ``skewcwm {simulate,fit,select,study,eval}``.

Every command is deterministic given ``--seed``. Results are written once,
at completion, as one JSON document plus flat CSV tables.

Exit codes: 0 success, 1 usage error, 2 data error, 3 every fit failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import toolkit
from ._common import (
    ALL_CWM_NAMES,
    ALL_FMR_NAMES,
    ALL_MODEL_NAMES,
    DatasetXY,
    EMControls,
    canonical_labels,
    parse_model,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILED = 0, 1, 2, 3

#: Column mappings for the two bundled real-data applications
#: (files produced by ``scripts/fetch_datasets.py``).
DATASET_PRESETS = {
    "ais": {"responses": ("rcc", "wcc", "ferr"), "covariates": ("bmi", "ssf", "pcBfat", "lbm"), "labels": "sex"},
    "pulpfiber": {"responses": ("Y2", "Y3"), "covariates": ("X2", "X4"), "labels": None},
}


class UsageError(Exception):
    """Bad combination of command-line options."""


class DataError(Exception):
    """Input file is missing, malformed or inconsistent with the options."""


@dataclass
class RunConfig:
    """Everything a command needs; stored verbatim in result documents."""

    command: str
    input: str | None = None
    responses: tuple = ()
    covariates: tuple = ()
    labels: str | None = None
    models: tuple = ALL_MODEL_NAMES
    gmin: int = 1
    gmax: int = 3
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 3000
    screen_tol: float = 1e-5
    out: str = "."
    preset: str | None = None
    replicates: int = 10
    n_obs: int = 400
    standardize: bool = False
    pred: str | None = None
    verbose: bool = False

    def __post_init__(self):
        overlap = set(self.responses) & set(self.covariates)
        if overlap:
            raise UsageError(f"columns used as both response and covariate: {sorted(overlap)}")
        if not 1 <= self.gmin <= self.gmax:
            raise UsageError(f"need 1 <= gmin <= gmax, got {self.gmin}..{self.gmax}")
        if self.tol <= 0 or self.max_iter < 1:
            raise UsageError("--tol must be positive and --max-iter at least 1")
        if self.replicates < 1 or self.n_obs < 2:
            raise UsageError("--replicates and --n must be positive")

    @property
    def g_values(self) -> tuple:
        return tuple(range(self.gmin, self.gmax + 1))

    def controls(self) -> EMControls:
        return EMControls(tol=self.tol, max_iter=self.max_iter, accelerate=True)

    def screen(self) -> EMControls | None:
        if self.screen_tol <= self.tol:
            return None
        return EMControls(tol=self.screen_tol, max_iter=self.max_iter, accelerate=True)

    def document(self) -> dict:
        d = asdict(self)
        d["responses"], d["covariates"], d["models"] = list(self.responses), list(self.covariates), list(self.models)
        return d


# --------------------------------------------------------------------------
# data ingestion


def ingest_csv(path, response_cols, covariate_cols, label_col=None) -> DatasetXY:
    """Read a comma-separated file with a header row into a :class:`DatasetXY`.

    Labels, when requested, may be integers or strings; strings are coded
    ``1..K`` in sorted order.

    Raises
    ------
    DataError
        On a missing file or column, a ragged row, a non-numeric cell or an
        empty table. The message names the offending line.
    """
    path = Path(path)
    if not response_cols or not covariate_cols:
        raise DataError("at least one response and one covariate column are required")
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        wanted = list(response_cols) + list(covariate_cols) + ([label_col] if label_col else [])
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: line 1: missing column(s) {missing}")
        idx = {c: header.index(c) for c in wanted}
        x_rows, y_rows, raw_labels = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")

            def num(col):
                cell = row[idx[col]].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {line}: column {col!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}: line {line}: column {col!r}: non-finite value {cell!r}")
                return value

            y_rows.append([num(c) for c in response_cols])
            x_rows.append([num(c) for c in covariate_cols])
            if label_col:
                raw_labels.append(row[idx[label_col]].strip())
    if not x_rows:
        raise DataError(f"{path}: no data rows (empty dataset)")
    labels = _code_labels(raw_labels) if label_col else None
    return DatasetXY(np.array(x_rows), np.array(y_rows), labels)


def _code_labels(raw):
    try:
        return np.array([int(v) for v in raw])
    except ValueError:
        levels = sorted(set(raw))
        return np.array([levels.index(v) + 1 for v in raw])


def _load(config: RunConfig) -> DatasetXY:
    if not config.input:
        raise UsageError("--input is required for this command")
    data = ingest_csv(config.input, config.responses, config.covariates, config.labels)
    return data.standardized() if config.standardize else data


# --------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def params_document(params) -> dict:
    """Plain-dict view of a fitted parameter set."""
    doc = {
        "weights": params.weights,
        "beta": params.beta,
        "sigma_y": params.sigma_y,
        "alpha_y": params.alpha_y,
        "y_conc": [k.conc() for k in params.y_kinds],
    }
    if params.has_covariates:
        doc.update(
            mu=params.mu, sigma_x=params.sigma_x, alpha_x=params.alpha_x, x_conc=[k.conc() for k in params.x_kinds]
        )
    return _jsonable(doc)


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list, columns: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


ROW_COLUMNS = ["model", "G", "loglik", "n_params", "bic", "ari", "converged", "n_iter", "error"]


def _progress(config):
    if not config.verbose:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(config: RunConfig) -> dict:
    """Draw one dataset from a named preset and write ``data.csv`` plus ``provenance.json``."""
    if config.preset not in toolkit.PRESETS:
        raise UsageError(f"unknown preset {config.preset!r}; choose from {sorted(toolkit.PRESETS)}")
    spec, params = toolkit.preset(config.preset)
    data = toolkit.simulate_cwm(spec, params, config.n_obs, np.random.default_rng(config.seed))
    xcols = [f"x{j + 1}" for j in range(data.d)]
    ycols = [f"y{j + 1}" for j in range(data.p)]
    rows = [
        {**dict(zip(xcols, xr)), **dict(zip(ycols, yr)), "label": int(lab)}
        for xr, yr, lab in zip(data.x, data.y, data.labels)
    ]
    out = Path(config.out)
    _write_csv(out / "data.csv", rows, xcols + ycols + ["label"])
    doc = {"config": config.document(), "preset": config.preset, "seed": config.seed, "N": config.n_obs,
           "model": spec.name, "columns": {"covariates": xcols, "responses": ycols, "labels": "label"}}
    _write_json(out / "provenance.json", doc)
    return doc


def cmd_fit(config: RunConfig) -> dict:
    """Fit one model at one G and write its parameters and MAP labels."""
    if len(config.models) != 1 or config.gmin != config.gmax:
        raise UsageError("fit takes exactly one model and gmin == gmax; use select for grids")
    data = _load(config)
    spec = parse_model(config.models[0], config.gmin, data.d, data.p)
    rep = toolkit.run_protocol(
        spec, data, rng=np.random.default_rng(config.seed), controls=config.controls(), screen=config.screen()
    )
    labels = canonical_labels(rep.z_final, rep.params.weights)
    row = _report_row(spec.name, config.gmin, rep, data, labels)
    doc = {"config": config.document(), "rows": [row], "winner": row, "params": params_document(rep.params)}
    out = Path(config.out)
    _write_json(out / "fit.json", doc)
    _write_csv(out / "labels.csv", [{"label": int(v)} for v in labels], ["label"])
    return doc


def _report_row(name, g, rep, data, labels):
    ari = toolkit.adjusted_rand_index(data.labels, labels) if data.labels is not None else None
    return {"model": name, "G": g, "loglik": rep.loglik, "n_params": rep.n_params, "bic": rep.bic,
            "ari": ari, "converged": rep.converged, "n_iter": rep.n_iter}


def cmd_select(config: RunConfig) -> dict:
    """Fit every (model, G) cell and rank the cells by BIC, CWMs before FMRs.

    The document's ``winner`` is the best CWM (BIC values of CWMs and FMRs
    are on different scales); ``fmr_winner`` is reported alongside.
    """
    data = _load(config)
    grid = toolkit.SelectionGrid(config.models, config.g_values)
    cells = toolkit.fit_grid(
        data, grid, np.random.default_rng(config.seed), config.controls(),
        keep_reports=True, progress=_progress(config), screen=config.screen(),
    )
    if not any(np.isfinite(c.bic) for c in cells):
        raise toolkit.AllFitsFailedError(parse_model(config.models[0], config.gmin, data.d, data.p), [])
    ranked = sorted(
        cells,
        key=lambda c: (c.model.startswith("FMR-"), -c.bic if np.isfinite(c.bic) else math.inf, c.model, c.n_groups),
    )
    rows = [c.row() for c in ranked]
    top = toolkit.overall_winner(cells)
    top_fmr = toolkit.best_cell(cells, "FMR")
    labels = canonical_labels(top.report.z_final, top.report.params.weights)
    doc = {
        "config": config.document(),
        "rows": rows,
        "winner": top.row(),
        "fmr_winner": top_fmr.row() if top_fmr else None,
        "winner_params": params_document(top.report.params),
    }
    out = Path(config.out)
    _write_json(out / "select.json", doc)
    _write_csv(out / "rows.csv", rows, ROW_COLUMNS)
    _write_csv(out / "labels.csv", [{"label": int(v)} for v in labels], ["label"])
    return doc


def cmd_study(config: RunConfig) -> dict:
    """BIC selection over simulated replicates from a preset generator."""
    if config.preset not in toolkit.PRESETS:
        raise UsageError(f"unknown preset {config.preset!r}; choose from {sorted(toolkit.PRESETS)}")
    grid = toolkit.SelectionGrid(config.models, config.g_values)
    study = toolkit.selection_study(
        grid, toolkit.preset_generator(config.preset, config.n_obs), config.replicates,
        np.random.default_rng(config.seed), config.controls(), config.preset,
        progress=_progress(config), screen=config.screen(),
    )
    rows = [{"replicate": r + 1, **c.row()} for r, cells in enumerate(study.cells) for c in cells]
    tally = study.tally_rows()
    mean_ari = study.mean_ari()
    doc = {
        "config": config.document(),
        "rows": rows,
        "winner": [{"model": w[0], "G": w[1]} if w else None for w in study.winners],
        "tally": tally,
        "mean_ari": mean_ari,
    }
    out = Path(config.out)
    _write_json(out / "study.json", doc)
    _write_csv(out / "tally.csv", tally, ["generator", "model", "G", "count"])
    _write_csv(out / "rows.csv", rows, ["replicate"] + ROW_COLUMNS)
    _write_csv(out / "ari.csv", [{"model": m, "mean_ari": v} for m, v in mean_ari.items()], ["model", "mean_ari"])
    return doc


def cmd_eval(config: RunConfig) -> dict:
    """ARI between a label column of ``--input`` and a ``label`` column of ``--pred``."""
    if not (config.input and config.labels and config.pred):
        raise UsageError("eval needs --input, --labels and --pred")
    truth = _read_column(config.input, config.labels)
    pred = _read_column(config.pred, "label")
    if len(truth) != len(pred):
        raise DataError(f"label files have {len(truth)} and {len(pred)} rows")
    doc = {"config": config.document(), "n": len(truth), "ari": toolkit.adjusted_rand_index(truth, pred)}
    _write_json(Path(config.out) / "eval.json", doc)
    return doc


def _read_column(path, column):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise DataError(f"{path}: line 1: missing column {column!r}")
            raw = [row[column].strip() for row in reader]
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    if not raw:
        raise DataError(f"{path}: no data rows (empty dataset)")
    return _code_labels(raw)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "study": cmd_study, "eval": cmd_eval}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split(text):
    return tuple(t.strip() for t in text.split(",") if t.strip()) if text else ()


def _models(text):
    key = (text or "all").strip().lower()
    if key == "all":
        return ALL_MODEL_NAMES
    if key == "cwm":
        return ALL_CWM_NAMES
    if key == "fmr":
        return ALL_FMR_NAMES
    names = tuple(m.upper() for m in _split(text))
    for m in names:
        try:
            parse_model(m, 1, 1, 1)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skewcwm", description="Cluster-weighted models with skewed densities.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "draw a dataset from a named parameter preset",
        "fit": "fit one model at one number of groups",
        "select": "fit a grid of models and G values and rank them by BIC",
        "study": "repeat BIC selection over simulated replicates",
        "eval": "adjusted Rand index between two labelings",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--input", help="CSV file with a header row")
        p.add_argument("--responses", default="", help="comma-separated response columns")
        p.add_argument("--covariates", default="", help="comma-separated covariate columns")
        p.add_argument("--labels", help="column holding true group labels (optional)")
        p.add_argument("--models", default="all", help="'all', 'cwm', 'fmr' or a list such as GH-ST,FMR-N")
        p.add_argument("--gmin", type=int, default=1)
        p.add_argument("--gmax", type=int, default=3)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood change for convergence")
        p.add_argument("--max-iter", type=int, default=3000)
        p.add_argument("--screen-tol", type=float, default=1e-5,
                       help="tolerance for the first pass over all starts (<= --tol disables screening)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--preset", help="simulation preset, or the column mapping 'ais' / 'pulpfiber' for real data")
        p.add_argument("--replicates", type=int, default=10)
        p.add_argument("--n", dest="n_obs", type=int, default=400, help="observations per simulated dataset")
        p.add_argument("--standardize", action="store_true", help="centre and scale every column before fitting")
        p.add_argument("--pred", help="(eval) CSV with a 'label' column")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    responses, covariates, labels = _split(ns.responses), _split(ns.covariates), ns.labels
    if ns.command in ("fit", "select", "eval") and ns.preset:
        if ns.preset not in DATASET_PRESETS:
            raise UsageError(f"unknown column preset {ns.preset!r}; choose from {sorted(DATASET_PRESETS)}")
        mapping = DATASET_PRESETS[ns.preset]
        responses = responses or mapping["responses"]
        covariates = covariates or mapping["covariates"]
        labels = labels or mapping["labels"]
    return RunConfig(
        command=ns.command, input=ns.input, responses=responses, covariates=covariates, labels=labels,
        models=_models(ns.models), gmin=ns.gmin, gmax=ns.gmax, seed=ns.seed, tol=ns.tol,
        max_iter=ns.max_iter, screen_tol=ns.screen_tol, out=ns.out, preset=ns.preset,
        replicates=ns.replicates, n_obs=ns.n_obs, standardize=ns.standardize, pred=ns.pred,
        verbose=ns.verbose,
    )


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        config = config_from_args(ns)
        doc = COMMANDS[config.command](config)
    except UsageError as exc:
        print(f"skewcwm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"skewcwm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except toolkit.AllFitsFailedError as exc:
        print(f"skewcwm: {exc}", file=sys.stderr)
        return EXIT_FAILED
    winner = doc.get("winner")
    if isinstance(winner, dict):
        print(f"winner: {winner['model']} G={winner['G']} BIC={winner['bic']:.3f}")
    print(f"results written to {config.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
