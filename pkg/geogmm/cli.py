"""Command-line front end: geodesic-gmm generate|fit|bench|score|serve.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from geogmm.bench import (
    format_summary,
    results_digest,
    rows_frame,
    run_bench,
    summarize,
    write_results_csv,
)
from geogmm.config import Settings, get_settings
from geogmm.datagen import generate, load_csv, save_csv, save_labels, write_metadata
from geogmm.errors import GeogmmError
from geogmm.fitting import run_fit
from geogmm.gmm_objective import original_loglik
from geogmm.schemas import (
    METHODS,
    BenchSpec,
    EmConfig,
    GenSpec,
    GmmModelFile,
    OptimConfig,
    Termination,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Flags or config files that do not describe a valid run."""


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read a JSON or YAML mapping; JSON is tried first."""
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise UsageError(f"{path} is neither JSON nor YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path} must hold a mapping")
    return data


def _merge(base: dict[str, Any], **flags: Any) -> dict[str, Any]:
    """Flags that were given override file values."""
    return {**base, **{k: v for k, v in flags.items() if v is not None}}


def _optim_config(file_cfg: dict[str, Any], args: argparse.Namespace) -> OptimConfig:
    return OptimConfig(
        **_merge(
            file_cfg.get("optim", {}),
            max_iters=args.max_iters,
            tol_avg_ll=args.tol,
            memory=args.memory,
            c1=args.c1,
            c2=args.c2,
        )
    )


def _em_config(file_cfg: dict[str, Any], args: argparse.Namespace) -> EmConfig:
    return EmConfig(
        **_merge(
            file_cfg.get("em", {}),
            max_iters=args.max_iters,
            tol_avg_ll=args.tol,
            cov_floor=args.cov_floor,
        )
    )


def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    file_cfg = load_config(args.config)
    spec = GenSpec(
        **_merge(file_cfg, d=args.d, K=args.k, c=args.c, e=args.e, n=args.n, seed=args.seed)
    )
    params, data = generate(spec)
    save_csv(data, args.out)
    meta = write_metadata(args.out, spec, params, data.n)
    if args.labels:
        save_labels(data.labels, args.labels)
    logger.info("Wrote %s and %s", args.out, meta)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    file_cfg = load_config(args.config)
    merged = _merge(file_cfg, method=args.method, k=args.k, seed=args.seed)
    if "k" not in merged:
        raise UsageError("--k is required")
    method = merged.get("method", "lbfgs")
    if method not in METHODS:
        raise UsageError(f"Unknown method {method!r}; choose from {', '.join(METHODS)}")
    optim = _optim_config(file_cfg, args)
    em = _em_config(file_cfg, args)

    data = load_csv(args.data)
    outcome, report = run_fit(
        data,
        method,
        int(merged["k"]),
        seed=int(merged.get("seed", 0)),
        optim=optim,
        em=em,
        standardize_data=args.standardize or bool(file_cfg.get("standardize", False)),
    )
    stem = Path(args.data).with_suffix("")
    model_path = Path(args.model or f"{stem}.{method}.model.json")
    report_path = Path(args.report or f"{stem}.{method}.report.json")
    report_path.write_text(report.model_dump_json(indent=2) + "\n")
    if outcome.params is not None:
        model = GmmModelFile.from_params(outcome.params)
        model_path.write_text(model.model_dump_json(by_alias=True, indent=2) + "\n")
    print(
        f"{method}: {report.iterations} iterations, {report.termination.value}, "
        f"ALL={report.final_all}"
    )
    if outcome.termination in (Termination.FAILURE, Termination.LINE_SEARCH_FAILURE):
        logger.error("Fit ended with %s: %s", outcome.termination.value, outcome.error or "")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    spec = BenchSpec.model_validate(load_config(args.spec))
    workers = 1 if settings.deterministic else (args.workers or settings.workers)
    rows = run_bench(spec, workers=workers)
    write_results_csv(rows, args.out)
    summary = summarize(rows_frame(rows))
    if args.summary:
        summary.to_csv(args.summary, index=False, lineterminator="\n")
    print(format_summary(summary))
    print(f"results digest: {results_digest(rows)}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, settings: Settings) -> int:
    model = GmmModelFile.model_validate_json(Path(args.model).read_text())
    data = load_csv(args.data)
    total = original_loglik(data, model.to_params())
    print(f"total={total!r} average={total / data.n!r} n={data.n}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, settings: Settings) -> int:
    import uvicorn

    uvicorn.run("geogmm.main:app", host=args.host, port=args.port)
    return EXIT_OK


def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float, help="ALL-difference tolerance")
    p.add_argument("--memory", type=int, help="L-BFGS history size")
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--cov-floor", type=float, help="EM covariance floor, relative")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geodesic-gmm")
    parser.add_argument("--threads", type=int, help="BLAS thread cap")
    parser.add_argument("--deterministic", action="store_true", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Draw a synthetic dataset")
    gen.add_argument("--d", type=int)
    gen.add_argument("--k", type=int)
    gen.add_argument("--c", type=float)
    gen.add_argument("--e", type=float)
    gen.add_argument("--n", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True)
    gen.add_argument("--labels", help="Write ground-truth component labels here")
    gen.add_argument("--config")
    gen.set_defaults(handler=cmd_generate)

    fit = sub.add_parser("fit", help="Fit a mixture to a CSV dataset")
    fit.add_argument("data")
    fit.add_argument("--method", choices=METHODS)
    fit.add_argument("--k", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--model")
    fit.add_argument("--report")
    fit.add_argument("--standardize", action="store_true")
    fit.add_argument("--config")
    _add_optim_flags(fit)
    fit.set_defaults(handler=cmd_fit)

    bench = sub.add_parser("bench", help="Run a benchmark sweep")
    bench.add_argument("spec")
    bench.add_argument("--out", default="results.csv")
    bench.add_argument("--summary")
    bench.add_argument("--workers", type=int)
    bench.set_defaults(handler=cmd_bench)

    score = sub.add_parser("score", help="Log-likelihood of a saved model on a dataset")
    score.add_argument("model")
    score.add_argument("data")
    score.set_defaults(handler=cmd_score)

    serve = sub.add_parser("serve", help="Run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    settings = get_settings().model_copy(
        update={
            k: v
            for k, v in {"threads": args.threads, "deterministic": args.deterministic}.items()
            if v is not None
        }
    )
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        with threadpool_limits(limits=settings.blas_threads):
            return args.handler(args, settings)
    except (UsageError, ValidationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeogmmError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
