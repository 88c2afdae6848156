"""Operator command line: extract, train, tune, eval, serve, predict.

Exit codes: 0 success, 1 usage error, 2 data/model error.  Every command
that involves randomness takes --seed and is deterministic for a given
seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ctcad import backbone, formats, imaging, report, service, svm, tuner
from ctcad.evaluation import BadK, SingleClass, cross_validate
from ctcad.svm import InfeasibleNu, NuSvmConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_DATA_ERRORS = (
    imaging.DecodeError,
    backbone.BundleError,
    backbone.ShapeError,
    backbone.ReshapeError,
    formats.FormatError,
    InfeasibleNu,
    BadK,
    SingleClass,
    service.StartupError,
    svm.DimError,
    OSError,
    ValueError,
)

ENV_PORT = "CTCAD_PORT"
ENV_BUNDLE = "CTCAD_BUNDLE"
ENV_MODEL = "CTCAD_MODEL"
ENV_STATIC = "CTCAD_STATIC"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors, synopsis to stderr."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_svm_flags(p: argparse.ArgumentParser):
    p.add_argument("--nu", type=float, default=0.4, help="margin-error bound (default 0.4)")
    p.add_argument("--gamma", type=float, default=0.0098, help="RBF width (default 0.0098)")
    p.add_argument("--max-iter", type=int, default=176, help="solver iteration cap (default 176)")
    p.add_argument("--tol", type=float, default=1e-3, help="KKT stopping tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctcad", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("extract", help="run images through a backbone, write features")
    p.add_argument("--bundle", required=True, help="weight bundle directory")
    p.add_argument("--images", required=True,
                   help="directory with one subdirectory per class (COVID/, NonCOVID/)")
    p.add_argument("--features", required=True, help="output feature file")
    p.add_argument("--labels", required=True, help="output labels CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the Nu-SVM on extracted features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True, help="output model file")
    _add_svm_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="Bayesian optimization of (gamma, nu, max_iter)")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--budget", type=int, default=50, help="objective evaluations (default 50)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--trace", help="write line-delimited JSON tuning records here")
    p.add_argument("--out", help="write the best configuration as JSON here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="stratified k-fold cross-validation report")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out-dir", help="write report.json/csv/txt and figures here")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--format", choices=("json", "table"), default="table",
                   help="stdout format (default table)")
    _add_svm_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="one-shot prediction for a single image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("image", help="PNG or JPEG file")
    p.add_argument("--grid-out", help="also render the feature grid heatmap PNG")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--bundle", default=os.environ.get(ENV_BUNDLE),
                   help=f"weight bundle directory (env {ENV_BUNDLE})")
    p.add_argument("--model", default=os.environ.get(ENV_MODEL),
                   help=f"SVM model file (env {ENV_MODEL})")
    p.add_argument("--port", type=int,
                   default=int(os.environ.get(ENV_PORT, "8000")),
                   help=f"listen port (env {ENV_PORT}, default 8000)")
    p.add_argument("--static", default=os.environ.get(ENV_STATIC),
                   help=f"directory of UI assets to serve at / (env {ENV_STATIC})")
    p.add_argument("--max-upload", type=int, default=service.DEFAULT_MAX_UPLOAD)
    p.set_defaults(func=cmd_serve)
    return parser


# ---------------------------------------------------------------------------
# commands


def _image_files(class_dir: str) -> list[str]:
    exts = (".png", ".jpg", ".jpeg")
    return sorted(
        os.path.join(class_dir, name)
        for name in os.listdir(class_dir)
        if name.lower().endswith(exts)
    )


def cmd_extract(args) -> int:
    graph = backbone.load_bundle(args.bundle)
    rows = []
    labels = []
    for label_value, class_name in ((1, svm.POSITIVE_NAME), (-1, svm.NEGATIVE_NAME)):
        class_dir = os.path.join(args.images, class_name)
        if not os.path.isdir(class_dir):
            raise FileNotFoundError(f"missing class directory {class_dir}")
        files = _image_files(class_dir)
        if not files:
            raise FileNotFoundError(f"no images under {class_dir}")
        for path in files:
            with open(path, "rb") as fh:
                rows.append(service.extract_features_from_bytes(graph, fh.read()))
            labels.append(label_value)
    X = np.vstack(rows)
    formats.save_features(args.features, X)
    formats.save_labels(args.labels, labels)
    print(f"extracted {X.shape[0]} feature vectors of dim {X.shape[1]}")
    return EXIT_OK


def _load_dataset(args):
    X = formats.load_features(args.features)
    y = formats.load_labels(args.labels)
    if X.shape[0] != y.shape[0]:
        raise formats.FormatError(
            f"{X.shape[0]} feature rows but {y.shape[0]} labels"
        )
    return X, y


def cmd_train(args) -> int:
    X, y = _load_dataset(args)
    cfg = NuSvmConfig(nu=args.nu, gamma=args.gamma, max_iter=args.max_iter, tol=args.tol)
    model = svm.train_nu_svm(X, y, cfg)
    svm.save_model(model, args.model)
    print(
        json.dumps(
            {
                "model": args.model,
                "support_vectors": model.m,
                "converged": model.converged,
                "iterations": model.iterations,
                "nu": model.nu,
                "gamma": model.gamma,
                "max_iter": model.max_iter,
            }
        )
    )
    return EXIT_OK


def cmd_tune(args) -> int:
    X, y = _load_dataset(args)
    nu_cap = svm.nu_upper_bound(y)
    space = tuner.SearchSpace(
        dims=(
            tuner.Dim("gamma", 1e-4, 1.0, scale="log"),
            tuner.Dim("nu", 0.05, min(0.95, nu_cap - 1e-6)),
            tuner.Dim("max_iter", 50, 500, integer=True),
        )
    )

    def objective(point):
        gamma, nu, max_iter = point
        cfg = NuSvmConfig(nu=nu, gamma=gamma, max_iter=int(max_iter))
        rep = cross_validate(X, y, cfg, k=args.folds, seed=args.seed)
        return rep.mean.accuracy

    trace_fh = open(args.trace, "w") if args.trace else None
    try:
        sink = None
        if trace_fh is not None:
            sink = lambda rec: trace_fh.write(json.dumps(rec) + "\n")
        result = tuner.bayes_optimize(
            objective, space, budget=args.budget, seed=args.seed, trace=sink
        )
    finally:
        if trace_fh is not None:
            trace_fh.close()

    best = space.point_dict(result.best_point)
    payload = {"best": best, "accuracy": result.best_value, "evaluations": len(result.history)}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    X, y = _load_dataset(args)
    cfg = NuSvmConfig(nu=args.nu, gamma=args.gamma, max_iter=args.max_iter, tol=args.tol)
    rep = cross_validate(X, y, cfg, k=args.folds, seed=args.seed)
    if args.out_dir:
        written = report.write_report(rep, args.out_dir, figures=not args.no_figures)
        for path in written:
            print(f"wrote {path}", file=sys.stderr)
    if args.format == "json":
        sys.stdout.write(report.report_to_json(rep))
    else:
        sys.stdout.write(report.report_to_table(rep))
    return EXIT_OK


def cmd_predict(args) -> int:
    graph = backbone.load_bundle(args.bundle)
    model = svm.load_model(args.model)
    if model.d != graph.feature_dim:
        raise service.StartupError(
            f"model expects {model.d}-dimensional features but the bundle "
            f"produces {graph.feature_dim}"
        )
    with open(args.image, "rb") as fh:
        data = fh.read()
    result = service.run_pipeline(graph, model, data)
    if args.grid_out:
        grid = backbone.reshape_feature_grid(result["features"])
        report.render_feature_grid(grid, args.grid_out)
    print(json.dumps(service.prediction_response(result)))
    return EXIT_OK


def cmd_serve(args) -> int:
    if not args.bundle or not args.model:
        raise service.StartupError(
            "serve needs --bundle and --model (or CTCAD_BUNDLE/CTCAD_MODEL)"
        )
    cfg = service.ServiceConfig(
        port=args.port,
        bundle_path=args.bundle,
        model_path=args.model,
        static_dir=args.static,
        max_upload=args.max_upload,
        verbose=args.verbose,
    )
    svc = service.start_service(cfg)
    print(f"listening on http://{cfg.host}:{svc.port}/ (backbone dim {svc.graph.feature_dim})")
    try:
        svc.serve_forever()
    except KeyboardInterrupt:
        svc.shutdown()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
