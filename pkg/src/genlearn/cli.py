"""Command-line experiment runner.

Subcommands: fit-generator, generate, run, eval, diag. All outputs are
UTF-8 JSON/CSV/JSONL; exit codes are 0 (success), 2 (input error),
64 (usage), 70 (internal error).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from genlearn.classifier import classifier_from_dict, evaluate, train
from genlearn.config import ExperimentConfig, load_config
from genlearn.corpus import InputError, load_dataset, save_dataset, split
from genlearn.diagnostics import agreement, ngram_overlap, synthesis_stats
from genlearn.generate import (fit_class_conditional, generate_dataset,
                               load_generator, save_generator)
from genlearn.gmm import fit_gmm
from genlearn.ngram import fit_ngram, perplexity
from genlearn.pipelines import (DistillConfig, SelfTrainConfig, distill,
                                feature_space_augmentations, fixmatch_train,
                                self_distill, self_train)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_USAGE = 64
EXIT_INTERNAL = 70


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _fit_generator_from_config(cfg: ExperimentConfig, train_ds, seed: int):
    g = cfg.raw["generator"]
    if g["family"] == "gmm":
        if g["class_conditional"]:
            return fit_class_conditional(train_ds, "gmm", K=g["components"],
                                         max_iters=g["em_max_iters"],
                                         tol=g["em_tol"], seed=seed)
        return fit_gmm(train_ds, K=g["components"],
                       max_iters=g["em_max_iters"], tol=g["em_tol"], seed=seed)
    if g["class_conditional"]:
        return fit_class_conditional(train_ds, "ngram", n=g["n"],
                                     smoothing_k=g["smoothing_k"])
    return fit_ngram(train_ds, g["n"], g["smoothing_k"])


def cmd_fit_generator(args) -> int:
    cfg = load_config(args.config)
    gen_cfg = cfg.raw["generator"]
    schema = cfg.schema()
    corpus = load_dataset(args.corpus, schema, name="corpus")
    if schema.modality == "text":
        # vocabulary spans the whole corpus file so dev perplexity stays finite
        schema = cfg.attach_vocab([corpus])
        corpus = load_dataset(args.corpus, schema, name="corpus")
    fractions = tuple(cfg.raw["data"]["split_fractions"])
    fit_part, dev_part, _ = split(corpus, fractions, cfg.raw["data"]["split_seed"])

    rows = []
    best = None
    if gen_cfg["family"] == "ngram":
        n_grid = gen_cfg["n_grid"] or [gen_cfg["n"]]
        k_grid = gen_cfg["smoothing_grid"] or [gen_cfg["smoothing_k"]]
        for n in n_grid:
            for smoothing_k in k_grid:
                lm = fit_ngram(fit_part, n, smoothing_k,
                               class_conditional=gen_cfg["class_conditional"])
                score = perplexity(lm, dev_part)
                rows.append({"n": n, "smoothing_k": smoothing_k,
                             "dev_perplexity": score})
                if best is None or score < best[0]:
                    best = (score, lm, rows[-1])
        header = ["n", "smoothing_k", "dev_perplexity"]
    else:
        comp = gen_cfg["components"]
        for K in (comp if isinstance(comp, list) else [comp]):
            g = (fit_class_conditional(fit_part, "gmm", K=K,
                                       max_iters=gen_cfg["em_max_iters"],
                                       tol=gen_cfg["em_tol"], seed=args.seed)
                 if gen_cfg["class_conditional"] else
                 fit_gmm(fit_part, K=K, max_iters=gen_cfg["em_max_iters"],
                         tol=gen_cfg["em_tol"], seed=args.seed))
            X = dev_part.features_matrix()
            if gen_cfg["class_conditional"]:
                ll = float(np.mean([g.log_density(tuple(x)) for x in X]))
            else:
                ll = float(g.log_density_matrix(X).mean())
            rows.append({"components": K, "dev_log_likelihood": ll})
            if best is None or ll > best[0]:
                best = (ll, g, rows[-1])
        header = ["components", "dev_log_likelihood"]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_generator(best[1], out, fmt=args.format)
    csv_path = Path(args.grid_csv) if args.grid_csv else out.with_suffix(".grid.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    print(f"checkpoint written to {out} (selected {best[2]})")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    g = load_generator(args.checkpoint)
    schema = cfg.schema(vocab=getattr(g, "vocab", None))
    count = args.count
    if count is None:
        train_ds, _, _ = cfg.load_splits()
        count = 40 * len(train_ds)
    ds, stats = generate_dataset(g, count, schema,
                                 sampler_cfg=cfg.sampler_cfg(args.seed),
                                 seed=args.seed)
    save_dataset(ds, args.out)
    stats_path = Path(args.stats) if args.stats else Path(args.out).with_suffix(
        ".stats.json")
    _write_json(stats_path, stats.to_dict())
    print(f"{len(ds)} samples written to {args.out}")
    return EXIT_OK


def _run_single_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    from dataclasses import replace

    train_ds, dev_ds, test_ds = cfg.load_splits()
    if cfg.raw["task"]["modality"] == "text":
        train_ds = replace(train_ds, schema=cfg.attach_vocab([train_ds]))
    mode = cfg.mode
    pl = cfg.raw["pipeline"]
    models: list = []

    if mode == "self_train":
        g = _fit_generator_from_config(cfg, train_ds, seed)
        st_cfg = SelfTrainConfig(
            iterations=pl["iterations"], k=pl["k"], lam=pl["lam"],
            label_mode=pl["label_mode"], confidence_tau=pl["confidence_tau"],
            train_cfg=cfg.train_cfg(seed), sampler_cfg=cfg.sampler_cfg(seed))
        final, report = self_train(train_ds, g, cfg.classifier_spec(), st_cfg,
                                   dev_ds, test_ds, model_sink=models)
    elif mode == "distill":
        g = _fit_generator_from_config(cfg, train_ds, seed)
        teacher, _ = train(cfg.classifier_spec("teacher"), train_ds,
                           cfg.train_cfg(seed), dev_ds)
        models.append(("teacher", teacher))
        d_cfg = DistillConfig(k=pl["k"], lam=pl["lam"],
                              train_cfg=cfg.train_cfg(seed),
                              sampler_cfg=cfg.sampler_cfg(seed))
        final, report = distill(train_ds, g, teacher, cfg.classifier_spec(),
                                d_cfg, dev_ds, test_ds)
    elif mode == "self_distill":
        teacher, _ = train(cfg.classifier_spec(), train_ds,
                           cfg.train_cfg(seed), dev_ds)
        models.append(("teacher", teacher))
        final, report = self_distill(train_ds, teacher, cfg.classifier_spec(),
                                     cfg.train_cfg(seed), dev_ds, test_ds)
    else:  # fixmatch
        g = _fit_generator_from_config(cfg, train_ds, seed)
        pool, _stats = generate_dataset(
            g, pl["k"] * len(train_ds), train_ds.schema,
            sampler_cfg=cfg.sampler_cfg(seed), seed=seed)
        aug = feature_space_augmentations(train_ds.features_matrix().std(axis=0))
        final, report = fixmatch_train(
            train_ds, pool, cfg.classifier_spec(), cfg.train_cfg(seed),
            tau=pl["tau"], mu=pl["mu"], aug=aug, dev=dev_ds, test=test_ds)
    models.append(("final", final))

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="") as fh:
        rows = report.csv_rows()
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out_dir / "timing.json",
                {"wall_clock_seconds": report.wall_clock_seconds})
    (out_dir / "resolved_config.yaml").write_text(cfg.echo_yaml(),
                                                  encoding="utf-8")
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    manifest = []
    for tag, model in models:
        path = ckpt_dir / f"{tag}.json"
        _write_json(path, model.to_dict())
        manifest.append({"tag": tag, "file": path.name})
    _write_json(ckpt_dir / "manifest.json",
                {"mode": mode, "seed": seed, "checkpoints": manifest})
    return {
        "seed": seed,
        "final_test_accuracy": report.iterations[-1]["test_accuracy"],
        "iterations": report.iterations,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out_root = cfg.output_dir
    results = []
    for seed in cfg.seeds:
        results.append(_run_single_seed(cfg, seed, out_root / f"seed_{seed}"))
        print(f"seed {seed}: final test accuracy "
              f"{results[-1]['final_test_accuracy']:.4f}")
    accs = np.asarray([r["final_test_accuracy"] for r in results])
    aggregate = {
        "seeds": cfg.seeds,
        "mean_test_accuracy": float(accs.mean()),
        "stderr_test_accuracy": float(accs.std(ddof=1) / np.sqrt(len(accs)))
        if len(accs) > 1 else 0.0,
    }
    niter = min(len(r["iterations"]) for r in results)
    aggregate["per_iteration_mean_test_accuracy"] = [
        float(np.mean([r["iterations"][i]["test_accuracy"] for r in results]))
        for i in range(niter)
    ]
    _write_json(out_root / "aggregate.json", aggregate)
    print(f"aggregate: {aggregate['mean_test_accuracy']:.4f} "
          f"+/- {aggregate['stderr_test_accuracy']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    with open(args.checkpoint, encoding="utf-8") as fh:
        f = classifier_from_dict(json.load(fh))
    ds = load_dataset(args.data, cfg.schema(), name="eval")
    metrics = evaluate(f, ds)
    _write_json(Path(args.out), metrics.to_dict())
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_diag(args) -> int:
    cfg = load_config(args.config)
    if args.diag_kind == "ngram-overlap":
        schema = cfg.schema()
        a = load_dataset(args.a, schema, name="a")
        b = load_dataset(args.b, schema, name="b")
        report = ngram_overlap(a, b, orders=tuple(args.orders))
        _write_json(Path(args.out), report.to_dict())
        if args.csv:
            Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
        print(report.to_csv(), end="")
        return EXIT_OK
    if args.diag_kind == "agreement":
        schema = cfg.schema()
        ref = load_dataset(args.reference, schema, name="reference")
        cand = load_dataset(args.candidate, schema, name="candidate")
        rep = agreement(ref.hard_labels(), cand.hard_labels(),
                        positive_class=args.positive_class)
        _write_json(Path(args.out), rep.to_dict())
        print(json.dumps(rep.to_dict(), sort_keys=True))
        return EXIT_OK
    # synthesis-stats
    with open(args.report, encoding="utf-8") as fh:
        obj = json.load(fh)

    class _View:
        generation = obj.get("generation", obj)
        iterations = obj.get("iterations", [])

    stats = synthesis_stats(_View)
    _write_json(Path(args.out), stats)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="genlearn",
                     description="synthetic-data training pipelines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-generator", parents=[], help="fit g on a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "npz"), default="json")
    p.add_argument("--grid-csv", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fit_generator)

    p = sub.add_parser("generate", help="sample a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("run", help="run the configured pipeline per seed")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a classifier checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diag", help="diagnostic reports")
    diag_sub = p.add_subparsers(dest="diag_kind", required=True)
    d = diag_sub.add_parser("ngram-overlap")
    d.add_argument("--config", required=True)
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--orders", type=int, nargs="+", default=[1, 2, 3, 4])
    d.add_argument("--out", default="overlap.json")
    d.add_argument("--csv", default=None)
    d.set_defaults(fn=cmd_diag)
    d = diag_sub.add_parser("agreement")
    d.add_argument("--config", required=True)
    d.add_argument("--reference", required=True)
    d.add_argument("--candidate", required=True)
    d.add_argument("--positive-class", type=int, default=1)
    d.add_argument("--out", default="agreement.json")
    d.set_defaults(fn=cmd_diag)
    d = diag_sub.add_parser("synthesis-stats")
    d.add_argument("--config", required=True)
    d.add_argument("--report", required=True)
    d.add_argument("--out", default="synthesis_stats.json")
    d.set_defaults(fn=cmd_diag)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
