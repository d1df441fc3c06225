"""Command-line workflows: fit, aggregate, index, query, evaluate, pipeline.

Every option can come from a JSON config file (``--config``), with explicit
flags taking precedence. Defaults follow the standard protocol: BoW codebook
k=1000, VLAD k=100, GMM k=100, PCA to 32 dims, Euclidean ranking.

Exit codes: 0 success, 1 user/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .aggregation import (
    AggregationSpec,
    GlobalDescriptor,
    Method,
    PRE_L2_MODES,
    aggregate,
    load_descriptor,
    local_descriptors,
    save_descriptor,
)
from .clustering import Codebook, GmmModel, gmm_fit, kmeans_fit
from .errors import ConfigError, DataError
from .evaluation import evaluate_run, render_report_text, report_to_dict
from .numeric import Metric, PcaModel, apply_pca, fit_pca, l2_normalize
from .retrieval import RankedList, build_index, load_index, query_rank, save_index, spec_fingerprint
from .tensor_store import load_manifest, load_model, read_tensor, save_model

BOW_K = 1000
VLAD_K = 100
GMM_K = 100
PCA_DIM = 32
SAMPLE_CAP = 500_000
WORKERS_ENV = "RSIR_WORKERS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


class Cfg:
    """Flag > config-file > default lookup for one command invocation."""

    def __init__(self, args):
        self.flags = vars(args)
        self.doc = {}
        if getattr(args, "config", None):
            path = Path(args.config)
            try:
                self.doc = json.loads(path.read_text("utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e

    def get(self, key, default=None, required=False):
        v = self.flags.get(key)
        if v is None:
            v = self.doc.get(key, default)
        if v is None and required:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
        return v

    def get_int(self, key, default=None, required=False):
        v = self.get(key, default, required)
        return None if v is None else int(v)

    def get_float(self, key, default=None):
        v = self.get(key, default)
        return None if v is None else float(v)


def _workers(cfg) -> int:
    v = cfg.get("workers")
    if v is None:
        v = os.environ.get(WORKERS_ENV, 1)
    n = int(v)
    if n < 1:
        raise ConfigError(f"workers must be >= 1, got {n}")
    return n


def _map_entries(fn, entries, workers: int):
    if workers <= 1:
        return [fn(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, entries))


def _entry_tensor(entry, layer, tag):
    if tag not in entry.tensor_paths:
        raise DataError(f"image {entry.image_id!r} has no tensor for scale {tag!r}")
    t = read_tensor(entry.tensor_paths[tag])
    if t.layer_id != layer:
        raise DataError(
            f"tensor for {entry.image_id!r}/{tag!r} has layer {t.layer_id!r}, "
            f"expected {layer!r}"
        )
    return t


def _check_tags(manifest, tags):
    missing = [
        (e.image_id, tag)
        for e in manifest.entries
        for tag in tags
        if tag not in e.tensor_paths
    ]
    if missing:
        raise DataError(f"missing tensors for (image, scale): {missing[:20]}"
                        + (" ..." if len(missing) > 20 else ""))


def _resolve_tags(manifest, cfg) -> list:
    tags = cfg.get("scale")
    if tags:
        return list(tags) if isinstance(tags, (list, tuple)) else [tags]
    all_tags = {tag for e in manifest.entries for tag in e.tensor_paths}
    if len(all_tags) == 1:
        return [all_tags.pop()]
    raise ConfigError(f"--scale required: manifest has tags {sorted(all_tags)}")


def _patch_tags(manifest) -> list:
    tags = sorted({tag for e in manifest.entries for tag in e.tensor_paths
                   if tag.startswith("patch")})
    if len(tags) != 20:
        raise DataError(f"multipatch mode expects 20 patch tags, found {len(tags)}")
    return tags


def _resolve_mode(cfg, tags) -> str:
    mode = cfg.get("mode", "auto")
    if mode == "auto":
        if all(t.startswith("patch") for t in tags) and len(tags) == 20:
            return "multipatch"
        return "multiscale" if len(tags) > 1 else "single"
    if mode not in ("single", "multiscale", "multipatch"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "single" and len(tags) > 1:
        raise ConfigError(f"mode single takes one scale tag, got {tags}")
    return mode


def _collect_locals(manifest, layer, tags, pre_l2, cap, seed) -> np.ndarray:
    """Training pool: all local descriptors at the examined layer, subsampled."""
    parts = []
    for entry in manifest.entries:
        for tag in tags:
            parts.append(local_descriptors(_entry_tensor(entry, layer, tag), pre_l2))
    pool = np.concatenate(parts, axis=0)
    if cap and len(pool) > cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(pool), size=cap, replace=False))
        pool = pool[idx]
    return pool


def _load_model_checked(path, kind, manifest, layer, force):
    arch = load_model(path)
    if arch.kind != kind:
        raise ConfigError(f"{path} holds a {arch.kind} model, expected {kind}")
    fp = arch.fingerprint
    if not force and (fp.get("dataset_id") != manifest.dataset_id
                      or fp.get("layer_id") != layer):
        raise ConfigError(
            f"model {path} was trained on dataset={fp.get('dataset_id')!r} "
            f"layer={fp.get('layer_id')!r}, not {manifest.dataset_id!r}/{layer!r}; "
            f"pass --force to reuse it anyway"
        )
    return arch.model


def _build_spec(method, codebook, gmm, pre_l2, pca, final_l2) -> AggregationSpec:
    method = Method(method)
    model = None
    if method in (Method.BOW, Method.VLAD):
        if codebook is None:
            raise ConfigError(f"{method.value} requires codebook model")
        model = codebook
    elif method is Method.IFK:
        if gmm is None:
            raise ConfigError("IFK requires gmm model")
        model = gmm
    spec = AggregationSpec(method, model, pre_l2, pca, final_l2)
    spec.validate()
    return spec


def _raw_descriptor(entry, layer, tags, mode, spec) -> GlobalDescriptor:
    """Pre-PCA descriptor for one image (method output, blocks concatenated)."""
    raw_spec = AggregationSpec(spec.method, spec.model, spec.pre_l2, None, False)
    if mode == "single":
        return aggregate(_entry_tensor(entry, layer, tags[0]), raw_spec)
    if mode == "multiscale":
        parts = [aggregate(_entry_tensor(entry, layer, tag), raw_spec) for tag in tags]
        vec = np.concatenate([p.vector for p in sorted(parts, key=lambda p: p.scale_tags)])
        return GlobalDescriptor(entry.image_id, vec, raw_spec.method.value, layer,
                                tuple(sorted(tags)), len(vec), len(vec))
    tensors = [_entry_tensor(entry, layer, tag) for tag in tags]
    return aggregate(tensors, raw_spec)


def _finalize_descriptor(raw: GlobalDescriptor, pca, final_l2) -> GlobalDescriptor:
    vec = raw.vector
    if pca is not None:
        vec = apply_pca(pca, vec)
    if final_l2:
        vec = l2_normalize(vec)
    return GlobalDescriptor(raw.image_id, vec, raw.method, raw.layer_id,
                            raw.scale_tags, raw.raw_dim, len(vec))


def _compute_descriptors(manifest, layer, tags, mode, spec, workers) -> list:
    _check_tags(manifest, tags if mode != "multipatch" else tags)
    raws = _map_entries(lambda e: _raw_descriptor(e, layer, tags, mode, spec),
                        manifest.entries, workers)
    return [_finalize_descriptor(r, spec.pca, spec.final_l2) for r in raws]


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    cfg = Cfg(args)
    manifest = load_manifest(cfg.get("manifest", required=True))
    layer = cfg.get("layer", required=True)
    seed = cfg.get_int("seed", required=True)
    out = Path(cfg.get("out", required=True))
    pre_l2 = cfg.get("pre_l2", "descriptor")
    cap = cfg.get_int("sample_cap", SAMPLE_CAP)
    fingerprint = {"dataset_id": manifest.dataset_id, "layer_id": layer, "seed": seed}

    if args.kind in ("codebook", "gmm"):
        tags = _resolve_tags(manifest, cfg)
        _check_tags(manifest, tags)
        pool = _collect_locals(manifest, layer, tags, pre_l2, cap, seed)
        if args.kind == "codebook":
            k = cfg.get_int("k", BOW_K)
            max_iters = cfg.get_int("max_iters", 100)
            tol = cfg.get_float("tol", 1e-6)
            model = kmeans_fit(pool, k, seed, max_iters=max_iters, tol=tol)
            print(f"codebook k={k} on {len(pool)} descriptors: "
                  f"{model.n_iters} iterations, objective {model.objective_history[-1]:.6g}")
        else:
            k = cfg.get_int("k", GMM_K)
            max_iters = cfg.get_int("max_iters", 100)
            tol = cfg.get_float("tol", 1e-5)
            model = gmm_fit(pool, k, seed, max_iters=max_iters, tol=tol)
            print(f"gmm k={k} on {len(pool)} descriptors: "
                  f"{model.n_iters} iterations, mean log-likelihood "
                  f"{model.loglik_history[-1]:.6g}")
    else:  # pca
        if cfg.get("mode") == "multipatch" and not cfg.get("scale"):
            tags = _patch_tags(manifest)
        else:
            tags = _resolve_tags(manifest, cfg)
        mode = _resolve_mode(cfg, tags)
        method = cfg.get("method", required=True)
        force = bool(cfg.get("force", False))
        codebook = gmm = None
        if cfg.get("codebook"):
            codebook = _load_model_checked(cfg.get("codebook"), "codebook",
                                           manifest, layer, force)
        if cfg.get("gmm"):
            gmm = _load_model_checked(cfg.get("gmm"), "gmm", manifest, layer, force)
        spec = _build_spec(method, codebook, gmm, pre_l2, None, False)
        _check_tags(manifest, tags)
        workers = _workers(cfg)
        raws = _map_entries(lambda e: _raw_descriptor(e, layer, tags, mode, spec),
                            manifest.entries, workers)
        X = np.stack([r.vector for r in raws])
        dim = cfg.get_int("dim", PCA_DIM)
        model = fit_pca(X, dim, seed)
        print(f"pca {X.shape[1]} -> {dim} on {X.shape[0]} descriptors, "
              f"top eigenvalue {model.eigenvalues[0]:.6g}")

    save_model(model, out, fingerprint)
    print(f"wrote {out}")
    return 0


def cmd_aggregate(args) -> int:
    cfg = Cfg(args)
    manifest = load_manifest(cfg.get("manifest", required=True))
    layer = cfg.get("layer", required=True)
    mode_cfg = cfg.get("mode", "auto")
    if mode_cfg == "multipatch" and not cfg.get("scale"):
        tags = _patch_tags(manifest)
    else:
        tags = _resolve_tags(manifest, cfg)
    mode = _resolve_mode(cfg, tags)
    out = Path(cfg.get("out", required=True))
    force = bool(cfg.get("force", False))
    pre_l2 = cfg.get("pre_l2", "descriptor")
    final_l2 = not bool(cfg.get("no_final_l2", False))

    codebook = gmm = pca = None
    if cfg.get("codebook"):
        codebook = _load_model_checked(cfg.get("codebook"), "codebook", manifest, layer, force)
    if cfg.get("gmm"):
        gmm = _load_model_checked(cfg.get("gmm"), "gmm", manifest, layer, force)
    if cfg.get("pca"):
        pca = _load_model_checked(cfg.get("pca"), "pca", manifest, layer, force)
    spec = _build_spec(cfg.get("method", required=True), codebook, gmm, pre_l2, pca, final_l2)

    descriptors = _compute_descriptors(manifest, layer, tags, mode, spec, _workers(cfg))
    out.mkdir(parents=True, exist_ok=True)
    for d in descriptors:
        save_descriptor(d, out / f"{d.image_id}.rgd")
    print(f"wrote {len(descriptors)} descriptors (dim {descriptors[0].final_dim}) to {out}")
    return 0


def _load_descriptor_dir(manifest, path) -> list:
    path = Path(path)
    descriptors = []
    missing = []
    for image_id in manifest.image_ids():
        f = path / f"{image_id}.rgd"
        if not f.exists():
            missing.append(image_id)
        else:
            descriptors.append(load_descriptor(f))
    if missing:
        raise DataError(f"missing descriptor files for: {missing[:20]}"
                        + (" ..." if len(missing) > 20 else ""))
    return descriptors


def cmd_index(args) -> int:
    cfg = Cfg(args)
    manifest = load_manifest(cfg.get("manifest", required=True))
    descriptors = _load_descriptor_dir(manifest, cfg.get("descriptors", required=True))
    metric = Metric(cfg.get("metric", Metric.EUCLIDEAN.value))
    fingerprint = cfg.get("fingerprint")
    if fingerprint is None:
        d = descriptors[0]
        fingerprint = spec_fingerprint({
            "dataset_id": manifest.dataset_id,
            "method": d.method,
            "layer_id": d.layer_id,
            "scale_tags": list(d.scale_tags),
            "dim": d.final_dim,
            "metric": metric.value,
        })
    index = build_index(manifest, descriptors, metric, fingerprint)
    out = cfg.get("out", required=True)
    save_index(index, out)
    print(f"indexed {len(index)} descriptors (dim {index.dim}, {metric.value}) -> {out}")
    return 0


def _index_descriptor(index, i) -> GlobalDescriptor:
    return GlobalDescriptor(index.image_ids[i], index.vectors[i], "index", "",
                            (), index.dim, index.dim)


def _read_query_list(path) -> list:
    ids = [line.strip() for line in Path(path).read_text("utf-8").splitlines()
           if line.strip()]
    if not ids:
        raise DataError(f"empty query list {path}")
    return ids


def cmd_query(args) -> int:
    cfg = Cfg(args)
    index = load_index(cfg.get("index", required=True))
    qlist = cfg.get("query_list")
    queries_dir = cfg.get("queries")

    if queries_dir:
        qdir = Path(queries_dir)
        ids = _read_query_list(qlist) if qlist else sorted(
            p.stem for p in qdir.glob("*.rgd"))
        queries = [load_descriptor(qdir / f"{i}.rgd") for i in ids]
    else:
        ids = _read_query_list(qlist) if qlist else list(index.image_ids)
        pos = {im: i for i, im in enumerate(index.image_ids)}
        unknown = [i for i in ids if i not in pos]
        if unknown:
            raise DataError(f"query ids not in index: {unknown[:20]}")
        queries = [_index_descriptor(index, pos[i]) for i in ids]

    out = Path(cfg.get("out", required=True))
    with open(out, "w", encoding="utf-8") as f:
        for q in queries:
            ranked = query_rank(index, q)
            f.write(json.dumps(
                {"query": ranked.query_id,
                 "results": [[i, d] for i, d in ranked.items]},
                sort_keys=True, separators=(",", ":")) + "\n")
    print(f"ranked {len(queries)} queries -> {out}")
    return 0


def _read_ranked_jsonl(path, metric) -> list:
    lists = []
    for line in Path(path).read_text("utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        lists.append(RankedList(doc["query"], metric,
                                [(i, float(d)) for i, d in doc["results"]]))
    if not lists:
        raise DataError(f"no ranked lists in {path}")
    return lists


def cmd_evaluate(args) -> int:
    cfg = Cfg(args)
    index = load_index(cfg.get("index", required=True))
    manifest = load_manifest(cfg.get("manifest", required=True))
    ranked = _read_ranked_jsonl(cfg.get("ranked", required=True), index.metric)
    report = evaluate_run(index, manifest, ranked)
    out = Path(cfg.get("out", required=True))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n", "utf-8")
    (out / "report.txt").write_text(render_report_text(report), "utf-8")
    print(f"ANMRR {report.anmrr:.4f}  MAP {100.0 * report.map:.2f}%  -> {out}")
    return 0


# ---------------------------------------------------------------- pipeline


def _as_list(v):
    if v is None:
        return None
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _cell_models(method, layer, tags, manifest, cfg, seed, caches, models_dir):
    """Train (or reuse) the models a method needs; returns (codebook, gmm)."""
    method = Method(method)
    locals_cache, model_cache = caches
    pre_l2 = cfg.get("pre_l2", "descriptor")
    cap = cfg.get_int("sample_cap", SAMPLE_CAP)

    def pool():
        key = (layer, tags)
        if key not in locals_cache:
            locals_cache[key] = _collect_locals(manifest, layer, list(tags),
                                                pre_l2, cap, seed)
        return locals_cache[key]

    fingerprint = {"dataset_id": manifest.dataset_id, "layer_id": layer, "seed": seed}
    tag_part = "+".join(tags)

    def train(kind, k):
        key = (kind, layer, tags, k)
        if key not in model_cache:
            if kind == "gmm":
                model = gmm_fit(pool(), k, seed)
            else:
                model = kmeans_fit(pool(), k, seed)
            save_model(model, models_dir / f"{kind}_{layer}_{tag_part}_k{k}.rma",
                       fingerprint)
            model_cache[key] = model
        return model_cache[key]

    if method is Method.BOW:
        return train("codebook", cfg.get_int("bow_k", BOW_K)), None
    if method is Method.VLAD:
        return train("codebook", cfg.get_int("vlad_k", VLAD_K)), None
    if method is Method.IFK:
        return None, train("gmm", cfg.get_int("gmm_k", GMM_K))
    return None, None


def cmd_pipeline(args) -> int:
    cfg = Cfg(args)
    manifest = load_manifest(cfg.get("manifest", required=True))
    seed = cfg.get_int("seed", required=True)
    out = Path(cfg.get("out", required=True))
    workers = _workers(cfg)
    network = cfg.get("network", "")

    layers = _as_list(cfg.get("layers")) or [cfg.get("layer", required=True)]
    scale_sets = cfg.get("scale_sets")
    if scale_sets is None:
        tags = _resolve_tags(manifest, cfg)
        scale_sets = [tags]
    scale_sets = [tuple(s) if isinstance(s, (list, tuple)) else (s,) for s in scale_sets]
    methods = _as_list(cfg.get("methods")) or [cfg.get("method", Method.MEAN_POOL.value)]
    dims = _as_list(cfg.get("dims")) or [cfg.get("dim", PCA_DIM)]
    metrics = _as_list(cfg.get("metrics")) or [cfg.get("metric", Metric.EUCLIDEAN.value)]
    pre_l2 = cfg.get("pre_l2", "descriptor")

    out.mkdir(parents=True, exist_ok=True)
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)

    locals_cache, model_cache, raw_cache, pca_cache = {}, {}, {}, {}
    rows = []
    failures = []

    for layer in layers:
        for tags in scale_sets:
            mode = _resolve_mode(cfg, list(tags))
            for method in (Method(m).value for m in methods):
                for dim in dims:
                    for metric in metrics:
                        cell = f"{layer}__{'+'.join(tags)}__{method}__{dim}__{metric}"
                        try:
                            codebook, gmm = _cell_models(
                                method, layer, tags, manifest, cfg, seed,
                                (locals_cache, model_cache), models_dir)
                            spec = _build_spec(method, codebook, gmm, pre_l2, None, False)
                            raw_key = (layer, tags, method)
                            if raw_key not in raw_cache:
                                _check_tags(manifest, list(tags))
                                raw_cache[raw_key] = _map_entries(
                                    lambda e: _raw_descriptor(e, layer, list(tags), mode, spec),
                                    manifest.entries, workers)
                            raws = raw_cache[raw_key]

                            pca = None
                            if dim not in (None, "none"):
                                pca_key = (layer, tags, method, int(dim))
                                if pca_key not in pca_cache:
                                    X = np.stack([r.vector for r in raws])
                                    model = fit_pca(X, int(dim), seed)
                                    save_model(
                                        model,
                                        models_dir / f"pca_{layer}_{'+'.join(tags)}_{method}_d{dim}.rma",
                                        {"dataset_id": manifest.dataset_id,
                                         "layer_id": layer, "seed": seed})
                                    pca_cache[pca_key] = model
                                pca = pca_cache[pca_key]

                            descriptors = [_finalize_descriptor(r, pca, True) for r in raws]
                            fingerprint = spec_fingerprint({
                                "dataset_id": manifest.dataset_id, "network": network,
                                "layer": layer, "scale_tags": list(tags),
                                "method": method, "dim": str(dim),
                                "metric": str(metric), "seed": seed, "pre_l2": pre_l2,
                            })
                            index = build_index(manifest, descriptors, Metric(metric),
                                                fingerprint)
                            ranked = [query_rank(index, d) for d in descriptors]
                            report = evaluate_run(index, manifest, ranked)

                            cell_dir = out / cell
                            cell_dir.mkdir(exist_ok=True)
                            (cell_dir / "report.json").write_text(
                                json.dumps(report_to_dict(report), sort_keys=True,
                                           indent=2) + "\n", "utf-8")
                            (cell_dir / "report.txt").write_text(
                                render_report_text(report), "utf-8")
                            rows.append([manifest.dataset_id, network, layer,
                                         method, str(dim), str(metric),
                                         f"{report.anmrr:.6f}", f"{report.map:.6f}"])
                            print(f"[ok]   {cell}: ANMRR {report.anmrr:.4f} "
                                  f"MAP {100.0 * report.map:.2f}%")
                        except Exception as e:  # per-cell isolation
                            failures.append((cell, e))
                            print(f"[fail] {cell}: {e}", file=sys.stderr)

    with open(out / "combined.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "network", "layer", "method", "dim", "metric",
                         "anmrr", "map"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out / 'combined.csv'}"
          + (f"; {len(failures)} cells failed" if failures else ""))

    if failures:
        if all(isinstance(e, ConfigError) for _, e in failures):
            return 1
        return 2
    return 0


# ---------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--workers", type=int, help=f"parallel workers (env {WORKERS_ENV})")


def _build_parser() -> _Parser:
    parser = _Parser(prog="rsir", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a codebook, gmm, or pca model")
    p.add_argument("kind", choices=["codebook", "gmm", "pca"])
    p.add_argument("--manifest")
    p.add_argument("--layer")
    p.add_argument("--scale", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("-k", type=int, dest="k")
    p.add_argument("--dim", type=int)
    p.add_argument("--method")
    p.add_argument("--codebook")
    p.add_argument("--gmm")
    p.add_argument("--mode", choices=["auto", "single", "multiscale", "multipatch"])
    p.add_argument("--pre-l2", dest="pre_l2", choices=PRE_L2_MODES)
    p.add_argument("--sample-cap", dest="sample_cap", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--force", action="store_const", const=True)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("aggregate", help="compute one descriptor per image")
    p.add_argument("--manifest")
    p.add_argument("--layer")
    p.add_argument("--scale", nargs="+")
    p.add_argument("--method")
    p.add_argument("--codebook")
    p.add_argument("--gmm")
    p.add_argument("--pca")
    p.add_argument("--mode", choices=["auto", "single", "multiscale", "multipatch"])
    p.add_argument("--pre-l2", dest="pre_l2", choices=PRE_L2_MODES)
    p.add_argument("--no-final-l2", dest="no_final_l2", action="store_const", const=True)
    p.add_argument("--force", action="store_const", const=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("index", help="build a descriptor index")
    p.add_argument("--manifest")
    p.add_argument("--descriptors")
    p.add_argument("--metric", choices=[m.value for m in Metric])
    p.add_argument("--fingerprint")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank references for each query")
    p.add_argument("--index")
    p.add_argument("--queries", help="descriptor dir; defaults to the index itself")
    p.add_argument("--query-list", dest="query_list")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="score ranked lists with ANMRR and mAP")
    p.add_argument("--index")
    p.add_argument("--manifest")
    p.add_argument("--ranked")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="sweep fit-aggregate-index-query-evaluate")
    p.add_argument("--manifest")
    p.add_argument("--layer")
    p.add_argument("--scale", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--network")
    p.add_argument("--mode", choices=["auto", "single", "multiscale", "multipatch"])
    p.add_argument("--pre-l2", dest="pre_l2", choices=PRE_L2_MODES)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.func(args) or 0)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except SystemExit:
        raise
    except Exception as e:
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
