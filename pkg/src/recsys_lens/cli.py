"""``recsys-lens`` command line: one subcommand per pipeline stage plus ``pipeline``.

Every invocation writes ``manifest.json`` into its output directory listing
the resolved configuration, input and output SHA-256 digests, the toolkit
version and the wall-clock duration. Failures print a single line
``error: category=<usage|parse|validate|compute|io> message=<...>`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .data import FORMATS, IngestError, RatingsDataset, load_pair, load_ratings, popularity_curve, split
from .embedding import cloud_stats, takens_embed
from .graph import build_graph, export_graph, layout, louvain
from .minidata import MINI_NAME, mini_path
from .recommenders import (
    ALGORITHMS,
    FIGURE_ROSTER,
    FactorModel,
    RandomPlacement,
    SeriesTrace,
    TrainConfig,
    TrainingDiverged,
    evaluate_mae,
    mae_grid,
    thread_count,
    train_algorithm,
)
from .recurrence import DEFAULT_FRACTION, epsilon_from_fraction, recurrence_plot, recurrence_rate
from .similarity import (
    SimilarityMatrix,
    dpp_diversity,
    heatmap_data,
    radius_vs_popularity,
    similarity_matrix,
    similarity_radius,
)
from . import viz

log = logging.getLogger("recsys_lens")

MANIFEST_SCHEMA = "1"
EXIT_CODES = {"usage": 2, "parse": 3, "validate": 4, "compute": 5, "io": 6}
DEFAULT_GRID = [round(0.0025 * k, 6) for k in range(1, 13)]

DEFAULT_PIPELINE: dict[str, Any] = {
    "dataset": {"path": None, "format": "comoda_csv", "name": MINI_NAME, "r_min": 1.0, "r_max": 5.0},
    "split": {"ratio": 0.8, "seed": 0},
    "grid": {
        "algorithms": list(FIGURE_ROSTER),
        "mode": "rate",
        "values": DEFAULT_GRID,
        "k": 10,
        "gamma": 0.02,
        "lambda": 0.01,
        "iterations": 40_000,
        "iters_pre": 10_000,
        "neighbors": 20,
        "seed": 0,
    },
    "embed": {"dims": [2, 3], "tau": 1},
    "recur": {"fraction": DEFAULT_FRACTION, "epsilon": None},
    "sim": {"min_support": 1, "order": "by_popularity", "top_n": None},
    "dpp": {"selection_size": 5},
    "graph": {"threshold": 0.0, "iterations": 100, "seed": 0, "format": "graphml"},
}


class CliError(Exception):
    def __init__(self, category: str, message: str) -> None:
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError("usage", f"{self.prog}: {message}")


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs and outputs of one invocation for the manifest."""

    def __init__(self, out: Path, argv: Sequence[str], command: str) -> None:
        self.out = out
        self.argv = list(argv)
        self.command = command
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.seeds: dict[str, int] = {}
        self.config: dict[str, Any] = {}
        self.notes: dict[str, Any] = {}
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def read(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise CliError("io", f"input file not found: {p}")
        self.inputs[str(p)] = sha256(p)
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.outputs.append(p)
        return p

    def add(self, path: Path) -> None:
        self.outputs.append(path)

    def manifest(self) -> Path:
        outputs = [
            {"path": p.relative_to(self.out).as_posix(), "sha256": sha256(p)}
            for p in sorted(set(self.outputs))
        ]
        doc = {
            "schema_version": MANIFEST_SCHEMA,
            "toolkit_version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "threads": thread_count(),
            "inputs": [{"path": k, "sha256": v} for k, v in sorted(self.inputs.items())],
            "outputs": outputs,
            "notes": self.notes,
            "duration_seconds": round(time.perf_counter() - self.started, 3),
        }
        p = self.out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _dataset(run: Run, path: str | None, fmt: str, r_min: float, r_max: float) -> RatingsDataset:
    p = run.read(path if path else mini_path())
    return load_ratings(p, fmt, r_min=r_min, r_max=r_max)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError("usage", f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError("usage", f"expected comma-separated integers, got {text!r}") from exc


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        k=args.k,
        gamma=args.gamma,
        lam=args.lam,
        iterations=args.iterations,
        iters_pre=args.iters_pre,
        neighbors=args.neighbors,
        seed=args.seed,
    )


# -- subcommands ---------------------------------------------------------


def cmd_ingest(args, run: Run) -> None:
    ds = _dataset(run, args.input, args.format, args.r_min, args.r_max)
    name = args.name or Path(args.input).stem
    run.write(f"{name}_ratings.csv", ds.to_canonical_csv())
    report = {"users": ds.m, "items": ds.n, "triplets": len(ds), **ds.report.as_dict()}
    run.write(f"{name}_ingest.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    run.notes["ingest"] = report
    print(json.dumps(report, sort_keys=True))


def cmd_split(args, run: Run) -> None:
    ds = _dataset(run, args.input, args.format, args.r_min, args.r_max)
    pair = split(ds, args.ratio, args.seed)
    run.seeds["split"] = args.seed
    name = args.name or Path(args.input).stem
    run.write(f"{name}_train.csv", pair.train.to_canonical_csv())
    run.write(f"{name}_test.csv", pair.test.to_canonical_csv())
    print(json.dumps({"train": len(pair.train), "test": len(pair.test)}))


def _load_pair(run: Run, args) -> tuple[RatingsDataset | None, RatingsDataset | None]:
    opts = {"r_min": args.r_min, "r_max": args.r_max}
    if args.train and args.test:
        return load_pair(run.read(args.train), run.read(args.test), args.format, **opts)
    if args.train:
        return load_ratings(run.read(args.train), args.format, **opts), None
    if args.test:
        return None, load_ratings(run.read(args.test), args.format, **opts)
    return None, None


def cmd_train(args, run: Run) -> None:
    train, test = _load_pair(run, args)
    if train is None and args.algo not in ("zeromat", "random"):
        raise CliError("usage", f"--train is required for --algo {args.algo}")
    cfg = _train_config(args)
    run.seeds["train"] = cfg.seed
    ref = train if train is not None else test
    m = ref.m if ref is not None else args.m
    n = ref.n if ref is not None else args.n
    model = train_algorithm(args.algo, train, cfg, m=m, n=n)
    if isinstance(model, FactorModel):
        run.write(f"model_{args.algo}.json", model.to_json())
    elif isinstance(model, RandomPlacement):
        run.write(f"model_{args.algo}.json", json.dumps({"algorithm": "random", "seed": model.seed}) + "\n")
    if test is not None:
        mae = evaluate_mae(model, test)
        trace = SeriesTrace(args.algo, [cfg.gamma], [mae])
        run.write(f"trace_{args.algo}.csv", trace.to_csv())
        print(json.dumps({"algorithm": args.algo, "test_mae": mae}))


def _grid_plot(name: str, traces: Sequence[SeriesTrace], mode: str) -> str:
    payload = [(t.label, [x for x, y in zip(t.xs, t.ys) if math.isfinite(y)], list(t.values())) for t in traces]
    payload = [p for p in payload if p[1]]
    return viz.render(viz.PlotSpec(
        "line", payload, title=f"{name}: test MAE",
        xlabel="learning rate" if mode == "rate" else "SGD steps", ylabel="MAE",
    ))


def cmd_grid(args, run: Run) -> None:
    train, test = _load_pair(run, args)
    if train is None or test is None:
        raise CliError("usage", "grid needs --train and --test")
    cfg = _train_config(args)
    run.seeds["grid"] = cfg.seed
    values = _floats(args.grid) if args.grid else DEFAULT_GRID
    traces = []
    for algo in args.algo.split(","):
        trace = mae_grid(algo, train, test, values, cfg, args.grid_mode)
        if trace.failures:
            run.notes.setdefault("failures", {})[algo] = {str(k): v for k, v in trace.failures.items()}
        run.write(f"{args.name}_trace_{algo}.csv", trace.to_csv())
        traces.append(trace)
    run.write(viz.plot_name(args.name, "mae", "all"), _grid_plot(args.name, traces, args.grid_mode))


def _read_trace(run: Run, path: str) -> SeriesTrace:
    p = run.read(path)
    label = p.stem.split("_trace_")[-1]
    return SeriesTrace.from_csv(p.read_text(encoding="utf-8"), label)


def cmd_embed(args, run: Run) -> None:
    traces = [_read_trace(run, t) for t in args.trace]
    stats = {}
    clouds = []
    for t in traces:
        cloud = takens_embed(t, args.dim, args.tau)
        clouds.append((t.label, cloud.points))
        run.write(f"{args.name}_cloud{args.dim}d_{t.label}.csv", cloud.to_csv())
        stats[t.label] = json.loads(cloud_stats(cloud).to_json())
    run.write(f"{args.name}_embedstats{args.dim}d_all.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    if args.dim in (2, 3):
        run.write(
            viz.plot_name(args.name, f"embed{args.dim}d", "all"),
            viz.render(viz.PlotSpec("scatter2d", clouds, title=f"{args.dim}-D delay embedding (tau={args.tau})",
                                    xlabel="MAE(t)", ylabel="MAE(t+tau)", width=960 if args.dim == 3 else 640)),
        )


def cmd_recur(args, run: Run) -> None:
    rates = {}
    for path in args.trace:
        t = _read_trace(run, path)
        eps = args.epsilon if args.epsilon is not None else epsilon_from_fraction(t, args.fraction)
        grid = recurrence_plot(t, eps)
        rates[t.label] = {"epsilon": eps, "recurrence_rate": recurrence_rate(grid)}
        run.write(f"{args.name}_recurrence_{t.label}.pgm", grid.to_pbm())
        run.write(
            viz.plot_name(args.name, "recurrence", t.label),
            viz.render(viz.PlotSpec("recurrence", grid.bits, title=f"Recurrence plot: {t.label}", width=480, height=480)),
        )
    run.write(f"{args.name}_recurrence_rates.json", json.dumps(rates, indent=2, sort_keys=True) + "\n")
    print(json.dumps(rates, sort_keys=True))


def _similarity_outputs(run: Run, ds: RatingsDataset, name: str, mode: str, cfg: dict) -> tuple[SimilarityMatrix, Any]:
    short = "user" if mode == "user_user" else "item"
    sim = similarity_matrix(ds, mode, cfg["min_support"])
    radii = similarity_radius(sim)
    prof = radius_vs_popularity(ds, radii)
    ids = ds.user_ids if short == "user" else ds.item_ids
    run.write(f"{name}_sim_{short}.csv", sim.to_csv())
    run.write(f"{name}_radius_{short}.csv", prof.to_csv(ids))
    heat = heatmap_data(sim, cfg["order"], ds.counts(short), top_n=cfg["top_n"])
    run.write(f"{name}_heatmap_{short}.csv", heat.to_csv())
    run.write(
        viz.plot_name(name, "heatmap", short),
        viz.render_heatmap(heat.values, viz.PlotSpec("heatmap", heat.values, title=f"{short}-{short} similarity",
                                                     xlabel=f"{short}s by {cfg['order'].replace('by_', '')}")),
    )
    run.write(
        viz.plot_name(name, "radius", short),
        viz.render(viz.PlotSpec("scatter2d", [(f"{short} radius", np.array(prof.pairs, dtype=float))],
                                title=f"{short} similarity radius vs popularity rank",
                                xlabel="popularity rank", ylabel="similarity radius")),
    )
    return sim, prof


def _popularity_outputs(run: Run, ds: RatingsDataset, name: str) -> dict:
    items = popularity_curve(ds, "item")
    values = popularity_curve(ds, "rating_value")
    run.write(f"{name}_popularity_items.csv", "rank,count\n" + "".join(f"{r},{c}\n" for r, c in items))
    run.write(f"{name}_popularity_ratings.csv", "rating,count\n" + "".join(f"{v:.1f},{c}\n" for v, c in values))
    run.write(viz.plot_name(name, "loglog", "items"), viz.render(viz.PlotSpec(
        "loglog", [("items", items)], title="item popularity", xlabel="item rank", ylabel="number of ratings")))
    run.write(viz.plot_name(name, "loglog", "ratings"), viz.render(viz.PlotSpec(
        "loglog", [("rating values", values)], title="rating value frequency", xlabel="rating value",
        ylabel="number of ratings")))
    counts = [c for _, c in items]
    return {"top_over_median": counts[0] / float(np.median(counts))}


def cmd_sim(args, run: Run) -> None:
    ds = _dataset(run, args.input, args.format, args.r_min, args.r_max)
    cfg = {"min_support": args.min_support, "order": args.order, "top_n": args.top_n}
    modes = ("user_user", "item_item") if args.mode == "both" else (args.mode,)
    summary = {}
    for mode in modes:
        _, prof = _similarity_outputs(run, ds, args.name, mode, cfg)
        summary[prof.mode] = {"radius_skewness": prof.skewness}
    summary["popularity"] = _popularity_outputs(run, ds, args.name)
    run.write(f"{args.name}_sim_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _read_sim(run: Run, path: str, size: int | None, mode: str) -> SimilarityMatrix:
    lines = run.read(path).read_text(encoding="utf-8").strip().splitlines()
    pairs = {}
    for line in lines[1:]:
        a, b, s = line.split(",")
        a, b = int(a), int(b)
        pairs[(min(a, b), max(a, b))] = float(s)
    top = max((max(k) for k in pairs), default=-1) + 1
    size = max(size or 0, top)
    return SimilarityMatrix(mode, size, dict(sorted(pairs.items())), (True,) * size)


def cmd_dpp(args, run: Run) -> None:
    sim = _read_sim(run, args.matrix, args.size, args.mode)
    sel = _ints(args.select)
    score = dpp_diversity(sim, sel)
    run.write(f"{args.name}_dpp.json", json.dumps({"selection": sel, "det": score}, sort_keys=True) + "\n")
    print(f"{score:.17g}")


def _graph_outputs(run: Run, ds: RatingsDataset, sim: SimilarityMatrix, prof, name: str, cfg: dict) -> dict:
    short = "user" if sim.mode == "user_user" else "item"
    radii = similarity_radius(sim)
    rank = np.empty(sim.size, dtype=np.int64)
    rank[list(prof.entities)] = np.arange(1, sim.size + 1)
    ids = ds.user_ids if short == "user" else ds.item_ids
    g = build_graph(sim, radii, cfg["threshold"], rank, ids)
    comm = louvain(g, cfg["seed"])
    pos = layout(g, cfg["iterations"], cfg["seed"])
    ext = "graphml" if cfg["format"] == "graphml" else "dot"
    run.add(export_graph(g, run.out / f"{name}_graph_{short}.{ext}", comm, pos, cfg["format"]))
    run.write(
        f"{name}_communities_{short}.csv",
        "entity,community\n" + "".join(f"{ids[u]},{c}\n" for u, c in enumerate(comm.membership)),
    )
    run.write(viz.plot_name(name, "graph", short), viz.render(viz.PlotSpec(
        "graph", (g.edges, pos.positions, g.radius, comm.membership),
        title=f"{short} similarity graph ({comm.count} communities)", width=640, height=640)))
    return {"nodes": g.n, "edges": len(g.edges), "communities": comm.count, "modularity": comm.modularity,
            "community_sizes": sorted(comm.sizes(), reverse=True)}


def cmd_graph(args, run: Run) -> None:
    ds = _dataset(run, args.input, args.format, args.r_min, args.r_max)
    cfg = {"threshold": args.threshold, "iterations": args.iterations, "seed": args.seed, "format": args.graph_format}
    run.seeds["graph"] = args.seed
    modes = ("user_user", "item_item") if args.mode == "both" else (args.mode,)
    summary = {}
    for mode in modes:
        sim = similarity_matrix(ds, mode, args.min_support)
        prof = radius_vs_popularity(ds, similarity_radius(sim))
        summary[prof.mode] = _graph_outputs(run, ds, sim, prof, args.name, cfg)
    run.write(f"{args.name}_graph_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: v["communities"] for k, v in summary.items()}, sort_keys=True))


def _read_graphml(path: Path):
    import xml.etree.ElementTree as ET

    ns = {"g": "http://graphml.graphdrawing.org/xmlns"}
    root = ET.parse(path).getroot()
    keys = {k.get("id"): k.get("attr.name") for k in root.findall("g:key", ns)}
    nodes, index = [], {}
    for node in root.iter("{http://graphml.graphdrawing.org/xmlns}node"):
        data = {keys[d.get("key")]: d.text for d in node.findall("g:data", ns)}
        index[node.get("id")] = len(nodes)
        nodes.append(data)
    edges = []
    for e in root.iter("{http://graphml.graphdrawing.org/xmlns}edge"):
        data = {keys[d.get("key")]: d.text for d in e.findall("g:data", ns)}
        edges.append((index[e.get("source")], index[e.get("target")], float(data.get("weight", 1.0))))
    if any("x" not in d for d in nodes):
        raise CliError("validate", "GraphML payload needs x/y node attributes (run `graph` first)")
    pos = np.array([[float(d["x"]), float(d["y"])] for d in nodes])
    sizes = [float(d.get("radius", 1)) for d in nodes]
    comm = [int(d["community"]) for d in nodes] if all("community" in d for d in nodes) else None
    return edges, pos, sizes, comm


def cmd_plot(args, run: Run) -> None:
    paths = [run.read(p) for p in args.payload]
    kind = args.kind
    if kind == "line":
        traces = [SeriesTrace.from_csv(p.read_text(encoding="utf-8"), p.stem) for p in paths]
        payload: Any = [(t.label, [x for x, y in zip(t.xs, t.ys) if math.isfinite(y)], list(t.values())) for t in traces]
    elif kind in ("scatter2d", "loglog"):
        payload = []
        for p in paths:
            rows = p.read_text(encoding="utf-8").strip().splitlines()[1:]
            payload.append((p.stem, np.array([[float(v) for v in r.split(",")] for r in rows])))
    elif kind == "heatmap":
        payload = np.array([[float(v) for v in r.split(",")] for r in paths[0].read_text(encoding="utf-8").strip().splitlines()])
    elif kind == "recurrence":
        tokens = paths[0].read_text(encoding="utf-8").split()
        if not tokens or tokens[0] != "P1":
            raise CliError("parse", "recurrence payload must be a plain P1 bitmap")
        w, h = int(tokens[1]), int(tokens[2])
        payload = np.array([int(t) for t in tokens[3:]], dtype=np.uint8).reshape(h, w)
    else:
        payload = _read_graphml(paths[0])
    spec = viz.PlotSpec(kind, payload, title=args.title, xlabel=args.xlabel, ylabel=args.ylabel,
                        width=args.width, height=args.height, palette=args.palette,
                        logx=args.logx, logy=args.logy)
    run.write(args.output, viz.render(spec))


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise CliError("validate", f"unknown config key {k!r}")
        out[k] = _merge(out[k], v) if isinstance(out[k], dict) and isinstance(v, dict) else v
    return out


def cmd_pipeline(args, run: Run) -> None:
    override = {}
    if args.config:
        try:
            override = json.loads(run.read(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError("parse", f"bad config JSON: {exc}") from exc
    cfg = _merge(DEFAULT_PIPELINE, override)
    if args.dataset:
        cfg["dataset"]["path"] = args.dataset
    run.config = cfg
    dcfg = cfg["dataset"]
    name = dcfg["name"]
    ds = _dataset(run, dcfg["path"], dcfg["format"], dcfg["r_min"], dcfg["r_max"])
    run.notes["dataset"] = {"users": ds.m, "items": ds.n, "triplets": len(ds), **ds.report.as_dict()}

    pair = split(ds, cfg["split"]["ratio"], cfg["split"]["seed"])
    run.seeds.update(split=cfg["split"]["seed"], grid=cfg["grid"]["seed"], graph=cfg["graph"]["seed"])
    run.write(f"{name}_train.csv", pair.train.to_canonical_csv())
    run.write(f"{name}_test.csv", pair.test.to_canonical_csv())

    g = cfg["grid"]
    tc = TrainConfig(g["k"], g["gamma"], g["lambda"], g["iterations"], g["iters_pre"], g["neighbors"], g["seed"])
    traces = []
    for algo in g["algorithms"]:
        trace = mae_grid(algo, pair.train, pair.test, g["values"], tc, g["mode"])
        if trace.failures:
            run.notes.setdefault("failures", {})[algo] = {str(k): v for k, v in trace.failures.items()}
        run.write(f"{name}_trace_{algo}.csv", trace.to_csv())
        traces.append(trace)
    run.write(viz.plot_name(name, "mae", "all"), _grid_plot(name, traces, g["mode"]))

    for dim in cfg["embed"]["dims"]:
        clouds, stats = [], {}
        for t in traces:
            try:
                cloud = takens_embed(t, dim, cfg["embed"]["tau"])
            except ValueError as exc:
                run.notes.setdefault("skipped", []).append(f"embed {t.label} d={dim}: {exc}")
                continue
            clouds.append((t.label, cloud.points))
            run.write(f"{name}_cloud{dim}d_{t.label}.csv", cloud.to_csv())
            stats[t.label] = json.loads(cloud_stats(cloud).to_json())
        run.write(f"{name}_embedstats{dim}d_all.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
        if clouds and dim in (2, 3):
            run.write(viz.plot_name(name, f"embed{dim}d", "all"), viz.render(viz.PlotSpec(
                "scatter2d", clouds, title=f"{dim}-D delay embedding of MAE curves (tau={cfg['embed']['tau']})",
                xlabel="MAE(t)", ylabel="MAE(t+tau)", width=960 if dim == 3 else 640)))

    rates = {}
    for t in traces:
        try:
            eps = cfg["recur"]["epsilon"] or epsilon_from_fraction(t, cfg["recur"]["fraction"])
        except ValueError as exc:
            run.notes.setdefault("skipped", []).append(f"recur {t.label}: {exc}")
            continue
        grid = recurrence_plot(t, eps)
        rates[t.label] = {"epsilon": eps, "recurrence_rate": recurrence_rate(grid)}
        run.write(f"{name}_recurrence_{t.label}.pgm", grid.to_pbm())
        run.write(viz.plot_name(name, "recurrence", t.label), viz.render(viz.PlotSpec(
            "recurrence", grid.bits, title=f"Recurrence plot: {t.label}", width=480, height=480)))
    run.write(f"{name}_recurrence_rates.json", json.dumps(rates, indent=2, sort_keys=True) + "\n")

    summary: dict[str, Any] = {"popularity": _popularity_outputs(run, ds, name)}
    dpp = {}
    for mode in ("user_user", "item_item"):
        sim, prof = _similarity_outputs(run, ds, name, mode, cfg["sim"])
        summary[prof.mode] = {"radius_skewness": prof.skewness}
        sel = list(prof.entities[: cfg["dpp"]["selection_size"]])
        dpp[prof.mode] = {"selection": sel, "det": dpp_diversity(sim, sel)}
        summary[prof.mode]["graph"] = _graph_outputs(run, ds, sim, prof, name, cfg["graph"])
    run.write(f"{name}_dpp.json", json.dumps(dpp, indent=2, sort_keys=True) + "\n")
    run.write(f"{name}_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


# -- argument grammar ----------------------------------------------------


def _data_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--input", required=required, help="rating file (default: bundled mini-dataset)")
    p.add_argument("--format", choices=FORMATS, default="comoda_csv", help="input format (default: comoda_csv)")
    p.add_argument("--r-min", type=float, default=1.0, help="lowest valid rating (default: 1.0)")
    p.add_argument("--r-max", type=float, default=5.0, help="highest valid rating (default: 5.0)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--train", help="training ratings file")
    p.add_argument("--test", help="test ratings file")
    p.add_argument("--format", choices=FORMATS, default="comoda_csv", help="format of --train/--test")
    p.add_argument("--r-min", type=float, default=1.0, help="lowest valid rating (default: 1.0)")
    p.add_argument("--r-max", type=float, default=5.0, help="highest valid rating (default: 5.0)")
    p.add_argument("--k", type=int, default=d.k, help=f"latent dimension (default: {d.k})")
    p.add_argument("--gamma", type=float, default=d.gamma, help=f"learning rate (default: {d.gamma})")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam, help=f"L2 weight for MF (default: {d.lam})")
    p.add_argument("--iterations", type=int, default=d.iterations, help=f"SGD steps (default: {d.iterations})")
    p.add_argument("--iters-pre", type=int, default=d.iters_pre, help=f"DotMat steps before MF in the hybrid (default: {d.iters_pre})")
    p.add_argument("--neighbors", type=int, default=d.neighbors, help=f"CF neighbor count K (default: {d.neighbors})")
    p.add_argument("--seed", type=int, default=d.seed, help="random seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recsys-lens", description="Recommender training and diagnostics toolkit.")
    parser.add_argument("--version", action="version", version=f"recsys-lens {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", parser_class=_Parser)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--name", default=MINI_NAME, help=f"dataset name used in output file names (default: {MINI_NAME})")
        return p

    p = add("ingest", "parse a rating file and write its canonical CSV and ingest report")
    _data_flags(p, required=True)

    p = add("split", "seeded train/test split")
    _data_flags(p)
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction in (0, 1) (default: 0.8)")
    p.add_argument("--seed", type=int, default=0, help="split seed (default: 0)")

    p = add("train", "train one algorithm; writes the model and, with --test, its MAE trace")
    p.add_argument("--algo", choices=ALGORITHMS, required=True, help="algorithm")
    _train_flags(p)
    p.add_argument("--m", type=int, default=100, help="user count for ZeroMat without data (default: 100)")
    p.add_argument("--n", type=int, default=200, help="item count for ZeroMat without data (default: 200)")

    p = add("grid", "test MAE over a learning-rate or step-count grid")
    p.add_argument("--algo", default=",".join(FIGURE_ROSTER), help="comma-separated algorithms (default: the five-model roster)")
    _train_flags(p)
    p.add_argument("--grid", default=None, help="comma-separated grid values (default: 0.0025..0.03 step 0.0025)")
    p.add_argument("--grid-mode", choices=("rate", "steps"), default="rate", help="what the grid varies (default: rate)")

    p = add("embed", "delay-embed MAE traces into point clouds")
    p.add_argument("--trace", nargs="+", required=True, help="trace CSV files (x,mae)")
    p.add_argument("--dim", type=int, default=2, help="embedding dimension (default: 2)")
    p.add_argument("--tau", type=int, default=1, help="delay in grid steps (default: 1)")

    p = add("recur", "recurrence plots of MAE traces")
    p.add_argument("--trace", nargs="+", required=True, help="trace CSV files (x,mae)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--epsilon", type=float, default=None, help="recurrence threshold")
    g.add_argument("--fraction", type=float, default=DEFAULT_FRACTION, help="threshold as a fraction of the trace range (default: 0.1)")

    p = add("sim", "similarity matrices, radii, heatmaps and popularity curves")
    _data_flags(p)
    p.add_argument("--mode", choices=("user_user", "item_item", "both"), default="both", help="which matrices (default: both)")
    p.add_argument("--min-support", type=int, default=1, help="minimum co-rated count (default: 1)")
    p.add_argument("--order", choices=("by_index", "by_popularity"), default="by_popularity", help="heatmap order (default: by_popularity)")
    p.add_argument("--top-n", type=int, default=None, help="keep only the N most popular entities in heatmaps")

    p = add("dpp", "determinant diversity score of a selection")
    p.add_argument("--matrix", required=True, help="similarity CSV (a,b,sim) written by `sim`")
    p.add_argument("--select", required=True, help="comma-separated entity indices")
    p.add_argument("--size", type=int, default=None, help="entity count (default: inferred)")
    p.add_argument("--mode", choices=("user_user", "item_item"), default="item_item", help="matrix kind (default: item_item)")

    p = add("graph", "similarity graph, Louvain communities, layout and GraphML/DOT export")
    _data_flags(p)
    p.add_argument("--mode", choices=("user_user", "item_item", "both"), default="both", help="which graphs (default: both)")
    p.add_argument("--min-support", type=int, default=1, help="minimum co-rated count (default: 1)")
    p.add_argument("--threshold", type=float, default=0.0, help="keep edges with similarity above this (default: 0)")
    p.add_argument("--iterations", type=int, default=100, help="layout iterations (default: 100)")
    p.add_argument("--seed", type=int, default=0, help="Louvain and layout seed (default: 0)")
    p.add_argument("--graph-format", choices=("graphml", "dot"), default="graphml", help="export format (default: graphml)")

    p = add("plot", "render a payload file to SVG")
    p.add_argument("--kind", choices=viz.KINDS, required=True, help="plot kind")
    p.add_argument("--payload", nargs="+", required=True, help="payload file(s): trace/cloud/pair CSV, dense CSV, P1 bitmap or GraphML")
    p.add_argument("--output", default="plot.svg", help="SVG file name inside --out (default: plot.svg)")
    p.add_argument("--title", default="", help="plot title")
    p.add_argument("--xlabel", default="", help="x-axis label")
    p.add_argument("--ylabel", default="", help="y-axis label")
    p.add_argument("--width", type=int, default=640, help="width in pixels (default: 640)")
    p.add_argument("--height", type=int, default=480, help="height in pixels (default: 480)")
    p.add_argument("--palette", choices=tuple(viz.RAMPS), default="blues", help="heatmap color ramp (default: blues)")
    p.add_argument("--logx", action="store_true", help="logarithmic x axis")
    p.add_argument("--logy", action="store_true", help="logarithmic y axis")

    p = add("pipeline", "run every stage from a JSON config")
    p.add_argument("--config", default=None, help="pipeline config JSON (default: built-in config on the mini-dataset)")
    p.add_argument("--dataset", default=None, help="override the config's dataset path")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "grid": cmd_grid,
    "embed": cmd_embed,
    "recur": cmd_recur,
    "sim": cmd_sim,
    "dpp": cmd_dpp,
    "graph": cmd_graph,
    "plot": cmd_plot,
    "pipeline": cmd_pipeline,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, (IngestError, json.JSONDecodeError)):
        return "parse"
    if isinstance(exc, (TrainingDiverged, ArithmeticError)):
        return "compute"
    if isinstance(exc, OSError):
        return "io"
    return "validate"


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("usage", "no subcommand given; see --help")
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        run = Run(Path(args.out), argv, args.command)
        run.config = {k: v for k, v in sorted(vars(args).items())}
        COMMANDS[args.command](args, run)
        run.manifest()
        return 0
    except (CliError, IngestError, TrainingDiverged, ValueError, ArithmeticError, OSError) as exc:
        cat = _category(exc)
        msg = " ".join(str(exc).split())
        print(f"error: category={cat} message={json.dumps(msg)}", file=sys.stderr)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
