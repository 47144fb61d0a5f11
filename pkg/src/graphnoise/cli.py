"""Command-line harness: gen / train / attack / eval / bound / certify / report.

Configuration is a flat INI file (sections in brackets, ``key = value``
lines). Every stage reads and writes inside the ``--out`` run directory,
records wall-clock durations and artifact paths in ``manifest.json``, and
emits CSVs with fixed headers. Two runs with the same config and master
seed produce byte-identical CSVs; timings live only in the manifest.
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels, bounds, model as mdl, purify as pur
from .attack import dice, gaussian_feature_noise, pgd_features, pgd_structure
from .certify import SmoothingConfig, certified_accuracy_grid
from .graphs import (GCN_NORMALIZED, GIN_AUGMENTED, Graph, SbmSpec,
                     build_operator, generate_sbm, load_graph, save_graph)
from .linalg import RandomSource

# Stage ids used to derive independent random streams from the master seed.
_STREAM = {"gen": 1, "train": 2, "attack": 3, "eval": 4, "bound": 5,
           "certify": 6}

DEFAULT_CONFIG = """\
[dataset]
source = sbm
nodes = 300
classes = 3
p_in = 0.08
p_out = 0.01
feature_dim = 32
separation = 1.0
train_frac = 0.6
val_frac = 0.2
test_frac = 0.2

[model]
arch = gcn
gin_lambda = 0.0
hidden_dim = 16
activation = tanh
self_loops = false

[noise]
beta_grid = 0.0, 0.01, 0.05, 0.1, 0.5, 1.0
inject_after_layer = 1
active_at_train = true
active_at_inference = true

[train]
learning_rate = 0.01
epochs = 300
repeats = 10

[eval]
repeats = 5
mc_samples = 20

[attack]
structural = dice:0.05, dice:0.10, pgd:0.05, pgd:0.10
feature =
pgd_steps = 100
pgd_step_size = 0.5
pgd_tries = 20
feature_pgd_steps = 50
feature_pgd_step_size = 0.1

[purify]
method = none
jaccard_threshold = 0.05
svd_rank = 10
svd_binarize = 0.5

[bound]
beta = 0.1
eps_grid = 0.01, 0.05, 0.1, 0.2
flip_fractions = 0.05, 0.1
feature_scales = 0.1, 0.5
samples = 50

[certify]
p_plus = 0.001
p_minus = 0.4
n_selection = 1000
n_estimation = 10000
alpha = 0.01
r_a_max = 3
r_d_max = 3
chunk = 64
"""


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    raw_text: str = DEFAULT_CONFIG
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    purify: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode()).hexdigest()


def load_config(path=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(DEFAULT_CONFIG)
    if path is None:
        text = DEFAULT_CONFIG
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        parser.read_string(text)
    cfg = ExperimentConfig(raw_text=text)

    ds = parser["dataset"]
    cfg.dataset = {"source": ds.get("source", "sbm").strip()}
    if cfg.dataset["source"] == "files":
        for key in ("edges", "features", "labels", "masks"):
            cfg.dataset[key] = ds.get(key, fallback=None)
    else:
        cfg.dataset.update(
            nodes=ds.getint("nodes"), classes=ds.getint("classes"),
            p_in=ds.getfloat("p_in"), p_out=ds.getfloat("p_out"),
            feature_dim=ds.getint("feature_dim"),
            separation=ds.getfloat("separation"),
            train_frac=ds.getfloat("train_frac"),
            val_frac=ds.getfloat("val_frac"),
            test_frac=ds.getfloat("test_frac"),
        )
    md = parser["model"]
    cfg.model = {
        "arch": md.get("arch").strip(),
        "gin_lambda": md.getfloat("gin_lambda"),
        "hidden_dim": md.getint("hidden_dim"),
        "activation": md.get("activation").strip(),
        "self_loops": md.getboolean("self_loops"),
    }
    nz = parser["noise"]
    cfg.noise = {
        "beta_grid": _floats(nz.get("beta_grid")),
        "inject_after_layer": nz.getint("inject_after_layer"),
        "active_at_train": nz.getboolean("active_at_train"),
        "active_at_inference": nz.getboolean("active_at_inference"),
    }
    if not cfg.noise["beta_grid"]:
        raise ValueError("noise.beta_grid must list at least one value")
    if any(b < 0 for b in cfg.noise["beta_grid"]):
        raise ValueError("noise.beta_grid values must be >= 0")
    tr = parser["train"]
    cfg.train = {
        "learning_rate": tr.getfloat("learning_rate"),
        "epochs": tr.getint("epochs"),
        "repeats": tr.getint("repeats"),
    }
    ev = parser["eval"]
    cfg.eval = {"repeats": ev.getint("repeats"),
                "mc_samples": ev.getint("mc_samples")}
    at = parser["attack"]
    cfg.attack = {
        "structural": [t.strip() for t in at.get("structural").split(",") if t.strip()],
        "feature": [t.strip() for t in at.get("feature").split(",") if t.strip()],
        "pgd_steps": at.getint("pgd_steps"),
        "pgd_step_size": at.getfloat("pgd_step_size"),
        "pgd_tries": at.getint("pgd_tries"),
        "feature_pgd_steps": at.getint("feature_pgd_steps"),
        "feature_pgd_step_size": at.getfloat("feature_pgd_step_size"),
    }
    pu = parser["purify"]
    cfg.purify = {
        "method": pu.get("method").strip(),
        "jaccard_threshold": pu.getfloat("jaccard_threshold"),
        "svd_rank": pu.getint("svd_rank"),
        "svd_binarize": pu.getfloat("svd_binarize"),
    }
    bd = parser["bound"]
    cfg.bound = {
        "beta": bd.getfloat("beta"),
        "eps_grid": _floats(bd.get("eps_grid")),
        "flip_fractions": _floats(bd.get("flip_fractions")),
        "feature_scales": _floats(bd.get("feature_scales")),
        "samples": bd.getint("samples"),
    }
    ce = parser["certify"]
    cfg.certify = {
        "p_plus": ce.getfloat("p_plus"),
        "p_minus": ce.getfloat("p_minus"),
        "n_selection": ce.getint("n_selection"),
        "n_estimation": ce.getint("n_estimation"),
        "alpha": ce.getfloat("alpha"),
        "r_a_max": ce.getint("r_a_max"),
        "r_d_max": ce.getint("r_d_max"),
        "chunk": ce.getint("chunk"),
    }
    return cfg


# ---------------------------------------------------------------------------
# Run directory, manifest, CSV helpers
# ---------------------------------------------------------------------------

def _manifest_path(out):
    return os.path.join(out, "manifest.json")


def _load_manifest(out):
    path = _manifest_path(out)
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {"stages": {}, "artifacts": [], "train_runs": []}


def _save_manifest(out, manifest):
    with open(_manifest_path(out), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _record_stage(out, cfg, stage, seconds, artifacts, extra=None):
    manifest = _load_manifest(out)
    manifest["config_hash"] = cfg.config_hash
    manifest["versions"] = {
        "graphnoise": __version__,
        "numpy": np.__version__,
        "backend": _kernels.BACKEND,
    }
    manifest["stages"][stage] = {"seconds": seconds, "artifacts": artifacts}
    if extra:
        manifest["stages"][stage].update(extra)
    listed = set(manifest["artifacts"])
    for a in artifacts:
        if a not in listed:
            manifest["artifacts"].append(a)
            listed.add(a)
    _save_manifest(out, manifest)
    return manifest


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    """Deterministic shortest round-trip decimal for CSV cells."""
    return repr(float(x))


def _data_paths(out):
    d = os.path.join(out, "data")
    return {
        "dir": d,
        "edges": os.path.join(d, "edges.txt"),
        "features": os.path.join(d, "features.csv"),
        "labels": os.path.join(d, "labels.csv"),
        "masks": os.path.join(d, "masks.csv"),
    }


def _load_dataset(cfg, out):
    if cfg.dataset["source"] == "files":
        return load_graph(cfg.dataset["edges"], cfg.dataset.get("features"),
                          cfg.dataset.get("labels"), cfg.dataset.get("masks"))
    paths = _data_paths(out)
    if not os.path.exists(paths["edges"]):
        raise FileNotFoundError(
            f"{paths['edges']} not found: run the 'gen' stage first"
        )
    return load_graph(paths["edges"], paths["features"], paths["labels"],
                      paths["masks"])


def _apply_purify(cfg, g):
    method = cfg.purify["method"]
    if method == "none":
        return g
    if method == "jaccard":
        return pur.jaccard_purify(g, cfg.purify["jaccard_threshold"])
    if method == "svd":
        return pur.svd_purify(g, cfg.purify["svd_rank"],
                              cfg.purify["svd_binarize"])
    raise ValueError(f"unknown purify method {method!r}")


def _noise_for_beta(cfg, beta):
    return mdl.NoiseConfig(
        beta=beta,
        inject_after_layer=cfg.noise["inject_after_layer"],
        active_at_train=cfg.noise["active_at_train"],
        active_at_inference=cfg.noise["active_at_inference"],
    )


def _model_tag(cfg, beta):
    arch = cfg.model["arch"]
    return arch if beta == 0.0 else f"noisy_{arch}(beta={_fmt(beta)})"


def _operator(cfg, g):
    if cfg.model["arch"] == "gcn":
        return build_operator(g, GCN_NORMALIZED,
                              self_loops=cfg.model["self_loops"])
    return build_operator(g, GIN_AUGMENTED, lam=cfg.model["gin_lambda"])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_gen(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    if cfg.dataset["source"] != "sbm":
        raise ValueError("gen only applies to source = sbm configs")
    spec = SbmSpec(
        n=cfg.dataset["nodes"], classes=cfg.dataset["classes"],
        p_in=cfg.dataset["p_in"], p_out=cfg.dataset["p_out"],
        feature_dim=cfg.dataset["feature_dim"],
        separation=cfg.dataset["separation"],
        train_frac=cfg.dataset["train_frac"],
        val_frac=cfg.dataset["val_frac"],
        test_frac=cfg.dataset["test_frac"],
    )
    rs = RandomSource(seed).child(_STREAM["gen"])
    g = generate_sbm(spec, rs)
    paths = _data_paths(out)
    os.makedirs(paths["dir"], exist_ok=True)
    save_graph(g, paths["edges"], paths["features"], paths["labels"],
               paths["masks"])
    artifacts = [paths[k] for k in ("edges", "features", "labels", "masks")]
    _record_stage(out, cfg, "gen", time.perf_counter() - t0, artifacts)
    return g


def _train_one(cfg, g, beta, repeat, seed):
    rs = RandomSource(seed).child(_STREAM["train"]).child(hash_beta(beta)) \
        .child(repeat)
    noise = _noise_for_beta(cfg, beta)
    tc = mdl.TrainConfig(learning_rate=cfg.train["learning_rate"],
                         epochs=cfg.train["epochs"], seed=seed)
    t0 = time.perf_counter()
    params, history = mdl.train(
        g, arch=cfg.model["arch"], noise=noise, tc=tc,
        hidden_dim=cfg.model["hidden_dim"],
        activation=cfg.model["activation"],
        self_loops=cfg.model["self_loops"], lam=cfg.model["gin_lambda"],
        rs=rs,
    )
    seconds = time.perf_counter() - t0
    best_val = max((h[2] for h in history), default=0.0)
    return params, history, best_val, seconds


def hash_beta(beta):
    """Stable small integer id for a beta value (stream derivation)."""
    return int.from_bytes(hashlib.sha256(repr(float(beta)).encode())
                          .digest()[:4], "big")


def cmd_train(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    g = _apply_purify(cfg, _load_dataset(cfg, out))
    betas = cfg.noise["beta_grid"]
    repeats = cfg.train["repeats"]
    jobs = [(beta, rep) for beta in betas for rep in range(repeats)]

    def run(job):
        beta, rep = job
        return _train_one(cfg, g, beta, rep, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    history_rows = []
    run_times = []
    by_beta = {b: [] for b in betas}
    for (beta, rep), (params, history, best_val, seconds) in zip(jobs, results):
        run_times.append({"beta": beta, "repeat": rep, "seconds": seconds})
        by_beta[beta].append((best_val, rep, params))
        for epoch, loss, val in history:
            history_rows.append([_fmt(beta), rep, epoch, _fmt(loss), _fmt(val)])

    mean_val = {b: float(np.mean([r[0] for r in by_beta[b]])) for b in betas}
    best_beta = max(betas, key=lambda b: (mean_val[b], -betas.index(b)))
    # within the winning beta, keep the repeat with the best validation
    best_val, best_rep, best_params = max(
        by_beta[best_beta], key=lambda r: (r[0], -r[1])
    )

    history_path = os.path.join(out, "history.csv")
    _write_csv(history_path,
               ["beta", "seed", "epoch", "loss", "val_accuracy"],
               history_rows)
    selection_rows = [[_fmt(b), len(by_beta[b]), _fmt(mean_val[b]),
                       int(b == best_beta)] for b in betas]
    selection_path = os.path.join(out, "beta_selection.csv")
    _write_csv(selection_path,
               ["beta", "repeats", "mean_val_accuracy", "selected"],
               selection_rows)
    ckpt_path = os.path.join(out, "checkpoint.json")
    mdl.save_checkpoint(best_params, _noise_for_beta(cfg, best_beta),
                        ckpt_path)
    _record_stage(out, cfg, "train", time.perf_counter() - t0,
                  [history_path, selection_path, ckpt_path],
                  extra={"best_beta": best_beta, "best_repeat": best_rep,
                         "best_val_accuracy": best_val})
    manifest = _load_manifest(out)
    manifest["train_runs"] = run_times
    _save_manifest(out, manifest)


def _parse_attack_spec(text):
    name, _, budget = text.partition(":")
    name = name.strip()
    if not budget:
        raise ValueError(f"attack spec {text!r} needs 'name:budget'")
    return name, float(budget)


def cmd_attack(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    g = _load_dataset(cfg, out)
    params, _ = mdl.load_checkpoint(os.path.join(out, "checkpoint.json"))
    rs = RandomSource(seed).child(_STREAM["attack"])
    attack_dir = os.path.join(out, "attacks")
    os.makedirs(attack_dir, exist_ok=True)
    rows = []
    artifacts = []
    specs = [("structural", s) for s in cfg.attack["structural"]]
    specs += [("feature", s) for s in cfg.attack["feature"]]
    for idx, (kind, spec) in enumerate(specs):
        name, budget = _parse_attack_spec(spec)
        ars = rs.child(idx)
        if kind == "structural":
            if name == "dice":
                res = dice(g, budget, ars)
            elif name == "pgd":
                res = pgd_structure(
                    g, params, budget, ars,
                    steps=cfg.attack["pgd_steps"],
                    step_size=cfg.attack["pgd_step_size"],
                    tries=cfg.attack["pgd_tries"],
                    self_loops=cfg.model["self_loops"],
                )
            else:
                raise ValueError(f"unknown structural attack {name!r}")
            max_flips = int(np.floor(budget * g.num_edges))
        else:
            if name == "gaussian":
                res = gaussian_feature_noise(g, budget, ars)
            elif name == "pgd":
                res = pgd_features(
                    g, params, budget,
                    steps=cfg.attack["feature_pgd_steps"],
                    step_size=cfg.attack["feature_pgd_step_size"],
                    self_loops=cfg.model["self_loops"],
                )
            else:
                raise ValueError(f"unknown feature attack {name!r}")
            max_flips = 0
        tag = f"{name}_{kind}_{_fmt(budget)}"
        adir = os.path.join(attack_dir, tag)
        os.makedirs(adir, exist_ok=True)
        epath = os.path.join(adir, "edges.txt")
        fpath = os.path.join(adir, "features.csv")
        save_graph(res.graph, epath, feature_path=fpath)
        final_loss = res.loss_trajectory[-1] if res.loss_trajectory else float("nan")
        rows.append([name, kind, _fmt(budget), res.flips_used, max_flips,
                     _fmt(res.spectral_distance), _fmt(final_loss), tag])
        artifacts += [epath, fpath]
    report_path = os.path.join(out, "attack_report.csv")
    _write_csv(report_path,
               ["attack", "kind", "budget", "flips_used", "max_flips",
                "spectral_distance", "attack_loss", "tag"],
               rows)
    artifacts.append(report_path)
    _record_stage(out, cfg, "attack", time.perf_counter() - t0, artifacts)


def _eval_accuracy(cfg, g, params, noise, rs):
    """Mean/std test accuracy over eval repeats plus the deterministic
    (noiseless) validation accuracy used for train-time selection."""
    op = _operator(cfg, g)
    logits, _ = mdl.forward(params, op, g.features)
    val_acc = mdl.masked_accuracy(mdl.softmax(logits), g.labels, g.val_mask)
    if noise.active(training=False):
        accs = []
        for rep in range(cfg.eval["repeats"]):
            probs = mdl.predict_distribution(params, op, g.features, noise,
                                             rs.child(rep),
                                             samples=cfg.eval["mc_samples"])
            accs.append(mdl.masked_accuracy(probs, g.labels, g.test_mask))
        return float(np.mean(accs)), float(np.std(accs)), val_acc
    probs = mdl.softmax(logits)
    return mdl.masked_accuracy(probs, g.labels, g.test_mask), 0.0, val_acc


def cmd_eval(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    clean = _load_dataset(cfg, out)
    params, noise = mdl.load_checkpoint(os.path.join(out, "checkpoint.json"))
    rs = RandomSource(seed).child(_STREAM["eval"])
    tag = _model_tag(cfg, noise.beta)
    datasets = [("clean", "none", 0.0, clean)]
    report = os.path.join(out, "attack_report.csv")
    if os.path.exists(report):
        with open(report, "r", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                adir = os.path.join(out, "attacks", row["tag"])
                g = load_graph(os.path.join(adir, "edges.txt"),
                               os.path.join(adir, "features.csv"))
                g = Graph(g.adjacency, g.features, clean.labels,
                          clean.train_mask, clean.val_mask, clean.test_mask)
                datasets.append((row["tag"], row["attack"],
                                 float(row["budget"]), g))
    rows = []
    for idx, (name, attack, budget, g) in enumerate(datasets):
        g = _apply_purify(cfg, g)
        mean, std, val = _eval_accuracy(cfg, g, params, noise, rs.child(idx))
        rows.append([name, attack, _fmt(budget), tag, _fmt(mean), _fmt(std),
                     _fmt(val)])
    eval_path = os.path.join(out, "eval.csv")
    _write_csv(eval_path,
               ["dataset", "attack", "eps", "model", "mean_accuracy",
                "std_accuracy", "val_accuracy"],
               rows)
    _record_stage(out, cfg, "eval", time.perf_counter() - t0, [eval_path])


def cmd_bound(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    g = _load_dataset(cfg, out)
    params, _ = mdl.load_checkpoint(os.path.join(out, "checkpoint.json"))
    rs = RandomSource(seed).child(_STREAM["bound"])
    beta = cfg.bound["beta"]
    arch = params.arch
    norm_cols = ("w1_norm", "w2_norm", "x_norm", "a_norm", "a1_norm")

    def gamma_at(tag, eps):
        return bounds.theoretical_gamma(params, eps, beta, tag,
                                        X=g.features, adjacency=g.adjacency)

    bound_rows = []
    for tag in (f"structural_{arch}", f"feature_{arch}"):
        for eps in cfg.bound["eps_grid"]:
            rep = gamma_at(tag, eps)
            bound_rows.append([tag, _fmt(eps), _fmt(beta)]
                              + [_fmt(getattr(rep, c)) for c in norm_cols]
                              + [_fmt(rep.gamma)])
    bound_path = os.path.join(out, "bound.csv")
    _write_csv(bound_path,
               ["tag", "eps", "beta", *norm_cols, "gamma"],
               bound_rows)

    def risk_row(tag, kind, budget_label, sampler, stream):
        est = bounds.empirical_risk(g, params, sampler, beta,
                                    cfg.bound["samples"], stream, kind=kind,
                                    self_loops=cfg.model["self_loops"])
        eps_max = max((s.eps for s in est.samples), default=0.0)
        violations = sum(s.kl_node_max > gamma_at(tag, s.eps).gamma + 1e-9
                         for s in est.samples)
        return [tag, budget_label, len(est.samples), _fmt(eps_max),
                _fmt(beta), _fmt(est.mean_kl), _fmt(est.max_kl),
                _fmt(est.max_kl_node), _fmt(gamma_at(tag, eps_max).gamma),
                violations]

    risk_rows = []
    for idx, frac in enumerate(cfg.bound["flip_fractions"]):
        b = int(np.floor(frac * g.num_edges))

        def sampler(graph, srs, _b=b):
            return _flip_sampler(graph, srs, _b)

        risk_rows.append(risk_row(f"structural_{arch}", "structural",
                                  _fmt(frac), sampler, rs.child(idx)))
    for idx, xi in enumerate(cfg.bound["feature_scales"]):

        def fsampler(graph, srs, _xi=xi):
            return graph.with_features(
                graph.features + _xi * srs.normal(graph.features.shape))

        risk_rows.append(risk_row(f"feature_{arch}", "feature", _fmt(xi),
                                  fsampler, rs.child(100 + idx)))
    risk_path = os.path.join(out, "risk.csv")
    _write_csv(risk_path,
               ["tag", "budget", "samples", "eps_max", "beta",
                "mean_kl", "max_kl", "max_kl_node", "gamma_at_eps_max",
                "violations"],
               risk_rows)
    _record_stage(out, cfg, "bound", time.perf_counter() - t0,
                  [bound_path, risk_path])


def _flip_sampler(g, rs, b):
    pairs = g.n * (g.n - 1) // 2
    iu, ju = np.triu_indices(g.n, k=1)
    idx = rs.gen.choice(pairs, size=min(b, pairs), replace=False)
    adj = np.array(g.adjacency)
    pi, pj = iu[idx], ju[idx]
    adj[pi, pj] = 1.0 - adj[pi, pj]
    adj[pj, pi] = adj[pi, pj]
    return g.with_adjacency(adj)


def _grid_svg(s_grid, path, cell=40, margin=60):
    """Hand-rolled SVG heatmap: grayscale cells, darker = higher S."""
    ra_max, rd_max = s_grid.shape[0] - 1, s_grid.shape[1] - 1
    width = margin + (rd_max + 1) * cell + 20
    height = margin + (ra_max + 1) * cell + 20
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}">',
        f'<text x="{margin}" y="20" font-size="14">certified accuracy '
        f'S(r_a, r_d)</text>',
    ]
    for ra in range(ra_max + 1):
        for rd in range(rd_max + 1):
            s = float(s_grid[ra, rd])
            shade = int(round(255 * (1.0 - s)))
            x = margin + rd * cell
            y = margin + ra * cell
            lines.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)" stroke="black" '
                f'stroke-width="1"><title>S({ra},{rd})={s:.4f}</title></rect>'
            )
            tcol = "white" if s > 0.5 else "black"
            lines.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" '
                f'font-size="10" text-anchor="middle" fill="{tcol}">'
                f'{s:.2f}</text>'
            )
    for rd in range(rd_max + 1):
        lines.append(f'<text x="{margin + rd * cell + cell / 2}" '
                     f'y="{margin - 8}" font-size="11" '
                     f'text-anchor="middle">r_d={rd}</text>')
    for ra in range(ra_max + 1):
        lines.append(f'<text x="{margin - 30}" '
                     f'y="{margin + ra * cell + cell / 2 + 4}" '
                     f'font-size="11">r_a={ra}</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_certify(cfg, out, seed, threads=1):
    t0 = time.perf_counter()
    g = _load_dataset(cfg, out)
    params, noise = mdl.load_checkpoint(os.path.join(out, "checkpoint.json"))
    rs = RandomSource(seed).child(_STREAM["certify"])
    scfg = SmoothingConfig(
        p_plus=cfg.certify["p_plus"], p_minus=cfg.certify["p_minus"],
        n_selection=cfg.certify["n_selection"],
        n_estimation=cfg.certify["n_estimation"],
        alpha=cfg.certify["alpha"], chunk=cfg.certify["chunk"],
    )
    grid = certified_accuracy_grid(
        g, params, noise, scfg, cfg.certify["r_a_max"],
        cfg.certify["r_d_max"], rs, self_loops=cfg.model["self_loops"],
    )
    grid_rows = [[ra, rd, _fmt(grid.s_grid[ra, rd])]
                 for ra in range(grid.r_a_max + 1)
                 for rd in range(grid.r_d_max + 1)]
    grid_path = os.path.join(out, "certify_grid.csv")
    _write_csv(grid_path, ["r_a", "r_d", "certified_accuracy"], grid_rows)
    node_rows = [[int(v), int(grid.pred_class[i]), _fmt(grid.p_lower[i]),
                  int(grid.abstain[i]), int(grid.correct[i])]
                 for i, v in enumerate(grid.nodes)]
    nodes_path = os.path.join(out, "certify_nodes.csv")
    _write_csv(nodes_path,
               ["node", "pred_class", "p_lower", "abstain", "correct"],
               node_rows)
    svg_path = os.path.join(out, "certify_grid.svg")
    _grid_svg(grid.s_grid, svg_path)
    _record_stage(out, cfg, "certify", time.perf_counter() - t0,
                  [grid_path, nodes_path, svg_path])


def cmd_report(cfg, out, seed=None, threads=1):
    manifest = _load_manifest(out)
    lines = ["run report", "=" * 10,
             f"config hash: {manifest.get('config_hash', 'MISSING')}"]
    versions = manifest.get("versions", {})
    if versions:
        lines.append("versions: " + ", ".join(
            f"{k}={v}" for k, v in sorted(versions.items())))
    for stage in ("gen", "train", "attack", "eval", "bound", "certify"):
        info = manifest.get("stages", {}).get(stage)
        if info is None:
            lines.append(f"{stage}: MISSING (stage not run)")
            continue
        lines.append(f"{stage}: {info['seconds']:.3f}s, "
                     f"{len(info['artifacts'])} artifact(s)")
        for a in info["artifacts"]:
            lines.append(f"  - {a}")
    runs = manifest.get("train_runs", [])
    if runs:
        lines.append("train runs:")
        for r in runs:
            lines.append(f"  beta={r['beta']} repeat={r['repeat']} "
                         f"{r['seconds']:.3f}s")
    text = "\n".join(lines) + "\n"
    path = os.path.join(out, "report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "bound": cmd_bound,
    "certify": cmd_certify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphnoise",
        description="noise-injected GNN defense: train, attack, bound, certify",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None,
                        help="INI config file (defaults baked in)")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default="runs/default",
                        help="run directory for all artifacts")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args.out, args.seed,
                               threads=max(1, args.threads))
    except Exception as exc:  # single diagnostic line on stderr, nonzero exit
        sys.stderr.write(f"graphnoise {args.command}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
