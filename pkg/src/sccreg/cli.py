"""Command-line front end: simulate, fit, evaluate.

Each subcommand takes --config <json>, --out <dir>, --seed <u64>, --threads <n>.
Relative paths inside a config resolve against the config file's directory.
Exit codes: 0 success, 2 input or schema error, 3 numerical failure (with a
diagnostics.json in the output directory).
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, simulate, summary
from .composition import build_design
from .errors import InputError, NumericalError, SchemaError
from .graph import SpatialGraph
from .sampler import ChainTrace, ClusterState, default_config, run_chain
from .simulate import derive_seed

DEFAULT_LAMBDA_GRID = tuple(i * 0.5 for i in range(11))
# iterations, burn-in per named profile; "default" is the simulation-study protocol
PROFILES = {"default": (1500, 500), "application": (1000, 500)}

_FIT_KEYS = {
    "data", "adjacency", "d_max", "lambda_grid", "profile", "iterations",
    "burn_in", "seed", "gamma", "zeta", "a0", "b0", "v0_scale",
    "zero_pseudocount", "strict_eta_update",
}
_SIMULATE_KEYS = {"setting", "partition", "replicates", "noise_sd", "seed"}
_EVALUATE_KEYS = {"truth", "fits"}


def _check_keys(cfg, allowed, path):
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise SchemaError(f"unknown config keys: {', '.join(unknown)}", path=path)


def _as_int(value, key, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{key} must be an integer, got {value!r}", path=path)
    if lo is not None and value < lo:
        raise SchemaError(f"{key} must be >= {lo}, got {value}", path=path)
    if hi is not None and value > hi:
        raise SchemaError(f"{key} must be <= {hi}, got {value}", path=path)
    return value


def _as_float(value, key, path, *, positive=False, nonnegative=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{key} must be a number, got {value!r}", path=path)
    value = float(value)
    if not np.isfinite(value):
        raise SchemaError(f"{key} must be finite, got {value}", path=path)
    if positive and not value > 0:
        raise SchemaError(f"{key} must be > 0, got {value}", path=path)
    if nonnegative and value < 0:
        raise SchemaError(f"{key} must be >= 0, got {value}", path=path)
    return value


def _as_str(value, key, path, choices=None):
    if not isinstance(value, str):
        raise SchemaError(f"{key} must be a string, got {value!r}", path=path)
    if choices is not None and value not in choices:
        raise SchemaError(
            f"{key} must be one of {', '.join(sorted(choices))}; got {value!r}", path=path
        )
    return value


def _as_bool(value, key, path):
    if not isinstance(value, bool):
        raise SchemaError(f"{key} must be true or false, got {value!r}", path=path)
    return value


def _load_config(config_path):
    cfg = io.read_json(config_path)
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object", path=str(config_path))
    return cfg


def _resolve_seed(cfg, path, override):
    if override is not None:
        return _as_int(override, "--seed", path, lo=0, hi=2**64 - 1)
    if "seed" not in cfg:
        raise SchemaError("seed required (config key 'seed' or --seed)", path=path)
    return _as_int(cfg["seed"], "seed", path, lo=0, hi=2**64 - 1)


def _resolve_path(base, value):
    p = Path(value)
    return p if p.is_absolute() else base / p


def resolve_fit_config(cfg, path, seed_override=None):
    """Validate a fit config and fill every default in; returns a plain dict."""
    _check_keys(cfg, _FIT_KEYS, path)
    if "data" not in cfg or "adjacency" not in cfg:
        missing = [k for k in ("data", "adjacency") if k not in cfg]
        raise SchemaError(f"missing required keys: {', '.join(missing)}", path=path)
    profile = _as_str(cfg.get("profile", "default"), "profile", path, choices=set(PROFILES))
    iterations, burn_in = PROFILES[profile]
    if "iterations" in cfg:
        iterations = _as_int(cfg["iterations"], "iterations", path, lo=1)
    if "burn_in" in cfg:
        burn_in = _as_int(cfg["burn_in"], "burn_in", path, lo=0)
    if burn_in >= iterations:
        raise SchemaError(
            f"burn_in must be < iterations, got {burn_in} >= {iterations}", path=path
        )
    grid = cfg.get("lambda_grid", list(DEFAULT_LAMBDA_GRID))
    if not isinstance(grid, list) or not grid:
        raise SchemaError("lambda_grid must be a nonempty array", path=path)
    lambdas = [_as_float(v, "lambda_grid entry", path, nonnegative=True) for v in grid]
    for a, b in zip(lambdas, lambdas[1:]):
        if not a < b:
            raise SchemaError(
                f"lambda_grid must be strictly increasing, got {a} before {b}", path=path
            )
    return {
        "data": _as_str(cfg["data"], "data", path),
        "adjacency": _as_str(cfg["adjacency"], "adjacency", path),
        "d_max": _as_int(cfg.get("d_max", 1), "d_max", path, lo=1),
        "lambda_grid": lambdas,
        "profile": profile,
        "iterations": iterations,
        "burn_in": burn_in,
        "seed": _resolve_seed(cfg, path, seed_override),
        "gamma": _as_float(cfg.get("gamma", 1.0), "gamma", path, positive=True),
        "zeta": _as_float(cfg.get("zeta", 1.0), "zeta", path, positive=True),
        "a0": _as_float(cfg.get("a0", 0.01), "a0", path, positive=True),
        "b0": _as_float(cfg.get("b0", 0.01), "b0", path, positive=True),
        "v0_scale": _as_float(cfg.get("v0_scale", 100.0), "v0_scale", path, positive=True),
        "zero_pseudocount": _as_float(
            cfg.get("zero_pseudocount", 1e-5), "zero_pseudocount", path, positive=True
        ),
        "strict_eta_update": _as_bool(
            cfg.get("strict_eta_update", False), "strict_eta_update", path
        ),
    }


def _load_fit_inputs(resolved, base):
    dataset = io.read_dataset_csv(_resolve_path(base, resolved["data"]))
    edges = io.read_edge_csv(_resolve_path(base, resolved["adjacency"]))
    graph = SpatialGraph.from_edge_list(edges, dataset.ids)
    if resolved["d_max"] > 1:
        graph = graph.expand_neighbors(resolved["d_max"])
    design, projection = build_design(
        dataset, zero_pseudocount=resolved["zero_pseudocount"]
    )
    return dataset, design, graph, projection


def _chain_config(design, resolved, lam, chain_seed):
    return default_config(
        design,
        lam=lam,
        seed=chain_seed,
        iterations=resolved["iterations"],
        burn_in=resolved["burn_in"],
        gamma=resolved["gamma"],
        zeta=resolved["zeta"],
        a0=resolved["a0"],
        b0=resolved["b0"],
        v0_scale=resolved["v0_scale"],
        zero_pseudocount=resolved["zero_pseudocount"],
        strict_eta_update=resolved["strict_eta_update"],
    )


def _write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (iteration, state), ll in zip(trace.snapshots, trace.loglik):
            record = {
                "iteration": iteration,
                "z": state.z,
                "beta": state.betas,
                "sigma2": state.sigma2s,
                "eta": state.eta,
                "loglik": ll,
            }
            fh.write(io.dumps(record, indent=None))
            fh.write("\n")


def _read_trace(path, cfg):
    snapshots = []
    rows = []
    path = str(path)
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", path=path) from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from None
            state = ClusterState(
                z=np.array(record["z"], dtype=np.int64),
                betas=np.array(record["beta"], dtype=float),
                sigma2s=np.array(record["sigma2"], dtype=float),
                eta=np.array(record["eta"], dtype=float),
                k_star=len(record["sigma2"]),
            )
            snapshots.append((int(record["iteration"]), state))
            rows.append(np.array(record["loglik"], dtype=float))
    if not snapshots:
        raise SchemaError("trace has no records", path=path)
    return ChainTrace(snapshots=tuple(snapshots), config=cfg, loglik=np.array(rows))


def _lambda_dir(chains_dir, index):
    return Path(chains_dir) / f"lambda_{index:02d}"


def _run_one_lambda(payload):
    """Run one chain of the grid and persist its trace; returns (index, LPML).

    Module-level and fed a picklable payload so a process pool can run it;
    every chain derives its own seed, so scheduling cannot change results.
    """
    index, lam, design, graph, resolved, chain_seed, chains_dir = payload
    cfg = _chain_config(design, resolved, lam, chain_seed)
    trace = run_chain(design, graph, cfg)
    value = summary.lpml(trace)
    lam_dir = _lambda_dir(chains_dir, index)
    lam_dir.mkdir(parents=True, exist_ok=True)
    _write_trace(lam_dir / "trace.ndjson", trace)
    io.write_json(
        lam_dir / "chain.json",
        {
            "lambda": lam,
            "seed": chain_seed,
            "lpml": value,
            "iterations": cfg.iterations,
            "burn_in": cfg.burn_in,
            "draws": trace.n_draws,
        },
    )
    return index, value


def fit_over_grid(design, graph, resolved, out_dir, threads=1):
    """One chain per grid value; returns (per-lambda LPML list, selected index)."""
    lambdas = resolved["lambda_grid"]
    chains_dir = str(Path(out_dir) / "chains")
    payloads = [
        (i, lam, design, graph, resolved, int(derive_seed(resolved["seed"], i)), chains_dir)
        for i, lam in enumerate(lambdas)
    ]
    results = {}
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for index, value in pool.map(_run_one_lambda, payloads):
                results[index] = value
    else:
        for payload in payloads:
            index, value = _run_one_lambda(payload)
            results[index] = value
    lpmls = [results[i] for i in range(len(lambdas))]
    best = 0
    for i in range(1, len(lambdas)):
        if lpmls[i] > lpmls[best]:  # ties stay with the smaller lambda
            best = i
    return lpmls, best


def cmd_fit(args):
    config_path = Path(args.config)
    resolved = resolve_fit_config(_load_config(config_path), str(config_path), args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, design, graph, projection = _load_fit_inputs(resolved, config_path.parent)
    io.write_json(out_dir / "resolved_config.json", resolved)
    lpmls, best = fit_over_grid(design, graph, resolved, out_dir, args.threads)
    lambdas = resolved["lambda_grid"]
    io.write_json(
        out_dir / "report.json",
        {
            "lambda_grid": lambdas,
            "lpml": lpmls,
            "selected_index": best,
            "selected_lambda": lambdas[best],
        },
    )
    best_cfg = _chain_config(
        design, resolved, lambdas[best], int(derive_seed(resolved["seed"], best))
    )
    trace = _read_trace(
        _lambda_dir(out_dir / "chains", best) / "trace.ndjson", best_cfg
    )
    post = summary.summarize(trace, projection)
    eta_draws = np.stack([state.eta for _, state in trace.snapshots])
    sig_draws = np.stack(
        [state.sigma2s[state.z - 1] for _, state in trace.snapshots]
    )
    eta_q = np.quantile(eta_draws, [0.025, 0.975], axis=0)
    sig_q = np.quantile(sig_draws, [0.025, 0.975], axis=0)
    io.write_json(
        out_dir / "summary.json",
        {
            "ids": list(dataset.ids),
            "selected_lambda": lambdas[best],
            "selected_index": best,
            "lpml": post.lpml,
            "m_best": post.m_best,
            "iteration": trace.snapshots[post.m_best][0],
            "k_hat": post.k_hat,
            "z_hat": post.z_hat,
            "beta_tilde_hat": post.beta_tilde_hat,
            "sigma2_hat": post.sigma2_hat,
            "eta_hat": post.eta_hat,
            "eta_mean": eta_draws.mean(axis=0),
            "eta_q025": eta_q[0],
            "eta_q975": eta_q[1],
            "sigma2_location_mean": sig_draws.mean(axis=0),
            "sigma2_location_q025": sig_q[0],
            "sigma2_location_q975": sig_q[1],
        },
    )
    return 0


def cmd_simulate(args):
    config_path = Path(args.config)
    cfg = _load_config(config_path)
    path = str(config_path)
    _check_keys(cfg, _SIMULATE_KEYS, path)
    if "setting" not in cfg:
        raise SchemaError("missing required key 'setting'", path=path)
    setting = _as_int(cfg["setting"], "setting", path, lo=1, hi=2)
    partition = _as_str(
        cfg.get("partition", "disjoint"), "partition", path,
        choices={"disjoint", "contiguous"},
    )
    replicates = _as_int(cfg.get("replicates", 20), "replicates", path, lo=1)
    noise_sd = _as_float(cfg.get("noise_sd", 1.0), "noise_sd", path, nonnegative=True)
    seed = _resolve_seed(cfg, path, args.seed)
    builder = simulate.setting_one if setting == 1 else simulate.setting_two
    design = builder(partition=partition, replicates=replicates, seed=seed)
    if noise_sd != design.noise_sd:
        design = replace(design, noise_sd=noise_sd)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(
        out_dir / "resolved_config.json",
        {
            "setting": setting,
            "partition": partition,
            "replicates": replicates,
            "noise_sd": noise_sd,
            "seed": seed,
        },
    )
    io.write_edge_csv(out_dir / "adjacency.csv", simulate.us_state_graph())
    io.write_partition_csv(out_dir / "partition_true.csv", design.ids, design.partition)
    io.write_json(
        out_dir / "truth.json",
        {
            "ids": list(design.ids),
            "z_true": design.partition,
            "k_true": design.n_clusters,
            "beta_tilde": design.beta_tilde,
            "eta": design.eta,
            "dirichlet_alpha": design.dirichlet_alpha,
            "x2_low": design.x2_low,
            "x2_high": design.x2_high,
            "noise_sd": design.noise_sd,
            "setting": setting,
            "partition": partition,
            "replicates": replicates,
            "seed": seed,
        },
    )
    for r in range(replicates):
        dataset, _ = simulate.generate_dataset(design, r)
        rep_dir = out_dir / f"rep_{r:03d}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        io.write_dataset_csv(rep_dir / "data.csv", dataset)
    return 0


def _rep_dirs(root):
    return sorted(p.name for p in Path(root).iterdir() if p.is_dir() and p.name.startswith("rep_"))


def _coefficient_metrics(estimates, truth_values):
    """MAB / MSD / MMSE per coefficient; spread is null with one replicate."""
    est = np.asarray(estimates, dtype=float)
    if est.shape[0] >= 2:
        return summary.estimation_metrics(est, truth_values)
    tru = np.asarray(truth_values, dtype=float)
    if est.ndim == 2:
        est = est[:, None, :]
        tru = tru[None, :]
    err = est - tru[None, :, :]
    return {
        "mab": np.abs(err).mean(axis=(0, 1)),
        "msd": None,
        "mmse": (err**2).mean(axis=(0, 1)),
    }


def cmd_evaluate(args):
    config_path = Path(args.config)
    cfg = _load_config(config_path)
    path = str(config_path)
    _check_keys(cfg, _EVALUATE_KEYS, path)
    missing = [k for k in ("truth", "fits") if k not in cfg]
    if missing:
        raise SchemaError(f"missing required keys: {', '.join(missing)}", path=path)
    truth_dir = _resolve_path(config_path.parent, _as_str(cfg["truth"], "truth", path))
    fits_dir = _resolve_path(config_path.parent, _as_str(cfg["fits"], "fits", path))
    for d in (truth_dir, fits_dir):
        if not d.is_dir():
            raise InputError(f"not a directory: {d}")
    truth = io.read_json(truth_dir / "truth.json")
    ids = list(truth["ids"])
    z_true = np.asarray(truth["z_true"], dtype=np.int64)
    beta_true = np.asarray(truth["beta_tilde"], dtype=float)
    eta_true = np.asarray(truth["eta"], dtype=float)
    truth_reps = _rep_dirs(truth_dir)
    fit_reps = _rep_dirs(fits_dir)
    if not truth_reps:
        raise InputError(f"no replicate directories under {truth_dir}")
    if truth_reps != fit_reps:
        missing = sorted(set(truth_reps) - set(fit_reps))
        extra = sorted(set(fit_reps) - set(truth_reps))
        raise InputError(
            "replicate sets differ between truth and fits"
            + (f"; missing from fits: {', '.join(missing)}" if missing else "")
            + (f"; extra in fits: {', '.join(extra)}" if extra else "")
        )
    rows = []
    beta_stack = []
    eta_stack = []
    for name in truth_reps:
        s = io.read_json(fits_dir / name / "summary.json")
        if list(s["ids"]) != ids:
            bad = next(
                (a, b) for a, b in zip(s["ids"], ids) if a != b
            ) if len(s["ids"]) == len(ids) else (len(s["ids"]), len(ids))
            raise InputError(f"{name}: fit ids do not match truth ids ({bad[0]!r} vs {bad[1]!r})")
        z_hat = np.asarray(s["z_hat"], dtype=np.int64)
        rows.append(
            (
                name,
                summary.rand_index(z_true, z_hat),
                int(s["k_hat"]),
                float(s["selected_lambda"]),
                float(s["lpml"]),
            )
        )
        beta_stack.append(np.asarray(s["beta_tilde_hat"], dtype=float)[z_hat - 1])
        eta_stack.append(np.asarray(s["eta_hat"], dtype=float))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "per_replicate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "rand_index", "k_hat", "selected_lambda", "lpml"])
        for name, ri, k_hat, lam, lp in rows:
            writer.writerow(
                [name, io.format_float(ri), k_hat, io.format_float(lam), io.format_float(lp)]
            )
    ris = np.array([r[1] for r in rows])
    k_hats = [r[2] for r in rows]
    hist = [[k, k_hats.count(k)] for k in sorted(set(k_hats))]
    mode = max(hist, key=lambda pair: (pair[1], -pair[0]))[0]
    io.write_json(
        out_dir / "metrics.json",
        {
            "replicates": len(rows),
            "rand_index_median": float(np.median(ris)),
            "rand_index_mean": float(ris.mean()),
            "k_hat_mode": mode,
            "k_hat_histogram": hist,
            "beta_tilde": _coefficient_metrics(np.stack(beta_stack), beta_true[z_true - 1]),
            "eta": _coefficient_metrics(np.stack(eta_stack), eta_true),
        },
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sccreg",
        description=(
            "Bayesian log-contrast regression with spatially clustered "
            "coefficients: simulate benchmark data, fit over a smoothing grid, "
            "evaluate recovery."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("simulate", cmd_simulate, "generate replicate datasets and their ground truth"),
        ("fit", cmd_fit, "fit one chain per smoothing value and summarize the best"),
        ("evaluate", cmd_evaluate, "score fitted summaries against simulation truth"),
    )
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for chains")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise InputError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except (SchemaError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        io.write_json(
            out_dir / "diagnostics.json",
            {"error": str(exc), "type": type(exc).__name__, "command": args.command},
        )
        print(
            f"numerical failure: {exc} (see {out_dir / 'diagnostics.json'})",
            file=sys.stderr,
        )
        return 3


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
