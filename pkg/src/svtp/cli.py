"""Command-line interface: train, compare, fisher-verify, predict.

Every run writes its fully resolved configuration next to its outputs so
the run can be reproduced from that file alone.  Metric traces are plain
CSV; no plotting happens in-process.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from svtp import fisher
from svtp.data_io import load_csv, split_standardize, synthetic_t_regression
from svtp.optim import MODES, AdamConfig, SNGDConfig, init_state, train
from svtp.stdist import DiagStudentT

__all__ = ["main", "cmd_train", "cmd_compare", "cmd_fisher_verify", "cmd_predict"]

FLUSH_EVERY = 50

DEFAULTS = {
    "dataset": "synthetic",
    "target": None,
    "has_header": True,
    "train_frac": 0.8,
    "synthetic_n": 2000,
    "synthetic_d": 2,
    "synthetic_noise_df": 3.0,
    "synthetic_noise_scale": 0.2,
    "mode": "sngd",
    "iters": 300,
    "batch": 256,
    "lr": 0.01,
    "n_mc": 8,
    "n_inducing": 32,
    "nu_tilde_init": 5.0,
    "prior_nu": 5.0,
    "seed": 0,
    "n_seeds": 5,
    "eval_every": 10,
    "out": "runs/out",
    "paper_literal": False,
    "oracle_samples": 1_000_000,
}


def resolve_config(args) -> dict:
    """Merge defaults, a config file, and explicit flags (flags win)."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _load_dataset(cfg):
    if cfg["dataset"] == "synthetic":
        raw = synthetic_t_regression(
            cfg["synthetic_n"],
            cfg["synthetic_d"],
            cfg["synthetic_noise_df"],
            cfg["synthetic_noise_scale"],
            cfg["seed"],
        )
    else:
        if cfg["target"] is None:
            raise ValueError("--target is required for CSV datasets")
        raw = load_csv(cfg["dataset"], cfg["target"], cfg["has_header"])
    return split_standardize(raw, cfg["train_frac"], cfg["seed"])


def _write_records(path: Path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "wall_time_s", "neg_elbo", "test_mse"])
        for i, r in enumerate(records):
            writer.writerow(
                [r.iter, f"{r.wall_time_s:.6f}", repr(r.neg_elbo), "" if r.test_mse is None else repr(r.test_mse)]
            )
            if (i + 1) % FLUSH_EVERY == 0:
                fh.flush()


def _save_model(path: Path, state):
    p = state.params_numpy()
    np.savez(
        path,
        prior_nu=np.asarray(state.prior_nu),
        **p,
    )


def _run_one(cfg, mode, seed, out_dir: Path, train_data, test_data, trace_name):
    sngd_cfg = SNGDConfig(
        step_size=cfg["lr"],
        batch_size=cfg["batch"],
        n_mc=cfg["n_mc"],
        max_iters=cfg["iters"],
        seed=seed,
        eval_every=cfg["eval_every"],
    )
    adam_cfg = AdamConfig(step_size=cfg["lr"])
    state0 = init_state(
        train_data, cfg["n_inducing"], seed, nu_tilde=cfg["nu_tilde_init"], prior_nu=cfg["prior_nu"]
    )
    state, records = train(state0, train_data, sngd_cfg, adam_cfg, mode, test_data=test_data)
    _write_records(out_dir / trace_name, records)
    return state, records


def cmd_train(cfg) -> int:
    out = Path(cfg["out"])
    try:
        train_data, test_data = _load_dataset(cfg)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    try:
        state, records = _run_one(cfg, cfg["mode"], cfg["seed"], out, train_data, test_data, "metrics.csv")
    except Exception as exc:  # numerical failure: flush what we have
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 1
    _save_model(out / "final_model.npz", state)
    final = records[-1] if records else None
    summary = {
        "config": cfg,
        "final_neg_elbo": final.neg_elbo if final else None,
        "final_test_mse": final.test_mse if final else None,
        "iterations": len(records),
    }
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {out / 'metrics.csv'} ({len(records)} rows)")
    return 0


def cmd_compare(cfg) -> int:
    out = Path(cfg["out"])
    try:
        train_data, test_data = _load_dataset(cfg)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    seeds = [cfg["seed"] + k for k in range(cfg["n_seeds"])]
    finals = {mode: {"neg_elbo": [], "test_mse": []} for mode in MODES}
    for mode in MODES:
        for seed in seeds:
            trace = f"metrics_{mode}_{seed}.csv"
            _, records = _run_one(cfg, mode, seed, out, train_data, test_data, trace)
            finals[mode]["neg_elbo"].append(records[-1].neg_elbo)
            finals[mode]["test_mse"].append(records[-1].test_mse)
            print(f"{mode} seed={seed}: final neg_elbo={records[-1].neg_elbo:.4f}")
    summary = {
        mode: {
            "median_final_neg_elbo": float(np.median(vals["neg_elbo"])),
            "median_final_test_mse": float(np.median([v for v in vals["test_mse"] if v is not None])),
        }
        for mode, vals in finals.items()
    }
    (out / "summary.json").write_text(json.dumps({"config": cfg, "modes": summary}, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def fisher_verify_grid(mode: str, n_samples: int, seed: int = 0):
    """Sweep the reconciliation grid; one report entry per block per point."""
    entries = []
    rng = np.random.default_rng(seed)
    for M in (1, 2, 5):
        for nu in (3.0, 5.0, 10.0, 100.0):
            sigma = rng.uniform(0.1, 10.0, M)
            q = DiagStudentT(nu_tilde=nu, m=np.zeros(M), sigma=sigma)
            F_mc, se = fisher.mc_fisher_oracle(q, n_samples, seed=int(rng.integers(2**62)))
            blocks = {
                "F_m": (np.diag(fisher.fm_closed_form(nu, M, sigma, mode)), F_mc[:M, :M], se[:M, :M]),
                "F_nu": (
                    np.asarray([[fisher.fnu_closed_form(nu, M, mode)]]),
                    F_mc[M : M + 1, M : M + 1],
                    se[M : M + 1, M : M + 1],
                ),
                "F_nu_s": (
                    fisher.fnus_closed_form(nu, M, sigma, mode)[None, :],
                    F_mc[M : M + 1, M + 1 :],
                    se[M : M + 1, M + 1 :],
                ),
                "F_s": (fisher.fs_closed_form(nu, M, sigma, mode), F_mc[M + 1 :, M + 1 :], se[M + 1 :, M + 1 :]),
            }
            for name, (cf, mc, err) in blocks.items():
                tol = np.maximum(4.0 * err, 0.02 * np.abs(mc))
                ok = bool(np.all(np.abs(cf - mc) <= tol))
                entries.append(
                    {
                        "M": M,
                        "nu_tilde": nu,
                        "sigma": sigma.tolist(),
                        "block": name,
                        "closed_form": np.asarray(cf).tolist(),
                        "oracle": np.asarray(mc).tolist(),
                        "stderr": np.asarray(err).tolist(),
                        "max_abs_gap": float(np.max(np.abs(cf - mc))),
                        "pass": ok,
                    }
                )
    return entries


def cmd_fisher_verify(cfg) -> int:
    mode = fisher.PAPER_LITERAL if cfg["paper_literal"] else fisher.RECONCILED
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    entries = fisher_verify_grid(mode, cfg["oracle_samples"], cfg["seed"])
    n_fail = sum(not e["pass"] for e in entries)
    for e in entries:
        status = "PASS" if e["pass"] else "FAIL"
        print(
            f"{status}  M={e['M']:<2d} nu={e['nu_tilde']:<6g} {e['block']:<7s} "
            f"max|closed-oracle|={e['max_abs_gap']:.3e}"
        )
    report = {"mode": mode, "n_samples": cfg["oracle_samples"], "n_fail": n_fail, "entries": entries}
    (out / "fisher_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"{len(entries) - n_fail}/{len(entries)} blocks pass ({mode})")
    if mode == fisher.RECONCILED and n_fail:
        return 1
    return 0


def cmd_predict(cfg, model_path: str, input_path: str, output_path: str) -> int:
    try:
        data = np.load(model_path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    import torch

    from svtp.kernel import KernelParams
    from svtp.model import SVTPState, predict

    state = SVTPState(
        Z=torch.as_tensor(data["Z"]),
        q=DiagStudentT(nu_tilde=float(data["nu_tilde"]), m=data["m"], sigma=data["sigma"]),
        prior_nu=float(data["prior_nu"]),
        kernel=KernelParams(float(data["log_lengthscale"]), float(data["log_signal_sd"])),
        log_noise_sd=float(data["log_noise_sd"]),
    )
    X = np.loadtxt(input_path, delimiter=",", ndmin=2)
    mean, var = predict(state, X, max(cfg["n_mc"], 64), cfg["seed"])
    with open(output_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean", "variance"])
        for mu, v in zip(mean, var):
            writer.writerow([repr(float(mu)), repr(float(v))])
    print(f"wrote {output_path} ({len(mean)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svtp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--dataset", help="CSV path or 'synthetic'")
        p.add_argument("--target", help="target column for CSV datasets")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--iters", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--n-mc", dest="n_mc", type=int)
        p.add_argument("--n-inducing", dest="n_inducing", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="train one model and write metrics.csv")
    add_common(p_train)

    p_cmp = sub.add_parser("compare", help="run all optimizer modes over several seeds")
    add_common(p_cmp)
    p_cmp.add_argument("--n-seeds", dest="n_seeds", type=int)

    p_fv = sub.add_parser("fisher-verify", help="closed-form vs Monte-Carlo Fisher report")
    p_fv.add_argument("--config", help="JSON config file")
    p_fv.add_argument("--paper-literal", dest="paper_literal", action="store_true", default=None)
    p_fv.add_argument("--oracle-samples", dest="oracle_samples", type=int)
    p_fv.add_argument("--seed", type=int)
    p_fv.add_argument("--out", help="output directory")

    p_pred = sub.add_parser("predict", help="predict with a saved model")
    p_pred.add_argument("--config", help="JSON config file")
    p_pred.add_argument("--model", required=True, help="final_model.npz path")
    p_pred.add_argument("--inputs", required=True, help="CSV of feature rows (no header)")
    p_pred.add_argument("--output", required=True, help="where to write predictions CSV")
    p_pred.add_argument("--n-mc", dest="n_mc", type=int)
    p_pred.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "compare":
        return cmd_compare(cfg)
    if args.command == "fisher-verify":
        return cmd_fisher_verify(cfg)
    if args.command == "predict":
        return cmd_predict(cfg, args.model, args.inputs, args.output)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
