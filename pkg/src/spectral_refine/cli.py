"""``spectral-refine`` command line."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .datagen import DatasetSpec, IcSpec, generate_dataset, initial_vorticity, taylor_green, velocity_from_vorticity
from .grid import SpectralField, make_grid
from .io import RunConfig, load_config, read_sfc1, write_csv, write_sfc1
from .model import StfnoConfig, StfnoModel, load_checkpoint, save_checkpoint
from .norms import energy_spectrum, enstrophy_spectrum
from .timestepping import SolverConfig, SolverState, advance
from .train import FinetuneConfig, evaluate, evaluate_corrected, evaluate_model, finetune, train

log = logging.getLogger("spectral_refine")


class UsageError(Exception):
    pass


def _solver(rc: RunConfig) -> SolverConfig:
    s = rc["solver"]
    return SolverConfig(scheme=s["scheme"], dt=s["dt"], nu=s["nu"], drag=s["drag"])


def _ic(rc: RunConfig, seed: int | None) -> IcSpec:
    c = rc["ic"]
    return IcSpec(kind=c["kind"], seed=c["seed"] if seed is None else seed, kappa=c["kappa"], alpha=c["alpha"],
                  tau=c["tau"], k0=c["k0"], normalize_energy=c["energy"])


def _dataset(rc: RunConfig) -> DatasetSpec:
    g, d = rc["grid"], rc["data"]
    return DatasetSpec(n_train=d["n_train"], n_test=d["n_test"], n_gen=g["n_gen"] or g["n"], n=g["n"], L=g["L"],
                       burn_in=d["burn_in"], ell=d["ell"], n_t=d["n_t"], snapshot_dt=d["snapshot_dt"],
                       formulation=rc["solver"]["formulation"])


def _model_cfg(rc: RunConfig, seed: int | None) -> StfnoConfig:
    m, g = rc["model"], rc["grid"]
    return StfnoConfig(layers=m["layers"], width=m["width"], d_t=m["d_t"], tau_max=m["tau_max"], k_max=m["k_max"],
                       t_pad=m["t_pad"], helmholtz=m["helmholtz"], activation=m["activation"],
                       layer_norm=m["layer_norm"], formulation=rc["solver"]["formulation"], n=g["n"], L=g["L"],
                       seed=m["seed"] if seed is None else seed)


def _finetune_cfg(rc: RunConfig, args) -> FinetuneConfig:
    f = dict(rc["finetune"])
    for key in ("mode", "iters", "lr", "tol", "loss"):
        val = getattr(args, key, None)
        if val is not None:
            f[key] = val
    return FinetuneConfig(iters=f["iters"], lr=f["lr"], gamma=f["gamma"], loss=f["loss"], alpha=f["alpha"],
                          mode=f["mode"], tol=f["tol"], iter_max=f["iter_max"], dt=f["dt"],
                          collocation=f["collocation"], train_reduction=f["train_reduction"],
                          schedule=f["schedule"], betas=(f["beta1"], f["beta2"]))


def _load(spec: str) -> np.ndarray:
    """``path.sfc1:name``; the name may be omitted for single-array files."""
    path, _, name = spec.partition(":")
    arrays = read_sfc1(path)
    if not name:
        if len(arrays) != 1:
            raise UsageError(f"{path} holds {sorted(arrays)}; pick one with {path}:NAME")
        return next(iter(arrays.values()))
    if name not in arrays:
        raise UsageError(f"{path} has no array {name!r}; available: {sorted(arrays)}")
    return arrays[name]


def _write_metrics(path: Path, rows: list[dict[str, float]]) -> None:
    keys = list(rows[0])
    write_csv(path, ["index", *keys], [[i, *(r[k] for k in keys)] for i, r in enumerate(rows)])


# ------------------------------------------------------------------ subcommands


def cmd_generate(args, rc: RunConfig, out: Path) -> None:
    generate_dataset(_dataset(rc), _ic(rc, args.seed), _solver(rc), out)
    (out / "config.txt").write_text(rc.to_text())


def cmd_solve(args, rc: RunConfig, out: Path) -> None:
    """Integrate one initial condition; Taylor-Green runs also store the exact solution."""
    g = make_grid(rc["grid"]["n"], rc["grid"]["L"])
    solver = _solver(rc)
    ic = _ic(rc, args.seed)
    vec = rc["solver"]["formulation"] == "vp"
    if args.input:
        phys = _load(args.input)
        field = SpectralField(np.fft.fft2(phys), make_grid(phys.shape[-1], rc["grid"]["L"]), vec)
    else:
        field = initial_vorticity(ic, g, args.index, solver.nu)
        field = velocity_from_vorticity(field) if vec else field
    traj = advance(SolverState(0.0, field), solver, rc["solver"]["t_end"], rc["solver"]["record_every"])
    arrays = {"t": traj.times, "field": np.stack([f.physical() for f in traj.snapshots])}
    if ic.kind == "taylor_green" and not args.input:
        # convection vanishes on a single Taylor-Green mode, so any rescaled copy stays exact
        pair = [taylor_green(ic.kappa + args.index, solver.nu, float(t), field.grid) for t in traj.times]
        exact = np.stack([(p[0] if vec else p[1]).physical() for p in pair])
        scale = float(np.linalg.norm(arrays["field"][0]) / np.linalg.norm(exact[0]))
        arrays["exact"] = exact * scale
    write_sfc1(out / "trajectory.sfc1", arrays)


def cmd_train(args, rc: RunConfig, out: Path) -> None:
    data = read_sfc1(Path(args.data) / "train.sfc1")
    t = rc["train"]
    model = load_checkpoint(args.checkpoint) if args.checkpoint else StfnoModel(_model_cfg(rc, args.seed))
    res = train(model, data["input"], data["output"], t["epochs"], t["loss"], t["lr"], t["batch"],
                seed=rc["model"]["seed"] if args.seed is None else args.seed, weight_decay=t["weight_decay"])
    save_checkpoint(res.model, out / "model.sfc1")
    write_csv(out / "loss.csv", ["epoch", "loss", "slope_gap"],
              [[i + 1, h, s] for i, (h, s) in enumerate(zip(res.history, res.slope_gap))])


def _test_indices(data, which: str | None) -> list[int]:
    n = data["input"].shape[0]
    if which is None:
        return list(range(n))
    idx = [int(v) for v in which.split(",")]
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise UsageError(f"test indices {bad} out of range 0..{n - 1}")
    return idx


def cmd_finetune(args, rc: RunConfig, out: Path) -> None:
    model = load_checkpoint(args.checkpoint)
    data = read_sfc1(Path(args.data) / "test.sfc1")
    d = rc["data"]
    solver = _solver(rc)
    cfg = _finetune_cfg(rc, args)
    rows, outs = [], []
    for i in _test_indices(data, args.index):
        res = finetune(model, data["input"][i], solver, d["snapshot_dt"], d["n_t"], cfg)
        outs.append(res.physical())
        write_csv(out / f"eta_{i}.csv", ["iteration", "eta"], enumerate(res.eta_history))
        write_csv(out / f"loss_{i}.csv", ["iteration", "loss"], enumerate(res.loss_history))
        before = evaluate_model(model, data["input"][i], data["output"][i], solver, d["snapshot_dt"])
        after = evaluate_corrected(res, data["input"][i], data["output"][i], solver, d["snapshot_dt"])
        rows.append({"eta_before": res.eta_history[0], "eta_after": res.eta_history[-1],
                     **{f"before_{k}": v for k, v in before.items()},
                     **{f"after_{k}": v for k, v in after.items()}})
    write_sfc1(out / "finetuned.sfc1", {"output": np.stack(outs)})
    _write_metrics(out / "finetune_metrics.csv", rows)


def cmd_evaluate(args, rc: RunConfig, out: Path) -> None:
    solver = _solver(rc)
    sdt = rc["data"]["snapshot_dt"]
    if args.checkpoint:
        if not args.data:
            raise UsageError("--checkpoint needs --data")
        model = load_checkpoint(args.checkpoint)
        data = read_sfc1(Path(args.data) / "test.sfc1")
        rows = [evaluate_model(model, data["input"][i], data["output"][i], solver, sdt)
                for i in _test_indices(data, args.index)]
    else:
        if not (args.pred and args.truth):
            raise UsageError("give --checkpoint/--data or --pred/--truth")
        pred, truth = _load(args.pred), _load(args.truth)
        if pred.ndim == truth.ndim == 3 or (pred.ndim == 4 and rc["solver"]["formulation"] == "vp"):
            pred, truth = pred[None], truth[None]
        rows = [evaluate(p, t, solver, sdt, rc["grid"]["L"]) for p, t in zip(pred, truth)]
    _write_metrics(out / "metrics.csv", rows)
    for i, r in enumerate(rows):
        print(f"{i}: " + " ".join(f"{k}={v:.6e}" for k, v in r.items()))


def cmd_spectra(args, rc: RunConfig, out: Path) -> None:
    arr = _load(args.input)
    vec = rc["solver"]["formulation"] == "vp"
    frames = arr.reshape((-1,) + arr.shape[-(3 if vec else 2):])
    g = make_grid(arr.shape[-1], rc["grid"]["L"])
    rows = []
    for j, snap in enumerate(frames):
        f = SpectralField(np.fft.fft2(snap), g, vec)
        curve = energy_spectrum(f) if vec else enstrophy_spectrum(f)
        rows += [[j, k, e] for k, e in zip(curve.k_bins, curve.values)]
    write_csv(out / "spectra.csv", ["frame", "k", "energy" if vec else "enstrophy"], rows)


def cmd_verify(args, rc: RunConfig, out: Path) -> int:
    results = checks.run_all(0 if args.seed is None else args.seed)
    for r in results:
        print(r.line())
    write_csv(out / "verify.csv", ["check", "value", "limit", "ok"],
              [[r.name, r.value, r.limit, int(r.ok)] for r in results])
    return 0 if all(r.ok for r in results) else 1


COMMANDS = {
    "generate": cmd_generate, "solve": cmd_solve, "train": cmd_train, "finetune": cmd_finetune,
    "evaluate": cmd_evaluate, "spectra": cmd_spectra, "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--config", help="sectioned key=value run configuration")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spectral-refine", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate a train/test dataset")
    s = sub.add_parser("solve", parents=[common], help="integrate one trajectory")
    s.add_argument("--index", type=int, default=0, help="member of the initial-condition family")
    s.add_argument("--input", help="start from a physical field FILE[:NAME] instead")
    t = sub.add_parser("train", parents=[common], help="train a model on DATA/train.sfc1")
    t.add_argument("--data", required=True)
    t.add_argument("--checkpoint", help="continue from this checkpoint")
    f = sub.add_parser("finetune", parents=[common], help="residual fine-tuning on DATA/test.sfc1")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--index", help="comma-separated test indices (default all)")
    f.add_argument("--mode", choices=("parallel", "guaranteed"))
    f.add_argument("--iters", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--tol", type=float)
    f.add_argument("--loss", choices=("h_neg1", "l2"))
    e = sub.add_parser("evaluate", parents=[common], help="metrics table as CSV")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--index")
    e.add_argument("--pred", help="FILE[:NAME] of predicted snapshots")
    e.add_argument("--truth", help="FILE[:NAME] of reference snapshots")
    sp = sub.add_parser("spectra", parents=[common], help="shell spectra of stored fields as CSV")
    sp.add_argument("--input", required=True, help="FILE[:NAME]")
    sub.add_parser("verify", parents=[common], help="run the built-in property checks")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, rc, out)
        return int(code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spectral-refine: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a structured message
        print(f"spectral-refine: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
