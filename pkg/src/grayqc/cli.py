"""Batch pipeline CLI: generate | train | optimize | selftest | report.

Every output embeds the resolved configuration and seeds; reruns with the
same arguments produce byte-identical files. GRAYQC_WORKERS sets the number
of worker processes used for dataset generation.

Exit codes: 0 success, 1 usage error, 2 check failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .blackbox import ModelConfig, load_checkpoint, save_checkpoint
from .control import ControlProblem, optimize_and_verify
from .io import (
    read_dataset,
    sha256_file,
    sim_config_to_dict,
    write_csv,
    write_dataset,
    write_json,
)
from .noise import OU, RTN, TimeGrid, match_spectrum
from .profiles import PROFILES, Profile
from .selftest import run_all
from .simulator import SimConfig, derive_seed, generate_dataset
from .training import TrainConfig, train
from .whitebox import GATE_NAMES

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3

_DEFAULT_G = (0.1, 0.2, 0.3, 0.4, 0.5)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved experiment settings for one CLI invocation."""

    experiment: str = "run"
    noise: str = "rtn"
    gamma: float = 1.0
    g_values: tuple[float, ...] = _DEFAULT_G
    profile: str = "desk"
    seed: int = 0
    out: Path = Path("runs/run")
    sim: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    control: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise not in ("rtn", "ou"):
            raise UsageError(f"noise must be 'rtn' or 'ou', got {self.noise!r}")
        if self.profile not in PROFILES:
            raise UsageError(f"unknown profile {self.profile!r}")
        if any(g <= 0 for g in self.g_values):
            raise UsageError("all coupling values must be positive")

    @property
    def prof(self) -> Profile:
        return PROFILES[self.profile]

    def noise_model(self):
        if self.noise == "rtn":
            return RTN(self.gamma)
        k, D = match_spectrum(self.gamma)
        return OU(k, D)

    def tag(self, g: float) -> str:
        return f"{self.noise}_g{g:g}"

    def sim_config(self, g: float, seed: int) -> SimConfig:
        prof = self.prof
        return SimConfig(
            noise=self.noise_model(),
            coupling=g,
            seed=seed,
            grid=TimeGrid(3.2, int(self.sim.get("steps", prof.sim_steps))),
            realizations=int(self.sim.get("realizations", prof.realizations)),
        )

    def dataset_count(self, g: float) -> int:
        if "count" in self.sim:
            return int(self.sim["count"])
        prof = self.prof
        return prof.dataset_count_strong if g >= 0.5 else prof.dataset_count

    def model_config(self) -> ModelConfig:
        kwargs = {"dropout_rate": self.prof.dropout_rate, **self.model}
        if "branch_hidden" in kwargs:
            kwargs["branch_hidden"] = tuple(kwargs["branch_hidden"])
        return ModelConfig(**kwargs)

    def train_config(self, g_index: int) -> TrainConfig:
        prof = self.prof
        kwargs = dict(
            epochs=prof.epochs,
            batch_size=prof.batch_size,
            peak_lr=prof.peak_lr,
            shuffle_seed=derive_seed(self.seed, 3, g_index),
        )
        kwargs.update(self.train)
        return TrainConfig(**kwargs)

    def to_dict(self) -> dict:
        # the output directory is deliberately excluded: it is not part of
        # the experiment identity, and embedding it would break byte-identical
        # reruns into different directories
        return {
            "experiment": self.experiment,
            "noise": self.noise,
            "gamma": self.gamma,
            "g_values": list(self.g_values),
            "profile": self.profile,
            "seed": self.seed,
            "sim": self.sim,
            "model": self.model,
            "train": self.train,
            "control": self.control,
        }


def _dataset_path(run: RunConfig, g: float) -> Path:
    return run.out / f"dataset_{run.tag(g)}.jsonl"


def _checkpoint_path(run: RunConfig, g: float) -> Path:
    return run.out / f"model_{run.tag(g)}.gqck"


def _metrics_path(run: RunConfig, g: float) -> Path:
    return run.out / f"metrics_{run.tag(g)}.json"


def _optimize_path(run: RunConfig, g: float) -> Path:
    return run.out / f"optimize_{run.tag(g)}.json"


def cmd_generate(run: RunConfig) -> int:
    run.out.mkdir(parents=True, exist_ok=True)
    for gi, g in enumerate(run.g_values):
        seed = derive_seed(run.seed, 0, gi)
        config = run.sim_config(g, seed)
        count = run.dataset_count(g)
        path = _dataset_path(run, g)
        write_dataset(path, generate_dataset(count, config, seed), config, seed, count)
        print(f"wrote {path} ({count} records, sha256 {sha256_file(path)[:16]})")
    return EXIT_OK


def cmd_train(run: RunConfig) -> int:
    run.out.mkdir(parents=True, exist_ok=True)
    mse_rows = []
    pred_rows = []
    for gi, g in enumerate(run.g_values):
        path = _dataset_path(run, g)
        if not path.exists():
            raise UsageError(f"dataset {path} not found; run `grayqc generate` first")
        _, records = read_dataset(path)
        params, metrics = train(
            records, run.model_config(), run.train_config(gi), seed=derive_seed(run.seed, 1, gi)
        )
        save_checkpoint(
            _checkpoint_path(run, g),
            params,
            metadata={
                "g": g,
                "noise": run.noise,
                "dataset_sha256": sha256_file(path),
                "metrics": metrics.to_dict(),
                "run": run.to_dict(),
            },
        )
        write_json(
            _metrics_path(run, g),
            {
                "schema": "grayqc.metrics.v1",
                "g": g,
                "noise": run.noise,
                "run": run.to_dict(),
                **metrics.to_dict(),
            },
        )
        mse_rows.append([g, "train"] + list(metrics.train_mse))
        mse_rows.append([g, "test"] + list(metrics.test_mse))
        pred_rows.append([g, metrics.prediction_error])
        print(
            f"trained {run.tag(g)}: test MSE {metrics.test_mse.mean():.3e}, "
            f"prediction error {metrics.prediction_error:.4f}"
        )
    write_csv(run.out / f"mse_{run.noise}.csv", ["g", "split", *GATE_NAMES], mse_rows)
    write_csv(run.out / f"prediction_error_{run.noise}.csv", ["g", "prediction_error"], pred_rows)
    return EXIT_OK


def cmd_optimize(run: RunConfig) -> int:
    run.out.mkdir(parents=True, exist_ok=True)
    table = {}  # (gate, g) -> verified fidelity
    for gi, g in enumerate(run.g_values):
        ckpt = _checkpoint_path(run, g)
        if not ckpt.exists():
            raise UsageError(f"checkpoint {ckpt} not found; run `grayqc train` first")
        params, _ = load_checkpoint(ckpt)
        verify = replace(
            run.sim_config(g, derive_seed(run.seed, 4, gi)),
            realizations=int(run.sim.get("verify_realizations", run.prof.verify_realizations)),
        )
        gate_results = []
        for gate in range(6):
            problem = ControlProblem(
                params,
                gate_index=gate,
                restarts=int(run.control.get("restarts", run.prof.restarts)),
                max_iterations=int(run.control.get("max_iterations", run.prof.max_iterations)),
            )
            result = optimize_and_verify(problem, verify, seed=derive_seed(run.seed, 5, gi, gate))
            table[(gate, g)] = result.verified_fidelity
            gate_results.append(
                {
                    "gate": GATE_NAMES[gate],
                    "input": result.input.tolist(),
                    "emulator_fidelity": result.emulator_fidelity,
                    "verified_fidelity": result.verified_fidelity,
                    "restarts": [
                        {
                            "objective_history": t.objective_history,
                            "iterations": t.iterations,
                            "reason": t.reason,
                        }
                        for t in result.restarts
                    ],
                }
            )
            print(
                f"{run.tag(g)} {GATE_NAMES[gate]}: emulator {result.emulator_fidelity:.4f}, "
                f"verified {result.verified_fidelity:.4f}"
            )
        write_json(
            _optimize_path(run, g),
            {
                "schema": "grayqc.results.v1",
                "g": g,
                "noise": run.noise,
                "run": run.to_dict(),
                "verify_config": sim_config_to_dict(verify),
                "gates": gate_results,
            },
        )
    gs = list(run.g_values)
    write_csv(
        run.out / f"fidelity_{run.noise}.csv",
        ["gate"] + [f"g={g:g}" for g in gs],
        [[GATE_NAMES[gate]] + [table[(gate, g)] for g in gs] for gate in range(6)],
    )
    write_csv(
        run.out / f"fidelity_vs_g_{run.noise}.csv",
        ["g", *GATE_NAMES],
        [[g] + [table[(gate, g)] for gate in range(6)] for g in gs],
    )
    return EXIT_OK


def cmd_report(run: RunConfig) -> int:
    """Rebuild the summary tables from per-g JSON outputs."""
    mse_rows, pred_rows, fid_rows = [], [], {}
    for gi, g in enumerate(run.g_values):
        mpath = _metrics_path(run, g)
        if not mpath.exists():
            raise UsageError(f"metrics {mpath} not found; run `grayqc train` first")
        m = json.loads(mpath.read_text())
        mse_rows.append([g, "train"] + list(m["train_mse"]))
        mse_rows.append([g, "test"] + list(m["test_mse"]))
        pred_rows.append([g, m["prediction_error"]])
        opath = _optimize_path(run, g)
        if opath.exists():
            o = json.loads(opath.read_text())
            for gate, entry in enumerate(o["gates"]):
                fid_rows[(gate, g)] = entry["verified_fidelity"]
    write_csv(run.out / f"mse_{run.noise}.csv", ["g", "split", *GATE_NAMES], mse_rows)
    write_csv(run.out / f"prediction_error_{run.noise}.csv", ["g", "prediction_error"], pred_rows)
    if fid_rows:
        gs = [g for g in run.g_values if (0, g) in fid_rows]
        write_csv(
            run.out / f"fidelity_{run.noise}.csv",
            ["gate"] + [f"g={g:g}" for g in gs],
            [[GATE_NAMES[gate]] + [fid_rows[(gate, g)] for g in gs] for gate in range(6)],
        )
        write_csv(
            run.out / f"fidelity_vs_g_{run.noise}.csv",
            ["g", *GATE_NAMES],
            [[g] + [fid_rows[(gate, g)] for gate in range(6)] for g in gs],
        )
    print(f"report written to {run.out}")
    return EXIT_OK


def cmd_selftest(run: RunConfig) -> int:
    results = run_all(verbose=True)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="grayqc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "optimize", "selftest", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--noise", choices=("rtn", "ou"))
        p.add_argument("--g", help="comma-separated coupling values, e.g. 0.1,0.3,0.5")
        p.add_argument("--seed", type=int)
        p.add_argument("--profile", choices=tuple(PROFILES))
        p.add_argument("--out", type=Path)
    return parser


def _resolve(args) -> RunConfig:
    payload = {}
    if args.config is not None:
        try:
            payload = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {exc.filename}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}")
    if args.noise is not None:
        payload["noise"] = args.noise
    if args.g is not None:
        try:
            payload["g_values"] = [float(v) for v in args.g.split(",") if v]
        except ValueError:
            raise UsageError(f"cannot parse --g list: {args.g!r}")
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.profile is not None:
        payload["profile"] = args.profile
    if args.out is not None:
        payload["out"] = args.out
    if "g_values" in payload:
        payload["g_values"] = tuple(payload["g_values"])
    if "out" in payload:
        payload["out"] = Path(payload["out"])
    try:
        return RunConfig(**payload)
    except TypeError as exc:
        raise UsageError(f"bad configuration key: {exc}")


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "selftest": cmd_selftest,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = _resolve(args)
        return _COMMANDS[args.command](run)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
