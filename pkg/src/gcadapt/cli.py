"""Command-line driver: synth, pretrain, run, report.

Exit codes: 0 success, 1 contract/load/usage errors, 2 numeric errors.
All settings flow through files and flags; no environment variables are
read, so a run is reproducible from its artifacts alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import torch

from .dataio import load_checkpoint, load_dataset, load_run_config, \
    save_checkpoint, save_dataset, write_report, write_run
from .errors import ContractError, LoadError, NumericError
from .graphs import DriftSpec, synth_drift_sequence
from .trainer import pretrain, run_continual


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage problems; the contract here is
    # exit 1 with usage text, so route through an exception instead.
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    p = _Parser(prog="gcadapt",
                description="Continual adaptation of a graph classifier "
                            "with memory-graph replay.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic drifting dataset")
    sp.add_argument("--spec", required=True, help="drift spec JSON file")
    sp.add_argument("--out", required=True, help="output dataset directory")

    pp = sub.add_parser("pretrain", help="pretrain on the source domains")
    pp.add_argument("--data", required=True)
    pp.add_argument("--config", required=True)
    pp.add_argument("--out", required=True, help="checkpoint JSON path")

    rp = sub.add_parser("run", help="run the continual adaptation protocol")
    rp.add_argument("--data", required=True)
    rp.add_argument("--config", required=True)
    rp.add_argument("--ckpt", required=True)
    rp.add_argument("--out", required=True, help="run output directory")
    rp.add_argument("--no-replay", action="store_true",
                    help="ablation: adapt without memory replay")
    rp.add_argument("--test-only", action="store_true",
                    help="no adaptation at all (lower-bound mode)")
    rp.add_argument("--plot", action="store_true",
                    help="also write a heatmap of the performance matrix")

    gp = sub.add_parser("report", help="print the report of a finished run")
    gp.add_argument("--run", required=True)
    gp.add_argument("--format", choices=("csv", "json"), default="json")
    return p


def _load_drift_spec(path: Path) -> tuple[DriftSpec, int]:
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise LoadError(f"synth: {path}: {e}") from e
    if not isinstance(raw, dict):
        raise LoadError(f"synth: {path}: expected a JSON object")
    raw = dict(raw)
    num_source = int(raw.pop("num_source_domains", 1))
    allowed = {f.name for f in dataclasses.fields(DriftSpec)}
    unknown = set(raw) - allowed
    if unknown:
        raise ContractError(f"synth: {path}: unknown key(s) {sorted(unknown)}; "
                            f"allowed: {sorted(allowed | {'num_source_domains'})}")
    spec = DriftSpec(**raw)
    if not 0 < num_source < spec.num_domains:
        raise ContractError(f"synth: num_source_domains {num_source} must be in "
                            f"[1, num_domains)")
    return spec, num_source


def _cmd_synth(args) -> int:
    spec, num_source = _load_drift_spec(Path(args.spec))
    seq = synth_drift_sequence(spec)
    names = [g.domain_id for g in seq]
    save_dataset(args.out, seq, names[:num_source])
    print(f"synth: wrote {len(seq)} domains ({num_source} source) "
          f"of {spec.nodes_per_domain} nodes, {seq.num_classes} classes "
          f"to {args.out} (seed={spec.seed})")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config)
    source, _ = load_dataset(args.data)
    print(f"pretrain: seed={cfg.seed} config_sha256={cfg.digest()}")
    params = pretrain(source, (cfg.hidden_dim, source.num_classes),
                      cfg.pretrain_epochs, cfg.lr_pretrain, cfg.wd, cfg.seed)
    save_checkpoint(args.out, params)
    print(f"pretrain: wrote checkpoint to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    _, targets = load_dataset(args.data)
    theta0 = load_checkpoint(args.ckpt)
    adapt_cfg = cfg.adapt
    if args.no_replay:
        adapt_cfg = dataclasses.replace(adapt_cfg, replay_enabled=False)
    print(f"run: seed={cfg.seed} config_sha256={cfg.digest()} "
          f"replay={adapt_cfg.replay_enabled and not args.test_only} "
          f"test_only={args.test_only}")
    state = run_continual(theta0, targets, adapt_cfg, cfg.gen, cfg.seed,
                          metric=cfg.metric, test_only=args.test_only)
    write_run(args.out, state)
    write_report(args.out, state, plot=args.plot)
    report = json.loads((Path(args.out) / "report.json").read_text())
    af = report.get("af")
    print(f"run: ap={report['ap']!r} af={af!r} -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    root = Path(args.run)
    target = root / ("matrix.csv" if args.format == "csv" else "report.json")
    if not target.is_file():
        raise LoadError(f"report: {target}: no such file (did the run finish?)")
    sys.stdout.write(target.read_text())
    return 0


_COMMANDS = {"synth": _cmd_synth, "pretrain": _cmd_pretrain,
             "run": _cmd_run, "report": _cmd_report}


def cli(argv=None) -> int:
    """Entry point; returns the process exit status."""
    torch.set_num_threads(1)   # bit-reproducible reductions across invocations
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ContractError, LoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
