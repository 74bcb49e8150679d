"""Command-line front end.

Subcommands cover the full experiment lifecycle: ``pretrain`` builds the
frozen extractor checkpoint, ``train``/``advtrain`` fit one regime on the
target task, ``attack`` sweeps FGSM budgets over a saved model, ``report``
consolidates run directories into one table, and ``selftest`` runs the
built-in numerics checks.  Configs are JSON files; flags override file
values.  Exit codes: 0 success, 1 bad usage or config, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from .adversarial import AttackConfig, adversarial_train, evaluate_under_attack
from .config import DataSourceConfig, ExperimentConfig
from .data import (
    BadMagicError,
    CountMismatchError,
    CsvFormatError,
    Dataset,
    TruncatedFileError,
    load_feature_csv,
    load_idx,
    split,
    synth_generate,
)
from .transfer import (
    CheckpointError,
    TrainingDivergedError,
    build,
    evaluate,
    load_model,
    pretrain,
    save_model,
    train,
)
from .validation import ConfigError, ShapeMismatchError, UsageError

METRICS_COLUMNS = ("run_id", "regime", "epoch", "lr", "train_loss",
                   "train_accuracy", "clean_accuracy", "attacked_accuracy")
REPORT_COLUMNS = ("Method", "Attack Strength", "Clean Accuracy",
                  "Accuracy under Attack", "Adversarial Training Accuracy")

USAGE_ERRORS = (ConfigError, CheckpointError, UsageError, ShapeMismatchError,
                CsvFormatError, BadMagicError, TruncatedFileError,
                CountMismatchError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract reserves 2 for
    # runtime failures, so remap usage problems to 1
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise _UsageExit(message)


class _UsageExit(Exception):
    pass


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    config = ExperimentConfig.from_dict(raw)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "regime", None):
        overrides["regime"] = args.regime
    if getattr(args, "epsilon", None):
        overrides["attack_budgets"] = tuple(args.epsilon)
    return config.replaced(**overrides) if overrides else config


def echo_config(config: ExperimentConfig) -> None:
    quantum_params = config.n_qubits * config.depth * 3
    print(f"config: regime={config.regime} n_qubits={config.n_qubits} "
          f"depth={config.depth} quantum_params={quantum_params} "
          f"encoding={config.encoding} epochs={config.epochs} "
          f"batch_size={config.batch_size} lr={config.lr} "
          f"optimizer={config.optimizer} schedule={config.schedule} "
          f"seed={config.seed}")


def resolve_splits(source: DataSourceConfig, seed: int) -> tuple[Dataset, Dataset]:
    if source.kind == "synth":
        data = synth_generate(source.to_synth_spec(seed=seed))
    elif source.kind == "idx":
        data = load_idx(source.image_path, source.label_path)
    else:
        data = load_feature_csv(source.csv_path)
    return split(data, source.train_fraction, seed=seed)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(out: Path, run_id: str, command: str, regime: str,
                  config: ExperimentConfig, history: list[dict],
                  wall_time: float, extra: dict | None = None) -> None:
    """metrics.csv holds only seed-determined fields; timing goes to the JSON."""
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for record in history:
            writer.writerow([
                run_id, regime, record.get("epoch"), _fmt(record.get("lr")),
                _fmt(record.get("train_loss")), _fmt(record.get("train_accuracy")),
                _fmt(record.get("test_accuracy")), _fmt(record.get("attacked_accuracy")),
            ])
    payload = {
        "run_id": run_id,
        "command": command,
        "regime": regime,
        "seed": config.seed,
        "config": json.loads(config.to_json()),
        "history": history,
        "wall_time_seconds": round(wall_time, 3),
    }
    payload.update(extra or {})
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")


def _prepare_out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_id(command: str, regime: str, config: ExperimentConfig) -> str:
    # derived from the config alone so identical runs emit identical files
    return f"{command}-{regime}-seed{config.seed}"


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = load_config(args)
    echo_config(config)
    out = _prepare_out(args)
    train_set, test_set = resolve_splits(config.source_data, config.seed)
    started = time.perf_counter()
    _, history = pretrain(train_set, config, out / "extractor.npz", eval_set=test_set)
    wall = time.perf_counter() - started
    write_metrics(out, _run_id("pretrain", "pretrain", config), "pretrain",
                  "pretrain", config, history, wall,
                  extra={"checkpoint": "extractor.npz"})
    final = history[-1]
    print(f"pretrain: source accuracy {final['train_accuracy']:.4f} "
          f"(held out {final['test_accuracy']:.4f}) in {len(history)} epochs; "
          f"checkpoint {out / 'extractor.npz'}")
    return 0


def _fit(args: argparse.Namespace, adversarial: bool) -> int:
    config = load_config(args)
    echo_config(config)
    out = _prepare_out(args)
    train_set, test_set = resolve_splits(config.target_data, config.seed)
    model = build(config, args.checkpoint, input_shape=train_set.x.shape[1:],
                  n_classes=train_set.class_count, input_kind=train_set.kind)
    started = time.perf_counter()
    train_epsilon = None
    if adversarial:
        train_epsilon = args.epsilon[0] if args.epsilon else config.attack_budgets[0]
        attack = AttackConfig(epsilon=train_epsilon, mix_ratio=config.mix_ratio)
        _, history = adversarial_train(model, train_set, config, attack, eval_set=test_set)
    else:
        history = train(model, train_set, config, eval_set=test_set)
    wall = time.perf_counter() - started
    command = "advtrain" if adversarial else "train"
    save_model(out / "model.npz", model, config, train_set.x.shape[1:],
               adversarial=adversarial, train_epsilon=train_epsilon)
    write_metrics(out, _run_id(command, config.regime, config), command,
                  config.regime, config, history, wall,
                  extra={"checkpoint": "model.npz", "adversarial": adversarial,
                         "train_epsilon": train_epsilon})
    final = history[-1]
    line = (f"{command}: {config.regime} test accuracy {final['test_accuracy']:.4f} "
            f"after {len(history)} epochs ({wall:.1f}s)")
    if adversarial:
        line += f"; attacked accuracy {final['attacked_accuracy']:.4f} at eps={train_epsilon}"
    print(line)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    return _fit(args, adversarial=False)


def cmd_advtrain(args: argparse.Namespace) -> int:
    return _fit(args, adversarial=True)


def cmd_attack(args: argparse.Namespace) -> int:
    if not args.checkpoint:
        raise ConfigError("attack needs --checkpoint pointing at a trained model")
    config = load_config(args)
    echo_config(config)
    out = _prepare_out(args)
    model, _, meta = load_model(args.checkpoint)
    _, test_set = resolve_splits(config.target_data, config.seed)
    clean_accuracy, _ = evaluate(model, test_set)
    rows = []
    started = time.perf_counter()
    for epsilon in config.attack_budgets:
        attacked = evaluate_under_attack(model, test_set, AttackConfig(epsilon=epsilon))
        rows.append({"epsilon": epsilon, "clean_accuracy": clean_accuracy,
                     "attacked_accuracy": attacked})
        print(f"attack: {meta['regime']} eps={epsilon} clean {clean_accuracy:.4f} "
              f"attacked {attacked:.4f}")
    wall = time.perf_counter() - started
    run_id = _run_id("attack", meta["regime"], config)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "regime", "epsilon", "clean_accuracy",
                         "attacked_accuracy"])
        for row in rows:
            writer.writerow([run_id, meta["regime"], _fmt(row["epsilon"]),
                             _fmt(row["clean_accuracy"]), _fmt(row["attacked_accuracy"])])
    payload = {
        "run_id": run_id,
        "command": "attack",
        "regime": meta["regime"],
        "seed": config.seed,
        "config": json.loads(config.to_json()),
        "adversarial": bool(meta.get("adversarial")),
        "train_epsilon": meta.get("train_epsilon"),
        "rows": rows,
        "wall_time_seconds": round(wall, 3),
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _collect_run_records(run_dir: Path) -> list[dict]:
    records = []
    for path in sorted(run_dir.rglob("metrics.json")):
        try:
            records.append(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not records:
        raise ConfigError(f"no metrics.json files under {run_dir}")
    return records


def build_report(run_dir: Path) -> tuple[list[list], list[str]]:
    """Rows for the consolidated table plus the extra adversarial-clean lines.

    The last column is the adversarially trained model's accuracy under the
    same attack; its clean accuracy is reported separately below the table
    since the two readings answer different questions.
    """
    records = _collect_run_records(run_dir)
    base: dict[tuple[str, float], dict] = {}
    robust: dict[tuple[str, float], dict] = {}
    clean_only: dict[str, float] = {}
    at_clean: list[str] = []
    for record in records:
        regime = record.get("regime")
        if record.get("command") == "attack":
            bucket = robust if record.get("adversarial") else base
            for row in record["rows"]:
                bucket[(regime, float(row["epsilon"]))] = row
            if record.get("adversarial") and record["rows"]:
                at_clean.append(
                    f"adversarially trained {regime} "
                    f"(train eps={record.get('train_epsilon')}): "
                    f"clean accuracy {record['rows'][0]['clean_accuracy']:.4f}")
        elif record.get("command") in ("train", "advtrain") and record.get("history"):
            final = record["history"][-1]
            if "test_accuracy" in final and not record.get("adversarial"):
                clean_only[regime] = final["test_accuracy"]
    rows = []
    for (regime, epsilon), row in sorted(base.items()):
        at_row = robust.get((regime, epsilon))
        rows.append([regime, epsilon, row["clean_accuracy"], row["attacked_accuracy"],
                     at_row["attacked_accuracy"] if at_row else None])
    attacked_regimes = {regime for regime, _ in base}
    for regime in sorted(set(clean_only) - attacked_regimes):
        rows.append([regime, None, clean_only[regime], None, None])
    return rows, at_clean


def _render_report(rows: list[list], at_clean: list[str]) -> str:
    def cell(value, percent=False):
        if value is None:
            return "-"
        if percent:
            return f"{100 * value:.2f}%"
        return f"{value:g}"

    table = [" | ".join(REPORT_COLUMNS)]
    for regime, epsilon, clean, attacked, at_attacked in rows:
        table.append(" | ".join([
            regime, cell(epsilon), cell(clean, percent=True),
            cell(attacked, percent=True), cell(at_attacked, percent=True)]))
    lines = "\n".join(table)
    if at_clean:
        lines += "\n\n" + "\n".join(at_clean)
    return lines + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    rows, at_clean = build_report(run_dir)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    text = _render_report(rows, at_clean)
    (out / "report.txt").write_text(text)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(["" if v is None else _fmt(v) for v in row])
    payload = [dict(zip(("method", "attack_strength", "clean_accuracy",
                         "accuracy_under_attack", "adversarial_training_accuracy"), row))
               for row in rows]
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(text, end="")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    failed = sum(1 for _, ok, _ in results if not ok)
    print(f"selftest: {len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qtransfer",
                     description="hybrid quantum-classical transfer learning "
                                 "with FGSM adversarial robustness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint=False):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--regime", help="one of the four training regimes")
        p.add_argument("--epsilon", type=float, nargs="+",
                       help="attack budgets, e.g. --epsilon 0.1 0.2 0.3")
        p.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint produced by an earlier stage")

    p = sub.add_parser("pretrain", help="train the extractor on the source task")
    add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train one regime on the target task")
    add_common(p, checkpoint=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("advtrain", help="adversarially train one regime")
    add_common(p, checkpoint=True)
    p.set_defaults(func=cmd_advtrain)

    p = sub.add_parser("attack", help="sweep FGSM budgets over a saved model")
    add_common(p, checkpoint=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="consolidate run directories into one table")
    p.add_argument("run_dir", help="directory containing run outputs")
    p.add_argument("--out", help="where to write the report (default: run_dir)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in numerics checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
