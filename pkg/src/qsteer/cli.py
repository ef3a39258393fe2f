"""Command-line entry point: ``qsteer <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as D
from .attacks import load_adversarial, save_adversarial
from .experiment import (
    ConfigError,
    defense_encoder,
    ExperimentConfig,
    emit_plotdata,
    evaluate_defense,
    fidelity_rows,
    generate_adversarial,
    parse_angle,
    prepare_data,
    run_experiment,
    select_pair,
    sweep_jn,
    train_model,
)
from .grad import NumericalError, write_curve
from .models import build_model
from .models.spec import ParamSet

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("qsteer")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="parallel grid cells")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="qsteer", description="Passive-steering encoders as an adversarial defense.")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train the configured model")

    p = sub.add_parser("sweep", parents=[common], help="clean accuracy over the (J, N) grid")
    p.add_argument("--params", type=Path, help="trained ParamSet (trains first when omitted)")

    p = sub.add_parser("attack", parents=[common], help="craft adversarial sets on the undefended model")
    p.add_argument("--params", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="sweep, attack and score the defense")
    p.add_argument("--params", type=Path, help="trained ParamSet (trains first when omitted)")
    p.add_argument("--adv-dir", type=Path, help="reuse adversarial sets written by 'attack'")

    p = sub.add_parser("fidelity-curve", parents=[common], help="steered fidelity per round")
    p.add_argument("--J", nargs="+", default=["pi/16", "pi/10", "pi/4", "pi/2"])
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--f0", type=float, default=0.0, help="initial fidelity")

    p = sub.add_parser("fetch-data", parents=[common], help="download a dataset as IDX files")
    p.add_argument("dataset", choices=D.DATASETS)
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--base-url", help="override the mirror (e.g. file:///path/)")
    return ap


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _out(args) -> Path:
    out = args.out or Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_params(path) -> ParamSet:
    try:
        return ParamSet.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load params {path}: {exc}") from exc


def _write_run(out: Path, cfg: ExperimentConfig | None, command: str, t0: float, **summary) -> None:
    if cfg is not None:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    body = {"command": command, "config_hash": cfg.hash() if cfg else None,
            "seed": cfg.seed if cfg else None, "wall_time": time.perf_counter() - t0, **summary}
    (out / "run.json").write_text(json.dumps(body, indent=1, default=float))


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg, out = _load_config(args), _out(args)
    train_set, test_set = prepare_data(cfg)
    _, params, curve = train_model(cfg, train_set, test_set)
    params.save(out / "params.json")
    write_curve(curve, out / "train_curve.csv")
    _write_run(out, cfg, "train", t0, clean_undefended=curve[-1]["test_acc"], params_digest=params.digest())
    print(f"test accuracy {curve[-1]['test_acc']:.4f}; params -> {out / 'params.json'}")
    return EXIT_OK


def _model_and_params(args, cfg, train_set, test_set):
    if args.params:
        params = _load_params(args.params)
        return build_model(params.spec), params
    model, params, _ = train_model(cfg, train_set, test_set)
    return model, params


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg, out = _load_config(args), _out(args)
    train_set, test_set = prepare_data(cfg)
    model, params = _model_and_params(args, cfg, train_set, test_set)
    sw = sweep_jn(model, params, test_set.images[: cfg.sweep_n], test_set.labels[: cfg.sweep_n],
                  cfg.J_list, cfg.N_list, cfg.budget, cfg.defense, args.threads)
    emit_plotdata(out, cfg.model, cfg.dataset, sweep=sw)
    _write_run(out, cfg, "sweep", t0, baseline=sw.baseline,
               selection={f"{j:.6f}": n for j, n in sw.selection.items()})
    for j, n in sorted(sw.selection.items()):
        print(f"J={j:.4f}: smallest admissible N={n}")
    if not sw.selection:
        print("no (J, N) pair within budget")
    return EXIT_OK


def cmd_attack(args) -> int:
    t0 = time.perf_counter()
    cfg, out = _load_config(args), _out(args)
    _, test_set = prepare_data(cfg)
    params = _load_params(args.params)
    model = build_model(params.spec)
    specs = cfg.attack_specs()
    adv = generate_adversarial(model, params, test_set.images, test_set.labels, specs)
    files = []
    for s in specs:
        path = save_adversarial(out / f"adv_{s.kind}_{s.epsilon:g}", adv[(s.kind, float(s.epsilon))],
                                s, params.digest(), cfg.seed)
        files.append(path.name)
    _write_run(out, cfg, "attack", t0, files=files)
    print(f"wrote {len(files)} adversarial sets to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, out = _load_config(args), _out(args)
    if args.adv_dir is None:
        params = _load_params(args.params) if args.params else None
        record, _, _ = run_experiment(cfg, out, args.threads, params=params)
    else:
        if not args.params:
            raise ConfigError("--adv-dir needs the --params the sets were crafted on")
        t0 = time.perf_counter()
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
        _, test_set = prepare_data(cfg)
        params = _load_params(args.params)
        model = build_model(params.spec)
        sw = sweep_jn(model, params, test_set.images[: cfg.sweep_n], test_set.labels[: cfg.sweep_n],
                      cfg.J_list, cfg.N_list, cfg.budget, cfg.defense, args.threads)
        pair = select_pair(cfg, sw)
        if pair is None:
            raise ConfigError("sweep admitted no (J, N) pair at the evaluation strength")
        specs = cfg.attack_specs()
        adv = {}
        for s in specs:
            if s.epsilon == 0:
                adv[(s.kind, 0.0)] = test_set.images.copy()
                continue
            try:
                adv[(s.kind, float(s.epsilon))] = load_adversarial(args.adv_dir / f"adv_{s.kind}_{s.epsilon:g}")[0]
            except FileNotFoundError as exc:
                raise D.DataError(str(exc)) from exc
        record = evaluate_defense(model, params, test_set.images, test_set.labels, defense_encoder(model, cfg.defense, *pair),
                                  specs, adv, config_hash=cfg.hash(), dataset=cfg.dataset)
        record.wall_time = time.perf_counter() - t0
        record.save(out / "record.json")
        emit_plotdata(out, cfg.model, cfg.dataset, sweep=sw, records=[record])
    print(f"(J, N) = ({record.J:.4f}, {record.N}); clean {record.clean_undefended:.3f} -> {record.clean_defended:.3f}")
    for r in record.adversarial:
        print(f"{r['attack']} eps={r['epsilon']:g}: {r['undefended']:.3f} -> {r['defended']:.3f} ({r['gain']:+.2f} pts)")
    return EXIT_OK


def cmd_fidelity(args) -> int:
    t0 = time.perf_counter()
    out = _out(args)
    Js = [parse_angle(j) for j in args.J]
    if not all(0 < j <= np.pi / 2 for j in Js):
        raise ConfigError("J must lie in (0, pi/2]")
    if not 0 <= args.f0 <= 1:
        raise ConfigError("initial fidelity must lie in [0, 1]")
    rows = fidelity_rows(Js, args.n_max, args.f0)
    emit_plotdata(out, fidelity=rows)
    _write_run(out, None, "fidelity-curve", t0, J=Js, n_max=args.n_max, f0=args.f0)
    print(f"wrote {len(rows)} rows to {out / 'fidelity.csv'}")
    return EXIT_OK


def cmd_fetch(args) -> int:
    t0 = time.perf_counter()
    dest = D.fetch_dataset(args.dataset, args.data_dir, args.base_url)
    if args.out:
        _write_run(_out(args), None, "fetch-data", t0, dataset=args.dataset, path=str(dest))
    print(f"{args.dataset} -> {dest}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "fidelity-curve": cmd_fidelity,
    "fetch-data": cmd_fetch,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except D.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
