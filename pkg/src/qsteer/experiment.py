"""Experiment runner: training runs, (J, N) sweeps, defense evaluation and plot data."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .attacks import AttackSpec, predict, run_attack, save_adversarial
from .encoding import Defense, EncoderSpec
from .grad import TrainConfig, train, write_curve
from .models import build_model
from .models.spec import ModelSpec, ParamSet
from .steering import fidelity_oracle

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
PLOTDATA_VERSION = 1
SWEEP_FIELDS = ("model", "dataset", "J", "N", "clean_acc", "admissible")
CURVE_FIELDS = ("model", "dataset", "attack", "epsilon", "defended", "accuracy")
FIDELITY_FIELDS = ("J", "N", "fidelity")

# Reference (J, N) pairs for full-scale runs, keyed by (model, defense, dataset).
PRESETS = {
    ("qnn", "single_qubit_steer", "mnist"): (np.pi / 16, 27),
    ("qnn", "single_qubit_steer", "fashion_mnist"): (np.pi / 16, 20),
    ("qnn", "single_qubit_steer", "kmnist"): (np.pi / 16, 24),
    ("qnn", "multi_qubit_steer", "mnist"): (np.pi / 16, 40),
    ("qnn", "multi_qubit_steer", "fashion_mnist"): (np.pi / 16, 25),
    ("qnn", "multi_qubit_steer", "kmnist"): (np.pi / 16, 35),
    ("qcnn", "multi_qubit_steer", "mnist"): (np.pi / 10, 10),
    ("qcnn", "multi_qubit_steer", "fashion_mnist"): (np.pi / 10, 12),
    ("qcnn", "multi_qubit_steer", "kmnist"): (np.pi / 10, 23),
    ("vqc", "multi_qubit_steer", "mnist"): (np.pi / 10, 20),
    ("vqc", "multi_qubit_steer", "fashion_mnist"): (np.pi / 10, 18),
    ("vqc", "multi_qubit_steer", "kmnist"): (np.pi / 10, 15),
}


class ConfigError(ValueError):
    pass


def parse_angle(v) -> float:
    """Numbers pass through; strings like ``"pi/16"`` or ``"3*pi/8"`` are evaluated."""
    if isinstance(v, (int, float)):
        return float(v)
    m = re.fullmatch(r"\s*(?:([0-9.]+)\s*\*?\s*)?pi\s*(?:/\s*([0-9.]+))?\s*", str(v))
    if not m:
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"cannot parse angle {v!r}") from None
    num = float(m.group(1) or 1.0)
    den = float(m.group(2) or 1.0)
    return num * np.pi / den


def substream_seed(root: int, name: str) -> int:
    """Independent integer seed for a named consumer of the root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    model: str = "vqc"
    dataset: str = "mnist"
    classes: list | None = None
    data_dir: str | None = None
    n_train: int = 500
    n_test: int = 200
    sweep_n: int = 100
    defense: str = "multi_qubit_steer"
    J_list: list = field(default_factory=lambda: [np.pi / 16, np.pi / 10, np.pi / 4, np.pi / 2])
    N_list: list = field(default_factory=lambda: list(range(1, 41)))
    budget: float = 0.10
    eval_J: float | None = None
    eval_N: int | None = None
    attacks: list = field(default_factory=lambda: [{"kind": "pgd", "eps": [0.0, 0.05, 0.1], "alpha": 0.02, "steps": 20}])
    train: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("qnn", "qcnn", "vqc"):
            raise ConfigError(f"unknown model {self.model!r}")
        try:
            Defense(self.defense)
        except ValueError:
            raise ConfigError(f"unknown defense {self.defense!r}") from None
        if self.defense == "none":
            raise ConfigError("an experiment needs a steered defense to evaluate")
        if self.model != "qnn" and self.defense == "single_qubit_steer":
            raise ConfigError("single-qubit steering needs angle encoding (qnn)")
        self.J_list = [parse_angle(j) for j in self.J_list]
        self.N_list = [int(n) for n in self.N_list]
        if not self.J_list or not self.N_list:
            raise ConfigError("steering grid must be nonempty")
        if self.eval_J is not None:
            self.eval_J = parse_angle(self.eval_J)
        if self.classes is None and self.model != "qnn":
            self.classes = [0, 1]
        if not 0 <= self.budget <= 1:
            raise ConfigError("budget is a fraction of accuracy in [0, 1]")
        for a in self.attacks:
            if "kind" not in a or "eps" not in a:
                raise ConfigError("every attack needs 'kind' and 'eps'")
        try:
            self.train_config()
            self.attack_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **asdict(self)}

    def hash(self) -> str:
        body = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def train_config(self) -> TrainConfig:
        opts = {"n_train": self.n_train, "n_test": self.n_test, **self.train}
        opts["seed"] = substream_seed(self.seed, "train")
        return TrainConfig(**opts)

    def attack_specs(self) -> list:
        out = []
        for a in self.attacks:
            base = AttackSpec(a["kind"], 0.0, a.get("alpha", 0.02), a.get("steps", 20))
            out += [base.with_epsilon(e) for e in a["eps"]]
        return out

    def model_spec(self) -> ModelSpec:
        return ModelSpec.default(self.model, seed=substream_seed(self.seed, "model"))


# ---------------------------------------------------------------------------
# data and training


def prepare_data(cfg: ExperimentConfig):
    train_set = D.load_dataset(cfg.dataset, "train", cfg.data_dir)
    test_set = D.load_dataset(cfg.dataset, "test", cfg.data_dir)
    if cfg.classes is not None:
        train_set = D.filter_binary(train_set, tuple(cfg.classes))
        test_set = D.filter_binary(test_set, tuple(cfg.classes))
    train_set = D.subsample(train_set, min(cfg.n_train, len(train_set)), substream_seed(cfg.seed, "subsample.train"))
    test_set = D.subsample(test_set, min(cfg.n_test, len(test_set)), substream_seed(cfg.seed, "subsample.test"))
    if cfg.model in ("qcnn", "vqc"):
        train_set, test_set = D.downscale_set(train_set), D.downscale_set(test_set)
    return train_set, test_set


def train_model(cfg: ExperimentConfig, train_set, test_set):
    model = build_model(cfg.model_spec())
    params, curve = train(model, train_set, cfg.train_config(), test_set)
    return model, params, curve


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepResult:
    baseline: float
    budget: float
    rows: list
    selection: dict

    def admissible(self, J: float) -> list:
        return [r["N"] for r in self.rows if r["J"] == J and r["admissible"]]

    def accuracy(self, J: float, N: int) -> float:
        for r in self.rows:
            if np.isclose(r["J"], J) and r["N"] == N:
                return r["clean_acc"]
        raise KeyError((J, N))


def defense_encoder(model, defense: str, J: float, N: int) -> EncoderSpec:
    return EncoderSpec(model.encoding, Defense(defense), J, N)


def sweep_jn(model, params, images, labels, J_list, N_list, budget: float = 0.10,
             defense: str = "multi_qubit_steer", threads: int = 1) -> SweepResult:
    """Defended clean accuracy on every (J, N) cell.

    A cell is admissible when its accuracy drop from the undefended baseline
    is at most ``budget`` (absolute accuracy). The selection maps each J to
    its smallest admissible N.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    baseline = float(np.mean(predict(model, params, images) == labels))
    cells = [(float(J), int(N)) for J in J_list for N in N_list]

    def run(cell):
        enc = defense_encoder(model, defense, *cell)
        return float(np.mean(predict(model, params, images, enc) == labels))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        accs = list(pool.map(run, cells))
    rows, selection = [], {}
    for (J, N), acc in zip(cells, accs):
        ok = baseline - acc <= budget + 1e-12
        rows.append({"J": J, "N": N, "clean_acc": acc, "admissible": bool(ok)})
        if ok and (J not in selection or N < selection[J]):
            selection[J] = N
    if not selection:
        log.warning("no (J, N) pair within a clean drop of %.3f", budget)
    return SweepResult(baseline, budget, rows, selection)


# ---------------------------------------------------------------------------
# defense evaluation


@dataclass
class RunRecord:
    config_hash: str
    model: str
    dataset: str
    defense: str
    J: float
    N: int
    n_test: int
    clean_undefended: float
    clean_defended: float
    adversarial: list
    predictions: dict
    params_digest: str = ""
    wall_time: float = 0.0

    @property
    def clean_drop(self) -> float:
        """Defended minus undefended clean accuracy, in percentage points."""
        return 100.0 * (self.clean_defended - self.clean_undefended)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clean_drop"] = self.clean_drop
        return d

    def comparable(self) -> dict:
        d = self.to_dict()
        d.pop("wall_time")
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "RunRecord":
        d = json.loads(Path(path).read_text())
        d.pop("clean_drop", None)
        return cls(**d)


def generate_adversarial(model, params, images, labels, specs) -> dict:
    """Adversarial sets crafted on the undefended model, keyed by (kind, epsilon)."""
    out = {}
    for s in specs:
        out[(s.kind, float(s.epsilon))] = images.copy() if s.epsilon == 0 else run_attack(model, params, images, labels, s)
    return out


def evaluate_defense(model, params, images, labels, encoder: EncoderSpec, specs, adv_sets: dict,
                     config_hash: str = "", dataset: str = "") -> RunRecord:
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    t0 = time.perf_counter()
    preds = {
        "labels": labels.tolist(),
        "clean_undefended": predict(model, params, images).tolist(),
        "clean_defended": predict(model, params, images, encoder).tolist(),
    }
    adv_rows = []
    for s in specs:
        key = (s.kind, float(s.epsilon))
        if key not in adv_sets:
            raise KeyError(f"missing adversarial set for {s.kind} eps={s.epsilon}")
        adv = adv_sets[key]
        pu = predict(model, params, adv)
        pd = predict(model, params, adv, encoder)
        tag = f"{s.kind}@{s.epsilon:g}"
        preds[tag + ":undefended"] = pu.tolist()
        preds[tag + ":defended"] = pd.tolist()
        und, dfd = float(np.mean(pu == labels)), float(np.mean(pd == labels))
        adv_rows.append({
            "attack": s.kind, "epsilon": float(s.epsilon), "alpha": s.alpha, "steps": s.steps,
            "undefended": und, "defended": dfd, "gain": 100.0 * (dfd - und),
        })
    return RunRecord(
        config_hash=config_hash,
        model=params.spec.kind,
        dataset=dataset,
        defense=encoder.defense.value,
        J=float(encoder.J),
        N=int(encoder.N),
        n_test=int(len(labels)),
        clean_undefended=float(np.mean(np.array(preds["clean_undefended"]) == labels)),
        clean_defended=float(np.mean(np.array(preds["clean_defended"]) == labels)),
        adversarial=adv_rows,
        predictions=preds,
        params_digest=params.digest(),
        wall_time=time.perf_counter() - t0,
    )


def recompute_deltas(record: RunRecord) -> dict:
    """Clean drop and adversarial gains rebuilt from the stored predictions."""
    p = record.predictions
    y = np.array(p["labels"])

    def acc(key):
        return float(np.mean(np.array(p[key]) == y))

    out = {"clean_drop": 100.0 * (acc("clean_defended") - acc("clean_undefended"))}
    for row in record.adversarial:
        tag = f"{row['attack']}@{row['epsilon']:g}"
        out[tag] = 100.0 * (acc(tag + ":defended") - acc(tag + ":undefended"))
    return out


# ---------------------------------------------------------------------------
# plot data


def fidelity_rows(J_list, N_max: int, F0: float = 0.0) -> list:
    return [{"J": float(J), "N": N, "fidelity": fidelity_oracle(F0, J, N)}
            for J in J_list for N in range(0, N_max + 1)]


def _write_csv(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})


def emit_plotdata(out_dir, model: str = "", dataset: str = "", sweep: SweepResult | None = None,
                  records=(), fidelity=None) -> dict:
    """Tidy CSV files per plot family plus a versioned manifest."""
    if sweep is None and not records and not fidelity:
        raise ValueError("nothing to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if sweep is not None:
        rows = [{"model": model, "dataset": dataset, **r, "admissible": int(r["admissible"])} for r in sweep.rows]
        _write_csv(out / "sweep.csv", SWEEP_FIELDS, rows)
        written["sweep"] = {"file": "sweep.csv", "fields": list(SWEEP_FIELDS), "rows": len(rows)}
    if records:
        rows = []
        for rec in records:
            for r in rec.adversarial:
                for defended, acc in ((0, r["undefended"]), (1, r["defended"])):
                    rows.append({"model": rec.model, "dataset": rec.dataset, "attack": r["attack"],
                                 "epsilon": r["epsilon"], "defended": defended, "accuracy": acc})
        _write_csv(out / "curve.csv", CURVE_FIELDS, rows)
        written["curve"] = {"file": "curve.csv", "fields": list(CURVE_FIELDS), "rows": len(rows)}
    if fidelity:
        _write_csv(out / "fidelity.csv", FIDELITY_FIELDS, fidelity)
        written["fidelity"] = {"file": "fidelity.csv", "fields": list(FIDELITY_FIELDS), "rows": len(fidelity)}
    manifest = {"schema_version": PLOTDATA_VERSION, "files": written}
    (out / "plotdata.json").write_text(json.dumps(manifest, indent=1))
    return manifest


# ---------------------------------------------------------------------------
# end-to-end


def select_pair(cfg: ExperimentConfig, sweep: SweepResult):
    if cfg.eval_N is not None:
        return (cfg.eval_J if cfg.eval_J is not None else cfg.J_list[0]), cfg.eval_N
    J = cfg.eval_J if cfg.eval_J is not None else cfg.J_list[0]
    match = [j for j in sweep.selection if np.isclose(j, J)]
    if not match:
        return None
    return match[0], sweep.selection[match[0]]


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1, params: ParamSet | None = None):
    """Train (unless ``params`` given), sweep, attack and evaluate.

    Writes the config snapshot, params, curves, adversarial sets and the
    RunRecord under ``out_dir`` when one is given.
    """
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    train_set, test_set = prepare_data(cfg)
    if params is None:
        model, params, curve = train_model(cfg, train_set, test_set)
    else:
        model, curve = build_model(params.spec), []
    sweep_imgs, sweep_labels = test_set.images[: cfg.sweep_n], test_set.labels[: cfg.sweep_n]
    sweep = sweep_jn(model, params, sweep_imgs, sweep_labels, cfg.J_list, cfg.N_list, cfg.budget, cfg.defense, threads)
    pair = select_pair(cfg, sweep)
    if pair is None:
        raise ConfigError("sweep admitted no (J, N) pair at the evaluation strength")
    encoder = defense_encoder(model, cfg.defense, *pair)
    specs = cfg.attack_specs()
    adv = generate_adversarial(model, params, test_set.images, test_set.labels, specs)
    record = evaluate_defense(model, params, test_set.images, test_set.labels, encoder, specs, adv,
                              config_hash=cfg.hash(), dataset=cfg.dataset)
    record.wall_time = time.perf_counter() - t0
    if out is not None:
        params.save(out / "params.json")
        if curve:
            write_curve(curve, out / "train_curve.csv")
        for s in specs:
            if s.epsilon > 0:
                save_adversarial(out / f"adv_{s.kind}_{s.epsilon:g}", adv[(s.kind, float(s.epsilon))],
                                 s, params.digest(), cfg.seed)
        test_set.write_provenance(out / "test_provenance.json")
        record.save(out / "record.json")
        emit_plotdata(out, cfg.model, cfg.dataset, sweep=sweep, records=[record])
    return record, sweep, params
