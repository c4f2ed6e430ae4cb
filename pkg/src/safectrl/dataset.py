"""Parameter-space sampling and rollout labeling on a fixed map.

Each 4-vector (p1, p2, q1, q2) is rolled out on the training scenario:
samples violating the barrier-chain start condition are discarded before
labeling; the rest get +1 if every step's QP solved and the robot converged
within the horizon, else -1. +1 samples carry their robustness value D.
"""

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import ClassKParams, initial_condition_check, speed_limit_cbfs
from .controller import ControllerConfig, build_obstacle_specs, rollout_scenario
from .persistence import atomic_write_text
from .scenario import Scenario, scenario_from_dict, training_scenario

P_HIGH = 3.0  # penalties sampled uniformly over (0, 3]
Q_HIGH = 2.0  # powers sampled uniformly over (0, 2]


@dataclass(frozen=True)
class FeasibilitySample:
    params: ClassKParams
    label: Optional[int]  # +1 | -1 | None when discarded
    D: Optional[float]  # present iff label == +1
    discarded: bool = False

    def __post_init__(self):
        if self.discarded and self.label is not None:
            raise ValueError("discarded samples carry no label")
        if self.label == 1 and self.D is None:
            raise ValueError("feasible samples must carry D")


@dataclass
class FeasibilityDataset:
    samples: list
    seed: int
    scenario_hash: str
    scenario: Scenario
    cfg: ControllerConfig

    @property
    def labeled(self) -> list:
        return [s for s in self.samples if not s.discarded]

    @property
    def n_discarded(self) -> int:
        return sum(1 for s in self.samples if s.discarded)

    @property
    def feasible_fraction(self) -> float:
        lab = self.labeled
        if not lab:
            return float("nan")
        return sum(1 for s in lab if s.label == 1) / len(lab)

    def matrix(self) -> tuple:
        """(X, y) arrays of the labeled samples for classifier training."""
        lab = self.labeled
        X = np.array([s.params.as_array() for s in lab])
        y = np.array([s.label for s in lab], dtype=float)
        return X, y

    def best_feasible_D(self) -> float:
        ds = [s.D for s in self.labeled if s.label == 1]
        return min(ds) if ds else float("nan")

    def prefix(self, count: int) -> "FeasibilityDataset":
        """The dataset that build_dataset(count, same seed) would produce."""
        if count > len(self.samples):
            raise ValueError(f"prefix {count} exceeds dataset size {len(self.samples)}")
        return FeasibilityDataset(
            samples=self.samples[:count],
            seed=self.seed,
            scenario_hash=self.scenario_hash,
            scenario=self.scenario,
            cfg=self.cfg,
        )


def sample_params(count: int, seed: int) -> list:
    """I.i.d. uniform draws; a shorter draw is a prefix of a longer one."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    raw = rng.random((count, 4))  # row-major fill keeps the prefix property
    out = []
    for r in raw:
        p = (P_HIGH * (1.0 - r[0]), P_HIGH * (1.0 - r[1]))  # maps [0,1) -> (0, hi]
        q = (Q_HIGH * (1.0 - r[2]), Q_HIGH * (1.0 - r[3]))
        out.append(ClassKParams(p, q))
    return out


def scenario_hash(scenario: Scenario, cfg: ControllerConfig) -> str:
    blob = json.dumps(
        {"scenario": scenario.descriptor(), "controller": asdict(cfg)}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def label_params(params: ClassKParams, scenario: Scenario, cfg: ControllerConfig) -> FeasibilitySample:
    """Discard on the start-condition rule, otherwise roll out and label."""
    cfg = cfg.for_scenario(scenario)
    specs = build_obstacle_specs(scenario, params)
    speed = speed_limit_cbfs(cfg.v_min, cfg.v_max)
    if not initial_condition_check(specs + speed, scenario.start.as_array()):
        return FeasibilitySample(params=params, label=None, D=None, discarded=True)
    rec = rollout_scenario(scenario, cfg, params, keep_samples=False)
    if rec.feasible:
        return FeasibilitySample(params=params, label=1, D=rec.D)
    return FeasibilitySample(params=params, label=-1, D=None)


def _label_star(args):
    return label_params(*args)


def build_dataset(
    count: int,
    seed: int,
    scenario: Optional[Scenario] = None,
    cfg: Optional[ControllerConfig] = None,
    workers: int = 1,
) -> FeasibilityDataset:
    """Sample `count` parameter vectors and label them on `scenario`.

    Labeling is embarrassingly parallel; results are assembled in sample
    order so the outcome is independent of worker count.
    """
    scenario = scenario if scenario is not None else training_scenario()
    cfg = cfg if cfg is not None else ControllerConfig()
    params = sample_params(count, seed)
    jobs = [(p, scenario, cfg) for p in params]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_label_star, jobs, chunksize=max(1, count // (8 * workers))))
    else:
        samples = [label_params(*j) for j in jobs]
    return FeasibilityDataset(
        samples=samples,
        seed=seed,
        scenario_hash=scenario_hash(scenario, cfg),
        scenario=scenario,
        cfg=cfg,
    )


# ---------------------------------------------------------------------------
# persistence: CSV of labeled samples + JSON sidecar
# ---------------------------------------------------------------------------


def save_dataset(ds: FeasibilityDataset, csv_path, sidecar_path=None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["p1", "p2", "q1", "q2", "label", "D"])
    for s in ds.samples:
        if s.discarded:
            continue
        d = "" if s.D is None else repr(s.D)
        p, q = s.params.p, s.params.q
        writer.writerow([repr(p[0]), repr(p[1]), repr(q[0]), repr(q[1]), s.label, d])
    atomic_write_text(csv_path, buf.getvalue())

    sidecar_path = sidecar_path if sidecar_path is not None else str(csv_path) + ".json"
    meta = {
        "seed": ds.seed,
        "scenario_hash": ds.scenario_hash,
        "scenario": ds.scenario.descriptor(),
        "controller": asdict(ds.cfg),
        "counts": {
            "sampled": len(ds.samples),
            "discarded": ds.n_discarded,
            "labeled": len(ds.labeled),
            "feasible": sum(1 for s in ds.labeled if s.label == 1),
        },
        "feasible_fraction": ds.feasible_fraction,
        # positions + params of discarded draws, so a reload restores the
        # original sampled order (prefix semantics depend on it)
        "discarded_samples": [
            [i, *s.params.p, *s.params.q]
            for i, s in enumerate(ds.samples)
            if s.discarded
        ],
    }
    atomic_write_text(sidecar_path, json.dumps(meta, indent=2) + "\n")


def load_dataset(csv_path, sidecar_path=None) -> FeasibilityDataset:
    sidecar_path = sidecar_path if sidecar_path is not None else str(csv_path) + ".json"
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    labeled = []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            params = ClassKParams(
                (float(row["p1"]), float(row["p2"])), (float(row["q1"]), float(row["q2"]))
            )
            label = int(row["label"])
            D = float(row["D"]) if row["D"] else None
            labeled.append(FeasibilitySample(params=params, label=label, D=D))
    # weave discarded draws back into their sampled positions
    discarded = {
        int(rec[0]): FeasibilitySample(
            params=ClassKParams((rec[1], rec[2]), (rec[3], rec[4])),
            label=None,
            D=None,
            discarded=True,
        )
        for rec in meta.get("discarded_samples", [])
    }
    total = len(labeled) + len(discarded)
    samples = []
    lab_iter = iter(labeled)
    for i in range(total):
        samples.append(discarded[i] if i in discarded else next(lab_iter))
    return FeasibilityDataset(
        samples=samples,
        seed=meta["seed"],
        scenario_hash=meta["scenario_hash"],
        scenario=scenario_from_dict(meta["scenario"]),
        cfg=ControllerConfig(**meta["controller"]),
    )
