"""Simulation study: simulate samples from the two-type truth, fit each, summarize."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import EMConfig, fit
from .inside_outside import MULTISET
from .model import OffspringModel, study_truth_model, uniform_init
from .simulator import LARGE_TREES, SMALL_TREES, SimConfig, simulate_sample

TREE_SIZES = {"small": SMALL_TREES, "large": LARGE_TREES}
SAMPLE_SIZES = (20, 50, 100)
MAX_DEPTH = 64

# column order of the printed table
COLUMNS = ("T1 -> T1t", "T1 -> T1 T1", "T1 -> T1 T2", "T2 -> T2t", "T2 -> T2 T2")
HEADERS = ("p1_T", "p1_11", "p1_12", "p2_T", "p2_22")


def sample_seed(master: int, i: int) -> int:
    return int(np.random.SeedSequence([master, i]).generate_state(1)[0])


@dataclass
class StudyResult:
    estimates: np.ndarray  # (samples, len(COLUMNS))
    converged: list[bool]
    iterations: list[int]
    settings: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def std(self) -> np.ndarray | None:
        if len(self.estimates) < 2:
            return None
        return self.estimates.std(axis=0, ddof=1)

    def column(self, name: str) -> np.ndarray:
        return self.estimates[:, COLUMNS.index(name)]

    def table(self) -> str:
        head = f"size {self.settings['sample_size']}"
        rows = [[head, *HEADERS]]
        for i, est in enumerate(self.estimates):
            rows.append([f"s.{i + 1}", *(f"{v:.2f}" for v in est)])
        rows.append(["mean", *(f"{v:.2f}" for v in self.mean)])
        if self.std is not None:
            rows.append(["st.dev.", *(f"{v:.2f}" for v in self.std)])
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        return "\n".join(
            "  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths)))
            for r in rows
        ) + "\n"


def _one_sample(args):
    truth, cfg, em_cfg = args
    _, obs = simulate_sample(truth, cfg)
    result = fit(uniform_init(truth), obs, em_cfg)
    idx = [result.model.find(c) for c in COLUMNS]
    return result.model.probabilities[idx], result.converged, result.iterations


def run_study(samples: int, sample_size: int, tree_size: str, seed: int, mode: str = MULTISET,
              max_iter: int = 200, jobs: int = 1, truth: OffspringModel | None = None) -> StudyResult:
    if samples < 1:
        raise ValueError("need at least one sample")
    if tree_size not in TREE_SIZES:
        raise ValueError(f"tree size must be one of {sorted(TREE_SIZES)}")
    truth = truth or study_truth_model()
    bounds = TREE_SIZES[tree_size]
    em_cfg = EMConfig(mode=mode, max_iter=max_iter)
    tasks = [
        (truth, SimConfig(root=0, seed=sample_seed(seed, i), count=sample_size,
                          max_depth=MAX_DEPTH, size_bounds=bounds), em_cfg)
        for i in range(samples)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            out = list(pool.map(_one_sample, tasks))
    else:
        out = [_one_sample(t) for t in tasks]
    settings = {
        "samples": samples,
        "sample_size": sample_size,
        "tree_size": tree_size,
        "size_bounds": list(bounds),
        "max_depth": MAX_DEPTH,
        "seed": seed,
        "sample_seeds": [t[1].seed for t in tasks],
        "mode": mode,
        "max_iter": max_iter,
        "init": "uniform",
    }
    return StudyResult(
        np.array([o[0] for o in out]), [o[1] for o in out], [o[2] for o in out], settings
    )
