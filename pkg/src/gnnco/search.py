"""One-shot evolutionary co-search over (subnetwork, accelerator) pairs.

The pool grows by mutating its fittest members and shrinks by dropping its
least fit ones until the average fitness of the current top designs reaches
the target (or a generation cap trips). Fitness combines estimated accuracy
with inverse simulated latency, calibrated so both terms land on comparable
scales.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .accel import (
    KERNEL_MODES,
    TILING_MODES,
    AccelConfig,
    AccelSpace,
    Platform,
    SubAccConfig,
    enforce_uniform_modes,
    random_config,
    validate,
)
from .graph import RowProfile, SparseMatrix
from .simulator import simulate
from .supernet.space import LayerChoice, SubnetSpec, SupernetSpace, sample_uniform
from .workload import parse_subnet

NEG_INF = float("-inf")


@dataclass
class Candidate:
    gnet: SubnetSpec
    hw: AccelConfig
    fitness: float | None = None
    accuracy: float | None = None
    latency_seconds: float | None = None
    uid: int = -1

    def key(self) -> tuple:
        hw = self.hw
        return (
            self.gnet.key(),
            hw.buffer_repurposing, hw.wbuf_sharing,
            tuple((s.tiling_mode, s.kernel_mode, s.tile_size_index, s.pe_count)
                  for s in hw.sub_accs),
        )

    def to_json_dict(self) -> dict:
        return {
            "gnet": self.gnet.to_json_dict(),
            "hw": self.hw.to_json_dict(),
            "fitness": self.fitness,
            "accuracy": self.accuracy,
            "latency_seconds": self.latency_seconds,
            "uid": self.uid,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Candidate":
        return cls(
            gnet=SubnetSpec.from_json_dict(d["gnet"]),
            hw=AccelConfig.from_json_dict(d["hw"]),
            fitness=d.get("fitness"),
            accuracy=d.get("accuracy"),
            latency_seconds=d.get("latency_seconds"),
            uid=int(d.get("uid", -1)),
        )


@dataclass(frozen=True)
class SearchParams:
    target: float
    n_outputs: int = 5
    pool_max: int = 100
    birth_rate: float = 0.2
    max_generations: int = 500
    mutation_rate: float = 0.5
    latency_weight: float | None = None  # None: calibrated from the first pool
    latency_ref: float | None = None     # None: calibrated from the first pool
    seed: int = 0
    checkpoint_every: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.birth_rate <= 1.0:
            raise ValueError("birth_rate must lie in (0, 1]")
        if int(round(self.birth_rate * self.pool_max)) < 1:
            raise ValueError("birth_rate * pool_max must be >= 1")
        if self.n_outputs > self.pool_max:
            raise ValueError("n_outputs cannot exceed pool_max")

    @property
    def n_birth(self) -> int:
        return int(round(self.birth_rate * self.pool_max))


@dataclass(frozen=True)
class CandidateSpaces:
    gnet: SupernetSpace
    accel: AccelSpace

    def random_candidate(self, rng: np.random.Generator) -> Candidate:
        return Candidate(gnet=sample_uniform(self.gnet, rng),
                         hw=random_config(self.accel, rng))


def mutate(c: Candidate, spaces: CandidateSpaces, rng: np.random.Generator,
           rate: float = 0.5) -> Candidate:
    """Re-sample each design attribute with probability ``rate``; a redraw may
    land on the current value. Mode uniformity is re-enforced afterwards and
    the fitness is cleared."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("mutation rate must lie in [0, 1]")
    layers = []
    for choice, layer in zip(c.gnet.layers, spaces.gnet.layers):
        picks = []
        for value, options in zip(choice.as_tuple(), layer.option_lists()):
            if rng.random() < rate:
                value = options[rng.integers(len(options))]
            picks.append(value)
        layers.append(LayerChoice(*picks))
    gnet = SubnetSpec(layers=tuple(layers))

    hw = c.hw
    repurpose = hw.buffer_repurposing
    share = hw.wbuf_sharing
    if rng.random() < rate:
        repurpose = bool(rng.integers(2))
    if rng.random() < rate:
        share = bool(rng.integers(2))
    subs = []
    for s in hw.sub_accs:
        tm, km, idx, pe = (s.tiling_mode, s.kernel_mode, s.tile_size_index,
                           s.pe_count)
        if rng.random() < rate:
            tm = int(rng.integers(len(TILING_MODES)))
        if rng.random() < rate:
            km = int(rng.integers(len(KERNEL_MODES)))
        if rng.random() < rate:
            idx = int(rng.integers(spaces.accel.n_tile_options))
        subs.append(SubAccConfig(tm, km, idx, pe))
    if spaces.accel.mutate_pe_split and rng.random() < rate:
        subs = _redraw_pe_split(subs, spaces.accel, rng)
    hw = AccelConfig(buffer_repurposing=repurpose, wbuf_sharing=share,
                     sub_accs=tuple(subs),
                     allocation_scheme=hw.allocation_scheme)
    hw = enforce_uniform_modes(hw)
    return Candidate(gnet=gnet, hw=hw)


def _redraw_pe_split(subs, accel_space: AccelSpace, rng) -> list:
    total = accel_space.platform.total_pes
    s = len(subs)
    cuts = np.sort(rng.integers(0, total - s + 1, size=s - 1)) if s > 1 else []
    shares = np.diff(np.concatenate([[0], cuts, [total - s]])) + 1
    return [replace(sub, pe_count=int(p)) for sub, p in zip(subs, shares)]


# ---------------------------------------------------------------------------
# fitness
# ---------------------------------------------------------------------------

class CoSearchFitness:
    """Default fitness: estimated accuracy plus weighted inverse latency.

    fit = accuracy + weight * (latency_ref / latency). The reference latency
    and weight are frozen from the first evaluated batch (median latency and
    mean accuracy of the valid candidates) unless given explicitly, so both
    terms contribute on similar scales. Invalid configurations get -inf.
    """

    def __init__(self, accuracy_fn, num_nodes: int, in_features: int,
                 num_classes: int, profile: RowProfile,
                 platform: Platform, accel_space: AccelSpace,
                 support_csr: SparseMatrix | None = None,
                 latency_weight: float | None = None,
                 latency_ref: float | None = None, workers: int = 1):
        self.accuracy_fn = accuracy_fn
        self.num_nodes = num_nodes
        self.in_features = in_features
        self.num_classes = num_classes
        self.profile = profile
        self.support_csr = support_csr
        self.platform = platform
        self.accel_space = accel_space
        self.latency_weight = latency_weight
        self.latency_ref = latency_ref
        self.workers = max(1, workers)
        self._acc_cache: dict = {}
        self._lat_cache: dict = {}

    # -- calibration state (for checkpointing) -----------------------------

    def calibration(self) -> dict:
        return {"latency_weight": self.latency_weight,
                "latency_ref": self.latency_ref}

    def restore_calibration(self, d: dict) -> None:
        self.latency_weight = d.get("latency_weight")
        self.latency_ref = d.get("latency_ref")

    @property
    def calibrated(self) -> bool:
        return self.latency_weight is not None and self.latency_ref is not None

    # -- evaluation ---------------------------------------------------------

    def _accuracy(self, gnet: SubnetSpec) -> float:
        key = gnet.key()
        if key not in self._acc_cache:
            self._acc_cache[key] = float(self.accuracy_fn(gnet))
        return self._acc_cache[key]

    def _latency(self, cand: Candidate) -> float:
        """Simulated latency in seconds; inf for invalid configurations."""
        key = cand.key()
        if key in self._lat_cache:
            return self._lat_cache[key]
        workloads = parse_subnet(cand.gnet, self.num_nodes, self.in_features,
                                 self.num_classes, self.profile,
                                 support_csr=self.support_csr)
        violations = validate(cand.hw, self.platform, workloads,
                              space=self.accel_space)
        if violations:
            lat = math.inf
        else:
            rep = simulate(workloads, cand.hw, self.platform,
                           self.accel_space, check=False)
            lat = rep.latency_seconds
        self._lat_cache[key] = lat
        return lat

    def _metrics(self, cand: Candidate) -> tuple[float, float]:
        return self._accuracy(cand.gnet), self._latency(cand)

    def evaluate_batch(self, cands: list[Candidate]) -> None:
        if self.workers > 1 and len(cands) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                metrics = list(pool.map(self._metrics, cands))
        else:
            metrics = [self._metrics(c) for c in cands]
        if not self.calibrated:
            self._calibrate(metrics)
        for cand, (acc, lat) in zip(cands, metrics):
            cand.accuracy = acc
            cand.latency_seconds = lat if math.isfinite(lat) else None
            cand.fitness = self.fitness_value(acc, lat)

    def _calibrate(self, metrics) -> None:
        valid = [(a, l) for a, l in metrics if math.isfinite(l)]
        if not valid:
            return  # calibrate on a later batch
        accs = np.asarray([a for a, _ in valid])
        lats = np.asarray([l for _, l in valid])
        if self.latency_ref is None:
            self.latency_ref = float(np.median(lats))
        if self.latency_weight is None:
            self.latency_weight = float(accs.mean())

    def fitness_value(self, accuracy: float, latency: float) -> float:
        if not math.isfinite(latency):
            return NEG_INF
        weight = self.latency_weight if self.latency_weight is not None else 0.0
        ref = self.latency_ref if self.latency_ref is not None else latency
        return accuracy + weight * (ref / latency)


def fitness(cand: Candidate, context: CoSearchFitness) -> float:
    """Evaluate one candidate in place and return its fitness."""
    context.evaluate_batch([cand])
    return cand.fitness


# ---------------------------------------------------------------------------
# the evolutionary loop
# ---------------------------------------------------------------------------

@dataclass
class GenerationRecord:
    generation: int
    pool_size: int
    fit_avg: float
    best_fitness: float

    def to_json_dict(self) -> dict:
        return {"generation": self.generation, "pool_size": self.pool_size,
                "fit_avg": self.fit_avg, "best_fitness": self.best_fitness}


@dataclass
class EvolveResult:
    candidates: list
    converged: bool
    generations: int
    history: list
    pool: list


def _sort_key(c: Candidate):
    fit = c.fitness if c.fitness is not None else NEG_INF
    lat = c.latency_seconds if c.latency_seconds is not None else math.inf
    return (-fit, lat, c.uid)


def top_candidates(pool: list, k: int) -> list:
    return sorted(pool, key=_sort_key)[:k]


def evolve(params: SearchParams, spaces: CandidateSpaces,
           context, rng: np.random.Generator,
           state: dict | None = None,
           checkpoint_path=None, on_generation=None) -> EvolveResult:
    """Grow-or-trim loop returning the top designs once the average fitness
    of the current top ``n_outputs`` reaches the target.

    At least one generation always runs so a trivially met target still
    yields evaluated designs. ``state`` resumes from a saved checkpoint.
    """
    n_birth = params.n_birth
    pool: list[Candidate] = []
    history: list[GenerationRecord] = []
    fit_avg = NEG_INF
    gen = 0
    next_uid = 0
    if state is not None:
        pool = [Candidate.from_json_dict(d) for d in state["pool"]]
        gen = int(state["generation"])
        next_uid = int(state["next_uid"])
        fit_avg = float(state["fit_avg"])
        rng.bit_generator.state = state["rng_state"]
        if hasattr(context, "restore_calibration"):
            context.restore_calibration(state.get("calibration", {}))

    while gen < params.max_generations:
        if gen > 0 and pool and fit_avg >= params.target:
            break
        # one generation: shed the over-capacity bottom, then one birth round
        if len(pool) > params.pool_max:
            pool = sorted(pool, key=_sort_key)[:len(pool) - n_birth]
        if not pool:
            born = [spaces.random_candidate(rng) for _ in range(n_birth)]
        else:
            parents = top_candidates(pool, n_birth)
            born = [mutate(p, spaces, rng, params.mutation_rate)
                    for p in parents]
        for c in born:
            c.uid = next_uid
            next_uid += 1
        context.evaluate_batch(born)
        pool.extend(born)
        top = top_candidates(pool, params.n_outputs)
        fits = [c.fitness for c in top if c.fitness is not None]
        fit_avg = float(np.mean(fits)) if fits else NEG_INF
        best = fits[0] if fits else NEG_INF
        history.append(GenerationRecord(gen, len(pool), fit_avg, best))
        gen += 1
        if on_generation is not None:
            on_generation(history[-1])
        if (checkpoint_path and params.checkpoint_every
                and gen % params.checkpoint_every == 0):
            save_search_state(checkpoint_path, pool, gen, next_uid, fit_avg,
                              rng, context)

    return EvolveResult(
        candidates=top_candidates(pool, params.n_outputs),
        converged=bool(pool) and fit_avg >= params.target,
        generations=gen,
        history=history,
        pool=pool,
    )


def save_search_state(path, pool, generation: int, next_uid: int,
                      fit_avg: float, rng: np.random.Generator,
                      context=None) -> None:
    state = {
        "pool": [c.to_json_dict() for c in pool],
        "generation": generation,
        "next_uid": next_uid,
        "fit_avg": fit_avg,
        "rng_state": rng.bit_generator.state,
        "calibration": (context.calibration()
                        if hasattr(context, "calibration") else {}),
    }
    with open(path, "w") as fh:
        json.dump(state, fh, sort_keys=True)


def load_search_state(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def pareto_report(pool: list) -> list:
    """Non-dominated (accuracy up, latency down) members of the pool."""
    evaluated = [c for c in pool
                 if c.accuracy is not None and c.latency_seconds is not None]
    kept = []
    for c in evaluated:
        dominated = False
        for o in evaluated:
            if (o.accuracy >= c.accuracy and o.latency_seconds <= c.latency_seconds
                    and (o.accuracy > c.accuracy
                         or o.latency_seconds < c.latency_seconds)):
                dominated = True
                break
        if not dominated:
            kept.append(c)
    return sorted(kept, key=lambda c: (c.latency_seconds, -c.accuracy))
