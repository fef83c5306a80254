"""Architecture search over uniform-width MLPs: random and evolutionary."""

from __future__ import annotations

import csv
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError
from .network import ArchitectureSpec, build_layered, init_weights
from .numerics import Rng, derive_seed
from .parallel import pmap
from .training import RunRecord, TrainConfig, evaluate, fit

SEARCH_CSV_COLUMNS = (
    "strategy", "generation", "depth", "width", "activation", "optimizer",
    "fitness", "runs", "epochs", "seconds", "in_initial_population",
)
GENES = ("depth", "width", "activation", "optimizer")


@dataclass(frozen=True)
class SearchSpace:
    widths: tuple = tuple(range(100, 1001, 50))
    depths: tuple = tuple(range(1, 11))
    activations: tuple = ("relu", "tanh")
    optimizers: tuple = ("sgd", "rmsprop")

    def choices(self, gene):
        return {
            "depth": self.depths,
            "width": self.widths,
            "activation": self.activations,
            "optimizer": self.optimizers,
        }[gene]

    @property
    def cardinality(self):
        return math.prod(len(self.choices(g)) for g in GENES)

    def __contains__(self, spec):
        return all(getattr(spec, g) in self.choices(g) for g in GENES)

    def enumerate(self):
        return [
            ArchitectureSpec(d, w, a, o)
            for d in self.depths for w in self.widths
            for a in self.activations for o in self.optimizers
        ]


@dataclass(frozen=True)
class EvolutionParams:
    population_size: int = 50
    mutation_chance: float = 0.10
    retain_rate: float = 0.40
    random_select_rate: float = 0.10
    dedupe: bool = False
    budget: int = 200

    def __post_init__(self):
        for name in ("mutation_chance", "retain_rate", "random_select_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.population_size < 1 or self.budget < 1:
            raise ConfigError("population_size and budget must be >= 1")
        if self.retained > self.population_size:
            raise ConfigError("retained parents exceed the population")

    @property
    def retained(self):
        return math.ceil(self.retain_rate * self.population_size)


@dataclass
class EvaluatedSpec:
    spec: ArchitectureSpec
    fitness: float
    records: list = field(default_factory=list)
    generation: int = 0
    diverged: bool = False
    test_fitness: float = float("nan")
    seconds: float = 0.0
    runs: int = 0
    epochs: int = 0


# -- sampling and variation --------------------------------------------------

def sample_random(space: SearchSpace, rng: Rng) -> ArchitectureSpec:
    """Each gene drawn independently and uniformly."""
    return ArchitectureSpec(*(rng.choice(space.choices(g)) for g in GENES))


def breed(a: ArchitectureSpec, b: ArchitectureSpec, rng: Rng) -> ArchitectureSpec:
    """Uniform crossover: every gene comes from ``a`` or ``b`` with probability 1/2."""
    picks = rng.random(len(GENES)) < 0.5
    return ArchitectureSpec(*(getattr(a if p else b, g) for g, p in zip(GENES, picks)))


def mutate(spec: ArchitectureSpec, space: SearchSpace, rng: Rng, chance: float) -> ArchitectureSpec:
    """With probability ``chance`` resample one uniformly chosen gene."""
    if not 0.0 <= chance <= 1.0:
        raise ConfigError("mutation chance must lie in [0, 1]")
    if rng.random() >= chance:
        return spec
    gene = GENES[int(rng.integers(len(GENES)))]
    return replace(spec, **{gene: rng.choice(space.choices(gene))})


# -- fitness -----------------------------------------------------------------

def evaluate_fitness(spec, data, runs=3, epochs=3, rng=None, base_cfg=None):
    """Train ``spec`` ``runs`` times for exactly ``epochs`` epochs.

    Fitness is the mean final validation accuracy; any diverged run sets it
    to 0 and raises the ``diverged`` flag. Test accuracy is logged alongside.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    rng = rng or Rng(0)
    base_cfg = base_cfg or TrainConfig()
    cfg = replace(base_cfg, optimizer=spec.optimizer, max_epochs=epochs, patience=None,
                  restore_best=False, learning_rate=None if base_cfg.optimizer != spec.optimizer
                  else base_cfg.learning_rate)
    train, val, test = data.train, data.val, data.test
    t0 = time.perf_counter()
    vals, tests, records = [], [], []
    diverged = False
    for r in range(runs):
        run_rng = rng.derive(r)
        net = init_weights(build_layered(train.dim, spec.hidden, train.class_count), run_rng.derive(0))
        try:
            net, record = fit(net, train, val, cfg, run_rng.derive(1))
        except DivergenceError:
            diverged = True
            records.append(RunRecord(diverged=True))
            continue
        vals.append(record.final("val_acc"))
        if len(test):
            record.test_acc = evaluate(net, test)[1]
            tests.append(record.test_acc)
        records.append(record)
    fitness = 0.0 if diverged else float(np.mean(vals))
    return EvaluatedSpec(
        spec=spec,
        fitness=fitness,
        records=records,
        diverged=diverged,
        test_fitness=float(np.mean(tests)) if tests and not diverged else float("nan"),
        seconds=time.perf_counter() - t0,
        runs=runs,
        epochs=epochs,
    )


def _evaluate_job(data, job):
    spec, seed, runs, epochs, cfg = job
    return evaluate_fitness(spec, data, runs, epochs, Rng(seed), cfg)


def _rank_key(e):
    return (-e.fitness, e.spec)


# -- strategies --------------------------------------------------------------

def random_search(space, n, data, rng, runs=3, epochs=3, dedupe=False, jobs=1, base_cfg=None):
    """Evaluate ``n`` uniformly sampled specs; returns them best first."""
    if n < 1:
        raise ConfigError("random search needs n >= 1")
    if dedupe and n > space.cardinality:
        raise ConfigError("cannot draw more distinct specs than the space holds")
    sampler = rng.derive(0)
    specs, seen = [], set()
    while len(specs) < n:
        s = sample_random(space, sampler)
        if dedupe and s in seen:
            continue
        seen.add(s)
        specs.append(s)
    jobs_ = [(s, derive_seed(rng.seed, 1, i), runs, epochs, base_cfg) for i, s in enumerate(specs)]
    results = pmap(_evaluate_job, jobs_, jobs, shared=data)
    return sorted(results, key=_rank_key)


def _draw_pair(n, rng):
    a = int(rng.integers(n))
    if n < 2:
        return a, a
    b = int(rng.integers(n - 1))
    return a, b + (b >= a)


def evolve(space, params: EvolutionParams, data, rng, runs=3, epochs=3, jobs=1, base_cfg=None,
           max_retries=10):
    """Generational evolution: evaluate, keep the fittest, add random picks, breed.

    Returns the final population and, per generation, the evaluated
    members of that generation (retained parents are not retrained and keep
    their original ``generation``).
    """
    P = params.population_size
    if params.dedupe and P > space.cardinality:
        raise ConfigError("population larger than the space with dedupe on")
    sampler = rng.derive(0)
    select_rng = rng.derive(2)
    breed_rng = rng.derive(3)

    specs = []
    while len(specs) < P:
        s = sample_random(space, sampler)
        if params.dedupe and s in specs:
            continue
        specs.append(s)
    members = [(s, None) for s in specs]

    history = []
    evaluated = 0
    generation = 0
    while True:
        pending = [i for i, (_, res) in enumerate(members) if res is None]
        jobs_ = [
            (members[i][0], derive_seed(rng.seed, 1, evaluated + j), runs, epochs, base_cfg)
            for j, i in enumerate(pending)
        ]
        for i, res in zip(pending, pmap(_evaluate_job, jobs_, jobs, shared=data)):
            res.generation = generation
            members[i] = (members[i][0], res)
        evaluated += len(pending)
        history.append([res for _, res in members])
        if evaluated >= params.budget:
            break

        order = sorted(range(P), key=lambda i: _rank_key(members[i][1]))
        k = params.retained
        parents = order[:k]
        for i in order[k:]:
            if select_rng.random() < params.random_select_rate:
                parents.append(i)
        parent_specs = [members[i][0] for i in parents]
        taken = set(parent_specs)
        children = []
        while len(parents) + len(children) < P:
            child = None
            for _ in range(max_retries + 1):
                a, b = _draw_pair(len(parent_specs), breed_rng)
                child = mutate(breed(parent_specs[a], parent_specs[b], breed_rng), space, breed_rng,
                               params.mutation_chance)
                if not params.dedupe or child not in taken:
                    break
            else:
                child = sample_random(space, breed_rng)
                while child in taken:
                    child = sample_random(space, breed_rng)
            taken.add(child)
            children.append(child)
        members = [members[i] for i in parents] + [(c, None) for c in children]
        generation += 1
    return [res for _, res in members], history


def evaluations_from_history(history):
    """Unique evaluation events in generation order (retained parents counted once)."""
    seen = set()
    out = []
    for gen in history:
        for e in gen:
            if id(e) not in seen:
                seen.add(id(e))
                out.append(e)
    return out


# -- analytics and output ----------------------------------------------------

@dataclass
class ExplorationReport:
    total_evaluations: int = 0
    distinct_specs: int = 0
    space_fraction: float = 0.0
    initial_fraction: float = 0.0
    histograms: dict = field(default_factory=dict)

    def csv_rows(self):
        for gene in GENES:
            for value, visits in sorted(self.histograms.get(gene, {}).items()):
                yield {"dimension": gene, "value": value, "visits": visits}


def exploration_report(evaluations, space, initial_population=()):
    """Coverage of the space and dependence on the initial population."""
    evaluations = list(evaluations)
    if not evaluations:
        return ExplorationReport(histograms={g: {} for g in GENES})
    specs = [e.spec if isinstance(e, EvaluatedSpec) else e for e in evaluations]
    initial = set(initial_population)
    distinct = set(specs)
    return ExplorationReport(
        total_evaluations=len(specs),
        distinct_specs=len(distinct),
        space_fraction=len(distinct) / space.cardinality,
        initial_fraction=sum(s in initial for s in specs) / len(specs),
        histograms={g: dict(Counter(getattr(s, g) for s in specs)) for g in GENES},
    )


def search_rows(strategy, evaluations, initial_population=None, timing=True):
    initial = set(initial_population) if initial_population is not None else None
    for e in evaluations:
        yield {
            "strategy": strategy,
            "generation": e.generation,
            "depth": e.spec.depth,
            "width": e.spec.width,
            "activation": e.spec.activation,
            "optimizer": e.spec.optimizer,
            "fitness": repr(float(e.fitness)),
            "runs": e.runs,
            "epochs": e.epochs,
            "seconds": f"{e.seconds:.4f}" if timing else "",
            "in_initial_population": "" if initial is None else int(e.spec in initial),
        }


def write_search_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SEARCH_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
