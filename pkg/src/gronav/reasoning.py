"""Exemplar pool, traversability table and in-context estimation.

The pool keeps the most recent ``K`` exemplars per terrain label. Estimates
are per class: a query patch is resolved to its majority label and the
backend is asked for that label's traversability given the label's
exemplars. With the mock backend that is the mean of the exemplar taus.
"""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Literal, Sequence

from .proprioception import Exemplar
from .world import PatchDescriptor, TerrainClass, WorldGrid

if TYPE_CHECKING:
    from .backends import VlmBackend

log = logging.getLogger(__name__)

Provenance = Literal["prior", "grounded"]


class UnknownLabelError(KeyError):
    pass


class ExemplarPool:
    def __init__(self, classes: Sequence[TerrainClass], capacity: int = 8):
        if capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        self.classes = tuple(classes)
        self.capacity = capacity
        self._buffers: dict[str, deque[Exemplar]] = {c.label: deque(maxlen=capacity) for c in classes}

    @property
    def labels(self) -> list[str]:
        return list(self._buffers)

    def prior(self, label: str) -> float:
        for c in self.classes:
            if c.label == label:
                return c.prior_tau
        raise UnknownLabelError(label)

    def buffer(self, label: str) -> list[Exemplar]:
        if label not in self._buffers:
            raise UnknownLabelError(label)
        return list(self._buffers[label])

    def recent(self, label: str, k: int | None = None) -> list[Exemplar]:
        """Newest first."""
        items = list(reversed(self.buffer(label)))
        return items if k is None else items[:k]

    def add(self, exemplar: Exemplar) -> None:
        if exemplar.label not in self._buffers:
            raise UnknownLabelError(f"exemplar label {exemplar.label!r} is not a scenario class")
        self._buffers[exemplar.label].append(exemplar)

    def __len__(self) -> int:
        return sum(len(b) for b in self._buffers.values())


def update_pool(pool: ExemplarPool, exemplar: Exemplar) -> ExemplarPool:
    pool.add(exemplar)
    return pool


@dataclass
class TraversabilityTable:
    values: dict[str, float]
    provenance: dict[str, Provenance]
    last_update: float = 0.0

    def __getitem__(self, label: str) -> float:
        return self.values[label]

    def copy(self) -> "TraversabilityTable":
        return TraversabilityTable(dict(self.values), dict(self.provenance), self.last_update)

    def grounded(self) -> list[str]:
        return [k for k, v in self.provenance.items() if v == "grounded"]

    @classmethod
    def from_priors(cls, classes: Iterable[TerrainClass]) -> "TraversabilityTable":
        classes = list(classes)
        return cls({c.label: c.prior_tau for c in classes}, {c.label: "prior" for c in classes})


@dataclass(frozen=True)
class Estimate:
    label: str
    tau: float
    provenance: Provenance


@dataclass(frozen=True)
class PromptTemplate:
    system: str = (
        "You estimate terrain traversability for a ground robot. "
        "tau is 0 for fully traversable ground and 1 for impassable ground. "
        "Use the measured examples as ground truth for how this robot experiences each terrain."
    )
    exemplar_format: str = "example {index}: terrain={label} composition={histogram} measured_tau={tau:.2f}"
    query_format: str = "query: terrain={label} composition={histogram}"
    weather_format: str = "weather: {weather}"
    answer_format: str = 'Answer with a fenced JSON object {"tau": <number between 0 and 1>}.'

    def render(
        self,
        exemplars: Sequence[Exemplar],
        query_label: str,
        query: PatchDescriptor | None = None,
        weather: str = "",
    ) -> str:
        lines = [self.system, self.weather_format.format(weather=weather or "unknown")]
        for i, ex in enumerate(exemplars, 1):
            lines.append(
                self.exemplar_format.format(
                    index=i, label=ex.label, histogram=_hist_text(ex.aerial), tau=ex.tau_shifted
                )
            )
        lines.append(
            self.query_format.format(label=query_label, histogram=_hist_text(query) if query else "n/a")
        )
        lines.append(self.answer_format)
        return "\n".join(lines)


_TAU_RE = re.compile(r"measured_tau=([0-9]*\.?[0-9]+)")


def parse_exemplar_taus(text: str) -> list[float]:
    return [float(m) for m in _TAU_RE.findall(text)]


def _hist_text(patch: PatchDescriptor) -> str:
    return ",".join(f"{k}:{v:.2f}" for k, v in patch.class_histogram.items())


def resolve_label(query: PatchDescriptor | str) -> str:
    return query if isinstance(query, str) else query.majority_label


# -- operations ---------------------------------------------------------------


def init_terrain_classes(backend: "VlmBackend", grid: WorldGrid, weather: str) -> TraversabilityTable:
    table = TraversabilityTable.from_priors(grid.classes)
    try:
        overrides = backend.init_classes(grid, weather) or {}
    except Exception as exc:  # noqa: BLE001 - any backend failure falls back to priors
        log.warning("terrain class initialisation failed, using priors: %s", exc)
        overrides = {}
    for label, tau in overrides.items():
        if label not in table.values:
            log.warning("backend returned unknown label %r; ignored", label)
            continue
        table.values[label] = min(max(float(tau), 0.0), 1.0)
    return table


def estimate_traversability(
    backend: "VlmBackend",
    prompt: PromptTemplate,
    pool: ExemplarPool,
    query: PatchDescriptor | str,
    table: TraversabilityTable | None = None,
    weather: str = "",
) -> Estimate:
    label = resolve_label(query)
    exemplars = pool.recent(label, pool.capacity)
    fallback = table[label] if table is not None else pool.prior(label)
    if not exemplars:
        return Estimate(label, fallback, "prior")
    patch = query if isinstance(query, PatchDescriptor) else None
    try:
        tau = backend.estimate(prompt, exemplars, label, patch, weather)
    except Exception as exc:  # noqa: BLE001
        log.warning("estimate for %r failed: %s", label, exc)
        tau = None
    if tau is None:
        log.warning("estimate for %r degraded to last table value %.3f", label, fallback)
        return Estimate(label, fallback, table.provenance[label] if table is not None else "prior")
    return Estimate(label, min(max(float(tau), 0.0), 1.0), "grounded")


def refresh_table(
    table: TraversabilityTable,
    backend: "VlmBackend",
    pool: ExemplarPool,
    prompt: PromptTemplate | None = None,
    t: float | None = None,
    weather: str = "",
    labels: Iterable[str] | None = None,
) -> TraversabilityTable:
    """Re-estimate every label with exemplars (or just ``labels``); others untouched."""
    prompt = prompt or PromptTemplate()
    new = table.copy()
    todo = pool.labels if labels is None else list(labels)
    touched = False
    for label in todo:
        if not pool.buffer(label):
            continue
        est = estimate_traversability(backend, prompt, pool, label, table, weather)
        new.values[label] = est.tau
        if est.provenance == "grounded":
            new.provenance[label] = "grounded"
        touched = True
    if touched and t is not None:
        new.last_update = t
    return new


@dataclass
class ReasoningState:
    """Per-trial pool and table with snapshot semantics for readers."""

    pool: ExemplarPool
    table: TraversabilityTable
    prompt: PromptTemplate = field(default_factory=PromptTemplate)
    frozen: bool = False

    def snapshot(self) -> TraversabilityTable:
        return self.table.copy()
