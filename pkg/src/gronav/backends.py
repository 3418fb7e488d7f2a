"""VLM backends: a deterministic mock oracle and a chat-completions client.

Both expose the same four capabilities (``init_classes``, ``classify``,
``estimate``, ``select_waypoints``). A capability returns ``None`` when it has
no usable answer; callers then fall back to their own defaults.
"""

from __future__ import annotations

import json
import logging
import os
import re
from typing import TYPE_CHECKING, Any, Protocol, Sequence

import httpx
import numpy as np

from . import render
from .world import NavigationObjective, PatchDescriptor, TerrainClass, WorldGrid

if TYPE_CHECKING:
    from .global_planner import MarkedAerialImage
    from .proprioception import Exemplar
    from .reasoning import PromptTemplate, TraversabilityTable

log = logging.getLogger(__name__)

API_KEY_ENV = "GRONAV_VLM_KEY"


class VlmBackend(Protocol):
    kind: str

    def init_classes(self, grid: WorldGrid, weather: str) -> dict[str, float] | None: ...

    def classify(self, patch: PatchDescriptor) -> str | None: ...

    def estimate(
        self,
        prompt: "PromptTemplate",
        exemplars: Sequence["Exemplar"],
        label: str,
        query: PatchDescriptor | None,
        weather: str,
    ) -> float | None: ...

    def select_waypoints(
        self, marked: "MarkedAerialImage", objective: NavigationObjective, table: "TraversabilityTable"
    ) -> list[int] | None: ...


def nearest_other_class(classes: Sequence[TerrainClass], label: str) -> str:
    """Class whose appearance is closest in RGB to ``label``'s; first declared wins ties."""
    me = next(c for c in classes if c.label == label)
    best, best_d = None, float("inf")
    for c in classes:
        if c.label == label:
            continue
        d = sum((a - b) ** 2 for a, b in zip(c.appearance, me.appearance))
        if d < best_d:
            best, best_d = c.label, d
    return best if best is not None else label


class MockBackend:
    """Deterministic stand-in for both the large and the compact model.

    classify: majority class of the patch, swapped with probability ``p_err``
    for the appearance-nearest other class. estimate: mean tau of the given
    exemplars. select_waypoints: hazard-weighted Dijkstra on the marked graph.
    """

    kind = "mock"

    def __init__(self, classes: Sequence[TerrainClass], p_err: float = 0.0, rng: np.random.Generator | None = None):
        if not 0.0 <= p_err <= 1.0:
            raise ValueError("p_err must be in [0, 1]")
        self.classes = tuple(classes)
        self.p_err = p_err
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def init_classes(self, grid: WorldGrid, weather: str) -> dict[str, float]:
        return {c.label: c.prior_tau for c in self.classes}

    def classify(self, patch: PatchDescriptor) -> str:
        label = patch.majority_label
        if self.rng.random() < self.p_err:
            return nearest_other_class(self.classes, label)
        return label

    def estimate(self, prompt, exemplars, label, query, weather) -> float | None:
        if not exemplars:
            return None
        return sum(e.tau_shifted for e in exemplars) / len(exemplars)

    def select_waypoints(self, marked, objective, table) -> list[int] | None:
        from .global_planner import dijkstra_plan

        return dijkstra_plan(marked.graph, table, objective.effective_weight, marked.start_id, marked.goal_id)


_FENCE_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def parse_fenced_json(content: str, key: str) -> Any:
    """Value of ``key`` from the first fenced JSON object in ``content``, else None."""
    m = _FENCE_RE.search(content or "")
    if not m:
        return None
    try:
        obj = json.loads(m.group(1))
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict) or key not in obj:
        return None
    return obj[key]


def _text(s: str) -> dict:
    return {"type": "text", "text": s}


def _image(img) -> dict:
    return {"type": "image_url", "image_url": {"url": "data:image/png;base64," + render.png_base64(img)}}


class RemoteBackend:
    """Chat-completions client. Any transport or format problem yields None."""

    kind = "remote"

    def __init__(
        self,
        grid: WorldGrid,
        base_url: str,
        model: str,
        timeout: float = 10.0,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.grid = grid
        self.classes = grid.classes
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.client = client or httpx.Client(timeout=timeout)
        self.calls = 0

    def request_payload(self, system: str, parts: list[dict]) -> dict:
        return {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": parts},
            ],
        }

    def _ask(self, system: str, parts: list[dict], key: str) -> Any:
        self.calls += 1
        try:
            resp = self.client.post(
                f"{self.base_url}/chat/completions",
                json=self.request_payload(system, parts),
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            log.warning("remote VLM call failed: %s", exc)
            return None
        value = parse_fenced_json(content, key)
        if value is None:
            log.warning("remote VLM response had no fenced {%r: ...} object", key)
        return value

    def classify(self, patch: PatchDescriptor) -> str | None:
        labels = [c.label for c in self.classes]
        parts = [
            _text("Classify the terrain in this image. Allowed labels: " + ", ".join(labels)),
            _image(render.render_patch(self.grid, patch)),
            _text('Answer with a fenced JSON object {"label": <one allowed label>}.'),
        ]
        label = self._ask("You are a terrain classifier for a ground robot.", parts, "label")
        if label not in labels:
            return None
        return label

    def estimate(self, prompt, exemplars, label, query, weather) -> float | None:
        parts = [_text(prompt.render(exemplars, label, query, weather))]
        for i, ex in enumerate(exemplars, 1):
            parts.append(_text(f"example {i}: terrain={ex.label} measured_tau={ex.tau_shifted:.2f}"))
            parts.append(_image(render.render_patch(self.grid, ex.aerial)))
            parts.append(_image(render.render_patch(self.grid, ex.front)))
        if query is not None:
            parts.append(_text("query image:"))
            parts.append(_image(render.render_patch(self.grid, query)))
        tau = self._ask(prompt.system, parts, "tau")
        if isinstance(tau, bool) or not isinstance(tau, (int, float)):
            return None
        return min(max(float(tau), 0.0), 1.0)

    def init_classes(self, grid: WorldGrid, weather: str) -> dict[str, float] | None:
        labels = [c.label for c in self.classes]
        aerial = render.render_grid(grid)
        out: dict[str, float] = {}
        for label in labels:
            parts = [
                _text(f"Weather: {weather}. Aerial image of the area follows. Terrain classes: {', '.join(labels)}."),
                _image(aerial),
                _text(
                    f'How hard is "{label}" terrain to traverse right now? '
                    'Answer with a fenced JSON object {"tau": <0 easy .. 1 impassable>}.'
                ),
            ]
            tau = self._ask("You assess terrain traversability from aerial imagery.", parts, "tau")
            if isinstance(tau, (int, float)) and not isinstance(tau, bool):
                out[label] = min(max(float(tau), 0.0), 1.0)
        return out

    def select_waypoints(self, marked, objective, table) -> list[int] | None:
        table_text = ", ".join(f"{k}: {v:.2f}" for k, v in table.values.items())
        parts = [
            _text(
                f"Objective: {objective.describe()}\n"
                f"Numbered circles mark candidate waypoints. Start is marker {marked.start_id}, "
                f"goal is marker {marked.goal_id}.\nTerrain traversability (0 easy, 1 impassable): {table_text}"
            ),
            _image(marked.raster()),
            _text('Answer with a fenced JSON object {"waypoints": [<marker ids from start to goal>]}.'),
        ]
        ids = self._ask("You plan routes for a ground robot on a marked aerial image.", parts, "waypoints")
        if not isinstance(ids, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
            return None
        return ids
