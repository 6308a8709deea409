"""CSV/JSON serialization of contact hypergraphs and state sequences.

Layout of a dataset directory::

    contacts.csv   t,location_id,individual_id
    states.csv     t,individual_id,state        (state in S/I/R)
    meta.json      {"num_individuals", "num_locations", "num_timesteps"}
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .episim import Population
from .hypergraph import STATE_LETTERS, DynamicHypergraph, StateSequence

CONTACTS_HEADER = ("t", "location_id", "individual_id")
STATES_HEADER = ("t", "individual_id", "state")
META_KEYS = ("num_individuals", "num_locations", "num_timesteps")


class DatasetFormatError(ValueError):
    pass


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def json_safe(obj):
    """Replace non-finite floats with None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    write_text_atomic(path, json.dumps(json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_meta(path) -> dict:
    with open(path) as fh:
        meta = json.load(fh)
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise DatasetFormatError(f"{path}: missing keys {missing}")
    for k in META_KEYS:
        if not isinstance(meta[k], int) or meta[k] < 0:
            raise DatasetFormatError(f"{path}: {k} must be a non-negative integer")
    return meta


def _read_rows(path, header, converters):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(h.strip() for h in first) != header:
            raise DatasetFormatError(f"{path}:1: expected header {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append(tuple(conv(x.strip()) for conv, x in zip(converters, row)))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    return rows


def _state_code(s: str) -> int:
    try:
        return STATE_LETTERS.index(s)
    except ValueError:
        raise ValueError(f"state {s!r} not in {{S,I,R}}") from None


def load_contacts(contacts_path, meta_path=None) -> DynamicHypergraph:
    contacts_path = Path(contacts_path)
    meta = read_meta(meta_path or contacts_path.with_name("meta.json"))
    rows = _read_rows(contacts_path, CONTACTS_HEADER, (int, int, int))
    contacts = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return DynamicHypergraph(meta["num_individuals"], meta["num_locations"], meta["num_timesteps"], contacts)


def load_states(states_path, num_individuals: int) -> StateSequence:
    rows = _read_rows(states_path, STATES_HEADER, (int, int, _state_code))
    if not rows:
        return StateSequence(np.zeros((0, num_individuals), dtype=np.int8))
    arr = np.array(rows, dtype=np.int64)
    ts = np.unique(arr[:, 0])
    if ts[0] != 0 or not np.array_equal(ts, np.arange(len(ts))):
        raise DatasetFormatError(f"{states_path}: timesteps are not contiguous from 0")
    T = len(ts)
    if (arr[:, 1] < 0).any() or (arr[:, 1] >= num_individuals).any():
        raise DatasetFormatError(f"{states_path}: individual_id out of range [0, {num_individuals})")
    codes = np.full((T, num_individuals), -1, dtype=np.int8)
    seen = np.zeros((T, num_individuals), dtype=bool)
    for i, (t, v, s) in enumerate(arr):
        if seen[t, v]:
            raise DatasetFormatError(f"{states_path}:{i + 2}: duplicate row for t={t}, individual_id={v}")
        seen[t, v] = True
        codes[t, v] = s
    if not seen.all():
        t, v = np.argwhere(~seen)[0]
        raise DatasetFormatError(f"{states_path}: missing state for t={t}, individual_id={v}")
    return StateSequence(codes)


def load_dataset(contacts_path, states_path=None, meta_path=None):
    """Return ``(hypergraph, states)``; ``states`` is None if no path is given."""
    hg = load_contacts(contacts_path, meta_path)
    states = None
    if states_path is not None:
        states = load_states(states_path, hg.num_individuals)
        if states.num_timesteps > hg.num_timesteps:
            raise DatasetFormatError(
                f"{states_path}: {states.num_timesteps} timesteps exceed num_timesteps={hg.num_timesteps}"
            )
    return hg, states


def save_contacts(hg: DynamicHypergraph, contacts_path, meta_path=None) -> None:
    contacts_path = Path(contacts_path)
    lines = [",".join(CONTACTS_HEADER)]
    lines.extend(f"{t},{e},{v}" for t, e, v in hg.contacts.tolist())
    write_text_atomic(contacts_path, "\n".join(lines) + "\n")
    meta = {
        "num_individuals": hg.num_individuals,
        "num_locations": hg.num_locations,
        "num_timesteps": hg.num_timesteps,
    }
    write_json(meta_path or contacts_path.with_name("meta.json"), meta)


def save_states(states: StateSequence, states_path) -> None:
    if (states.codes < 0).any():
        raise ValueError("cannot serialize masked states")
    lines = [",".join(STATES_HEADER)]
    for t, row in enumerate(states.codes.tolist()):
        lines.extend(f"{t},{v},{STATE_LETTERS[s]}" for v, s in enumerate(row))
    write_text_atomic(states_path, "\n".join(lines) + "\n")


def save_dataset(hg: DynamicHypergraph, states: StateSequence | None, contacts_path, states_path=None,
                 meta_path=None) -> None:
    save_contacts(hg, contacts_path, meta_path)
    if states is not None:
        if states_path is None:
            raise ValueError("states_path required when states are given")
        save_states(states, states_path)


def save_population(pop: Population, path) -> None:
    write_json(path, {
        "home": pop.home.tolist(),
        "work": pop.work.tolist(),
        "home_acquaintances": [a.tolist() for a in pop.home_acquaintances],
        "work_acquaintances": [a.tolist() for a in pop.work_acquaintances],
    })


def load_population(path) -> Population:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return Population(
            home=np.asarray(data["home"], dtype=np.int64),
            work=np.asarray(data["work"], dtype=np.int64),
            home_acquaintances=tuple(np.asarray(a, dtype=np.int64) for a in data["home_acquaintances"]),
            work_acquaintances=tuple(np.asarray(a, dtype=np.int64) for a in data["work_acquaintances"]),
        )
    except KeyError as exc:
        raise DatasetFormatError(f"{path}: missing key {exc}") from None
