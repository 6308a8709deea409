import json

import numpy as np
import pytest

from epidhgnn.episim import ContactConfig, MobilityConfig, generate_population
from epidhgnn.hypergraph import DynamicHypergraph, HypergraphError
from epidhgnn.io import (
    DatasetFormatError,
    load_dataset,
    load_population,
    save_dataset,
    save_population,
    write_json,
)

from conftest import random_hypergraph, random_states


def _write(path, text):
    path.write_text(text)
    return path


def _meta(tmp_path, N=3, E=2, T=2):
    write_json(tmp_path / "meta.json", {"num_individuals": N, "num_locations": E, "num_timesteps": T})


def test_roundtrip(tmp_path, rng):
    hg = random_hypergraph(rng, 12, 4, 7)
    states = random_states(rng, 12, 7)
    save_dataset(hg, states, tmp_path / "contacts.csv", tmp_path / "states.csv")
    hg2, states2 = load_dataset(tmp_path / "contacts.csv", tmp_path / "states.csv")
    assert hg2 == hg
    assert states2 == states


def test_save_is_canonical_resort(tmp_path):
    _meta(tmp_path)
    rows = [(1, 0, 2), (0, 1, 0), (0, 0, 1), (1, 0, 0)]
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n" + "".join(f"{t},{e},{v}\n" for t, e, v in rows))
    hg, _ = load_dataset(tmp_path / "contacts.csv")
    out = tmp_path / "out"
    out.mkdir()
    save_dataset(hg, None, out / "contacts.csv")
    expected = "t,location_id,individual_id\n" + "".join(f"{t},{e},{v}\n" for t, e, v in sorted(rows))
    assert (out / "contacts.csv").read_text() == expected
    save_dataset(*load_dataset(out / "contacts.csv"), out / "again.csv", meta_path=out / "meta2.json")
    assert (out / "again.csv").read_bytes() == (out / "contacts.csv").read_bytes()


def test_header_only_reads_dims_from_meta(tmp_path):
    _meta(tmp_path, N=5, E=3, T=4)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n")
    hg, states = load_dataset(tmp_path / "contacts.csv")
    assert (hg.num_individuals, hg.num_locations, hg.num_timesteps) == (5, 3, 4)
    assert len(hg.contacts) == 0 and states is None


def test_malformed_row_reports_line(tmp_path):
    _meta(tmp_path)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n0,0,1\n0,x,1\n")
    with pytest.raises(DatasetFormatError, match=r"contacts.csv:3"):
        load_dataset(tmp_path / "contacts.csv")
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n0,0\n")
    with pytest.raises(DatasetFormatError, match=r"contacts.csv:2"):
        load_dataset(tmp_path / "contacts.csv")


def test_out_of_range_contact_rejected(tmp_path):
    _meta(tmp_path)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n0,5,1\n")
    with pytest.raises(HypergraphError, match="location_id=5"):
        load_dataset(tmp_path / "contacts.csv")


def test_bad_state_letter(tmp_path):
    _meta(tmp_path, N=2, T=1)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n")
    _write(tmp_path / "states.csv", "t,individual_id,state\n0,0,S\n0,1,X\n")
    with pytest.raises(DatasetFormatError, match=r"states.csv:3.*S,I,R"):
        load_dataset(tmp_path / "contacts.csv", tmp_path / "states.csv")


def test_non_contiguous_timesteps(tmp_path):
    _meta(tmp_path, N=1, T=3)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n")
    _write(tmp_path / "states.csv", "t,individual_id,state\n0,0,S\n2,0,I\n")
    with pytest.raises(DatasetFormatError, match="contiguous"):
        load_dataset(tmp_path / "contacts.csv", tmp_path / "states.csv")


def test_missing_state_row(tmp_path):
    _meta(tmp_path, N=2, T=1)
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n")
    _write(tmp_path / "states.csv", "t,individual_id,state\n0,0,S\n")
    with pytest.raises(DatasetFormatError, match="individual_id=1"):
        load_dataset(tmp_path / "contacts.csv", tmp_path / "states.csv")


def test_missing_meta_key(tmp_path):
    write_json(tmp_path / "meta.json", {"num_individuals": 2, "num_locations": 1})
    _write(tmp_path / "contacts.csv", "t,location_id,individual_id\n")
    with pytest.raises(DatasetFormatError, match="num_timesteps"):
        load_dataset(tmp_path / "contacts.csv")


def test_write_json_is_strict(tmp_path):
    write_json(tmp_path / "x.json", {"a": float("nan"), "b": [1.0, float("inf")]})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": None, "b": [1.0, None]}


def test_population_roundtrip(tmp_path):
    pop = generate_population(MobilityConfig(), ContactConfig(), 60, seed=3)
    save_population(pop, tmp_path / "population.json")
    assert load_population(tmp_path / "population.json") == pop


def test_table_one_scale(tmp_path):
    # 2,500 individuals, 500 locations, 169 timesteps and 94,134 contact rows
    N, E, T, M = 2500, 500, 169, 94_134
    rng = np.random.default_rng(0)
    keys = rng.choice(T * E * N, size=M, replace=False)
    contacts = np.column_stack([keys // (E * N), (keys // N) % E, keys % N])
    hg = DynamicHypergraph(N, E, T, contacts)
    save_dataset(hg, None, tmp_path / "contacts.csv")
    loaded, _ = load_dataset(tmp_path / "contacts.csv")
    assert loaded == hg
    assert len(loaded.contacts) == M
