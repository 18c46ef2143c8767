import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
import pytest

from fbmlab import pathio
from fbmlab.errors import CorruptReportError
from fbmlab.fbm import SamplingMethod
from fbmlab.seeds import check_seed, child_seeds, substream
from fbmlab.storable import Storable, plain


@dataclass
class Rung:
    epsilon: float
    value: float


@dataclass
class Table(Storable):
    name: str
    method: SamplingMethod
    rungs: List[Rung] = field(default_factory=list)
    bounds: tuple = (0.0, 1.0)


def test_plain_conversions():
    assert plain(np.float64(0.5)) == 0.5
    assert type(plain(np.int64(3))) is int
    assert plain(np.arange(3)) == [0, 1, 2]
    assert plain(SamplingMethod.CHOLESKY) == "cholesky"
    assert plain({1: (np.float32(0.25), math.nan)}) == {"1": [0.25, None]}
    assert plain(Rung(0.1, math.inf)) == {"epsilon": 0.1, "value": None}


def test_storable_round_trip():
    table = Table("ladder", SamplingMethod.DAVIES_HARTE, [Rung(0.1, 2.0), Rung(0.05, 2.5)])
    record = table.to_record()
    assert record == {
        "name": "ladder",
        "method": "davies_harte",
        "rungs": [{"epsilon": 0.1, "value": 2.0}, {"epsilon": 0.05, "value": 2.5}],
        "bounds": [0.0, 1.0],
    }
    assert Table.from_store(table.to_store()).to_record() == record


def test_binary_round_trip(tmp_path):
    values = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    pathio.write_binary(tmp_path / "values.bin", {"kind": "test", "method": SamplingMethod.LINEAR}, values)
    header, loaded = pathio.read_binary(tmp_path / "values.bin")
    assert header == {"kind": "test", "method": "linear", "shape": [3, 4]}
    np.testing.assert_array_equal(loaded, values)


def test_corrupt_binaries(tmp_path):
    target = tmp_path / "values.bin"
    target.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(CorruptReportError):
        pathio.read_binary(target)

    pathio.write_binary(target, {}, np.ones(5))
    target.write_bytes(target.read_bytes()[:-3])
    with pytest.raises(CorruptReportError):
        pathio.read_binary(target)


def test_table_csv(tmp_path):
    rows = [{"epsilon": 0.1, "value": np.float64(2.0)}, {"epsilon": 0.05, "value": 2.5, "note": "finest"}]
    pathio.write_table_csv(tmp_path / "rows.csv", rows)
    frame = pd.read_csv(tmp_path / "rows.csv")
    assert list(frame.columns) == ["epsilon", "value", "note"]
    assert frame["value"].tolist() == [2.0, 2.5]


def test_seeds():
    assert check_seed(2**64 - 1) == 2**64 - 1
    with pytest.raises(ValueError):
        check_seed(-1)
    with pytest.raises(ValueError):
        check_seed(2**64)

    seeds = child_seeds(7, 5)
    assert len(set(seeds)) == 5
    assert child_seeds(7, 3) == seeds[:3]
    assert all(0 <= s < 2**64 for s in seeds)

    first = substream(7, 2, 1).standard_normal(4)
    np.testing.assert_array_equal(first, substream(7, 2, 1).standard_normal(4))
    assert not np.array_equal(first, substream(7, 2, 0).standard_normal(4))
    assert not np.array_equal(first, substream(7, 3, 1).standard_normal(4))
