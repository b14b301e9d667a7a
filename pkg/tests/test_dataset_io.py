"""Tests for measurement dataset CSV import and export."""

import numpy as np
import pytest

from src.dataset_io import DATASET_HEADER, Dataset, read_dataset, write_dataset
from src.models import Location
from src.stats_core import SampleSet


def _dataset() -> Dataset:
    locations = [Location(id=3, x=1.0, y=2.0, z=1.5), Location(id=1, x=-4.0, y=0.5, z=1.5)]
    samples = {3: SampleSet(values=[0.1, 1 / 3]), 1: SampleSet(values=[2.5])}
    return Dataset(locations=locations, samples=samples)


class TestDataset:
    """Tests for the Dataset model."""

    def test_duplicate_ids(self):
        """Location ids must be unique."""
        loc = Location(id=1, x=0.0, y=0.0)
        with pytest.raises(ValueError):
            Dataset(locations=[loc, loc], samples={1: SampleSet(values=[1.0])})

    def test_missing_samples(self):
        """Every location needs a sample set."""
        with pytest.raises(ValueError):
            Dataset(locations=[Location(id=1, x=0.0, y=0.0)], samples={})

    def test_location_lookup(self):
        """Locations are found by id."""
        assert _dataset().location(1).x == -4.0
        with pytest.raises(KeyError):
            _dataset().location(42)


class TestDatasetCsv:
    """Tests for write_dataset and read_dataset."""

    def test_written_layout(self, tmp_path):
        """Rows sorted by location id with 17 significant digits and LF endings."""
        path = tmp_path / "data.csv"
        write_dataset(path, _dataset())
        raw = path.read_bytes().decode("utf-8")
        assert "\r" not in raw
        lines = raw.splitlines()
        assert lines[0] == ",".join(DATASET_HEADER)
        assert lines[1] == "1,-4,0.5,1.5,0,2.5"
        assert lines[3] == "3,1,2,1.5,1,0.33333333333333331"

    def test_read_restores_values_exactly(self, tmp_path):
        """17 significant digits restore every double."""
        path = tmp_path / "data.csv"
        write_dataset(path, _dataset())
        loaded = read_dataset(path)
        assert [loc.id for loc in loaded.locations] == [1, 3]
        assert np.array_equal(loaded.samples[3].values, [0.1, 1 / 3])

    def test_missing_file(self, tmp_path):
        """A missing dataset raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / "absent.csv")

    def test_wrong_header(self, tmp_path):
        """The header must match exactly."""
        path = tmp_path / "data.csv"
        path.write_text("id,x,y,z,i,v\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_dataset(path)

    def test_inconsistent_coordinates(self, tmp_path):
        """A location may not move between rows."""
        path = tmp_path / "data.csv"
        path.write_text(
            ",".join(DATASET_HEADER) + "\n1,0,0,0,0,1.0\n1,5,0,0,1,2.0\n", encoding="utf-8"
        )
        with pytest.raises(ValueError, match="inconsistent coordinates"):
            read_dataset(path)

    def test_duplicate_sample_index(self, tmp_path):
        """Sample indices are unique per location."""
        path = tmp_path / "data.csv"
        path.write_text(
            ",".join(DATASET_HEADER) + "\n1,0,0,0,0,1.0\n1,0,0,0,0,2.0\n", encoding="utf-8"
        )
        with pytest.raises(ValueError, match="Duplicate sample index"):
            read_dataset(path)

    def test_non_positive_value(self, tmp_path):
        """Samples must be positive."""
        path = tmp_path / "data.csv"
        path.write_text(",".join(DATASET_HEADER) + "\n1,0,0,0,0,-1.0\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_dataset(path)
