"""Measurement datasets: per-location sample sets and their CSV form."""

import csv
from pathlib import Path

import numpy as np
import structlog
from pydantic import Field, model_validator

from src.models import ArrayModel, Location
from src.stats_core import SampleSet

logger = structlog.get_logger(__name__)

DATASET_HEADER = ["location_id", "x", "y", "z", "sample_index", "value"]


class Dataset(ArrayModel):
    """Locations with the channel-metric samples measured at each."""

    locations: list[Location] = Field(description="Measured locations, ids unique")
    samples: dict[int, SampleSet] = Field(description="Samples keyed by location id")

    @model_validator(mode="after")
    def _check_ids(self) -> "Dataset":
        ids = [loc.id for loc in self.locations]
        if len(set(ids)) != len(ids):
            raise ValueError("Location ids must be unique within a dataset")
        if set(ids) != set(self.samples):
            raise ValueError("Every location needs exactly one sample set")
        return self

    def location(self, location_id: int) -> Location:
        """Look up a location by id."""
        for loc in self.locations:
            if loc.id == location_id:
                return loc
        raise KeyError(location_id)


def write_dataset(path: Path, dataset: Dataset) -> None:
    """Write one row per sample with 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for loc in sorted(dataset.locations, key=lambda item: item.id):
            for index, value in enumerate(dataset.samples[loc.id].values.tolist()):
                writer.writerow(
                    [
                        loc.id,
                        f"{loc.x:.17g}",
                        f"{loc.y:.17g}",
                        f"{loc.z:.17g}",
                        index,
                        f"{value:.17g}",
                    ]
                )
    logger.info("dataset_written", path=str(path), locations=len(dataset.locations))


def read_dataset(path: Path) -> Dataset:
    """Read a dataset CSV.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the header is wrong, coordinates disagree for a location,
            sample indices repeat, or a value is not a positive finite number
    """
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")

    coords: dict[int, tuple[float, float, float]] = {}
    rows: dict[int, dict[int, float]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ValueError(f"Unexpected dataset header {header}, expected {DATASET_HEADER}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                location_id = int(row[0])
                xyz = (float(row[1]), float(row[2]), float(row[3]))
                sample_index = int(row[4])
                value = float(row[5])
            except (IndexError, ValueError) as e:
                raise ValueError(f"Malformed dataset row {line_no}: {row}") from e
            if coords.setdefault(location_id, xyz) != xyz:
                raise ValueError(
                    f"Location {location_id} has inconsistent coordinates (row {line_no})"
                )
            per_location = rows.setdefault(location_id, {})
            if sample_index in per_location:
                raise ValueError(
                    f"Duplicate sample index {sample_index} for location {location_id}"
                )
            per_location[sample_index] = value

    locations = [
        Location(id=location_id, x=x, y=y, z=z) for location_id, (x, y, z) in sorted(coords.items())
    ]
    samples = {
        location_id: SampleSet(values=np.array([values[i] for i in sorted(values)]))
        for location_id, values in rows.items()
    }
    logger.info("dataset_read", path=str(path), locations=len(locations))
    return Dataset(locations=locations, samples=samples)
