"""Dataset model, CSV ingestion and the t-test significance pre-filter.

The on-disk format is a UTF-8 CSV with header
``subject_id,diagnosis,<name1>,...,<nameN>`` where ``diagnosis`` is one of
``CN``, ``MCI``, ``AD`` (case-sensitive) and every biomarker cell is a finite
decimal or scientific-notation number. Numeric fields are never quoted and
subject ids must not contain commas, so a written file reads back unchanged.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import IngestionError, SchemaError

LABELS = ("CN", "MCI", "AD")

_ID_COL = "subject_id"
_DX_COL = "diagnosis"


class UntestableBiomarkerWarning(UserWarning):
    """A biomarker could not be t-tested (zero pooled variance) and was dropped."""


@dataclass(frozen=True, eq=False)
class BiomarkerDataset:
    """M subjects x N scalar biomarkers plus a diagnostic label per subject.

    ``values[j, i]`` is the measurement of biomarker ``biomarker_names[i]``
    for subject ``subject_ids[j]``. Values are stored as a read-only float64
    matrix; instances are immutable and safe to share across threads.
    """

    subject_ids: tuple[str, ...]
    labels: tuple[str, ...]
    values: np.ndarray
    biomarker_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "biomarker_names", tuple(self.biomarker_names))
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise SchemaError("values must be a 2-d matrix")
        m, n = vals.shape
        if m != len(self.subject_ids) or m != len(self.labels):
            raise SchemaError("subject_ids, labels and values row count disagree")
        if n != len(self.biomarker_names):
            raise SchemaError("biomarker_names length does not match value columns")
        if m < 1:
            raise SchemaError("dataset needs at least one subject")
        if n < 2:
            raise SchemaError("dataset needs at least two biomarkers")
        if len(set(self.biomarker_names)) != n:
            dupes = sorted({x for x in self.biomarker_names if self.biomarker_names.count(x) > 1})
            raise SchemaError(f"duplicate biomarker name(s): {', '.join(dupes)}")
        for lab in self.labels:
            if lab not in LABELS:
                raise IngestionError(f"unknown diagnosis label {lab!r}")
        if not np.all(np.isfinite(vals)):
            j, i = np.argwhere(~np.isfinite(vals))[0]
            raise IngestionError(
                f"non-finite value for subject {self.subject_ids[j]!r}, "
                f"biomarker {self.biomarker_names[i]!r}"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_biomarkers(self) -> int:
        return self.values.shape[1]

    def label_mask(self, label: str) -> np.ndarray:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r}")
        return np.array([lab == label for lab in self.labels], dtype=bool)

    def label_counts(self) -> dict[str, int]:
        return {lab: self.labels.count(lab) for lab in LABELS}

    def require_fit_counts(self, min_cn: int = 2, min_ad: int = 2) -> None:
        """Raise unless the dataset has enough labeled subjects for fitting."""
        counts = self.label_counts()
        if counts["CN"] < min_cn or counts["AD"] < min_ad:
            raise IngestionError(
                f"fitting needs at least {min_cn} CN and {min_ad} AD subjects, "
                f"got {counts['CN']} CN / {counts['AD']} AD"
            )

    def subset_rows(self, idx) -> "BiomarkerDataset":
        idx = np.asarray(idx)
        return BiomarkerDataset(
            subject_ids=tuple(self.subject_ids[j] for j in idx),
            labels=tuple(self.labels[j] for j in idx),
            values=self.values[idx],
            biomarker_names=self.biomarker_names,
        )

    def subset_columns(self, idx) -> "BiomarkerDataset":
        idx = np.asarray(idx)
        return BiomarkerDataset(
            subject_ids=self.subject_ids,
            labels=self.labels,
            values=self.values[:, idx],
            biomarker_names=tuple(self.biomarker_names[i] for i in idx),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, BiomarkerDataset):
            return NotImplemented
        return (
            self.subject_ids == other.subject_ids
            and self.labels == other.labels
            and self.biomarker_names == other.biomarker_names
            and self.values.shape == other.values.shape
            and bool(np.all(self.values == other.values))
        )


def load_dataset(source) -> BiomarkerDataset:
    """Parse the documented CSV format from a path or text stream.

    Raises SchemaError for header problems (duplicate biomarker names,
    missing id/diagnosis columns) and IngestionError for bad cells, naming
    the offending row and column.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return _parse_csv(fh)
    return _parse_csv(source)


def _parse_csv(fh) -> BiomarkerDataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: missing header") from None
    if len(header) < 2 or header[0] != _ID_COL or header[1] != _DX_COL:
        raise SchemaError(
            f"malformed header: expected '{_ID_COL},{_DX_COL},<biomarker names...>', "
            f"got {','.join(header[:3])}..."
        )
    names = header[2:]
    if len(names) < 2:
        raise SchemaError("header must list at least two biomarker columns")
    if len(set(names)) != len(names):
        dupes = sorted({x for x in names if names.count(x) > 1})
        raise SchemaError(f"duplicate biomarker name(s) in header: {', '.join(dupes)}")

    ids: list[str] = []
    labels: list[str] = []
    rows: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(
                f"row {lineno}: expected {len(header)} cells, got {len(row)}"
            )
        sid, dx = row[0], row[1]
        if dx not in LABELS:
            raise IngestionError(f"row {lineno}: unknown diagnosis {dx!r}")
        vals = []
        for i, cell in enumerate(row[2:]):
            if cell.strip() == "":
                raise IngestionError(
                    f"row {lineno}, column {names[i]!r}: empty biomarker cell"
                )
            try:
                v = float(cell)
            except ValueError:
                raise IngestionError(
                    f"row {lineno}, column {names[i]!r}: non-numeric cell {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise IngestionError(
                    f"row {lineno}, column {names[i]!r}: non-finite cell {cell!r}"
                )
            vals.append(v)
        ids.append(sid)
        labels.append(dx)
        rows.append(vals)
    if not rows:
        raise IngestionError("no data rows")
    return BiomarkerDataset(
        subject_ids=tuple(ids),
        labels=tuple(labels),
        values=np.array(rows, dtype=float),
        biomarker_names=tuple(names),
    )


def dataset_to_csv(dataset: BiomarkerDataset) -> str:
    """Serialize in the documented CSV format; round-trips exactly."""
    for sid in dataset.subject_ids:
        if "," in sid:
            raise SchemaError(f"subject_id {sid!r} contains a comma")
    buf = io.StringIO()
    buf.write(",".join([_ID_COL, _DX_COL, *dataset.biomarker_names]) + "\n")
    for j in range(dataset.n_subjects):
        cells = [dataset.subject_ids[j], dataset.labels[j]]
        cells.extend(repr(float(v)) for v in dataset.values[j])
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def save_dataset(dataset: BiomarkerDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(dataset))


def significance_filter(
    dataset: BiomarkerDataset,
    p_threshold: float = 0.01,
    welch: bool = False,
) -> BiomarkerDataset:
    """Keep the biomarkers whose CN-vs-AD two-sample t-test has p < p_threshold.

    The test is the pooled-variance Student's t by default (``welch=True``
    switches to unequal variances). MCI subjects never enter the test but
    their rows are retained in the filtered dataset. Columns with zero
    pooled variance are untestable: they are dropped and reported through an
    UntestableBiomarkerWarning.
    """
    if not 0.0 < p_threshold < 1.0:
        raise ValueError("p_threshold must lie strictly between 0 and 1")
    dataset.require_fit_counts()
    cn = dataset.values[dataset.label_mask("CN")]
    ad = dataset.values[dataset.label_mask("AD")]
    keep = []
    for i, name in enumerate(dataset.biomarker_names):
        x, y = cn[:, i], ad[:, i]
        if np.var(x, ddof=1) == 0.0 and np.var(y, ddof=1) == 0.0:
            warnings.warn(
                f"biomarker {name!r} has zero pooled variance; excluded as untestable",
                UntestableBiomarkerWarning,
                stacklevel=2,
            )
            continue
        _, p = stats.ttest_ind(x, y, equal_var=not welch)
        if p < p_threshold:
            keep.append(i)
    if len(keep) < 2:
        raise IngestionError(
            f"significance filter at p<{p_threshold:g} kept {len(keep)} biomarker(s); "
            "a dataset needs at least two"
        )
    return dataset.subset_columns(np.array(keep, dtype=int))
