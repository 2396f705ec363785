"""Plain-text file formats: datasets, schemas, models, generators and manifests.

Dense datasets are CSV with a header of variable names; an optional ``__class``
column carries true labels.  Sparse event files hold ``case_id<TAB>var_id``
lines, one per hit of a binary variable.  Floats are written with ``repr``,
the shortest decimal that reads back to the same double.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .core import Dataset, MixtureModel, SchemaError, VariableSchema
from .synthgen import GeneratorModel

LABEL_COLUMN = "__class"


class ParseError(ValueError):
    """Malformed input file; the message names the file and line."""


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _floats(tokens, path, line_no) -> np.ndarray:
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}:{line_no}: {exc}") from None


def read_schema(path) -> VariableSchema:
    """Sidecar schema: one ``name<TAB>cardinality`` line per variable."""
    names, card = [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{line_no}: expected name<TAB>cardinality")
            try:
                card.append(int(parts[1]))
            except ValueError:
                raise ParseError(f"{path}:{line_no}: cardinality {parts[1]!r} is not an integer") from None
            names.append(parts[0])
    try:
        return VariableSchema(names, card)
    except SchemaError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_schema(schema: VariableSchema, path) -> None:
    with open(path, "w") as fh:
        for name, r in zip(schema.names, schema.cardinalities):
            fh.write(f"{name}\t{r}\n")


def _parse_int(tok: str, path, line_no) -> int:
    tok = tok.strip()
    if not tok.isdigit():
        raise ParseError(f"{path}:{line_no}: {tok!r} is not a nonnegative integer")
    return int(tok)


def read_csv(path, schema: VariableSchema | None = None) -> Dataset:
    """Dense CSV with a header row; cardinalities are max + 1 unless pinned by ``schema``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: missing header row") from None
        header = [h.strip() for h in header]
        label_col = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
        var_cols = [j for j, h in enumerate(header) if j != label_col]
        rows, labels = [], []
        for line_no, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}")
            vals = [_parse_int(t, path, line_no) for t in row]
            if label_col is not None:
                labels.append(vals[label_col])
            rows.append([vals[j] for j in var_cols])
    names = [header[j] for j in var_cols]
    cases = np.array(rows, dtype=np.int64).reshape(len(rows), len(names))
    if schema is None:
        card = np.maximum(cases.max(axis=0) + 1, 2) if cases.shape[0] else np.full(len(names), 2)
        schema = VariableSchema(names, [int(c) for c in card])
    else:
        if list(schema.names) != names:
            raise ParseError(f"{path}: header does not match the schema's variable names")
        card = np.asarray(schema.cardinalities)
        bad = np.argwhere(cases >= card)
        if bad.size:
            j, i = bad[0]
            raise ParseError(
                f"{path}:{j + 2}: value {cases[j, i]} >= cardinality {card[i]} of {names[i]!r}"
            )
    return Dataset(schema, cases, np.array(labels, dtype=np.int64) if label_col is not None else None)


def write_csv(data: Dataset, path) -> None:
    header = list(data.schema.names)
    if data.labels is not None:
        header.append(LABEL_COLUMN)
    body = data.cases if data.labels is None else np.column_stack([data.cases, data.labels])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in body:
            fh.write(",".join(map(str, row.tolist())) + "\n")


def read_events(path, schema: VariableSchema | None = None, n_cases: int | None = None) -> Dataset:
    """Sparse ``case_id<TAB>var_id`` hits; every unlisted (case, variable) is 0."""
    pairs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{line_no}: expected case_id<TAB>var_id")
            pairs.append((_parse_int(parts[0], path, line_no), _parse_int(parts[1], path, line_no), line_no))
    n_vars = schema.n if schema is not None else max((v for _, v, _ in pairs), default=-1) + 1
    n_rows = n_cases if n_cases is not None else max((c for c, _, _ in pairs), default=-1) + 1
    if schema is None:
        schema = VariableSchema.binary(max(n_vars, 1))
    elif any(r != 2 for r in schema.cardinalities):
        raise ParseError(f"{path}: event files describe binary variables only")
    cases = np.zeros((n_rows, schema.n), dtype=np.int64)
    for c, v, line_no in pairs:
        if v >= schema.n:
            raise ParseError(f"{path}:{line_no}: variable {v} outside the {schema.n} variables")
        if c >= n_rows:
            raise ParseError(f"{path}:{line_no}: case {c} outside the {n_rows} cases")
        cases[c, v] = 1
    return Dataset(schema, cases)


def read_dataset(path, schema_path=None, fmt: str | None = None, schema: VariableSchema | None = None) -> Dataset:
    """Read a dense CSV or a sparse event file (``.tsv``/``.events``, or ``fmt='events'``).

    The schema comes from ``schema``, else ``schema_path``, else a sidecar
    ``<path>.schema`` when present; without any, cardinalities are inferred.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset: {path}")
    if schema is None:
        if schema_path is None and Path(str(path) + ".schema").exists():
            schema_path = str(path) + ".schema"
        schema = read_schema(schema_path) if schema_path else None
    if fmt is None:
        fmt = "events" if path.suffix in (".tsv", ".events") else "csv"
    if fmt == "events":
        return read_events(path, schema)
    if fmt != "csv":
        raise ValueError(f"unknown dataset format {fmt!r}")
    return read_csv(path, schema)


def write_model(model: MixtureModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("# naive-Bayes mixture model\n")
        fh.write(f"K = {model.K}\n")
        fh.write(f"n = {model.schema.n}\n")
        for name, r in zip(model.schema.names, model.schema.cardinalities):
            fh.write(f"var {name} {r}\n")
        fh.write(f"lam {_fmt(model.lam)}\n")
        for i, t in enumerate(model.theta):
            for k in range(model.K):
                fh.write(f"theta {i} {k} {_fmt(t[k])}\n")


def read_model(path) -> MixtureModel:
    header: dict[str, int] = {}
    names, card = [], []
    lam = None
    rows: dict[tuple[int, int], np.ndarray] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) == 3 and tok[1] == "=":
                header[tok[0]] = _parse_int(tok[2], path, line_no)
            elif tok[0] == "var" and len(tok) == 3:
                names.append(tok[1])
                card.append(_parse_int(tok[2], path, line_no))
            elif tok[0] == "lam":
                lam = _floats(tok[1:], path, line_no)
            elif tok[0] == "theta" and len(tok) >= 3:
                key = (_parse_int(tok[1], path, line_no), _parse_int(tok[2], path, line_no))
                rows[key] = _floats(tok[3:], path, line_no)
            else:
                raise ParseError(f"{path}:{line_no}: unrecognised line")
    if lam is None or "K" not in header:
        raise ParseError(f"{path}: missing K or lam")
    K = header["K"]
    if header.get("n", len(names)) != len(names):
        raise ParseError(f"{path}: n does not match the number of var lines")
    schema = VariableSchema(names, card)
    try:
        theta = [np.stack([rows[(i, k)] for k in range(K)]) for i in range(schema.n)]
    except KeyError as exc:
        raise ParseError(f"{path}: missing theta row {exc}") from None
    model = MixtureModel(schema, lam, theta)
    model.validate()
    return model


def write_generator(gen: GeneratorModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("# synthetic generator parameters\n")
        fh.write(f"K = {gen.K}\n")
        fh.write(f"n = {gen.n}\n")
        fh.write(f"seed = {gen.seed}\n")
        fh.write(f"lam {_fmt(gen.lam)}\n")
        fh.write(f"marginals {_fmt(gen.marginals)}\n")
        for i in range(gen.n):
            fh.write(f"base {i} {_fmt(gen.base_logodds[:, i])}\n")
            fh.write(f"parents {i} {' '.join(map(str, gen.parents[i].tolist()))}\n")
            fh.write(f"offsets {i} {_fmt(gen.offsets[i])}\n")


def read_generator(path) -> GeneratorModel:
    header: dict[str, int] = {}
    vec: dict[str, np.ndarray] = {}
    base, parents, offsets = {}, {}, {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) == 3 and tok[1] == "=":
                header[tok[0]] = int(tok[2])
            elif tok[0] in ("lam", "marginals"):
                vec[tok[0]] = _floats(tok[1:], path, line_no)
            elif tok[0] == "base":
                base[int(tok[1])] = _floats(tok[2:], path, line_no)
            elif tok[0] == "parents":
                parents[int(tok[1])] = np.array([int(t) for t in tok[2:]], dtype=np.int64)
            elif tok[0] == "offsets":
                offsets[int(tok[1])] = _floats(tok[2:], path, line_no)
            else:
                raise ParseError(f"{path}:{line_no}: unrecognised line")
    K, n = header["K"], header["n"]
    return GeneratorModel(
        vec["lam"],
        vec["marginals"],
        np.stack([base[i] for i in range(n)], axis=1),
        [parents[i] for i in range(n)],
        [offsets[i].reshape(K, 2 ** parents[i].shape[0]) for i in range(n)],
        header["seed"],
    )


def write_manifest(values: dict, path) -> None:
    """``key = value`` lines; sequences are space separated."""
    with open(path, "w") as fh:
        for key, val in values.items():
            if isinstance(val, (list, tuple, np.ndarray)):
                val = " ".join(str(v) for v in np.ravel(val).tolist())
            fh.write(f"{key} = {val}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#") and " = " in line:
                key, val = line.split(" = ", 1)
                out[key] = val
            elif line.endswith(" ="):
                out[line[:-2]] = ""
    return out


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path
