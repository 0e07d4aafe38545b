"""File formats: deterministic JSON, dataset/adjacency/partition CSV.

All floating-point output is serialized with 17 significant digits (exact
round trip for IEEE doubles) and dictionary keys are emitted sorted, so a
rerun with identical inputs produces byte-identical files.
"""

import csv
import json
import math

import numpy as np

from .composition import CompositionMatrix, CompositionalDataset
from .errors import NumericalError, SchemaError


def format_float(x):
    """17-significant-digit decimal form of a finite double."""
    x = float(x)
    if not math.isfinite(x):
        raise NumericalError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def _emit(obj, out, indent, level):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is None else ","
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, np.bool_):
        obj = bool(obj)
    if isinstance(obj, (np.integer,)):
        obj = int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        keys = sorted(obj)
        for pos, key in enumerate(keys):
            if not isinstance(key, str):
                raise SchemaError(f"JSON object keys must be strings, got {key!r}")
            out.append(pad)
            out.append(json.dumps(key))
            out.append(": " if indent is not None else ":")
            _emit(obj[key], out, indent, level + 1)
            if pos != len(keys) - 1:
                out.append(sep)
        out.append(end)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        if not len(obj):
            out.append("[]")
            return
        out.append("[")
        for pos, item in enumerate(obj):
            out.append(pad)
            _emit(item, out, indent, level + 1)
            if pos != len(obj) - 1:
                out.append(sep)
        out.append(end)
        out.append("]")
    else:
        raise SchemaError(f"cannot serialize {type(obj).__name__} to JSON")


def dumps(obj, indent=2):
    """Deterministic JSON text: sorted keys, 17-significant-digit floats."""
    out = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def write_json(path, obj, indent=2):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj, indent=indent))
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None


def _float_field(raw, what, path, line):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise SchemaError(f"non-numeric {what} {raw!r}", path=path, line=line) from None


def write_dataset_csv(path, dataset):
    """Columns: id, y, comp_1..comp_K, cov_1..cov_p."""
    parts = dataset.composition.parts
    p = dataset.covariates.shape[1]
    header = (
        ["id", "y"]
        + [f"comp_{j}" for j in range(1, parts + 1)]
        + [f"cov_{j}" for j in range(1, p + 1)]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        comp = dataset.composition.values
        for i, ident in enumerate(dataset.ids):
            row = [ident, format_float(dataset.y[i])]
            row += [format_float(v) for v in comp[i]]
            row += [format_float(v) for v in dataset.covariates[i]]
            writer.writerow(row)


def read_dataset_csv(path):
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", path=path) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path=path, line=1) from None
        if header[:2] != ["id", "y"]:
            raise SchemaError(
                f"header must start with id,y; got {','.join(header[:2])}", path=path, line=1
            )
        rest = header[2:]
        parts = 0
        while parts < len(rest) and rest[parts] == f"comp_{parts + 1}":
            parts += 1
        covs = rest[parts:]
        if parts < 2:
            raise SchemaError(
                "need columns comp_1..comp_K with K >= 2", path=path, line=1
            )
        for j, name in enumerate(covs, start=1):
            if name != f"cov_{j}":
                raise SchemaError(
                    f"unexpected column {name!r}; expected cov_{j}", path=path, line=1
                )
        ids, ys, comp_rows, cov_rows = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"expected {len(header)} fields, got {len(row)}", path=path, line=line
                )
            ids.append(row[0])
            ys.append(_float_field(row[1], "response", path, line))
            comp_rows.append([_float_field(v, "composition part", path, line) for v in row[2 : 2 + parts]])
            cov_rows.append([_float_field(v, "covariate", path, line) for v in row[2 + parts :]])
        if not ids:
            raise SchemaError("no data rows", path=path, line=2)
        if len(set(ids)) != len(ids):
            dup = next(s for s in ids if ids.count(s) > 1)
            raise SchemaError(f"duplicate id {dup!r}", path=path)
        try:
            composition = CompositionMatrix(np.array(comp_rows))
            return CompositionalDataset(
                ids=ids,
                y=np.array(ys),
                composition=composition,
                covariates=np.array(cov_rows).reshape(len(ids), len(covs)),
            )
        except ValueError as exc:
            raise SchemaError(str(exc), path=path) from None


def write_edge_csv(path, graph):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for i, nbrs in enumerate(graph.neighbors):
            for j in nbrs:
                if i < j:
                    writer.writerow([graph.labels[i], graph.labels[j]])


def read_edge_csv(path):
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", path=path) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path=path, line=1) from None
        if header != ["src", "dst"]:
            raise SchemaError(f"header must be src,dst; got {','.join(header)}", path=path, line=1)
        edges = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or not row[0] or not row[1]:
                raise SchemaError("expected two nonempty fields", path=path, line=line)
            edges.append((row[0], row[1]))
        return edges


def write_partition_csv(path, ids, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "cluster"])
        for ident, label in zip(ids, labels):
            writer.writerow([ident, int(label)])


def read_partition_csv(path):
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError("file not found", path=path) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path=path, line=1) from None
        if header != ["id", "cluster"]:
            raise SchemaError(
                f"header must be id,cluster; got {','.join(header)}", path=path, line=1
            )
        mapping = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError("expected two fields", path=path, line=line)
            try:
                label = int(row[1])
            except ValueError:
                raise SchemaError(f"non-integer cluster {row[1]!r}", path=path, line=line) from None
            if row[0] in mapping:
                raise SchemaError(f"duplicate id {row[0]!r}", path=path, line=line)
            mapping[row[0]] = label
        if not mapping:
            raise SchemaError("no data rows", path=path, line=2)
        return mapping
