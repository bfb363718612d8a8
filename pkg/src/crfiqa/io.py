"""CSV and JSON file formats.

Every CSV is UTF-8 with a mandatory header row, ``,`` separators, ``.``
decimals and ``\\n`` line endings. Floats are written with ``repr`` so that
reading a file back reproduces the values bit for bit. Readers raise
:class:`DataFormatError` with file, line and column of the first problem.
"""

import csv
import json
import math

import numpy as np

from .exceptions import DataFormatError
from .synthdata import PairList, SyntheticDataset

DATASET_FIXED = ("id", "label", "sigma", "true_quality")
PAIR_COLUMNS = ("id_a", "id_b", "genuine")
QUALITY_COLUMNS = ("id", "quality_raw", "quality_norm")
SCORE_COLUMNS = ("id_a", "id_b", "genuine", "score", "pair_quality")
ERC_COLUMNS = ("reject_ratio", "fnmr")
TEMPLATE_COLUMNS = ("template_id", "id")


def format_float(x):
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def _parse_int(text):
    if not text or not text.lstrip("-").isdigit():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(text)


def _parse_float(text):
    value = float(text)
    if "," in text or not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _parse_flag(text):
    if text not in ("0", "1"):
        raise ValueError(f"expected 0 or 1, got {text!r}")
    return text == "1"


PARSERS = {"int": _parse_int, "float": _parse_float, "flag": _parse_flag}


def read_csv(path, columns, prefix=None):
    """Read a CSV into typed column lists.

    Args:
      path: file to read.
      columns: mapping of required column name to type (``"int"``,
        ``"float"`` or ``"flag"``). Extra columns are ignored.
      prefix: if given, every column named ``prefix0, prefix1, ...`` is
        read as float and returned as a 2-D array under key ``prefix``.

    Returns:
      Dict of column name to list (or array for ``prefix``).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[:exc.start].count(b"\n") + 1
        raise DataFormatError(path, line, 1, "file is not valid UTF-8") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(path, 1, 1, "missing header row")
    for n, line in enumerate(lines, start=1):
        if "\r" in line:
            raise DataFormatError(path, n, line.index("\r") + 1, "line endings must be '\\n'")

    header = lines[0].split(",")
    index = {name: i for i, name in enumerate(header)}
    for name in columns:
        if name not in index:
            raise DataFormatError(path, 1, 1, f"missing column {name!r}")
    vector_cols = []
    if prefix is not None:
        k = 0
        while f"{prefix}{k}" in index:
            vector_cols.append(index[f"{prefix}{k}"])
            k += 1
        if not vector_cols:
            raise DataFormatError(path, 1, 1, f"no {prefix}0.. columns")

    out = {name: [] for name in columns}
    vectors = []
    for n, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(header):
            raise DataFormatError(path, n, 1,
                                  f"expected {len(header)} fields, found {len(fields)}")
        for name, kind in columns.items():
            col = index[name]
            try:
                out[name].append(PARSERS[kind](fields[col]))
            except ValueError as exc:
                raise DataFormatError(path, n, col + 1, f"column {name!r}: {exc}") from None
        if vector_cols:
            row = []
            for col in vector_cols:
                try:
                    row.append(_parse_float(fields[col]))
                except ValueError as exc:
                    raise DataFormatError(path, n, col + 1, str(exc)) from None
            vectors.append(row)
    if prefix is not None:
        out[prefix] = np.asarray(vectors, dtype=np.float64).reshape(-1, len(vector_cols))
    return out


def _check_unique(path, ids):
    seen = set()
    for n, i in enumerate(ids, start=2):
        if i in seen:
            raise DataFormatError(path, n, 1, f"duplicate id {i}")
        seen.add(i)


def write_dataset(path, data):
    dim = data.inputs.shape[1]
    header = list(DATASET_FIXED) + [f"x{j}" for j in range(dim)]
    rows = ([int(i), int(y), float(s), float(q), *map(float, x)]
            for i, y, s, q, x in zip(data.ids, data.labels, data.sigma,
                                     data.true_quality, data.inputs))
    write_csv(path, header, rows)


def read_dataset(path):
    cols = read_csv(path, {"id": "int", "label": "int", "sigma": "float",
                           "true_quality": "float"}, prefix="x")
    _check_unique(path, cols["id"])
    return SyntheticDataset(
        ids=np.asarray(cols["id"], dtype=np.int64),
        inputs=cols["x"],
        labels=np.asarray(cols["label"], dtype=np.int64),
        sigma=np.asarray(cols["sigma"]),
        true_quality=np.asarray(cols["true_quality"]),
    )


def write_pairs(path, pairs):
    write_csv(path, PAIR_COLUMNS,
              ([int(a), int(b), int(bool(g))]
               for a, b, g in zip(pairs.id_a, pairs.id_b, pairs.genuine)))


def read_pairs(path):
    cols = read_csv(path, {"id_a": "int", "id_b": "int", "genuine": "flag"})
    return PairList(np.asarray(cols["id_a"], dtype=np.int64),
                    np.asarray(cols["id_b"], dtype=np.int64),
                    np.asarray(cols["genuine"], dtype=bool))


def write_embeddings(path, ids, embeddings):
    header = ["id"] + [f"e{j}" for j in range(embeddings.shape[1])]
    write_csv(path, header, ([int(i), *map(float, e)] for i, e in zip(ids, embeddings)))


def _vector_prefix(path):
    with open(path, encoding="utf-8", errors="replace") as fh:
        header = fh.readline().rstrip("\n").split(",")
    return "x" if "x0" in header and "e0" not in header else "e"


def read_embeddings(path, prefix=None):
    """Embedding CSV (``id,e0..``) as a dict of id to vector.

    A dataset CSV is accepted too; its ``x`` columns are used when no ``e``
    columns exist and ``prefix`` is not given.
    """
    prefix = prefix or _vector_prefix(path)
    cols = read_csv(path, {"id": "int"}, prefix=prefix)
    _check_unique(path, cols["id"])
    return dict(zip(cols["id"], cols[prefix]))


def write_quality(path, ids, raw, norm):
    write_csv(path, QUALITY_COLUMNS,
              ([int(i), float(r), float(n)] for i, r, n in zip(ids, raw, norm)))


def read_quality(path, column="quality_raw"):
    cols = read_csv(path, {"id": "int", column: "float"})
    _check_unique(path, cols["id"])
    return dict(zip(cols["id"], cols[column]))


def write_scores(path, pairs, scores, quality):
    write_csv(path, SCORE_COLUMNS,
              ([int(a), int(b), int(bool(g)), float(s), float(q)]
               for a, b, g, s, q in zip(pairs.id_a, pairs.id_b, pairs.genuine, scores, quality)))


def read_scores(path):
    return read_csv(path, {"id_a": "int", "id_b": "int", "genuine": "flag",
                           "score": "float", "pair_quality": "float"})


def write_erc(csv_path, json_path, curve):
    write_csv(csv_path, ERC_COLUMNS,
              ([float(r), float(f)] for r, f in zip(curve.reject_ratio, curve.fnmr)))
    write_json(json_path, {"fmr_target": curve.fmr_target, "threshold": curve.threshold,
                           "auc": curve.auc, "r_max": curve.r_max})


def read_erc(csv_path):
    cols = read_csv(csv_path, {"reject_ratio": "float", "fnmr": "float"})
    return np.asarray(cols["reject_ratio"]), np.asarray(cols["fnmr"])


def write_templates(path, members):
    write_csv(path, TEMPLATE_COLUMNS,
              ([int(t), int(i)] for t, ids in enumerate(members) for i in ids))


def read_templates(path):
    """Template file as an insertion-ordered dict of template id to member ids."""
    cols = read_csv(path, {"template_id": "int", "id": "int"})
    templates = {}
    for t, i in zip(cols["template_id"], cols["id"]):
        templates.setdefault(t, []).append(i)
    return templates


def write_json(path, payload):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
