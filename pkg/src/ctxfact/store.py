"""Single-file model container with exact round trips.

Layout: a human-readable key=value manifest (format version, model terms,
dimension names and sizes, weighting configuration, seed), a blank line,
then a binary payload holding the vocabularies (JSON blobs) and the
matrices as little-endian 64-bit floats in column-major order, plus
property matrices and mixing-matrix arrays for composed dimensions. A
SHA-256 checksum over the payload is stored in the manifest and verified
on load.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np
import scipy.sparse

from .dataspace import Vocabulary
from .errors import PersistenceError
from .mixing import ComposedFactors, MixingMatrix
from .preference import PreferenceModel, render_model
from .solver import FactorModel
from .weighting import IMPLICIT_FACTORIZED, WeightingScheme

MAGIC = "ctxfact-model"
FORMAT_VERSION = 1


def _blob(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def _array_blob(arr: np.ndarray, dtype: str) -> bytes:
    return _blob(np.asarray(arr).astype(dtype).tobytes(order="F"))


class _PayloadReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def blob(self) -> bytes:
        if self.pos + 8 > len(self.data):
            raise PersistenceError("truncated payload")
        (length,) = struct.unpack_from("<Q", self.data, self.pos)
        self.pos += 8
        if self.pos + length > len(self.data):
            raise PersistenceError("truncated payload")
        out = self.data[self.pos : self.pos + length]
        self.pos += length
        return out

    def array(self, dtype: str, shape=None) -> np.ndarray:
        raw = self.blob()
        arr = np.frombuffer(raw, dtype=dtype)
        if shape is not None:
            expected = int(np.prod(shape))
            if arr.size != expected:
                raise PersistenceError(
                    f"payload array has {arr.size} entries, expected {expected}"
                )
            arr = arr.reshape(shape, order="F")
        return arr

    def done(self) -> None:
        if self.pos != len(self.data):
            raise PersistenceError("payload has trailing bytes")


def _weighting_manifest(scheme: WeightingScheme | None) -> list[str]:
    if scheme is None:
        return ["weighting.mode=none"]
    lines = [f"weighting.mode={scheme.mode}", f"weighting.alpha={scheme.alpha!r}"]
    if scheme.mode == IMPLICIT_FACTORIZED:
        lines.append("weighting.mu=" + ",".join(repr(x) for x in scheme.mu))
        lines.append("weighting.gamma=" + ",".join(repr(x) for x in scheme.gamma))
        flags = ",".join("1" if vec is not None else "0" for vec in scheme.v)
        lines.append(f"weighting.v={flags}")
    return lines


def save_model(factor_model: FactorModel, path) -> None:
    """Write a model container; saving and reloading is bit-exact."""
    fm = factor_model
    payload = bytearray()
    for vocab in fm.vocabularies:
        payload += _blob(json.dumps(vocab.entities(), ensure_ascii=False).encode("utf-8"))
    for matrix in fm.matrices:
        payload += _array_blob(matrix, "<f8")
    scheme = fm.weighting
    if scheme is not None and scheme.mode == IMPLICIT_FACTORIZED:
        for vec in scheme.v:
            if vec is not None:
                payload += _array_blob(vec, "<f8")

    composed_names = sorted(fm.composed)
    for name in composed_names:
        comp: ComposedFactors = fm.composed[name]
        payload += _blob(
            json.dumps(comp.mixing.property_names.entities(), ensure_ascii=False).encode("utf-8")
        )
        payload += _array_blob(comp.property_matrix, "<f8")
        W = comp.mixing.matrix
        payload += _array_blob(W.indptr, "<i8")
        payload += _array_blob(W.indices, "<i8")
        payload += _array_blob(W.data, "<f8")

    payload = bytes(payload)
    digest = hashlib.sha256(payload).hexdigest()

    lines = [f"{MAGIC} format={FORMAT_VERSION}"]
    lines.append(f"k={fm.k}")
    lines.append("model=" + render_model(fm.model))
    lines.append("model.terms=" + json.dumps([list(t) for t in fm.model.terms]))
    lines.append(
        "model.weights=" + ",".join(repr(w) for w in fm.model.term_weights)
    )
    lines.append(f"seed={'none' if fm.seed is None else fm.seed}")
    lines.extend(_weighting_manifest(fm.weighting))
    lines.append(f"dims={len(fm.dim_names)}")
    for i, (name, size) in enumerate(zip(fm.dim_names, fm.sizes)):
        lines.append(f"dim.{i}.name={name}")
        lines.append(f"dim.{i}.size={size}")
    lines.append(f"composed={len(composed_names)}")
    for i, name in enumerate(composed_names):
        comp = fm.composed[name]
        lines.append(f"composed.{i}.dim={name}")
        lines.append(f"composed.{i}.normalization={comp.mixing.normalization}")
        lines.append(f"composed.{i}.properties={comp.mixing.n_properties}")
        lines.append(f"composed.{i}.nnz={comp.mixing.matrix.nnz}")
    lines.append(f"payload.bytes={len(payload)}")
    lines.append(f"payload.sha256={digest}")

    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        fh.write(payload)


def _parse_manifest(raw: bytes):
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise PersistenceError("no manifest terminator found")
    try:
        text = raw[:sep].decode("utf-8")
    except UnicodeDecodeError as err:
        raise PersistenceError(f"manifest is not valid UTF-8: {err}") from None
    lines = text.split("\n")
    head = lines[0].split(" ")
    if head[0] != MAGIC:
        raise PersistenceError(f"not a {MAGIC} container")
    version = None
    for part in head[1:]:
        if part.startswith("format="):
            version = part.split("=", 1)[1]
    if version != str(FORMAT_VERSION):
        raise PersistenceError(
            f"unsupported container format {version!r}, this build reads {FORMAT_VERSION}"
        )
    manifest: dict[str, str] = {}
    for line in lines[1:]:
        if not line:
            continue
        if "=" not in line:
            raise PersistenceError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        manifest[key] = value
    return manifest, raw[sep + 2 :]


def _require(manifest: dict, key: str) -> str:
    if key not in manifest:
        raise PersistenceError(f"manifest is missing {key!r}")
    return manifest[key]


def _load_weighting(manifest: dict, reader: _PayloadReader, n_dims: int):
    mode = _require(manifest, "weighting.mode")
    if mode == "none":
        return None
    alpha = float(_require(manifest, "weighting.alpha"))
    if mode != IMPLICIT_FACTORIZED:
        return WeightingScheme(mode=mode, alpha=alpha)
    mu = tuple(float(x) for x in _require(manifest, "weighting.mu").split(","))
    gamma = tuple(float(x) for x in _require(manifest, "weighting.gamma").split(","))
    flags = _require(manifest, "weighting.v").split(",")
    if len(flags) != n_dims:
        raise PersistenceError("weighting.v flag count does not match dimensions")
    v = tuple(reader.array("<f8") if flag == "1" else None for flag in flags)
    return WeightingScheme(mode=mode, alpha=alpha, mu=mu, gamma=gamma, v=v)


def load_model(path) -> FactorModel:
    """Read a model container, verifying length and checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    manifest, payload = _parse_manifest(raw)

    expected_bytes = int(_require(manifest, "payload.bytes"))
    if len(payload) != expected_bytes:
        raise PersistenceError(
            f"payload is {len(payload)} bytes, manifest says {expected_bytes}"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != _require(manifest, "payload.sha256"):
        raise PersistenceError("payload checksum mismatch; the file is corrupt")

    k = int(_require(manifest, "k"))
    n_dims = int(_require(manifest, "dims"))
    names = []
    sizes = []
    for i in range(n_dims):
        names.append(_require(manifest, f"dim.{i}.name"))
        sizes.append(int(_require(manifest, f"dim.{i}.size")))

    terms = json.loads(_require(manifest, "model.terms"))
    weights = tuple(float(x) for x in _require(manifest, "model.weights").split(","))
    model = PreferenceModel(tuple(tuple(t) for t in terms), term_weights=weights)

    seed_text = _require(manifest, "seed")
    seed = None if seed_text == "none" else int(seed_text)

    reader = _PayloadReader(payload)
    vocabularies = []
    for i in range(n_dims):
        entities = json.loads(reader.blob().decode("utf-8"))
        vocab = Vocabulary(entities)
        if len(vocab) != sizes[i]:
            raise PersistenceError(f"dimension {names[i]!r}: vocabulary size mismatch")
        vocabularies.append(vocab)
    matrices = []
    for i in range(n_dims):
        # frombuffer views are read-only; training needs writable columns
        matrices.append(reader.array("<f8", shape=(k, sizes[i])).copy(order="F"))

    weighting = _load_weighting(manifest, reader, n_dims)

    fm = FactorModel(
        model,
        k,
        names,
        vocabularies,
        matrices,
        weighting=weighting,
        seed=seed,
    )

    n_composed = int(_require(manifest, "composed"))
    for i in range(n_composed):
        dim = _require(manifest, f"composed.{i}.dim")
        normalization = _require(manifest, f"composed.{i}.normalization")
        n_props = int(_require(manifest, f"composed.{i}.properties"))
        d = fm.dim_index(dim)
        prop_names = Vocabulary(json.loads(reader.blob().decode("utf-8")))
        if len(prop_names) != n_props:
            raise PersistenceError(f"composed {dim!r}: property vocabulary size mismatch")
        prop_matrix = reader.array("<f8", shape=(k, n_props)).copy(order="C")
        indptr = reader.array("<i8")
        indices = reader.array("<i8")
        data = reader.array("<f8")
        size = sizes[d]
        if len(indptr) != size + 1:
            raise PersistenceError(f"composed {dim!r}: mixing indptr length mismatch")
        W = scipy.sparse.csc_array(
            (data.copy(), indices.copy(), indptr.copy()), shape=(n_props, size)
        )
        mixing = MixingMatrix(W, prop_names, fm.vocabularies[d], normalization)
        fm.composed[dim] = ComposedFactors(mixing=mixing, property_matrix=prop_matrix)

    reader.done()
    return fm
