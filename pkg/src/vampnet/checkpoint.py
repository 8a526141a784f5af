"""Text checkpoints: auditable decimal doubles, bit-exact round trips.

Format `vampnet-ckpt/1`: a version line, flat `key = value` sections for
the run header and configs, a verbatim vocabulary (or presence-column)
block, and one `[param NAME]` section per parameter with its shape and
one `repr` double per line.  Loading rebuilds the model and restores
every parameter exactly, so scores reproduce bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import (
    BaselineResult,
    CnnBaseline,
    CnnBaselineConfig,
    MlpBaseline,
    MlpConfig,
    presence_matrix,
)
from .cohort import ChannelStats, SampleRecord, normalize_samples
from .errors import ContractError, FileFormatError
from .model import ModelConfig, VampNet
from .tokens import Vocabulary, collate
from .train import TrainResult

FORMAT_TAG = "vampnet-ckpt/1"
_EVAL_BATCH = 64


# -- writing -------------------------------------------------------------------


def _write_section(fh, name: str, pairs: dict) -> None:
    fh.write(f"\n[{name}]\n")
    for key, value in pairs.items():
        fh.write(f"{key} = {value}\n")


def _write_block(fh, name: str, lines: Sequence[str]) -> None:
    fh.write(f"\n[{name}]\n")
    fh.write(f"count = {len(lines)}\n")
    for line in lines:
        fh.write(line + "\n")


def _write_params(fh, params) -> None:
    for name, tensor in params.items():
        fh.write(f"\n[param {name}]\n")
        fh.write("shape = " + " ".join(str(d) for d in tensor.data.shape) + "\n")
        for v in tensor.data.ravel():
            fh.write(repr(float(v)) + "\n")


def save_vampnet_checkpoint(path: str | Path, result: TrainResult) -> None:
    model = result.model
    with open(path, "w") as fh:
        fh.write(FORMAT_TAG + "\n")
        _write_section(
            fh,
            "run",
            {"kind": "vampnet", "seed": model.seed, "fusion": model.cfg.fusion, "l_max": result.l_max},
        )
        _write_section(fh, "model", model.cfg.to_dict())
        _write_section(
            fh,
            "normalizer",
            {
                "lo": " ".join(repr(float(v)) for v in result.stats.lo),
                "hi": " ".join(repr(float(v)) for v in result.stats.hi),
            },
        )
        fh.write(f"\n[vocab]\nmode = {result.vocab.mode}\n")
        _write_block(fh, "entries", result.vocab.entries)
        _write_params(fh, model.parameters())


def save_baseline_checkpoint(path: str | Path, result: BaselineResult) -> None:
    model = result.model
    kind = "mlp" if isinstance(model, MlpBaseline) else "cnn"
    cfg = model.cfg
    if kind == "mlp":
        echo = {
            "hidden_dims": " ".join(str(d) for d in cfg.hidden_dims),
            "dropout": repr(cfg.dropout),
            "activation": cfg.activation,
        }
    else:
        echo = {
            "filters": " ".join(str(d) for d in cfg.filters),
            "kernels": " ".join(str(d) for d in cfg.kernels),
            "pools": " ".join(str(d) for d in cfg.pools),
            "dropout": repr(cfg.dropout),
            "activation": cfg.activation,
        }
    with open(path, "w") as fh:
        fh.write(FORMAT_TAG + "\n")
        _write_section(fh, "run", {"kind": kind, "seed": model.seed})
        _write_section(fh, kind, echo)
        _write_block(fh, "columns", [r.token for r in result.selection])
        _write_params(fh, model.params())


# -- loaded wrappers -------------------------------------------------------------


@dataclass
class LoadedVampnet:
    kind: str
    model: VampNet
    vocab: Vocabulary
    stats: ChannelStats
    l_max: int
    seed: int

    def score(self, samples: Sequence[SampleRecord]) -> np.ndarray:
        normed = normalize_samples(self.stats, samples)
        out = []
        for start in range(0, len(normed), _EVAL_BATCH):
            batch = collate(normed[start : start + _EVAL_BATCH], self.vocab, self.l_max)
            out.append(self.model.scores(batch))
        return np.concatenate(out) if out else np.zeros(0)


@dataclass
class LoadedBaseline:
    kind: str
    model: MlpBaseline | CnnBaseline
    columns: list[str]
    seed: int

    def score(self, samples: Sequence[SampleRecord]) -> np.ndarray:
        rows = presence_matrix(samples, self.columns).matrix
        logits = self.model.forward(rows).data
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e[:, 1] / e.sum(axis=-1)


# -- reading -------------------------------------------------------------------


class _Reader:
    def __init__(self, path: str | Path):
        with open(path) as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    @property
    def line_no(self) -> int:
        return self.pos  # pos already points past the last-read line

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise FileFormatError("unexpected end of checkpoint", self.pos)
        self.pos += 1
        return self.lines[self.pos - 1]

    def peek(self) -> str | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def done(self) -> bool:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        return self.pos >= len(self.lines)

    def expect_section(self, want: str | None = None) -> str:
        if self.done():
            raise FileFormatError(f"missing section {want!r}", self.pos)
        line = self.next().strip()
        if not (line.startswith("[") and line.endswith("]")):
            raise FileFormatError(f"expected a section header, got {line!r}", self.line_no)
        name = line[1:-1]
        if want is not None and name != want:
            raise FileFormatError(f"expected section [{want}], got [{name}]", self.line_no)
        return name

    def pair(self, want_key: str | None = None) -> tuple[str, str]:
        line = self.next()
        if " = " not in line:
            raise FileFormatError(f"expected 'key = value', got {line!r}", self.line_no)
        key, value = line.split(" = ", 1)
        if want_key is not None and key != want_key:
            raise FileFormatError(f"expected key {want_key!r}, got {key!r}", self.line_no)
        return key, value

    def section_pairs(self) -> dict[str, str]:
        out = {}
        while True:
            nxt = self.peek()
            if nxt is None or nxt.startswith("[") or not nxt.strip():
                return out
            key, value = self.pair()
            out[key] = value

    def block(self) -> list[str]:
        _, raw = self.pair("count")
        n = _to_int(raw, "count", self.line_no)
        return [self.next() for _ in range(n)]


def _to_int(raw: str, key: str, line_no: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise FileFormatError(f"{key} must be an integer, got {raw!r}", line_no) from None


def _read_params(reader: _Reader, params) -> None:
    """Fill the freshly built model's tensors from [param …] sections."""
    seen = set()
    while not reader.done():
        name = reader.expect_section()
        if not name.startswith("param "):
            raise FileFormatError(f"unexpected section [{name}]", reader.line_no)
        pname = name[len("param ") :]
        if pname not in params:
            raise FileFormatError(f"unknown parameter {pname!r}", reader.line_no)
        if pname in seen:
            raise FileFormatError(f"duplicate parameter {pname!r}", reader.line_no)
        seen.add(pname)
        _, raw = reader.pair("shape")
        shape = tuple(_to_int(tok, "shape", reader.line_no) for tok in raw.split())
        tensor = params[pname]
        if shape != tensor.data.shape:
            raise FileFormatError(
                f"parameter {pname!r} has shape {shape}, model expects {tensor.data.shape}",
                reader.line_no,
            )
        flat = np.empty(int(np.prod(shape)) if shape else 1)
        for i in range(flat.size):
            try:
                flat[i] = float(reader.next())
            except ValueError:
                raise FileFormatError(f"bad double in parameter {pname!r}", reader.line_no) from None
        tensor.data[:] = flat.reshape(shape)
    missing = set(params) - seen
    if missing:
        raise FileFormatError(f"checkpoint is missing parameters: {sorted(missing)}")


def load_checkpoint(path: str | Path) -> LoadedVampnet | LoadedBaseline:
    reader = _Reader(path)
    tag = reader.next().strip()
    if tag != FORMAT_TAG:
        raise FileFormatError(f"not a {FORMAT_TAG} checkpoint (first line {tag!r})", 1)
    reader.expect_section("run")
    run = reader.section_pairs()
    kind = run.get("kind")
    seed = _to_int(run.get("seed", ""), "seed", reader.line_no)
    if kind == "vampnet":
        reader.expect_section("model")
        cfg = ModelConfig.from_dict(reader.section_pairs())
        reader.expect_section("normalizer")
        norm = reader.section_pairs()
        stats = ChannelStats(
            np.array([float(v) for v in norm["lo"].split()]),
            np.array([float(v) for v in norm["hi"].split()]),
        )
        reader.expect_section("vocab")
        _, mode = reader.pair("mode")
        reader.expect_section("entries")
        vocab = Vocabulary(mode, reader.block())
        if vocab.size != cfg.vocab_size:
            raise FileFormatError(
                f"vocabulary size {vocab.size} does not match model config {cfg.vocab_size}"
            )
        model = VampNet(cfg, seed=seed)
        _read_params(reader, model.parameters())
        return LoadedVampnet(kind, model, vocab, stats, _to_int(run.get("l_max", ""), "l_max", 0), seed)
    if kind in ("mlp", "cnn"):
        reader.expect_section(kind)
        echo = reader.section_pairs()
        reader.expect_section("columns")
        columns = reader.block()
        if kind == "mlp":
            cfg = MlpConfig(
                hidden_dims=tuple(int(d) for d in echo["hidden_dims"].split()),
                dropout=float(echo["dropout"]),
                activation=echo["activation"],
            )
            model = MlpBaseline(len(columns), cfg, seed=seed)
        else:
            cfg = CnnBaselineConfig(
                filters=tuple(int(d) for d in echo["filters"].split()),
                kernels=tuple(int(d) for d in echo["kernels"].split()),
                pools=tuple(int(d) for d in echo["pools"].split()),
                dropout=float(echo["dropout"]),
                activation=echo["activation"],
            )
            model = CnnBaseline(len(columns), cfg, seed=seed)
        _read_params(reader, model.params())
        return LoadedBaseline(kind, model, columns, seed)
    raise FileFormatError(f"unknown checkpoint kind {kind!r}", reader.line_no)


def save_checkpoint(path: str | Path, result: TrainResult | BaselineResult) -> None:
    if isinstance(result, TrainResult):
        save_vampnet_checkpoint(path, result)
    elif isinstance(result, BaselineResult):
        save_baseline_checkpoint(path, result)
    else:
        raise ContractError(f"cannot checkpoint a {type(result).__name__}")
