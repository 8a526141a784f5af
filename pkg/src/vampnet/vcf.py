"""Single-sample VCF parsing, call filtering, and per-call quality features.

Only the genotype fields this pipeline consumes are accepted: GT, DP,
DPF, COV, FRS, GT_CONF, GT_CONF_PERCENTILE.  Multi-allelic rows are
expanded into one call per distinct non-reference allele actually
present in GT.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import thread_count
from .cohort import SampleRecord, assemble_sample, read_phenotypes
from .errors import VcfParseError

KNOWN_FORMAT_KEYS = {"GT", "DP", "DPF", "COV", "FRS", "GT_CONF", "GT_CONF_PERCENTILE"}
_REQUIRED_KEYS = ("GT", "DP", "DPF", "COV", "FRS", "GT_CONF", "GT_CONF_PERCENTILE")
_NO_CALL_GT = {"0/0", "0|0", "./.", ".|."}
_ALLELE_CHARS = set("ACGT")


@dataclass
class VcfRecord:
    """One raw data line: position, alleles, FILTER, and FORMAT fields."""

    line_no: int
    pos: int
    ref: str
    alts: tuple[str, ...]
    filter_value: str
    fields: dict[str, str]


@dataclass
class VariantCall:
    """One expanded (position, alt allele) call with its quality numbers."""

    pos: int
    ref: str
    alt: str
    gt_encoded: float
    depth: float
    depth_fraction: float
    cov_ref: float
    cov_alt: float
    frs: float
    gt_conf: float
    gt_conf_percentile: float
    line_no: int = 0


def parse_vcf(lines: Iterable[str]) -> list[VcfRecord]:
    """Parse a single-sample VCF body into raw records, keeping all rows."""
    records: list[VcfRecord] = []
    n_columns = None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        if line.startswith("##"):
            continue
        if line.startswith("#"):
            cols = line.split("\t")
            if len(cols) != 10 or cols[8] != "FORMAT":
                raise VcfParseError("expected a single-sample VCF header with 10 columns", line_no)
            n_columns = 10
            continue
        if n_columns is None:
            raise VcfParseError("data row before #CHROM header", line_no)
        cols = line.split("\t")
        if len(cols) != n_columns:
            raise VcfParseError(f"expected {n_columns} columns, got {len(cols)}", line_no)
        try:
            pos = int(cols[1])
        except ValueError:
            raise VcfParseError(f"bad POS {cols[1]!r}", line_no) from None
        if pos < 1:
            raise VcfParseError(f"POS must be >= 1, got {pos}", line_no)
        ref = cols[3]
        if not ref or not set(ref) <= _ALLELE_CHARS:
            raise VcfParseError(f"REF must be a non-empty ACGT string, got {ref!r}", line_no)
        keys = cols[8].split(":")
        values = cols[9].split(":")
        if len(keys) != len(values):
            raise VcfParseError(
                f"FORMAT has {len(keys)} keys but sample has {len(values)} values", line_no
            )
        unknown = set(keys) - KNOWN_FORMAT_KEYS
        if unknown:
            raise VcfParseError(f"unknown FORMAT keys {sorted(unknown)}", line_no)
        fields = dict(zip(keys, values))
        for key in _REQUIRED_KEYS:
            if key not in fields:
                raise VcfParseError(f"missing FORMAT key {key}", line_no)
        records.append(
            VcfRecord(
                line_no=line_no,
                pos=pos,
                ref=ref,
                alts=tuple(cols[4].split(",")),
                filter_value=cols[6],
                fields=fields,
            )
        )
    if n_columns is None:
        raise VcfParseError("no #CHROM header found", 1)
    return records


def _parse_float(record: VcfRecord, key: str) -> float:
    raw = record.fields[key]
    try:
        value = float(raw)
    except ValueError:
        raise VcfParseError(f"bad {key} value {raw!r}", record.line_no) from None
    if not np.isfinite(value):
        raise VcfParseError(f"non-finite {key} value {raw!r}", record.line_no)
    return value


def _called_alleles(record: VcfRecord) -> list[int]:
    alleles = []
    for part in record.fields["GT"].replace("|", "/").split("/"):
        if part == ".":
            continue
        if not part.isdigit():
            raise VcfParseError(f"bad GT {record.fields['GT']!r}", record.line_no)
        alleles.append(int(part))
    return alleles


def filter_records(records: Sequence[VcfRecord]) -> list[VariantCall]:
    """Keep PASS rows with a called non-reference allele; expand multi-allelics.

    The result is stable: calls appear in input order, and alleles of one
    row in ascending index order.
    """
    calls: list[VariantCall] = []
    for record in records:
        if record.filter_value != "PASS":
            continue
        if record.fields["GT"] in _NO_CALL_GT:
            continue
        alleles = _called_alleles(record)
        called = sorted({a for a in alleles if a > 0})
        if not called:
            continue
        depth = _parse_float(record, "DP")
        depth_fraction = _parse_float(record, "DPF")
        gt_conf = _parse_float(record, "GT_CONF")
        gt_conf_percentile = _parse_float(record, "GT_CONF_PERCENTILE")
        frs_raw = record.fields["FRS"]
        frs = 0.0 if frs_raw == "." else _parse_float(record, "FRS")
        cov_parts = record.fields["COV"].split(",")
        try:
            cov = [float(v) for v in cov_parts]
        except ValueError:
            raise VcfParseError(f"bad COV value {record.fields['COV']!r}", record.line_no) from None
        for allele in called:
            if allele > len(record.alts):
                raise VcfParseError(f"GT calls allele {allele} but ALT has {len(record.alts)}", record.line_no)
            alt = record.alts[allele - 1]
            if not alt or not set(alt) <= _ALLELE_CHARS:
                raise VcfParseError(f"ALT must be a non-empty ACGT string, got {alt!r}", record.line_no)
            if alt == record.ref:
                raise VcfParseError(f"ALT equals REF ({alt!r})", record.line_no)
            if len(cov) == len(record.alts) + 1:
                cov_ref, cov_alt = cov[0], cov[allele]
            elif len(cov) == 2:
                cov_ref, cov_alt = cov[0], cov[1]
            else:
                raise VcfParseError(
                    f"COV needs 2 or {len(record.alts) + 1} comma-separated values, got {len(cov)}",
                    record.line_no,
                )
            calls.append(
                VariantCall(
                    pos=record.pos,
                    ref=record.ref,
                    alt=alt,
                    gt_encoded=1.0 if set(alleles) == {allele} else 0.5,
                    depth=depth,
                    depth_fraction=depth_fraction,
                    cov_ref=cov_ref,
                    cov_alt=cov_alt,
                    frs=frs,
                    gt_conf=gt_conf,
                    gt_conf_percentile=gt_conf_percentile,
                    line_no=record.line_no,
                )
            )
    return calls


def make_token(call: VariantCall) -> str:
    """Canonical variant name: <pos>_<REF>><ALT>."""
    return f"{call.pos}_{call.ref}>{call.alt}"


def extract_features(call: VariantCall) -> np.ndarray:
    """Raw 8-channel quality vector, aligned with CHANNEL_NAMES."""
    return np.array(
        [
            call.gt_encoded,
            call.depth,
            call.depth_fraction,
            call.cov_ref,
            call.cov_alt,
            call.frs,
            call.gt_conf,
            call.gt_conf_percentile,
        ],
        dtype=np.float64,
    )


def load_sample(path: str | Path, sample_id: str, label: int) -> SampleRecord:
    with open(path) as fh:
        records = parse_vcf(fh)
    calls = filter_records(records)
    tokens = [make_token(c) for c in calls]
    features = np.stack([extract_features(c) for c in calls]) if calls else np.zeros((0, 8))
    return assemble_sample(sample_id, label, tokens, features)


@dataclass
class IngestSummary:
    n_samples: int
    n_skipped_no_phenotype: int
    n_calls: int
    n_unique_variants: int

    def lines(self) -> list[str]:
        return [
            f"samples ingested: {self.n_samples}",
            f"samples skipped (no phenotype): {self.n_skipped_no_phenotype}",
            f"variant calls kept: {self.n_calls}",
            f"unique variants: {self.n_unique_variants}",
        ]


def ingest_cohort(vcf_dir: str | Path, phenotype_csv: str | Path, drug: str) -> tuple[list[SampleRecord], IngestSummary]:
    """Pair every *.vcf file in a directory with its phenotype label."""
    labels = read_phenotypes(phenotype_csv, drug)
    paths = sorted(Path(vcf_dir).glob("*.vcf"))
    jobs = []
    skipped = 0
    for path in paths:
        sample_id = path.stem
        if sample_id not in labels:
            skipped += 1
            continue
        jobs.append((path, sample_id, labels[sample_id]))

    def run(job):
        path, sample_id, label = job
        try:
            return load_sample(path, sample_id, label)
        except VcfParseError as err:
            raise VcfParseError(f"{path.name}: {err}") from None

    workers = thread_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(run, jobs))
    else:
        samples = [run(job) for job in jobs]
    unique = {t for s in samples for t in s.tokens}
    summary = IngestSummary(
        n_samples=len(samples),
        n_skipped_no_phenotype=skipped,
        n_calls=sum(s.n_variants for s in samples),
        n_unique_variants=len(unique),
    )
    return samples, summary
