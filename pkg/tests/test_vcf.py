"""VCF parsing, call filtering, feature extraction, and cohort io."""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vampnet.cohort import (
    ChannelStats,
    SampleRecord,
    apply_normalizer,
    assemble_sample,
    fit_normalizer,
    read_cohort,
    read_phenotypes,
    write_cohort,
)
from vampnet.errors import ConfigError, ContractError, VcfParseError
from vampnet.vcf import (
    extract_features,
    filter_records,
    ingest_cohort,
    make_token,
    parse_vcf,
)

HEADER = (
    "##fileformat=VCFv4.2\n"
    "#CHROM\tPOS\tID\tREF\tALT\tQUAL\tFILTER\tINFO\tFORMAT\tsampleA\n"
)
FORMAT = "GT:DP:DPF:COV:FRS:GT_CONF:GT_CONF_PERCENTILE"


def vcf_line(pos, ref, alt, filt="PASS", gt="1/1", dp="40", dpf="0.9", cov="2,38", frs="0.95", conf="600.5", pct="82.1"):
    return f"chr1\t{pos}\t.\t{ref}\t{alt}\t.\t{filt}\t.\t{FORMAT}\t{gt}:{dp}:{dpf}:{cov}:{frs}:{conf}:{pct}\n"


def parse_text(text):
    return parse_vcf(text.splitlines(keepends=True))


# -- parsing ----------------------------------------------------------------


def test_parse_and_filter_basic():
    text = HEADER + vcf_line(761139, "C", "A") + vcf_line(2338202, "CAC", "CCAC", gt="0/1")
    calls = filter_records(parse_text(text))
    assert [make_token(c) for c in calls] == ["761139_C>A", "2338202_CAC>CCAC"]
    assert calls[0].gt_encoded == 1.0
    assert calls[1].gt_encoded == 0.5


def test_filter_drops_non_pass_and_no_calls():
    text = (
        HEADER
        + vcf_line(10, "A", "G", filt="MIN_GCP")
        + vcf_line(20, "A", "G", gt="0/0")
        + vcf_line(30, "A", "G", gt="./.")
        + vcf_line(35, "A", "G", gt="0|0")
        + vcf_line(36, "A", "G", gt=".|.")
        + vcf_line(40, "A", "G")
    )
    calls = filter_records(parse_text(text))
    assert [c.pos for c in calls] == [40]


def test_multiallelic_expansion_with_per_allele_cov():
    text = HEADER + vcf_line(100, "A", "G,T", gt="1/2", cov="3,10,20")
    calls = filter_records(parse_text(text))
    assert [make_token(c) for c in calls] == ["100_A>G", "100_A>T"]
    assert [c.gt_encoded for c in calls] == [0.5, 0.5]
    assert [(c.cov_ref, c.cov_alt) for c in calls] == [(3.0, 10.0), (3.0, 20.0)]


def test_multiallelic_hom_second_allele():
    text = HEADER + vcf_line(100, "A", "G,T", gt="2/2", cov="3,10,20")
    calls = filter_records(parse_text(text))
    assert [make_token(c) for c in calls] == ["100_A>T"]
    assert calls[0].gt_encoded == 1.0


def test_frs_dot_becomes_zero():
    text = HEADER + vcf_line(5, "G", "T", frs=".")
    call = filter_records(parse_text(text))[0]
    assert call.frs == 0.0
    vec = extract_features(call)
    assert vec[5] == 0.0


def test_feature_vector_channel_order():
    text = HEADER + vcf_line(5, "G", "T", dp="41", dpf="0.75", cov="7,34", frs="0.83", conf="512.5", pct="63.2")
    vec = extract_features(filter_records(parse_text(text))[0])
    assert np.array_equal(vec, [1.0, 41.0, 0.75, 7.0, 34.0, 0.83, 512.5, 63.2])


def test_calls_preserve_file_order():
    text = HEADER + "".join(vcf_line(p, "A", "G") for p in (500, 30, 901, 77))
    calls = filter_records(parse_text(text))
    assert [c.pos for c in calls] == [500, 30, 901, 77]


@pytest.mark.parametrize(
    "mutate, expected_line",
    [
        (lambda t: t.replace("PASS", "PASS\textra", 1), 3),  # column count
        (lambda t: t.replace(":82.1", "", 1), 3),  # FORMAT arity
        (lambda t: t.replace("2,38", "2;38", 1), 3),  # bad COV
        (lambda t: t.replace("600.5", "abc", 1), 3),  # bad float
        (lambda t: t.replace("761139", "-4", 1), 3),  # bad POS
        (lambda t: t.replace("\tC\t", "\tX\t", 1), 3),  # bad REF
    ],
)
def test_parse_errors_name_the_line(mutate, expected_line):
    text = mutate(HEADER + vcf_line(761139, "C", "A"))
    with pytest.raises(VcfParseError) as err:
        filter_records(parse_text(text))
    assert f"line {expected_line}" in str(err.value)


def test_data_before_header_rejected():
    with pytest.raises(VcfParseError):
        parse_text(vcf_line(1, "A", "G") + HEADER)


def test_unknown_format_key_rejected():
    bad = HEADER + vcf_line(10, "A", "G").replace("GT:DP", "GT:XX").replace(":DPF", ":DPF")
    with pytest.raises(VcfParseError) as err:
        parse_text(bad)
    assert "XX" in str(err.value)


def test_gt_allele_out_of_range():
    text = HEADER + vcf_line(10, "A", "G", gt="1/3")
    with pytest.raises(VcfParseError) as err:
        filter_records(parse_text(text))
    assert "allele 3" in str(err.value)


def test_alt_equal_ref_rejected():
    text = HEADER + vcf_line(10, "A", "A")
    with pytest.raises(VcfParseError):
        filter_records(parse_text(text))


# -- assembly and normalization ------------------------------------------------


def test_assemble_sample_checks_alignment():
    with pytest.raises(ContractError):
        assemble_sample("s1", 0, ["1_A>G"], np.zeros((2, 8)))
    s = assemble_sample("s1", 1, [], np.zeros((0, 8)))
    assert s.n_variants == 0


def test_fit_normalizer_bounds_and_fixed_channels():
    f1 = np.array([[0.5, 10.0, 0.1, 2.0, 30.0, 0.9, 100.0, 50.0]])
    f2 = np.array([[1.0, 50.0, 0.9, 6.0, 90.0, 0.2, 900.0, 10.0]])
    stats = fit_normalizer(
        [assemble_sample("a", 0, ["1_A>G"], f1), assemble_sample("b", 1, ["1_A>G"], f2)]
    )
    assert stats.lo[0] == 0.0 and stats.hi[0] == 1.0  # GT fixed
    assert stats.lo[5] == 0.0 and stats.hi[5] == 1.0  # FRS fixed
    assert stats.lo[1] == 10.0 and stats.hi[1] == 50.0
    out = apply_normalizer(stats, f1)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out[0, 1] == 0.0
    norm2 = apply_normalizer(stats, f2)
    assert norm2[0, 1] == 1.0
    assert norm2[0, 5] == 0.2  # fraction channels pass through unchanged


def test_apply_normalizer_clamps_and_handles_constant_channel():
    stats = ChannelStats(lo=np.zeros(8), hi=np.array([1, 100, 1, 1, 1, 1, 0, 1.0]))
    row = np.array([[2.0, 250.0, 0.5, 0.5, 0.5, -3.0, 77.0, 0.5]])
    out = apply_normalizer(stats, row)
    assert out[0, 0] == 1.0  # clamp high
    assert out[0, 1] == 1.0
    assert out[0, 5] == 0.0  # clamp low
    assert out[0, 6] == 0.0  # constant channel collapses to 0


def test_fit_normalizer_empty_raises():
    with pytest.raises(ConfigError):
        fit_normalizer([])


# -- interchange round trip -------------------------------------------------------


def token_strategy():
    allele = st.text(alphabet="ACGT", min_size=1, max_size=4)
    return st.builds(lambda p, r, a: f"{p}_{r}>{a}", st.integers(1, 4_500_000), allele, allele)


def sample_strategy():
    finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
    return st.integers(0, 5).flatmap(
        lambda n: st.builds(
            lambda sid, label, toks, vals: SampleRecord(sid, label, toks, np.array(vals).reshape(n, 8)),
            st.text(alphabet="abcdef0123456789_-.", min_size=1, max_size=12),
            st.integers(0, 1),
            st.lists(token_strategy(), min_size=n, max_size=n),
            st.lists(finite, min_size=8 * n, max_size=8 * n),
        )
    )


@given(st.lists(sample_strategy(), max_size=4), st.sampled_from(["INH", "RIF", "EMB"]))
@settings(max_examples=40, deadline=None)
def test_cohort_round_trip_bit_exact(samples, drug):
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "cohort.tsv"
        write_cohort(path, samples, drug)
        back, drug2 = read_cohort(path)
        assert drug2 == drug
        assert len(back) == len(samples)
        for a, b in zip(samples, back):
            assert a.sample_id == b.sample_id and a.label == b.label and a.tokens == b.tokens
            assert a.features.tobytes() == b.features.tobytes()
        write_cohort(path.with_suffix(".2"), back, drug2)
        assert path.read_text() == path.with_suffix(".2").read_text()


def test_read_cohort_rejects_bad_header(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("not-a-cohort\n")
    with pytest.raises(VcfParseError):
        read_cohort(p)


def test_read_cohort_rejects_field_miscount(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("vampnet-cohort/1\tdrug=INH\ns1\t0\t1\t5_A>G\t1.0\n")
    with pytest.raises(VcfParseError) as err:
        read_cohort(p)
    assert "line 2" in str(err.value)


# -- phenotypes and end-to-end ingest ------------------------------------------------


def write_phenotypes(path, rows):
    path.write_text("sample_id,drug,label,quality\n" + "\n".join(rows) + "\n")


def test_read_phenotypes_filters_drug_and_quality(tmp_path):
    p = tmp_path / "pheno.csv"
    write_phenotypes(p, ["s1,INH,1,HIGH", "s2,INH,0,LOW", "s3,RIF,1,HIGH", "s4,INH,0,MEDIUM"])
    labels = read_phenotypes(p, "INH")
    assert labels == {"s1": 1, "s4": 0}


def test_read_phenotypes_rejects_bad_label_and_duplicates(tmp_path):
    p = tmp_path / "pheno.csv"
    write_phenotypes(p, ["s1,INH,R,HIGH"])
    with pytest.raises(VcfParseError):
        read_phenotypes(p, "INH")
    write_phenotypes(p, ["s1,INH,1,HIGH", "s1,INH,0,HIGH"])
    with pytest.raises(VcfParseError):
        read_phenotypes(p, "INH")


def test_ingest_cohort_end_to_end(tmp_path):
    vcf_dir = tmp_path / "vcfs"
    vcf_dir.mkdir()
    (vcf_dir / "s1.vcf").write_text(HEADER + vcf_line(100, "A", "G") + vcf_line(200, "C", "T", filt="FAIL"))
    (vcf_dir / "s2.vcf").write_text(HEADER + vcf_line(100, "A", "G") + vcf_line(300, "G", "C", gt="0/1"))
    (vcf_dir / "s3.vcf").write_text(HEADER + vcf_line(400, "T", "A"))
    pheno = tmp_path / "pheno.csv"
    write_phenotypes(pheno, ["s1,INH,1,HIGH", "s2,INH,0,HIGH", "s3,RIF,1,HIGH"])
    samples, summary = ingest_cohort(vcf_dir, pheno, "INH")
    assert [s.sample_id for s in samples] == ["s1", "s2"]
    assert [s.label for s in samples] == [1, 0]
    assert samples[0].tokens == ["100_A>G"]
    assert samples[1].tokens == ["100_A>G", "300_G>C"]
    assert summary.n_samples == 2
    assert summary.n_skipped_no_phenotype == 1
    assert summary.n_calls == 3
    assert summary.n_unique_variants == 2


def test_ingest_error_names_file(tmp_path):
    vcf_dir = tmp_path / "vcfs"
    vcf_dir.mkdir()
    (vcf_dir / "s1.vcf").write_text("garbage\n")
    pheno = tmp_path / "pheno.csv"
    write_phenotypes(pheno, ["s1,INH,1,HIGH"])
    with pytest.raises(VcfParseError) as err:
        ingest_cohort(vcf_dir, pheno, "INH")
    assert "s1.vcf" in str(err.value)
