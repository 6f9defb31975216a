import numpy as np
import pytest

from promptshift import presets
from promptshift.corpus import (
    CorpusSpec,
    OracleDims,
    OracleParams,
    build_oracle,
    clean_twin,
    corpus_digest,
    corpus_summary,
    generate,
    load_corpus,
    load_table,
    save_corpus,
    save_table,
    translation_vector,
)
from promptshift.errors import GenerationFailure, InputMismatch, InvalidArgument
from promptshift.model import random_weights
from promptshift.presets import calibrate, unadapted_wer


def test_clean_corpus_is_decoded_correctly(oracle, source_corpus):
    assert len(source_corpus) == 200
    assert unadapted_wer(oracle[0], source_corpus) <= 0.01


def test_prototypes_are_well_separated(oracle):
    table = oracle[1]
    assert table.min_separation() >= 4 * table.jitter_radius
    assert not table.prototypes[oracle[0].vocab.blank_index].any()


def test_zero_noise_equals_clean(oracle):
    clean = generate(presets.source(5), oracle)
    noisy = generate(CorpusSpec(seed=0, num_utterances=5, condition={"type": "gaussian", "sigma": 0.0}), oracle)
    for a, b in zip(clean, noisy):
        assert np.array_equal(a.frames, b.frames)
        assert a.reference == b.reference
    assert noisy[0].domain_tag == "gaussian(0)"


def test_conditions_share_the_clean_utterances(oracle):
    spec = presets.translation(num_utterances=4)
    shifted = generate(spec, oracle)
    clean = generate(clean_twin(spec), oracle)
    v = translation_vector(spec.condition, 24)
    assert abs(np.linalg.norm(v) - 2.0) < 1e-12
    for s, c in zip(shifted, clean):
        assert s.reference == c.reference
        assert np.allclose(s.frames - c.frames, v, atol=1e-12)


def test_mixed_stream_switches_after_the_first_segment(oracle):
    utts = generate(presets.mixed(), oracle)
    tags = [u.domain_tag for u in utts]
    assert len(utts) == 100
    assert len(set(tags[:50])) == 1 and len(set(tags[50:])) == 1
    assert tags[49] != tags[50]
    assert clean_twin(presets.mixed()).num_utterances == 100


def test_generation_is_reproducible(oracle):
    spec = presets.gaussian(0.1, 6)
    assert corpus_digest(generate(spec, oracle)) == corpus_digest(generate(spec, oracle))
    other = presets.gaussian(0.1, 6, seed=9)
    assert corpus_digest(generate(spec, oracle)) != corpus_digest(generate(other, oracle))


def test_references_use_the_vocabulary(oracle, source_corpus):
    v = oracle[0].vocab
    for u in source_corpus[:20]:
        ids = v.encode(u.reference)
        assert v.blank_index not in ids
        assert u.reference == u.reference.strip() and "  " not in u.reference


def test_covariance_scale_keeps_the_centre(oracle):
    spec = presets.covariance_scale(3)
    for s, c in zip(generate(spec, oracle), generate(clean_twin(spec), oracle)):
        ratio = (s.frames - oracle[1].centre) / np.where(c.frames == oracle[1].centre, 1, c.frames - oracle[1].centre)
        assert 0.25 <= np.median(ratio) <= 1.75


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        CorpusSpec(tokens_per_utterance=(5, 2))
    with pytest.raises(InvalidArgument):
        CorpusSpec(condition={"type": "gaussian", "sigma": -1})
    with pytest.raises(InvalidArgument):
        CorpusSpec(condition={"type": "warp"})
    with pytest.raises(InvalidArgument):
        CorpusSpec(condition={"type": "covariance_scale", "range": [1.0, 0.5]})
    with pytest.raises(InvalidArgument):
        presets.get_preset("nope")


def test_spec_round_trip():
    spec = presets.mixed(3)
    assert CorpusSpec.from_dict(spec.to_dict()) == spec


def test_width_mismatch_rejected(oracle):
    with pytest.raises(InvalidArgument):
        generate(CorpusSpec(d_in=8, num_utterances=1), oracle)


def test_crowded_prototypes_fail_loudly():
    with pytest.raises(GenerationFailure):
        build_oracle(0, OracleDims(d_in=4, d=4, ff=8), OracleParams(content_dims=2, max_retries=3))


def test_corpus_and_table_round_trip(tmp_path, oracle):
    utts = generate(presets.gaussian(0.05, 4), oracle)
    save_corpus(utts, tmp_path / "c.bin", {"spec": "x"})
    back, meta = load_corpus(tmp_path / "c.bin")
    assert meta == {"spec": "x"}
    assert corpus_digest(back) == corpus_digest(utts)
    assert corpus_summary(back)[0]["utterances"] == 4
    save_table(oracle[1], tmp_path / "t.bin", oracle[0].digest())
    table = load_table(tmp_path / "t.bin", oracle[0])
    assert np.array_equal(table.prototypes, oracle[1].prototypes)
    with pytest.raises(InputMismatch):
        load_table(tmp_path / "t.bin", random_weights(0, 24, 24))


def test_calibration_finds_the_threshold(oracle):
    make = lambda s: presets.gaussian(s, 30)
    level = calibrate(oracle, make, 0.2, 0.0, 1.0, iterations=6)
    assert unadapted_wer(oracle[0], generate(make(level), oracle)) >= 0.2
    assert unadapted_wer(oracle[0], generate(make(level - 1 / 64), oracle)) < 0.2
    with pytest.raises(InvalidArgument):
        calibrate(oracle, make, 0.99, 0.0, 0.01)


def test_shipped_presets_meet_their_degradation_targets(oracle):
    assert presets.calibrated_translation(oracle, num_utterances=50) == presets.translation(num_utterances=50)
    ladder = presets.calibrated_ladder(oracle, num_utterances=50)
    assert [s.condition["sigma"] for s in ladder] == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])
