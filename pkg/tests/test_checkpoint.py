import numpy as np
import pytest

from latentrl.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from latentrl.core import RunConfig
from latentrl.decoder import FrozenDecoder, LatentScorer
from latentrl.errors import ChecksumError, ShapeError
from latentrl.objective import AdamState
from latentrl.trainer import train


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = RunConfig(iterations=3, checkpoint_interval=2, decode_mode="selective", scorer_warmup=1)
    art = train(cfg, tmp_path_factory.mktemp("run"))
    return cfg, art


def test_round_trip_bit_exact(trained, tmp_path):
    cfg, art = trained
    path = save_checkpoint(art.params, art.scorer, art.optimizer_state, art.decoder, tmp_path / "c.bin", cfg)
    ck = load_checkpoint(path, cfg)
    for k, v in art.params.arrays.items():
        assert np.array_equal(ck.params.arrays[k], v)
        assert np.array_equal(ck.optimizer_state.m[k], art.optimizer_state.m[k])
        assert np.array_equal(ck.optimizer_state.v[k], art.optimizer_state.v[k])
    assert ck.optimizer_state.step == art.optimizer_state.step == 3
    assert np.array_equal(ck.scorer.weights, art.scorer.weights) and ck.scorer.bias == art.scorer.bias
    assert np.array_equal(ck.decoder.readout, art.decoder.readout)
    assert ck.decoder.checksum == art.decoder.checksum
    assert ck.config == cfg
    again = encode_checkpoint(ck.params, ck.scorer, ck.optimizer_state, ck.decoder, ck.config)
    assert again == path.read_bytes()


def test_run_checkpoints_written(trained):
    _, art = trained
    assert [p.name for p in art.checkpoints] == ["ckpt_0.bin", "ckpt_2.bin", "ckpt_3.bin"]


def test_truncated_and_corrupt(trained):
    _, art = trained
    data = art.checkpoints[-1].read_bytes()
    with pytest.raises(ChecksumError):
        decode_checkpoint(data[:-100])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_checkpoint(bytes(flipped))
    with pytest.raises(ChecksumError):
        decode_checkpoint(b"")


def test_shape_mismatch_against_config(trained):
    _, art = trained
    with pytest.raises(ShapeError, match="d="):
        load_checkpoint(art.checkpoints[-1], RunConfig(d=8))


def test_tampered_decoder_refused(trained, tmp_path):
    cfg, art = trained
    data = encode_checkpoint(art.params, art.scorer, art.optimizer_state, art.decoder, cfg)
    # swap in a different decoder under the original checksum
    other = FrozenDecoder.create(cfg.d, cfg.modulus, 1, cfg.resolved_gate_index)
    forged = encode_checkpoint(art.params, art.scorer, art.optimizer_state, other, cfg)
    forged = forged.replace(other.checksum.encode(), art.decoder.checksum.encode())
    import hashlib

    forged = forged[:-32] + hashlib.sha256(forged[:-32]).digest()
    assert forged != data
    with pytest.raises(ChecksumError, match="decoder"):
        decode_checkpoint(forged)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "none.bin")


def test_fresh_state_round_trip(tmp_path):
    cfg = RunConfig()
    from latentrl.policy import init_policy

    p = init_policy(cfg)
    path = save_checkpoint(p, LatentScorer.zeros(cfg.d), AdamState(), FrozenDecoder.from_config(cfg), tmp_path / "x.bin", cfg)
    ck = load_checkpoint(path)
    assert ck.params.digest() == p.digest() and ck.optimizer_state.m == {}
